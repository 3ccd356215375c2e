#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "protoecg/pipeline.hpp"

namespace protoecg {

// Seconds covered by a latent window on a `latent_length`-step axis spanning the record.
// A 3-step window on the 32-step axis spans 0.9375 s.
std::pair<double, double> latent_window_to_seconds(int offset, int width, int latent_length = kLatentLength2D);

struct ExplanationEntry {
  int prototype = 0;           // index into the fused similarity profile
  std::string branch;
  int bank_index = 0;          // index within the branch bank
  PrototypeKind kind = PrototypeKind::Global1D;
  std::string prototype_class;
  double similarity = 0.0;
  double weight = 0.0;
  double contribution = 0.0;   // similarity * weight
  Provenance source;
  std::pair<double, double> source_seconds;
  std::pair<double, double> test_seconds;  // best-matching window on the explained record
};

struct Explanation {
  std::string test_id;
  std::string class_code;
  double logit = 0.0;
  double bias = 0.0;
  std::vector<ExplanationEntry> entries;  // by contribution, descending

  nlohmann::json to_json() const;
};

// Top-m prototypes by contribution to one class logit of the fusion head. Every bank must
// be projected.
Explanation explain(FusedModel& model, const EcgRecord& record, const std::string& class_code, int m);

struct RenderSpec {
  std::optional<std::pair<double, double>> highlight;  // seconds
  bool emphasize_lead2 = false;
  bool cutout = false;  // extra panel with all 12 leads inside the highlight window
  std::string title;
};

// Highlight convention per prototype kind: lead-II strip for rhythm prototypes, the window
// plus a cutout for partial prototypes, nothing for global 2D prototypes.
RenderSpec render_spec_for(PrototypeKind kind, std::pair<double, double> window, std::string title);

// Standard 12-lead sheet as SVG: 3 rows of 2.5 s segments (I II III, aVR aVL aVF, V1-V3,
// V4-V6 by column) plus a 10 s lead-II rhythm strip, 25 mm/s, 10 mm/mV, red grid.
std::string render_svg(const SignalMatrix& signal, const RenderSpec& spec);
void render(const EcgRecord& record, const RenderSpec& spec, const std::filesystem::path& out);

}  // namespace protoecg
