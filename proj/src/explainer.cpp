#include "protoecg/explainer.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>

#include "protoecg/errors.hpp"

namespace protoecg {

std::pair<double, double> latent_window_to_seconds(int offset, int width, int latent_length) {
  if (latent_length < 1 || width < 1 || offset < 0 || offset + width > latent_length) {
    throw ValidationError("latent window offset " + std::to_string(offset) + " width " + std::to_string(width) +
                          " outside a " + std::to_string(latent_length) + "-step axis");
  }
  const double step = kRecordSeconds / latent_length;
  return {offset * step, (offset + width) * step};
}

namespace {

nlohmann::json seconds_json(std::pair<double, double> s) { return nlohmann::json::array({s.first, s.second}); }

}  // namespace

nlohmann::json Explanation::to_json() const {
  nlohmann::json list = nlohmann::json::array();
  for (const auto& e : entries) {
    list.push_back({{"prototype", e.prototype},
                    {"branch", e.branch},
                    {"bank_index", e.bank_index},
                    {"kind", std::string(kind_name(e.kind))},
                    {"prototype_class", e.prototype_class},
                    {"similarity", e.similarity},
                    {"weight", e.weight},
                    {"contribution", e.contribution},
                    {"source",
                     {{"record_id", e.source.record_id},
                      {"record_index", e.source.record_index},
                      {"window_start", e.source.window_start},
                      {"window_width", e.source.window_width},
                      {"seconds", seconds_json(e.source_seconds)}}},
                    {"test_seconds", seconds_json(e.test_seconds)}});
  }
  return {{"schema", "protoecg.explanation"},
          {"version", 1},
          {"test_id", test_id},
          {"class", class_code},
          {"logit", logit},
          {"bias", bias},
          {"prototypes", list}};
}

Explanation explain(FusedModel& model, const EcgRecord& record, const std::string& class_code, int m) {
  if (m < 1) throw ValidationError("top count must be >= 1");
  const auto codes = model.class_codes();
  const int tax_index = LabelTaxonomy::standard().index_of(class_code);
  const std::string& canonical = LabelTaxonomy::standard().code(tax_index);
  const auto it = std::find(codes.begin(), codes.end(), canonical);
  if (it == codes.end()) throw NotFoundError("class " + canonical + " is not modeled by any installed branch");
  const auto c = static_cast<Eigen::Index>(it - codes.begin());
  for (const auto& b : model.branches) {
    if (!b.bank.projected()) {
      throw ProjectionError("the " + std::string(branch_name(b.branch)) + " bank is not projected; explanations need provenance");
    }
  }

  Explanation ex;
  ex.test_id = record.id;
  ex.class_code = canonical;
  ex.bias = model.head.bias[c];
  std::vector<ExplanationEntry> all;
  int base = 0;
  for (auto& b : model.branches) {
    const LatentMap latent = compute_latents(b.extractor, {&record}, 1).front();
    const BankActivation act = bank_forward({latent}, b.bank, model.top_k);
    for (int j = 0; j < b.bank.size(); ++j) {
      ExplanationEntry e;
      e.prototype = base + j;
      e.branch = branch_name(b.branch);
      e.bank_index = j;
      e.kind = b.bank.kind;
      e.prototype_class = b.bank.class_codes[b.bank.class_of[j]];
      e.similarity = act.scores(0, j);
      e.weight = model.head.weights(c, base + j);
      e.contribution = e.similarity * e.weight;
      e.source = *b.bank.provenance[j];
      e.source_seconds = latent_window_to_seconds(e.source.window_start, e.source.window_width, b.bank.latent_length);
      if (b.bank.kind == PrototypeKind::Partial2D) {
        const auto scores = sliding_similarity(latent, b.bank.vectors.row(j).transpose(), b.bank.window, b.bank.scale);
        const int best = static_cast<int>(std::max_element(scores.begin(), scores.end()) - scores.begin());
        e.test_seconds = latent_window_to_seconds(best, b.bank.window, b.bank.latent_length);
      } else {
        e.test_seconds = {0.0, kRecordSeconds};
      }
      all.push_back(std::move(e));
    }
    base += b.bank.size();
  }
  if (base != model.head.num_prototypes()) throw ConfigurationError("fusion head does not match the installed banks");

  ex.logit = ex.bias;
  for (const auto& e : all) ex.logit += e.contribution;
  std::stable_sort(all.begin(), all.end(),
                   [](const ExplanationEntry& a, const ExplanationEntry& b) { return a.contribution > b.contribution; });
  if (static_cast<int>(all.size()) > m) all.resize(m);
  ex.entries = std::move(all);
  return ex;
}

RenderSpec render_spec_for(PrototypeKind kind, std::pair<double, double> window, std::string title) {
  RenderSpec s;
  s.title = std::move(title);
  if (kind == PrototypeKind::Global1D) {
    s.emphasize_lead2 = true;
  } else if (kind == PrototypeKind::Partial2D) {
    s.highlight = window;
    s.cutout = true;
  }
  return s;
}

// ---- SVG ------------------------------------------------------------------

namespace {

constexpr double kMmPerSecond = 25.0;
constexpr double kMmPerMv = 10.0;
constexpr double kRowHeight = 30.0;
constexpr double kTop = 10.0;
constexpr double kSheetWidth = kRecordSeconds * kMmPerSecond;
constexpr std::array<const char*, kLeads> kLeadNames = {"I",  "II", "III", "aVR", "aVL", "aVF",
                                                        "V1", "V2", "V3",  "V4",  "V5",  "V6"};
constexpr int kLeadII = 1;

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

void grid(std::ostringstream& out, double x0, double y0, double w, double h) {
  out << "<g stroke=\"#f4c2c2\" stroke-width=\"0.1\">";
  for (double x = 0; x <= w + 1e-9; x += 1.0) {
    out << "<line x1=\"" << num(x0 + x) << "\" y1=\"" << num(y0) << "\" x2=\"" << num(x0 + x) << "\" y2=\"" << num(y0 + h)
        << "\"/>";
  }
  for (double y = 0; y <= h + 1e-9; y += 1.0) {
    out << "<line x1=\"" << num(x0) << "\" y1=\"" << num(y0 + y) << "\" x2=\"" << num(x0 + w) << "\" y2=\"" << num(y0 + y)
        << "\"/>";
  }
  out << "</g><g stroke=\"#e07070\" stroke-width=\"0.3\">";
  for (double x = 0; x <= w + 1e-9; x += 5.0) {
    out << "<line x1=\"" << num(x0 + x) << "\" y1=\"" << num(y0) << "\" x2=\"" << num(x0 + x) << "\" y2=\"" << num(y0 + h)
        << "\"/>";
  }
  for (double y = 0; y <= h + 1e-9; y += 5.0) {
    out << "<line x1=\"" << num(x0) << "\" y1=\"" << num(y0 + y) << "\" x2=\"" << num(x0 + w) << "\" y2=\"" << num(y0 + y)
        << "\"/>";
  }
  out << "</g>\n";
}

// Samples [from, to) of one lead drawn starting at x0 with baseline y.
void trace(std::ostringstream& out, const SignalMatrix& s, int lead, int from, int to, double x0, double y,
           const char* colour) {
  out << "<polyline fill=\"none\" stroke=\"" << colour << "\" stroke-width=\"0.35\" points=\"";
  const double half = kRowHeight / 2 - 0.5;
  for (int t = from; t < to; ++t) {
    const double v = std::clamp(static_cast<double>(s(lead, t)) * kMmPerMv, -half, half);
    out << num(x0 + (t - from) * kMmPerSecond / kSampleRateHz) << ',' << num(y - v) << ' ';
  }
  out << "\"/>\n";
}

void label(std::ostringstream& out, double x, double y, const std::string& text) {
  out << "<text x=\"" << num(x) << "\" y=\"" << num(y) << "\" font-family=\"sans-serif\" font-size=\"3\">" << text
      << "</text>\n";
}

}  // namespace

std::string render_svg(const SignalMatrix& s, const RenderSpec& spec) {
  if (s.rows() != kLeads || s.cols() != kSamples) throw ShapeError("render expects a 12 x 1000 signal");
  if (spec.highlight) {
    const auto [lo, hi] = *spec.highlight;
    if (!(lo >= 0.0 && hi <= kRecordSeconds && lo < hi)) throw ValidationError("highlight window outside the record");
  }
  const double sheet_h = 4 * kRowHeight;
  const bool cutout = spec.cutout && spec.highlight;
  int cut_from = 0, cut_to = 0;
  double cut_w = 0.0;
  if (cutout) {
    cut_from = static_cast<int>(std::floor(spec.highlight->first * kSampleRateHz));
    cut_to = std::min(kSamples, static_cast<int>(std::ceil(spec.highlight->second * kSampleRateHz)));
    cut_w = (cut_to - cut_from) * kMmPerSecond / kSampleRateHz;
  }
  const double cut_top = kTop + sheet_h + 8.0;
  const double height = cutout ? cut_top + 2 * kRowHeight + 4.0 : kTop + sheet_h + 4.0;
  const double width = kSheetWidth + 10.0;

  std::ostringstream out;
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << num(width) << "mm\" height=\"" << num(height)
      << "mm\" viewBox=\"0 0 " << num(width) << ' ' << num(height) << "\">\n";
  out << "<rect x=\"0\" y=\"0\" width=\"" << num(width) << "\" height=\"" << num(height) << "\" fill=\"#ffffff\"/>\n";
  if (!spec.title.empty()) label(out, 5, 6, spec.title);
  const double x0 = 5.0;
  grid(out, x0, kTop, kSheetWidth, sheet_h);

  if (spec.highlight) {
    const auto [lo, hi] = *spec.highlight;
    out << "<rect class=\"highlight\" x=\"" << num(x0 + lo * kMmPerSecond) << "\" y=\"" << num(kTop) << "\" width=\""
        << num((hi - lo) * kMmPerSecond) << "\" height=\"" << num(sheet_h)
        << "\" fill=\"#2f6fde\" fill-opacity=\"0.18\" stroke=\"#2f6fde\" stroke-width=\"0.4\"/>\n";
  }
  if (spec.emphasize_lead2) {
    out << "<rect class=\"lead2\" x=\"" << num(x0) << "\" y=\"" << num(kTop + 3 * kRowHeight) << "\" width=\"" << num(kSheetWidth)
        << "\" height=\"" << num(kRowHeight) << "\" fill=\"#2f6fde\" fill-opacity=\"0.18\"/>\n";
  }

  // Column k shows leads 3k..3k+2 over seconds [2.5k, 2.5k + 2.5).
  const int seg = kSamples / 4;
  for (int col = 0; col < 4; ++col) {
    for (int row = 0; row < 3; ++row) {
      const int lead = col * 3 + row;
      const double y = kTop + row * kRowHeight + kRowHeight / 2;
      const double x = x0 + col * seg * kMmPerSecond / kSampleRateHz;
      trace(out, s, lead, col * seg, (col + 1) * seg, x, y, "#000000");
      label(out, x + 1, kTop + row * kRowHeight + 4, kLeadNames[lead]);
    }
  }
  const double strip_y = kTop + 3 * kRowHeight + kRowHeight / 2;
  trace(out, s, kLeadII, 0, kSamples, x0, strip_y, spec.emphasize_lead2 ? "#1d4fb8" : "#000000");
  label(out, x0 + 1, kTop + 3 * kRowHeight + 4, "II");

  if (cutout) {
    const double gap = 4.0;
    const double panel_w = 6 * (cut_w + gap);
    grid(out, x0, cut_top, std::min(kSheetWidth, std::ceil(panel_w)), 2 * kRowHeight);
    for (int lead = 0; lead < kLeads; ++lead) {
      const int r = lead / 6, c = lead % 6;
      const double x = x0 + c * (cut_w + gap);
      trace(out, s, lead, cut_from, cut_to, x, cut_top + r * kRowHeight + kRowHeight / 2, "#000000");
      label(out, x + 0.5, cut_top + r * kRowHeight + 4, kLeadNames[lead]);
    }
  }
  out << "<text x=\"" << num(width - 5) << "\" y=\"" << num(height - 1)
      << "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"2.5\">25 mm/s, 10 mm/mV</text>\n";
  out << "</svg>\n";
  return out.str();
}

void render(const EcgRecord& record, const RenderSpec& spec, const std::filesystem::path& path) {
  const std::string svg = render_svg(record.signal, spec);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << svg;
  if (!out) throw IoError("write failed for " + path.string());
}

}  // namespace protoecg
