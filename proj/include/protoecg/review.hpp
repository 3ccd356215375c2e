#pragma once

#include <filesystem>
#include <functional>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "protoecg/prototype.hpp"
#include "protoecg/signal_io.hpp"

namespace protoecg {

inline constexpr int kReviewSchemaVersion = 1;

// One reviewer's verdict on one prototype. An exclusion (label-error flag) carries no scores.
struct ReviewRating {
  std::string reviewer;
  int prototype = 0;
  int representativeness = 0;  // 1..5
  int clarity = 0;             // 1..5
  bool excluded = false;
  std::string timestamp;

  void validate() const;
  nlohmann::json to_json() const;
  static ReviewRating from_json(const nlohmann::json& j);
};

struct SummaryRow {
  std::string reviewer;
  std::string criterion;  // "representativeness" or "clarity"
  double mean = 0.0;
  double lo = 0.0, hi = 0.0;  // mean +- 1.96 s / sqrt(n)
  int n = 0;

  // "4.29 [4.22, 4.35]"
  std::string formatted() const;
};

struct ReviewSummary {
  std::vector<SummaryRow> rows;  // by reviewer, then criterion
  std::vector<int> excluded;     // prototypes left out of every row

  nlohmann::json to_json() const;
};

// Latest rating per (reviewer, prototype) wins. A prototype is excluded when any reviewer's
// latest entry flags it.
ReviewSummary summarize(const std::vector<ReviewRating>& log);

// Append-only newline-delimited JSON log. Existing entries are replayed on open.
class ReviewStore {
 public:
  ReviewStore(std::filesystem::path log_path, int num_prototypes);

  // Validates, timestamps if needed, appends; returns the stored entry's sequence number.
  std::size_t submit(ReviewRating rating);
  std::vector<ReviewRating> snapshot() const;
  ReviewSummary summary() const { return summarize(snapshot()); }
  std::size_t size() const;
  int num_prototypes() const { return num_prototypes_; }

 private:
  std::filesystem::path path_;
  int num_prototypes_;
  mutable std::mutex mu_;
  std::vector<ReviewRating> log_;
};

// What reviewers see of a prototype: class label only, never scores or weights.
struct CatalogEntry {
  int id = 0;
  std::string branch;
  PrototypeKind kind = PrototypeKind::Global1D;
  std::string class_code;
  std::string description;
  Provenance source;
  int latent_length = 1;
};

struct ReviewCatalog {
  std::vector<CatalogEntry> entries;
  // record id -> signal, used to render the source segment of a prototype
  std::function<std::optional<SignalMatrix>(const std::string&)> signal_lookup;

  // Banks are ordered by kind; each must be projected.
  static ReviewCatalog from_banks(const std::vector<PrototypeBank>& banks);
  std::string render(int id) const;
};

class ReviewServer {
 public:
  ReviewServer(ReviewCatalog catalog, ReviewStore& store, int page_size = 50);
  ~ReviewServer();

  // Binds to host:port (port 0 picks a free port) and returns the bound port.
  int bind(const std::string& host, int port);
  void run();    // blocks until stop()
  void start();  // run() on a background thread
  void stop();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace protoecg
