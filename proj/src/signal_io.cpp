#include "protoecg/signal_io.hpp"

#include <bit>
#include <cmath>
#include <fstream>
#include <numbers>
#include <set>
#include <sstream>

#include "protoecg/errors.hpp"

namespace protoecg {

namespace fs = std::filesystem;

static_assert(std::endian::native == std::endian::little,
              "signal interchange format assumes a little-endian host");

void EcgRecord::validate(int expected_labels) const {
  if (signal.rows() != kLeads || signal.cols() != kSamples) {
    throw ShapeError("record '" + id + "': signal shape " + std::to_string(signal.rows()) + "x" +
                     std::to_string(signal.cols()) + ", expected 12x1000");
  }
  if (static_cast<int>(labels.size()) != expected_labels) {
    throw ValidationError("record '" + id + "': label vector length " +
                          std::to_string(labels.size()) + ", expected " +
                          std::to_string(expected_labels));
  }
  if (fold < 1 || fold > 10) {
    throw ValidationError("record '" + id + "': fold " + std::to_string(fold) + " outside 1..10");
  }
  for (int lead = 0; lead < kLeads; ++lead) {
    if (!signal.row(lead).array().isFinite().any()) {
      throw ValidationError("record '" + id + "': lead " + std::to_string(lead) +
                            " has no finite samples");
    }
  }
}

int EcgRecord::positive_count() const {
  int n = 0;
  for (auto v : labels) n += v != 0;
  return n;
}

const std::vector<EcgRecord>& DatasetSplit::part(std::string_view name) const {
  if (name == "train") return train;
  if (name == "val" || name == "validation") return val;
  if (name == "test") return test;
  throw ConfigurationError("unknown split '" + std::string(name) + "'");
}

SplitPart split_part_for_fold(int fold) {
  if (fold >= 1 && fold <= 8) return SplitPart::Train;
  if (fold == 9) return SplitPart::Val;
  if (fold == 10) return SplitPart::Test;
  throw ValidationError("fold " + std::to_string(fold) + " outside 1..10");
}

fs::path signal_path(const fs::path& signal_dir, const std::string& id) {
  return signal_dir / (id + ".f32");
}

SignalMatrix read_signal(const fs::path& path) {
  std::ifstream in(path, std::ios::binary | std::ios::ate);
  if (!in) throw IngestionError("cannot open signal file " + path.string());
  const auto bytes = static_cast<std::size_t>(in.tellg());
  constexpr std::size_t expected = sizeof(float) * kLeads * kSamples;
  if (bytes != expected) {
    throw ShapeError("signal file " + path.string() + " holds " + std::to_string(bytes) +
                     " bytes, expected " + std::to_string(expected) + " (12x1000 float32)");
  }
  SignalMatrix signal(kLeads, kSamples);
  in.seekg(0);
  in.read(reinterpret_cast<char*>(signal.data()), static_cast<std::streamsize>(expected));
  if (!in) throw IngestionError("short read on " + path.string());
  return signal;
}

void write_signal(const fs::path& path, const SignalMatrix& signal) {
  if (signal.rows() != kLeads || signal.cols() != kSamples) {
    throw ShapeError("refusing to write signal of shape " + std::to_string(signal.rows()) + "x" +
                     std::to_string(signal.cols()));
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(signal.data()),
            static_cast<std::streamsize>(sizeof(float) * signal.size()));
  if (!out) throw IoError("write failed for " + path.string());
}

std::vector<std::uint8_t> encode_labels(const std::vector<std::string>& codes) {
  const auto& tax = LabelTaxonomy::standard();
  std::vector<std::uint8_t> hot(tax.size(), 0);
  for (const auto& c : codes) hot[tax.index_of(c)] = 1;
  return hot;
}

std::vector<std::string> decode_labels(const std::vector<std::uint8_t>& multi_hot) {
  const auto& tax = LabelTaxonomy::standard();
  std::vector<std::string> out;
  for (int i = 0; i < static_cast<int>(multi_hot.size()) && i < tax.size(); ++i) {
    if (multi_hot[i]) out.push_back(tax.code(i));
  }
  return out;
}

namespace {

std::vector<std::string> split_on(const std::string& s, char sep) {
  std::vector<std::string> parts;
  std::string cur;
  std::istringstream in(s);
  while (std::getline(in, cur, sep)) parts.push_back(cur);
  if (!s.empty() && s.back() == sep) parts.emplace_back();
  return parts;
}

std::string trim(std::string s) {
  const auto first = s.find_first_not_of(" \t\r\n\"");
  if (first == std::string::npos) return {};
  const auto last = s.find_last_not_of(" \t\r\n\"");
  return s.substr(first, last - first + 1);
}

void put(DatasetSplit& split, EcgRecord rec) {
  switch (split_part_for_fold(rec.fold)) {
    case SplitPart::Train:
      split.train.push_back(std::move(rec));
      break;
    case SplitPart::Val:
      split.val.push_back(std::move(rec));
      break;
    case SplitPart::Test:
      split.test.push_back(std::move(rec));
      break;
  }
}

}  // namespace

DatasetSplit load_dataset(const fs::path& manifest_path, const fs::path& signal_dir) {
  std::ifstream in(manifest_path);
  if (!in) throw IngestionError("cannot open manifest " + manifest_path.string());

  DatasetSplit split;
  std::set<std::string> seen;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    auto cols = split_on(line, ',');
    if (line_no == 1 && !cols.empty() && trim(cols[0]) == "id") continue;
    if (cols.size() < 2) {
      throw IngestionError("manifest line " + std::to_string(line_no) + ": expected id,fold,codes");
    }
    EcgRecord rec;
    rec.id = trim(cols[0]);
    try {
      rec.fold = std::stoi(trim(cols[1]));
    } catch (const std::exception&) {
      throw IngestionError("manifest line " + std::to_string(line_no) + ": bad fold '" +
                           cols[1] + "'");
    }
    if (!seen.insert(rec.id).second) throw IngestionError("duplicate record id '" + rec.id + "'");

    std::vector<std::string> codes;
    if (cols.size() >= 3) {
      for (auto& c : split_on(cols[2], ';')) {
        c = trim(c);
        if (!c.empty()) codes.push_back(c);
      }
    }
    try {
      rec.labels = encode_labels(codes);
    } catch (const TaxonomyError& e) {
      throw TaxonomyError("record '" + rec.id + "': " + e.what());
    }

    const fs::path sp = signal_path(signal_dir, rec.id);
    if (!fs::exists(sp)) throw IngestionError("record '" + rec.id + "': missing signal file " + sp.string());
    rec.signal = read_signal(sp);
    rec.validate();
    put(split, std::move(rec));
  }
  return split;
}

void save_dataset(const DatasetSplit& split, const fs::path& manifest_path,
                  const fs::path& signal_dir) {
  fs::create_directories(signal_dir);
  if (manifest_path.has_parent_path()) fs::create_directories(manifest_path.parent_path());
  std::ofstream out(manifest_path, std::ios::trunc);
  if (!out) throw IoError("cannot write manifest " + manifest_path.string());
  out << "id,fold,codes\n";
  for (const auto* part : {&split.train, &split.val, &split.test}) {
    for (const auto& rec : *part) {
      rec.validate();
      out << rec.id << ',' << rec.fold << ',';
      const auto codes = decode_labels(rec.labels);
      for (std::size_t i = 0; i < codes.size(); ++i) out << (i ? ";" : "") << codes[i];
      out << '\n';
      write_signal(signal_path(signal_dir, rec.id), rec.signal);
    }
  }
}

namespace {

struct HighpassCoefficients {
  double b0;  // numerator is b0 * (1 - z^-1)
  double a1;  // denominator is 1 + a1 z^-1
};

HighpassCoefficients design_highpass(const FilterOptions& opts) {
  if (opts.order != 1) {
    throw ConfigurationError("only first-order high-pass filtering is supported");
  }
  const double nyquist = opts.sample_rate_hz / 2.0;
  if (!(opts.cutoff_hz > 0.0) || opts.cutoff_hz >= nyquist) {
    throw ConfigurationError("cutoff must lie in (0, Nyquist)");
  }
  const double k = std::tan(std::numbers::pi * opts.cutoff_hz / opts.sample_rate_hz);
  return {1.0 / (1.0 + k), (k - 1.0) / (k + 1.0)};
}

void run_forward(const HighpassCoefficients& c, double* x, Eigen::Index n, Eigen::Index stride) {
  double prev_x = x[0];
  double prev_y = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    const double xi = x[i * stride];
    const double yi = c.b0 * (xi - prev_x) - c.a1 * prev_y;
    prev_x = xi;
    prev_y = yi;
    x[i * stride] = yi;
  }
}

}  // namespace

double highpass_magnitude(double freq_hz, const FilterOptions& opts) {
  const auto c = design_highpass(opts);
  const double w = 2.0 * std::numbers::pi * freq_hz / opts.sample_rate_hz;
  // |b0 (1 - e^{-jw})| / |1 + a1 e^{-jw}|
  const double num = c.b0 * std::sqrt(2.0 - 2.0 * std::cos(w));
  const double den = std::sqrt(1.0 + c.a1 * c.a1 + 2.0 * c.a1 * std::cos(w));
  return num / den;
}

Eigen::MatrixXd highpass_filter(const Eigen::MatrixXd& signal, const FilterOptions& opts) {
  const auto c = design_highpass(opts);
  for (Eigen::Index lead = 0; lead < signal.rows(); ++lead) {
    if (!signal.row(lead).allFinite()) {
      throw NumericError("non-finite sample in lead " + std::to_string(lead));
    }
  }
  Eigen::MatrixXd out = signal;
  const Eigen::Index n = out.cols();
  if (n == 0) return out;
  for (Eigen::Index lead = 0; lead < out.rows(); ++lead) {
    // Column-major storage: consecutive samples of a lead are rows() apart.
    double* base = out.data() + lead;
    run_forward(c, base, n, out.rows());
    if (opts.zero_phase) {
      Eigen::VectorXd rev = out.row(lead).reverse().transpose();
      run_forward(c, rev.data(), n, 1);
      out.row(lead) = rev.reverse().transpose();
    }
  }
  return out;
}

EcgRecord preprocess_record(const EcgRecord& record, const FilterOptions& opts) {
  EcgRecord out = record;
  try {
    out.signal = highpass_filter(record.signal.cast<double>(), opts).cast<float>();
  } catch (const NumericError& e) {
    throw NumericError("record '" + record.id + "': " + e.what());
  }
  return out;
}

DatasetSplit preprocess_dataset(const DatasetSplit& split, const FilterOptions& opts) {
  DatasetSplit out;
  for (const auto& r : split.train) out.train.push_back(preprocess_record(r, opts));
  for (const auto& r : split.val) out.val.push_back(preprocess_record(r, opts));
  for (const auto& r : split.test) out.test.push_back(preprocess_record(r, opts));
  return out;
}

DatasetSplit branch_view(const DatasetSplit& split, Branch branch) {
  const auto& idx = LabelTaxonomy::standard().branch_indices(branch);
  auto restrict = [&](const std::vector<EcgRecord>& in) {
    std::vector<EcgRecord> out;
    out.reserve(in.size());
    for (const auto& r : in) {
      EcgRecord v = r;
      v.labels.assign(idx.size(), 0);
      for (std::size_t k = 0; k < idx.size(); ++k) v.labels[k] = r.labels.at(idx[k]);
      out.push_back(std::move(v));
    }
    return out;
  };
  return {restrict(split.train), restrict(split.val), restrict(split.test)};
}

nlohmann::json taxonomy_json() {
  const auto& tax = LabelTaxonomy::standard();
  nlohmann::json arr = nlohmann::json::array();
  for (int i = 0; i < tax.size(); ++i) {
    arr.push_back({{"code", tax.code(i)},
                   {"branch", std::string(branch_name(tax.branch_of(i)))},
                   {"index", i},
                   {"description", tax.description(i)}});
  }
  return arr;
}

}  // namespace protoecg
