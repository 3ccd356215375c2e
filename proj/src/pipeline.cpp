#include "protoecg/pipeline.hpp"

#include <chrono>
#include <cstdio>
#include <fstream>
#include <ostream>

#include "protoecg/errors.hpp"

namespace protoecg {

namespace fs = std::filesystem;

ExperimentConfig::ExperimentConfig() {
  branches[0] = {true, ExtractorVariant::ResNet1D18, 5, 0.0, {}};
  branches[1] = {true, ExtractorVariant::ResNet2D18, 18, 0.0, {}};
  branches[2] = {true, ExtractorVariant::ResNet2D18, 7, 0.0, {}};
}

nlohmann::json ExperimentConfig::to_json() const {
  nlohmann::json br = nlohmann::json::object();
  for (Branch b : kAllBranches) {
    const auto& s = branch(b);
    br[std::string(branch_name(b))] = {{"enabled", s.enabled},
                                       {"extractor", std::string(variant_name(s.variant))},
                                       {"prototypes_per_class", s.prototypes_per_class},
                                       {"scale", s.scale},
                                       {"pretrained", s.pretrained}};
  }
  nlohmann::json j;
  j["manifest"] = manifest.string();
  j["signals"] = signals.string();
  j["model_dir"] = model_dir.string();
  j["filter_on_load"] = filter_on_load;
  j["filter"] = {{"cutoff_hz", filter.cutoff_hz}, {"order", filter.order}, {"zero_phase", filter.zero_phase}};
  j["branches"] = br;
  j["loss"] = loss;
  j["train"] = train;
  j["fusion"] = fusion;
  j["eval"] = {{"resamples", eval_resamples}, {"seed", eval_seed}};
  return j;
}

ExperimentConfig ExperimentConfig::from_json(const nlohmann::json& j, const fs::path& base_dir) {
  ExperimentConfig c;
  auto path_of = [&](const char* key, const fs::path& fallback) {
    if (!j.contains(key)) return fallback;
    fs::path p = j.at(key).get<std::string>();
    return p.is_relative() && !base_dir.empty() ? base_dir / p : p;
  };
  c.manifest = path_of("manifest", {});
  c.signals = path_of("signals", {});
  c.model_dir = path_of("model_dir", base_dir.empty() ? c.model_dir : base_dir / c.model_dir);
  c.filter_on_load = j.value("filter_on_load", c.filter_on_load);
  if (j.contains("filter")) {
    const auto& f = j.at("filter");
    c.filter.cutoff_hz = f.value("cutoff_hz", c.filter.cutoff_hz);
    c.filter.order = f.value("order", c.filter.order);
    c.filter.zero_phase = f.value("zero_phase", c.filter.zero_phase);
  }
  if (j.contains("branches")) {
    for (auto it = j.at("branches").begin(); it != j.at("branches").end(); ++it) {
      auto& s = c.branch(parse_branch(it.key()));
      const auto& v = it.value();
      s.enabled = v.value("enabled", s.enabled);
      if (v.contains("extractor")) s.variant = parse_variant(v.at("extractor").get<std::string>());
      s.prototypes_per_class = v.value("prototypes_per_class", s.prototypes_per_class);
      s.scale = v.value("scale", s.scale);
      s.pretrained = v.value("pretrained", s.pretrained);
      if (s.prototypes_per_class < 1 || s.prototypes_per_class > 20) {
        throw ConfigurationError("prototypes_per_class must be in 1..20");
      }
    }
  }
  if (j.contains("loss")) c.loss = j.at("loss").get<LossConfig>();
  if (j.contains("train")) c.train = j.at("train").get<TrainConfig>();
  if (j.contains("fusion")) c.fusion = j.at("fusion").get<FusionConfig>();
  if (j.contains("eval")) {
    c.eval_resamples = j.at("eval").value("resamples", c.eval_resamples);
    c.eval_seed = j.at("eval").value("seed", c.eval_seed);
  }
  c.train.validate();
  c.fusion.validate();
  return c;
}

ExperimentConfig ExperimentConfig::load(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config " + path.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigurationError("config " + path.string() + ": " + e.what());
  }
  return from_json(j, path.parent_path());
}

void ExperimentConfig::save(const fs::path& path) const {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << to_json().dump(2) << '\n';
}

std::string ExperimentConfig::hash() const {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char ch : to_json().dump()) {
    h ^= ch;
    h *= 1099511628211ull;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

DatasetSplit load_experiment_data(const ExperimentConfig& cfg) {
  if (cfg.manifest.empty() || cfg.signals.empty()) throw ConfigurationError("config needs manifest and signals");
  DatasetSplit d = load_dataset(cfg.manifest, cfg.signals);
  return cfg.filter_on_load ? preprocess_dataset(d, cfg.filter) : d;
}

BranchFiles branch_files(const fs::path& model_dir, Branch b) {
  const std::string n(branch_name(b));
  return {model_dir / (n + ".ckpt"), model_dir / (n + ".bank"), model_dir / (n + ".head.json"),
          model_dir / (n + ".run.json")};
}

namespace {

void write_json(const fs::path& path, const nlohmann::json& j) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::trunc);
    if (!out) throw IoError("cannot write " + path.string());
    out << j.dump(1) << '\n';
  }
  fs::rename(tmp, path);
}

nlohmann::json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw NotFoundError("missing artifact " + path.string());
  return nlohmann::json::parse(in);
}

nlohmann::json history_json(const JointResult& r) {
  nlohmann::json h = nlohmann::json::array();
  auto opt = [](const std::optional<double>& v) { return v ? nlohmann::json(*v) : nlohmann::json(nullptr); };
  for (const auto& e : r.history) {
    h.push_back({{"epoch", e.epoch},
                 {"train_loss", e.train_loss},
                 {"learning_rate", e.learning_rate},
                 {"val_auroc", opt(e.val_auroc)},
                 {"projected", e.projected},
                 {"val_auroc_projected", opt(e.val_auroc_projected)},
                 {"improved", e.improved}});
  }
  return h;
}

}  // namespace

void save_branch(const fs::path& model_dir, BranchModel& model, const nlohmann::json& run_metadata) {
  const auto f = branch_files(model_dir, model.branch);
  fs::create_directories(model_dir);
  model.extractor.save(f.checkpoint);
  model.bank.save(f.bank);
  model.head.save(f.head);
  write_json(f.run, run_metadata);
}

bool branch_exists(const fs::path& model_dir, Branch b) {
  const auto f = branch_files(model_dir, b);
  return fs::exists(f.checkpoint) && fs::exists(f.bank) && fs::exists(f.head);
}

BranchModel load_branch(const fs::path& model_dir, Branch b) {
  const auto f = branch_files(model_dir, b);
  for (const auto& p : {f.checkpoint, f.bank, f.head}) {
    if (!fs::exists(p)) throw NotFoundError("missing artifact " + p.string());
  }
  BranchModel m;
  m.branch = b;
  m.extractor = FeatureExtractor::load(f.checkpoint);
  m.bank = PrototypeBank::load(f.bank);
  m.head = ClassifierHead::load(f.head);
  if (m.bank.kind != kind_for_branch(b)) throw ConfigurationError("bank kind does not match branch " + std::string(branch_name(b)));
  if (m.head.num_prototypes() != m.bank.size()) throw ConfigurationError("head and bank differ in prototype count");
  return m;
}

BranchRun train_branch(const ExperimentConfig& cfg, const DatasetSplit& data, Branch branch, std::ostream* log) {
  const auto& s = cfg.branch(branch);
  const auto classes = active_classes(data, branch);
  if (classes.empty()) {
    throw ConfigurationError("branch " + std::string(branch_name(branch)) + " has no class with a training positive");
  }
  const auto t0 = std::chrono::steady_clock::now();
  BranchRun run;
  run.model = make_branch_model(branch, classes, s.variant, s.prototypes_per_class, s.scale,
                                cfg.train.seed + 1000 * static_cast<std::uint64_t>(branch));
  int pretrained = 0;
  if (!s.pretrained.empty()) pretrained = run.model.extractor.load_matching_weights(s.pretrained);
  const BranchData bd = make_branch_data(data, classes);

  run.warm = warmup(run.model, bd, cfg.loss, cfg.train);
  if (log) {
    *log << branch_name(branch) << ": " << classes.size() << " classes, " << run.model.bank.size() << " prototypes";
    if (run.warm.skipped) {
      *log << ", warm-up skipped\n";
    } else {
      *log << ", warm-up loss " << run.warm.epoch_losses.front() << " -> " << run.warm.epoch_losses.back() << '\n';
    }
    for (const auto& w : run.warm.warnings) *log << "warning: " << w << '\n';
  }
  run.joint = joint_train_with_projection(run.model, bd, cfg.loss, cfg.train);
  if (log) {
    for (const auto& e : run.joint.history) {
      *log << "  epoch " << e.epoch << " loss " << e.train_loss << " val " << e.val_auroc.value_or(-1.0);
      if (e.projected) *log << " projected " << e.val_auroc_projected.value_or(-1.0);
      *log << '\n';
    }
    *log << "  best epoch " << run.joint.best_epoch << " val " << run.joint.best_val_auroc.value_or(-1.0) << " ("
         << run.joint.stop_reason << ")\n";
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

  run.metadata = {{"branch", std::string(branch_name(branch))},
                  {"classes", classes},
                  {"extractor", std::string(variant_name(s.variant))},
                  {"prototypes", run.model.bank.size()},
                  {"seed", cfg.train.seed},
                  {"config_hash", cfg.hash()},
                  {"top_k", cfg.train.top_k},
                  {"pretrained_arrays", pretrained},
                  {"warmup", {{"skipped", run.warm.skipped},
                              {"losses", run.warm.epoch_losses},
                              {"warnings", run.warm.warnings}}},
                  {"history", history_json(run.joint)},
                  {"best_epoch", run.joint.best_epoch},
                  {"best_val_auroc", run.joint.best_val_auroc ? nlohmann::json(*run.joint.best_val_auroc) : nlohmann::json(nullptr)},
                  {"projection_cycles", run.joint.projection_cycles},
                  {"stop_reason", run.joint.stop_reason},
                  {"seconds", secs}};
  return run;
}

void project_branch(BranchModel& model, const DatasetSplit& data) {
  const BranchData bd = make_branch_data(data, model.bank.class_codes);
  const auto latents = compute_latents(model.extractor, bd.train);
  model.bank = project_prototypes(model.bank, latents, bd.train_labels, bd.train_ids);
}

// ---- fused model ----------------------------------------------------------

std::vector<std::string> FusedModel::class_codes() const {
  std::vector<std::string> out;
  for (const auto& b : branches) out.insert(out.end(), b.bank.class_codes.begin(), b.bank.class_codes.end());
  return out;
}

std::vector<int> FusedModel::class_of() const {
  std::vector<int> out;
  int offset = 0;
  for (const auto& b : branches) {
    for (int c : b.bank.class_of) out.push_back(offset + c);
    offset += b.bank.num_classes();
  }
  return out;
}

int FusedModel::profile_length() const {
  int n = 0;
  for (const auto& b : branches) n += b.bank.size();
  return n;
}

std::pair<int, int> FusedModel::locate(int profile_index) const {
  int at = profile_index;
  for (std::size_t i = 0; i < branches.size(); ++i) {
    if (at < branches[i].bank.size()) return {static_cast<int>(i), at};
    at -= branches[i].bank.size();
  }
  throw ValidationError("profile index " + std::to_string(profile_index) + " out of range");
}

std::vector<BranchProfiles> FusedModel::branch_profiles(const std::vector<const EcgRecord*>& records) {
  std::vector<BranchProfiles> out;
  for (auto& b : branches) {
    const auto latents = compute_latents(b.extractor, records);
    out.push_back({b.bank.kind, branch_scores(b, latents, top_k)});
  }
  return out;
}

Eigen::MatrixXd FusedModel::profiles(const std::vector<const EcgRecord*>& records) {
  return fuse_similarities(branch_profiles(records));
}

Eigen::MatrixXd FusedModel::logits(const std::vector<const EcgRecord*>& records) {
  const Eigen::MatrixXd p = profiles(records);
  if (head.num_prototypes() != p.cols()) {
    throw ConfigurationError("fusion head expects " + std::to_string(head.num_prototypes()) + " profile entries, got " +
                             std::to_string(p.cols()));
  }
  return head.logits(p);
}

Eigen::MatrixXd FusedModel::labels(const std::vector<const EcgRecord*>& records) const {
  const auto& tax = LabelTaxonomy::standard();
  std::vector<int> cols;
  for (const auto& c : class_codes()) cols.push_back(tax.index_of(c));
  return label_matrix(records, cols);
}

FusedModel load_fused(const fs::path& model_dir) {
  FusedModel m;
  for (Branch b : kAllBranches) {
    if (!branch_exists(model_dir, b)) continue;
    m.branches.push_back(load_branch(model_dir, b));
    const auto run = branch_files(model_dir, b).run;
    if (fs::exists(run)) m.top_k = read_json(run).value("top_k", m.top_k);
  }
  if (m.branches.empty()) throw NotFoundError("no trained branch in " + model_dir.string());
  const fs::path fusion = model_dir / "fusion.head.json";
  if (fs::exists(fusion)) {
    m.head = ClassifierHead::load(fusion);
    if (m.head.num_prototypes() != m.profile_length() || m.head.class_codes != m.class_codes()) {
      throw ConfigurationError("fusion head does not match the installed branches");
    }
  } else {
    m.head = init_classifier(m.class_of(), static_cast<int>(m.class_codes().size()));
    m.head.class_codes = m.class_codes();
  }
  return m;
}

std::vector<const EcgRecord*> pointers(const std::vector<EcgRecord>& records) {
  std::vector<const EcgRecord*> out;
  out.reserve(records.size());
  for (const auto& r : records) out.push_back(&r);
  return out;
}

FusionResult fit_fusion(FusedModel& model, const DatasetSplit& data, const FusionConfig& cfg) {
  const auto train = pointers(data.train);
  const Eigen::MatrixXd p = model.profiles(train);
  FusionResult r = train_fusion(p, model.labels(train), model.class_of(), model.class_codes(), cfg);
  model.head = r.head;
  return r;
}

void save_fusion(const fs::path& model_dir, const FusedModel& model, const nlohmann::json& metadata) {
  model.head.save(model_dir / "fusion.head.json");
  write_json(model_dir / "fusion.run.json", metadata);
}

EvalReport evaluate_fused(FusedModel& model, const std::vector<EcgRecord>& records, int n_resamples,
                          std::uint64_t seed) {
  const auto ptrs = pointers(records);
  return evaluate_scores(model.logits(ptrs), model.labels(ptrs), model.class_codes(), n_resamples, seed);
}

EvalReport evaluate_branch_baseline(FusedModel& model, const DatasetSplit& data, const FusionConfig& cfg,
                                    const std::vector<EcgRecord>& records, int n_resamples, std::uint64_t seed) {
  const auto train = pointers(data.train);
  const auto eval = pointers(records);
  const auto train_profiles = model.branch_profiles(train);
  const auto eval_profiles = model.branch_profiles(eval);
  const Eigen::MatrixXd train_labels = model.labels(train);
  Eigen::MatrixXd logits(static_cast<Eigen::Index>(eval.size()), train_labels.cols());
  Eigen::Index col = 0;
  for (std::size_t b = 0; b < model.branches.size(); ++b) {
    const auto& bank = model.branches[b].bank;
    const int c = bank.num_classes();
    const auto fit = train_fusion(train_profiles[b].scores, train_labels.middleCols(col, c), bank.class_of,
                                  bank.class_codes, cfg);
    logits.middleCols(col, c) = fit.head.logits(eval_profiles[b].scores);
    col += c;
  }
  return evaluate_scores(logits, model.labels(eval), model.class_codes(), n_resamples, seed);
}

}  // namespace protoecg
