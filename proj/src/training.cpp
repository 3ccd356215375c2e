#include "protoecg/training.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <random>

#include "protoecg/errors.hpp"
#include "protoecg/evaluation.hpp"

namespace protoecg {

// ---- ClassifierHead -------------------------------------------------------

Eigen::MatrixXd ClassifierHead::logits(const Eigen::MatrixXd& profiles) const {
  if (profiles.cols() != weights.cols()) {
    throw ConfigurationError("profile length " + std::to_string(profiles.cols()) + " != head input " +
                             std::to_string(weights.cols()));
  }
  Eigen::MatrixXd z = profiles * weights.transpose();
  z.rowwise() += bias.transpose();
  return z;
}

void ClassifierHead::validate() const {
  if (bias.size() != weights.rows()) throw ConfigurationError("head bias length != class count");
  if (static_cast<Eigen::Index>(class_codes.size()) != weights.rows()) {
    throw ConfigurationError("head class codes != class count");
  }
  if (!weights.allFinite() || !bias.allFinite()) throw NumericError("non-finite head parameter");
}

nlohmann::json ClassifierHead::to_json() const {
  nlohmann::json rows = nlohmann::json::array();
  for (Eigen::Index c = 0; c < weights.rows(); ++c) {
    std::vector<double> r(weights.cols());
    for (Eigen::Index j = 0; j < weights.cols(); ++j) r[j] = weights(c, j);
    rows.push_back(std::move(r));
  }
  return {{"format", "protoecg-head"},
          {"version", 1},
          {"class_codes", class_codes},
          {"weights", rows},
          {"bias", std::vector<double>(bias.data(), bias.data() + bias.size())}};
}

ClassifierHead ClassifierHead::from_json(const nlohmann::json& j) {
  ClassifierHead h;
  h.class_codes = j.at("class_codes").get<std::vector<std::string>>();
  const auto rows = j.at("weights").get<std::vector<std::vector<double>>>();
  const auto c = static_cast<Eigen::Index>(rows.size());
  const auto p = c > 0 ? static_cast<Eigen::Index>(rows[0].size()) : 0;
  h.weights.resize(c, p);
  for (Eigen::Index r = 0; r < c; ++r) {
    if (static_cast<Eigen::Index>(rows[r].size()) != p) throw ShapeError("ragged head weights");
    for (Eigen::Index k = 0; k < p; ++k) h.weights(r, k) = rows[r][k];
  }
  const auto b = j.at("bias").get<std::vector<double>>();
  h.bias = Eigen::Map<const Eigen::VectorXd>(b.data(), static_cast<Eigen::Index>(b.size()));
  h.validate();
  return h;
}

void ClassifierHead::save(const std::filesystem::path& path) const {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << to_json().dump(1) << '\n';
}

ClassifierHead ClassifierHead::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  return from_json(nlohmann::json::parse(in));
}

ClassifierHead init_classifier(const std::vector<int>& class_of, int num_classes) {
  ClassifierHead h;
  const auto p = static_cast<Eigen::Index>(class_of.size());
  h.weights = Eigen::MatrixXd::Constant(num_classes, p, -0.5);
  for (Eigen::Index j = 0; j < p; ++j) {
    if (class_of[j] < 0 || class_of[j] >= num_classes) throw ConfigurationError("prototype class out of range");
    h.weights(class_of[j], j) = 1.0;
  }
  h.bias = Eigen::VectorXd::Zero(num_classes);
  h.class_codes.resize(num_classes);
  return h;
}

// ---- configs --------------------------------------------------------------

void TrainConfig::validate() const {
  if (max_epochs < 1) throw ConfigurationError("max_epochs must be >= 1");
  if (patience < 0) throw ConfigurationError("patience must be >= 0");
  if (batch_size < 1) throw ConfigurationError("batch_size must be >= 1");
  if (!(learning_rate > 0.0)) throw ConfigurationError("learning_rate must be positive");
  if (weight_decay < 0.0) throw ConfigurationError("weight_decay must be >= 0");
  if (scheduler != "plateau" && scheduler != "none") throw ConfigurationError("scheduler must be plateau or none");
  if (projection_every < 1) throw ConfigurationError("projection_every must be >= 1");
  if (top_k < 1) throw ConfigurationError("top_k must be >= 1");
  if (warmup_epochs < 0) throw ConfigurationError("warmup_epochs must be >= 0");
}

void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = {{"max_epochs", c.max_epochs},
       {"patience", c.patience},
       {"batch_size", c.batch_size},
       {"learning_rate", c.learning_rate},
       {"prototype_learning_rate", c.prototype_learning_rate},
       {"weight_decay", c.weight_decay},
       {"scheduler", c.scheduler},
       {"plateau_factor", c.plateau_factor},
       {"plateau_patience", c.plateau_patience},
       {"min_learning_rate", c.min_learning_rate},
       {"warmup_epochs", c.warmup_epochs},
       {"skip_warmup", c.skip_warmup},
       {"projection_every", c.projection_every},
       {"project_on_best", c.project_on_best},
       {"top_k", c.top_k},
       {"freeze_backbone", c.freeze_backbone},
       {"freeze_prototypes", c.freeze_prototypes},
       {"freeze_head", c.freeze_head},
       {"seed", c.seed}};
}

void from_json(const nlohmann::json& j, TrainConfig& c) {
  c.max_epochs = j.value("max_epochs", c.max_epochs);
  c.patience = j.value("patience", c.patience);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.learning_rate = j.value("learning_rate", c.learning_rate);
  c.prototype_learning_rate = j.value("prototype_learning_rate", c.prototype_learning_rate);
  c.weight_decay = j.value("weight_decay", c.weight_decay);
  c.scheduler = j.value("scheduler", c.scheduler);
  c.plateau_factor = j.value("plateau_factor", c.plateau_factor);
  c.plateau_patience = j.value("plateau_patience", c.plateau_patience);
  c.min_learning_rate = j.value("min_learning_rate", c.min_learning_rate);
  c.warmup_epochs = j.value("warmup_epochs", c.warmup_epochs);
  c.skip_warmup = j.value("skip_warmup", c.skip_warmup);
  c.projection_every = j.value("projection_every", c.projection_every);
  c.project_on_best = j.value("project_on_best", c.project_on_best);
  c.top_k = j.value("top_k", c.top_k);
  c.freeze_backbone = j.value("freeze_backbone", c.freeze_backbone);
  c.freeze_prototypes = j.value("freeze_prototypes", c.freeze_prototypes);
  c.freeze_head = j.value("freeze_head", c.freeze_head);
  c.seed = j.value("seed", c.seed);
}

void FusionConfig::validate() const {
  if (!std::isfinite(l1) || l1 < 0.0) throw ConfigurationError("fusion l1 must be finite and >= 0");
  if (max_iterations < 1) throw ConfigurationError("fusion max_iterations must be >= 1");
}

void to_json(nlohmann::json& j, const FusionConfig& c) {
  j = {{"l1", c.l1}, {"max_iterations", c.max_iterations}, {"tolerance", c.tolerance}};
}

void from_json(const nlohmann::json& j, FusionConfig& c) {
  c.l1 = j.value("l1", c.l1);
  c.max_iterations = j.value("max_iterations", c.max_iterations);
  c.tolerance = j.value("tolerance", c.tolerance);
}

// ---- optimizer and schedules ---------------------------------------------

void Adam::update(Slot& slot, double* value, const double* grad, std::size_t n, double lr, double weight_decay) const {
  if (slot.m.size() != n) {
    slot.m.assign(n, 0.0);
    slot.v.assign(n, 0.0);
  }
  const double bc1 = 1.0 - std::pow(beta1_, t_);
  const double bc2 = 1.0 - std::pow(beta2_, t_);
  for (std::size_t i = 0; i < n; ++i) {
    const double g = grad[i] + weight_decay * value[i];
    slot.m[i] = beta1_ * slot.m[i] + (1.0 - beta1_) * g;
    slot.v[i] = beta2_ * slot.v[i] + (1.0 - beta2_) * g * g;
    value[i] -= lr * (slot.m[i] / bc1) / (std::sqrt(slot.v[i] / bc2) + eps_);
  }
}

bool EarlyStopping::update(double metric) {
  if (!best_ || metric > *best_) {
    best_ = metric;
    bad_epochs_ = 0;
    return true;
  }
  ++bad_epochs_;
  return false;
}

double PlateauScheduler::step(double metric, double lr) {
  if (!best_ || metric > *best_) {
    best_ = metric;
    bad_ = 0;
    return lr;
  }
  if (++bad_ > patience_) {
    bad_ = 0;
    return std::max(min_lr_, lr * factor_);
  }
  return lr;
}

// ---- data -----------------------------------------------------------------

std::vector<std::string> active_classes(const DatasetSplit& split, Branch branch) {
  const auto& tax = LabelTaxonomy::standard();
  std::vector<std::string> out;
  for (int idx : tax.branch_indices(branch)) {
    const bool any = std::any_of(split.train.begin(), split.train.end(),
                                 [&](const EcgRecord& r) { return r.labels.at(idx) != 0; });
    if (any) out.push_back(tax.code(idx));
  }
  return out;
}

Eigen::MatrixXd label_matrix(const std::vector<const EcgRecord*>& records, const std::vector<int>& columns) {
  Eigen::MatrixXd m(static_cast<Eigen::Index>(records.size()), static_cast<Eigen::Index>(columns.size()));
  for (std::size_t i = 0; i < records.size(); ++i) {
    for (std::size_t k = 0; k < columns.size(); ++k) m(i, k) = records[i]->labels.at(columns[k]) ? 1.0 : 0.0;
  }
  return m;
}

BranchData make_branch_data(const DatasetSplit& split, const std::vector<std::string>& class_codes) {
  const auto& tax = LabelTaxonomy::standard();
  std::vector<int> cols;
  for (const auto& c : class_codes) cols.push_back(tax.index_of(c));
  BranchData d;
  for (const auto& r : split.train) {
    d.train.push_back(&r);
    d.train_ids.push_back(r.id);
  }
  for (const auto& r : split.val) d.val.push_back(&r);
  for (const auto& r : split.test) d.test.push_back(&r);
  d.train_labels = label_matrix(d.train, cols);
  d.val_labels = label_matrix(d.val, cols);
  d.test_labels = label_matrix(d.test, cols);
  return d;
}

// ---- model ----------------------------------------------------------------

PrototypeKind kind_for_branch(Branch b) {
  switch (b) {
    case Branch::Rhythm:
      return PrototypeKind::Global1D;
    case Branch::Morphology:
      return PrototypeKind::Partial2D;
    case Branch::Global:
      return PrototypeKind::Global2D;
  }
  return PrototypeKind::Global1D;
}

BranchModel make_branch_model(Branch branch, const std::vector<std::string>& class_codes, ExtractorVariant variant,
                              int prototypes_per_class, double scale, std::uint64_t seed) {
  const PrototypeKind kind = kind_for_branch(branch);
  if (variant_is_2d(variant) != (kind != PrototypeKind::Global1D)) {
    throw ConfigurationError("extractor variant " + std::string(variant_name(variant)) + " does not fit the " +
                             std::string(branch_name(branch)) + " branch");
  }
  BranchModel m;
  m.branch = branch;
  m.extractor = FeatureExtractor(variant, seed);
  m.bank = PrototypeBank::create(kind, class_codes, prototypes_per_class, seed ^ 0x9e3779b97f4a7c15ull, scale);
  m.head = init_classifier(m.bank.class_of, m.bank.num_classes());
  m.head.class_codes = class_codes;
  return m;
}

std::vector<LatentMap> compute_latents(FeatureExtractor& extractor, const std::vector<const EcgRecord*>& records,
                                       int batch_size) {
  std::vector<LatentMap> out;
  out.reserve(records.size());
  for (std::size_t start = 0; start < records.size(); start += batch_size) {
    const std::size_t end = std::min(records.size(), start + static_cast<std::size_t>(batch_size));
    std::vector<const SignalMatrix*> sigs;
    for (std::size_t i = start; i < end; ++i) sigs.push_back(&records[i]->signal);
    for (auto& m : extractor.forward_latents(sigs, false)) out.push_back(std::move(m));
  }
  return out;
}

Eigen::MatrixXd branch_scores(const BranchModel& model, const std::vector<LatentMap>& latents, int top_k) {
  return bank_forward(latents, model.bank, top_k).scores;
}

BatchLoss branch_batch_loss(const BranchModel& model, const std::vector<LatentMap>& latents,
                            const Eigen::MatrixXd& labels, const CoOccurrenceMatrix& cooccurrence,
                            const LossConfig& loss, int top_k, bool want_grads, bool want_latent_grads) {
  const auto& bank = model.bank;
  const auto& head = model.head;
  const BankActivation act = bank_forward(latents, bank, top_k);
  const Eigen::MatrixXd& s = act.scores;
  const Eigen::MatrixXd logits = head.logits(s);

  BatchLoss out;
  Eigen::MatrixXd d_logits, d_clst, d_sep, d_div, d_cntrst;
  const Eigen::VectorXd w = loss.weights_for(head.num_classes());
  out.parts.bce = bce_loss(logits, labels, w, want_grads ? &d_logits : nullptr);
  out.parts.clst = clustering_loss(s, labels, bank.class_of, want_grads ? &d_clst : nullptr);
  out.parts.sep = separation_loss(s, labels, bank.class_of, want_grads ? &d_sep : nullptr);
  out.parts.div = orthogonality_loss(bank.vectors, want_grads ? &d_div : nullptr);
  if (bank.size() >= 2) {
    out.parts.cntrst = contrastive_loss(bank.vectors, cooccurrence.values, bank.scale, want_grads ? &d_cntrst : nullptr);
  } else if (want_grads) {
    d_cntrst = Eigen::MatrixXd::Zero(bank.size(), bank.dim());
  }
  out.total = total_loss(out.parts, loss);
  if (!want_grads) return out;

  out.grad_weights = d_logits.transpose() * s;
  out.grad_bias = d_logits.colwise().sum().transpose();
  const Eigen::MatrixXd d_scores = d_logits * head.weights + loss.lambda_clst * d_clst + loss.lambda_sep * d_sep;
  out.grad_prototypes = Eigen::MatrixXd::Zero(bank.size(), bank.dim());
  bank_backward(latents, bank, act, d_scores, &out.grad_prototypes, want_latent_grads ? &out.grad_latents : nullptr);
  out.grad_prototypes += loss.lambda_div * d_div + loss.lambda_cntrst * d_cntrst;
  return out;
}

std::optional<double> monitored_auroc(const Eigen::MatrixXd& logits, const Eigen::MatrixXd& labels) {
  const auto per = per_class_auroc(logits, labels);
  double s = 0.0;
  int n = 0;
  for (const auto& v : per) {
    if (!v) continue;
    s += *v;
    ++n;
  }
  if (n == 0) return std::nullopt;
  return s / n;
}

namespace {

std::vector<std::vector<int>> make_batches(int n, int batch_size, std::mt19937_64& rng) {
  std::vector<int> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  std::shuffle(idx.begin(), idx.end(), rng);
  std::vector<std::vector<int>> out;
  for (int s = 0; s < n; s += batch_size) out.emplace_back(idx.begin() + s, idx.begin() + std::min(n, s + batch_size));
  return out;
}

Eigen::MatrixXd rows_of(const Eigen::MatrixXd& m, const std::vector<int>& rows) {
  Eigen::MatrixXd out(static_cast<Eigen::Index>(rows.size()), m.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) out.row(i) = m.row(rows[i]);
  return out;
}

double dataset_loss(const BranchModel& model, const std::vector<LatentMap>& latents, const Eigen::MatrixXd& labels,
                    const CoOccurrenceMatrix& co, const LossConfig& loss, int top_k) {
  return branch_batch_loss(model, latents, labels, co, loss, top_k, false, false).total;
}

struct Snapshot {
  std::vector<std::vector<double>> extractor;
  PrototypeBank bank;
  ClassifierHead head;
};

}  // namespace

WarmupResult warmup(BranchModel& model, const BranchData& data, const LossConfig& loss, const TrainConfig& cfg) {
  cfg.validate();
  loss.validate(model.head.num_classes());
  if (cfg.freeze_prototypes || model.bank.size() == 0) {
    throw ConfigurationError("warm-up has nothing to train: prototypes are frozen");
  }
  WarmupResult res;
  if (cfg.skip_warmup || cfg.warmup_epochs == 0) {
    res.skipped = true;
    return res;
  }
  const std::vector<LatentMap> latents = compute_latents(model.extractor, data.train);
  const CoOccurrenceMatrix co = jaccard_matrix(data.train_labels, model.bank.class_of);
  std::mt19937_64 rng(cfg.seed ^ 0x77a3ull);
  Adam adam;
  Adam::Slot slot;
  const double lr = cfg.prototype_learning_rate > 0 ? cfg.prototype_learning_rate : cfg.learning_rate;

  res.epoch_losses.push_back(dataset_loss(model, latents, data.train_labels, co, loss, cfg.top_k));
  for (int epoch = 0; epoch < cfg.warmup_epochs; ++epoch) {
    for (const auto& batch : make_batches(static_cast<int>(latents.size()), cfg.batch_size, rng)) {
      std::vector<LatentMap> lat;
      for (int i : batch) lat.push_back(latents[i]);
      const BatchLoss bl =
          branch_batch_loss(model, lat, rows_of(data.train_labels, batch), co, loss, cfg.top_k, true, false);
      if (!std::isfinite(bl.total)) throw NumericError("non-finite loss during warm-up");
      adam.begin_step();
      adam.update(slot, model.bank.vectors.data(), bl.grad_prototypes.data(), bl.grad_prototypes.size(), lr, 0.0);
    }
    res.epoch_losses.push_back(dataset_loss(model, latents, data.train_labels, co, loss, cfg.top_k));
  }
  res.loss_decreased = res.epoch_losses.back() < res.epoch_losses.front();
  if (!res.loss_decreased) res.warnings.push_back("warm-up did not lower the training loss");
  return res;
}

JointResult joint_train_with_projection(BranchModel& model, const BranchData& data, const LossConfig& loss,
                                        const TrainConfig& cfg) {
  cfg.validate();
  loss.validate(model.head.num_classes());
  const CoOccurrenceMatrix co = jaccard_matrix(data.train_labels, model.bank.class_of);
  std::mt19937_64 rng(cfg.seed ^ 0x10a7ull);
  Adam adam;
  std::vector<Adam::Slot> extractor_slots;
  Adam::Slot proto_slot, weight_slot, bias_slot;
  double lr = cfg.learning_rate;
  const double proto_lr_ratio = cfg.prototype_learning_rate > 0 ? cfg.prototype_learning_rate / cfg.learning_rate : 1.0;
  EarlyStopping stopper(cfg.patience);
  PlateauScheduler scheduler(cfg.plateau_factor, cfg.plateau_patience, cfg.min_learning_rate);
  const int n = static_cast<int>(data.train.size());

  std::vector<LatentMap> cached;
  if (cfg.freeze_backbone) cached = compute_latents(model.extractor, data.train);

  JointResult res;
  std::optional<Snapshot> best;

  auto project_now = [&]() {
    const auto latents = cfg.freeze_backbone ? cached : compute_latents(model.extractor, data.train);
    model.bank = project_prototypes(model.bank, latents, data.train_labels, data.train_ids);
    ++res.projection_cycles;
  };
  auto val_auroc = [&]() {
    const auto lat = compute_latents(model.extractor, data.val);
    return monitored_auroc(model.head.logits(branch_scores(model, lat, cfg.top_k)), data.val_labels);
  };
  auto consider_checkpoint = [&](int epoch, std::optional<double> metric) {
    const double m = metric.value_or(-std::numeric_limits<double>::infinity());
    if (!best || !res.best_val_auroc || m > *res.best_val_auroc) {
      best = Snapshot{model.extractor.state(), model.bank, model.head};
      res.best_val_auroc = metric;
      res.best_epoch = epoch;
    }
  };

  res.stop_reason = "max_epochs";
  for (int epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    EpochRecord rec;
    rec.epoch = epoch;
    rec.learning_rate = lr;
    double loss_sum = 0.0;
    bool diverged = false;
    for (const auto& batch : make_batches(n, cfg.batch_size, rng)) {
      std::vector<LatentMap> lat;
      if (cfg.freeze_backbone) {
        for (int i : batch) lat.push_back(cached[i]);
      } else {
        std::vector<const SignalMatrix*> sigs;
        for (int i : batch) sigs.push_back(&data.train[i]->signal);
        lat = split_latents(model.extractor.forward(model.extractor.make_input(sigs), true));
      }
      const BatchLoss bl = branch_batch_loss(model, lat, rows_of(data.train_labels, batch), co, loss, cfg.top_k, true,
                                             !cfg.freeze_backbone);
      if (!std::isfinite(bl.total) || !bl.grad_prototypes.allFinite()) {
        diverged = true;
        break;
      }
      loss_sum += bl.total * static_cast<double>(batch.size());
      adam.begin_step();
      if (!cfg.freeze_backbone) {
        model.extractor.zero_grad();
        model.extractor.backward(stack_latents(bl.grad_latents));
        auto params = model.extractor.parameters();
        extractor_slots.resize(params.size());
        for (std::size_t k = 0; k < params.size(); ++k) {
          if (params[k]->is_buffer) continue;
          adam.update(extractor_slots[k], params[k]->value.data(), params[k]->grad.data(), params[k]->value.size(), lr,
                      cfg.weight_decay);
        }
      }
      if (!cfg.freeze_prototypes) {
        adam.update(proto_slot, model.bank.vectors.data(), bl.grad_prototypes.data(), bl.grad_prototypes.size(),
                    lr * proto_lr_ratio, 0.0);
        for (auto& p : model.bank.provenance) p.reset();
      }
      if (!cfg.freeze_head) {
        adam.update(weight_slot, model.head.weights.data(), bl.grad_weights.data(), bl.grad_weights.size(), lr,
                    cfg.weight_decay);
        adam.update(bias_slot, model.head.bias.data(), bl.grad_bias.data(), bl.grad_bias.size(), lr, 0.0);
      }
    }
    if (diverged) {
      res.stop_reason = "diverged";
      if (!best) throw NumericError("training diverged before any checkpoint was taken");
      break;
    }
    rec.train_loss = loss_sum / std::max(1, n);

    rec.val_auroc = val_auroc();
    res.last_pre_projection_val_auroc = rec.val_auroc;
    rec.improved = stopper.update(rec.val_auroc.value_or(-std::numeric_limits<double>::infinity()));
    // Best-triggered projection waits for the first scheduled cycle: projecting onto an
    // untrained latent space pins prototypes where cosine gradients vanish.
    const bool due = epoch % cfg.projection_every == 0;
    const bool on_best = cfg.project_on_best && rec.improved && epoch >= cfg.projection_every;
    if (due || on_best) {
      project_now();
      rec.projected = true;
      rec.val_auroc_projected = val_auroc();
      consider_checkpoint(epoch, rec.val_auroc_projected);
    }
    if (cfg.scheduler == "plateau") {
      lr = scheduler.step(rec.val_auroc.value_or(-std::numeric_limits<double>::infinity()), lr);
    }
    res.history.push_back(rec);
    if (stopper.should_stop()) {
      res.stop_reason = "early_stopping";
      break;
    }
  }

  if (!best) {
    project_now();
    consider_checkpoint(res.history.empty() ? 0 : res.history.back().epoch, val_auroc());
  }
  model.extractor.load_state(best->extractor);
  model.bank = best->bank;
  model.head = best->head;
  return res;
}

// ---- stage 3 --------------------------------------------------------------

Eigen::MatrixXd fuse_similarities(const std::vector<BranchProfiles>& profiles) {
  if (profiles.empty()) throw ConfigurationError("nothing to fuse");
  int last = -1;
  Eigen::Index cols = 0;
  const Eigen::Index n = profiles.front().scores.rows();
  for (const auto& p : profiles) {
    const int k = static_cast<int>(p.kind);
    if (k <= last) throw ConfigurationError("branch profiles must be ordered GLOBAL_1D, PARTIAL_2D, GLOBAL_2D");
    last = k;
    if (p.scores.rows() != n) throw ConfigurationError("branch profiles differ in record count");
    cols += p.scores.cols();
  }
  Eigen::MatrixXd out(n, cols);
  Eigen::Index at = 0;
  for (const auto& p : profiles) {
    out.middleCols(at, p.scores.cols()) = p.scores;
    at += p.scores.cols();
  }
  return out;
}

namespace {

double smooth_part(const Eigen::MatrixXd& x, const Eigen::MatrixXd& y, const Eigen::MatrixXd& w,
                   const Eigen::VectorXd& b, Eigen::MatrixXd* gw, Eigen::VectorXd* gb) {
  Eigen::MatrixXd z = x * w.transpose();
  z.rowwise() += b.transpose();
  Eigen::MatrixXd g;
  const double v = bce_loss(z, y, Eigen::VectorXd::Ones(w.rows()), gw ? &g : nullptr);
  if (gw) {
    *gw = g.transpose() * x;
    *gb = g.colwise().sum().transpose();
  }
  return v;
}

double off_class_l1(const Eigen::MatrixXd& w, const std::vector<int>& class_of) {
  double s = 0.0;
  for (Eigen::Index c = 0; c < w.rows(); ++c) {
    for (Eigen::Index j = 0; j < w.cols(); ++j) {
      if (class_of[j] != c) s += std::abs(w(c, j));
    }
  }
  return s;
}

// Largest eigenvalue of A^T A for A = [x 1], by power iteration.
double top_eigenvalue(const Eigen::MatrixXd& x) {
  const Eigen::Index p = x.cols();
  Eigen::VectorXd v = Eigen::VectorXd::Ones(p + 1).normalized();
  double lambda = 0.0;
  for (int it = 0; it < 200; ++it) {
    const Eigen::VectorXd av = x * v.head(p) + Eigen::VectorXd::Constant(x.rows(), v[p]);
    Eigen::VectorXd atav(p + 1);
    atav.head(p) = x.transpose() * av;
    atav[p] = av.sum();
    const double next = atav.norm();
    if (next == 0.0) return 0.0;
    v = atav / next;
    if (std::abs(next - lambda) <= 1e-10 * next) {
      lambda = next;
      break;
    }
    lambda = next;
  }
  return lambda;
}

}  // namespace

double fusion_objective(const ClassifierHead& head, const Eigen::MatrixXd& profiles, const Eigen::MatrixXd& labels,
                        const std::vector<int>& class_of, double l1) {
  return smooth_part(profiles, labels, head.weights, head.bias, nullptr, nullptr) +
         l1 * off_class_l1(head.weights, class_of);
}

FusionResult train_fusion(const Eigen::MatrixXd& profiles, const Eigen::MatrixXd& labels, const std::vector<int>& class_of,
                          const std::vector<std::string>& class_codes, const FusionConfig& cfg) {
  cfg.validate();
  const auto c = static_cast<int>(labels.cols());
  if (profiles.rows() != labels.rows()) throw ConfigurationError("profiles and labels differ in N");
  if (profiles.cols() != static_cast<Eigen::Index>(class_of.size())) throw ConfigurationError("class_of != profile length");
  if (static_cast<int>(class_codes.size()) != c) throw ConfigurationError("class codes != label columns");
  if (!profiles.allFinite()) throw NumericError("non-finite similarity profile");

  ClassifierHead x = init_classifier(class_of, c);
  x.class_codes = class_codes;
  const double n = static_cast<double>(std::max<Eigen::Index>(1, profiles.rows()));
  const double lipschitz = 0.25 * top_eigenvalue(profiles) / n;
  const double step = lipschitz > 0 ? 1.0 / lipschitz : 1.0;
  const double thresh = step * cfg.l1;

  auto prox = [&](Eigen::MatrixXd& w) {
    for (Eigen::Index r = 0; r < w.rows(); ++r) {
      for (Eigen::Index j = 0; j < w.cols(); ++j) {
        if (class_of[j] == r) continue;
        const double v = w(r, j);
        w(r, j) = v > thresh ? v - thresh : (v < -thresh ? v + thresh : 0.0);
      }
    }
  };

  Eigen::MatrixXd yw = x.weights;
  Eigen::VectorXd yb = x.bias;
  double t = 1.0;
  double f_prev = fusion_objective(x, profiles, labels, class_of, cfg.l1);
  FusionResult res;
  Eigen::MatrixXd gw;
  Eigen::VectorXd gb;
  for (int it = 1; it <= cfg.max_iterations; ++it) {
    smooth_part(profiles, labels, yw, yb, &gw, &gb);
    ClassifierHead next = x;
    next.weights = yw - step * gw;
    next.bias = yb - step * gb;
    prox(next.weights);
    const double f = fusion_objective(next, profiles, labels, class_of, cfg.l1);
    res.iterations = it;
    if (f > f_prev) {
      // Restart momentum; the plain proximal step from x always descends.
      t = 1.0;
      yw = x.weights;
      yb = x.bias;
      continue;
    }
    const double t_next = 0.5 * (1.0 + std::sqrt(1.0 + 4.0 * t * t));
    const double mom = (t - 1.0) / t_next;
    yw = next.weights + mom * (next.weights - x.weights);
    yb = next.bias + mom * (next.bias - x.bias);
    t = t_next;
    const double change = f_prev - f;
    x = std::move(next);
    f_prev = f;
    if (change <= cfg.tolerance * std::max(1.0, std::abs(f))) {
      res.converged = true;
      break;
    }
  }
  res.head = std::move(x);
  res.objective = f_prev;
  return res;
}

}  // namespace protoecg
