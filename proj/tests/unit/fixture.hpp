#pragma once
// A small fused model trained end to end on the synthetic generator. Shared by the
// explainer and pipeline tests; training takes a few seconds.

#include <filesystem>
#include <string>

#include "protoecg/pipeline.hpp"
#include "protoecg/synthetic.hpp"

namespace testsupport {

struct TrainedFixture {
  protoecg::ExperimentConfig cfg;
  protoecg::DatasetSplit data;
  protoecg::FusedModel model;
  std::filesystem::path dir;
};

inline protoecg::ExperimentConfig tiny_config(const std::filesystem::path& model_dir) {
  using namespace protoecg;
  ExperimentConfig cfg;
  cfg.model_dir = model_dir;
  cfg.filter_on_load = true;
  cfg.branch(Branch::Rhythm) = {true, ExtractorVariant::Tiny1D, 2, 0.0, ""};
  cfg.branch(Branch::Morphology) = {true, ExtractorVariant::Tiny2D, 2, 0.0, ""};
  cfg.branch(Branch::Global) = {true, ExtractorVariant::Tiny2D, 2, 8.0, ""};
  cfg.train.max_epochs = 3;
  cfg.train.warmup_epochs = 1;
  cfg.train.projection_every = 2;
  cfg.train.patience = 2;
  cfg.train.seed = 5;
  cfg.fusion.max_iterations = 500;
  cfg.eval_resamples = 50;
  return cfg;
}

inline TrainedFixture train_fixture(const std::string& name) {
  using namespace protoecg;
  TrainedFixture f;
  f.dir = std::filesystem::temp_directory_path() / ("protoecg_fixture_" + name);
  std::filesystem::remove_all(f.dir);
  std::filesystem::create_directories(f.dir);
  f.cfg = tiny_config(f.dir / "model");
  SyntheticOptions opts;
  opts.train = 80;
  opts.val = 30;
  opts.test = 30;
  opts.seed = 3;
  f.data = preprocess_dataset(make_synthetic(opts), f.cfg.filter);
  for (Branch b : kAllBranches) {
    auto run = train_branch(f.cfg, f.data, b);
    save_branch(f.cfg.model_dir, run.model, run.metadata);
  }
  f.model = load_fused(f.cfg.model_dir);
  fit_fusion(f.model, f.data, f.cfg.fusion);
  save_fusion(f.cfg.model_dir, f.model, {});
  return f;
}

}  // namespace testsupport
