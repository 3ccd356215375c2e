// Command-line front end: data preparation, the three training stages, evaluation,
// explanations and the prototype review server.

#include <csignal>
#include <fstream>
#include <iostream>
#include <map>

#include <CLI11.hpp>

#include "protoecg/errors.hpp"
#include "protoecg/explainer.hpp"
#include "protoecg/pipeline.hpp"
#include "protoecg/review.hpp"
#include "protoecg/synthetic.hpp"

namespace fs = std::filesystem;
using namespace protoecg;

namespace {

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
}

void write_dataset(const DatasetSplit& d, const fs::path& out) {
  save_dataset(d, out / "manifest.csv", out / "signals");
  write_text(out / "taxonomy.json", taxonomy_json().dump(1) + "\n");
  std::cout << "wrote " << d.size() << " records (" << d.train.size() << " train, " << d.val.size() << " val, "
            << d.test.size() << " test) to " << out << '\n';
}

// The model directory keeps a copy of the config it was trained with.
ExperimentConfig config_for(const std::string& config_path, const fs::path& model_dir) {
  if (!config_path.empty()) return ExperimentConfig::load(config_path);
  const fs::path saved = model_dir / "config.json";
  if (!fs::exists(saved)) throw NotFoundError("no --config given and no config.json in " + model_dir.string());
  ExperimentConfig c = ExperimentConfig::load(saved);
  c.model_dir = model_dir;
  return c;
}

const EcgRecord& find_record(const DatasetSplit& d, const std::string& id) {
  for (const auto* part : {&d.test, &d.val, &d.train}) {
    for (const auto& r : *part) {
      if (r.id == id) return r;
    }
  }
  throw NotFoundError("record " + id + " not in the dataset");
}

ReviewServer* g_server = nullptr;

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Prototype-based multi-label ECG classification"};
  app.require_subcommand(1);

  // preprocess
  std::string manifest, signals, out;
  FilterOptions filter;
  auto* pre = app.add_subcommand("preprocess", "High-pass filter a dataset into the interchange format");
  pre->add_option("--manifest", manifest, "manifest CSV (id,fold,codes)")->required();
  pre->add_option("--signals", signals, "directory of <id>.f32 files")->required();
  pre->add_option("--out", out, "output directory")->required();
  pre->add_option("--cutoff", filter.cutoff_hz, "cutoff frequency in Hz");
  pre->add_flag("--zero-phase", filter.zero_phase, "forward-backward filtering");

  // synth
  SyntheticOptions syn;
  auto* synth = app.add_subcommand("synth", "Generate the synthetic three-branch dataset");
  synth->add_option("--out", out, "output directory")->required();
  synth->add_option("--train", syn.train);
  synth->add_option("--val", syn.val);
  synth->add_option("--test", syn.test);
  synth->add_option("--seed", syn.seed);

  // train / project
  std::string branch_arg, config_path;
  bool skip_warmup = false, quiet = false;
  auto* train = app.add_subcommand("train", "Warm-up and joint training with projection for one branch");
  train->add_option("--branch", branch_arg, "rhythm | morph | global")->required();
  train->add_option("--config", config_path, "experiment config JSON")->required();
  train->add_flag("--skip-warmup", skip_warmup);
  train->add_flag("--quiet", quiet);

  auto* project = app.add_subcommand("project", "Project a trained branch's prototypes onto training patches");
  project->add_option("--branch", branch_arg)->required();
  project->add_option("--config", config_path)->required();

  // fuse
  double l1 = -1.0;
  auto* fuse = app.add_subcommand("fuse", "Fit the sparse fusion classifier over all trained branches");
  fuse->add_option("--config", config_path)->required();
  fuse->add_option("--l1", l1, "off-class L1 penalty (overrides the config)");

  // eval
  std::string checkpoint, split_name = "test";
  int resamples = -1;
  bool baseline = false;
  auto* eval = app.add_subcommand("eval", "Per-class, macro and weighted AUROC with bootstrap CIs");
  eval->add_option("--checkpoint", checkpoint, "model directory")->required();
  eval->add_option("--split", split_name)->check(CLI::IsMember({"train", "val", "test"}));
  eval->add_option("--out", out, "report JSON path")->required();
  eval->add_option("--config", config_path);
  eval->add_option("--resamples", resamples);
  eval->add_flag("--baseline", baseline, "evaluate per-branch classifiers instead of the fusion head");

  // explain
  std::string record_id, class_code;
  int top = 3;
  auto* explain_cmd = app.add_subcommand("explain", "Case-based explanation for one record and class");
  explain_cmd->add_option("--record", record_id)->required();
  explain_cmd->add_option("--class", class_code)->required();
  explain_cmd->add_option("--top", top);
  explain_cmd->add_option("--out", out, "output directory")->required();
  explain_cmd->add_option("--checkpoint", checkpoint, "model directory");
  explain_cmd->add_option("--config", config_path);

  // serve
  int port = 8080, page_size = 50;
  std::string host = "127.0.0.1", log_path = "reviews.ndjson";
  std::vector<std::string> bank_files;
  auto* serve = app.add_subcommand("serve", "Prototype review service");
  serve->add_option("--port", port);
  serve->add_option("--host", host);
  serve->add_option("--bank", bank_files, "projected bank files")->required();
  serve->add_option("--manifest", manifest, "dataset manifest for rendering source segments");
  serve->add_option("--signals", signals);
  serve->add_option("--log", log_path, "append-only rating log");
  serve->add_option("--page-size", page_size);

  CLI11_PARSE(app, argc, argv);

  try {
    if (*pre) {
      const DatasetSplit d = preprocess_dataset(load_dataset(manifest, signals), filter);
      write_dataset(d, out);
    } else if (*synth) {
      write_dataset(make_synthetic(syn), out);
    } else if (*train) {
      ExperimentConfig cfg = ExperimentConfig::load(config_path);
      if (skip_warmup) cfg.train.skip_warmup = true;
      const Branch b = parse_branch(branch_arg);
      const DatasetSplit data = load_experiment_data(cfg);
      BranchRun run = train_branch(cfg, data, b, quiet ? nullptr : &std::cout);
      save_branch(cfg.model_dir, run.model, run.metadata);
      cfg.save(cfg.model_dir / "config.json");
      std::cout << "saved " << branch_name(b) << " branch to " << cfg.model_dir << '\n';
    } else if (*project) {
      const ExperimentConfig cfg = ExperimentConfig::load(config_path);
      const Branch b = parse_branch(branch_arg);
      BranchModel m = load_branch(cfg.model_dir, b);
      project_branch(m, load_experiment_data(cfg));
      m.bank.save(branch_files(cfg.model_dir, b).bank);
      std::cout << "projected " << m.bank.size() << " prototypes of the " << branch_name(b) << " branch\n";
    } else if (*fuse) {
      ExperimentConfig cfg = ExperimentConfig::load(config_path);
      if (l1 >= 0.0) cfg.fusion.l1 = l1;
      const DatasetSplit data = load_experiment_data(cfg);
      FusedModel model = load_fused(cfg.model_dir);
      const FusionResult r = fit_fusion(model, data, cfg.fusion);
      const EvalReport val = evaluate_fused(model, data.val, 0, 0);
      save_fusion(cfg.model_dir, model,
                  {{"l1", cfg.fusion.l1},
                   {"iterations", r.iterations},
                   {"objective", r.objective},
                   {"converged", r.converged},
                   {"profile_length", model.profile_length()},
                   {"config_hash", cfg.hash()}});
      std::cout << "fusion over " << model.profile_length() << " prototypes, " << r.iterations << " iterations";
      if (val.macro_auroc) std::cout << ", val macro-AUROC " << *val.macro_auroc;
      std::cout << '\n';
    } else if (*eval) {
      const ExperimentConfig cfg = config_for(config_path, checkpoint);
      const DatasetSplit data = load_experiment_data(cfg);
      FusedModel model = load_fused(checkpoint);
      const int n = resamples >= 0 ? resamples : cfg.eval_resamples;
      const auto& records = data.part(split_name);
      const EvalReport rep = baseline
                                 ? evaluate_branch_baseline(model, data, cfg.fusion, records, n, cfg.eval_seed)
                                 : evaluate_fused(model, records, n, cfg.eval_seed);
      write_text(out, rep.to_json().dump(1) + "\n");
      std::cout << rep.listing();
      auto show = [](const char* name, const std::optional<double>& v, const std::optional<Interval>& ci) {
        std::cout << name << ": " << (v ? std::to_string(*v) : std::string("undefined"));
        if (ci) std::cout << " (" << ci->lo << ", " << ci->hi << ")";
        std::cout << '\n';
      };
      show("macro-AUROC", rep.macro_auroc, rep.macro_ci);
      show("weighted AUROC", rep.weighted_auroc, rep.weighted_ci);
    } else if (*explain_cmd) {
      if (checkpoint.empty() && config_path.empty()) throw ConfigurationError("explain needs --checkpoint or --config");
      const fs::path model_dir = checkpoint.empty() ? ExperimentConfig::load(config_path).model_dir : fs::path(checkpoint);
      const ExperimentConfig cfg = config_for(config_path, model_dir);
      const DatasetSplit data = load_experiment_data(cfg);
      FusedModel model = load_fused(model_dir);
      const EcgRecord& rec = find_record(data, record_id);
      const Explanation ex = explain(model, rec, class_code, top);
      fs::create_directories(out);
      nlohmann::json j = ex.to_json();
      for (std::size_t i = 0; i < ex.entries.size(); ++i) {
        const auto& e = ex.entries[i];
        const std::string stem = "rank" + std::to_string(i + 1);
        char title[160];
        std::snprintf(title, sizeof title, "test %s - prototype %d (%s), similarity %.4f", rec.id.c_str(), e.prototype,
                      e.prototype_class.c_str(), e.similarity);
        render(rec, render_spec_for(e.kind, e.test_seconds, title), fs::path(out) / (stem + "_test.svg"));
        const EcgRecord& src = find_record(data, e.source.record_id);
        std::snprintf(title, sizeof title, "prototype %d (%s) - training record %s", e.prototype,
                      e.prototype_class.c_str(), src.id.c_str());
        render(src, render_spec_for(e.kind, e.source_seconds, title), fs::path(out) / (stem + "_prototype.svg"));
        j["prototypes"][i]["images"] = {stem + "_test.svg", stem + "_prototype.svg"};
        std::printf("%zu. prototype %d (%s, %s) similarity %.4f contribution %.4f source %s [%.4f, %.4f] s\n", i + 1,
                    e.prototype, e.prototype_class.c_str(), std::string(kind_name(e.kind)).c_str(), e.similarity,
                    e.contribution, e.source.record_id.c_str(), e.source_seconds.first, e.source_seconds.second);
      }
      write_text(fs::path(out) / "explanation.json", j.dump(1) + "\n");
    } else if (*serve) {
      std::vector<PrototypeBank> banks;
      for (const auto& f : bank_files) banks.push_back(PrototypeBank::load(f));
      std::sort(banks.begin(), banks.end(), [](const auto& a, const auto& b) { return a.kind < b.kind; });
      ReviewCatalog catalog = ReviewCatalog::from_banks(banks);
      std::map<std::string, SignalMatrix> sigs;
      if (!manifest.empty()) {
        const DatasetSplit d = load_dataset(manifest, signals);
        for (const auto& r : d.train) sigs.emplace(r.id, r.signal);
      }
      catalog.signal_lookup = [&sigs](const std::string& id) -> std::optional<SignalMatrix> {
        auto it = sigs.find(id);
        if (it == sigs.end()) return std::nullopt;
        return it->second;
      };
      ReviewStore store(log_path, static_cast<int>(catalog.entries.size()));
      ReviewServer server(std::move(catalog), store, page_size);
      const int bound = server.bind(host, port);
      g_server = &server;
      std::signal(SIGINT, [](int) {
        if (g_server) g_server->stop();
      });
      std::cout << "serving " << store.num_prototypes() << " prototypes on http://" << host << ':' << bound << '\n'
                << std::flush;
      server.run();
      g_server = nullptr;
    }
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
