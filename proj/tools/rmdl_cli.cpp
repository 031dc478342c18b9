// rmdl: dataset generation, scorer training, instance selection, head training,
// evaluation and report tables over synthetic slides.
//
// Exit codes: 0 success, 1 internal error, 2 configuration or usage error,
// 3 I/O error, 4 missing prerequisite.

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "rmdl/pipeline/pipeline.hpp"
#include "rmdl/train/report_io.hpp"

namespace fs = std::filesystem;
using namespace rmdl;

namespace {

enum Exit { kOk = 0, kInternal = 1, kConfig = 2, kIo = 3, kMissing = 4 };

class MissingPrerequisite : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

const PipelineConfig kDefaults{};

/// Command-line values; each one overrides the config only when given.
struct Flags {
  std::string config_path;
  std::uint64_t seed = kDefaults.seed;
  unsigned threads = kDefaults.threads;

  std::size_t slides = kDefaults.train_slides + kDefaults.test_slides;
  std::size_t test_slides = kDefaults.test_slides;

  std::size_t m_prime = kDefaults.selection.m_prime;
  double nms_thresh = kDefaults.selection.nms_overlap;
  std::uint32_t patch_extent = kDefaults.selection.patch_extent;

  std::string head = std::string(head_kind_name(kDefaults.head.kind));
  bool no_ir = false;
  bool no_lg = false;
  double lr = kDefaults.train.base_lr;
  double gamma = kDefaults.train.gamma;
  std::size_t period = kDefaults.train.period;
  std::size_t iters = kDefaults.train.total_iters;
  std::size_t batch = kDefaults.train.batch_size;
  double dropout = kDefaults.head.dropout_rate;
  double leaky = kDefaults.head.leaky_alpha;
};

struct Bound {
  std::vector<std::pair<CLI::Option*, std::function<void(PipelineConfig&)>>> overrides;
  CLI::Option* config = nullptr;
};

template <class T>
CLI::Option* bind_override(CLI::App* cmd, Bound& b, const std::string& name, T& slot, const std::string& help,
                           std::function<void(PipelineConfig&)> apply) {
  auto* opt = cmd->add_option(name, slot, help)->capture_default_str();
  b.overrides.emplace_back(opt, std::move(apply));
  return opt;
}

void add_common(CLI::App* cmd, Bound& b, Flags& f) {
  b.config = cmd->add_option("--config", f.config_path,
                             "JSON config; precedence is defaults < data-dir config.json < --config < flags");
  bind_override(cmd, b, "--seed", f.seed, "global seed; all stage seeds derive from it",
                [&f](PipelineConfig& c) { c.seed = f.seed; });
  bind_override(cmd, b, "--threads", f.threads, "worker threads (results do not depend on it)",
                [&f](PipelineConfig& c) { c.threads = f.threads; });
}

PipelineConfig resolve(const Bound& b, const Flags& f, const std::optional<fs::path>& data_dir) {
  PipelineConfig c;
  auto load = [&](const fs::path& p) {
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(read_file(p));
    } catch (const nlohmann::json::parse_error& e) {
      throw ConfigError(p.string() + ": " + e.what());
    }
    update_from_json(c, j);
  };
  if (data_dir && fs::exists(*data_dir / "config.json")) load(*data_dir / "config.json");
  if (!f.config_path.empty()) {
    if (!fs::exists(f.config_path)) throw ConfigError("config file not found: " + f.config_path);
    load(f.config_path);
  }
  for (const auto& [opt, apply] : b.overrides)
    if (opt->count() > 0) apply(c);
  c.apply_seed();
  c.validate();
  return c;
}

Dataset require_dataset(const fs::path& dir) {
  if (!fs::exists(dir / "manifest.json")) {
    throw MissingPrerequisite("no dataset in " + dir.string() + "; run 'rmdl generate --out " + dir.string() + "' first");
  }
  return read_dataset(dir);
}

std::string dump(const nlohmann::json& j) { return j.dump(2) + "\n"; }

// ---------------------------------------------------------------- commands

int cmd_generate(const PipelineConfig& c, const fs::path& out) {
  const auto ds = plan_dataset(c.generation, c.train_slides, c.test_slides);
  write_file_atomic(out / "config.json", dump(to_json(c)));
  write_dataset(out, ds);
  const auto counts = manifest_json(ds)["class_counts"];
  std::cout << "generated " << ds.slides.size() << " slides (" << c.train_slides << " train, " << c.test_slides
            << " test; normal " << counts["normal"] << ", dysplasia " << counts["dysplasia"] << ", cancer "
            << counts["cancer"] << ") in " << out.string() << "\n";
  return kOk;
}

int cmd_train_scorer(const PipelineConfig& c, const fs::path& data) {
  const auto ds = require_dataset(data);
  const auto slides = regenerate_split(ds, "train");
  if (slides.empty()) throw MissingPrerequisite("dataset has no training slides");
  const FeatureModel features(ds.generation);
  const auto model = train_patch_scorer(slides, features, c.scorer);
  const auto samples = annotated_samples(slides, features, c.scorer, derive_seed(c.scorer.train.seed, 1));
  write_file_atomic(data / "scorer.json", dump(to_json(model)));
  std::cout << "scorer trained on " << slides.size() << " slides; annotated-patch accuracy "
            << format_double(scorer_accuracy(model, samples)) << "\n";
  return kOk;
}

int cmd_select(const PipelineConfig& c, const fs::path& data, const std::string& scorer_path, bool oracle) {
  auto ds = require_dataset(data);
  const FeatureModel features(ds.generation);
  std::unique_ptr<PatchScorer> scorer;
  if (oracle) {
    scorer = std::make_unique<OracleScorer>();
  } else {
    const fs::path p = scorer_path.empty() ? data / "scorer.json" : fs::path(scorer_path);
    if (!fs::exists(p)) {
      throw MissingPrerequisite("no trained scorer at " + p.string() + "; run 'rmdl train-scorer --data " +
                                data.string() + "' or pass --oracle-scorer");
    }
    try {
      scorer = std::make_unique<ScorerModel>(scorer_from_json(nlohmann::json::parse(read_file(p))));
    } catch (const nlohmann::json::exception& e) {
      throw IoError(p.string() + ": " + e.what());
    }
  }
  const auto slides = regenerate_split(ds, "");
  ds.bags = select_bags(slides, *scorer, features, c.selection, c.tiling, c.threads);
  write_dataset(data, ds);
  std::cout << "selected " << ds.bags.size() << " bags of " << c.selection.bag_size() << " instances\n";
  return kOk;
}

int cmd_train(PipelineConfig c, const fs::path& data, const fs::path& out) {
  const auto ds = require_dataset(data);
  if (ds.bags.empty()) throw MissingPrerequisite("dataset has no bags; run 'rmdl select --data " + data.string() + "'");
  const auto bags = bags_of_split(ds, "train");
  if (bags.empty()) throw MissingPrerequisite("dataset has no training bags");
  c.head.feature_dim = bags.front().dim();
  Rng init(c.head_init_seed());
  auto result = train_head(bags, Head(c.head, init), c.train);
  write_file_atomic(out / "model.json", dump(to_json(result.head)));
  write_file_atomic(out / "loss.csv", loss_csv(result.curve));
  std::cout << "trained " << c.head.label() << " for " << c.train.total_iters << " iterations; final loss "
            << format_double(result.curve.back().loss) << "\n";
  return kOk;
}

int cmd_eval(const PipelineConfig& c, const fs::path& model_path, const fs::path& data, const std::string& split,
             const fs::path& out) {
  if (!fs::exists(model_path)) throw MissingPrerequisite("no model at " + model_path.string() + "; run 'rmdl train'");
  Head head = [&] {
    try {
      return head_from_json(nlohmann::json::parse(read_file(model_path)));
    } catch (const nlohmann::json::exception& e) {
      throw IoError(model_path.string() + ": " + e.what());
    }
  }();
  const auto ds = require_dataset(data);
  if (ds.bags.empty()) throw MissingPrerequisite("dataset has no bags; run 'rmdl select --data " + data.string() + "'");
  const auto bags = bags_of_split(ds, split);
  if (bags.empty()) throw MissingPrerequisite("dataset has no '" + split + "' bags");
  const auto report = evaluate(head, bags, c.threads);
  write_eval_report(out, report);
  std::cout << report.model << " on " << bags.size() << " " << split << " slides: accuracy "
            << format_double(report.accuracy) << ", average score " << format_double(report.avg_score) << "\n";
  return kOk;
}

int cmd_report(const std::vector<std::string>& inputs, const std::string& out) {
  std::vector<std::pair<std::string, EvalReport>> named;
  for (const auto& in : inputs) {
    fs::path p(in);
    if (fs::is_directory(p)) p /= "report.json";
    if (!fs::exists(p)) throw MissingPrerequisite("no report at " + p.string() + "; run 'rmdl eval'");
    try {
      named.emplace_back(in, eval_report_from_json(nlohmann::json::parse(read_file(p))));
    } catch (const nlohmann::json::exception& e) {
      throw IoError(p.string() + ": " + e.what());
    }
  }
  const auto table = render_report_table(std::move(named));
  if (out.empty()) {
    std::cout << table;
  } else {
    write_file_atomic(out, table);
  }
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Recalibrated multi-instance learning on synthetic whole-slide data"};
  app.require_subcommand(1);
  app.set_version_flag("--version", "rmdl 1.0");

  Flags f;
  std::string data_dir, out_dir, scorer_path, model_path, split = "test", report_out;
  std::vector<std::string> report_inputs;
  bool oracle = false;

  Bound gen_b, sc_b, sel_b, train_b, eval_b;

  auto* gen = app.add_subcommand("generate", "write a synthetic dataset manifest and its resolved config");
  add_common(gen, gen_b, f);
  gen->add_option("--out", out_dir, "dataset directory")->required();
  auto* test_opt = bind_override(gen, gen_b, "--test-slides", f.test_slides,
                                 "test slides (default with --slides: one third)",
                                 [&f](PipelineConfig& c) { c.test_slides = f.test_slides; });
  bind_override(gen, gen_b, "--slides", f.slides, "total slides; the last --test-slides of them form the test split",
                [&f, test_opt](PipelineConfig& c) {
                  const std::size_t test = test_opt->count() > 0 ? f.test_slides : f.slides / 3;
                  if (test > f.slides) throw ConfigError("--test-slides exceeds --slides");
                  c.test_slides = test;
                  c.train_slides = f.slides - test;
                });

  auto* sc = app.add_subcommand("train-scorer", "train the patch scorer on the training slides");
  add_common(sc, sc_b, f);
  sc->add_option("--data", data_dir, "dataset directory")->required();

  auto* sel = app.add_subcommand("select", "build instance bags from stitched probability maps");
  add_common(sel, sel_b, f);
  sel->add_option("--data", data_dir, "dataset directory")->required();
  sel->add_option("--scorer", scorer_path, "scorer model (default <data>/scorer.json)");
  sel->add_flag("--oracle-scorer", oracle, "score cells by their true grade instead of a trained scorer");
  bind_override(sel, sel_b, "--m-prime", f.m_prime, "instances kept per grade channel (bag size 3m')",
                [&f](PipelineConfig& c) { c.selection.m_prime = f.m_prime; });
  bind_override(sel, sel_b, "--nms-thresh", f.nms_thresh, "NMS overlap above which a candidate is discarded",
                [&f](PipelineConfig& c) { c.selection.nms_overlap = f.nms_thresh; });
  bind_override(sel, sel_b, "--patch-extent", f.patch_extent, "patch side in cells for the NMS overlap",
                [&f](PipelineConfig& c) { c.selection.patch_extent = f.patch_extent; });

  auto* tr = app.add_subcommand("train", "train a bag-level head on the training bags");
  add_common(tr, train_b, f);
  tr->add_option("--data", data_dir, "dataset directory with bags")->required();
  tr->add_option("--out", out_dir, "output directory for model.json and loss.csv")->required();
  bind_override(tr, train_b, "--head", f.head, "rmdl, mean, max or attention",
                [&f](PipelineConfig& c) { c.head.kind = head_kind_from_name(f.head); });
  train_b.overrides.emplace_back(tr->add_flag("--no-ir", f.no_ir, "disable instance recalibration"),
                                 [](PipelineConfig& c) { c.head.instance_recalibration = false; });
  train_b.overrides.emplace_back(tr->add_flag("--no-lg", f.no_lg, "disable local-global fusion"),
                                 [](PipelineConfig& c) { c.head.local_global = false; });
  bind_override(tr, train_b, "--lr", f.lr, "Adam base learning rate",
                [&f](PipelineConfig& c) { c.train.base_lr = f.lr; });
  bind_override(tr, train_b, "--gamma", f.gamma, "learning-rate decay factor",
                [&f](PipelineConfig& c) { c.train.gamma = f.gamma; });
  bind_override(tr, train_b, "--period", f.period, "iterations per decay step",
                [&f](PipelineConfig& c) { c.train.period = f.period; });
  bind_override(tr, train_b, "--iters", f.iters, "training iterations",
                [&f](PipelineConfig& c) { c.train.total_iters = f.iters; });
  bind_override(tr, train_b, "--batch", f.batch, "bags per batch",
                [&f](PipelineConfig& c) { c.train.batch_size = f.batch; });
  bind_override(tr, train_b, "--dropout", f.dropout, "dropout rate after fc1 and fc2",
                [&f](PipelineConfig& c) { c.head.dropout_rate = f.dropout; });
  bind_override(tr, train_b, "--leaky", f.leaky, "leaky ReLU slope",
                [&f](PipelineConfig& c) { c.head.leaky_alpha = f.leaky; });

  auto* ev = app.add_subcommand("eval", "evaluate a trained head and write the report files");
  add_common(ev, eval_b, f);
  ev->add_option("--model", model_path, "model.json from 'rmdl train'")->required();
  ev->add_option("--bags", data_dir, "dataset directory with bags")->required();
  ev->add_option("--split", split, "split to evaluate")->capture_default_str();
  ev->add_option("--out", out_dir, "output directory for the report files")->required();

  auto* rep = app.add_subcommand("report", "render report.json files (or eval directories) as a markdown table");
  rep->add_option("reports", report_inputs, "report.json files or eval output directories")->required();
  rep->add_option("--out", report_out, "write the table here instead of stdout");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kConfig;
  }

  try {
    if (*gen) return cmd_generate(resolve(gen_b, f, std::nullopt), out_dir);
    if (*sc) return cmd_train_scorer(resolve(sc_b, f, fs::path(data_dir)), data_dir);
    if (*sel) return cmd_select(resolve(sel_b, f, fs::path(data_dir)), data_dir, scorer_path, oracle);
    if (*tr) return cmd_train(resolve(train_b, f, fs::path(data_dir)), data_dir, out_dir);
    if (*ev) return cmd_eval(resolve(eval_b, f, fs::path(data_dir)), model_path, data_dir, split, out_dir);
    if (*rep) return cmd_report(report_inputs, report_out);
  } catch (const ConfigError& e) {
    std::cerr << "rmdl: config error: " << e.what() << "\n";
    return kConfig;
  } catch (const MissingPrerequisite& e) {
    std::cerr << "rmdl: missing prerequisite: " << e.what() << "\n";
    return kMissing;
  } catch (const IoError& e) {
    std::cerr << "rmdl: I/O error: " << e.what() << "\n";
    return kIo;
  } catch (const BagFormatError& e) {
    std::cerr << "rmdl: I/O error: " << e.what() << "\n";
    return kIo;
  } catch (const fs::filesystem_error& e) {
    std::cerr << "rmdl: I/O error: " << e.what() << "\n";
    return kIo;
  } catch (const std::exception& e) {
    std::cerr << "rmdl: error: " << e.what() << "\n";
    return kInternal;
  }
  return kInternal;
}
