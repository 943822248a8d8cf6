#include "pvc/cli.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <ostream>
#include <sstream>

#include <CLI11.hpp>
#include <fmt/format.h>
#include <json.hpp>

#include "pvc/battery.hpp"
#include "pvc/bench.hpp"
#include "pvc/train.hpp"

namespace pvc {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct Globals {
  std::uint64_t seed = 1;
  std::string config;
  std::string out = "pvc_out";
};

struct DataOptions {
  std::string synthetic;
  std::string data;
  std::size_t n = 512;
  std::size_t num_classes = 2;
};

struct TrainOptions {
  DataOptions data;
  std::string val_data;
  std::size_t train_count = 64;
  std::size_t val_count = 16;
  std::size_t epochs = 30;
  std::size_t batch_size = 4;
  double lr = 1e-3;
  std::string devox = "trilinear";
  std::size_t voxel_convs = 2;
  std::string preset = "desk";
  double width = 0.0;
  double resolution_multiplier = 1.0;
};

struct EvalOptions {
  DataOptions data;
  std::string checkpoint;
  std::string split = "val";
  std::size_t train_count = 64;
  std::size_t val_count = 16;
};

struct GradcheckOptions {
  std::string op;
  double tol = 1e-4;
  double eps = 1e-5;
};

struct AnalyzeOptions {
  std::string cloud;
  std::string synthetic = "uniform_cube";
  std::size_t n = 2048;
  std::string resolutions = "2,4,8,16,32,64,128,256";
  std::size_t channels = 1;
  std::size_t scalar_bytes = 4;
};

struct BenchOptions {
  std::size_t n = 2048;
  std::size_t k = 16;
  std::size_t c = 3;
  std::size_t r = 32;
};

void write_file(const fs::path& path, const std::string& text) {
  fs::create_directories(path.parent_path());
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot write " + path.string());
  f << text;
}

std::vector<PointCloud> load_directory(const std::string& dir) {
  if (!fs::is_directory(dir)) throw UsageError("dataset directory '" + dir + "' does not exist");
  std::vector<fs::path> files;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (entry.is_regular_file() && entry.path().extension() == ".pvc") files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end());
  if (files.empty()) throw UsageError("no .pvc clouds in '" + dir + "'");
  std::vector<PointCloud> clouds;
  for (const auto& f : files) clouds.push_back(load_cloud(f));
  return clouds;
}

Generator generator_or_usage(const std::string& name) {
  try {
    return parse_generator(name);
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
}

std::vector<std::size_t> parse_resolutions(const std::string& text) {
  std::vector<std::size_t> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    std::size_t pos = 0;
    long long v = 0;
    try {
      v = std::stoll(item, &pos);
    } catch (const std::exception&) {
      throw UsageError("bad resolution '" + item + "'");
    }
    if (pos != item.size() || v < 1) throw UsageError("bad resolution '" + item + "'");
    out.push_back(static_cast<std::size_t>(v));
  }
  if (out.empty()) throw UsageError("empty resolution list");
  return out;
}

void add_data_options(CLI::App* cmd, DataOptions& d) {
  cmd->add_option("--synthetic", d.synthetic, "Synthetic generator: uniform_cube, two_part_shape, multi_primitive");
  cmd->add_option("--data", d.data, "Directory of .pvc clouds");
  cmd->add_option("--n", d.n, "Points per synthetic cloud");
  cmd->add_option("--num-classes", d.num_classes, "Number of part classes");
}

json data_json(const DataOptions& d) {
  return {{"synthetic", d.synthetic}, {"data", d.data}, {"n", d.n}, {"num-classes", d.num_classes}};
}

// Fills options the command line left unset from a flat JSON object keyed by
// long flag names.
void apply_config_file(const std::string& path, CLI::App& app, CLI::App* cmd) {
  std::ifstream f(path);
  if (!f) throw UsageError("cannot read config file '" + path + "'");
  json j;
  try {
    j = json::parse(f);
  } catch (const json::parse_error& e) {
    throw UsageError(fmt::format("config file '{}': {}", path, e.what()));
  }
  if (!j.is_object()) throw UsageError("config file must hold a JSON object");
  for (const auto& [key, value] : j.items()) {
    if (key == "config") throw UsageError("config file cannot name another config file");
    CLI::Option* opt = cmd->get_option_no_throw("--" + key);
    if (!opt) opt = app.get_option_no_throw("--" + key);
    if (!opt) throw UsageError(fmt::format("unknown config key '{}' for command '{}'", key, cmd->get_name()));
    if (opt->count() > 0) continue;
    std::string text;
    if (value.is_string()) {
      text = value.get<std::string>();
    } else if (value.is_array()) {
      for (const auto& v : value) text += (text.empty() ? "" : ",") + (v.is_string() ? v.get<std::string>() : v.dump());
    } else {
      text = value.dump();
    }
    try {
      opt->add_result(text);
      opt->run_callback();
    } catch (const CLI::Error& e) {
      throw UsageError(fmt::format("config key '{}': {}", key, e.what()));
    }
  }
}

void echo_config(const std::string& command, json resolved, const Globals& g, std::ostream& err) {
  resolved["seed"] = g.seed;
  resolved["out"] = g.out;
  const std::string text = resolved.dump(2) + "\n";
  err << "resolved config (" << command << "):\n" << text;
  write_file(fs::path(g.out) / (command + ".config.json"), text);
}

struct Datasets {
  std::vector<PointCloud> train;
  std::vector<PointCloud> val;
};

Datasets synthetic_datasets(const DataOptions& d, std::size_t train_count, std::size_t val_count,
                            std::uint64_t seed) {
  const Generator gen = generator_or_usage(d.synthetic);
  if (gen == Generator::uniform_cube) throw UsageError("uniform_cube clouds carry no labels");
  return {generate_dataset(gen, train_count, d.n, seed, d.num_classes),
          generate_dataset(gen, val_count, d.n, validation_seed(seed), d.num_classes)};
}

int cmd_train(const TrainOptions& o, const Globals& g, std::ostream& out, std::ostream& err) {
  Datasets sets;
  if (!o.data.synthetic.empty()) {
    if (!o.data.data.empty()) throw UsageError("pass either --synthetic or --data, not both");
    sets = synthetic_datasets(o.data, o.train_count, o.val_count, g.seed);
  } else if (!o.data.data.empty()) {
    sets.train = load_directory(o.data.data);
    sets.val = o.val_data.empty() ? sets.train : load_directory(o.val_data);
  } else {
    throw UsageError("train needs --synthetic <generator> or --data <dir>");
  }

  PVCNNConfig cfg;
  if (o.preset == "desk") {
    cfg = PVCNNConfig::desk(o.data.num_classes);
  } else if (o.preset == "toy") {
    cfg = PVCNNConfig::toy(0.125, o.resolution_multiplier, o.data.num_classes);
  } else {
    throw UsageError("unknown preset '" + o.preset + "' (expected desk or toy)");
  }
  if (o.width > 0.0) cfg.width_multiplier = o.width;
  cfg.resolution_multiplier = o.resolution_multiplier;
  cfg.in_channels = sets.train.front().channels();

  TrainConfig tc;
  tc.epochs = o.epochs;
  tc.batch_size = o.batch_size;
  tc.lr = o.lr;
  tc.seed = g.seed;
  tc.voxel_convs_per_block = o.voxel_convs;
  try {
    tc.devox_mode = parse_devox_mode(o.devox);
    tc.validate();
    cfg.devox_mode = tc.devox_mode;
    cfg.voxel_convs_per_block = tc.voxel_convs_per_block;
    cfg.validate();
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }

  const fs::path dir(g.out);
  std::string log_text;
  const TrainResult result = train(cfg, sets.train, sets.val, tc, [&](const EpochLog& e) {
    out << to_jsonl(e) << "\n";
    log_text += to_jsonl(e) + "\n";
  });
  write_file(dir / "metrics.jsonl", log_text);
  write_file(dir / "model.config.json", json(result.params.config).dump(2) + "\n");
  save_parameters(dir / "model", result.params.named_tensors());
  err << "checkpoint written to " << (dir / "model").string() << ".{bin,json}\n";
  return kExitOk;
}

ModelParams<float> load_checkpoint(const fs::path& dir) {
  std::ifstream f(dir / "model.config.json");
  if (!f) throw CheckpointError("missing " + (dir / "model.config.json").string());
  PVCNNConfig cfg;
  try {
    cfg = json::parse(f).get<PVCNNConfig>();
    cfg.validate();
  } catch (const json::exception& e) {
    throw CheckpointError(std::string("model config: ") + e.what());
  }
  auto params = build_pvcnn<float>(cfg, 0);
  params.assign(load_parameters<float>(dir / "model"));
  return params;
}

int cmd_eval(const EvalOptions& o, const Globals& g, std::ostream& out) {
  if (o.checkpoint.empty()) throw UsageError("eval needs --checkpoint <dir>");
  const ModelParams<float> params = load_checkpoint(o.checkpoint);
  DataOptions d = o.data;
  if (d.num_classes != params.config.num_classes) d.num_classes = params.config.num_classes;
  std::vector<PointCloud> clouds;
  if (!d.synthetic.empty()) {
    if (o.split != "train" && o.split != "val") throw UsageError("--split must be train or val");
    Datasets sets = synthetic_datasets(d, o.train_count, o.val_count, g.seed);
    clouds = o.split == "train" ? std::move(sets.train) : std::move(sets.val);
  } else if (!d.data.empty()) {
    clouds = load_directory(d.data);
  } else {
    throw UsageError("eval needs --synthetic <generator> or --data <dir>");
  }
  for (const auto& pc : clouds) {
    if (pc.channels() != params.config.in_channels) {
      throw UsageError(fmt::format("clouds have {} feature channels, checkpoint expects {}", pc.channels(),
                                   params.config.in_channels));
    }
  }
  Evaluation ev;
  try {
    ev = evaluate(params, clouds);
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
  json report = ev.iou;
  report["accuracy"] = ev.accuracy;
  const std::string text = report.dump(2) + "\n";
  out << text;
  write_file(fs::path(g.out) / "eval.json", text);
  return kExitOk;
}

int cmd_gradcheck(const GradcheckOptions& o, const Globals& g, std::ostream& out, std::ostream& err) {
  GradCheckOptions opts;
  opts.tolerance = o.tol;
  opts.epsilon = o.eps;
  opts.seed = g.seed;
  std::vector<GradCheckReport> reports;
  try {
    reports = run_gradcheck_battery(opts, o.op);
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
  out << fmt::format("{:<22} {:>12} {:>12} {:>10}  {}\n", "op", "max_abs_err", "max_rel_err", "epsilon", "result");
  json rows = json::array();
  std::vector<std::string> failing;
  for (const auto& r : reports) {
    out << fmt::format("{:<22} {:>12.3e} {:>12.3e} {:>10.1e}  {}\n", r.op_name, r.max_abs_err, r.max_rel_err,
                       r.epsilon, r.passed ? "pass" : "FAIL");
    rows.push_back({{"op_name", r.op_name},
                    {"max_abs_err", r.max_abs_err},
                    {"max_rel_err", r.max_rel_err},
                    {"epsilon", r.epsilon},
                    {"tolerance", r.tolerance},
                    {"passed", r.passed}});
    if (!r.passed) failing.push_back(r.op_name);
  }
  write_file(fs::path(g.out) / "gradcheck.json", rows.dump(2) + "\n");
  if (!failing.empty()) {
    err << fmt::format("gradcheck failed for: {}\n", fmt::join(failing, ", "));
    return kExitVerificationFailed;
  }
  return kExitOk;
}

int cmd_voxel_analyze(const AnalyzeOptions& o, const Globals& g, std::ostream& out) {
  const auto resolutions = parse_resolutions(o.resolutions);
  if (o.channels == 0 || o.scalar_bytes == 0) throw UsageError("--channels and --scalar-bytes must be positive");
  PointCloud pc;
  if (!o.cloud.empty()) {
    if (!fs::exists(o.cloud)) throw UsageError("cloud file '" + o.cloud + "' does not exist");
    pc = load_cloud(o.cloud);
  } else {
    if (o.n == 0) throw UsageError("--n must be positive");
    pc = generate_synthetic({generator_or_usage(o.synthetic), o.n, g.seed, 2});
  }
  const SweepReport report = sweep_distinguishable(normalize(pc), resolutions, o.channels, o.scalar_bytes);
  const std::string csv = to_csv(report);
  out << csv;
  write_file(fs::path(g.out) / "distinguishable.csv", csv);
  write_file(fs::path(g.out) / "distinguishable.json", to_json(report).dump(2) + "\n");
  return kExitOk;
}

int cmd_bench(const BenchOptions& o, const Globals& g, std::ostream& out) {
  if (o.n == 0 || o.k == 0 || o.c == 0 || o.r == 0) throw UsageError("--n, --k, --c and --r must be positive");
  if (o.k > o.n) throw UsageError(fmt::format("k = {} exceeds n = {}", o.k, o.n));
  const Comparison cmp = bench_compare(o.n, o.k, o.c, o.r, g.seed);
  const std::string csv = to_csv(cmp.report);
  out << csv;
  out << fmt::format("gather/scatter ratio {:.4f}, indexed access ratio {:.4f}\n", cmp.gather_per_scatter_ratio(),
                     cmp.indexed_access_ratio());
  write_file(fs::path(g.out) / "bench.csv", csv);
  write_file(fs::path(g.out) / "bench.json", to_json(cmp).dump(2) + "\n");
  return kExitOk;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Point-voxel convolution toolkit", "pvc"};
  app.require_subcommand(1);
  app.fallthrough();

  Globals g;
  app.add_option("--seed", g.seed, "Random seed");
  app.add_option("--config", g.config, "JSON file of option values; command-line flags take precedence");
  app.add_option("--out", g.out, "Output directory");

  TrainOptions train_o;
  auto* train_cmd = app.add_subcommand("train", "Train a PVCNN segmentation model");
  add_data_options(train_cmd, train_o.data);
  train_cmd->add_option("--val-data", train_o.val_data, "Directory of validation clouds (default: --data)");
  train_cmd->add_option("--train-count", train_o.train_count, "Synthetic training clouds");
  train_cmd->add_option("--val-count", train_o.val_count, "Synthetic validation clouds");
  train_cmd->add_option("--epochs", train_o.epochs, "Training epochs");
  train_cmd->add_option("--batch-size", train_o.batch_size, "Clouds per optimizer step");
  train_cmd->add_option("--lr", train_o.lr, "Adam learning rate");
  train_cmd->add_option("--devox", train_o.devox, "Devoxelization: trilinear or nearest");
  train_cmd->add_option("--voxel-convs", train_o.voxel_convs, "Voxel convolutions per block (1-3)");
  train_cmd->add_option("--preset", train_o.preset, "Network preset: desk or toy");
  train_cmd->add_option("--width", train_o.width, "Width multiplier (default: preset value)");
  train_cmd->add_option("--resolution-multiplier", train_o.resolution_multiplier, "Resolution multiplier");

  EvalOptions eval_o;
  auto* eval_cmd = app.add_subcommand("eval", "Report part-averaged IoU of a checkpoint");
  add_data_options(eval_cmd, eval_o.data);
  eval_cmd->add_option("--checkpoint", eval_o.checkpoint, "Directory written by train");
  eval_cmd->add_option("--split", eval_o.split, "Synthetic split: train or val");
  eval_cmd->add_option("--train-count", eval_o.train_count, "Synthetic training clouds");
  eval_cmd->add_option("--val-count", eval_o.val_count, "Synthetic validation clouds");

  GradcheckOptions grad_o;
  auto* grad_cmd = app.add_subcommand("gradcheck", "Finite-difference check of every backward pass");
  grad_cmd->add_option("--op", grad_o.op, "Run a single op group");
  grad_cmd->add_option("--tol", grad_o.tol, "Relative error tolerance");
  grad_cmd->add_option("--eps", grad_o.eps, "Finite-difference step");

  AnalyzeOptions an_o;
  auto* an_cmd = app.add_subcommand("voxel-analyze", "Distinguishable points over voxel resolutions");
  an_cmd->add_option("--cloud", an_o.cloud, "Cloud file (default: synthetic)");
  an_cmd->add_option("--synthetic", an_o.synthetic, "Synthetic generator");
  an_cmd->add_option("--n", an_o.n, "Points in the synthetic cloud");
  an_cmd->add_option("--resolutions", an_o.resolutions, "Comma-separated resolutions");
  an_cmd->add_option("--channels", an_o.channels, "Channels for the memory estimate");
  an_cmd->add_option("--scalar-bytes", an_o.scalar_bytes, "Bytes per scalar for the memory estimate");

  BenchOptions bench_o;
  auto* bench_cmd = app.add_subcommand("bench", "Count indexed accesses of KNN and voxel pipelines");
  bench_cmd->add_option("--n", bench_o.n, "Points");
  bench_cmd->add_option("--k", bench_o.k, "Neighbours");
  bench_cmd->add_option("--c", bench_o.c, "Feature channels");
  bench_cmd->add_option("--r", bench_o.r, "Voxel resolution");

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    const auto subs = app.get_subcommands();
    out << (subs.empty() ? app.help() : subs.front()->help());
    return kExitOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  }

  CLI::App* cmd = app.get_subcommands().front();
  const std::string name = cmd->get_name();
  try {
    if (!g.config.empty()) apply_config_file(g.config, app, cmd);
    if (name == "train") {
      json echo = data_json(train_o.data);
      if (train_o.width <= 0.0) train_o.width = train_o.preset == "toy" ? 0.125 : 1.0;
      echo.update({{"val-data", train_o.val_data},
                   {"train-count", train_o.train_count},
                   {"val-count", train_o.val_count},
                   {"epochs", train_o.epochs},
                   {"batch-size", train_o.batch_size},
                   {"lr", train_o.lr},
                   {"devox", train_o.devox},
                   {"voxel-convs", train_o.voxel_convs},
                   {"preset", train_o.preset},
                   {"width", train_o.width},
                   {"resolution-multiplier", train_o.resolution_multiplier}});
      echo_config(name, echo, g, err);
      return cmd_train(train_o, g, out, err);
    }
    if (name == "eval") {
      json echo = data_json(eval_o.data);
      echo.update({{"checkpoint", eval_o.checkpoint},
                   {"split", eval_o.split},
                   {"train-count", eval_o.train_count},
                   {"val-count", eval_o.val_count}});
      echo_config(name, echo, g, err);
      return cmd_eval(eval_o, g, out);
    }
    if (name == "gradcheck") {
      echo_config(name, {{"op", grad_o.op}, {"tol", grad_o.tol}, {"eps", grad_o.eps}}, g, err);
      return cmd_gradcheck(grad_o, g, out, err);
    }
    if (name == "voxel-analyze") {
      echo_config(name,
                  {{"cloud", an_o.cloud},
                   {"synthetic", an_o.synthetic},
                   {"n", an_o.n},
                   {"resolutions", an_o.resolutions},
                   {"channels", an_o.channels},
                   {"scalar-bytes", an_o.scalar_bytes}},
                  g, err);
      return cmd_voxel_analyze(an_o, g, out);
    }
    echo_config(name, {{"n", bench_o.n}, {"k", bench_o.k}, {"c", bench_o.c}, {"r", bench_o.r}}, g, err);
    return cmd_bench(bench_o, g, out);
  } catch (const UsageError& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const NumericalError& e) {
    err << "numerical failure: " << e.what() << "\n";
    return kExitNumerical;
  } catch (const CheckpointError& e) {
    err << "checkpoint error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const FormatError& e) {
    err << "input error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::invalid_argument& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  }
}

}  // namespace pvc
