// acnlab: experiment runner for long-connection, residual and feedforward
// networks. Every subcommand writes CSV files, summary.json and a checksummed
// manifest.json into its output directory.

#include <chrono>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "acn/chain.hpp"
#include "acn/error.hpp"
#include "acn/experiment.hpp"

namespace {

using nlohmann::json;

constexpr int kExitOk = 0;
constexpr int kExitConfig = 1;
constexpr int kExitRuntime = 2;

// Flags shared by the training experiments.
struct RunFlags {
  std::string config;
  std::string preset;
  std::string arch;
  std::string seeds;
  std::optional<std::uint64_t> seed;
  std::optional<int> epochs;
  std::string out;
};

void add_run_flags(CLI::App* cmd, RunFlags& f) {
  cmd->add_option("--config", f.config, "JSON run config")->check(CLI::ExistingFile);
  cmd->add_option("--preset", f.preset, "desk-mixer, desk-dense or paper-mixer");
  cmd->add_option("--arch", f.arch, "comma-separated: acn, residual, ffn, acn-dgonly; append -dirac for (I + W) blocks");
  cmd->add_option("--seeds", f.seeds, "comma-separated seeds");
  cmd->add_option("--seed", f.seed, "single seed");
  cmd->add_option("--epochs", f.epochs, "training epochs (per task for continual)");
  cmd->add_option("--out", f.out, "output directory");
}

json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw acn::ConfigError("cannot open config " + path);
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw acn::ConfigError(path + ": " + e.what());
  }
}

std::vector<std::uint64_t> parse_seed_list(const std::string& s) {
  std::vector<std::uint64_t> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      std::size_t used = 0;
      out.push_back(std::stoull(item, &used));
      if (used != item.size()) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      throw acn::ConfigError("--seeds: '" + item + "' is not a seed");
    }
  }
  if (out.empty()) throw acn::ConfigError("--seeds: empty list");
  return out;
}

acn::RunConfig resolve(const RunFlags& f, json& j) {
  if (!f.preset.empty()) j["preset"] = f.preset;
  if (f.epochs) j["train"]["epochs"] = *f.epochs;
  if (!f.seeds.empty()) j["seeds"] = parse_seed_list(f.seeds);
  if (f.seed) j["seeds"] = {*f.seed};
  if (!f.arch.empty()) {
    json archs = json::array();
    for (const auto& a : acn::parse_arch_list(f.arch)) archs.push_back(a.name);
    j["archs"] = archs;
  }
  return acn::parse_config(j);
}

json base_config(const RunFlags& f) { return f.config.empty() ? json::object() : read_json_file(f.config); }

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

void finish(const acn::Emitted& e, std::string_view experiment, const acn::RunConfig& cfg, const std::string& out,
            std::chrono::steady_clock::time_point t0) {
  const std::string dir = out.empty() ? "runs/" + std::string(experiment) : out;
  const json manifest = acn::emit_reports(e, experiment, cfg, dir, seconds_since(t0));
  std::cout << e.summary.dump(2) << '\n';
  std::cout << "wrote " << manifest.at("files").size() + 1 << " files to " << dir << " (config "
            << manifest.at("config_hash").get<std::string>() << ")\n";
}

int run_experiment_cmd(std::string_view experiment, const RunFlags& f) {
  const auto t0 = std::chrono::steady_clock::now();
  json j = base_config(f);
  const acn::RunConfig cfg = resolve(f, j);
  std::vector<acn::ArchVariant> archs;
  for (const auto& a : cfg.archs) archs.push_back(acn::parse_arch_variant(a));
  finish(acn::run_experiment(experiment, cfg, archs), experiment, cfg, f.out, t0);
  return kExitOk;
}

struct ToyFlags {
  std::string config;
  std::optional<int> runs, epochs, layers;
  std::optional<std::uint64_t> seed;
  std::optional<double> lr;
  std::string init;
  std::string out;
};

int run_toy(const ToyFlags& f) {
  const auto t0 = std::chrono::steady_clock::now();
  json j = f.config.empty() ? json::object() : read_json_file(f.config);
  if (f.runs) j["toy"]["runs"] = *f.runs;
  if (f.epochs) j["toy"]["epochs"] = *f.epochs;
  if (f.layers) j["toy"]["layers"] = *f.layers;
  if (f.seed) j["toy"]["seed"] = *f.seed;
  if (f.lr) j["toy"]["lr"] = *f.lr;
  if (!f.init.empty()) j["toy"]["init"] = f.init;
  const acn::RunConfig cfg = acn::parse_config(j);
  finish(acn::run_experiment("toy1d", cfg, {}), "toy1d", cfg, f.out, t0);
  return kExitOk;
}

int run_paths(int depth, int layer, const std::string& out) {
  namespace chain = acn::chain;
  if (depth < 1 || depth > chain::kMaxEnumerationSpan || layer < 1 || layer > depth)
    throw acn::ConfigError("paths: need 1 <= i <= L <= " + std::to_string(chain::kMaxEnumerationSpan));
  const auto t0 = std::chrono::steady_clock::now();
  const std::size_t ffn = chain::enumerate_backward_paths(chain::Arch::FFN, depth, layer).size();
  const std::size_t acn_paths = chain::enumerate_backward_paths(chain::Arch::ACN, depth, layer).size();
  const std::size_t res = chain::enumerate_backward_paths(chain::Arch::ResNet, depth, layer).size();
  const auto inc = chain::path_set_inclusion(depth, layer);
  std::printf("backward paths to layer %d of %d\n", layer, depth);
  std::printf("  ffn       %zu\n  acn       %zu\n  residual  %zu\n", ffn, acn_paths, res);
  std::printf("inclusion: ffn %s acn %s residual\n", inc.ffn_acn_strict ? "<" : (inc.ffn_in_acn ? "=" : "!"),
              inc.acn_resnet_strict ? "<" : (inc.acn_in_resnet ? "=" : "!"));
  const std::string note = "residual count is 2^(L-i) = " + std::to_string(res) +
                           " by enumeration; a quoted figure of 127 for L=12, i=2 does not match it";
  std::printf("note: %s\n", note.c_str());
  if (!out.empty()) {
    acn::Emitted e;
    e.files["paths.csv"] = acn::paths_table_csv(std::max(depth, 1));
    e.summary = {{"L", depth},
                 {"i", layer},
                 {"ffn", ffn},
                 {"acn", acn_paths},
                 {"residual", res},
                 {"ffn_in_acn", inc.ffn_in_acn},
                 {"acn_in_residual", inc.acn_in_resnet},
                 {"note", note}};
    acn::RunConfig cfg;
    const json manifest = acn::emit_reports(e, "paths", cfg, out, seconds_since(t0));
    std::printf("wrote %zu files to %s\n", manifest.at("files").size() + 1, out.c_str());
  }
  return kExitOk;
}

int run_report(const std::vector<std::string>& dirs, const std::string& out) {
  std::vector<std::filesystem::path> paths(dirs.begin(), dirs.end());
  const json report = acn::aggregate_reports(paths);
  if (out.empty()) {
    std::cout << report.dump(2) << '\n';
    return kExitOk;
  }
  std::ofstream os(out);
  if (!os || !(os << report.dump(2) << '\n')) throw acn::IoError("cannot write " + out);
  std::cout << "wrote " << out << '\n';
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"acnlab: long-connection network experiments"};
  app.require_subcommand(1);

  ToyFlags toy;
  auto* toy_cmd = app.add_subcommand("toy1d", "three-weight linear chains fit to y = 2x");
  toy_cmd->add_option("--config", toy.config, "JSON run config")->check(CLI::ExistingFile);
  toy_cmd->add_option("--runs", toy.runs, "independent runs");
  toy_cmd->add_option("--epochs", toy.epochs, "full-batch steps per run");
  toy_cmd->add_option("--layers", toy.layers, "chain depth");
  toy_cmd->add_option("--seed", toy.seed, "base seed");
  toy_cmd->add_option("--lr", toy.lr, "step size");
  toy_cmd->add_option("--init", toy.init, "uniform or normal");
  toy_cmd->add_option("--out", toy.out, "output directory");

  int depth = 12, layer = 2;
  std::string paths_out;
  auto* paths_cmd = app.add_subcommand("paths", "backward path counts and inclusion");
  paths_cmd->add_option("--L", depth, "network depth");
  paths_cmd->add_option("--i", layer, "layer index");
  paths_cmd->add_option("--out", paths_out, "also write the full table up to L");

  const std::vector<std::pair<std::string, std::string>> experiments = {
      {"train", "train networks and save checkpoints"},
      {"probe", "accuracy of every depth-k subnetwork"},
      {"gradmap", "per-epoch layer gradient norms and probe increments"},
      {"dgratio", "direct versus full gradient norms per layer"},
      {"noise", "accuracy under gaussian and salt-and-pepper test noise"},
      {"lowdata", "loss curves on a small per-class subset"},
      {"prune", "magnitude sweep and movement pruning"},
      {"continual", "split-task sequence with naive fine-tuning and SI"}};
  std::vector<RunFlags> flags(experiments.size());
  std::vector<CLI::App*> cmds;
  for (std::size_t k = 0; k < experiments.size(); ++k) {
    cmds.push_back(app.add_subcommand(experiments[k].first, experiments[k].second));
    add_run_flags(cmds.back(), flags[k]);
  }

  std::vector<std::string> report_dirs;
  std::string report_out;
  auto* report_cmd = app.add_subcommand("report", "merge finished runs into one JSON document");
  report_cmd->add_option("dirs", report_dirs, "run directories")->required();
  report_cmd->add_option("--out", report_out, "output file (stdout when absent)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitConfig;
  }

  try {
    if (*toy_cmd) return run_toy(toy);
    if (*paths_cmd) return run_paths(depth, layer, paths_out);
    if (*report_cmd) return run_report(report_dirs, report_out);
    for (std::size_t k = 0; k < cmds.size(); ++k)
      if (*cmds[k]) return run_experiment_cmd(experiments[k].first, flags[k]);
  } catch (const acn::ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitRuntime;
  }
  return kExitRuntime;
}
