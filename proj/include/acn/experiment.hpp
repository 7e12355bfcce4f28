#pragma once

// Experiment runners shared by the command-line tool and the acceptance
// suite: strict JSON run configs, seeded multi-run execution, CSV emission
// and run manifests.

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "acn/chain.hpp"
#include "acn/continual.hpp"
#include "acn/data.hpp"
#include "acn/network.hpp"
#include "acn/probe.hpp"
#include "acn/train.hpp"

namespace acn {

inline constexpr int kSchemaVersion = 1;
inline constexpr std::string_view kToolVersion = "acnlab 0.1.0";

// ---- configuration --------------------------------------------------------------

struct DataSpec {
  // "synthetic" or "cifar10".
  std::string source = "synthetic";
  std::string cifar_dir;
  SynthKind kind = SynthKind::Blobs;
  int classes = 10;
  // 0 keeps every example (cifar10 only).
  std::size_t train_per_class = 100;
  std::size_t test_per_class = 100;
  std::size_t dim = 16;
  double separation = 3.0;
  double noise = 1.0;
  int modes_per_class = 1;
  std::size_t image_size = 32;
  std::size_t image_channels = 3;
  double render_gain = 1.0;
  std::uint64_t seed = 1;
};

// A connectivity plus an optional direct-gradient-only training objective.
// A "-dirac" name suffix turns on the (I + W) block parameterization.
struct ArchVariant {
  std::string name;
  Connectivity connectivity = Connectivity::ACN;
  bool dg_only = false;
  bool dirac = false;
};

ArchVariant parse_arch_variant(std::string_view s);
std::vector<ArchVariant> parse_arch_list(std::string_view comma_separated);

struct ProbeSpec {
  double eps = 0.005;
};

struct NoiseSpec {
  std::vector<double> gaussian{0.0, 0.05, 0.1, 0.2};
  std::vector<double> salt_pepper{0.0, 0.02, 0.05, 0.1};
  std::uint64_t seed = 99;
};

struct LowDataSpec {
  std::size_t per_class = 100;
};

struct PruneSpec {
  std::vector<double> grid{0.0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9};
  bool finetune = false;
  // Per-stage fractions of the remaining weights for movement pruning; empty skips it.
  std::vector<double> movement{0.2, 0.2, 0.2};
};

struct ContinualSpec {
  int tasks = 5;
  int classes_per_task = 2;
  std::vector<std::string> methods{"naive", "si"};
  double si_strength = 1.0;
  double si_damping = 0.1;
};

struct RunConfig {
  std::string preset;
  NetworkConfig network;
  DataSpec data;
  TrainConfig train;
  std::vector<std::uint64_t> seeds{1};
  std::vector<std::string> archs{"acn", "residual"};
  ProbeSpec probe;
  NoiseSpec noise;
  LowDataSpec lowdata;
  PruneSpec prune;
  ContinualSpec continual;
  chain::ToyConfig toy;

  // Throws ConfigError naming the offending key.
  void validate() const;
};

// Preset names: "desk-mixer", "paper-mixer", "desk-dense".
nlohmann::json preset_json(std::string_view name);
std::vector<std::string> preset_names();

// The optional "preset" key is expanded first and the rest of j is merged
// over it. Unknown keys and type mismatches throw ConfigError with the key path.
RunConfig parse_config(const nlohmann::json& j);
RunConfig parse_config_file(const std::filesystem::path& path);

// Fully resolved config; keys are sorted so the dump is canonical.
nlohmann::json config_to_json(const RunConfig& cfg);
// FNV-1a of the canonical dump, as 16 hex digits.
std::string config_hash(const RunConfig& cfg);

std::uint64_t fnv1a64(std::string_view bytes);

// Train and test sets described by spec.
std::pair<Dataset, Dataset> load_data(const DataSpec& spec);

// Network config for one variant, with the input and class settings from data.
NetworkConfig network_for(const RunConfig& cfg, const ArchVariant& arch);
TrainConfig train_for(const RunConfig& cfg, const ArchVariant& arch, std::uint64_t seed);
// Initialization seed of run `seed`.
std::uint64_t init_seed(std::uint64_t seed);

double median(std::vector<double> v);

// ---- runners ---------------------------------------------------------------------

struct ToySummary {
  double residual_w1_mean = 0.0;
  int acn_converged = 0;
  // Share of converged ACN runs with |w1| in [0.75, 1.1].
  double acn_unit_mode_fraction = 0.0;
  // Converged ACN runs with w1 in [0.75, 1.1] and their median weights.
  int acn_positive_count = 0;
  std::vector<double> acn_positive_median;
};

// A run converged when it did not diverge and its final loss is below converged_loss.
ToySummary summarize_toy(const std::vector<chain::ToyRun>& runs, double converged_loss = 1e-6);

struct ProbeRun {
  std::string arch;
  std::uint64_t seed = 0;
  ProbeReport report;
  double final_accuracy = 0.0;
  int effective_depth = 0;
  TrainLog log;
  // Trained network in checkpoint format.
  std::string checkpoint;
};

std::vector<ProbeRun> run_probe(const RunConfig& cfg, const std::vector<ArchVariant>& archs);

struct GradmapRun {
  std::string arch;
  std::uint64_t seed = 0;
  // [epoch][layer]
  std::vector<std::vector<double>> grad_norms;
  std::vector<std::vector<double>> increments;
};

std::vector<GradmapRun> run_gradmap(const RunConfig& cfg, const std::vector<ArchVariant>& archs);

struct DgRatioRun {
  std::string arch;
  std::uint64_t seed = 0;
  // One entry per epoch with measurements.
  std::vector<GradDecomp> epochs;
};

// Uses train.dg_every (10 when unset).
std::vector<DgRatioRun> run_dgratio(const RunConfig& cfg, const std::vector<ArchVariant>& archs);

struct NoiseRun {
  std::string arch;
  std::uint64_t seed = 0;
  double clean_accuracy = 0.0;
  // (kind, level, accuracy) with kind "gaussian" or "salt_pepper".
  struct Point {
    std::string kind;
    double level = 0.0;
    double accuracy = 0.0;
  };
  std::vector<Point> points;
};

std::vector<NoiseRun> run_noise(const RunConfig& cfg, const std::vector<ArchVariant>& archs);

struct LowDataRun {
  std::string arch;
  std::uint64_t seed = 0;
  TrainLog log;
};

std::vector<LowDataRun> run_lowdata(const RunConfig& cfg, const std::vector<ArchVariant>& archs);

struct PruneRun {
  std::string arch;
  std::uint64_t seed = 0;
  std::vector<SweepRecord> magnitude;
  // Test accuracy and sparsity after every movement stage.
  std::vector<double> movement_sparsity;
  std::vector<double> movement_accuracy;
};

std::vector<PruneRun> run_prune(const RunConfig& cfg, const std::vector<ArchVariant>& archs);

struct ContinualRun {
  std::string arch;
  std::string method;
  std::uint64_t seed = 0;
  ContinualReport report;
};

// train.epochs is the per-task epoch count.
std::vector<ContinualRun> run_continual(const RunConfig& cfg, const std::vector<ArchVariant>& archs);

// ---- reports ---------------------------------------------------------------------

// Experiments runnable through run_experiment.
std::vector<std::string> experiment_names();

struct Emitted {
  // File name relative to the output directory, to its contents.
  std::map<std::string, std::string> files;
  nlohmann::json summary;
};

// Runs one experiment and renders its CSV files and summary.
Emitted run_experiment(std::string_view experiment, const RunConfig& cfg,
                       const std::vector<ArchVariant>& archs);

// Writes every file plus summary.json and manifest.json into out_dir.
// Throws IoError when the directory cannot be written.
nlohmann::json emit_reports(const Emitted& e, std::string_view experiment, const RunConfig& cfg,
                            const std::filesystem::path& out_dir, double wall_seconds);

// Path counts and inclusion flags from enumeration for every 1 <= i <= L <= max_depth.
// L,i,ffn,acn,residual,ffn_in_acn,acn_in_residual,ffn_acn_strict,acn_residual_strict
std::string paths_table_csv(int max_depth);

// Merges the summaries of finished runs (directories holding manifest.json).
nlohmann::json aggregate_reports(const std::vector<std::filesystem::path>& run_dirs);

}  // namespace acn
