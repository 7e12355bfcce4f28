#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <optional>
#include <span>
#include <vector>

#include <json.hpp>

#include "acn/data.hpp"
#include "acn/network.hpp"

namespace acn {

// ---- optimizer --------------------------------------------------------------

struct AdamWConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.05;

  friend bool operator==(const AdamWConfig&, const AdamWConfig&) = default;
};

struct OptimState {
  AdamWConfig hp;
  std::vector<Tensor> m, v;
  long step = 0;
};

OptimState make_optim_state(const std::deque<Parameter>& params, AdamWConfig hp);

// One decoupled-weight-decay Adam update at rate lr_t. Parameters with
// requires_grad false are skipped; masked entries get no update and stay zero.
void adamw_step(std::deque<Parameter>& params, OptimState& state, double lr_t);

// Linear warmup 0 -> lr_max over warmup_steps, then half-cosine to 0 at total_steps.
double cosine_lr(long step, long warmup_steps, long total_steps, double lr_max);

// ---- losses -----------------------------------------------------------------

enum class LossKind { Standard, DgOnly, DeepSup, Aligned, LayerSkip };

std::string_view to_string(LossKind k);
LossKind parse_loss_kind(std::string_view s);

struct LossMode {
  LossKind kind = LossKind::Standard;
  // Weight of the intermediate exits for DeepSup.
  double lambda = 0.1;
  // LayerSkip curriculum.
  double p_max = 0.1;
  double e_scale = 0.2;
  int c_rot = 15;

  void validate(Connectivity c) const;
  friend bool operator==(const LossMode&, const LossMode&) = default;
};

// Per-block dropout probability for LayerSkip at a 0-based epoch.
double layerskip_drop_rate(const LossMode& mode, int block, int depth, int epoch, int epochs);
// Early exit trained alongside the final layer at a 0-based epoch.
int layerskip_exit(const LossMode& mode, int depth, int epoch);
// Normalized exit weights k / sum(k) for k = 1..depth.
std::vector<double> aligned_weights(int depth);

struct LossOutput {
  Var loss;
  // Final-layer logits, used for running accuracy.
  Var logits;
};

LossOutput compute_loss(Network& net, Tape& tape, const Tensor& x, std::span<const int> labels,
                        const LossMode& mode, int epoch = 0, int epochs = 1, Rng* rng = nullptr,
                        int head = 0);

// ---- gradient instrumentation ---------------------------------------------------

// L2 norm of the gradients of block i's parameters, i = 1..L.
std::vector<double> layer_grad_norms(const Network& net);

struct LayerDecomp {
  double dg_norm = 0.0;
  double fg_norm = 0.0;
  // dg_norm / fg_norm, NaN when fg_norm == 0.
  double ratio = 0.0;
};

struct GradDecomp {
  std::vector<LayerDecomp> layers;
  int epoch = 0;
  long step = 0;
};

// Objective on the aggregated full-depth representation.
using Objective = std::function<Var(Tape&, Network&, Var y)>;

struct GradVectors {
  // Per-parameter gradients with the full graph and with detached block inputs.
  std::vector<Tensor> fg, dg;
};

// Two backward passes; parameter gradients are left zeroed.
GradVectors split_gradients(Network& net, const Tensor& x, const Objective& objective);
GradDecomp measure_dg_fg(Network& net, const Tensor& x, const Objective& objective);
// Cross-entropy through head 0.
GradDecomp measure_dg_fg(Network& net, const Tensor& x, std::span<const int> labels);

// ---- training ---------------------------------------------------------------------

struct TrainConfig {
  int epochs = 10;
  std::size_t batch = 64;
  AdamWConfig opt;
  double warmup_fraction = 0.05;
  LossMode mode;
  std::uint64_t seed = 1;
  int head = 0;
  double divergence_threshold = 1e4;
  // Mean per-layer gradient norms over every step of an epoch.
  bool record_layer_norms = true;
  // DG/FG measurements every dg_every steps on the first dg_batch training
  // examples, averaged per epoch; 0 disables.
  long dg_every = 0;
  std::size_t dg_batch = 64;
  // Evaluate the test set after every epoch.
  bool eval_each_epoch = true;

  void validate() const;
};

struct EpochLog {
  int epoch = 0;
  double train_loss = 0.0;
  double train_acc = 0.0;
  std::optional<double> test_loss;
  std::optional<double> test_acc;
  std::vector<double> layer_norms;
  std::optional<GradDecomp> decomp;
};

struct TrainLog {
  std::vector<EpochLog> epochs;
};

// Hooks let continual learning and pruning observe the optimization.
struct TrainHooks {
  // Runs after backward of the task loss; may add to parameter gradients.
  std::function<void(Network&)> after_backward;
  // Runs after each optimizer step.
  std::function<void(Network&)> after_step;
  // Runs after the last step of each epoch (1-based), before evaluation.
  std::function<void(Network&, int)> end_of_epoch;
};

// Throws DivergenceError after restoring the parameters from the start of the
// failing epoch.
TrainLog train(Network& net, const Dataset& train_set, const Dataset* test_set,
               const TrainConfig& cfg, const TrainHooks& hooks = {});

struct EvalResult {
  double loss = 0.0;
  double accuracy = 0.0;
};

EvalResult evaluate(Network& net, const Dataset& ds, std::size_t batch = 256, int head = 0);

// CSV rows: epoch,split,loss,accuracy.
void write_train_csv(std::ostream& os, const TrainLog& log);
// Per-layer gradient norms and DG/FG series, epoch-major.
nlohmann::json train_log_json(const TrainLog& log);

}  // namespace acn
