#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include "acn/data.hpp"
#include "acn/network.hpp"
#include "acn/train.hpp"

namespace acn {

// ---- probing ----------------------------------------------------------------

struct ProbeReport {
  // accuracy[k] for the depth-k subnetwork, k = 0..L.
  std::vector<double> accuracy;
  // Parameters used by the depth-k subnetwork: embedding, blocks 1..k, head.
  std::vector<std::size_t> n_params_used;
  std::string dataset_id;
  int epoch = 0;
};

// Shared head on aggregate(outputs, k) for every k, no retraining.
ProbeReport probe_all_depths(Network& net, const Dataset& ds, std::size_t batch = 256, int head = 0);

// Smallest k with accuracy(k) >= max accuracy - eps.
int effective_depth(const ProbeReport& report, double eps = 0.005);

// accuracy(k) - accuracy(k-1) for k = 1..L.
std::vector<double> incremental_contribution(const ProbeReport& report);

// k,accuracy,n_params_used
void write_probe_csv(std::ostream& os, const ProbeReport& report);

// ---- pruning ----------------------------------------------------------------

// Block linear weights are prunable; embedding, norms, biases and heads are not.
bool prunable(const ParamInfo& info);

struct PruneMask {
  // keep[k] mirrors Parameter::mask of parameter k; empty when not prunable.
  std::vector<std::vector<std::uint8_t>> keep;
  std::size_t total = 0;
  std::size_t zeroed = 0;

  double sparsity() const { return total ? static_cast<double>(zeroed) / total : 0.0; }
};

// Current masks of the prunable parameters.
PruneMask current_mask(const Network& net);

// Zeroes the floor(s * n) smallest-magnitude prunable weights globally. Ties
// break by declaration order (parameter index, then entry index).
PruneMask magnitude_prune(Network& net, double sparsity);

// Movement scores S accumulated as S += -w * dL/dw over fine-tuning steps.
struct MovementScores {
  std::vector<Tensor> score;

  explicit MovementScores(const Network& net);
  // Adds -w * grad for every prunable parameter from the current gradients.
  void accumulate(const Network& net);
};

// Zeroes the lowest-score fraction of the still-unpruned prunable weights.
PruneMask prune_lowest_scores(Network& net, const MovementScores& scores, double fraction);

// Fraction zeroed after stages that each prune a share of what remains.
double compounded_sparsity(const std::vector<double>& fractions);

struct MovementResult {
  std::vector<double> sparsity_per_stage;
  PruneMask mask;
  TrainLog log;
};

// One fine-tuning epoch per stage; at the end of stage t the lowest-score
// fractions[t] of the remaining prunable weights are zeroed. Scores
// accumulate over the whole run.
MovementResult movement_prune(Network& net, const Dataset& train_set, const Dataset* test_set,
                              const std::vector<double>& fractions, TrainConfig finetune);

struct SweepRecord {
  double sparsity = 0.0;
  std::size_t remaining_params = 0;
  double accuracy = 0.0;
  std::string variant;
  bool fine_tuned = false;
};

// Magnitude-prunes a copy of net at every grid level (strictly increasing in
// [0, 1)) and evaluates it; with finetune_set each pruned copy first gets one
// masked fine-tuning epoch.
std::vector<SweepRecord> sparsity_accuracy_sweep(const Network& net, const Dataset& eval_set,
                                                 const std::vector<double>& grid,
                                                 const std::string& variant,
                                                 const Dataset* finetune_set = nullptr,
                                                 TrainConfig finetune = {});

// sparsity,remaining_params,accuracy,variant,fine_tuned
void write_sweep_csv(std::ostream& os, const std::vector<SweepRecord>& records);

}  // namespace acn
