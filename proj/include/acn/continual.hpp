#pragma once

#include <cstdint>
#include <deque>
#include <iosfwd>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "acn/data.hpp"
#include "acn/network.hpp"
#include "acn/train.hpp"

namespace acn {

// ---- task streams -------------------------------------------------------------

struct Task {
  int id = 0;
  // Original class ids; local label j is classes[j].
  std::vector<int> classes;
  Dataset train, test;
};

struct TaskStream {
  std::vector<Task> tasks;
};

// Shuffles the class ids with seed and cuts the first n_tasks * classes_per_task
// into consecutive disjoint groups. Throws ConfigError when too few classes exist.
TaskStream split_tasks(const Dataset& train, const Dataset& test, int n_tasks, int classes_per_task,
                       std::uint64_t seed);

// ---- synaptic intelligence ------------------------------------------------------

struct SIState {
  double strength = 1.0;
  double damping = 0.1;
  // Only tracked parameters are regularized; others have empty tensors.
  std::vector<std::uint8_t> tracked;
  std::vector<Tensor> omega;       // path integral of the current task
  std::vector<Tensor> importance;  // consolidated importance
  std::vector<Tensor> anchor;      // parameters at the last task boundary
};

// Anchors at the current parameters; tracks everything outside the heads.
SIState make_si_state(const Network& net, double strength = 1.0, double damping = 0.1);
SIState make_si_state(const std::deque<Parameter>& params, std::vector<std::uint8_t> tracked,
                      double strength = 1.0, double damping = 0.1);

// omega += -grad * delta for one optimizer step.
void si_accumulate(SIState& s, const std::vector<Tensor>& delta, const std::vector<Tensor>& grads);
// importance += omega / (motion^2 + damping); anchor = params; omega = 0.
void si_consolidate(SIState& s, const std::deque<Parameter>& params);
// strength * sum importance * (param - anchor)^2
double si_penalty(const SIState& s, const std::deque<Parameter>& params);
// Adds the penalty gradient 2 * strength * importance * (param - anchor) to grad.
void si_add_penalty_grad(const SIState& s, std::deque<Parameter>& params);

// ---- sequences -------------------------------------------------------------------

enum class ContinualMethod { Naive, SI };

std::string_view to_string(ContinualMethod m);
ContinualMethod parse_continual_method(std::string_view s);

struct ContinualConfig {
  ContinualMethod method = ContinualMethod::Naive;
  // Training for every task; epochs is the per-task epoch count and head is
  // overridden by the task id. A fresh optimizer starts each task.
  TrainConfig train;
  double si_strength = 1.0;
  double si_damping = 0.1;
  // Tasks after the first only update their own head.
  bool freeze_trunk_after_first = false;
};

struct ContinualReport {
  // accuracy[t_eval][t_after]; NaN above the diagonal (task not yet seen).
  std::vector<std::vector<double>> accuracy;
  std::vector<TrainLog> logs;
  double avg_accuracy = 0.0;
  double avg_forgetting = 0.0;
};

struct ContinualMetrics {
  double avg_accuracy = 0.0;
  double avg_forgetting = 0.0;
};

// Mean final accuracy, and mean over all but the last task of accuracy right
// after learning minus final accuracy.
ContinualMetrics continual_metrics(const std::vector<std::vector<double>>& accuracy);

// net must have one head per task.
ContinualReport run_sequence(Network& net, const TaskStream& stream, const ContinualConfig& cfg);

nlohmann::json continual_report_json(const ContinualReport& r);
// t_eval,t_after,accuracy for the populated entries.
void write_continual_csv(std::ostream& os, const ContinualReport& r);

}  // namespace acn
