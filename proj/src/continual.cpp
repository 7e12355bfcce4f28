#include "acn/continual.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <ostream>

#include "acn/error.hpp"
#include "acn/format.hpp"
#include "acn/parallel.hpp"
#include "acn/rng.hpp"

namespace acn {

TaskStream split_tasks(const Dataset& train, const Dataset& test, int n_tasks, int classes_per_task,
                       std::uint64_t seed) {
  if (n_tasks < 1 || classes_per_task < 1) throw ConfigError("task counts must be positive");
  if (train.num_classes != test.num_classes) throw ConfigError("train and test class counts differ");
  if (static_cast<long>(n_tasks) * classes_per_task > train.num_classes)
    throw ConfigError("split needs " + std::to_string(n_tasks * classes_per_task) + " classes, dataset has " +
                      std::to_string(train.num_classes));
  std::vector<int> order(static_cast<std::size_t>(train.num_classes));
  std::iota(order.begin(), order.end(), 0);
  Rng rng(seed);
  std::shuffle(order.begin(), order.end(), rng);

  TaskStream s;
  for (int t = 0; t < n_tasks; ++t) {
    Task task;
    task.id = t;
    task.classes.assign(order.begin() + t * classes_per_task, order.begin() + (t + 1) * classes_per_task);
    task.train = select_classes(train, task.classes);
    task.test = select_classes(test, task.classes);
    s.tasks.push_back(std::move(task));
  }
  return s;
}

// ---- synaptic intelligence ------------------------------------------------------

SIState make_si_state(const std::deque<Parameter>& params, std::vector<std::uint8_t> tracked,
                      double strength, double damping) {
  if (tracked.size() != params.size()) throw StateError("tracked flags do not match parameters");
  if (!(strength >= 0.0) || !(damping > 0.0)) throw ConfigError("SI strength must be >= 0 and damping > 0");
  SIState s;
  s.strength = strength;
  s.damping = damping;
  s.tracked = std::move(tracked);
  for (std::size_t k = 0; k < params.size(); ++k) {
    if (!s.tracked[k]) {
      s.omega.emplace_back();
      s.importance.emplace_back();
      s.anchor.emplace_back();
      continue;
    }
    s.omega.emplace_back(params[k].value.shape(), 0.0);
    s.importance.emplace_back(params[k].value.shape(), 0.0);
    s.anchor.push_back(params[k].value);
  }
  return s;
}

SIState make_si_state(const Network& net, double strength, double damping) {
  std::vector<std::uint8_t> tracked;
  for (const auto& info : net.info()) tracked.push_back(info.block >= 0);
  return make_si_state(net.params(), std::move(tracked), strength, damping);
}

namespace {

void check_shapes(const SIState& s, const std::vector<Tensor>& xs, const char* what) {
  if (xs.size() != s.tracked.size()) throw StateError(std::string("SI: ") + what + " count mismatch");
  for (std::size_t k = 0; k < xs.size(); ++k)
    if (s.tracked[k] && xs[k].shape() != s.anchor[k].shape())
      throw StateError(std::string("SI: ") + what + " shape mismatch at parameter " + std::to_string(k));
}

void check_params(const SIState& s, const std::deque<Parameter>& params) {
  if (params.size() != s.tracked.size()) throw StateError("SI: parameter count mismatch");
  for (std::size_t k = 0; k < params.size(); ++k)
    if (s.tracked[k] && params[k].value.shape() != s.anchor[k].shape())
      throw StateError("SI: shape mismatch for " + params[k].name);
}

}  // namespace

void si_accumulate(SIState& s, const std::vector<Tensor>& delta, const std::vector<Tensor>& grads) {
  check_shapes(s, delta, "update");
  check_shapes(s, grads, "gradient");
  for (std::size_t k = 0; k < s.tracked.size(); ++k) {
    if (!s.tracked[k]) continue;
    auto w = s.omega[k].data();
    for (std::size_t i = 0; i < w.size(); ++i) w[i] -= grads[k][i] * delta[k][i];
  }
}

void si_consolidate(SIState& s, const std::deque<Parameter>& params) {
  check_params(s, params);
  for (std::size_t k = 0; k < params.size(); ++k) {
    if (!s.tracked[k]) continue;
    auto omega = s.omega[k].data();
    auto imp = s.importance[k].data();
    const auto theta = params[k].value.data();
    const auto anchor = s.anchor[k].data();
    for (std::size_t i = 0; i < omega.size(); ++i) {
      const double motion = theta[i] - anchor[i];
      imp[i] += omega[i] / (motion * motion + s.damping);
    }
    s.omega[k].fill(0.0);
    s.anchor[k] = params[k].value;
  }
}

double si_penalty(const SIState& s, const std::deque<Parameter>& params) {
  check_params(s, params);
  double sum = 0.0;
  for (std::size_t k = 0; k < params.size(); ++k) {
    if (!s.tracked[k]) continue;
    const auto theta = params[k].value.data();
    for (std::size_t i = 0; i < theta.size(); ++i) {
      const double d = theta[i] - s.anchor[k][i];
      sum += s.importance[k][i] * d * d;
    }
  }
  return s.strength * sum;
}

void si_add_penalty_grad(const SIState& s, std::deque<Parameter>& params) {
  check_params(s, params);
  for (std::size_t k = 0; k < params.size(); ++k) {
    if (!s.tracked[k]) continue;
    Parameter& p = params[k];
    if (!p.has_grad()) p.zero_grad();
    auto g = p.grad.data();
    const auto theta = p.value.data();
    for (std::size_t i = 0; i < g.size(); ++i)
      g[i] += 2.0 * s.strength * s.importance[k][i] * (theta[i] - s.anchor[k][i]);
  }
}

// ---- sequences -------------------------------------------------------------------

std::string_view to_string(ContinualMethod m) { return m == ContinualMethod::SI ? "si" : "naive"; }

ContinualMethod parse_continual_method(std::string_view s) {
  if (s == "naive") return ContinualMethod::Naive;
  if (s == "si") return ContinualMethod::SI;
  throw ConfigError("unknown continual method '" + std::string(s) + "' (naive, si)");
}

ContinualMetrics continual_metrics(const std::vector<std::vector<double>>& a) {
  const std::size_t n = a.size();
  if (n == 0) throw InputError("empty accuracy matrix");
  for (const auto& row : a)
    if (row.size() != n) throw InputError("accuracy matrix must be square");
  const std::size_t last = n - 1;
  ContinualMetrics m;
  for (std::size_t t = 0; t < n; ++t) m.avg_accuracy += a[t][last];
  m.avg_accuracy /= static_cast<double>(n);
  for (std::size_t t = 0; t < last; ++t) m.avg_forgetting += a[t][t] - a[t][last];
  if (last > 0) m.avg_forgetting /= static_cast<double>(last);
  return m;
}

ContinualReport run_sequence(Network& net, const TaskStream& stream, const ContinualConfig& cfg) {
  const std::size_t n = stream.tasks.size();
  if (n == 0) throw ConfigError("empty task stream");
  if (net.config().heads < static_cast<int>(n))
    throw ConfigError("network has " + std::to_string(net.config().heads) + " heads for " +
                      std::to_string(n) + " tasks");
  cfg.train.validate();

  const double nan = std::numeric_limits<double>::quiet_NaN();
  ContinualReport r;
  r.accuracy.assign(n, std::vector<double>(n, nan));
  SIState si = make_si_state(net, cfg.si_strength, cfg.si_damping);
  const bool use_si = cfg.method == ContinualMethod::SI;

  for (std::size_t t = 0; t < n; ++t) {
    const int head = static_cast<int>(t);
    for (std::size_t k = 0; k < net.params().size(); ++k) {
      const ParamInfo& info = net.info()[k];
      const bool trunk = info.block >= 0;
      net.params()[k].requires_grad =
          trunk ? !(cfg.freeze_trunk_after_first && t > 0) : info.head == head;
    }

    TrainConfig tc = cfg.train;
    tc.head = head;
    tc.seed = derive_seed(cfg.train.seed, t);
    TrainHooks hooks;
    std::vector<Tensor> task_grads, before;
    if (use_si) {
      hooks.after_backward = [&](Network& m) {
        task_grads.clear();
        before.clear();
        for (const auto& p : m.params()) {
          task_grads.push_back(p.has_grad() ? p.grad : Tensor(p.value.shape(), 0.0));
          before.push_back(p.value);
        }
        si_add_penalty_grad(si, m.params());
      };
      hooks.after_step = [&](Network& m) {
        std::vector<Tensor> delta;
        for (std::size_t k = 0; k < m.params().size(); ++k) {
          Tensor d = m.params()[k].value;
          auto dv = d.data();
          for (std::size_t i = 0; i < dv.size(); ++i) dv[i] -= before[k][i];
          delta.push_back(std::move(d));
        }
        si_accumulate(si, delta, task_grads);
      };
    }
    r.logs.push_back(train(net, stream.tasks[t].train, &stream.tasks[t].test, tc, hooks));
    if (use_si) si_consolidate(si, net.params());

    parallel_for(t + 1, [&](std::size_t e) {
      r.accuracy[e][t] = evaluate(net, stream.tasks[e].test, 256, static_cast<int>(e)).accuracy;
    });
  }
  for (auto& p : net.params()) p.requires_grad = true;

  const ContinualMetrics m = continual_metrics(r.accuracy);
  r.avg_accuracy = m.avg_accuracy;
  r.avg_forgetting = m.avg_forgetting;
  return r;
}

nlohmann::json continual_report_json(const ContinualReport& r) {
  auto real = [](double v) { return std::isnan(v) ? nlohmann::json(nullptr) : nlohmann::json(v); };
  nlohmann::json matrix = nlohmann::json::array();
  for (const auto& row : r.accuracy) {
    nlohmann::json jr = nlohmann::json::array();
    for (double v : row) jr.push_back(real(v));
    matrix.push_back(jr);
  }
  nlohmann::json curves = nlohmann::json::array();
  for (const auto& log : r.logs) {
    nlohmann::json c = nlohmann::json::array();
    for (const auto& e : log.epochs) {
      nlohmann::json je = {{"epoch", e.epoch}, {"train_loss", e.train_loss}, {"train_acc", e.train_acc}};
      if (e.test_acc) je["test_acc"] = *e.test_acc;
      if (e.test_loss) je["test_loss"] = *e.test_loss;
      c.push_back(je);
    }
    curves.push_back(c);
  }
  return {{"accuracy", matrix},
          {"curves", curves},
          {"avg_accuracy", r.avg_accuracy},
          {"avg_forgetting", r.avg_forgetting}};
}

void write_continual_csv(std::ostream& os, const ContinualReport& r) {
  os << "t_eval,t_after,accuracy\n";
  for (std::size_t e = 0; e < r.accuracy.size(); ++e)
    for (std::size_t t = e; t < r.accuracy.size(); ++t) os << e << ',' << t << ',' << num(r.accuracy[e][t]) << '\n';
}

}  // namespace acn
