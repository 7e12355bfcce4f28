#include "acn/probe.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <ostream>

#include "acn/error.hpp"
#include "acn/format.hpp"
#include "acn/parallel.hpp"

namespace acn {

// ---- probing ------------------------------------------------------------------

ProbeReport probe_all_depths(Network& net, const Dataset& ds, std::size_t batch, int head) {
  if (ds.size() == 0) throw InputError("probe: empty dataset");
  ds.validate();
  if (batch == 0) throw InputError("probe: batch must be positive");
  const int depth = net.depth();
  const std::size_t n = ds.size();
  const std::size_t chunks = (n + batch - 1) / batch;
  std::vector<std::vector<long>> correct(chunks, std::vector<long>(static_cast<std::size_t>(depth) + 1, 0));
  parallel_for(chunks, [&](std::size_t c) {
    std::vector<std::size_t> idx;
    for (std::size_t i = c * batch; i < std::min(n, (c + 1) * batch); ++i) idx.push_back(i);
    const auto labels = ds.gather_labels(idx);
    Tape tape(false);
    const auto outs = net.forward_collect(tape, ds.gather(idx));
    for (int k = 0; k <= depth; ++k) {
      const auto pred = argmax_rows(net.predict(tape, net.aggregate(outs, k), head).value());
      long hits = 0;
      for (std::size_t i = 0; i < pred.size(); ++i) hits += pred[i] == labels[i];
      correct[c][static_cast<std::size_t>(k)] = hits;
    }
  });

  ProbeReport r;
  r.dataset_id = ds.split;
  std::size_t head_params = 0;
  for (std::size_t k : net.block_param_indices(-1))
    if (net.info()[k].head == head) head_params += net.params()[k].value.size();
  std::size_t used = net.block_param_count(0) + head_params;
  for (int k = 0; k <= depth; ++k) {
    long hits = 0;
    for (const auto& c : correct) hits += c[static_cast<std::size_t>(k)];
    r.accuracy.push_back(static_cast<double>(hits) / static_cast<double>(n));
    if (k > 0) used += net.block_param_count(k);
    r.n_params_used.push_back(used);
  }
  return r;
}

int effective_depth(const ProbeReport& report, double eps) {
  if (!(eps >= 0.0)) throw InputError("effective depth tolerance must be non-negative");
  if (report.accuracy.empty()) throw InputError("empty probe report");
  const double best = *std::max_element(report.accuracy.begin(), report.accuracy.end());
  for (std::size_t k = 0; k < report.accuracy.size(); ++k)
    if (report.accuracy[k] >= best - eps) return static_cast<int>(k);
  return static_cast<int>(report.accuracy.size()) - 1;
}

std::vector<double> incremental_contribution(const ProbeReport& report) {
  std::vector<double> d;
  for (std::size_t k = 1; k < report.accuracy.size(); ++k)
    d.push_back(report.accuracy[k] - report.accuracy[k - 1]);
  return d;
}

void write_probe_csv(std::ostream& os, const ProbeReport& report) {
  os << "k,accuracy,n_params_used\n";
  for (std::size_t k = 0; k < report.accuracy.size(); ++k)
    os << k << ',' << num(report.accuracy[k]) << ',' << report.n_params_used.at(k) << '\n';
}

// ---- pruning ------------------------------------------------------------------

bool prunable(const ParamInfo& info) { return info.role == ParamRole::LinearWeight; }

PruneMask current_mask(const Network& net) {
  PruneMask m;
  m.keep.resize(net.params().size());
  for (std::size_t k = 0; k < net.params().size(); ++k) {
    if (!prunable(net.info()[k])) continue;
    const Parameter& p = net.params()[k];
    m.keep[k] = p.masked() ? p.mask : std::vector<std::uint8_t>(p.value.size(), 1);
    m.total += p.value.size();
    m.zeroed += static_cast<std::size_t>(std::count(m.keep[k].begin(), m.keep[k].end(), 0));
  }
  return m;
}

namespace {

struct Entry {
  double key;
  std::size_t param, index;
};

bool entry_less(const Entry& a, const Entry& b) {
  if (a.key != b.key) return a.key < b.key;
  if (a.param != b.param) return a.param < b.param;
  return a.index < b.index;
}

void zero_entries(Network& net, std::vector<Entry>& entries, std::size_t count) {
  if (count == 0) return;
  std::nth_element(entries.begin(), entries.begin() + static_cast<std::ptrdiff_t>(count - 1),
                   entries.end(), entry_less);
  for (std::size_t e = 0; e < count; ++e) {
    Parameter& p = net.params()[entries[e].param];
    if (!p.masked()) p.mask.assign(p.value.size(), 1);
    p.mask[entries[e].index] = 0;
  }
  net.apply_masks();
}

}  // namespace

PruneMask magnitude_prune(Network& net, double sparsity) {
  if (!(sparsity >= 0.0 && sparsity < 1.0)) throw InputError("sparsity must lie in [0, 1)");
  std::vector<Entry> entries;
  for (std::size_t k = 0; k < net.params().size(); ++k) {
    if (!prunable(net.info()[k])) continue;
    Parameter& p = net.params()[k];
    p.mask.clear();
    for (std::size_t i = 0; i < p.value.size(); ++i) entries.push_back({std::abs(p.value[i]), k, i});
  }
  const auto count = static_cast<std::size_t>(std::floor(sparsity * static_cast<double>(entries.size())));
  zero_entries(net, entries, count);
  return current_mask(net);
}

MovementScores::MovementScores(const Network& net) {
  for (const auto& p : net.params()) score.emplace_back(p.value.shape(), 0.0);
}

void MovementScores::accumulate(const Network& net) {
  if (score.size() != net.params().size()) throw StateError("movement scores do not match network");
  for (std::size_t k = 0; k < score.size(); ++k) {
    if (!prunable(net.info()[k])) continue;
    const Parameter& p = net.params()[k];
    if (!p.has_grad()) throw StateError("no gradient recorded for " + p.name);
    for (std::size_t i = 0; i < p.value.size(); ++i) score[k][i] -= p.value[i] * p.grad[i];
  }
}

PruneMask prune_lowest_scores(Network& net, const MovementScores& scores, double fraction) {
  if (!(fraction >= 0.0 && fraction < 1.0)) throw ConfigError("prune fraction must lie in [0, 1)");
  std::vector<Entry> entries;
  for (std::size_t k = 0; k < net.params().size(); ++k) {
    if (!prunable(net.info()[k])) continue;
    const Parameter& p = net.params()[k];
    for (std::size_t i = 0; i < p.value.size(); ++i)
      if (!p.masked() || p.mask[i]) entries.push_back({scores.score[k][i], k, i});
  }
  const auto count = static_cast<std::size_t>(std::floor(fraction * static_cast<double>(entries.size())));
  zero_entries(net, entries, count);
  return current_mask(net);
}

double compounded_sparsity(const std::vector<double>& fractions) {
  double keep = 1.0;
  for (double f : fractions) {
    if (!(f >= 0.0 && f < 1.0)) throw ConfigError("prune fraction must lie in [0, 1)");
    keep *= 1.0 - f;
  }
  return 1.0 - keep;
}

MovementResult movement_prune(Network& net, const Dataset& train_set, const Dataset* test_set,
                              const std::vector<double>& fractions, TrainConfig finetune) {
  compounded_sparsity(fractions);
  MovementResult out;
  if (fractions.empty()) {
    out.mask = current_mask(net);
    return out;
  }
  MovementScores scores(net);
  finetune.epochs = static_cast<int>(fractions.size());
  TrainHooks hooks;
  hooks.after_backward = [&](Network& n) { scores.accumulate(n); };
  hooks.end_of_epoch = [&](Network& n, int epoch) {
    out.mask = prune_lowest_scores(n, scores, fractions[static_cast<std::size_t>(epoch - 1)]);
    out.sparsity_per_stage.push_back(out.mask.sparsity());
  };
  out.log = train(net, train_set, test_set, finetune, hooks);
  return out;
}

std::vector<SweepRecord> sparsity_accuracy_sweep(const Network& net, const Dataset& eval_set,
                                                 const std::vector<double>& grid,
                                                 const std::string& variant,
                                                 const Dataset* finetune_set, TrainConfig finetune) {
  for (std::size_t g = 0; g < grid.size(); ++g) {
    if (!(grid[g] >= 0.0 && grid[g] < 1.0)) throw InputError("sparsity grid must lie in [0, 1)");
    if (g && !(grid[g] > grid[g - 1])) throw InputError("sparsity grid must be strictly increasing");
  }
  finetune.epochs = 1;
  std::vector<SweepRecord> out(grid.size());
  parallel_for(grid.size(), [&](std::size_t g) {
    Network copy = net;
    const PruneMask m = magnitude_prune(copy, grid[g]);
    if (finetune_set) train(copy, *finetune_set, nullptr, finetune);
    SweepRecord& r = out[g];
    r.sparsity = grid[g];
    r.remaining_params = copy.param_count() - m.zeroed;
    r.accuracy = evaluate(copy, eval_set).accuracy;
    r.variant = variant;
    r.fine_tuned = finetune_set != nullptr;
  });
  return out;
}

void write_sweep_csv(std::ostream& os, const std::vector<SweepRecord>& records) {
  os << "sparsity,remaining_params,accuracy,variant,fine_tuned\n";
  for (const auto& r : records)
    os << num(r.sparsity) << ',' << r.remaining_params << ',' << num(r.accuracy) << ','
       << r.variant << ',' << (r.fine_tuned ? 1 : 0) << '\n';
}

}  // namespace acn
