// Acceptance suite: one PASS/FAIL line per criterion, nonzero exit when any fails.
// Usage: acceptance [criterion numbers...]   (all when none given)

#include <algorithm>
#include <chrono>
#include <deque>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "acn/chain.hpp"
#include "acn/continual.hpp"
#include "acn/data.hpp"
#include "acn/error.hpp"
#include "acn/experiment.hpp"
#include "acn/gradcheck.hpp"
#include "acn/network.hpp"
#include "acn/probe.hpp"
#include "acn/train.hpp"
#include "chain_on_tape.hpp"

using namespace acn;
using nlohmann::json;

namespace {

// ---- pinned tolerances ------------------------------------------------------------

constexpr int kOracleChains = 200;
constexpr int kOracleMaxDepth = 12;
constexpr double kOracleRelTol = 1e-10;

constexpr int kPathMaxDepth = 12;

constexpr double kToyResidualW1 = 0.26;
constexpr double kToyResidualW1Tol = 0.05;
constexpr double kToyUnitModeMin = 0.60;
constexpr double kToyPositiveMedian[3] = {0.9, 0.11, 0.0};
constexpr double kToyPositiveTol = 0.1;

constexpr double kFiniteDiffTol = 1e-4;

constexpr double kDgChainTol = 1e-10;

constexpr double kProbeEps = 0.005;
constexpr double kMatchBestTol = 0.02;

// ---- desk task suite -----------------------------------------------------------

constexpr int kTrendSeeds = 5;
constexpr int kContinualSeeds = 3;

std::vector<std::uint64_t> seeds(int n) {
  std::vector<std::uint64_t> s;
  for (int k = 1; k <= n; ++k) s.push_back(static_cast<std::uint64_t>(k));
  return s;
}

// Small Mixer on rendered synthetic blobs with three clusters per class. The
// desk ACN uses (I + W) block linears, so channel_hidden equals width.
json desk_task(int classes) {
  return {{"preset", "desk-mixer"},
          {"network", {{"classes", classes}, {"channel_hidden", 32}}},
          {"data", {{"classes", classes}, {"noise", 0.4}, {"modes_per_class", 3}}},
          {"train", {{"epochs", 30}, {"lr", 2e-3}, {"eval_each_epoch", false}}},
          {"seeds", seeds(kTrendSeeds)}};
}

const std::string kAcn = "acn-dirac";
const std::string kAcnDgOnly = "acn-dgonly-dirac";

RunConfig desk_config(int classes) { return parse_config(desk_task(classes)); }

// ---- helpers ---------------------------------------------------------------------

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

double rel_err(double a, double b) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-300});
}

template <class Run, class F>
double median_of(const std::vector<Run>& runs, const std::string& arch, F value) {
  std::vector<double> v;
  for (const auto& r : runs)
    if (r.arch == arch) v.push_back(value(r));
  return median(v);
}

// Trained desk runs shared by the trend, truncation and pruning criteria.
struct DeskRuns {
  std::vector<ProbeRun> main;  // acn, residual, ffn, dg-only acn at 10 classes
  std::map<int, std::vector<ProbeRun>> acn_by_classes;
};

DeskRuns& desk_runs() {
  static DeskRuns d = [] {
    DeskRuns out;
    out.main = run_probe(desk_config(10), parse_arch_list(kAcn + ",residual,ffn," + kAcnDgOnly));
    for (int c : {2, 5}) out.acn_by_classes[c] = run_probe(desk_config(c), parse_arch_list(kAcn));
    for (const auto& r : out.main)
      if (r.arch == kAcn) out.acn_by_classes[10].push_back(r);
    return out;
  }();
  return d;
}

Network load_checkpoint(const std::string& bytes) {
  const auto path = std::filesystem::temp_directory_path() / "acnlab_acceptance.ckpt";
  std::ofstream(path, std::ios::binary) << bytes;
  Network net = Network::load(path);
  std::filesystem::remove(path);
  return net;
}

// ---- criteria ----------------------------------------------------------------------

Outcome gradient_oracles() {
  std::mt19937_64 rng(20240601);
  std::uniform_real_distribution<double> w(-1.0, 1.0);
  std::uniform_int_distribution<int> depth(1, kOracleMaxDepth);
  double worst = 0.0;
  int checked = 0;
  for (chain::Arch arch : {chain::Arch::FFN, chain::Arch::ResNet, chain::Arch::ACN})
    for (int trial = 0; trial < kOracleChains; ++trial) {
      chain::Chain1D c;
      c.weights.resize(static_cast<std::size_t>(depth(rng)));
      for (auto& v : c.weights) v = w(rng);
      c.x0 = w(rng);
      const auto tape = testing::tape_chain_grads(arch, c);
      for (int i = 1; i <= c.depth(); ++i) {
        const double closed = chain::grad_closed_form(arch, c, i);
        const double paths = chain::grad_by_paths(arch, c, i);
        const double ad = tape[static_cast<std::size_t>(i - 1)];
        worst = std::max({worst, rel_err(closed, paths), rel_err(closed, ad), rel_err(paths, ad)});
        ++checked;
      }
    }
  return {worst < kOracleRelTol, fmt("%d gradients over %d chains/arch, max rel err %.2e", checked,
                                     kOracleChains, worst)};
}

Outcome path_counts() {
  bool ok = true;
  int cases = 0;
  for (int L = 1; L <= kPathMaxDepth; ++L)
    for (int i = 1; i <= L; ++i) {
      const auto ffn = chain::enumerate_backward_paths(chain::Arch::FFN, L, i);
      const auto acn = chain::enumerate_backward_paths(chain::Arch::ACN, L, i);
      const auto res = chain::enumerate_backward_paths(chain::Arch::ResNet, L, i);
      ok &= ffn.size() == 1 && acn.size() == static_cast<std::size_t>(L - i + 1) &&
            res.size() == (std::size_t{1} << (L - i));
      ok &= std::includes(acn.begin(), acn.end(), ffn.begin(), ffn.end());
      ok &= std::includes(res.begin(), res.end(), acn.begin(), acn.end());
      const auto inc = chain::path_set_inclusion(L, i);
      ok &= inc.ffn_in_acn && inc.acn_in_resnet;
      ++cases;
    }
  const auto r12 = chain::enumerate_backward_paths(chain::Arch::ResNet, 12, 2).size();
  return {ok, fmt("%d (L, i) pairs; residual paths at L=12, i=2: %zu (a quoted 127 does not match)", cases, r12)};
}

Outcome toy_chains() {
  const chain::ToyConfig cfg;  // 1000 runs, 300 epochs, uniform [-1, 1]
  const ToySummary s = summarize_toy(chain::run_toy_experiment(cfg));
  const bool res_ok = std::abs(s.residual_w1_mean - kToyResidualW1) <= kToyResidualW1Tol;
  const bool mode_ok = s.acn_unit_mode_fraction >= kToyUnitModeMin;
  bool pos_ok = s.acn_positive_median.size() == 3;
  for (std::size_t k = 0; pos_ok && k < 3; ++k)
    pos_ok = std::abs(s.acn_positive_median[k] - kToyPositiveMedian[k]) <= kToyPositiveTol;
  std::string med = "none";
  if (s.acn_positive_median.size() == 3)
    med = fmt("(%.3f, %.3f, %.3f)", s.acn_positive_median[0], s.acn_positive_median[1],
              s.acn_positive_median[2]);
  return {res_ok && mode_ok && pos_ok,
          fmt("residual w1 mean %.3f [%s]; acn |w1|~1 share %.3f of %d converged [%s]; "
              "positive-mode median %s over %d runs [%s]",
              s.residual_w1_mean, res_ok ? "ok" : "out", s.acn_unit_mode_fraction, s.acn_converged,
              mode_ok ? "ok" : "out", med.c_str(), s.acn_positive_count, pos_ok ? "ok" : "out")};
}

Outcome finite_differences() {
  std::mt19937_64 rng(4);
  std::normal_distribution<double> n(0.0, 1.0);
  auto rnd = [&](Shape s) {
    Tensor t(std::move(s));
    for (auto& v : t.values()) v = n(rng);
    return t;
  };
  Parameter a("a", rnd({4, 6})), b("b", rnd({6, 3})), c("c", rnd({4, 6})), bias("bias", rnd({6}));
  Parameter gamma("gamma", rnd({6})), beta("beta", rnd({6}));
  const Tensor probe = rnd({4, 6});
  const int labels[] = {0, 2, 1, 1};
  auto weighted = [&](Tape& t, Var v) {
    Tensor p(v.value().shape());
    for (std::size_t k = 0; k < p.size(); ++k) p[k] = std::sin(1.0 + static_cast<double>(k));
    return sum(mul(v, t.constant(p)));
  };
  std::vector<std::pair<std::string, LossBuilder>> ops = {
      {"matmul", [&](Tape& t) { return weighted(t, matmul(t.param(a), t.param(b))); }},
      {"add", [&](Tape& t) { return weighted(t, add(t.param(a), t.param(c))); }},
      {"sub", [&](Tape& t) { return weighted(t, sub(t.param(a), t.param(c))); }},
      {"mul", [&](Tape& t) { return weighted(t, mul(t.param(a), t.param(c))); }},
      {"scale", [&](Tape& t) { return weighted(t, scale(t.param(a), -1.7)); }},
      {"add_bias", [&](Tape& t) { return weighted(t, add_bias(t.param(a), t.param(bias))); }},
      {"sum", [&](Tape& t) { return sum(mul(t.param(a), t.constant(probe))); }},
      {"reshape", [&](Tape& t) { return weighted(t, reshape(t.param(a), {8, 3})); }},
      {"gelu", [&](Tape& t) { return weighted(t, gelu(t.param(a))); }},
      {"layer_norm",
       [&](Tape& t) { return weighted(t, layer_norm(t.param(a), t.param(gamma), t.param(beta))); }},
      {"transpose_groups", [&](Tape& t) { return weighted(t, transpose_groups(t.param(a), 2)); }},
      {"mean_rows", [&](Tape& t) { return weighted(t, mean_rows(t.param(a), 2)); }},
      {"softmax_cross_entropy",
       [&](Tape& t) { return softmax_cross_entropy(matmul(t.param(a), t.param(b)), labels); }},
      {"mse", [&](Tape& t) { return mse(t.param(a), t.param(c)); }},
  };
  Parameter* ps[] = {&a, &b, &c, &bias, &gamma, &beta};
  double worst = 0.0;
  std::string worst_name;
  for (const auto& [name, loss] : ops) {
    const double e = finite_diff_check(loss, ps);
    if (e >= worst) worst = e, worst_name = name;
  }

  auto block_err = [&](NetworkConfig cfg) {
    Network net(cfg, 31);
    std::mt19937_64 r(32);
    std::normal_distribution<double> jitter(0.0, 0.5);
    for (auto& p : net.params())
      for (auto& v : p.value.values()) v += jitter(r);
    Shape s = cfg.input_shape();
    s.insert(s.begin(), 3);
    Tensor x(s);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (auto& v : x.values()) v = u(r);
    std::vector<Parameter*> all;
    for (auto& p : net.params()) all.push_back(&p);
    const int y[] = {2, 0, 1};
    return finite_diff_check([&](Tape& t) { return softmax_cross_entropy(net.logits(t, x), y); }, all);
  };
  for (Connectivity conn : {Connectivity::FFN, Connectivity::Residual, Connectivity::ACN}) {
    NetworkConfig mixer;
    mixer.depth = 2;
    mixer.connectivity = conn;
    mixer.width = 6;
    mixer.token_hidden = 5;
    mixer.channel_hidden = 7;
    mixer.image_size = 4;
    mixer.image_channels = 2;
    mixer.patch = 2;
    mixer.classes = 3;
    NetworkConfig dense;
    dense.depth = 2;
    dense.connectivity = conn;
    dense.block = BlockType::Dense;
    dense.width = 5;
    dense.hidden = 7;
    dense.embed = EmbedType::Linear;
    dense.input_dim = 3;
    dense.classes = 3;
    for (auto [name, cfg] : {std::pair{"mixer", mixer}, std::pair{"dense", dense}}) {
      const double e = block_err(cfg);
      if (e >= worst) worst = e, worst_name = std::string(name) + " block (" + std::string(to_string(conn)) + ")";
    }
  }
  return {worst < kFiniteDiffTol,
          fmt("%zu ops and both block kinds, max rel err %.2e (%s)", ops.size(), worst, worst_name.c_str())};
}

Outcome dg_consistency() {
  // Exact part: tape split of 1D ACN chains against the path decomposition.
  std::mt19937_64 rng(8);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  double worst = 0.0;
  for (int trial = 0; trial < 50; ++trial) {
    const int depth = 1 + trial % 12;
    std::vector<double> w(static_cast<std::size_t>(depth));
    for (auto& v : w) v = u(rng);
    const double x0 = u(rng);
    NetworkConfig cfg;
    cfg.depth = depth;
    cfg.connectivity = Connectivity::ACN;
    cfg.block = BlockType::Dense;
    cfg.width = 1;
    cfg.hidden = 0;
    cfg.dense_gelu = false;
    cfg.dense_norm = false;
    cfg.embed = EmbedType::Identity;
    cfg.input_dim = 1;
    cfg.classes = 2;
    cfg.head_norm = false;
    Network net(cfg, 1);
    for (int i = 1; i <= depth; ++i) {
      auto [wi, bi] = net.output_projection(i);
      net.params()[wi].value[0] = w[static_cast<std::size_t>(i - 1)];
      net.params()[bi].value[0] = 0.0;
    }
    const GradDecomp d = measure_dg_fg(net, Tensor({1, 1}, {x0}),
                                       [](Tape&, Network&, Var y) { return sum(y); });
    for (int i = 1; i <= depth; ++i) {
      // Block i holds the chain weight and an output bias; the bias sees the
      // same paths with a unit forward term.
      const chain::Chain1D c{w, x0};
      const auto p = chain::decompose_gradient(chain::Arch::ACN, c, i);
      const double bias_fg = chain::backward_term(chain::Arch::ACN, c, i);
      const double dg = std::hypot(p.dg, 1.0), fg = std::hypot(p.fg, bias_fg);
      const auto& l = d.layers[static_cast<std::size_t>(i - 1)];
      worst = std::max({worst, std::abs(l.dg_norm - dg) / std::max(1.0, dg),
                        std::abs(l.fg_norm - fg) / std::max(1.0, fg)});
    }
  }
  const bool exact_ok = worst < kDgChainTol;

  // Trend part: first-epoch DG/FG ratios on the desk Mixer.
  RunConfig cfg = desk_config(10);
  cfg.train.epochs = 1;
  cfg.train.dg_every = 4;
  const auto runs = run_dgratio(cfg, parse_arch_list("acn," + kAcn + ",residual"));
  const int half = cfg.network.depth / 2;
  bool trend_ok = true;
  std::string ratios;
  for (int i = 1; i <= half; ++i) {
    auto ratio = [&](const DgRatioRun& r) { return r.epochs.front().layers[static_cast<std::size_t>(i - 1)].ratio; };
    const double a = median_of(runs, "acn", ratio), r = median_of(runs, "residual", ratio);
    const double ad = median_of(runs, kAcn, ratio);
    trend_ok &= a > r;
    ratios += fmt("%s%d: %.3f>%.3f (dirac %.3f)", i > 1 ? ", " : "", i, a, r, ad);
  }
  return {exact_ok && trend_ok, fmt("1D chains max err %.1e; epoch-1 median acn>residual ratio at layers %s",
                                    worst, ratios.c_str())};
}

Outcome compression_trend() {
  DeskRuns& d = desk_runs();
  const int L = desk_config(10).network.depth;
  auto eff = [](const ProbeRun& r) { return static_cast<double>(r.effective_depth); };
  auto acc = [](const ProbeRun& r) { return r.final_accuracy; };
  std::map<std::string, double> depth, accuracy;
  double best = 0.0;
  for (const std::string& a : {kAcn, std::string("residual"), std::string("ffn"), kAcnDgOnly}) {
    depth[a] = median_of(d.main, a, eff);
    accuracy[a] = median_of(d.main, a, acc);
  }
  for (const std::string& a : {kAcn, std::string("residual"), std::string("ffn")}) best = std::max(best, accuracy[a]);
  const bool a_ok = depth[kAcn] < L && depth["residual"] == L && depth["ffn"] == L &&
                    accuracy[kAcn] >= best - kMatchBestTol;
  std::vector<double> by_classes;
  for (int c : {2, 5, 10}) by_classes.push_back(median_of(d.acn_by_classes[c], kAcn, eff));
  const bool b_ok = std::is_sorted(by_classes.begin(), by_classes.end());
  const double chance = 1.0 / 10.0;
  const bool c_ok = chance < accuracy[kAcnDgOnly] && accuracy[kAcnDgOnly] < accuracy[kAcn];
  return {a_ok && b_ok && c_ok,
          fmt("(a) depth acn %.0f residual %.0f ffn %.0f of %d, acc acn %.3f best %.3f [%s]; "
              "(b) acn depth at 2/5/10 classes %.0f/%.0f/%.0f [%s]; (c) chance %.2f < dg-only %.3f < acn %.3f [%s]",
              depth[kAcn], depth["residual"], depth["ffn"], L, accuracy[kAcn], best, a_ok ? "ok" : "fails",
              by_classes[0], by_classes[1], by_classes[2], b_ok ? "ok" : "fails", chance, accuracy[kAcnDgOnly],
              accuracy[kAcn], c_ok ? "ok" : "fails")};
}

Outcome truncation() {
  const ProbeRun& run = desk_runs().acn_by_classes[10].front();
  Network net = load_checkpoint(run.checkpoint);
  const auto [train_set, test] = load_data(desk_config(10).data);
  const ProbeReport report = probe_all_depths(net, test);
  bool ok = report.accuracy == run.report.accuracy;
  for (int k = 0; k <= net.depth(); ++k) {
    Network t = net.truncate(k);
    ok &= evaluate(t, test).accuracy == report.accuracy[static_cast<std::size_t>(k)];
    ok &= t.param_count() == report.n_params_used[static_cast<std::size_t>(k)];
  }
  return {ok, fmt("k = 0..%d on a trained desk ACN (seed %llu), probe accuracies %.3f..%.3f", net.depth(),
                  static_cast<unsigned long long>(run.seed), report.accuracy.front(), report.accuracy.back())};
}

Outcome pruning() {
  std::vector<std::string> notes;
  bool ok = true;

  // Magnitude sparsity within 1/n of the request.
  DeskRuns& d = desk_runs();
  const auto [train_set, test] = load_data(desk_config(10).data);
  Network acn = load_checkpoint(d.main.front().checkpoint);
  const std::size_t n = current_mask(acn).total;
  double sp_err = 0.0;
  for (double s : {0.1, 0.33, 0.5, 0.77, 0.9}) {
    Network copy = acn;
    sp_err = std::max(sp_err, std::abs(magnitude_prune(copy, s).sparsity() - s));
  }
  ok &= sp_err <= 1.0 / static_cast<double>(n);
  notes.push_back(fmt("magnitude sparsity err %.1e (1/n = %.1e)", sp_err, 1.0 / static_cast<double>(n)));

  // Movement scores on a hand-checked two-step trace: S = -(w1 g1 + w2 g2).
  NetworkConfig tiny;
  tiny.depth = 1;
  tiny.block = BlockType::Dense;
  tiny.width = 2;
  tiny.hidden = 0;
  tiny.dense_gelu = false;
  tiny.dense_norm = false;
  tiny.embed = EmbedType::Identity;
  tiny.input_dim = 2;
  tiny.classes = 2;
  Network net(tiny, 1);
  const std::size_t wi = net.output_projection(1).first;
  for (auto& q : net.params()) q.grad = Tensor(q.value.shape(), 0.0);
  MovementScores scores(net);
  const double w1[] = {0.5, -1.0, 2.0, 0.25}, g1[] = {0.1, 0.2, -0.3, 0.4};
  const double w2[] = {0.4, -0.8, 2.5, 0.0}, g2[] = {-0.2, 0.5, 0.1, 1.0};
  const double want[] = {-(0.05 - 0.08), -(-0.2 - 0.4), -(-0.6 + 0.25), -(0.1 + 0.0)};
  for (const auto& [w, g] : {std::pair{w1, g1}, std::pair{w2, g2}}) {
    for (std::size_t k = 0; k < 4; ++k) {
      net.params()[wi].value[k] = w[k];
      net.params()[wi].grad[k] = g[k];
    }
    scores.accumulate(net);
  }
  double mv_err = 0.0;
  for (std::size_t k = 0; k < 4; ++k) mv_err = std::max(mv_err, std::abs(scores.score[wi][k] - want[k]));
  ok &= mv_err < 1e-15;
  notes.push_back(fmt("movement trace err %.1e", mv_err));

  const double two = compounded_sparsity({0.2, 0.2});
  ok &= std::abs(two - 0.36) < 1e-12;
  notes.push_back(fmt("two 20%% stages -> %.2f%%", 100 * two));

  // Sweep curves and the top-sparsity ordering.
  const std::vector<double> grid = PruneSpec{}.grid;
  std::map<std::string, std::vector<double>> top;
  bool monotone = true;
  for (const auto& r : d.main) {
    if (r.arch != kAcn && r.arch != "residual") continue;
    const auto recs = sparsity_accuracy_sweep(load_checkpoint(r.checkpoint), test, grid, r.arch);
    for (std::size_t k = 1; k < recs.size(); ++k) monotone &= recs[k].remaining_params < recs[k - 1].remaining_params;
    top[r.arch].push_back(recs.back().accuracy);
  }
  const double acn_top = median(top[kAcn]), res_top = median(top["residual"]);
  ok &= monotone && acn_top >= res_top;
  notes.push_back(fmt("param counts %s; at sparsity %.1f median acc acn %.3f vs residual %.3f",
                      monotone ? "strictly decreasing" : "NOT decreasing", grid.back(), acn_top, res_top));
  std::string detail;
  for (const auto& s : notes) detail += (detail.empty() ? "" : "; ") + s;
  return {ok, detail};
}

Outcome continual() {
  bool ok = true;
  // SI penalty and importance properties.
  std::deque<Parameter> params;
  params.emplace_back("p", Tensor({3}, {0.5, -1.0, 2.0}));
  Parameter& p = params.front();
  SIState si = make_si_state(params, {1}, 1.0, 0.1);
  ok &= si_penalty(si, params) == 0.0;
  std::mt19937_64 rng(12);
  std::normal_distribution<double> n(0.0, 1.0);
  bool omega_nonneg = true;
  for (int task = 0; task < 3; ++task) {
    // Gradient descent on a random quadratic keeps g . delta <= 0 per step.
    Tensor centre({3});
    for (auto& v : centre.values()) v = n(rng);
    for (int step = 0; step < 20; ++step) {
      Tensor g({3}), delta({3});
      for (std::size_t k = 0; k < 3; ++k) {
        g[k] = p.value[k] - centre[k];
        delta[k] = -0.1 * g[k];
        p.value[k] += delta[k];
      }
      si_accumulate(si, {delta}, {g});
    }
    si_consolidate(si, params);
    for (const auto& o : si.importance)
      for (double v : o.values()) omega_nonneg &= v >= 0.0;
    ok &= si_penalty(si, params) == 0.0;
  }
  ok &= omega_nonneg;

  RunConfig cfg = desk_config(10);
  cfg.seeds = seeds(kContinualSeeds);
  cfg.train.epochs = 10;
  cfg.continual = ContinualSpec{};
  const auto runs = run_continual(cfg, parse_arch_list(kAcn + ",residual"));
  auto forgetting = [&](const std::string& arch, const std::string& method) {
    std::vector<double> v;
    for (const auto& r : runs)
      if (r.arch == arch && r.method == method) v.push_back(r.report.avg_forgetting);
    return median(v);
  };
  const double an = forgetting(kAcn, "naive"), as = forgetting(kAcn, "si");
  const double rn = forgetting("residual", "naive"), rs = forgetting("residual", "si");
  const bool order = as < an && rs < rn && as < rs;
  return {ok && order, fmt("penalty 0 at anchor, omega >= 0: %s; median forgetting acn naive %.3f si %.3f, "
                           "residual naive %.3f si %.3f",
                           ok ? "yes" : "no", an, as, rn, rs)};
}

Outcome noise_harness() {
  RunConfig cfg = desk_config(10);
  cfg.seeds = {1};
  cfg.train.epochs = 2;
  const auto runs = run_noise(cfg, parse_arch_list(kAcn + ",residual"));
  bool ok = true;
  std::map<std::string, std::pair<double, double>> gap;
  for (const auto& r : runs)
    for (const auto& p : r.points) {
      if (p.level == 0.0) ok &= p.accuracy == r.clean_accuracy;
      if (p.kind == "gaussian" && p.level == cfg.noise.gaussian.back()) gap[r.arch].first = r.clean_accuracy - p.accuracy;
      if (p.kind == "salt_pepper" && p.level == cfg.noise.salt_pepper.back())
        gap[r.arch].second = r.clean_accuracy - p.accuracy;
    }

  const auto [train_set, test] = load_data(cfg.data);
  const std::size_t hw = cfg.network.image_size * cfg.network.image_size, ch = cfg.network.image_channels;
  for (double p : cfg.noise.salt_pepper) {
    const Dataset noisy = add_salt_pepper(test, p, 5);
    const auto want = static_cast<std::size_t>(std::llround(p * static_cast<double>(hw)));
    for (std::size_t e = 0; e < test.size(); ++e) {
      std::size_t changed = 0;
      for (std::size_t px = 0; px < hw; ++px) {
        bool any = false, all_extreme = true;
        for (std::size_t c = 0; c < ch; ++c) {
          const std::size_t k = e * ch * hw + c * hw + px;
          any |= noisy.inputs[k] != test.inputs[k];
          all_extreme &= noisy.inputs[k] == 0.0 || noisy.inputs[k] == 1.0;
        }
        changed += any;
        ok &= !any || all_extreme;
      }
      // Rendered pixels lie strictly inside (0, 1), so every selected pixel changes.
      ok &= changed == want;
    }
  }
  return {ok, fmt("zero noise reproduces clean accuracy bitwise; altered pixel counts exact; "
                  "accuracy drop at the top levels (gaussian, salt-pepper) acn %.3f/%.3f residual %.3f/%.3f, not gated",
                  gap[kAcn].first, gap[kAcn].second, gap["residual"].first, gap["residual"].second)};
}

Outcome reproducibility() {
  json j = {{"preset", "desk-mixer"},
            {"network", {{"depth", 3}, {"width", 8}, {"token_hidden", 4}, {"channel_hidden", 8}}},
            {"data", {{"train_per_class", 12}, {"test_per_class", 8}}},
            {"train", {{"epochs", 2}, {"batch", 16}}},
            {"seeds", {3, 4}},
            {"prune", {{"grid", {0.0, 0.5}}, {"movement", {0.2}}}},
            {"continual", {{"tasks", 2}}},
            {"noise", {{"gaussian", {0.0, 0.1}}, {"salt_pepper", {0.0, 0.05}}}},
            {"lowdata", {{"per_class", 6}}},
            {"toy", {{"runs", 20}, {"epochs", 50}}}};
  const RunConfig cfg = parse_config(j);
  const auto archs = parse_arch_list("acn,residual");
  const auto root = std::filesystem::temp_directory_path() / "acnlab_acceptance_repro";
  std::filesystem::remove_all(root);
  int files = 0;
  std::vector<std::string> differing;
  for (const auto& name : experiment_names()) {
    for (int rep : {0, 1})
      emit_reports(run_experiment(name, cfg, name == "toy1d" ? std::vector<ArchVariant>{} : archs), name, cfg,
                   root / (name + std::to_string(rep)), 0.0);
    for (const auto& entry : std::filesystem::directory_iterator(root / (name + "0"))) {
      if (entry.path().extension() != ".csv") continue;
      auto read = [](const std::filesystem::path& p) {
        std::ifstream in(p, std::ios::binary);
        std::stringstream ss;
        ss << in.rdbuf();
        return ss.str();
      };
      ++files;
      if (read(entry.path()) != read(root / (name + "1") / entry.path().filename()))
        differing.push_back(name + "/" + entry.path().filename().string());
    }
  }
  std::filesystem::remove_all(root);
  std::string diff;
  for (const auto& d : differing) diff += " " + d;
  return {differing.empty() && files > 0,
          fmt("%d CSV files over %zu experiments re-run byte-identical%s%s", files, experiment_names().size(),
              differing.empty() ? "" : "; differing:", diff.c_str())};
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
      {"gradient-algebra oracles agree", gradient_oracles},
      {"path counts and inclusion", path_counts},
      {"toy chain weight modes", toy_chains},
      {"finite-difference suite", finite_differences},
      {"direct/full gradient consistency", dg_consistency},
      {"auto-compression trend", compression_trend},
      {"truncation soundness", truncation},
      {"pruning mechanics", pruning},
      {"continual learning orderings", continual},
      {"noise harness", noise_harness},
      {"reproducibility", reproducibility},
  };
  std::set<int> only;
  for (int k = 1; k < argc; ++k) only.insert(std::atoi(argv[k]));
  int failed = 0;
  for (std::size_t k = 0; k < criteria.size(); ++k) {
    const int id = static_cast<int>(k + 1);
    if (!only.empty() && !only.contains(id)) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = criteria[k].second();
    } catch (const std::exception& e) {
      o = {false, std::string("threw: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::printf("%s %2d %s: %s (%.1fs)\n", o.pass ? "PASS" : "FAIL", id, criteria[k].first.c_str(),
                o.detail.c_str(), secs);
    std::fflush(stdout);
    failed += !o.pass;
  }
  return failed == 0 ? 0 : 1;
}
