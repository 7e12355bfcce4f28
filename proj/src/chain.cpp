#include "acn/chain.hpp"

#include <algorithm>
#include <cmath>
#include <ostream>

#include "acn/error.hpp"
#include "acn/rng.hpp"

namespace acn::chain {

std::string_view to_string(Arch a) {
  switch (a) {
    case Arch::FFN: return "ffn";
    case Arch::ResNet: return "resnet";
    case Arch::ACN: return "acn";
  }
  return "?";
}

Arch parse_arch(std::string_view s) {
  if (s == "ffn") return Arch::FFN;
  if (s == "resnet" || s == "residual") return Arch::ResNet;
  if (s == "acn") return Arch::ACN;
  throw InputError("unknown architecture '" + std::string(s) + "'");
}

std::string_view to_string(InitKind k) {
  return k == InitKind::Uniform ? "uniform" : "normal";
}

namespace {

void check_layer(const Chain1D& chain, int i) {
  if (chain.depth() < 1) throw InputError("chain needs at least one layer");
  if (i < 1 || i > chain.depth())
    throw InputError("layer index " + std::to_string(i) + " outside [1, " +
                     std::to_string(chain.depth()) + "]");
}

}  // namespace

double forward_1d(Arch arch, const Chain1D& chain) {
  if (chain.depth() < 1) throw InputError("chain needs at least one layer");
  switch (arch) {
    case Arch::FFN: {
      double p = 1.0;
      for (double w : chain.weights) p *= w;
      return p * chain.x0;
    }
    case Arch::ResNet: {
      double p = 1.0;
      for (double w : chain.weights) p *= 1.0 + w;
      return p * chain.x0;
    }
    case Arch::ACN: {
      double s = 1.0, p = 1.0;
      for (double w : chain.weights) {
        p *= w;
        s += p;
      }
      return s * chain.x0;
    }
  }
  return 0.0;
}

double forward_term(Arch arch, const Chain1D& chain, int i) {
  check_layer(chain, i);
  double p = 1.0;
  for (int m = 1; m < i; ++m) p *= arch == Arch::ResNet ? 1.0 + chain.w(m) : chain.w(m);
  return p;
}

double backward_term(Arch arch, const Chain1D& chain, int i) {
  check_layer(chain, i);
  const int depth = chain.depth();
  switch (arch) {
    case Arch::FFN: {
      double p = 1.0;
      for (int k = i + 1; k <= depth; ++k) p *= chain.w(k);
      return p;
    }
    case Arch::ResNet: {
      double p = 1.0;
      for (int k = i + 1; k <= depth; ++k) p *= 1.0 + chain.w(k);
      return p;
    }
    case Arch::ACN: {
      double s = 1.0, p = 1.0;
      for (int j = i + 1; j <= depth; ++j) {
        p *= chain.w(j);
        s += p;
      }
      return s;
    }
  }
  return 0.0;
}

double grad_closed_form(Arch arch, const Chain1D& chain, int i) {
  return backward_term(arch, chain, i) * forward_term(arch, chain, i) * chain.x0;
}

PathSet enumerate_backward_paths(Arch arch, int depth, int i) {
  if (depth < 1 || i < 1 || i > depth)
    throw InputError("layer index " + std::to_string(i) + " outside [1, " +
                     std::to_string(depth) + "]");
  const int span = depth - i;
  if (span > kMaxEnumerationSpan)
    throw InputError("enumeration of " + std::to_string(span) +
                     " downstream layers exceeds the limit of " +
                     std::to_string(kMaxEnumerationSpan));
  PathSet out;
  switch (arch) {
    case Arch::FFN: {
      Path p;
      for (int k = i + 1; k <= depth; ++k) p.push_back(k);
      out.insert(std::move(p));
      break;
    }
    case Arch::ACN: {
      out.insert(Path{});
      Path p;
      for (int j = i + 1; j <= depth; ++j) {
        p.push_back(j);
        out.insert(p);
      }
      break;
    }
    case Arch::ResNet: {
      const std::uint64_t count = std::uint64_t{1} << span;
      for (std::uint64_t bits = 0; bits < count; ++bits) {
        Path p;
        for (int b = 0; b < span; ++b)
          if (bits >> b & 1U) p.push_back(i + 1 + b);
        out.insert(std::move(p));
      }
      break;
    }
  }
  return out;
}

double path_product(const Chain1D& chain, const Path& path) {
  double p = 1.0;
  for (int k : path) p *= chain.w(k);
  return p;
}

namespace {

// Neumaier compensated sum: path products can cancel heavily when some w_j is near -1.
struct CompensatedSum {
  double sum = 0.0, carry = 0.0;
  void add(double v) {
    const double t = sum + v;
    carry += std::abs(sum) >= std::abs(v) ? (sum - t) + v : (v - t) + sum;
    sum = t;
  }
  double value() const { return sum + carry; }
};

}  // namespace

double grad_by_paths(Arch arch, const Chain1D& chain, int i) {
  const double fwd = forward_term(arch, chain, i);
  CompensatedSum s;
  for (const Path& p : enumerate_backward_paths(arch, chain.depth(), i)) s.add(path_product(chain, p));
  return s.value() * fwd * chain.x0;
}

Inclusion path_set_inclusion(int depth, int i) {
  const PathSet ffn = enumerate_backward_paths(Arch::FFN, depth, i);
  const PathSet acn = enumerate_backward_paths(Arch::ACN, depth, i);
  const PathSet res = enumerate_backward_paths(Arch::ResNet, depth, i);
  Inclusion r;
  r.ffn_in_acn = std::includes(acn.begin(), acn.end(), ffn.begin(), ffn.end());
  r.acn_in_resnet = std::includes(res.begin(), res.end(), acn.begin(), acn.end());
  r.ffn_acn_strict = r.ffn_in_acn && acn.size() > ffn.size();
  r.acn_resnet_strict = r.acn_in_resnet && res.size() > acn.size();
  return r;
}

GradParts decompose_gradient(Arch arch, const Chain1D& chain, int i) {
  const double base = forward_term(arch, chain, i) * chain.x0;
  GradParts g;
  CompensatedSum ng;
  for (const Path& p : enumerate_backward_paths(arch, chain.depth(), i)) {
    if (p.empty())
      g.dg += base;
    else
      ng.add(path_product(chain, p));
  }
  g.ng = ng.value() * base;
  g.fg = g.dg + g.ng;
  return g;
}

// ---- toy regression -----------------------------------------------------

double toy_loss(Arch arch, const std::vector<double>& w, double mean_x2, double slope) {
  const double c = forward_1d(arch, Chain1D{w, 1.0});
  return (c - slope) * (c - slope) * mean_x2;
}

ToyRun train_toy_chain(Arch arch, std::vector<double> init, double mean_x2,
                       const ToyConfig& cfg) {
  ToyRun run;
  run.arch = arch;
  run.init = cfg.init;
  Chain1D chain{std::move(init), 1.0};
  const int depth = chain.depth();
  std::vector<double> step(static_cast<std::size_t>(depth));
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    // L = mean_n (c x_n - s x_n)^2, so dL/dw_i = 2 (c - s) mean(x^2) dc/dw_i.
    const double c = forward_1d(arch, chain);
    const double outer = 2.0 * (c - cfg.target_slope) * mean_x2;
    for (int i = 1; i <= depth; ++i)
      step[static_cast<std::size_t>(i - 1)] = cfg.lr * outer * grad_closed_form(arch, chain, i);
    bool ok = true;
    for (std::size_t k = 0; k < step.size(); ++k) {
      chain.weights[k] -= step[k];
      ok = ok && std::isfinite(chain.weights[k]) && std::abs(chain.weights[k]) < 1e6;
    }
    if (!ok) {
      run.diverged = true;
      break;
    }
  }
  run.weights = chain.weights;
  run.final_loss = run.diverged ? std::nan("")
                                : toy_loss(arch, chain.weights, mean_x2, cfg.target_slope);
  if (!run.diverged && !std::isfinite(run.final_loss)) run.diverged = true;
  return run;
}

std::vector<ToyRun> run_toy_experiment(const ToyConfig& cfg) {
  if (cfg.runs < 1) throw InputError("toy experiment needs at least one run");
  if (cfg.layers < 1 || cfg.samples < 1 || cfg.epochs < 0)
    throw InputError("toy experiment: layers and samples must be positive");
  std::vector<ToyRun> out;
  out.reserve(static_cast<std::size_t>(cfg.runs) * 2);
  for (int r = 0; r < cfg.runs; ++r) {
    Rng rng(derive_seed(cfg.seed, static_cast<std::uint64_t>(r)));
    std::uniform_real_distribution<double> xdist(-cfg.x_range, cfg.x_range);
    double mean_x2 = 0.0;
    for (int n = 0; n < cfg.samples; ++n) {
      const double x = xdist(rng);
      mean_x2 += x * x;
    }
    mean_x2 /= cfg.samples;

    std::vector<double> init(static_cast<std::size_t>(cfg.layers));
    if (cfg.init == InitKind::Uniform) {
      std::uniform_real_distribution<double> wdist(-cfg.init_scale, cfg.init_scale);
      for (auto& w : init) w = wdist(rng);
    } else {
      std::normal_distribution<double> wdist(0.0, cfg.init_scale);
      for (auto& w : init) w = wdist(rng);
    }
    for (Arch arch : {Arch::ResNet, Arch::ACN}) {
      ToyRun run = train_toy_chain(arch, init, mean_x2, cfg);
      run.run_id = r;
      out.push_back(std::move(run));
    }
  }
  return out;
}

void write_toy_csv(std::ostream& os, const std::vector<ToyRun>& runs) {
  os << "run_id,arch,init_kind,w1,w2,w3,final_loss,diverged\n";
  auto num = [](double v) {
    if (std::isnan(v)) return std::string("nan");
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return std::string(buf);
  };
  for (const auto& r : runs) {
    os << r.run_id << ',' << to_string(r.arch) << ',' << to_string(r.init);
    for (std::size_t k = 0; k < 3; ++k)
      os << ',' << (k < r.weights.size() ? num(r.weights[k]) : std::string());
    os << ',' << num(r.final_loss) << ',' << (r.diverged ? 1 : 0) << '\n';
  }
}

}  // namespace acn::chain
