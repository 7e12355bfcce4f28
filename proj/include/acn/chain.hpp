#pragma once

// Exact algebra of one-dimensional linear chains x_i = w_i x_{i-1} under the
// three connectivity patterns, plus exhaustive backward-path enumeration.

#include <cstdint>
#include <iosfwd>
#include <set>
#include <string>
#include <string_view>
#include <vector>

namespace acn::chain {

enum class Arch { FFN, ResNet, ACN };

std::string_view to_string(Arch a);
Arch parse_arch(std::string_view s);

struct Chain1D {
  std::vector<double> weights;  // w_1 .. w_L
  double x0 = 1.0;

  int depth() const { return static_cast<int>(weights.size()); }
  double w(int i) const { return weights[static_cast<std::size_t>(i - 1)]; }
};

// A backward path: the 1-based indices of the weights it multiplies, in
// ascending order. The empty path is the direct "1" term.
using Path = std::vector<int>;
using PathSet = std::set<Path>;

// Largest L - i accepted by enumerate_backward_paths.
inline constexpr int kMaxEnumerationSpan = 24;

double forward_1d(Arch arch, const Chain1D& chain);

// Signal reaching layer i from below (excluding x0).
double forward_term(Arch arch, const Chain1D& chain, int i);
// Sum over all backward paths from the output to layer i.
double backward_term(Arch arch, const Chain1D& chain, int i);
// d y / d w_i = backward_term * forward_term * x0.
double grad_closed_form(Arch arch, const Chain1D& chain, int i);

PathSet enumerate_backward_paths(Arch arch, int depth, int i);
double path_product(const Chain1D& chain, const Path& path);
// Independent oracle: sum over enumerated paths of product * forward * x0.
double grad_by_paths(Arch arch, const Chain1D& chain, int i);

struct Inclusion {
  bool ffn_in_acn = false;
  bool acn_in_resnet = false;
  bool ffn_acn_strict = false;
  bool acn_resnet_strict = false;
};

Inclusion path_set_inclusion(int depth, int i);

struct GradParts {
  double dg = 0.0;  // empty-path contribution
  double ng = 0.0;  // all non-empty paths
  double fg = 0.0;  // dg + ng
};

GradParts decompose_gradient(Arch arch, const Chain1D& chain, int i);

// ---- toy regression y = 2x ----------------------------------------------

enum class InitKind { Uniform, Normal };

std::string_view to_string(InitKind k);

struct ToyConfig {
  int runs = 1000;
  int epochs = 300;
  int layers = 3;
  int samples = 1000;
  double x_range = 10.0;
  // Full-batch gradient descent step. Converges within 300 epochs for both
  // architectures with inputs in [-10, 10].
  double lr = 1e-3;
  InitKind init = InitKind::Uniform;
  double init_scale = 1.0;  // half-width for Uniform, sigma for Normal
  double target_slope = 2.0;
  std::uint64_t seed = 7;
};

struct ToyRun {
  int run_id = 0;
  Arch arch = Arch::ACN;
  InitKind init = InitKind::Uniform;
  std::vector<double> weights;
  double final_loss = 0.0;
  bool diverged = false;
};

// Mean squared error of y_hat = c(w) x against target_slope * x.
double toy_loss(Arch arch, const std::vector<double>& w, double mean_x2, double slope);

// Trains one chain from `init` on inputs with second moment mean_x2.
ToyRun train_toy_chain(Arch arch, std::vector<double> init, double mean_x2,
                       const ToyConfig& cfg);

// Each run draws its own inputs and initial weights (shared by both
// architectures) from a seed derived from cfg.seed and the run index.
// Results are ordered by run index, ResNet before ACN.
std::vector<ToyRun> run_toy_experiment(const ToyConfig& cfg);

void write_toy_csv(std::ostream& os, const std::vector<ToyRun>& runs);

}  // namespace acn::chain
