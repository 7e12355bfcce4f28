#include "acn/autodiff.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <memory>
#include <numbers>

#include "acn/error.hpp"

namespace acn {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using ConstMapMat = Eigen::Map<const RowMat>;

ConstMapMat as_matrix(const Tensor& t) {
  return ConstMapMat(t.data().data(), static_cast<Eigen::Index>(t.dim(0)),
                     static_cast<Eigen::Index>(t.dim(1)));
}

MapMat as_matrix(Tensor& t) {
  return MapMat(t.data().data(), static_cast<Eigen::Index>(t.dim(0)),
                static_cast<Eigen::Index>(t.dim(1)));
}

void require_same_tape(Var a, Var b, std::string_view op) {
  if (&a.tape() != &b.tape())
    throw InputError(std::string(op) + ": operands live on different tapes");
}

void require_rank2(const Tensor& t, std::string_view op) {
  if (t.rank() != 2)
    throw DimensionError(std::string(op) + ": expected a matrix, got " +
                         shape_str(t.shape()));
}

void accumulate(Tensor& dst, const Tensor& src) {
  auto d = dst.data();
  auto s = src.data();
  for (std::size_t i = 0; i < d.size(); ++i) d[i] += s[i];
}

constexpr double kGeluC = 0.7978845608028654;  // sqrt(2/pi)
constexpr double kGeluA = 0.044715;

}  // namespace

// ---- Parameter ----------------------------------------------------------

Parameter::Parameter(std::string n, Tensor v)
    : name(std::move(n)), value(std::move(v)) {}

void Parameter::zero_grad() {
  if (grad.empty())
    grad = Tensor(value.shape(), 0.0);
  else
    grad.fill(0.0);
}

void Parameter::apply_mask() {
  if (mask.empty()) return;
  auto v = value.data();
  for (std::size_t i = 0; i < v.size(); ++i)
    if (!mask[i]) v[i] = 0.0;
}

// ---- Tape ---------------------------------------------------------------

const Tensor& Var::value() const { return tape_->value(id_); }

Var Tape::push(Node node) {
  nodes_.push_back(std::move(node));
  return Var(this, static_cast<int>(nodes_.size()) - 1);
}

Var Tape::constant(Tensor value) {
  if (!value.all_finite()) throw NumericError("non-finite constant on tape");
  Node n;
  n.op = "constant";
  n.value = std::move(value);
  return push(std::move(n));
}

Var Tape::param(Parameter& p) {
  if (!p.value.all_finite())
    throw NumericError("parameter " + p.name + " holds non-finite values");
  Node n;
  n.op = "param";
  n.value = p.value;
  n.param = &p;
  n.requires_grad = track_grads_ && p.requires_grad;
  return push(std::move(n));
}

Var Tape::detach(Var x) {
  Node n;
  n.op = "detach";
  n.value = x.value();
  return push(std::move(n));
}

Var Tape::record(std::string_view op, Tensor value, std::vector<int> parents,
                 BackwardFn backward) {
  if (!value.all_finite())
    throw NumericError(std::string(op) + " produced a non-finite value");
  Node n;
  n.op = op;
  n.value = std::move(value);
  n.requires_grad = std::any_of(parents.begin(), parents.end(),
                                [this](int p) { return nodes_[p].requires_grad; });
  n.parents = std::move(parents);
  if (n.requires_grad) n.backward = std::move(backward);
  return push(std::move(n));
}

Tensor& Tape::grad(int id) {
  Node& n = nodes_[id];
  if (n.grad.empty()) n.grad = Tensor(n.value.shape(), 0.0);
  return n.grad;
}

void Tape::backward(Var loss) {
  if (&loss.tape() != this) throw InputError("backward: loss is not on this tape");
  if (loss.value().size() != 1)
    throw InputError("backward: loss must be scalar, got shape " +
                     shape_str(loss.shape()));
  for (auto& n : nodes_) n.grad = Tensor();
  if (!nodes_[loss.id()].requires_grad) return;
  grad(loss.id()).fill(1.0);

  for (int id = loss.id(); id >= 0; --id) {
    Node& n = nodes_[id];
    if (n.param && n.requires_grad && n.param->grad.empty())
      n.param->grad = Tensor(n.param->value.shape(), 0.0);
    if (!n.requires_grad || n.grad.empty()) continue;
    if (!n.grad.all_finite())
      throw NumericError("non-finite gradient at " + std::string(n.op));
    if (n.param) {
      accumulate(n.param->grad, n.grad);
    } else if (n.backward) {
      n.backward(*this, n.grad);
    }
  }
}

// ---- ops ----------------------------------------------------------------

Var matmul(Var a, Var b) {
  require_same_tape(a, b, "matmul");
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  require_rank2(av, "matmul");
  require_rank2(bv, "matmul");
  if (av.dim(1) != bv.dim(0))
    throw DimensionError("matmul: inner extents differ, " + shape_str(av.shape()) +
                         " . " + shape_str(bv.shape()));
  Tensor out({av.dim(0), bv.dim(1)});
  as_matrix(out).noalias() = as_matrix(av) * as_matrix(bv);
  const int ia = a.id(), ib = b.id();
  return a.tape().record("matmul", std::move(out), {ia, ib},
                         [ia, ib](Tape& t, const Tensor& g) {
                           if (t.requires_grad(ia))
                             as_matrix(t.grad(ia)).noalias() +=
                                 as_matrix(g) * as_matrix(t.value(ib)).transpose();
                           if (t.requires_grad(ib))
                             as_matrix(t.grad(ib)).noalias() +=
                                 as_matrix(t.value(ia)).transpose() * as_matrix(g);
                         });
}

static Var elementwise_binary(Var a, Var b, std::string_view op, double sign_b) {
  require_same_tape(a, b, op);
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  if (av.shape() != bv.shape())
    throw DimensionError(std::string(op) + ": shapes differ, " + shape_str(av.shape()) +
                         " vs " + shape_str(bv.shape()));
  Tensor out = av;
  auto o = out.data();
  auto bd = bv.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] += sign_b * bd[i];
  const int ia = a.id(), ib = b.id();
  return a.tape().record(op, std::move(out), {ia, ib},
                         [ia, ib, sign_b](Tape& t, const Tensor& g) {
                           if (t.requires_grad(ia)) accumulate(t.grad(ia), g);
                           if (t.requires_grad(ib)) {
                             auto gb = t.grad(ib).data();
                             auto gd = g.data();
                             for (std::size_t i = 0; i < gb.size(); ++i)
                               gb[i] += sign_b * gd[i];
                           }
                         });
}

Var add(Var a, Var b) { return elementwise_binary(a, b, "add", 1.0); }
Var sub(Var a, Var b) { return elementwise_binary(a, b, "sub", -1.0); }

Var mul(Var a, Var b) {
  require_same_tape(a, b, "mul");
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  if (av.shape() != bv.shape())
    throw DimensionError("mul: shapes differ, " + shape_str(av.shape()) + " vs " +
                         shape_str(bv.shape()));
  Tensor out = av;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= bv[i];
  const int ia = a.id(), ib = b.id();
  return a.tape().record("mul", std::move(out), {ia, ib},
                         [ia, ib](Tape& t, const Tensor& g) {
                           if (t.requires_grad(ia)) {
                             auto& ga = t.grad(ia);
                             const auto& bv = t.value(ib);
                             for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bv[i];
                           }
                           if (t.requires_grad(ib)) {
                             auto& gb = t.grad(ib);
                             const auto& av = t.value(ia);
                             for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * av[i];
                           }
                         });
}

Var scale(Var x, double s) {
  Tensor out = x.value();
  for (auto& v : out.values()) v *= s;
  const int ix = x.id();
  return x.tape().record("scale", std::move(out), {ix}, [ix, s](Tape& t, const Tensor& g) {
    auto& gx = t.grad(ix);
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += s * g[i];
  });
}

Var add_bias(Var x, Var bias) {
  require_same_tape(x, bias, "add_bias");
  const Tensor& xv = x.value();
  const Tensor& bv = bias.value();
  require_rank2(xv, "add_bias");
  if (bv.size() != xv.dim(1))
    throw DimensionError("add_bias: bias of " + shape_str(bv.shape()) +
                         " does not match rows of width " + std::to_string(xv.dim(1)));
  Tensor out = xv;
  const std::size_t n = xv.dim(0), d = xv.dim(1);
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t c = 0; c < d; ++c) out[r * d + c] += bv[c];
  const int ix = x.id(), ib = bias.id();
  return x.tape().record("add_bias", std::move(out), {ix, ib},
                         [ix, ib, n, d](Tape& t, const Tensor& g) {
                           if (t.requires_grad(ix)) accumulate(t.grad(ix), g);
                           if (t.requires_grad(ib)) {
                             auto& gb = t.grad(ib);
                             for (std::size_t r = 0; r < n; ++r)
                               for (std::size_t c = 0; c < d; ++c) gb[c] += g[r * d + c];
                           }
                         });
}

Var sum(Var x) {
  double s = 0.0;
  for (double v : x.value().data()) s += v;
  const int ix = x.id();
  return x.tape().record("sum", Tensor::scalar(s), {ix}, [ix](Tape& t, const Tensor& g) {
    auto& gx = t.grad(ix);
    const double gv = g[0];
    for (auto& v : gx.values()) v += gv;
  });
}

Var reshape(Var x, Shape shape) {
  Tensor out = x.value().reshaped(std::move(shape));
  const int ix = x.id();
  return x.tape().record("reshape", std::move(out), {ix}, [ix](Tape& t, const Tensor& g) {
    auto& gx = t.grad(ix);
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
  });
}

double gelu_value(double x) {
  return 0.5 * x * (1.0 + std::tanh(kGeluC * (x + kGeluA * x * x * x)));
}

Var gelu(Var x) {
  Tensor out = x.value();
  // Derivative is kept from the forward pass so backward needs no tanh.
  auto slope = std::make_shared<std::vector<double>>(out.size());
  auto o = out.data();
  for (std::size_t i = 0; i < o.size(); ++i) {
    const double v = o[i];
    const double th = std::tanh(kGeluC * (v + kGeluA * v * v * v));
    const double du = kGeluC * (1.0 + 3.0 * kGeluA * v * v);
    (*slope)[i] = 0.5 * (1.0 + th) + 0.5 * v * (1.0 - th * th) * du;
    o[i] = 0.5 * v * (1.0 + th);
  }
  const int ix = x.id();
  return x.tape().record("gelu", std::move(out), {ix}, [ix, slope](Tape& t, const Tensor& g) {
    auto gx = t.grad(ix).data();
    const auto& s = *slope;
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * s[i];
  });
}

Var layer_norm(Var x, Var gamma, Var beta, double eps) {
  require_same_tape(x, gamma, "layer_norm");
  require_same_tape(x, beta, "layer_norm");
  if (!(eps > 0.0)) throw InputError("layer_norm: eps must be positive");
  const Tensor& xv = x.value();
  const std::size_t d = xv.shape().back();
  if (gamma.value().size() != d || beta.value().size() != d)
    throw DimensionError("layer_norm: affine parameters do not match last extent " +
                         std::to_string(d));
  const std::size_t rows = xv.size() / d;
  const Tensor& gv = gamma.value();
  const Tensor& bv = beta.value();

  Tensor out(xv.shape());
  std::vector<double> xhat(xv.size());
  std::vector<double> inv_std(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* row = xv.data().data() + r * d;
    double mean = 0.0;
    for (std::size_t c = 0; c < d; ++c) mean += row[c];
    mean /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t c = 0; c < d; ++c) var += (row[c] - mean) * (row[c] - mean);
    var /= static_cast<double>(d);
    const double inv = 1.0 / std::sqrt(var + eps);
    inv_std[r] = inv;
    for (std::size_t c = 0; c < d; ++c) {
      const double h = (row[c] - mean) * inv;
      xhat[r * d + c] = h;
      out[r * d + c] = gv[c] * h + bv[c];
    }
  }

  const int ix = x.id(), ig = gamma.id(), ib = beta.id();
  return x.tape().record(
      "layer_norm", std::move(out), {ix, ig, ib},
      [ix, ig, ib, d, rows, xhat = std::move(xhat), inv_std = std::move(inv_std)](
          Tape& t, const Tensor& g) {
        if (t.requires_grad(ig)) {
          auto& gg = t.grad(ig);
          for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t c = 0; c < d; ++c) gg[c] += g[r * d + c] * xhat[r * d + c];
        }
        if (t.requires_grad(ib)) {
          auto& gb = t.grad(ib);
          for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t c = 0; c < d; ++c) gb[c] += g[r * d + c];
        }
        if (t.requires_grad(ix)) {
          auto& gx = t.grad(ix);
          const auto& gv = t.value(ig);
          const double dd = static_cast<double>(d);
          for (std::size_t r = 0; r < rows; ++r) {
            double s1 = 0.0, s2 = 0.0;
            for (std::size_t c = 0; c < d; ++c) {
              const double dh = g[r * d + c] * gv[c];
              s1 += dh;
              s2 += dh * xhat[r * d + c];
            }
            for (std::size_t c = 0; c < d; ++c) {
              const double dh = g[r * d + c] * gv[c];
              gx[r * d + c] += inv_std[r] / dd * (dd * dh - s1 - xhat[r * d + c] * s2);
            }
          }
        }
      });
}

Var transpose_groups(Var x, std::size_t groups) {
  const Tensor& xv = x.value();
  require_rank2(xv, "transpose_groups");
  if (groups == 0 || xv.dim(0) % groups != 0)
    throw DimensionError("transpose_groups: " + std::to_string(xv.dim(0)) +
                         " rows do not split into " + std::to_string(groups) + " groups");
  const std::size_t rows = xv.dim(0) / groups, cols = xv.dim(1);
  Tensor out({groups * cols, rows});
  for (std::size_t g = 0; g < groups; ++g)
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < cols; ++c)
        out[(g * cols + c) * rows + r] = xv[(g * rows + r) * cols + c];
  const int ix = x.id();
  return x.tape().record("transpose_groups", std::move(out), {ix},
                         [ix, groups, rows, cols](Tape& t, const Tensor& gout) {
                           auto& gx = t.grad(ix);
                           for (std::size_t g = 0; g < groups; ++g)
                             for (std::size_t r = 0; r < rows; ++r)
                               for (std::size_t c = 0; c < cols; ++c)
                                 gx[(g * rows + r) * cols + c] +=
                                     gout[(g * cols + c) * rows + r];
                         });
}

Var mean_rows(Var x, std::size_t groups) {
  const Tensor& xv = x.value();
  require_rank2(xv, "mean_rows");
  if (groups == 0 || xv.dim(0) % groups != 0)
    throw DimensionError("mean_rows: " + std::to_string(xv.dim(0)) +
                         " rows do not split into " + std::to_string(groups) + " groups");
  const std::size_t rows = xv.dim(0) / groups, cols = xv.dim(1);
  Tensor out({groups, cols});
  const double inv = 1.0 / static_cast<double>(rows);
  for (std::size_t g = 0; g < groups; ++g)
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < cols; ++c) out[g * cols + c] += xv[(g * rows + r) * cols + c];
  for (auto& v : out.values()) v *= inv;
  const int ix = x.id();
  return x.tape().record("mean_rows", std::move(out), {ix},
                         [ix, groups, rows, cols, inv](Tape& t, const Tensor& gout) {
                           auto& gx = t.grad(ix);
                           for (std::size_t g = 0; g < groups; ++g)
                             for (std::size_t r = 0; r < rows; ++r)
                               for (std::size_t c = 0; c < cols; ++c)
                                 gx[(g * rows + r) * cols + c] += gout[g * cols + c] * inv;
                         });
}

Var softmax_cross_entropy(Var logits, std::span<const int> labels) {
  const Tensor& z = logits.value();
  require_rank2(z, "softmax_cross_entropy");
  const std::size_t b = z.dim(0), classes = z.dim(1);
  if (labels.size() != b)
    throw DimensionError("softmax_cross_entropy: " + std::to_string(labels.size()) +
                         " labels for " + std::to_string(b) + " rows");
  std::vector<double> probs(z.size());
  double loss = 0.0;
  for (std::size_t r = 0; r < b; ++r) {
    const int y = labels[r];
    if (y < 0 || static_cast<std::size_t>(y) >= classes)
      throw InputError("softmax_cross_entropy: label " + std::to_string(y) +
                       " outside [0, " + std::to_string(classes) + ")");
    const double* row = z.data().data() + r * classes;
    const double m = *std::max_element(row, row + classes);
    double s = 0.0;
    for (std::size_t c = 0; c < classes; ++c) s += std::exp(row[c] - m);
    const double lse = m + std::log(s);
    for (std::size_t c = 0; c < classes; ++c) probs[r * classes + c] = std::exp(row[c] - lse);
    loss += lse - row[y];
  }
  loss /= static_cast<double>(b);
  std::vector<int> lab(labels.begin(), labels.end());
  const int iz = logits.id();
  return logits.tape().record(
      "softmax_cross_entropy", Tensor::scalar(loss), {iz},
      [iz, b, classes, probs = std::move(probs), lab = std::move(lab)](Tape& t,
                                                                       const Tensor& g) {
        auto& gz = t.grad(iz);
        const double s = g[0] / static_cast<double>(b);
        for (std::size_t r = 0; r < b; ++r)
          for (std::size_t c = 0; c < classes; ++c) {
            const double onehot = static_cast<int>(c) == lab[r] ? 1.0 : 0.0;
            gz[r * classes + c] += s * (probs[r * classes + c] - onehot);
          }
      });
}

Var mse(Var a, Var b) {
  require_same_tape(a, b, "mse");
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  if (av.shape() != bv.shape())
    throw DimensionError("mse: shapes differ, " + shape_str(av.shape()) + " vs " +
                         shape_str(bv.shape()));
  double s = 0.0;
  for (std::size_t i = 0; i < av.size(); ++i) s += (av[i] - bv[i]) * (av[i] - bv[i]);
  const double n = static_cast<double>(av.size());
  const int ia = a.id(), ib = b.id();
  return a.tape().record("mse", Tensor::scalar(s / n), {ia, ib},
                         [ia, ib, n](Tape& t, const Tensor& g) {
                           const auto& av = t.value(ia);
                           const auto& bv = t.value(ib);
                           const double k = 2.0 * g[0] / n;
                           if (t.requires_grad(ia)) {
                             auto& ga = t.grad(ia);
                             for (std::size_t i = 0; i < av.size(); ++i) ga[i] += k * (av[i] - bv[i]);
                           }
                           if (t.requires_grad(ib)) {
                             auto& gb = t.grad(ib);
                             for (std::size_t i = 0; i < av.size(); ++i) gb[i] -= k * (av[i] - bv[i]);
                           }
                         });
}

std::vector<int> argmax_rows(const Tensor& logits) {
  const std::size_t b = logits.dim(0), classes = logits.dim(1);
  std::vector<int> out(b);
  for (std::size_t r = 0; r < b; ++r) {
    const double* row = logits.data().data() + r * classes;
    out[r] = static_cast<int>(std::max_element(row, row + classes) - row);
  }
  return out;
}

}  // namespace acn
