#include "acn/train.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <ostream>

#include "acn/error.hpp"
#include "acn/format.hpp"
#include "acn/parallel.hpp"

namespace acn {

// ---- optimizer ----------------------------------------------------------------

OptimState make_optim_state(const std::deque<Parameter>& params, AdamWConfig hp) {
  OptimState s;
  s.hp = hp;
  for (const auto& p : params) {
    s.m.emplace_back(p.value.shape(), 0.0);
    s.v.emplace_back(p.value.shape(), 0.0);
  }
  return s;
}

void adamw_step(std::deque<Parameter>& params, OptimState& state, double lr_t) {
  if (state.m.size() != params.size()) throw StateError("optimizer state does not match parameters");
  const AdamWConfig& hp = state.hp;
  ++state.step;
  const double c1 = 1.0 - std::pow(hp.beta1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(hp.beta2, static_cast<double>(state.step));
  for (std::size_t k = 0; k < params.size(); ++k) {
    Parameter& p = params[k];
    if (!p.requires_grad || !p.has_grad()) continue;
    if (state.m[k].shape() != p.value.shape()) throw StateError("moment shape mismatch for " + p.name);
    if (!p.grad.all_finite()) throw NumericError("non-finite gradient for " + p.name);
    auto w = p.value.data();
    auto g = p.grad.data();
    auto m = state.m[k].data();
    auto v = state.v[k].data();
    const double shrink = 1.0 - lr_t * hp.weight_decay;
    for (std::size_t i = 0; i < w.size(); ++i) {
      if (p.masked() && !p.mask[i]) continue;
      m[i] = hp.beta1 * m[i] + (1.0 - hp.beta1) * g[i];
      v[i] = hp.beta2 * v[i] + (1.0 - hp.beta2) * g[i] * g[i];
      const double mhat = m[i] / c1, vhat = v[i] / c2;
      w[i] = w[i] * shrink - lr_t * mhat / (std::sqrt(vhat) + hp.eps);
    }
    p.apply_mask();
  }
}

double cosine_lr(long step, long warmup_steps, long total_steps, double lr_max) {
  if (warmup_steps < 0 || warmup_steps >= total_steps)
    throw InputError("warmup must be shorter than the schedule");
  if (step < 0 || step > total_steps) throw InputError("schedule step out of range");
  if (step < warmup_steps)
    return lr_max * static_cast<double>(step) / static_cast<double>(warmup_steps);
  const double t = static_cast<double>(step - warmup_steps) /
                   static_cast<double>(total_steps - warmup_steps);
  return 0.5 * lr_max * (1.0 + std::cos(std::numbers::pi * t));
}

// ---- losses ---------------------------------------------------------------------

std::string_view to_string(LossKind k) {
  switch (k) {
    case LossKind::Standard: return "standard";
    case LossKind::DgOnly: return "dgonly";
    case LossKind::DeepSup: return "deepsup";
    case LossKind::Aligned: return "aligned";
    case LossKind::LayerSkip: return "layerskip";
  }
  return "?";
}

LossKind parse_loss_kind(std::string_view s) {
  if (s == "standard") return LossKind::Standard;
  if (s == "dgonly") return LossKind::DgOnly;
  if (s == "deepsup") return LossKind::DeepSup;
  if (s == "aligned") return LossKind::Aligned;
  if (s == "layerskip") return LossKind::LayerSkip;
  throw ConfigError("unknown loss mode '" + std::string(s) + "'");
}

void LossMode::validate(Connectivity c) const {
  if (!(lambda >= 0.0)) throw ConfigError("loss.lambda: must be non-negative");
  if (!(p_max >= 0.0 && p_max <= 1.0)) throw ConfigError("loss.p_max: must lie in [0, 1]");
  if (!(e_scale >= 0.0)) throw ConfigError("loss.e_scale: must be non-negative");
  if (c_rot < 1) throw ConfigError("loss.c_rot: must be positive");
  if (kind == LossKind::DgOnly && c != Connectivity::ACN)
    throw ConfigError("loss.mode: dgonly needs ACN connectivity");
  if (kind == LossKind::LayerSkip && c != Connectivity::Residual)
    throw ConfigError("loss.mode: layerskip needs residual connectivity");
}

double layerskip_drop_rate(const LossMode& mode, int block, int depth, int epoch, int epochs) {
  const double ramp = std::min(1.0, epoch * mode.e_scale / std::max(1, epochs));
  return mode.p_max * static_cast<double>(block) / depth * ramp;
}

int layerskip_exit(const LossMode& mode, int depth, int epoch) {
  if (depth < 2) return depth;
  return 1 + (epoch / mode.c_rot) % (depth - 1);
}

std::vector<double> aligned_weights(int depth) {
  std::vector<double> w(static_cast<std::size_t>(depth));
  const double total = depth * (depth + 1) / 2.0;
  for (int k = 1; k <= depth; ++k) w[static_cast<std::size_t>(k - 1)] = k / total;
  return w;
}

LossOutput compute_loss(Network& net, Tape& tape, const Tensor& x, std::span<const int> labels,
                        const LossMode& mode, int epoch, int epochs, Rng* rng, int head) {
  mode.validate(net.config().connectivity);
  const int depth = net.depth();
  ForwardOptions opt;
  opt.detach_block_inputs = mode.kind == LossKind::DgOnly;
  if (mode.kind == LossKind::LayerSkip) {
    if (!rng) throw InputError("layerskip needs a random stream");
    opt.drop.resize(static_cast<std::size_t>(depth));
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int l = 1; l <= depth; ++l)
      opt.drop[static_cast<std::size_t>(l - 1)] =
          u(*rng) < layerskip_drop_rate(mode, l, depth, epoch, epochs);
  }
  const auto outs = net.forward_collect(tape, x, opt);
  auto exit_logits = [&](int k) { return net.predict(tape, net.aggregate(outs, k), head); };
  Var final_logits = exit_logits(depth);
  Var loss = softmax_cross_entropy(final_logits, labels);
  switch (mode.kind) {
    case LossKind::Standard:
    case LossKind::DgOnly:
      break;
    case LossKind::DeepSup:
      if (mode.lambda > 0.0)
        for (int k = 1; k < depth; ++k)
          loss = add(loss, scale(softmax_cross_entropy(exit_logits(k), labels), mode.lambda));
      break;
    case LossKind::Aligned: {
      const auto w = aligned_weights(depth);
      loss = scale(loss, w.back());
      for (int k = 1; k < depth; ++k)
        loss = add(loss, scale(softmax_cross_entropy(exit_logits(k), labels),
                               w[static_cast<std::size_t>(k - 1)]));
      break;
    }
    case LossKind::LayerSkip: {
      const int e = layerskip_exit(mode, depth, epoch);
      if (e < depth) loss = add(loss, softmax_cross_entropy(exit_logits(e), labels));
      break;
    }
  }
  return {loss, final_logits};
}

// ---- instrumentation ---------------------------------------------------------------

std::vector<double> layer_grad_norms(const Network& net) {
  std::vector<double> sq(static_cast<std::size_t>(net.depth()), 0.0);
  const auto& params = net.params();
  for (std::size_t k = 0; k < params.size(); ++k) {
    const int b = net.info()[k].block;
    if (b < 1) continue;
    if (!params[k].has_grad()) throw StateError("no gradient recorded for " + params[k].name);
    for (double g : params[k].grad.data()) sq[static_cast<std::size_t>(b - 1)] += g * g;
  }
  for (auto& s : sq) s = std::sqrt(s);
  return sq;
}

GradVectors split_gradients(Network& net, const Tensor& x, const Objective& objective) {
  if (net.config().connectivity == Connectivity::FFN)
    throw ConfigError("DG/FG decomposition needs ACN or residual connectivity");
  GradVectors out;
  for (bool detach : {false, true}) {
    net.zero_grad();
    Tape tape;
    ForwardOptions opt;
    opt.detach_block_inputs = detach;
    const auto outs = net.forward_collect(tape, x, opt);
    Var loss = objective(tape, net, net.aggregate(outs, net.depth()));
    if (!std::isfinite(loss.value().item())) throw NumericError("DG/FG measurement: non-finite loss");
    tape.backward(loss);
    auto& dst = detach ? out.dg : out.fg;
    for (const auto& p : net.params()) dst.push_back(p.grad);
  }
  net.zero_grad();
  return out;
}

GradDecomp measure_dg_fg(Network& net, const Tensor& x, const Objective& objective) {
  const GradVectors g = split_gradients(net, x, objective);
  GradDecomp d;
  d.layers.resize(static_cast<std::size_t>(net.depth()));
  for (std::size_t k = 0; k < g.fg.size(); ++k) {
    const int b = net.info()[k].block;
    if (b < 1) continue;
    auto& l = d.layers[static_cast<std::size_t>(b - 1)];
    for (std::size_t i = 0; i < g.fg[k].size(); ++i) {
      l.fg_norm += g.fg[k][i] * g.fg[k][i];
      l.dg_norm += g.dg[k][i] * g.dg[k][i];
    }
  }
  for (auto& l : d.layers) {
    l.fg_norm = std::sqrt(l.fg_norm);
    l.dg_norm = std::sqrt(l.dg_norm);
    l.ratio = l.fg_norm > 0.0 ? l.dg_norm / l.fg_norm : std::nan("");
  }
  return d;
}

GradDecomp measure_dg_fg(Network& net, const Tensor& x, std::span<const int> labels) {
  return measure_dg_fg(net, x, [labels](Tape& t, Network& n, Var y) {
    return softmax_cross_entropy(n.predict(t, y), labels);
  });
}

// ---- training loop -----------------------------------------------------------------

void TrainConfig::validate() const {
  if (epochs < 0) throw ConfigError("train.epochs: must be non-negative");
  if (batch == 0) throw ConfigError("train.batch: must be positive");
  if (!(opt.lr >= 0.0)) throw ConfigError("train.lr: must be non-negative");
  if (!(opt.beta1 >= 0.0 && opt.beta1 < 1.0 && opt.beta2 >= 0.0 && opt.beta2 < 1.0))
    throw ConfigError("train.betas: must lie in [0, 1)");
  if (!(opt.eps > 0.0)) throw ConfigError("train.eps: must be positive");
  if (!(opt.weight_decay >= 0.0)) throw ConfigError("train.weight_decay: must be non-negative");
  if (!(warmup_fraction >= 0.0 && warmup_fraction < 1.0))
    throw ConfigError("train.warmup_fraction: must lie in [0, 1)");
  if (dg_every < 0) throw ConfigError("train.dg_every: must be non-negative");
  if (!(divergence_threshold > 0.0)) throw ConfigError("train.divergence_threshold: must be positive");
}

namespace {

int correct_count(const Tensor& logits, std::span<const int> labels) {
  const auto pred = argmax_rows(logits);
  int c = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) c += pred[i] == labels[i];
  return c;
}

void restore(Network& net, const std::vector<Tensor>& snapshot) {
  for (std::size_t k = 0; k < snapshot.size(); ++k) net.params()[k].value = snapshot[k];
  net.zero_grad();
}

}  // namespace

TrainLog train(Network& net, const Dataset& train_set, const Dataset* test_set,
               const TrainConfig& cfg, const TrainHooks& hooks) {
  cfg.validate();
  cfg.mode.validate(net.config().connectivity);
  train_set.validate();
  TrainLog log;
  if (cfg.epochs == 0) return log;

  const std::size_t n = train_set.size();
  const long per_epoch = static_cast<long>((n + cfg.batch - 1) / cfg.batch);
  const long total = per_epoch * cfg.epochs;
  const long warmup = static_cast<long>(cfg.warmup_fraction * static_cast<double>(total));
  OptimState opt = make_optim_state(net.params(), cfg.opt);

  Tensor dg_x;
  std::vector<int> dg_labels;
  if (cfg.dg_every > 0) {
    std::vector<std::size_t> idx(std::min(cfg.dg_batch, n));
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    dg_x = train_set.gather(idx);
    dg_labels = train_set.gather_labels(idx);
  }

  long step = 0;
  std::vector<std::size_t> order(n);
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::vector<Tensor> snapshot;
    for (const auto& p : net.params()) snapshot.push_back(p.value);
    Rng shuffle_rng(derive_seed(cfg.seed, 2 * static_cast<std::uint64_t>(epoch)));
    Rng mode_rng(derive_seed(cfg.seed, 2 * static_cast<std::uint64_t>(epoch) + 1));
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::shuffle(order.begin(), order.end(), shuffle_rng);

    EpochLog e;
    e.epoch = epoch + 1;
    double loss_sum = 0.0;
    long correct = 0;
    std::vector<double> norm_sum(static_cast<std::size_t>(net.depth()), 0.0);
    std::vector<GradDecomp> decomps;

    for (std::size_t start = 0; start < n; start += cfg.batch, ++step) {
      if (cfg.dg_every > 0 && step % cfg.dg_every == 0) {
        decomps.push_back(measure_dg_fg(net, dg_x, dg_labels));
        decomps.back().epoch = epoch + 1;
        decomps.back().step = step;
      }
      const std::span<const std::size_t> idx(order.data() + start, std::min(cfg.batch, n - start));
      const Tensor x = train_set.gather(idx);
      const std::vector<int> labels = train_set.gather_labels(idx);

      net.zero_grad();
      double value = 0.0;
      try {
        Tape tape;
        const LossOutput out =
            compute_loss(net, tape, x, labels, cfg.mode, epoch, cfg.epochs, &mode_rng, cfg.head);
        value = out.loss.value().item();
        if (!(value <= cfg.divergence_threshold))
          throw DivergenceError("loss " + num(value) + " exceeds divergence threshold");
        correct += correct_count(out.logits.value(), labels);
        tape.backward(out.loss);
      } catch (const NumericError& err) {
        restore(net, snapshot);
        throw DivergenceError("training diverged at epoch " + std::to_string(epoch + 1) +
                              ", step " + std::to_string(step) + ": " + err.what() +
                              "; parameters restored to the start of the epoch");
      }
      loss_sum += value * static_cast<double>(idx.size());
      if (cfg.record_layer_norms) {
        const auto norms = layer_grad_norms(net);
        for (std::size_t l = 0; l < norms.size(); ++l) norm_sum[l] += norms[l];
      }
      if (hooks.after_backward) hooks.after_backward(net);
      adamw_step(net.params(), opt, cosine_lr(step + 1, warmup, total, cfg.opt.lr));
      if (hooks.after_step) hooks.after_step(net);
    }
    net.zero_grad();
    if (hooks.end_of_epoch) hooks.end_of_epoch(net, epoch + 1);

    e.train_loss = loss_sum / static_cast<double>(n);
    e.train_acc = static_cast<double>(correct) / static_cast<double>(n);
    if (cfg.record_layer_norms) {
      for (auto& s : norm_sum) s /= static_cast<double>(per_epoch);
      e.layer_norms = std::move(norm_sum);
    }
    if (!decomps.empty()) {
      GradDecomp mean = decomps.front();
      for (std::size_t l = 0; l < mean.layers.size(); ++l) {
        double dg = 0.0, fg = 0.0, ratio = 0.0;
        int defined = 0;
        for (const auto& d : decomps) {
          dg += d.layers[l].dg_norm;
          fg += d.layers[l].fg_norm;
          if (!std::isnan(d.layers[l].ratio)) {
            ratio += d.layers[l].ratio;
            ++defined;
          }
        }
        const auto count = static_cast<double>(decomps.size());
        mean.layers[l] = {dg / count, fg / count, defined ? ratio / defined : std::nan("")};
      }
      e.decomp = mean;
    }
    if (test_set && cfg.eval_each_epoch) {
      const EvalResult r = evaluate(net, *test_set, 256, cfg.head);
      e.test_loss = r.loss;
      e.test_acc = r.accuracy;
    }
    log.epochs.push_back(std::move(e));
  }
  return log;
}

EvalResult evaluate(Network& net, const Dataset& ds, std::size_t batch, int head) {
  ds.validate();
  if (batch == 0) throw InputError("evaluation batch must be positive");
  const std::size_t n = ds.size();
  const std::size_t chunks = (n + batch - 1) / batch;
  std::vector<double> loss(chunks);
  std::vector<int> correct(chunks);
  parallel_for(chunks, [&](std::size_t c) {
    std::vector<std::size_t> idx;
    for (std::size_t i = c * batch; i < std::min(n, (c + 1) * batch); ++i) idx.push_back(i);
    const auto labels = ds.gather_labels(idx);
    Tape tape(false);
    Var z = net.logits(tape, ds.gather(idx), head);
    loss[c] = softmax_cross_entropy(z, labels).value().item() * static_cast<double>(idx.size());
    correct[c] = correct_count(z.value(), labels);
  });
  EvalResult r;
  for (std::size_t c = 0; c < chunks; ++c) {
    r.loss += loss[c];
    r.accuracy += correct[c];
  }
  r.loss /= static_cast<double>(n);
  r.accuracy /= static_cast<double>(n);
  return r;
}

void write_train_csv(std::ostream& os, const TrainLog& log) {
  os << "epoch,split,loss,accuracy\n";
  for (const auto& e : log.epochs) {
    os << e.epoch << ",train," << num(e.train_loss) << ',' << num(e.train_acc) << '\n';
    if (e.test_loss)
      os << e.epoch << ",test," << num(*e.test_loss) << ',' << num(*e.test_acc) << '\n';
  }
}

nlohmann::json train_log_json(const TrainLog& log) {
  auto real = [](double v) { return std::isnan(v) ? nlohmann::json(nullptr) : nlohmann::json(v); };
  nlohmann::json norms = nlohmann::json::array(), decomp = nlohmann::json::array();
  for (const auto& e : log.epochs) {
    norms.push_back(e.layer_norms);
    if (!e.decomp) continue;
    nlohmann::json layers = nlohmann::json::array();
    for (const auto& l : e.decomp->layers)
      layers.push_back({{"dg_norm", l.dg_norm}, {"fg_norm", l.fg_norm}, {"ratio", real(l.ratio)}});
    decomp.push_back({{"epoch", e.epoch}, {"layers", layers}});
  }
  return {{"layer_grad_norms", norms}, {"grad_decomp", decomp}};
}

}  // namespace acn
