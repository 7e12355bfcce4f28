#include <algorithm>
#include <cmath>
#include <map>
#include <sstream>

#include "acn/error.hpp"
#include "acn/experiment.hpp"
#include "acn/format.hpp"
#include "acn/parallel.hpp"
#include "acn/rng.hpp"

namespace acn {

using nlohmann::json;

namespace {

struct Job {
  ArchVariant arch;
  std::uint64_t seed;
};

std::vector<Job> jobs_for(const RunConfig& cfg, const std::vector<ArchVariant>& archs) {
  if (archs.empty()) throw ConfigError("no architectures selected");
  std::vector<Job> jobs;
  for (const auto& a : archs)
    for (auto s : cfg.seeds) jobs.push_back({a, s});
  return jobs;
}

Network trained_network(const RunConfig& cfg, const Job& job, const Dataset& train_set, const Dataset* test,
                        TrainLog* log = nullptr, const TrainHooks& hooks = {}) {
  Network net(network_for(cfg, job.arch), init_seed(job.seed));
  TrainLog l = train(net, train_set, test, train_for(cfg, job.arch, job.seed), hooks);
  if (log) *log = std::move(l);
  return net;
}

// Rows of one CSV: a group (architecture, maybe method), the seed, a key and
// numeric values. Median rows over seeds follow the per-seed rows.
class SeedTable {
 public:
  explicit SeedTable(std::string header) : header_(std::move(header)) {}

  void add(const std::string& group, std::uint64_t seed, const std::string& key, std::vector<double> values) {
    const std::string id = group + '\x1f' + key;
    if (!index_.count(id)) {
      index_[id] = order_.size();
      order_.push_back({group, key, {}});
    }
    order_[index_[id]].runs.push_back(values);
    rows_ << group << ',' << seed << (key.empty() ? "" : ",") << key;
    for (double v : values) rows_ << ',' << num(v);
    rows_ << '\n';
  }

  std::vector<double> medians(const std::string& group, const std::string& key) const {
    const auto& e = order_.at(index_.at(group + '\x1f' + key));
    std::vector<double> out;
    for (std::size_t c = 0; c < e.runs[0].size(); ++c) {
      std::vector<double> col;
      for (const auto& r : e.runs) col.push_back(r[c]);
      out.push_back(median(col));
    }
    return out;
  }

  std::string str() const {
    std::ostringstream os;
    os << header_ << '\n' << rows_.str();
    for (const auto& e : order_) {
      os << e.group << ",median" << (e.key.empty() ? "" : ",") << e.key;
      for (double v : medians(e.group, e.key)) os << ',' << num(v);
      os << '\n';
    }
    return os.str();
  }

 private:
  struct Entry {
    std::string group, key;
    std::vector<std::vector<double>> runs;
  };
  std::string header_;
  std::ostringstream rows_;
  std::map<std::string, std::size_t> index_;
  std::vector<Entry> order_;
};

json real(double v) { return std::isnan(v) ? json(nullptr) : json(v); }

}  // namespace

// ---- runners ---------------------------------------------------------------------

std::vector<ProbeRun> run_probe(const RunConfig& cfg, const std::vector<ArchVariant>& archs) {
  const auto jobs = jobs_for(cfg, archs);
  const auto [train_set, test] = load_data(cfg.data);
  std::vector<ProbeRun> out(jobs.size());
  parallel_for(jobs.size(), [&](std::size_t j) {
    ProbeRun& r = out[j];
    r.arch = jobs[j].arch.name;
    r.seed = jobs[j].seed;
    Network net = trained_network(cfg, jobs[j], train_set, &test, &r.log);
    r.report = probe_all_depths(net, test);
    r.report.epoch = cfg.train.epochs;
    r.final_accuracy = r.report.accuracy.back();
    r.effective_depth = effective_depth(r.report, cfg.probe.eps);
    std::ostringstream ck;
    net.save(ck);
    r.checkpoint = ck.str();
  });
  return out;
}

std::vector<GradmapRun> run_gradmap(const RunConfig& cfg, const std::vector<ArchVariant>& archs) {
  const auto jobs = jobs_for(cfg, archs);
  const auto [train_set, test] = load_data(cfg.data);
  std::vector<GradmapRun> out(jobs.size());
  parallel_for(jobs.size(), [&](std::size_t j) {
    GradmapRun& r = out[j];
    r.arch = jobs[j].arch.name;
    r.seed = jobs[j].seed;
    Network net(network_for(cfg, jobs[j].arch), init_seed(jobs[j].seed));
    TrainConfig t = train_for(cfg, jobs[j].arch, jobs[j].seed);
    t.record_layer_norms = true;
    TrainHooks hooks;
    hooks.end_of_epoch = [&](Network& n, int) {
      r.increments.push_back(incremental_contribution(probe_all_depths(n, test)));
    };
    const TrainLog log = train(net, train_set, &test, t, hooks);
    for (const auto& e : log.epochs) r.grad_norms.push_back(e.layer_norms);
  });
  return out;
}

std::vector<DgRatioRun> run_dgratio(const RunConfig& cfg, const std::vector<ArchVariant>& archs) {
  for (const auto& a : archs)
    if (a.connectivity == Connectivity::FFN) throw ConfigError("dgratio: ffn has no direct gradient");
  const auto jobs = jobs_for(cfg, archs);
  const auto [train_set, test] = load_data(cfg.data);
  std::vector<DgRatioRun> out(jobs.size());
  parallel_for(jobs.size(), [&](std::size_t j) {
    DgRatioRun& r = out[j];
    r.arch = jobs[j].arch.name;
    r.seed = jobs[j].seed;
    Network net(network_for(cfg, jobs[j].arch), init_seed(jobs[j].seed));
    TrainConfig t = train_for(cfg, jobs[j].arch, jobs[j].seed);
    if (t.dg_every == 0) t.dg_every = 10;
    t.eval_each_epoch = false;
    const TrainLog log = train(net, train_set, nullptr, t);
    for (const auto& e : log.epochs)
      if (e.decomp) r.epochs.push_back(*e.decomp);
  });
  return out;
}

std::vector<NoiseRun> run_noise(const RunConfig& cfg, const std::vector<ArchVariant>& archs) {
  const auto jobs = jobs_for(cfg, archs);
  const auto [train_set, test] = load_data(cfg.data);
  if (!cfg.noise.salt_pepper.empty() && !test.is_image())
    throw ConfigError("noise.salt_pepper: needs image data");
  std::vector<std::pair<std::string, double>> levels;
  std::vector<Dataset> noisy;
  for (std::size_t k = 0; k < cfg.noise.gaussian.size(); ++k) {
    levels.emplace_back("gaussian", cfg.noise.gaussian[k]);
    noisy.push_back(add_gaussian_noise(test, cfg.noise.gaussian[k], derive_seed(cfg.noise.seed, k)));
  }
  for (std::size_t k = 0; k < cfg.noise.salt_pepper.size(); ++k) {
    levels.emplace_back("salt_pepper", cfg.noise.salt_pepper[k]);
    noisy.push_back(add_salt_pepper(test, cfg.noise.salt_pepper[k], derive_seed(cfg.noise.seed, 1000 + k)));
  }
  std::vector<NoiseRun> out(jobs.size());
  parallel_for(jobs.size(), [&](std::size_t j) {
    NoiseRun& r = out[j];
    r.arch = jobs[j].arch.name;
    r.seed = jobs[j].seed;
    Network net = trained_network(cfg, jobs[j], train_set, nullptr);
    r.clean_accuracy = evaluate(net, test).accuracy;
    for (std::size_t k = 0; k < levels.size(); ++k)
      r.points.push_back({levels[k].first, levels[k].second, evaluate(net, noisy[k]).accuracy});
  });
  return out;
}

std::vector<LowDataRun> run_lowdata(const RunConfig& cfg, const std::vector<ArchVariant>& archs) {
  const auto jobs = jobs_for(cfg, archs);
  const auto [full, test] = load_data(cfg.data);
  const Dataset small = subset_per_class(full, cfg.lowdata.per_class, derive_seed(cfg.data.seed, 3));
  std::vector<LowDataRun> out(jobs.size());
  parallel_for(jobs.size(), [&](std::size_t j) {
    out[j].arch = jobs[j].arch.name;
    out[j].seed = jobs[j].seed;
    Network net(network_for(cfg, jobs[j].arch), init_seed(jobs[j].seed));
    TrainConfig t = train_for(cfg, jobs[j].arch, jobs[j].seed);
    t.eval_each_epoch = true;
    out[j].log = train(net, small, &test, t);
  });
  return out;
}

std::vector<PruneRun> run_prune(const RunConfig& cfg, const std::vector<ArchVariant>& archs) {
  const auto jobs = jobs_for(cfg, archs);
  const auto [train_set, test] = load_data(cfg.data);
  std::vector<PruneRun> out(jobs.size());
  parallel_for(jobs.size(), [&](std::size_t j) {
    PruneRun& r = out[j];
    r.arch = jobs[j].arch.name;
    r.seed = jobs[j].seed;
    const Network net = trained_network(cfg, jobs[j], train_set, nullptr);
    TrainConfig ft = train_for(cfg, jobs[j].arch, derive_seed(jobs[j].seed, 5));
    ft.eval_each_epoch = true;
    r.magnitude = sparsity_accuracy_sweep(net, test, cfg.prune.grid, r.arch,
                                          cfg.prune.finetune ? &train_set : nullptr, ft);
    if (!cfg.prune.movement.empty()) {
      Network copy = net;
      const MovementResult m = movement_prune(copy, train_set, &test, cfg.prune.movement, ft);
      r.movement_sparsity = m.sparsity_per_stage;
      for (const auto& e : m.log.epochs) r.movement_accuracy.push_back(e.test_acc.value_or(std::nan("")));
    }
  });
  return out;
}

std::vector<ContinualRun> run_continual(const RunConfig& cfg, const std::vector<ArchVariant>& archs) {
  const auto jobs = jobs_for(cfg, archs);
  const auto [train_set, test] = load_data(cfg.data);
  const TaskStream stream =
      split_tasks(train_set, test, cfg.continual.tasks, cfg.continual.classes_per_task, cfg.data.seed);
  std::vector<std::pair<Job, ContinualMethod>> runs;
  for (const auto& m : cfg.continual.methods)
    for (const auto& j : jobs) runs.emplace_back(j, parse_continual_method(m));
  std::vector<ContinualRun> out(runs.size());
  parallel_for(runs.size(), [&](std::size_t k) {
    const auto& [job, method] = runs[k];
    ContinualRun& r = out[k];
    r.arch = job.arch.name;
    r.method = std::string(to_string(method));
    r.seed = job.seed;
    NetworkConfig n = network_for(cfg, job.arch);
    n.classes = cfg.continual.classes_per_task;
    n.heads = cfg.continual.tasks;
    Network net(n, init_seed(job.seed));
    ContinualConfig cc;
    cc.method = method;
    cc.train = train_for(cfg, job.arch, job.seed);
    cc.si_strength = cfg.continual.si_strength;
    cc.si_damping = cfg.continual.si_damping;
    r.report = run_sequence(net, stream, cc);
  });
  return out;
}

// ---- rendering -------------------------------------------------------------------

std::vector<std::string> experiment_names() {
  return {"toy1d", "train", "probe", "gradmap", "dgratio", "noise", "lowdata", "prune", "continual"};
}

namespace {

std::string epoch_rows_key(int epoch, const char* split) { return std::to_string(epoch) + ',' + split; }

Emitted emit_train(const RunConfig& cfg, const std::vector<ArchVariant>& archs, bool with_probe) {
  const auto runs = run_probe(cfg, archs);
  Emitted e;
  SeedTable curves("arch,seed,epoch,split,loss,accuracy");
  SeedTable norms("arch,seed,epoch,layer,grad_norm");
  SeedTable probe("arch,seed,k,accuracy,n_params_used");
  SeedTable summary("arch,seed,effective_depth,final_accuracy");
  for (const auto& r : runs) {
    for (const auto& ep : r.log.epochs) {
      curves.add(r.arch, r.seed, epoch_rows_key(ep.epoch, "train"), {ep.train_loss, ep.train_acc});
      if (ep.test_acc) curves.add(r.arch, r.seed, epoch_rows_key(ep.epoch, "test"), {*ep.test_loss, *ep.test_acc});
      for (std::size_t l = 0; l < ep.layer_norms.size(); ++l)
        norms.add(r.arch, r.seed, std::to_string(ep.epoch) + ',' + std::to_string(l + 1), {ep.layer_norms[l]});
    }
    for (std::size_t k = 0; k < r.report.accuracy.size(); ++k)
      probe.add(r.arch, r.seed, std::to_string(k),
                {r.report.accuracy[k], static_cast<double>(r.report.n_params_used[k])});
    summary.add(r.arch, r.seed, "", {static_cast<double>(r.effective_depth), r.final_accuracy});
  }
  e.files["train.csv"] = curves.str();
  e.files["layer_norms.csv"] = norms.str();
  if (!with_probe)
    for (const auto& r : runs) e.files["model_" + r.arch + "_seed" + std::to_string(r.seed) + ".ckpt"] = r.checkpoint;
  json s = json::object();
  for (const auto& a : archs) {
    const auto m = summary.medians(a.name, "");
    s[a.name] = {{"median_effective_depth", m[0]}, {"median_final_accuracy", m[1]}};
  }
  if (with_probe) {
    e.files["probe.csv"] = probe.str();
    e.files["probe_summary.csv"] = summary.str();
  }
  e.summary = s;
  return e;
}

Emitted emit_gradmap(const RunConfig& cfg, const std::vector<ArchVariant>& archs) {
  SeedTable t("arch,seed,epoch,layer,grad_norm,increment");
  for (const auto& r : run_gradmap(cfg, archs))
    for (std::size_t e = 0; e < r.grad_norms.size(); ++e)
      for (std::size_t l = 0; l < r.grad_norms[e].size(); ++l)
        t.add(r.arch, r.seed, std::to_string(e + 1) + ',' + std::to_string(l + 1),
              {r.grad_norms[e][l], r.increments.at(e).at(l)});
  return {{{"gradmap.csv", t.str()}}, json::object()};
}

Emitted emit_dgratio(const RunConfig& cfg, const std::vector<ArchVariant>& archs) {
  SeedTable t("arch,seed,epoch,layer,dg_norm,fg_norm,ratio");
  const auto runs = run_dgratio(cfg, archs);
  for (const auto& r : runs)
    for (const auto& d : r.epochs)
      for (std::size_t l = 0; l < d.layers.size(); ++l)
        t.add(r.arch, r.seed, std::to_string(d.epoch) + ',' + std::to_string(l + 1),
              {d.layers[l].dg_norm, d.layers[l].fg_norm, d.layers[l].ratio});
  json s = json::object();
  for (const auto& a : archs) {
    json ratios = json::array();
    for (int l = 1; l <= cfg.network.depth; ++l) ratios.push_back(real(t.medians(a.name, "1," + std::to_string(l))[2]));
    s[a.name] = {{"epoch1_median_ratio", ratios}};
  }
  return {{{"dgratio.csv", t.str()}}, s};
}

Emitted emit_noise(const RunConfig& cfg, const std::vector<ArchVariant>& archs) {
  SeedTable t("arch,seed,kind,level,accuracy");
  for (const auto& r : run_noise(cfg, archs)) {
    t.add(r.arch, r.seed, "clean,0", {r.clean_accuracy});
    for (const auto& p : r.points) t.add(r.arch, r.seed, p.kind + ',' + num(p.level), {p.accuracy});
  }
  json s = json::object();
  for (const auto& a : archs) {
    json levels = json::object();
    for (double g : cfg.noise.gaussian) levels["gaussian " + num(g)] = t.medians(a.name, "gaussian," + num(g))[0];
    for (double p : cfg.noise.salt_pepper)
      levels["salt_pepper " + num(p)] = t.medians(a.name, "salt_pepper," + num(p))[0];
    s[a.name] = {{"median_clean_accuracy", t.medians(a.name, "clean,0")[0]}, {"median_noisy_accuracy", levels}};
  }
  return {{{"noise.csv", t.str()}}, s};
}

Emitted emit_lowdata(const RunConfig& cfg, const std::vector<ArchVariant>& archs) {
  SeedTable t("arch,seed,epoch,train_loss,train_acc,test_loss,test_acc");
  for (const auto& r : run_lowdata(cfg, archs))
    for (const auto& e : r.log.epochs)
      t.add(r.arch, r.seed, std::to_string(e.epoch), {e.train_loss, e.train_acc, *e.test_loss, *e.test_acc});
  json s = json::object();
  const std::string last = std::to_string(cfg.train.epochs);
  if (cfg.train.epochs > 0)
    for (const auto& a : archs) {
      const auto m = t.medians(a.name, last);
      s[a.name] = {{"median_final_train_loss", m[0]}, {"median_final_test_loss", m[2]}};
    }
  return {{{"lowdata.csv", t.str()}}, s};
}

Emitted emit_prune(const RunConfig& cfg, const std::vector<ArchVariant>& archs) {
  SeedTable mag("arch,seed,sparsity,remaining_params,accuracy,fine_tuned");
  SeedTable mov("arch,seed,stage,sparsity,accuracy");
  for (const auto& r : run_prune(cfg, archs)) {
    for (const auto& rec : r.magnitude)
      mag.add(r.arch, r.seed, num(rec.sparsity),
              {static_cast<double>(rec.remaining_params), rec.accuracy, rec.fine_tuned ? 1.0 : 0.0});
    for (std::size_t k = 0; k < r.movement_sparsity.size(); ++k)
      mov.add(r.arch, r.seed, std::to_string(k + 1), {r.movement_sparsity[k], r.movement_accuracy[k]});
  }
  Emitted e;
  e.files["prune.csv"] = mag.str();
  if (!cfg.prune.movement.empty()) e.files["movement.csv"] = mov.str();
  json s = json::object();
  if (!cfg.prune.grid.empty())
    for (const auto& a : archs)
      s[a.name] = {{"median_accuracy_at_top_sparsity", mag.medians(a.name, num(cfg.prune.grid.back()))[1]}};
  e.summary = s;
  return e;
}

Emitted emit_continual(const RunConfig& cfg, const std::vector<ArchVariant>& archs) {
  SeedTable cells("arch,method,seed,t_eval,t_after,accuracy");
  SeedTable summary("arch,method,seed,avg_accuracy,avg_forgetting");
  for (const auto& r : run_continual(cfg, archs)) {
    const std::string group = r.arch + ',' + r.method;
    const auto& a = r.report.accuracy;
    for (std::size_t e = 0; e < a.size(); ++e)
      for (std::size_t t = e; t < a.size(); ++t)
        cells.add(group, r.seed, std::to_string(e) + ',' + std::to_string(t), {a[e][t]});
    summary.add(group, r.seed, "", {r.report.avg_accuracy, r.report.avg_forgetting});
  }
  json s = json::object();
  for (const auto& a : archs)
    for (const auto& m : cfg.continual.methods) {
      const auto med = summary.medians(a.name + ',' + m, "");
      s[a.name][m] = {{"median_avg_accuracy", med[0]}, {"median_avg_forgetting", med[1]}};
    }
  return {{{"continual.csv", cells.str()}, {"continual_summary.csv", summary.str()}}, s};
}

}  // namespace

Emitted run_experiment(std::string_view experiment, const RunConfig& cfg, const std::vector<ArchVariant>& archs) {
  if (experiment == "toy1d") {
    const auto runs = chain::run_toy_experiment(cfg.toy);
    std::ostringstream os;
    chain::write_toy_csv(os, runs);
    const ToySummary t = summarize_toy(runs);
    json med = json::array();
    for (double w : t.acn_positive_median) med.push_back(w);
    return {{{"toy.csv", os.str()}},
            {{"residual_w1_mean", real(t.residual_w1_mean)},
             {"acn_converged", t.acn_converged},
             {"acn_unit_mode_fraction", t.acn_unit_mode_fraction},
             {"acn_positive_count", t.acn_positive_count},
             {"acn_positive_median", med}}};
  }
  if (experiment == "train") return emit_train(cfg, archs, false);
  if (experiment == "probe") return emit_train(cfg, archs, true);
  if (experiment == "gradmap") return emit_gradmap(cfg, archs);
  if (experiment == "dgratio") return emit_dgratio(cfg, archs);
  if (experiment == "noise") return emit_noise(cfg, archs);
  if (experiment == "lowdata") return emit_lowdata(cfg, archs);
  if (experiment == "prune") return emit_prune(cfg, archs);
  if (experiment == "continual") return emit_continual(cfg, archs);
  throw ConfigError("unknown experiment '" + std::string(experiment) + "'");
}

}  // namespace acn
