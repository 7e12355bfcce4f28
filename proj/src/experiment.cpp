#include "acn/experiment.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "acn/error.hpp"
#include "acn/format.hpp"
#include "acn/json_reader.hpp"
#include "acn/rng.hpp"

namespace acn {

using nlohmann::json;

// ---- variants -------------------------------------------------------------------

ArchVariant parse_arch_variant(std::string_view s) {
  const std::string_view suffix = "-dirac";
  const bool dirac = s.size() > suffix.size() && s.ends_with(suffix);
  const std::string_view base = dirac ? s.substr(0, s.size() - suffix.size()) : s;
  ArchVariant v;
  if (base == "acn")
    v = {"acn", Connectivity::ACN, false};
  else if (base == "residual" || base == "resnet")
    v = {"residual", Connectivity::Residual, false};
  else if (base == "ffn")
    v = {"ffn", Connectivity::FFN, false};
  else if (base == "acn-dgonly")
    v = {"acn-dgonly", Connectivity::ACN, true};
  else
    throw ConfigError("unknown architecture '" + std::string(s) +
                      "' (acn, residual, ffn, acn-dgonly, each optionally with -dirac)");
  if (dirac) v.name += suffix;
  v.dirac = dirac;
  return v;
}

std::vector<ArchVariant> parse_arch_list(std::string_view list) {
  std::vector<ArchVariant> out;
  std::size_t start = 0;
  while (start <= list.size()) {
    const std::size_t end = std::min(list.find(',', start), list.size());
    out.push_back(parse_arch_variant(list.substr(start, end - start)));
    start = end + 1;
  }
  return out;
}

// ---- presets ----------------------------------------------------------------------

std::vector<std::string> preset_names() { return {"desk-mixer", "desk-dense", "paper-mixer"}; }

json preset_json(std::string_view name) {
  if (name == "desk-mixer")
    return {{"network",
             {{"depth", 8},
              {"block", "mixer"},
              {"width", 32},
              {"token_hidden", 16},
              {"channel_hidden", 64},
              {"embed", "patchify"},
              {"image_size", 8},
              {"image_channels", 3},
              {"patch", 2},
              {"classes", 10}}},
            {"data",
             {{"source", "synthetic"},
              {"kind", "blobs"},
              {"classes", 10},
              {"train_per_class", 100},
              {"test_per_class", 100},
              {"dim", 16},
              {"image_size", 8},
              {"image_channels", 3}}},
            {"train", {{"epochs", 10}, {"batch", 64}, {"lr", 1e-3}}}};
  if (name == "desk-dense")
    return {{"network",
             {{"depth", 8},
              {"block", "dense"},
              {"width", 32},
              {"hidden", 64},
              {"embed", "linear"},
              {"input_dim", 16},
              {"classes", 10}}},
            {"data",
             {{"source", "synthetic"},
              {"kind", "blobs"},
              {"classes", 10},
              {"train_per_class", 100},
              {"test_per_class", 100},
              {"dim", 16},
              {"image_size", 0}}},
            {"train", {{"epochs", 10}, {"batch", 64}, {"lr", 1e-3}}}};
  if (name == "paper-mixer")
    return {{"network",
             {{"depth", 16},
              {"block", "mixer"},
              {"width", 128},
              {"token_hidden", 64},
              {"channel_hidden", 512},
              {"embed", "patchify"},
              {"image_size", 32},
              {"image_channels", 3},
              {"patch", 4},
              {"classes", 10}}},
            {"data",
             {{"source", "cifar10"},
              {"cifar_dir", "data/cifar-10-batches-bin"},
              {"classes", 10},
              {"train_per_class", 0},
              {"test_per_class", 0},
              {"image_size", 32},
              {"image_channels", 3}}},
            {"train", {{"epochs", 100}, {"batch", 64}, {"lr", 1e-3}}}};
  throw ConfigError("preset: unknown preset '" + std::string(name) + "'");
}

// ---- parsing ----------------------------------------------------------------------

namespace {

SynthKind parse_synth_kind(const std::string& s, const std::string& path) {
  if (s == "blobs") return SynthKind::Blobs;
  if (s == "spirals") return SynthKind::Spirals;
  throw ConfigError(path + ": unknown kind '" + s + "' (blobs, spirals)");
}

std::string synth_kind_name(SynthKind k) { return k == SynthKind::Blobs ? "blobs" : "spirals"; }

DataSpec parse_data(const json& j) {
  JsonReader r(j, "data");
  DataSpec d;
  std::string kind = synth_kind_name(d.kind);
  r.get("source", d.source);
  r.get("cifar_dir", d.cifar_dir);
  r.get("kind", kind);
  r.get("classes", d.classes);
  r.get("train_per_class", d.train_per_class);
  r.get("test_per_class", d.test_per_class);
  r.get("dim", d.dim);
  r.get("separation", d.separation);
  r.get("noise", d.noise);
  r.get("modes_per_class", d.modes_per_class);
  r.get("image_size", d.image_size);
  r.get("image_channels", d.image_channels);
  r.get("render_gain", d.render_gain);
  r.get("seed", d.seed);
  r.finish();
  d.kind = parse_synth_kind(kind, r.key_path("kind"));
  return d;
}

TrainConfig parse_train(const json& j) {
  JsonReader r(j, "train");
  TrainConfig t;
  std::string loss(to_string(t.mode.kind));
  r.get("epochs", t.epochs);
  r.get("batch", t.batch);
  r.get("lr", t.opt.lr);
  r.get("beta1", t.opt.beta1);
  r.get("beta2", t.opt.beta2);
  r.get("eps", t.opt.eps);
  r.get("weight_decay", t.opt.weight_decay);
  r.get("warmup_fraction", t.warmup_fraction);
  r.get("loss", loss);
  r.get("lambda", t.mode.lambda);
  r.get("p_max", t.mode.p_max);
  r.get("e_scale", t.mode.e_scale);
  r.get("c_rot", t.mode.c_rot);
  r.get("divergence_threshold", t.divergence_threshold);
  r.get("record_layer_norms", t.record_layer_norms);
  r.get("dg_every", t.dg_every);
  r.get("dg_batch", t.dg_batch);
  r.get("eval_each_epoch", t.eval_each_epoch);
  r.finish();
  try {
    t.mode.kind = parse_loss_kind(loss);
  } catch (const Error& e) {
    throw ConfigError(r.key_path("loss") + ": " + e.what());
  }
  return t;
}

chain::ToyConfig parse_toy(const json& j) {
  JsonReader r(j, "toy");
  chain::ToyConfig t;
  std::string init(chain::to_string(t.init));
  r.get("runs", t.runs);
  r.get("epochs", t.epochs);
  r.get("layers", t.layers);
  r.get("samples", t.samples);
  r.get("x_range", t.x_range);
  r.get("lr", t.lr);
  r.get("init", init);
  r.get("init_scale", t.init_scale);
  r.get("target_slope", t.target_slope);
  r.get("seed", t.seed);
  r.finish();
  if (init == "uniform")
    t.init = chain::InitKind::Uniform;
  else if (init == "normal")
    t.init = chain::InitKind::Normal;
  else
    throw ConfigError(r.key_path("init") + ": unknown init '" + init + "' (uniform, normal)");
  return t;
}

template <typename F>
void section(JsonReader& r, const char* key, F&& parse) {
  if (const json* c = r.child(key)) parse(*c);
}

}  // namespace

RunConfig parse_config(const json& j) {
  if (!j.is_object()) throw ConfigError("config: expected an object");
  json merged = json::object();
  std::string preset;
  if (auto it = j.find("preset"); it != j.end()) {
    if (!it->is_string()) throw ConfigError("config.preset: expected a string");
    preset = it->get<std::string>();
    merged = preset_json(preset);
  }
  json rest = j;
  rest.erase("preset");
  merged.merge_patch(rest);

  JsonReader r(merged, "config");
  RunConfig c;
  c.preset = preset;
  section(r, "network", [&](const json& s) { c.network = network_config_from_json(s); });
  section(r, "data", [&](const json& s) { c.data = parse_data(s); });
  section(r, "train", [&](const json& s) { c.train = parse_train(s); });
  section(r, "toy", [&](const json& s) { c.toy = parse_toy(s); });
  section(r, "probe", [&](const json& s) {
    JsonReader p(s, "probe");
    p.get("eps", c.probe.eps);
    p.finish();
  });
  section(r, "noise", [&](const json& s) {
    JsonReader p(s, "noise");
    p.get("gaussian", c.noise.gaussian);
    p.get("salt_pepper", c.noise.salt_pepper);
    p.get("seed", c.noise.seed);
    p.finish();
  });
  section(r, "lowdata", [&](const json& s) {
    JsonReader p(s, "lowdata");
    p.get("per_class", c.lowdata.per_class);
    p.finish();
  });
  section(r, "prune", [&](const json& s) {
    JsonReader p(s, "prune");
    p.get("grid", c.prune.grid);
    p.get("finetune", c.prune.finetune);
    p.get("movement", c.prune.movement);
    p.finish();
  });
  section(r, "continual", [&](const json& s) {
    JsonReader p(s, "continual");
    p.get("tasks", c.continual.tasks);
    p.get("classes_per_task", c.continual.classes_per_task);
    p.get("methods", c.continual.methods);
    p.get("si_strength", c.continual.si_strength);
    p.get("si_damping", c.continual.si_damping);
    p.finish();
  });
  r.get("seeds", c.seeds);
  r.get("archs", c.archs);
  r.finish();
  c.validate();
  return c;
}

RunConfig parse_config_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
  return parse_config(j);
}

void RunConfig::validate() const {
  network.validate();
  train.validate();
  // Ranges only; connectivity is checked per architecture below.
  train.mode.validate(Connectivity::Residual);
  if (seeds.empty()) throw ConfigError("config.seeds: must not be empty");
  if (archs.empty()) throw ConfigError("config.archs: must not be empty");
  for (const auto& a : archs) {
    const ArchVariant v = parse_arch_variant(a);
    if (v.dirac) {
      NetworkConfig n = network;
      n.dirac = true;
      try {
        n.validate();
      } catch (const ConfigError& e) {
        throw ConfigError("config.archs: " + a + ": " + e.what());
      }
    }
    if (train.mode.kind == LossKind::LayerSkip && v.connectivity != Connectivity::Residual)
      throw ConfigError("config.archs: layerskip training needs residual architectures, got " + a);
    if (v.dg_only && train.mode.kind != LossKind::Standard)
      throw ConfigError("config.archs: acn-dgonly needs the standard loss");
  }

  if (data.source != "synthetic" && data.source != "cifar10")
    throw ConfigError("data.source: expected synthetic or cifar10");
  if (data.classes < 2) throw ConfigError("data.classes: need at least 2");
  if (data.source == "synthetic") {
    if (data.train_per_class == 0 || data.test_per_class == 0)
      throw ConfigError("data: synthetic sets need positive per-class counts");
    if (data.dim < 2) throw ConfigError("data.dim: need at least 2");
  } else {
    if (data.classes > 10) throw ConfigError("data.classes: cifar10 has 10 classes");
    if (data.image_size != 32 || data.image_channels != 3)
      throw ConfigError("data.image_size: cifar10 images are 3x32x32");
    if (!std::filesystem::is_directory(data.cifar_dir))
      throw ConfigError("data.cifar_dir: no directory '" + data.cifar_dir + "'");
  }
  const bool image = data.image_size > 0;
  if (image && network.embed != EmbedType::Patchify)
    throw ConfigError("network.embed: image data needs the patchify embedding");
  if (!image && network.embed == EmbedType::Patchify)
    throw ConfigError("network.embed: vector data needs a linear or identity embedding");
  const Shape want = image ? Shape{data.image_channels, data.image_size, data.image_size} : Shape{data.dim};
  if (network.input_shape() != want)
    throw ConfigError("network: input settings do not match the data section");
  if (network.classes != data.classes)
    throw ConfigError("network.classes: " + std::to_string(network.classes) + " does not match data.classes " +
                      std::to_string(data.classes));

  if (!(probe.eps >= 0.0)) throw ConfigError("probe.eps: must be non-negative");
  for (double s : noise.gaussian)
    if (!(s >= 0.0)) throw ConfigError("noise.gaussian: levels must be non-negative");
  for (double p : noise.salt_pepper)
    if (!(p >= 0.0 && p <= 1.0)) throw ConfigError("noise.salt_pepper: levels must lie in [0, 1]");
  if (lowdata.per_class == 0) throw ConfigError("lowdata.per_class: must be positive");
  for (std::size_t g = 0; g < prune.grid.size(); ++g) {
    if (!(prune.grid[g] >= 0.0 && prune.grid[g] < 1.0)) throw ConfigError("prune.grid: levels must lie in [0, 1)");
    if (g && !(prune.grid[g] > prune.grid[g - 1])) throw ConfigError("prune.grid: must be strictly increasing");
  }
  try {
    compounded_sparsity(prune.movement);
  } catch (const ConfigError& e) {
    throw ConfigError(std::string("prune.movement: ") + e.what());
  }
  if (continual.tasks < 1 || continual.classes_per_task < 1)
    throw ConfigError("continual: task counts must be positive");
  for (const auto& m : continual.methods) parse_continual_method(m);
  if (!(continual.si_strength >= 0.0) || !(continual.si_damping > 0.0))
    throw ConfigError("continual: si_strength must be >= 0 and si_damping > 0");
  if (toy.runs < 1 || toy.epochs < 0 || toy.layers < 1 || toy.samples < 1 || !(toy.lr > 0.0))
    throw ConfigError("toy: runs, layers and samples must be positive and lr > 0");
}

// ---- canonical form --------------------------------------------------------------

json config_to_json(const RunConfig& c) {
  const TrainConfig& t = c.train;
  return {
      {"preset", c.preset},
      {"network", to_json(c.network)},
      {"data",
       {{"source", c.data.source},
        {"cifar_dir", c.data.cifar_dir},
        {"kind", synth_kind_name(c.data.kind)},
        {"classes", c.data.classes},
        {"train_per_class", c.data.train_per_class},
        {"test_per_class", c.data.test_per_class},
        {"dim", c.data.dim},
        {"separation", c.data.separation},
        {"noise", c.data.noise},
        {"modes_per_class", c.data.modes_per_class},
        {"image_size", c.data.image_size},
        {"image_channels", c.data.image_channels},
        {"render_gain", c.data.render_gain},
        {"seed", c.data.seed}}},
      {"train",
       {{"epochs", t.epochs},
        {"batch", t.batch},
        {"lr", t.opt.lr},
        {"beta1", t.opt.beta1},
        {"beta2", t.opt.beta2},
        {"eps", t.opt.eps},
        {"weight_decay", t.opt.weight_decay},
        {"warmup_fraction", t.warmup_fraction},
        {"loss", to_string(t.mode.kind)},
        {"lambda", t.mode.lambda},
        {"p_max", t.mode.p_max},
        {"e_scale", t.mode.e_scale},
        {"c_rot", t.mode.c_rot},
        {"divergence_threshold", t.divergence_threshold},
        {"record_layer_norms", t.record_layer_norms},
        {"dg_every", t.dg_every},
        {"dg_batch", t.dg_batch},
        {"eval_each_epoch", t.eval_each_epoch}}},
      {"toy",
       {{"runs", c.toy.runs},
        {"epochs", c.toy.epochs},
        {"layers", c.toy.layers},
        {"samples", c.toy.samples},
        {"x_range", c.toy.x_range},
        {"lr", c.toy.lr},
        {"init", chain::to_string(c.toy.init)},
        {"init_scale", c.toy.init_scale},
        {"target_slope", c.toy.target_slope},
        {"seed", c.toy.seed}}},
      {"probe", {{"eps", c.probe.eps}}},
      {"noise", {{"gaussian", c.noise.gaussian}, {"salt_pepper", c.noise.salt_pepper}, {"seed", c.noise.seed}}},
      {"lowdata", {{"per_class", c.lowdata.per_class}}},
      {"prune", {{"grid", c.prune.grid}, {"finetune", c.prune.finetune}, {"movement", c.prune.movement}}},
      {"continual",
       {{"tasks", c.continual.tasks},
        {"classes_per_task", c.continual.classes_per_task},
        {"methods", c.continual.methods},
        {"si_strength", c.continual.si_strength},
        {"si_damping", c.continual.si_damping}}},
      {"seeds", c.seeds},
      {"archs", c.archs}};
}

std::uint64_t fnv1a64(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char b : bytes) {
    h ^= b;
    h *= 0x100000001b3ULL;
  }
  return h;
}

namespace {

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

}  // namespace

std::string config_hash(const RunConfig& cfg) { return hex64(fnv1a64(config_to_json(cfg).dump())); }

// ---- data and runs -----------------------------------------------------------------

std::pair<Dataset, Dataset> load_data(const DataSpec& spec) {
  if (spec.source == "cifar10") {
    auto [train, test] = load_cifar10(spec.cifar_dir);
    std::vector<int> keep(static_cast<std::size_t>(spec.classes));
    for (int k = 0; k < spec.classes; ++k) keep[static_cast<std::size_t>(k)] = k;
    if (spec.classes < 10) {
      train = select_classes(train, keep);
      test = select_classes(test, keep);
    }
    if (spec.train_per_class) train = subset_per_class(train, spec.train_per_class, derive_seed(spec.seed, 1));
    if (spec.test_per_class) test = subset_per_class(test, spec.test_per_class, derive_seed(spec.seed, 2));
    return {std::move(train), std::move(test)};
  }
  SynthSpec s;
  s.kind = spec.kind;
  s.n_classes = spec.classes;
  s.dim = spec.dim;
  s.separation = spec.separation;
  s.noise = spec.noise;
  s.modes_per_class = spec.modes_per_class;
  s.image_size = spec.image_size;
  s.image_channels = spec.image_channels;
  s.render_gain = spec.render_gain;
  s.seed = spec.seed;
  s.n_per_class = static_cast<int>(spec.train_per_class);
  Dataset train = synth_classification(s, 0, "train");
  s.n_per_class = static_cast<int>(spec.test_per_class);
  Dataset test = synth_classification(s, 1, "test");
  return {std::move(train), std::move(test)};
}

NetworkConfig network_for(const RunConfig& cfg, const ArchVariant& arch) {
  NetworkConfig n = cfg.network;
  n.connectivity = arch.connectivity;
  n.dirac = n.dirac || arch.dirac;
  return n;
}

TrainConfig train_for(const RunConfig& cfg, const ArchVariant& arch, std::uint64_t seed) {
  TrainConfig t = cfg.train;
  if (arch.dg_only) t.mode.kind = LossKind::DgOnly;
  t.seed = derive_seed(seed, 0x7121);
  return t;
}

std::uint64_t init_seed(std::uint64_t seed) { return derive_seed(seed, 0x1417); }

double median(std::vector<double> v) {
  if (v.empty()) throw InputError("median of an empty set");
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

ToySummary summarize_toy(const std::vector<chain::ToyRun>& runs, double converged_loss) {
  ToySummary s;
  double sum = 0.0;
  int residual = 0, unit = 0;
  std::vector<std::vector<double>> positive;
  for (const auto& r : runs) {
    if (r.arch == chain::Arch::ResNet) {
      sum += r.weights.at(0);
      ++residual;
      continue;
    }
    if (r.arch != chain::Arch::ACN || r.diverged || !(r.final_loss < converged_loss)) continue;
    ++s.acn_converged;
    const double w1 = r.weights.at(0);
    if (std::abs(w1) >= 0.75 && std::abs(w1) <= 1.1) ++unit;
    if (w1 >= 0.75 && w1 <= 1.1) positive.push_back(r.weights);
  }
  s.residual_w1_mean = residual ? sum / residual : std::nan("");
  s.acn_unit_mode_fraction = s.acn_converged ? static_cast<double>(unit) / s.acn_converged : 0.0;
  s.acn_positive_count = static_cast<int>(positive.size());
  if (!positive.empty())
    for (std::size_t k = 0; k < positive[0].size(); ++k) {
      std::vector<double> col;
      for (const auto& w : positive) col.push_back(w[k]);
      s.acn_positive_median.push_back(median(col));
    }
  return s;
}

// ---- reports ---------------------------------------------------------------------

json emit_reports(const Emitted& e, std::string_view experiment, const RunConfig& cfg,
                  const std::filesystem::path& out_dir, double wall_seconds) {
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec) throw IoError("cannot create " + out_dir.string() + ": " + ec.message());
  std::map<std::string, std::string> files = e.files;
  files["summary.json"] = e.summary.dump(2) + "\n";

  json listing = json::array();
  for (const auto& [name, body] : files) {
    const auto path = out_dir / name;
    std::ofstream out(path, std::ios::binary);
    if (!out || !out.write(body.data(), static_cast<std::streamsize>(body.size())))
      throw IoError("cannot write " + path.string());
    listing.push_back({{"name", name}, {"size", body.size()}, {"fnv1a64", hex64(fnv1a64(body))}});
  }
  json manifest = {{"schema_version", kSchemaVersion},
                   {"version", kToolVersion},
                   {"experiment", experiment},
                   {"config_hash", config_hash(cfg)},
                   {"config", config_to_json(cfg)},
                   {"seeds", cfg.seeds},
                   {"wall_time_s", wall_seconds},
                   {"files", listing}};
  const auto path = out_dir / "manifest.json";
  std::ofstream out(path);
  if (!out || !(out << manifest.dump(2) << '\n')) throw IoError("cannot write " + path.string());
  return manifest;
}

std::string paths_table_csv(int max_depth) {
  if (max_depth < 1 || max_depth > chain::kMaxEnumerationSpan)
    throw ConfigError("paths: L must lie in [1, " + std::to_string(chain::kMaxEnumerationSpan) + "]");
  std::ostringstream os;
  os << "L,i,ffn,acn,residual,ffn_in_acn,acn_in_residual,ffn_acn_strict,acn_residual_strict\n";
  for (int depth = 1; depth <= max_depth; ++depth)
    for (int i = 1; i <= depth; ++i) {
      const auto inc = chain::path_set_inclusion(depth, i);
      os << depth << ',' << i << ',' << chain::enumerate_backward_paths(chain::Arch::FFN, depth, i).size() << ','
         << chain::enumerate_backward_paths(chain::Arch::ACN, depth, i).size() << ','
         << chain::enumerate_backward_paths(chain::Arch::ResNet, depth, i).size() << ',' << inc.ffn_in_acn << ','
         << inc.acn_in_resnet << ',' << inc.ffn_acn_strict << ',' << inc.acn_resnet_strict << '\n';
    }
  return os.str();
}

json aggregate_reports(const std::vector<std::filesystem::path>& run_dirs) {
  json runs = json::array();
  for (const auto& dir : run_dirs) {
    std::ifstream mf(dir / "manifest.json");
    if (!mf) throw IoError("no manifest.json in " + dir.string());
    json manifest, summary;
    try {
      manifest = json::parse(mf);
      std::ifstream sf(dir / "summary.json");
      if (!sf) throw IoError("no summary.json in " + dir.string());
      summary = json::parse(sf);
    } catch (const json::parse_error& e) {
      throw FormatError(dir.string() + ": " + e.what());
    }
    for (const auto& f : manifest.at("files")) {
      std::ifstream in(dir / f.at("name").get<std::string>(), std::ios::binary);
      std::stringstream ss;
      ss << in.rdbuf();
      if (!in || hex64(fnv1a64(ss.str())) != f.at("fnv1a64").get<std::string>())
        throw FormatError(dir.string() + ": checksum mismatch for " + f.at("name").get<std::string>());
    }
    runs.push_back({{"dir", dir.string()},
                    {"experiment", manifest.at("experiment")},
                    {"config_hash", manifest.at("config_hash")},
                    {"seeds", manifest.at("seeds")},
                    {"summary", summary}});
  }
  return {{"schema_version", kSchemaVersion}, {"version", kToolVersion}, {"runs", runs}};
}

}  // namespace acn
