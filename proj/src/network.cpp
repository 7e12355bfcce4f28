#include "acn/network.hpp"

#include <fstream>
#include <map>

#include "acn/binio.hpp"
#include "acn/error.hpp"
#include "acn/json_reader.hpp"

namespace acn {

std::string_view to_string(Connectivity c) {
  switch (c) {
    case Connectivity::FFN: return "ffn";
    case Connectivity::Residual: return "residual";
    case Connectivity::ACN: return "acn";
  }
  return "?";
}

std::string_view to_string(BlockType b) { return b == BlockType::Dense ? "dense" : "mixer"; }

std::string_view to_string(EmbedType e) {
  switch (e) {
    case EmbedType::Patchify: return "patchify";
    case EmbedType::Linear: return "linear";
    case EmbedType::Identity: return "identity";
  }
  return "?";
}

Connectivity parse_connectivity(std::string_view s) {
  if (s == "ffn") return Connectivity::FFN;
  if (s == "residual" || s == "resnet") return Connectivity::Residual;
  if (s == "acn") return Connectivity::ACN;
  throw ConfigError("unknown connectivity '" + std::string(s) + "'");
}

BlockType parse_block_type(std::string_view s) {
  if (s == "dense") return BlockType::Dense;
  if (s == "mixer") return BlockType::Mixer;
  throw ConfigError("unknown block type '" + std::string(s) + "'");
}

EmbedType parse_embed_type(std::string_view s) {
  if (s == "patchify") return EmbedType::Patchify;
  if (s == "linear") return EmbedType::Linear;
  if (s == "identity") return EmbedType::Identity;
  throw ConfigError("unknown embedding '" + std::string(s) + "'");
}

// ---- config -----------------------------------------------------------------

namespace {

void check_config(const NetworkConfig& c, int min_depth) {
  auto fail = [](const std::string& m) { throw ConfigError("network." + m); };
  if (c.depth < min_depth) fail("depth: must be at least " + std::to_string(min_depth));
  if (c.width == 0) fail("width: must be positive");
  if (c.classes < 1) fail("classes: must be positive");
  if (c.heads < 1) fail("heads: must be positive");
  if (!(c.init_std >= 0.0)) fail("init_std: must be non-negative");
  switch (c.embed) {
    case EmbedType::Patchify:
      if (c.patch == 0 || c.image_size == 0 || c.image_channels == 0)
        fail("patch: image size, channels and patch must be positive");
      if (c.image_size % c.patch != 0)
        fail("patch: " + std::to_string(c.patch) + " does not divide image size " +
             std::to_string(c.image_size));
      break;
    case EmbedType::Linear:
      if (c.input_dim == 0) fail("input_dim: must be positive for a linear embedding");
      break;
    case EmbedType::Identity:
      if (c.input_dim != c.width) fail("input_dim: identity embedding needs input_dim == width");
      break;
  }
  if (c.block == BlockType::Mixer) {
    if (c.embed != EmbedType::Patchify) fail("embed: mixer blocks need patch tokens");
    if (c.token_hidden == 0 || c.channel_hidden == 0) fail("token_hidden: must be positive");
  }
  if (c.dirac) {
    if (c.block == BlockType::Dense && c.hidden != 0 && c.hidden != c.width)
      fail("dirac: dense hidden size " + std::to_string(c.hidden) + " differs from width");
    if (c.block == BlockType::Mixer &&
        (c.token_hidden != c.tokens() || c.channel_hidden != c.width))
      fail("dirac: mixer layers are not square (token_hidden must equal the patch count and "
           "channel_hidden the width)");
  }
}

}  // namespace

void NetworkConfig::validate() const { check_config(*this, 1); }

std::size_t NetworkConfig::tokens() const {
  if (embed != EmbedType::Patchify || patch == 0) return 1;
  const std::size_t side = image_size / patch;
  return side * side;
}

Shape NetworkConfig::input_shape() const {
  if (embed == EmbedType::Patchify) return {image_channels, image_size, image_size};
  return {input_dim};
}

nlohmann::json to_json(const NetworkConfig& c) {
  return nlohmann::json{
      {"depth", c.depth},
      {"connectivity", to_string(c.connectivity)},
      {"block", to_string(c.block)},
      {"width", c.width},
      {"hidden", c.hidden},
      {"dense_gelu", c.dense_gelu},
      {"dense_norm", c.dense_norm},
      {"token_hidden", c.token_hidden},
      {"channel_hidden", c.channel_hidden},
      {"dirac", c.dirac},
      {"embed", to_string(c.embed)},
      {"image_size", c.image_size},
      {"image_channels", c.image_channels},
      {"patch", c.patch},
      {"input_dim", c.input_dim},
      {"classes", c.classes},
      {"heads", c.heads},
      {"head_norm", c.head_norm},
      {"init_std", c.init_std},
  };
}

NetworkConfig network_config_from_json(const nlohmann::json& j, const std::string& path) {
  JsonReader r(j, path);
  NetworkConfig c;
  std::string conn(to_string(c.connectivity)), block(to_string(c.block)), emb(to_string(c.embed));
  r.get("depth", c.depth);
  r.get("connectivity", conn);
  r.get("block", block);
  r.get("width", c.width);
  r.get("hidden", c.hidden);
  r.get("dense_gelu", c.dense_gelu);
  r.get("dense_norm", c.dense_norm);
  r.get("token_hidden", c.token_hidden);
  r.get("channel_hidden", c.channel_hidden);
  r.get("dirac", c.dirac);
  r.get("embed", emb);
  r.get("image_size", c.image_size);
  r.get("image_channels", c.image_channels);
  r.get("patch", c.patch);
  r.get("input_dim", c.input_dim);
  r.get("classes", c.classes);
  r.get("heads", c.heads);
  r.get("head_norm", c.head_norm);
  r.get("init_std", c.init_std);
  r.finish();
  try {
    c.connectivity = parse_connectivity(conn);
    c.block = parse_block_type(block);
    c.embed = parse_embed_type(emb);
  } catch (const ConfigError& e) {
    throw ConfigError(path + ": " + e.what());
  }
  return c;
}

// ---- construction -------------------------------------------------------------

Network::Network(NetworkConfig cfg, std::uint64_t seed) : cfg_(std::move(cfg)) {
  cfg_.validate();
  build(seed);
}

std::size_t Network::add_param(std::string name, Tensor value, ParamInfo info) {
  params_.emplace_back(std::move(name), std::move(value));
  info_.push_back(info);
  return params_.size() - 1;
}

Network::Linear Network::add_linear(const std::string& name, std::size_t in, std::size_t out,
                                    int block, bool dirac, Rng& rng) {
  const bool head = block < 0;
  Tensor w({in, out});
  for (auto& v : w.values()) v = truncated_normal(rng, 0.0, cfg_.init_std);
  Linear l;
  l.dirac = dirac;
  ParamInfo wi{head ? ParamRole::HeadWeight : block == 0 ? ParamRole::EmbedWeight
                                                         : ParamRole::LinearWeight,
               block, -1, dirac};
  ParamInfo bi{head ? ParamRole::HeadBias : block == 0 ? ParamRole::EmbedBias
                                                       : ParamRole::LinearBias,
               block, -1, false};
  if (head) wi.head = bi.head = -block - 1;
  if (head) wi.block = bi.block = -1;
  l.w = add_param(name + ".w", std::move(w), wi);
  l.b = add_param(name + ".b", Tensor({out}, 0.0), bi);
  return l;
}

Network::Norm Network::add_norm(const std::string& name, std::size_t width, int block,
                                ParamRole gain, ParamRole shift) {
  Norm n;
  const int head = block < 0 ? -block - 1 : -1;
  const int b = block < 0 ? -1 : block;
  n.g = add_param(name + ".g", Tensor({width}, 1.0), ParamInfo{gain, b, head, false});
  n.b = add_param(name + ".b", Tensor({width}, 0.0), ParamInfo{shift, b, head, false});
  return n;
}

void Network::build(std::uint64_t seed) {
  Rng rng(seed);
  const std::size_t d = cfg_.width;
  switch (cfg_.embed) {
    case EmbedType::Patchify:
      embed_ = add_linear("embed", cfg_.image_channels * cfg_.patch * cfg_.patch, d, 0, false, rng);
      embed_has_bias_ = true;
      break;
    case EmbedType::Linear:
      embed_ = add_linear("embed", cfg_.input_dim, d, 0, false, rng);
      embed_has_bias_ = true;
      break;
    case EmbedType::Identity:
      embed_has_bias_ = false;
      break;
  }
  const std::size_t p = cfg_.tokens();
  for (int i = 1; i <= cfg_.depth; ++i) {
    const std::string name = "block" + std::to_string(i);
    Block b;
    if (cfg_.block == BlockType::Dense) {
      b.has_norm = cfg_.dense_norm;
      if (b.has_norm) b.norm = add_norm(name + ".norm", d, i, ParamRole::NormGain, ParamRole::NormShift);
      if (cfg_.hidden == 0) {
        b.linears.push_back(add_linear(name + ".lin1", d, d, i, cfg_.dirac, rng));
      } else {
        b.linears.push_back(add_linear(name + ".lin1", d, cfg_.hidden, i, cfg_.dirac, rng));
        b.linears.push_back(add_linear(name + ".lin2", cfg_.hidden, d, i, cfg_.dirac, rng));
      }
    } else {
      b.has_norm = true;
      b.norm = add_norm(name + ".norm1", d, i, ParamRole::NormGain, ParamRole::NormShift);
      b.linears.push_back(add_linear(name + ".token1", p, cfg_.token_hidden, i, cfg_.dirac, rng));
      b.linears.push_back(add_linear(name + ".token2", cfg_.token_hidden, p, i, cfg_.dirac, rng));
      b.norm2 = add_norm(name + ".norm2", d, i, ParamRole::NormGain, ParamRole::NormShift);
      b.linears.push_back(add_linear(name + ".channel1", d, cfg_.channel_hidden, i, cfg_.dirac, rng));
      b.linears.push_back(add_linear(name + ".channel2", cfg_.channel_hidden, d, i, cfg_.dirac, rng));
    }
    blocks_.push_back(std::move(b));
  }
  for (int h = 0; h < cfg_.heads; ++h) {
    const std::string name = "head" + std::to_string(h);
    Head head;
    head.has_norm = cfg_.head_norm;
    if (head.has_norm)
      head.norm = add_norm(name + ".norm", d, -h - 1, ParamRole::HeadNormGain, ParamRole::HeadNormShift);
    head.out = add_linear(name, d, static_cast<std::size_t>(cfg_.classes), -h - 1, false, rng);
    heads_.push_back(head);
  }
}

std::size_t Network::param_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.value.size();
  return n;
}

std::vector<std::size_t> Network::block_param_indices(int block) const {
  std::vector<std::size_t> out;
  for (std::size_t k = 0; k < info_.size(); ++k)
    if (info_[k].block == block) out.push_back(k);
  return out;
}

std::size_t Network::block_param_count(int block) const {
  std::size_t n = 0;
  for (std::size_t k : block_param_indices(block)) n += params_[k].value.size();
  return n;
}

std::pair<std::size_t, std::size_t> Network::output_projection(int block) const {
  if (block < 1 || block > depth()) throw InputError("block index out of range");
  const Linear& l = blocks_[static_cast<std::size_t>(block - 1)].linears.back();
  return {l.w, l.b};
}

// ---- forward ------------------------------------------------------------------

Tensor patchify(const Tensor& images, std::size_t patch) {
  if (images.rank() != 4 || images.dim(2) != images.dim(3) || patch == 0 ||
      images.dim(2) % patch != 0)
    throw DimensionError("patchify: cannot split " + shape_str(images.shape()) +
                         " into patches of " + std::to_string(patch));
  const std::size_t b = images.dim(0), c = images.dim(1), side = images.dim(2);
  const std::size_t per_side = side / patch, tokens = per_side * per_side;
  const std::size_t feat = c * patch * patch;
  Tensor out({b * tokens, feat});
  auto dst = out.data();
  auto src = images.data();
  for (std::size_t n = 0; n < b; ++n)
    for (std::size_t py = 0; py < per_side; ++py)
      for (std::size_t px = 0; px < per_side; ++px) {
        const std::size_t row = n * tokens + py * per_side + px;
        std::size_t f = 0;
        for (std::size_t ch = 0; ch < c; ++ch)
          for (std::size_t y = 0; y < patch; ++y)
            for (std::size_t x = 0; x < patch; ++x, ++f)
              dst[row * feat + f] =
                  src[((n * c + ch) * side + py * patch + y) * side + px * patch + x];
      }
  return out;
}

Var Network::linear(Tape& tape, const Linear& l, Var x) {
  Var xw = matmul(x, tape.param(params_[l.w]));
  if (l.dirac) xw = add(x, xw);
  return add_bias(xw, tape.param(params_[l.b]));
}

Var Network::norm(Tape& tape, const Norm& n, Var x) {
  return layer_norm(x, tape.param(params_[n.g]), tape.param(params_[n.b]));
}

Var Network::embed(Tape& tape, const Tensor& x) {
  Shape want = cfg_.input_shape();
  want.insert(want.begin(), x.rank() ? x.dim(0) : 0);
  if (x.shape() != want)
    throw DimensionError("network input " + shape_str(x.shape()) + " does not match " +
                         shape_str(want));
  if (cfg_.embed == EmbedType::Identity) return tape.constant(x);
  Var in = tape.constant(cfg_.embed == EmbedType::Patchify ? patchify(x, cfg_.patch) : x);
  return linear(tape, embed_, in);
}

Var Network::apply_block(Tape& tape, const Block& b, Var x, std::size_t batch) {
  if (cfg_.block == BlockType::Dense) {
    Var h = b.has_norm ? norm(tape, b.norm, x) : x;
    h = linear(tape, b.linears[0], h);
    if (b.linears.size() == 2) return linear(tape, b.linears[1], gelu(h));
    return cfg_.dense_gelu ? gelu(h) : h;
  }
  // Token mixing acts along the patch axis of every channel.
  Var t = transpose_groups(norm(tape, b.norm, x), batch);
  t = linear(tape, b.linears[1], gelu(linear(tape, b.linears[0], t)));
  Var u = norm(tape, b.norm2, transpose_groups(t, batch));
  return linear(tape, b.linears[3], gelu(linear(tape, b.linears[2], u)));
}

std::vector<Var> Network::forward_collect(Tape& tape, const Tensor& x, const ForwardOptions& opt) {
  const int depth = opt.depth < 0 ? cfg_.depth : opt.depth;
  if (depth > cfg_.depth) throw InputError("forward depth exceeds network depth");
  if (!opt.drop.empty()) {
    if (cfg_.connectivity != Connectivity::Residual)
      throw ConfigError("layer dropout needs residual connectivity");
    if (opt.drop.size() != static_cast<std::size_t>(cfg_.depth))
      throw InputError("drop mask length differs from depth");
  }
  const std::size_t batch = x.dim(0);
  std::vector<Var> out;
  out.reserve(static_cast<std::size_t>(depth) + 1);
  out.push_back(embed(tape, x));
  for (int i = 1; i <= depth; ++i) {
    Var prev = out.back();
    if (!opt.drop.empty() && opt.drop[static_cast<std::size_t>(i - 1)]) {
      out.push_back(prev);
      continue;
    }
    Var in = opt.detach_block_inputs ? tape.detach(prev) : prev;
    Var f = apply_block(tape, blocks_[static_cast<std::size_t>(i - 1)], in, batch);
    out.push_back(cfg_.connectivity == Connectivity::Residual ? add(prev, f) : f);
  }
  return out;
}

Var Network::aggregate(const std::vector<Var>& outputs, int k) const {
  if (k < 0 || static_cast<std::size_t>(k) >= outputs.size())
    throw InputError("aggregate depth " + std::to_string(k) + " outside [0, " +
                     std::to_string(outputs.size() - 1) + "]");
  if (cfg_.connectivity != Connectivity::ACN) return outputs[static_cast<std::size_t>(k)];
  Var y = outputs[0];
  for (int i = 1; i <= k; ++i) y = add(y, outputs[static_cast<std::size_t>(i)]);
  return y;
}

Var Network::predict(Tape& tape, Var y, int head) {
  if (head < 0 || head >= cfg_.heads) throw InputError("head index out of range");
  const Shape& s = y.shape();
  const std::size_t tokens = cfg_.tokens();
  if (s.size() != 2 || s[1] != cfg_.width || s[0] % tokens != 0)
    throw DimensionError("head input " + shape_str(s) + " does not match width " +
                         std::to_string(cfg_.width));
  const Head& h = heads_[static_cast<std::size_t>(head)];
  Var z = h.has_norm ? norm(tape, h.norm, y) : y;
  if (tokens > 1) z = mean_rows(z, s[0] / tokens);
  return linear(tape, h.out, z);
}

Var Network::logits(Tape& tape, const Tensor& x, int head) {
  auto outs = forward_collect(tape, x);
  return predict(tape, aggregate(outs, depth()), head);
}

// ---- editing ------------------------------------------------------------------

Network Network::truncate(int k) const {
  if (cfg_.connectivity != Connectivity::ACN)
    throw ConfigError("truncation is only sound for ACN connectivity");
  if (k < 0 || k > depth()) throw InputError("truncation depth out of range");
  Network out;
  out.cfg_ = cfg_;
  out.cfg_.depth = k;
  check_config(out.cfg_, 0);
  out.build(0);
  std::map<std::string, const Parameter*> by_name;
  for (const auto& p : params_) by_name[p.name] = &p;
  for (auto& p : out.params_) {
    const Parameter* src = by_name.at(p.name);
    p.value = src->value;
    p.mask = src->mask;
    p.requires_grad = src->requires_grad;
    p.grad = Tensor();
  }
  return out;
}

void Network::zero_grad() {
  for (auto& p : params_) p.zero_grad();
}

void Network::apply_masks() {
  for (auto& p : params_) p.apply_mask();
}

bool operator==(const Network& a, const Network& b) {
  if (!(a.cfg_ == b.cfg_) || a.params_.size() != b.params_.size()) return false;
  for (std::size_t k = 0; k < a.params_.size(); ++k) {
    const auto& p = a.params_[k];
    const auto& q = b.params_[k];
    if (p.name != q.name || !(p.value == q.value) || p.mask != q.mask) return false;
  }
  return true;
}

// ---- checkpoints ----------------------------------------------------------------

static constexpr char kCheckpointMagic[8] = {'A', 'C', 'N', 'C', 'K', 'P', 'T', '1'};

void Network::save(const std::filesystem::path& path) const {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot write " + path.string());
  save(os);
  if (!os) throw IoError("write failed for " + path.string());
}

void Network::save(std::ostream& os) const {
  os.write(kCheckpointMagic, sizeof kCheckpointMagic);
  binio::put_string(os, to_json(cfg_).dump());
  binio::put<std::uint64_t>(os, params_.size());
  for (const auto& p : params_) {
    binio::put_string(os, p.name);
    binio::put<std::uint32_t>(os, static_cast<std::uint32_t>(p.value.rank()));
    for (auto e : p.value.shape()) binio::put<std::uint64_t>(os, e);
    binio::put<std::uint64_t>(os, p.value.size());
    binio::put_doubles(os, p.value.data());
    binio::put<std::uint64_t>(os, p.mask.size());
    os.write(reinterpret_cast<const char*>(p.mask.data()), static_cast<std::streamsize>(p.mask.size()));
  }
}

Network Network::load(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open " + path.string());
  char magic[8];
  if (!is.read(magic, sizeof magic) || !std::equal(magic, magic + 8, kCheckpointMagic))
    throw FormatError(path.string() + " is not a network checkpoint");
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(binio::get_string(is));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("checkpoint config: ") + e.what());
  }
  Network net;
  net.cfg_ = network_config_from_json(j);
  check_config(net.cfg_, 0);
  net.build(0);
  if (binio::get<std::uint64_t>(is) != net.params_.size())
    throw FormatError("checkpoint parameter count differs from its config");
  for (auto& p : net.params_) {
    if (binio::get_string(is) != p.name) throw FormatError("checkpoint parameter order mismatch");
    const auto rank = binio::get<std::uint32_t>(is);
    Shape shape(rank);
    for (auto& e : shape) e = binio::get<std::uint64_t>(is);
    if (shape != p.value.shape() || binio::get<std::uint64_t>(is) != p.value.size())
      throw FormatError("checkpoint shape mismatch for " + p.name);
    binio::get_doubles(is, p.value.data());
    const auto m = binio::get<std::uint64_t>(is);
    if (m != 0 && m != p.value.size()) throw FormatError("checkpoint mask size mismatch");
    p.mask.resize(m);
    if (m && !is.read(reinterpret_cast<char*>(p.mask.data()), static_cast<std::streamsize>(m)))
      throw FormatError("unexpected end of file");
  }
  return net;
}

}  // namespace acn
