#pragma once

#include <cstdint>
#include <deque>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "acn/autodiff.hpp"
#include "acn/rng.hpp"

namespace acn {

enum class Connectivity { FFN, Residual, ACN };
enum class BlockType { Dense, Mixer };
enum class EmbedType { Patchify, Linear, Identity };

std::string_view to_string(Connectivity c);
std::string_view to_string(BlockType b);
std::string_view to_string(EmbedType e);
Connectivity parse_connectivity(std::string_view s);
BlockType parse_block_type(std::string_view s);
EmbedType parse_embed_type(std::string_view s);

struct NetworkConfig {
  int depth = 8;
  Connectivity connectivity = Connectivity::ACN;
  BlockType block = BlockType::Mixer;
  // Channel width of the representation carried between blocks.
  std::size_t width = 64;

  // Dense blocks: norm -> linear(width, hidden) -> gelu -> linear(hidden, width).
  // hidden = 0 gives a single linear(width, width), followed by gelu when
  // dense_gelu is set.
  std::size_t hidden = 0;
  bool dense_gelu = true;
  bool dense_norm = true;

  // Mixer blocks: token MLP hidden size and channel MLP hidden size.
  std::size_t token_hidden = 32;
  std::size_t channel_hidden = 256;

  // Block linear layers compute x + x W instead of x W; they must be square.
  bool dirac = false;

  EmbedType embed = EmbedType::Patchify;
  std::size_t image_size = 32;
  std::size_t image_channels = 3;
  std::size_t patch = 4;
  // Feature count for Linear/Identity embeddings of vector inputs.
  std::size_t input_dim = 0;

  int classes = 10;
  // Independent output heads sharing the trunk (one per task).
  int heads = 1;
  bool head_norm = true;
  double init_std = 0.02;

  // Throws ConfigError on inconsistent settings.
  void validate() const;
  // Tokens per example: patches for images, 1 for vectors.
  std::size_t tokens() const;
  Shape input_shape() const;

  friend bool operator==(const NetworkConfig&, const NetworkConfig&) = default;
};

nlohmann::json to_json(const NetworkConfig& cfg);
// Unknown keys and type mismatches raise ConfigError naming the key path.
NetworkConfig network_config_from_json(const nlohmann::json& j, const std::string& path = "network");

enum class ParamRole {
  EmbedWeight,
  EmbedBias,
  NormGain,
  NormShift,
  LinearWeight,
  LinearBias,
  HeadNormGain,
  HeadNormShift,
  HeadWeight,
  HeadBias,
};

struct ParamInfo {
  ParamRole role;
  // 0 for the embedding, 1..L for blocks, -1 for heads.
  int block = 0;
  int head = -1;
  // Set on block linear weights that act as x + x W.
  bool dirac = false;
};

struct ForwardOptions {
  // Every block consumes a detached copy of its input, so block parameters
  // receive gradient only through the block's own output.
  bool detach_block_inputs = false;
  // Evaluate blocks 1..depth only; -1 means all.
  int depth = -1;
  // Residual only: drop[i-1] skips block i (x_i = x_{i-1}).
  std::vector<bool> drop;
};

class Network {
 public:
  Network() = default;
  Network(NetworkConfig cfg, std::uint64_t seed);

  const NetworkConfig& config() const { return cfg_; }
  int depth() const { return cfg_.depth; }

  std::deque<Parameter>& params() { return params_; }
  const std::deque<Parameter>& params() const { return params_; }
  const std::vector<ParamInfo>& info() const { return info_; }
  std::size_t param_count() const;
  // Parameters of block i (1..L), embedding (0) or heads (-1).
  std::vector<std::size_t> block_param_indices(int block) const;
  std::size_t block_param_count(int block) const;
  // Last linear layer of block i: its weight and bias indices.
  std::pair<std::size_t, std::size_t> output_projection(int block) const;

  // [x_0, x_1, ..., x_depth], each [batch * tokens, width].
  std::vector<Var> forward_collect(Tape& tape, const Tensor& x, const ForwardOptions& opt = {});
  // ACN: x_0 + ... + x_k summed in ascending order. FFN/Residual: x_k.
  Var aggregate(const std::vector<Var>& outputs, int k) const;
  // Head `head` applied to a representation of batch examples -> [batch, classes].
  Var predict(Tape& tape, Var y, int head = 0);
  // Full-depth logits.
  Var logits(Tape& tape, const Tensor& x, int head = 0);

  // ACN only: blocks k+1..L removed.
  Network truncate(int k) const;

  void zero_grad();
  void apply_masks();

  void save(const std::filesystem::path& path) const;
  void save(std::ostream& os) const;
  static Network load(const std::filesystem::path& path);

  friend bool operator==(const Network& a, const Network& b);

 private:
  struct Linear {
    std::size_t w, b;
    bool dirac;
  };
  struct Norm {
    std::size_t g, b;
  };
  struct Block {
    // Dense: norm (optional), l1, l2 (when hidden > 0).
    // Mixer: norm = token norm, l1/l2 token MLP, norm2, l3/l4 channel MLP.
    bool has_norm = false;
    Norm norm{}, norm2{};
    std::vector<Linear> linears;
  };
  struct Head {
    bool has_norm = false;
    Norm norm{};
    Linear out{};
  };

  std::size_t add_param(std::string name, Tensor value, ParamInfo info);
  Linear add_linear(const std::string& name, std::size_t in, std::size_t out, int block,
                    bool dirac, Rng& rng);
  Norm add_norm(const std::string& name, std::size_t width, int block, ParamRole gain,
                ParamRole shift);
  void build(std::uint64_t seed);

  Var embed(Tape& tape, const Tensor& x);
  Var apply_block(Tape& tape, const Block& b, Var x, std::size_t batch);
  Var linear(Tape& tape, const Linear& l, Var x);
  Var norm(Tape& tape, const Norm& n, Var x);

  NetworkConfig cfg_;
  std::deque<Parameter> params_;
  std::vector<ParamInfo> info_;
  bool embed_has_bias_ = false;
  Linear embed_{};
  std::vector<Block> blocks_;
  std::vector<Head> heads_;
};

// Flattens an image batch [B, C, H, W] into patch rows [B * P, C * p * p],
// patches in row-major order, each patch channel-major.
Tensor patchify(const Tensor& images, std::size_t patch);

}  // namespace acn
