#include <cmath>
#include <filesystem>
#include <random>

#include "acn/error.hpp"
#include "acn/gradcheck.hpp"
#include "acn/network.hpp"
#include "doctest.h"

using namespace acn;

namespace {

NetworkConfig tiny_mixer(Connectivity c = Connectivity::ACN) {
  NetworkConfig cfg;
  cfg.depth = 3;
  cfg.connectivity = c;
  cfg.block = BlockType::Mixer;
  cfg.width = 6;
  cfg.token_hidden = 5;
  cfg.channel_hidden = 7;
  cfg.image_size = 4;
  cfg.image_channels = 2;
  cfg.patch = 2;
  cfg.classes = 3;
  return cfg;
}

NetworkConfig tiny_dense(Connectivity c = Connectivity::ACN) {
  NetworkConfig cfg;
  cfg.depth = 4;
  cfg.connectivity = c;
  cfg.block = BlockType::Dense;
  cfg.width = 5;
  cfg.hidden = 7;
  cfg.embed = EmbedType::Linear;
  cfg.input_dim = 3;
  cfg.classes = 4;
  return cfg;
}

Tensor random_input(const NetworkConfig& cfg, std::size_t batch, std::uint64_t seed) {
  Shape s = cfg.input_shape();
  s.insert(s.begin(), batch);
  Tensor t(s);
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (auto& v : t.values()) v = u(rng);
  return t;
}

// Larger init so finite differences see non-trivial curvature.
void scramble(Network& net, std::uint64_t seed, double scale = 0.5) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0.0, scale);
  for (auto& p : net.params())
    for (auto& v : p.value.values()) v += n(rng);
}

void zero_output_projections(Network& net) {
  for (int i = 1; i <= net.depth(); ++i) {
    auto [w, b] = net.output_projection(i);
    net.params()[w].value.fill(0.0);
    net.params()[b].value.fill(0.0);
  }
}

std::vector<Parameter*> all_params(Network& net) {
  std::vector<Parameter*> out;
  for (auto& p : net.params()) out.push_back(&p);
  return out;
}

}  // namespace

TEST_CASE("build") {
  NetworkConfig cfg = tiny_mixer();
  cfg.depth = 0;
  CHECK_THROWS_AS(Network(cfg, 1), ConfigError);
  cfg = tiny_mixer();
  cfg.patch = 3;
  CHECK_THROWS_AS(Network(cfg, 1), ConfigError);

  CHECK(Network(tiny_mixer(), 5) == Network(tiny_mixer(), 5));
  CHECK_FALSE(Network(tiny_mixer(), 5) == Network(tiny_mixer(), 6));

  NetworkConfig paper;
  paper.depth = 16;
  paper.width = 128;
  paper.patch = 4;
  paper.channel_hidden = 512;
  paper.token_hidden = 64;
  paper.image_size = 32;
  const Network big(paper, 1);
  CHECK(big.depth() == 16);
  CHECK(big.config().tokens() == 64);
  // per block: 2 norms + token MLP + channel MLP
  const std::size_t per_block =
      4 * 128 + (64 * 64 + 64) + (64 * 64 + 64) + (128 * 512 + 512) + (512 * 128 + 128);
  CHECK(big.block_param_count(7) == per_block);
}

TEST_CASE("initialization") {
  const Network net(tiny_mixer(), 3);
  for (std::size_t k = 0; k < net.params().size(); ++k) {
    const auto& p = net.params()[k];
    switch (net.info()[k].role) {
      case ParamRole::NormGain:
      case ParamRole::HeadNormGain:
        for (double v : p.value.data()) CHECK(v == 1.0);
        break;
      case ParamRole::NormShift:
      case ParamRole::HeadNormShift:
      case ParamRole::LinearBias:
      case ParamRole::EmbedBias:
      case ParamRole::HeadBias:
        for (double v : p.value.data()) CHECK(v == 0.0);
        break;
      default:
        for (double v : p.value.data()) CHECK(std::abs(v) <= 0.04);
    }
  }
}

TEST_CASE("patchify layout") {
  // one image, one channel, 4x4 with values 0..15, patch 2
  Tensor img({1, 1, 4, 4});
  for (std::size_t k = 0; k < 16; ++k) img[k] = static_cast<double>(k);
  const Tensor p = patchify(img, 2);
  CHECK(p.shape() == Shape{4, 4});
  CHECK(p == Tensor({4, 4}, {0, 1, 4, 5, 2, 3, 6, 7, 8, 9, 12, 13, 10, 11, 14, 15}));
  CHECK_THROWS_AS(patchify(img, 3), DimensionError);
}

TEST_CASE("forward_collect with zeroed blocks") {
  for (auto cfg : {tiny_mixer(Connectivity::ACN), tiny_dense(Connectivity::ACN)}) {
    Network net(cfg, 2);
    zero_output_projections(net);
    Tape t;
    const auto outs = net.forward_collect(t, random_input(cfg, 3, 1));
    REQUIRE(outs.size() == static_cast<std::size_t>(cfg.depth) + 1);
    for (std::size_t i = 1; i < outs.size(); ++i)
      for (double v : outs[i].value().data()) CHECK(v == 0.0);
    for (int k = 0; k <= cfg.depth; ++k) CHECK(net.aggregate(outs, k).value() == outs[0].value());
    CHECK_THROWS_AS(net.aggregate(outs, cfg.depth + 1), InputError);
  }
  for (auto cfg : {tiny_mixer(Connectivity::Residual), tiny_dense(Connectivity::Residual)}) {
    Network net(cfg, 2);
    zero_output_projections(net);
    Tape t;
    const auto outs = net.forward_collect(t, random_input(cfg, 3, 1));
    for (const auto& x : outs) CHECK(x.value() == outs[0].value());
  }
}

TEST_CASE("forward shape checks") {
  Network net(tiny_mixer(), 1);
  Tape t;
  CHECK_THROWS_AS(net.forward_collect(t, Tensor({2, 3, 4, 4})), DimensionError);
  CHECK_THROWS_AS(net.predict(t, t.constant(Tensor({4, 5})), 0), DimensionError);
  auto outs = net.forward_collect(t, random_input(net.config(), 2, 1));
  CHECK_THROWS_AS(net.predict(t, outs[0], 1), InputError);
}

TEST_CASE("predict") {
  Network net(tiny_mixer(), 4);
  for (std::size_t k = 0; k < net.params().size(); ++k)
    if (net.info()[k].role == ParamRole::HeadWeight) net.params()[k].value.fill(0.0);
  Tape t;
  const Tensor x = random_input(net.config(), 5, 2);
  Var z = net.logits(t, x);
  CHECK(z.shape() == Shape{5, 3});
  const int labels[] = {0, 1, 2, 0, 1};
  CHECK(softmax_cross_entropy(z, labels).value().item() ==
        doctest::Approx(std::log(3.0)).epsilon(1e-14));

  Network fresh(tiny_mixer(), 4);
  Tape t2;
  auto outs = fresh.forward_collect(t2, x);
  Var y = fresh.aggregate(outs, 3);
  CHECK(fresh.predict(t2, y).value() == fresh.predict(t2, y).value());
  Tape t3;
  CHECK(fresh.logits(t3, x).value() == fresh.predict(t2, y).value());
}

TEST_CASE("connectivity changes wiring only") {
  CHECK(Network(tiny_mixer(Connectivity::ACN), 1).param_count() ==
        Network(tiny_mixer(Connectivity::Residual), 1).param_count());
  CHECK(Network(tiny_dense(Connectivity::FFN), 1).param_count() ==
        Network(tiny_dense(Connectivity::ACN), 1).param_count());
}

TEST_CASE("dirac parameterization") {
  NetworkConfig cfg;
  cfg.depth = 4;
  cfg.block = BlockType::Dense;
  cfg.width = 3;
  cfg.hidden = 0;
  cfg.dense_gelu = false;
  cfg.dense_norm = false;
  cfg.embed = EmbedType::Identity;
  cfg.input_dim = 3;
  cfg.dirac = true;
  cfg.classes = 2;
  Network net(cfg, 1);
  for (std::size_t k = 0; k < net.params().size(); ++k)
    if (net.info()[k].block >= 1) net.params()[k].value.fill(0.0);
  const Tensor x({2, 3}, {1, -2, 3, 0.5, 0.25, -1});
  Tape t;
  const auto outs = net.forward_collect(t, x);
  for (const auto& xi : outs) CHECK(xi.value() == x);
  for (int k = 0; k <= 4; ++k) {
    const Tensor y = net.aggregate(outs, k).value();
    for (std::size_t j = 0; j < x.size(); ++j) CHECK(y[j] == (k + 1) * x[j]);
  }

  // (I + W) with W against a plain layer holding V = I + W
  NetworkConfig plain = cfg;
  plain.dirac = false;
  plain.depth = 1;
  NetworkConfig dir = plain;
  dir.dirac = true;
  Network a(dir, 3), b(plain, 3);
  scramble(a, 9, 0.3);
  for (std::size_t k = 0; k < a.params().size(); ++k) b.params()[k].value = a.params()[k].value;
  auto [w, bias] = b.output_projection(1);
  (void)bias;
  for (std::size_t r = 0; r < 3; ++r) b.params()[w].value[r * 3 + r] += 1.0;
  const int labels[] = {1, 0};
  auto grads = [&](Network& n) {
    n.zero_grad();
    Tape tt;
    tt.backward(softmax_cross_entropy(n.logits(tt, x), labels));
    return n.params()[w].grad;
  };
  const Tensor ga = grads(a), gb = grads(b);
  for (std::size_t k = 0; k < ga.size(); ++k) CHECK(ga[k] == doctest::Approx(gb[k]).epsilon(1e-12));

  NetworkConfig bad = tiny_dense();
  bad.dirac = true;
  CHECK_THROWS_AS(Network(bad, 1), ConfigError);
  NetworkConfig mixer = tiny_mixer();
  mixer.dirac = true;
  CHECK_THROWS_AS(Network(mixer, 1), ConfigError);
  mixer.token_hidden = 4;
  mixer.channel_hidden = 6;
  CHECK_NOTHROW(Network(mixer, 1));
}

TEST_CASE("blocks pass finite differences") {
  const int labels[] = {2, 0, 1};
  for (auto cfg : {tiny_mixer(Connectivity::ACN), tiny_mixer(Connectivity::Residual),
                   tiny_dense(Connectivity::FFN), tiny_dense(Connectivity::ACN)}) {
    cfg.depth = 2;
    Network net(cfg, 11);
    scramble(net, 12);
    const Tensor x = random_input(cfg, 3, 13);
    auto ps = all_params(net);
    const double err = finite_diff_check(
        [&](Tape& t) { return softmax_cross_entropy(net.logits(t, x), labels); }, ps);
    CHECK(err < 1e-4);
  }
  NetworkConfig dir = tiny_mixer();
  dir.depth = 2;
  dir.dirac = true;
  dir.token_hidden = 4;
  dir.channel_hidden = 6;
  Network net(dir, 11);
  scramble(net, 14, 0.3);
  const Tensor x = random_input(dir, 3, 15);
  auto ps = all_params(net);
  CHECK(finite_diff_check(
            [&](Tape& t) { return softmax_cross_entropy(net.logits(t, x), labels); }, ps) < 1e-4);
}

TEST_CASE("probe depth k only depends on blocks 1..k") {
  Network net(tiny_mixer(), 21);
  scramble(net, 22, 0.2);
  const Tensor x = random_input(net.config(), 4, 23);
  Tape t;
  const auto before = net.forward_collect(t, x);
  for (std::size_t k : net.block_param_indices(3))
    for (auto& v : net.params()[k].value.values()) v += 0.7;
  Tape t2;
  const auto after = net.forward_collect(t2, x);
  for (int k = 0; k <= 2; ++k) CHECK(net.aggregate(before, k).value() == net.aggregate(after, k).value());
  CHECK_FALSE(net.aggregate(before, 3).value() == net.aggregate(after, 3).value());
}

TEST_CASE("truncate") {
  Network net(tiny_mixer(), 31);
  scramble(net, 32, 0.2);
  const Tensor x = random_input(net.config(), 4, 33);
  Tape t;
  const auto outs = net.forward_collect(t, x);
  for (int k = 0; k <= net.depth(); ++k) {
    Network small = net.truncate(k);
    CHECK(small.depth() == k);
    Tape ts;
    CHECK(small.logits(ts, x).value() == net.predict(t, net.aggregate(outs, k)).value());
    std::size_t removed = 0;
    for (int b = k + 1; b <= net.depth(); ++b) removed += net.block_param_count(b);
    CHECK(net.param_count() - small.param_count() == removed);
  }
  CHECK(net.truncate(net.depth()) == net);
  CHECK_THROWS_AS(Network(tiny_mixer(Connectivity::Residual), 1).truncate(1), ConfigError);
  CHECK_THROWS_AS(net.truncate(4), InputError);
}

TEST_CASE("detached block inputs") {
  Network net(tiny_dense(), 41);
  scramble(net, 42, 0.3);
  const Tensor x = random_input(net.config(), 3, 43);
  const int labels[] = {0, 1, 3};
  Tape t;
  ForwardOptions opt;
  opt.detach_block_inputs = true;
  auto outs = net.forward_collect(t, x, opt);
  Tape plain;
  auto ref = net.forward_collect(plain, x);
  for (std::size_t i = 0; i < outs.size(); ++i) CHECK(outs[i].value() == ref[i].value());
  net.zero_grad();
  t.backward(softmax_cross_entropy(net.predict(t, net.aggregate(outs, net.depth())), labels));
  // the embedding only feeds block 1 and the sum; its sum path still carries gradient
  bool any = false;
  for (std::size_t k : net.block_param_indices(0))
    for (double g : net.params()[k].grad.data()) any = any || g != 0.0;
  CHECK(any);
}

TEST_CASE("layer dropout") {
  Network net(tiny_dense(Connectivity::Residual), 51);
  const Tensor x = random_input(net.config(), 2, 52);
  ForwardOptions opt;
  opt.drop = {false, true, false, true};
  Tape t;
  auto outs = net.forward_collect(t, x, opt);
  CHECK(outs[2].value() == outs[1].value());
  CHECK(outs[4].value() == outs[3].value());
  Network acn(tiny_dense(), 51);
  Tape t2;
  CHECK_THROWS_AS(acn.forward_collect(t2, x, opt), ConfigError);
}

TEST_CASE("config json and checkpoints") {
  NetworkConfig cfg = tiny_mixer(Connectivity::Residual);
  cfg.heads = 2;
  CHECK(network_config_from_json(to_json(cfg)) == cfg);
  CHECK(network_config_from_json(nlohmann::json::object()) == NetworkConfig{});
  try {
    network_config_from_json(nlohmann::json{{"depht", 3}});
    FAIL("unknown key accepted");
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).find("network.depht") != std::string::npos);
  }
  CHECK_THROWS_AS(network_config_from_json(nlohmann::json{{"depth", "3"}}), ConfigError);

  Network net(cfg, 61);
  scramble(net, 62, 0.1);
  net.params()[5].mask.assign(net.params()[5].value.size(), 1);
  net.params()[5].mask[0] = 0;
  const auto path = std::filesystem::temp_directory_path() / "acnlab_net_test.ckpt";
  net.save(path);
  const Network back = Network::load(path);
  CHECK(back == net);
  std::filesystem::resize_file(path, 100);
  CHECK_THROWS_AS(Network::load(path), FormatError);
  std::filesystem::remove(path);

  Network small = Network(tiny_mixer(), 1).truncate(0);
  small.save(path);
  CHECK(Network::load(path) == small);
  std::filesystem::remove(path);
}
