#include "acn/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <numeric>

#include "acn/binio.hpp"
#include "acn/error.hpp"
#include "acn/rng.hpp"

namespace acn {

std::size_t Dataset::example_size() const {
  if (labels.empty()) return 0;
  return inputs.size() / labels.size();
}

Shape Dataset::example_shape() const {
  return Shape(inputs.shape().begin() + 1, inputs.shape().end());
}

Tensor Dataset::gather(std::span<const std::size_t> indices) const {
  const std::size_t per = example_size();
  Shape shape = inputs.shape();
  shape[0] = indices.size();
  Tensor out(shape);
  for (std::size_t k = 0; k < indices.size(); ++k) {
    const auto src = inputs.data().subspan(indices[k] * per, per);
    std::copy(src.begin(), src.end(), out.data().begin() + static_cast<std::ptrdiff_t>(k * per));
  }
  return out;
}

std::vector<int> Dataset::gather_labels(std::span<const std::size_t> indices) const {
  std::vector<int> out(indices.size());
  for (std::size_t k = 0; k < indices.size(); ++k) out[k] = labels[indices[k]];
  return out;
}

Dataset Dataset::subset(std::span<const std::size_t> indices) const {
  if (indices.empty()) throw InputError("subset: no examples selected");
  Dataset out;
  out.inputs = gather(indices);
  out.labels = gather_labels(indices);
  out.num_classes = num_classes;
  out.split = split;
  return out;
}

void Dataset::validate() const {
  if (labels.empty()) throw InputError("dataset is empty");
  if (inputs.empty() || inputs.dim(0) != labels.size())
    throw InputError("dataset has " + std::to_string(labels.size()) +
                     " labels but inputs of shape " + shape_str(inputs.shape()));
  for (int y : labels)
    if (y < 0 || y >= num_classes)
      throw InputError("label " + std::to_string(y) + " outside [0, " +
                       std::to_string(num_classes) + ")");
}

std::vector<std::size_t> class_histogram(const Dataset& ds) {
  std::vector<std::size_t> h(static_cast<std::size_t>(ds.num_classes), 0);
  for (int y : ds.labels) ++h.at(static_cast<std::size_t>(y));
  return h;
}

// ---- CIFAR-10 -------------------------------------------------------------

Dataset parse_cifar10(std::span<const std::uint8_t> bytes, std::string split) {
  if (bytes.empty() || bytes.size() % kCifarRecordBytes != 0)
    throw FormatError("CIFAR-10 data of " + std::to_string(bytes.size()) +
                      " bytes is not a whole number of 3073-byte records");
  const std::size_t n = bytes.size() / kCifarRecordBytes;
  constexpr std::size_t pixels = 3 * kCifarSide * kCifarSide;
  Dataset ds;
  ds.inputs = Tensor({n, 3, kCifarSide, kCifarSide});
  ds.labels.resize(n);
  ds.num_classes = 10;
  ds.split = std::move(split);
  auto out = ds.inputs.data();
  for (std::size_t r = 0; r < n; ++r) {
    const std::uint8_t* rec = bytes.data() + r * kCifarRecordBytes;
    if (rec[0] > 9)
      throw FormatError("CIFAR-10 record " + std::to_string(r) + " has label " +
                        std::to_string(rec[0]));
    ds.labels[r] = rec[0];
    // Record layout (R plane, G plane, B plane) already matches [C, H, W].
    for (std::size_t k = 0; k < pixels; ++k) out[r * pixels + k] = rec[1 + k] / 255.0;
  }
  return ds;
}

Dataset read_cifar10_file(const std::filesystem::path& path, std::string split) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
  try {
    return parse_cifar10(bytes, std::move(split));
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

static Dataset concat(std::vector<Dataset> parts) {
  std::size_t n = 0;
  for (const auto& p : parts) n += p.size();
  Dataset out;
  Shape shape = parts.front().inputs.shape();
  shape[0] = n;
  out.inputs = Tensor(shape);
  out.num_classes = parts.front().num_classes;
  out.split = parts.front().split;
  std::size_t offset = 0;
  for (auto& p : parts) {
    std::copy(p.inputs.data().begin(), p.inputs.data().end(),
              out.inputs.data().begin() + static_cast<std::ptrdiff_t>(offset));
    offset += p.inputs.size();
    out.labels.insert(out.labels.end(), p.labels.begin(), p.labels.end());
  }
  return out;
}

std::pair<Dataset, Dataset> load_cifar10(const std::filesystem::path& dir) {
  std::vector<Dataset> train;
  for (int i = 1; i <= 5; ++i)
    train.push_back(read_cifar10_file(dir / ("data_batch_" + std::to_string(i) + ".bin"), "train"));
  Dataset test = read_cifar10_file(dir / "test_batch.bin", "test");
  return {concat(std::move(train)), std::move(test)};
}

// ---- synthetic ------------------------------------------------------------

namespace {

struct SynthStructure {
  std::vector<std::vector<double>> centres;  // [class * modes][dim]
  std::vector<double> basis;                 // [dim x 2], orthonormal columns
  std::vector<double> projection;            // [pixels x dim]
};

SynthStructure make_structure(const SynthSpec& spec) {
  Rng rng(derive_seed(spec.seed, 0xC1A55ULL));
  std::normal_distribution<double> normal(0.0, 1.0);
  SynthStructure s;
  const double scale = spec.separation / std::sqrt(static_cast<double>(spec.dim));
  const int modes = std::max(1, spec.modes_per_class);
  s.centres.resize(static_cast<std::size_t>(spec.n_classes * modes));
  for (auto& c : s.centres) {
    c.resize(spec.dim);
    for (auto& v : c) v = scale * normal(rng);
  }
  if (spec.dim >= 2) {
    // Two orthonormal directions by Gram-Schmidt.
    std::vector<double> a(spec.dim), b(spec.dim);
    for (auto& v : a) v = normal(rng);
    for (auto& v : b) v = normal(rng);
    double na = std::sqrt(std::inner_product(a.begin(), a.end(), a.begin(), 0.0));
    for (auto& v : a) v /= na;
    const double proj = std::inner_product(a.begin(), a.end(), b.begin(), 0.0);
    for (std::size_t k = 0; k < spec.dim; ++k) b[k] -= proj * a[k];
    double nb = std::sqrt(std::inner_product(b.begin(), b.end(), b.begin(), 0.0));
    for (auto& v : b) v /= nb;
    s.basis.resize(spec.dim * 2);
    for (std::size_t k = 0; k < spec.dim; ++k) {
      s.basis[k * 2] = a[k];
      s.basis[k * 2 + 1] = b[k];
    }
  }
  if (spec.image_size > 0) {
    const std::size_t pixels = spec.image_channels * spec.image_size * spec.image_size;
    s.projection.resize(pixels * spec.dim);
    const double inv = 1.0 / std::sqrt(static_cast<double>(spec.dim));
    for (auto& v : s.projection) v = inv * normal(rng);
  }
  return s;
}

}  // namespace

Dataset synth_classification(const SynthSpec& spec, std::uint64_t sample_stream,
                             std::string split) {
  if (spec.n_classes < 1 || spec.n_per_class < 1 || spec.dim < 1)
    throw InputError("synthetic dataset needs positive class count, size and dimension");
  if (spec.kind == SynthKind::Spirals && spec.dim < 2)
    throw InputError("spirals need at least two latent dimensions");
  if (spec.image_size > 0 && spec.image_channels == 0)
    throw InputError("rendered images need at least one channel");

  const SynthStructure s = make_structure(spec);
  Rng rng(derive_seed(spec.seed, 1000 + sample_stream));
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const int modes = std::max(1, spec.modes_per_class);

  const std::size_t n = static_cast<std::size_t>(spec.n_classes) * spec.n_per_class;
  std::vector<double> latent(n * spec.dim);
  std::vector<int> labels(n);
  std::size_t row = 0;
  for (int c = 0; c < spec.n_classes; ++c) {
    for (int k = 0; k < spec.n_per_class; ++k, ++row) {
      labels[row] = c;
      double* v = latent.data() + row * spec.dim;
      if (spec.kind == SynthKind::Blobs) {
        const int m = modes == 1 ? 0 : static_cast<int>(unit(rng) * modes) % modes;
        const auto& centre = s.centres[static_cast<std::size_t>(c * modes + m)];
        for (std::size_t d = 0; d < spec.dim; ++d) v[d] = centre[d] + spec.noise * normal(rng);
      } else {
        const double t = unit(rng);
        const double angle = 2.0 * std::numbers::pi * (static_cast<double>(c) / spec.n_classes + t);
        const double r = spec.separation * (0.25 + t);
        const double px = r * std::cos(angle), py = r * std::sin(angle);
        for (std::size_t d = 0; d < spec.dim; ++d)
          v[d] = s.basis[d * 2] * px + s.basis[d * 2 + 1] * py + spec.noise * normal(rng);
      }
    }
  }

  Dataset ds;
  ds.labels = std::move(labels);
  ds.num_classes = spec.n_classes;
  ds.split = std::move(split);
  if (spec.image_size == 0) {
    ds.inputs = Tensor({n, spec.dim}, std::move(latent));
    return ds;
  }
  const std::size_t pixels = spec.image_channels * spec.image_size * spec.image_size;
  ds.inputs = Tensor({n, spec.image_channels, spec.image_size, spec.image_size});
  auto out = ds.inputs.data();
  for (std::size_t r = 0; r < n; ++r) {
    const double* v = latent.data() + r * spec.dim;
    for (std::size_t p = 0; p < pixels; ++p) {
      const double* w = s.projection.data() + p * spec.dim;
      double z = 0.0;
      for (std::size_t d = 0; d < spec.dim; ++d) z += w[d] * v[d];
      out[r * pixels + p] = 1.0 / (1.0 + std::exp(-spec.render_gain * z));
    }
  }
  return ds;
}

std::pair<Dataset, Dataset> train_test_split(const Dataset& ds, double test_fraction,
                                             std::uint64_t seed) {
  ds.validate();
  if (!(test_fraction > 0.0 && test_fraction < 1.0))
    throw InputError("test fraction must lie in (0, 1)");
  std::vector<std::vector<std::size_t>> by_class(static_cast<std::size_t>(ds.num_classes));
  for (std::size_t i = 0; i < ds.size(); ++i)
    by_class[static_cast<std::size_t>(ds.labels[i])].push_back(i);
  Rng rng(seed);
  std::vector<char> is_test(ds.size(), 0);
  for (auto& idx : by_class) {
    std::shuffle(idx.begin(), idx.end(), rng);
    const auto k = static_cast<std::size_t>(std::lround(test_fraction * static_cast<double>(idx.size())));
    for (std::size_t j = 0; j < k && j < idx.size(); ++j) is_test[idx[j]] = 1;
  }
  std::vector<std::size_t> train_idx, test_idx;
  for (std::size_t i = 0; i < ds.size(); ++i) (is_test[i] ? test_idx : train_idx).push_back(i);
  Dataset train = ds.subset(train_idx);
  Dataset test = ds.subset(test_idx);
  train.split = "train";
  test.split = "test";
  return {std::move(train), std::move(test)};
}

Dataset select_classes(const Dataset& ds, std::span<const int> classes) {
  if (classes.empty()) throw InputError("select_classes: empty class list");
  std::vector<int> remap(static_cast<std::size_t>(ds.num_classes), -1);
  for (std::size_t k = 0; k < classes.size(); ++k) {
    const int c = classes[k];
    if (c < 0 || c >= ds.num_classes) throw InputError("select_classes: class out of range");
    if (remap[static_cast<std::size_t>(c)] != -1)
      throw InputError("select_classes: duplicate class " + std::to_string(c));
    remap[static_cast<std::size_t>(c)] = static_cast<int>(k);
  }
  std::vector<std::size_t> keep;
  for (std::size_t i = 0; i < ds.size(); ++i)
    if (remap[static_cast<std::size_t>(ds.labels[i])] >= 0) keep.push_back(i);
  Dataset out = ds.subset(keep);
  for (auto& y : out.labels) y = remap[static_cast<std::size_t>(y)];
  out.num_classes = static_cast<int>(classes.size());
  return out;
}

Dataset subset_per_class(const Dataset& ds, std::size_t n, std::uint64_t seed) {
  ds.validate();
  const auto hist = class_histogram(ds);
  for (std::size_t c = 0; c < hist.size(); ++c)
    if (hist[c] < n)
      throw InputError("class " + std::to_string(c) + " has " + std::to_string(hist[c]) +
                       " examples, fewer than " + std::to_string(n));
  std::vector<std::size_t> order(ds.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(seed);
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<std::size_t> taken(hist.size(), 0), keep;
  for (std::size_t i : order) {
    auto& t = taken[static_cast<std::size_t>(ds.labels[i])];
    if (t < n) {
      ++t;
      keep.push_back(i);
    }
  }
  return ds.subset(keep);
}

// ---- noise ------------------------------------------------------------------

Dataset add_gaussian_noise(const Dataset& ds, double sigma, std::uint64_t seed) {
  if (!(sigma >= 0.0)) throw InputError("noise sigma must be non-negative");
  Dataset out = ds;
  if (sigma == 0.0) return out;
  Rng rng(seed);
  std::normal_distribution<double> normal(0.0, sigma);
  for (auto& v : out.inputs.values()) v = std::clamp(v + normal(rng), 0.0, 1.0);
  return out;
}

Dataset add_salt_pepper(const Dataset& ds, double p, std::uint64_t seed) {
  if (!(p >= 0.0 && p <= 1.0)) throw InputError("salt-and-pepper fraction must lie in [0, 1]");
  if (!ds.is_image()) throw InputError("salt-and-pepper noise needs image inputs");
  Dataset out = ds;
  if (p == 0.0) return out;
  const std::size_t channels = ds.inputs.dim(1);
  const std::size_t plane = ds.inputs.dim(2) * ds.inputs.dim(3);
  const auto count = static_cast<std::size_t>(std::lround(p * static_cast<double>(plane)));
  Rng rng(seed);
  std::vector<std::size_t> pos(plane);
  auto data = out.inputs.data();
  for (std::size_t img = 0; img < ds.size(); ++img) {
    std::iota(pos.begin(), pos.end(), std::size_t{0});
    // Partial Fisher-Yates: the first `count` entries are a uniform sample.
    for (std::size_t k = 0; k < count; ++k) {
      std::uniform_int_distribution<std::size_t> pick(k, plane - 1);
      std::swap(pos[k], pos[pick(rng)]);
      const double value = (rng() & 1U) ? 1.0 : 0.0;
      for (std::size_t c = 0; c < channels; ++c)
        data[(img * channels + c) * plane + pos[k]] = value;
    }
  }
  return out;
}

// ---- cache ------------------------------------------------------------------

static constexpr char kDatasetMagic[8] = {'A', 'C', 'N', 'D', 'S', 'E', 'T', '1'};

void save_dataset(const Dataset& ds, const std::filesystem::path& path) {
  ds.validate();
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot write " + path.string());
  os.write(kDatasetMagic, sizeof kDatasetMagic);
  binio::put<std::uint32_t>(os, static_cast<std::uint32_t>(ds.inputs.rank()));
  for (auto e : ds.inputs.shape()) binio::put<std::uint64_t>(os, e);
  binio::put<std::int32_t>(os, ds.num_classes);
  binio::put<std::uint64_t>(os, ds.labels.size());
  for (int y : ds.labels) binio::put<std::int32_t>(os, y);
  binio::put_string(os, ds.split);
  binio::put_doubles(os, ds.inputs.data());
  if (!os) throw IoError("write failed for " + path.string());
}

Dataset load_dataset(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open " + path.string());
  char magic[8];
  if (!is.read(magic, sizeof magic) || !std::equal(magic, magic + 8, kDatasetMagic))
    throw FormatError(path.string() + " is not a dataset cache");
  const auto rank = binio::get<std::uint32_t>(is);
  if (rank < 2 || rank > 4) throw FormatError("dataset cache: bad rank");
  Shape shape(rank);
  for (auto& e : shape) e = binio::get<std::uint64_t>(is);
  Dataset ds;
  ds.num_classes = binio::get<std::int32_t>(is);
  const auto n = binio::get<std::uint64_t>(is);
  if (n != shape[0]) throw FormatError("dataset cache: label count mismatch");
  ds.labels.resize(n);
  for (auto& y : ds.labels) y = binio::get<std::int32_t>(is);
  ds.split = binio::get_string(is);
  ds.inputs = Tensor(shape);
  binio::get_doubles(is, ds.inputs.data());
  ds.validate();
  return ds;
}

}  // namespace acn
