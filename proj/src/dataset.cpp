#include "lth/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iostream>
#include <nlohmann/json.hpp>
#include <stdexcept>

#include "lth/hash.hpp"

namespace lth {

using json = nlohmann::json;

Dataset Dataset::take(const std::vector<std::int64_t>& positions) const {
  Dataset out;
  const std::int64_t per = example_numel();
  Shape sh = images.shape;
  sh[0] = std::int64_t(positions.size());
  out.images = TensorF(sh);
  out.labels.reserve(positions.size());
  out.ids.reserve(positions.size());
  out.class_count = class_count;
  out.stats = stats;
  if (!label_resampled.empty()) out.label_resampled.reserve(positions.size());
  for (std::size_t i = 0; i < positions.size(); ++i) {
    const std::int64_t p = positions[i];
    if (p < 0 || p >= size()) throw std::out_of_range("Dataset::take: position out of range");
    std::copy(images.ptr() + p * per, images.ptr() + (p + 1) * per,
              out.images.ptr() + std::int64_t(i) * per);
    out.labels.push_back(labels[std::size_t(p)]);
    out.ids.push_back(ids[std::size_t(p)]);
    if (!label_resampled.empty()) out.label_resampled.push_back(label_resampled[std::size_t(p)]);
  }
  return out;
}

std::int64_t Dataset::position_of(std::int64_t id) const {
  for (std::size_t i = 0; i < ids.size(); ++i)
    if (ids[i] == std::int64_t(id)) return std::int64_t(i);
  throw std::out_of_range("Dataset: no example with id " + std::to_string(id));
}

std::uint64_t Dataset::content_hash() const {
  Fnv1a h;
  h.update_vec(images.data).update_vec(labels).update_vec(ids);
  h.update_pod(class_count);
  return h.digest();
}

// ---- IDX --------------------------------------------------------------------

namespace {

std::uint32_t read_be32(std::istream& in, const std::string& what) {
  unsigned char b[4];
  if (!in.read(reinterpret_cast<char*>(b), 4))
    throw std::runtime_error("idx: truncated file while reading " + what);
  return (std::uint32_t(b[0]) << 24) | (std::uint32_t(b[1]) << 16) | (std::uint32_t(b[2]) << 8) |
         std::uint32_t(b[3]);
}

std::vector<unsigned char> read_exact(std::istream& in, std::size_t n, const std::string& what) {
  std::vector<unsigned char> buf(n);
  if (!in.read(reinterpret_cast<char*>(buf.data()), std::streamsize(n)))
    throw std::runtime_error("idx: truncated file while reading " + what);
  return buf;
}

}  // namespace

Dataset load_idx(const std::string& images_path, const std::string& labels_path,
                 std::int64_t class_count) {
  std::ifstream imgs(images_path, std::ios::binary);
  if (!imgs) throw std::runtime_error("idx: cannot open " + images_path);
  const std::uint32_t img_magic = read_be32(imgs, "image magic");
  if (img_magic != 0x00000803)
    throw std::runtime_error("idx: bad image magic number in " + images_path);
  const std::int64_t n = read_be32(imgs, "image count");
  const std::int64_t h = read_be32(imgs, "rows");
  const std::int64_t w = read_be32(imgs, "cols");
  auto pixels = read_exact(imgs, std::size_t(n * h * w), "pixels");

  std::ifstream labs(labels_path, std::ios::binary);
  if (!labs) throw std::runtime_error("idx: cannot open " + labels_path);
  const std::uint32_t lab_magic = read_be32(labs, "label magic");
  if (lab_magic != 0x00000801)
    throw std::runtime_error("idx: bad label magic number in " + labels_path);
  const std::int64_t ln = read_be32(labs, "label count");
  if (ln != n) throw std::runtime_error("idx: image/label count mismatch");
  auto raw_labels = read_exact(labs, std::size_t(n), "labels");

  Dataset ds;
  ds.images = TensorF({n, 1, h, w});
  for (std::int64_t i = 0; i < n * h * w; ++i)
    ds.images[i] = float(pixels[std::size_t(i)]) / 255.0f;
  ds.labels.resize(std::size_t(n));
  ds.ids.resize(std::size_t(n));
  ds.class_count = class_count;
  for (std::int64_t i = 0; i < n; ++i) {
    const auto lab = raw_labels[std::size_t(i)];
    if (std::int64_t(lab) >= class_count)
      throw std::runtime_error("idx: label byte " + std::to_string(int(lab)) +
                               " out of range for " + std::to_string(class_count) + " classes");
    ds.labels[std::size_t(i)] = std::int32_t(lab);
    ds.ids[std::size_t(i)] = i;
  }
  return ds;
}

// ---- CIFAR-10 binary ----------------------------------------------------------

Dataset load_cifar_binary(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cifar: cannot open " + path);
  in.seekg(0, std::ios::end);
  const std::int64_t bytes = in.tellg();
  in.seekg(0, std::ios::beg);
  constexpr std::int64_t kRecord = 1 + 3 * 32 * 32;
  if (bytes == 0 || bytes % kRecord != 0)
    throw std::runtime_error("cifar: truncated file (size not a multiple of record) " + path);
  const std::int64_t n = bytes / kRecord;

  Dataset ds;
  ds.images = TensorF({n, 3, 32, 32});
  ds.labels.resize(std::size_t(n));
  ds.ids.resize(std::size_t(n));
  ds.class_count = 10;
  std::vector<unsigned char> rec(static_cast<std::size_t>(kRecord));
  for (std::int64_t i = 0; i < n; ++i) {
    if (!in.read(reinterpret_cast<char*>(rec.data()), kRecord))
      throw std::runtime_error("cifar: truncated record in " + path);
    if (rec[0] >= 10) throw std::runtime_error("cifar: label byte out of range in " + path);
    ds.labels[std::size_t(i)] = std::int32_t(rec[0]);
    ds.ids[std::size_t(i)] = i;
    for (std::int64_t j = 0; j < 3 * 32 * 32; ++j)
      ds.images[i * 3 * 32 * 32 + j] = float(rec[std::size_t(1 + j)]) / 255.0f;
  }
  return ds;
}

// ---- synthetic blobs ----------------------------------------------------------

Dataset load_synthetic(const std::string& json_text) {
  const json spec = json::parse(json_text);
  const std::string kind = spec.at("kind").get<std::string>();
  if (kind != "blobs") throw std::runtime_error("synthetic: unknown kind '" + kind + "'");
  const std::int64_t per_class = spec.at("per_class").get<std::int64_t>();
  const double separation = spec.at("separation").get<double>();
  const std::uint64_t seed = spec.at("seed").get<std::uint64_t>();
  const std::int64_t classes = spec.value("classes", std::int64_t(2));
  const std::string split = spec.value("split", std::string("train"));
  if (per_class <= 0 || classes < 2) throw std::runtime_error("synthetic: bad blob counts");

  Shape img_shape;
  if (spec.at("dims").is_array()) {
    for (const auto& d : spec.at("dims")) img_shape.push_back(d.get<std::int64_t>());
    if (img_shape.size() != 3) throw std::runtime_error("synthetic: dims array must be [c,h,w]");
  } else {
    img_shape = {1, 1, spec.at("dims").get<std::int64_t>()};
  }
  const std::int64_t dim = shape_numel(img_shape);

  SplitMix root(seed);
  SplitMix mean_rng = root.split(0);
  // Class means depend only on the seed, so train and test splits share the
  // same blobs. Two classes sit at +/- separation/2 along one direction; more
  // classes get independent random directions at radius separation/2.
  std::vector<std::vector<double>> means(static_cast<std::size_t>(classes),
                                         std::vector<double>(static_cast<std::size_t>(dim)));
  auto draw_unit = [&](std::vector<double>& v) {
    double norm = 0;
    for (auto& x : v) {
      x = mean_rng.next_normal();
      norm += x * x;
    }
    norm = std::sqrt(norm);
    for (auto& x : v) x /= norm;
  };
  if (classes == 2) {
    draw_unit(means[0]);
    for (std::int64_t j = 0; j < dim; ++j) {
      means[0][std::size_t(j)] *= separation / 2;
      means[1][std::size_t(j)] = -means[0][std::size_t(j)];
    }
  } else {
    for (auto& m : means) {
      draw_unit(m);
      for (auto& x : m) x *= separation / 2;
    }
  }

  const std::uint64_t noise_stream = split == "train" ? 1 : 2;
  SplitMix noise_rng = root.split(noise_stream);

  const std::int64_t n = per_class * classes;
  Dataset ds;
  Shape full = {n};
  for (auto d : img_shape) full.push_back(d);
  ds.images = TensorF(full);
  ds.labels.resize(std::size_t(n));
  ds.ids.resize(std::size_t(n));
  ds.class_count = classes;

  // affine squash into [0,1]; radius covers the means plus four sigmas
  const double radius = separation / 2 + 4.0;
  std::int64_t row = 0;
  for (std::int64_t k = 0; k < classes; ++k)
    for (std::int64_t i = 0; i < per_class; ++i, ++row) {
      ds.labels[std::size_t(row)] = std::int32_t(k);
      ds.ids[std::size_t(row)] = row;
      float* out = ds.images.ptr() + row * dim;
      const auto& mu = means[std::size_t(k)];
      for (std::int64_t j = 0; j < dim; ++j) {
        const double x = mu[std::size_t(j)] + noise_rng.next_normal();
        out[j] = float(std::clamp(0.5 + x / (2 * radius), 0.0, 1.0));
      }
    }
  return ds;
}

Dataset load_synthetic_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("synthetic: cannot open " + path);
  std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return load_synthetic(text);
}

Dataset load_dataset(const std::string& path, DataFormat format) {
  switch (format) {
    case DataFormat::kIdx: {
      std::string labels_path = path;
      const auto pos = labels_path.find("images-idx3");
      if (pos == std::string::npos)
        throw std::runtime_error("idx: cannot derive label path from " + path);
      labels_path.replace(pos, std::strlen("images-idx3"), "labels-idx1");
      return load_idx(path, labels_path);
    }
    case DataFormat::kCifarBinary:
      return load_cifar_binary(path);
    case DataFormat::kSyntheticSpec:
      return load_synthetic_file(path);
  }
  throw std::logic_error("unknown data format");
}

// ---- normalization -------------------------------------------------------------

NormStats compute_stats(const Dataset& ds) {
  const std::int64_t c = ds.images.dim(1);
  const std::int64_t per_channel = ds.images.dim(2) * ds.images.dim(3);
  const std::int64_t n = ds.size();
  NormStats st;
  st.mean.assign(std::size_t(c), 0.0f);
  st.stdev.assign(std::size_t(c), 0.0f);
  for (std::int64_t ch = 0; ch < c; ++ch) {
    double sum = 0, sq = 0;
    for (std::int64_t i = 0; i < n; ++i) {
      const float* p = ds.images.ptr() + (i * c + ch) * per_channel;
      for (std::int64_t j = 0; j < per_channel; ++j) {
        sum += p[j];
        sq += double(p[j]) * double(p[j]);
      }
    }
    const double count = double(n * per_channel);
    const double mean = sum / count;
    const double var = std::max(0.0, sq / count - mean * mean);
    st.mean[std::size_t(ch)] = float(mean);
    st.stdev[std::size_t(ch)] = float(std::max(std::sqrt(var), 1e-8));
  }
  return st;
}

Dataset normalize_with(const Dataset& ds, const NormStats& stats) {
  Dataset out = ds;
  const std::int64_t c = ds.images.dim(1);
  const std::int64_t per_channel = ds.images.dim(2) * ds.images.dim(3);
  for (std::int64_t i = 0; i < ds.size(); ++i)
    for (std::int64_t ch = 0; ch < c; ++ch) {
      float* p = out.images.ptr() + (i * c + ch) * per_channel;
      const float m = stats.mean[std::size_t(ch)], s = stats.stdev[std::size_t(ch)];
      for (std::int64_t j = 0; j < per_channel; ++j) p[j] = (p[j] - m) / s;
    }
  out.stats = stats;
  return out;
}

Dataset normalize(const Dataset& ds) { return normalize_with(ds, compute_stats(ds)); }

// ---- augmentation ---------------------------------------------------------------

void augment_example(const float* src, float* dst, std::int64_t c, std::int64_t h, std::int64_t w,
                     std::int64_t dy, std::int64_t dx, bool flip, std::int64_t pad) {
  // crop offset (dy, dx) indexes into the padded image; (pad, pad) is identity
  for (std::int64_t ch = 0; ch < c; ++ch)
    for (std::int64_t i = 0; i < h; ++i)
      for (std::int64_t j = 0; j < w; ++j) {
        const std::int64_t si = i + dy - pad;
        const std::int64_t sj0 = j + dx - pad;
        const std::int64_t sj = flip ? (w - 1 - sj0) : sj0;
        float v = 0.0f;
        if (si >= 0 && si < h && sj >= 0 && sj < w) v = src[(ch * h + si) * w + sj];
        dst[(ch * h + i) * w + j] = v;
      }
}

TensorF augment(const TensorF& batch, SplitMix& stream, std::int64_t pad) {
  if (batch.rank() != 4) throw std::invalid_argument("augment: expected [n,c,h,w]");
  const std::int64_t n = batch.dim(0), c = batch.dim(1), h = batch.dim(2), w = batch.dim(3);
  TensorF out(batch.shape);
  for (std::int64_t i = 0; i < n; ++i) {
    const std::int64_t dy = std::int64_t(stream.next_below(std::uint64_t(2 * pad + 1)));
    const std::int64_t dx = std::int64_t(stream.next_below(std::uint64_t(2 * pad + 1)));
    const bool flip = (stream.next_u64() & 1) != 0;
    augment_example(batch.ptr() + i * c * h * w, out.ptr() + i * c * h * w, c, h, w, dy, dx, flip,
                    pad);
  }
  return out;
}

// ---- label corruption --------------------------------------------------------------

Dataset corrupt_labels(const Dataset& ds, double fraction, std::uint64_t seed) {
  if (fraction < 0.0 || fraction > 1.0)
    throw std::invalid_argument("corrupt_labels: fraction must be in [0,1]");
  Dataset out = ds;
  out.label_resampled.assign(std::size_t(ds.size()), 0);
  const std::int64_t count = std::int64_t(std::llround(fraction * double(ds.size())));
  if (count == 0) return out;

  SplitMix root(seed);
  SplitMix pick = root.split(0);
  SplitMix draw = root.split(1);
  std::vector<std::int64_t> order(static_cast<std::size_t>(ds.size()));
  for (std::int64_t i = 0; i < ds.size(); ++i) order[std::size_t(i)] = i;
  pick.shuffle(order);
  for (std::int64_t i = 0; i < count; ++i) {
    const std::int64_t p = order[std::size_t(i)];
    out.labels[std::size_t(p)] = std::int32_t(draw.next_below(std::uint64_t(ds.class_count)));
    out.label_resampled[std::size_t(p)] = 1;
  }
  return out;
}

// ---- subset selection ----------------------------------------------------------------

Dataset select_subset(const Dataset& ds, const SubsetSelector& sel) {
  std::int64_t m = sel.size;
  if (sel.strategy != SubsetStrategy::kExplicitIds && m > ds.size()) {
    std::cerr << "warning: subset size " << m << " exceeds dataset size " << ds.size()
              << "; taking all examples\n";
    m = ds.size();
  }

  std::vector<std::int64_t> positions;
  switch (sel.strategy) {
    case SubsetStrategy::kRandomBalanced: {
      const std::int64_t k = ds.class_count;
      std::vector<std::vector<std::int64_t>> by_class(std::size_t(k));
      for (std::int64_t i = 0; i < ds.size(); ++i)
        by_class[std::size_t(ds.labels[std::size_t(i)])].push_back(i);
      SplitMix rng(sel.seed);
      for (std::int64_t c = 0; c < k; ++c) {
        auto cls_rng = rng.split(std::uint64_t(c));
        cls_rng.shuffle(by_class[std::size_t(c)]);
      }
      // first (m mod k) classes take the extra example
      const std::int64_t base = m / k, extra = m % k;
      for (std::int64_t c = 0; c < k; ++c) {
        const std::int64_t want = base + (c < extra ? 1 : 0);
        auto& pool = by_class[std::size_t(c)];
        if (std::int64_t(pool.size()) < want)
          std::cerr << "warning: class " << c << " has only " << pool.size() << " of " << want
                    << " requested examples\n";
        const std::int64_t take_n = std::min<std::int64_t>(want, std::int64_t(pool.size()));
        positions.insert(positions.end(), pool.begin(), pool.begin() + take_n);
      }
      std::sort(positions.begin(), positions.end());
      break;
    }
    case SubsetStrategy::kLowestScore:
    case SubsetStrategy::kHighestScore: {
      if (!sel.scores) throw std::invalid_argument("select_subset: score table required");
      std::vector<std::pair<double, std::int64_t>> keyed;  // (score, position)
      keyed.reserve(std::size_t(ds.size()));
      for (std::int64_t i = 0; i < ds.size(); ++i) {
        const auto it = sel.scores->find(ds.ids[std::size_t(i)]);
        if (it == sel.scores->end())
          throw std::invalid_argument("select_subset: missing score for id " +
                                      std::to_string(ds.ids[std::size_t(i)]));
        keyed.emplace_back(it->second, i);
      }
      const bool lowest = sel.strategy == SubsetStrategy::kLowestScore;
      std::sort(keyed.begin(), keyed.end(), [&](const auto& a, const auto& b) {
        if (a.first != b.first) return lowest ? a.first < b.first : a.first > b.first;
        return ds.ids[std::size_t(a.second)] < ds.ids[std::size_t(b.second)];
      });
      for (std::int64_t i = 0; i < m; ++i) positions.push_back(keyed[std::size_t(i)].second);
      std::sort(positions.begin(), positions.end());
      break;
    }
    case SubsetStrategy::kExplicitIds: {
      for (auto id : sel.explicit_ids) positions.push_back(ds.position_of(id));
      break;
    }
  }
  return ds.take(positions);
}

// ---- batching -------------------------------------------------------------------------

std::vector<std::int64_t> epoch_permutation(std::int64_t n, std::uint64_t order_seed,
                                            std::int64_t epoch) {
  std::vector<std::int64_t> perm(static_cast<std::size_t>(n));
  for (std::int64_t i = 0; i < n; ++i) perm[std::size_t(i)] = i;
  SplitMix rng = SplitMix(order_seed).split(std::uint64_t(epoch));
  rng.shuffle(perm);
  return perm;
}

Batch gather_batch(const Dataset& ds, const std::vector<std::int64_t>& positions) {
  Batch b;
  const std::int64_t per = ds.example_numel();
  Shape sh = ds.images.shape;
  sh[0] = std::int64_t(positions.size());
  b.images = TensorF(sh);
  b.labels.reserve(positions.size());
  for (std::size_t i = 0; i < positions.size(); ++i) {
    const std::int64_t p = positions[i];
    std::copy(ds.images.ptr() + p * per, ds.images.ptr() + (p + 1) * per,
              b.images.ptr() + std::int64_t(i) * per);
    b.labels.push_back(ds.labels[std::size_t(p)]);
  }
  return b;
}

}  // namespace lth
