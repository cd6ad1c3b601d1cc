#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "lth/rng.hpp"
#include "lth/tensor.hpp"

namespace lth {

struct NormStats {
  std::vector<float> mean;   // per channel
  std::vector<float> stdev;  // per channel, floored at 1e-8
};

// Images, labels and stable example IDs. IDs survive every derived view
// (subset, corruption), so a score computed once keys the same image forever.
struct Dataset {
  TensorF images;  // [n, c, h, w]
  std::vector<std::int32_t> labels;
  std::vector<std::int64_t> ids;
  std::int64_t class_count = 0;
  std::optional<NormStats> stats;
  std::vector<std::uint8_t> label_resampled;  // set by corrupt_labels on selected rows

  std::int64_t size() const { return std::int64_t(labels.size()); }
  std::int64_t channels() const { return images.dim(1); }
  std::int64_t example_numel() const { return images.numel() / std::max<std::int64_t>(1, size()); }

  // Row subset by position, preserving IDs.
  Dataset take(const std::vector<std::int64_t>& positions) const;

  // position of an id; throws if absent
  std::int64_t position_of(std::int64_t id) const;

  std::uint64_t content_hash() const;
};

enum class DataFormat { kIdx, kCifarBinary, kSyntheticSpec };

// path: IDX image file (label file found by name convention), a CIFAR binary
// batch file, or a synthetic-spec JSON document.
Dataset load_dataset(const std::string& path, DataFormat format);

Dataset load_idx(const std::string& images_path, const std::string& labels_path,
                 std::int64_t class_count = 10);
Dataset load_cifar_binary(const std::string& path);
Dataset load_synthetic(const std::string& json_text);
Dataset load_synthetic_file(const std::string& path);

// Centers/scales by per-channel mean and std computed from `ds` itself (the
// training split); returns the stats it used. normalize_with applies stats
// computed elsewhere (test split reuses the training stats).
Dataset normalize(const Dataset& ds);
Dataset normalize_with(const Dataset& ds, const NormStats& stats);
NormStats compute_stats(const Dataset& ds);

// pad 4 -> random crop back to (h, w) -> horizontal flip with probability 1/2,
// per example, driven by the given stream.
TensorF augment(const TensorF& batch, SplitMix& stream, std::int64_t pad = 4);
// deterministic core: one example, explicit crop offset and flip
void augment_example(const float* src, float* dst, std::int64_t c, std::int64_t h, std::int64_t w,
                     std::int64_t dy, std::int64_t dx, bool flip, std::int64_t pad);

// Resamples labels of round(fraction * n) uniformly-chosen examples; the new
// label is uniform over all classes (may equal the old one). Marks selected
// rows in label_resampled.
Dataset corrupt_labels(const Dataset& ds, double fraction, std::uint64_t seed);

enum class SubsetStrategy { kRandomBalanced, kLowestScore, kHighestScore, kExplicitIds };

struct SubsetSelector {
  SubsetStrategy strategy = SubsetStrategy::kRandomBalanced;
  std::int64_t size = 0;
  const std::unordered_map<std::int64_t, double>* scores = nullptr;  // id -> score
  std::uint64_t seed = 0;
  std::vector<std::int64_t> explicit_ids;
};

Dataset select_subset(const Dataset& ds, const SubsetSelector& sel);

// Deterministic epoch permutation used by the batch iterator and the trainer.
std::vector<std::int64_t> epoch_permutation(std::int64_t n, std::uint64_t order_seed,
                                            std::int64_t epoch);

inline std::int64_t batches_per_epoch(std::int64_t n, std::int64_t batch_size) {
  return (n + batch_size - 1) / batch_size;
}

// Shuffled minibatch index stream for one epoch; the last short batch is kept.
class BatchIterator {
 public:
  BatchIterator(std::int64_t n, std::int64_t batch_size, std::uint64_t order_seed,
                std::int64_t epoch)
      : perm_(epoch_permutation(n, order_seed, epoch)), batch_(batch_size) {}

  // empty when the epoch is exhausted
  std::vector<std::int64_t> next() {
    std::vector<std::int64_t> out;
    while (cursor_ < std::int64_t(perm_.size()) && std::int64_t(out.size()) < batch_)
      out.push_back(perm_[std::size_t(cursor_++)]);
    return out;
  }

 private:
  std::vector<std::int64_t> perm_;
  std::int64_t batch_;
  std::int64_t cursor_ = 0;
};

struct Batch {
  TensorF images;
  std::vector<std::int32_t> labels;
};

Batch gather_batch(const Dataset& ds, const std::vector<std::int64_t>& positions);

}  // namespace lth
