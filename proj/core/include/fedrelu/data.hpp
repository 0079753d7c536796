#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "fedrelu/error.hpp"
#include "fedrelu/matrix.hpp"
#include "fedrelu/rng.hpp"

namespace fedrelu::data {

// Tolerance on the unit-norm invariant of every stored input.
inline constexpr double kUnitNormTol = 1e-12;

struct Example {
  std::vector<double> x;  // unit vector in R^d
  std::vector<double> y;  // target in R^o
  std::optional<int> label;
};

// Labeled regression examples with unit-norm inputs. `phi` is a certified
// lower bound on the minimum pairwise input distance, 0 when uncertified.
struct Dataset {
  std::size_t d = 0;
  std::size_t o = 0;
  double phi = 0.0;
  std::vector<Example> examples;

  std::size_t size() const { return examples.size(); }
  bool has_labels() const;
  // Distinct labels in ascending order; empty when unlabeled.
  std::vector<int> classes() const;
};

// Throws DataError unless every input has unit norm and dims are consistent.
void validate(const Dataset& ds);

// One client's slice of a dataset. Inputs and targets are materialized
// column-per-example so the network can process the shard as a batch.
class Shard {
 public:
  Shard(const Dataset& ds, std::vector<std::size_t> indices, std::size_t client_id);

  std::size_t client_id() const { return client_id_; }
  std::size_t size() const { return indices_.size(); }
  bool empty() const { return indices_.empty(); }
  std::span<const std::size_t> indices() const { return indices_; }
  std::span<const int> labels() const { return labels_; }

  const Matrix& inputs() const { return inputs_; }    // d x n
  const Matrix& targets() const { return targets_; }  // o x n

  std::vector<double> input(std::size_t j) const;
  std::vector<double> target(std::size_t j) const;

 private:
  std::size_t client_id_;
  std::vector<std::size_t> indices_;
  std::vector<int> labels_;
  Matrix inputs_;
  Matrix targets_;
};

enum class Scheme { kIid, kLabelShards };

std::string to_string(Scheme s);

struct Partition {
  Scheme scheme = Scheme::kIid;
  std::vector<Shard> shards;

  std::size_t num_clients() const { return shards.size(); }
  // Largest shard size; the per-client n used by step-size and bound formulas.
  std::size_t max_shard_size() const;
};

// Throws unless shards form an exact set partition of [0, n).
void validate_partition(const Partition& p, std::size_t n);

// --- errors -------------------------------------------------------------

class DataError : public Error {
 public:
  using Error::Error;
};

class PackingInfeasibleError : public DataError {
 public:
  PackingInfeasibleError(std::size_t accepted, std::size_t requested, const std::string& why);
  std::size_t accepted() const { return accepted_; }

 private:
  std::size_t accepted_;
};

class IdxMagicError : public DataError {
 public:
  using DataError::DataError;
};
class IdxTruncatedError : public DataError {
 public:
  using DataError::DataError;
};
class IdxCountMismatchError : public DataError {
 public:
  using DataError::DataError;
};

// --- generation ---------------------------------------------------------

struct SeparableOptions {
  std::size_t n = 0;
  std::size_t d = 2;
  std::size_t o = 1;
  double phi = 0.0;
  double teacher_std = 1.0;
};

// Rejection-samples n points uniformly on the unit sphere in R^d keeping all
// pairs at least phi apart, then labels them with a Gaussian linear teacher
// y = T x. Class labels are argmax(y) for o >= 2 and [y >= 0] for o == 1.
// `rng` drives the inputs; `teacher_rng` draws T.
Dataset gen_separable(const SeparableOptions& opts, RngStream& rng, RngStream& teacher_rng);

// Exact minimum over all pairs, O(n^2).
double min_pairwise_distance(const Dataset& ds);

// --- partitioning -------------------------------------------------------

Partition partition_iid(const Dataset& ds, std::size_t k, RngStream& rng);

// Sorts by label, cuts into k * classes_per_client single-label chunks and
// deals them so every client receives exactly classes_per_client chunks.
Partition partition_label_shards(const Dataset& ds, std::size_t k,
                                 std::size_t classes_per_client, RngStream& rng);

// --- IDX ingestion ------------------------------------------------------

inline constexpr std::uint32_t kIdxImagesMagic = 0x00000803;
inline constexpr std::uint32_t kIdxLabelsMagic = 0x00000801;

struct IdxImages {
  std::size_t count = 0;
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<std::vector<double>> pixels;  // scaled to [0, 1], row-major per image
};

IdxImages parse_idx_images(std::span<const std::uint8_t> bytes);
std::vector<std::uint8_t> parse_idx_labels(std::span<const std::uint8_t> bytes);

struct IdxLoadOptions {
  double target_scale = 1.0;
  std::size_t num_classes = 10;
  std::size_t limit = 0;  // 0 keeps everything
};

struct IdxLoadReport {
  std::size_t parsed = 0;
  std::size_t dropped_zero = 0;
  std::size_t dropped_duplicate = 0;
};

// Images flattened and L2-normalized onto the unit sphere, y = one-hot(label)
// times target_scale. All-zero images and exact duplicates are dropped since
// neither can satisfy the separation assumption.
Dataset build_idx_dataset(const IdxImages& images, std::span<const std::uint8_t> labels,
                          const IdxLoadOptions& opts = {}, IdxLoadReport* report = nullptr);

Dataset load_idx(const std::filesystem::path& images_path,
                 const std::filesystem::path& labels_path, const IdxLoadOptions& opts = {},
                 IdxLoadReport* report = nullptr);

}  // namespace fedrelu::data
