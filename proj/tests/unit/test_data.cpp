#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>

#include "fedrelu/data.hpp"
#include "support/oracles.hpp"

using namespace fedrelu;
using namespace fedrelu::data;
using fedrelu::testing::dataset_from;
using fedrelu::testing::idx_images;
using fedrelu::testing::idx_labels;

namespace {

Dataset separable(std::size_t n, std::size_t d, std::size_t o, double phi, std::uint64_t seed) {
  RngStream rng(seed, streams::kData), teacher(seed, streams::kTeacher);
  return gen_separable({n, d, o, phi, 1.0}, rng, teacher);
}

// Unit vectors with labels 0..classes-1 in round-robin order.
Dataset labelled(std::size_t n, std::size_t classes) {
  RngStream rng(77, 1), teacher(77, 2);
  Dataset ds = gen_separable({n, 8, 1, 0.0, 1.0}, rng, teacher);
  for (std::size_t j = 0; j < n; ++j) ds.examples[j].label = static_cast<int>(j % classes);
  return ds;
}

double brute_min_distance(const Dataset& ds) {
  double best = INFINITY;
  for (std::size_t a = 0; a < ds.size(); ++a)
    for (std::size_t b = 0; b < ds.size(); ++b) {
      if (a == b) continue;
      double s = 0.0;
      for (std::size_t k = 0; k < ds.d; ++k) {
        const double diff = ds.examples[a].x[k] - ds.examples[b].x[k];
        s += diff * diff;
      }
      best = std::min(best, std::sqrt(s));
    }
  return best;
}

std::set<int> shard_labels(const Shard& s) { return {s.labels().begin(), s.labels().end()}; }

}  // namespace

TEST(GenSeparable, NoSeparationGivesUnitVectors) {
  const Dataset ds = separable(200, 5, 2, 0.0, 1);
  ASSERT_EQ(ds.size(), 200u);
  for (const auto& e : ds.examples) {
    double s = 0.0;
    for (double v : e.x) s += v * v;
    EXPECT_NEAR(std::sqrt(s), 1.0, 1e-12);
  }
  EXPECT_NO_THROW(validate(ds));
}

TEST(GenSeparable, TwoPointsInThePlaneRespectPhi) {
  const Dataset ds = separable(2, 2, 1, 0.3, 2);
  EXPECT_GE(min_pairwise_distance(ds), 0.3);
}

TEST(GenSeparable, OutputAlwaysMeetsPhi) {
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    const Dataset ds = separable(64, 32, 1, 0.3, seed);
    EXPECT_GE(min_pairwise_distance(ds), 0.3);
    EXPECT_EQ(ds.phi, 0.3);
  }
}

TEST(GenSeparable, PackingInfeasibleReportsAcceptedCount) {
  EXPECT_THROW(separable(1000000, 2, 1, 1.9, 3), PackingInfeasibleError);
  // Within the volume bound, yet at most 3 points on the circle can be 1.5
  // apart, so the attempt cap trips.
  try {
    separable(5, 2, 1, 1.5, 3);
    FAIL() << "expected PackingInfeasibleError";
  } catch (const PackingInfeasibleError& e) {
    EXPECT_LE(e.accepted(), 3u);
    EXPECT_GE(e.accepted(), 1u);
  }
}

TEST(GenSeparable, TargetsComeFromALinearTeacher) {
  const Dataset ds = separable(30, 6, 3, 0.0, 4);
  // Solve for T from the first d examples, then predict the rest.
  const std::size_t d = 6;
  Matrix X(d, d), Y(3, d);
  for (std::size_t j = 0; j < d; ++j)
    for (std::size_t k = 0; k < d; ++k) {
      X(k, j) = ds.examples[j].x[k];
      if (k < 3) Y(k, j) = ds.examples[j].y[k];
    }
  // Gauss-Jordan inverse of X.
  Matrix inv = Matrix::identity(d);
  Matrix work = X;
  for (std::size_t c = 0; c < d; ++c) {
    std::size_t piv = c;
    for (std::size_t r = c + 1; r < d; ++r)
      if (std::abs(work(r, c)) > std::abs(work(piv, c))) piv = r;
    for (std::size_t k = 0; k < d; ++k) {
      std::swap(work(c, k), work(piv, k));
      std::swap(inv(c, k), inv(piv, k));
    }
    const double pv = work(c, c);
    for (std::size_t k = 0; k < d; ++k) {
      work(c, k) /= pv;
      inv(c, k) /= pv;
    }
    for (std::size_t r = 0; r < d; ++r) {
      if (r == c) continue;
      const double f = work(r, c);
      for (std::size_t k = 0; k < d; ++k) {
        work(r, k) -= f * work(c, k);
        inv(r, k) -= f * inv(c, k);
      }
    }
  }
  const Matrix T = matmul(Y, inv);
  for (std::size_t j = d; j < ds.size(); ++j) {
    const std::vector<double> pred = matvec(T, ds.examples[j].x);
    for (std::size_t r = 0; r < 3; ++r) EXPECT_NEAR(pred[r], ds.examples[j].y[r], 1e-8);
  }
}

TEST(GenSeparable, LabelsFollowTeacherOutputs) {
  const Dataset multi = separable(40, 4, 3, 0.0, 5);
  for (const auto& e : multi.examples) {
    const auto it = std::max_element(e.y.begin(), e.y.end());
    EXPECT_EQ(*e.label, static_cast<int>(it - e.y.begin()));
  }
  const Dataset binary = separable(40, 4, 1, 0.0, 5);
  for (const auto& e : binary.examples) EXPECT_EQ(*e.label, e.y[0] >= 0.0 ? 1 : 0);
}

TEST(GenSeparable, DeterministicPerSeed) {
  const Dataset a = separable(50, 8, 2, 0.2, 9);
  const Dataset b = separable(50, 8, 2, 0.2, 9);
  for (std::size_t j = 0; j < a.size(); ++j) {
    EXPECT_EQ(a.examples[j].x, b.examples[j].x);
    EXPECT_EQ(a.examples[j].y, b.examples[j].y);
  }
}

TEST(GenSeparable, RejectsBadArguments) {
  RngStream r(1, 1), t(1, 2);
  EXPECT_THROW(gen_separable({4, 1, 1, 0.0, 1.0}, r, t), ArgumentError);
  EXPECT_THROW(gen_separable({4, 3, 1, 2.0, 1.0}, r, t), ArgumentError);
  EXPECT_THROW(gen_separable({4, 3, 1, -0.1, 1.0}, r, t), ArgumentError);
}

TEST(MinPairwiseDistance, DuplicatedPointIsZero) {
  const Dataset ds = dataset_from({{1, 0}, {0, 1}, {1, 0}}, {{0}, {0}, {0}});
  EXPECT_EQ(min_pairwise_distance(ds), 0.0);
}

TEST(MinPairwiseDistance, OrthonormalBasis) {
  std::vector<std::vector<double>> xs;
  for (std::size_t i = 0; i < 5; ++i) {
    std::vector<double> e(5, 0.0);
    e[i] = 1.0;
    xs.push_back(e);
  }
  const Dataset ds = dataset_from(xs, std::vector<std::vector<double>>(5, {0.0}));
  EXPECT_DOUBLE_EQ(min_pairwise_distance(ds), std::sqrt(2.0));
}

TEST(MinPairwiseDistance, MatchesBruteForce) {
  const Dataset ds = separable(80, 3, 1, 0.0, 6);
  EXPECT_DOUBLE_EQ(min_pairwise_distance(ds), brute_min_distance(ds));
}

TEST(MinPairwiseDistance, NeedsTwoExamples) {
  const Dataset ds = dataset_from({{1, 0}}, {{0}});
  EXPECT_THROW(min_pairwise_distance(ds), DataError);
}

TEST(Validate, RejectsNonUnitInputs) {
  const Dataset ds = dataset_from({{1, 0}, {0.5, 0}}, {{0}, {0}});
  EXPECT_THROW(validate(ds), DataError);
}

TEST(PartitionIid, SingleClientHoldsEverything) {
  const Dataset ds = separable(17, 4, 1, 0.0, 7);
  RngStream rng(1, streams::kPartition);
  const Partition p = partition_iid(ds, 1, rng);
  ASSERT_EQ(p.num_clients(), 1u);
  EXPECT_EQ(p.shards[0].size(), 17u);
  EXPECT_NO_THROW(validate_partition(p, 17));
}

TEST(PartitionIid, BalancedSplit) {
  const Dataset ds = separable(10, 4, 1, 0.0, 8);
  RngStream rng(2, streams::kPartition);
  const Partition p = partition_iid(ds, 3, rng);
  std::multiset<std::size_t> sizes;
  for (const auto& s : p.shards) sizes.insert(s.size());
  EXPECT_EQ(sizes, (std::multiset<std::size_t>{3, 3, 4}));
  EXPECT_NO_THROW(validate_partition(p, 10));
  EXPECT_EQ(p.max_shard_size(), 4u);
}

TEST(PartitionIid, MoreClientsThanExamplesFails) {
  const Dataset ds = separable(3, 4, 1, 0.0, 8);
  RngStream rng(2, streams::kPartition);
  EXPECT_THROW(partition_iid(ds, 4, rng), ArgumentError);
}

TEST(PartitionIid, LabelHistogramsTrackTheGlobalOne) {
  const Dataset ds = labelled(10000, 10);
  RngStream rng(3, streams::kPartition);
  const Partition p = partition_iid(ds, 10, rng);
  // Chi-square against the uniform global histogram: 9 degrees of freedom
  // per shard, 99.9% quantile is 27.9.
  for (const auto& s : p.shards) {
    std::vector<double> counts(10, 0.0);
    for (int l : s.labels()) counts[static_cast<std::size_t>(l)] += 1.0;
    const double expect = static_cast<double>(s.size()) / 10.0;
    double chi2 = 0.0;
    for (double c : counts) chi2 += (c - expect) * (c - expect) / expect;
    EXPECT_LT(chi2, 27.9);
  }
}

TEST(PartitionIid, DeterministicPerSeed) {
  const Dataset ds = separable(30, 4, 1, 0.0, 9);
  RngStream a(5, streams::kPartition), b(5, streams::kPartition);
  const Partition pa = partition_iid(ds, 4, a);
  const Partition pb = partition_iid(ds, 4, b);
  for (std::size_t i = 0; i < 4; ++i) {
    EXPECT_TRUE(std::equal(pa.shards[i].indices().begin(), pa.shards[i].indices().end(),
                           pb.shards[i].indices().begin(), pb.shards[i].indices().end()));
  }
}

TEST(PartitionLabelShards, TwoClassesPerClient) {
  const Dataset ds = labelled(200, 10);
  RngStream rng(4, streams::kPartition);
  const Partition p = partition_label_shards(ds, 5, 2, rng);
  EXPECT_NO_THROW(validate_partition(p, 200));
  for (const auto& s : p.shards) EXPECT_EQ(shard_labels(s).size(), 2u);
}

TEST(PartitionLabelShards, FiftyClientSetup) {
  const Dataset ds = labelled(1000, 10);
  RngStream rng(5, streams::kPartition);
  const Partition p = partition_label_shards(ds, 50, 2, rng);
  ASSERT_EQ(p.num_clients(), 50u);
  EXPECT_NO_THROW(validate_partition(p, 1000));
  for (const auto& s : p.shards) {
    EXPECT_LE(shard_labels(s).size(), 2u);
    EXPECT_EQ(s.size(), 20u);
  }
}

TEST(PartitionLabelShards, AllClassesPerClientCoversEveryLabel) {
  const Dataset ds = labelled(120, 4);
  RngStream rng(6, streams::kPartition);
  const Partition p = partition_label_shards(ds, 3, 4, rng);
  for (const auto& s : p.shards) EXPECT_EQ(shard_labels(s).size(), 4u);
}

TEST(PartitionLabelShards, UnevenClassesStaySingleLabelPerChunk) {
  Dataset ds = labelled(64, 4);
  // Skew the class sizes.
  for (std::size_t j = 0; j < 20; ++j) ds.examples[j].label = 0;
  RngStream rng(7, streams::kPartition);
  const Partition p = partition_label_shards(ds, 8, 1, rng);
  EXPECT_NO_THROW(validate_partition(p, 64));
  for (const auto& s : p.shards) EXPECT_EQ(shard_labels(s).size(), 1u);
}

TEST(PartitionLabelShards, Errors) {
  const Dataset unlabelled = dataset_from({{1, 0}, {0, 1}}, {{0}, {0}});
  RngStream rng(8, streams::kPartition);
  EXPECT_THROW(partition_label_shards(unlabelled, 1, 1, rng), DataError);
  const Dataset ds = labelled(10, 2);
  EXPECT_THROW(partition_label_shards(ds, 6, 2, rng), DataError);
  EXPECT_THROW(partition_label_shards(ds, 2, 0, rng), ArgumentError);
}

TEST(Shard, MaterializesColumns) {
  const Dataset ds = dataset_from({{1, 0}, {0, 1}, {0.6, 0.8}}, {{1, 2}, {3, 4}, {5, 6}}, {0, 1, 1});
  const Shard s(ds, {2, 0}, 3);
  EXPECT_EQ(s.client_id(), 3u);
  EXPECT_EQ(s.inputs(), (Matrix{{0.6, 1}, {0.8, 0}}));
  EXPECT_EQ(s.targets(), (Matrix{{5, 1}, {6, 2}}));
  EXPECT_EQ(s.input(0), (std::vector<double>{0.6, 0.8}));
  EXPECT_EQ(std::vector<int>(s.labels().begin(), s.labels().end()), (std::vector<int>{1, 0}));
  EXPECT_THROW(Shard(ds, {5}, 0), DataError);
}

TEST(ValidatePartition, DetectsOverlapAndGaps) {
  const Dataset ds = dataset_from({{1, 0}, {0, 1}, {0.6, 0.8}}, {{0}, {0}, {0}});
  Partition p;
  p.shards.emplace_back(ds, std::vector<std::size_t>{0, 1}, 0);
  p.shards.emplace_back(ds, std::vector<std::size_t>{1}, 1);
  EXPECT_THROW(validate_partition(p, 3), DataError);
  Partition q;
  q.shards.emplace_back(ds, std::vector<std::size_t>{0, 1}, 0);
  EXPECT_THROW(validate_partition(q, 3), DataError);
}

// --- IDX ------------------------------------------------------------------

TEST(Idx, TwoOnePixelImagesParseExactly) {
  const auto bytes = idx_images(kIdxImagesMagic, 2, 1, 1, {0, 255});
  const IdxImages img = parse_idx_images(bytes);
  EXPECT_EQ(img.count, 2u);
  EXPECT_EQ(img.rows, 1u);
  EXPECT_EQ(img.cols, 1u);
  ASSERT_EQ(img.pixels.size(), 2u);
  EXPECT_EQ(img.pixels[0], std::vector<double>{0.0});
  EXPECT_EQ(img.pixels[1], std::vector<double>{1.0});
}

TEST(Idx, LabelsParse) {
  const auto bytes = idx_labels(kIdxLabelsMagic, {7, 0, 3});
  EXPECT_EQ(parse_idx_labels(bytes), (std::vector<std::uint8_t>{7, 0, 3}));
}

TEST(Idx, WrongMagic) {
  EXPECT_THROW(parse_idx_images(idx_images(0x00000899, 2, 1, 1, {0, 255})), IdxMagicError);
  EXPECT_THROW(parse_idx_labels(idx_labels(0x00000803, {1})), IdxMagicError);
}

TEST(Idx, Truncated) {
  auto bytes = idx_images(kIdxImagesMagic, 2, 2, 2, {1, 2, 3, 4, 5, 6, 7, 8});
  bytes.pop_back();
  EXPECT_THROW(parse_idx_images(bytes), IdxTruncatedError);
  const std::vector<std::uint8_t> header_only{0, 0, 8};
  EXPECT_THROW(parse_idx_images(header_only), IdxTruncatedError);
  auto labels = idx_labels(kIdxLabelsMagic, {1, 2, 3});
  labels.pop_back();
  EXPECT_THROW(parse_idx_labels(labels), IdxTruncatedError);
}

TEST(Idx, CountMismatch) {
  const IdxImages img = parse_idx_images(idx_images(kIdxImagesMagic, 2, 1, 1, {0, 255}));
  const auto labels = parse_idx_labels(idx_labels(kIdxLabelsMagic, {1, 2, 3}));
  EXPECT_THROW(build_idx_dataset(img, labels), IdxCountMismatchError);
}

TEST(Idx, ErrorsAreDistinctTypes) {
  // None of the three specific errors is a subtype of another.
  const auto magic = [] { parse_idx_images(idx_images(0x00000899, 1, 1, 1, {1})); };
  EXPECT_THROW(
      {
        try {
          magic();
        } catch (const IdxTruncatedError&) {
          FAIL();
        } catch (const IdxCountMismatchError&) {
          FAIL();
        }
      },
      IdxMagicError);
}

TEST(Idx, DatasetNormalizesAndDropsZeroImages) {
  const IdxImages img = parse_idx_images(idx_images(kIdxImagesMagic, 3, 1, 2, {0, 0, 3, 4, 255, 0}));
  const auto labels = parse_idx_labels(idx_labels(kIdxLabelsMagic, {5, 1, 2}));
  IdxLoadReport report;
  IdxLoadOptions opts;
  opts.target_scale = 2.0;
  const Dataset ds = build_idx_dataset(img, labels, opts, &report);
  EXPECT_EQ(report.parsed, 3u);
  EXPECT_EQ(report.dropped_zero, 1u);
  ASSERT_EQ(ds.size(), 2u);
  EXPECT_DOUBLE_EQ(ds.examples[0].x[0], 0.6);
  EXPECT_DOUBLE_EQ(ds.examples[0].x[1], 0.8);
  EXPECT_EQ(ds.examples[1].x, (std::vector<double>{1.0, 0.0}));
  EXPECT_EQ(*ds.examples[0].label, 1);
  std::vector<double> onehot(10, 0.0);
  onehot[1] = 2.0;
  EXPECT_EQ(ds.examples[0].y, onehot);
  EXPECT_NO_THROW(validate(ds));
}

TEST(Idx, DuplicatesAreDropped) {
  const IdxImages img = parse_idx_images(idx_images(kIdxImagesMagic, 3, 1, 2, {1, 2, 1, 2, 2, 1}));
  const auto labels = parse_idx_labels(idx_labels(kIdxLabelsMagic, {0, 0, 1}));
  IdxLoadReport report;
  const Dataset ds = build_idx_dataset(img, labels, {}, &report);
  EXPECT_EQ(report.dropped_duplicate, 1u);
  EXPECT_EQ(ds.size(), 2u);
  EXPECT_GT(min_pairwise_distance(ds), 0.0);
}

TEST(Idx, LoadFromFiles) {
  const auto dir = std::filesystem::temp_directory_path() / "fedrelu_idx_load";
  std::filesystem::create_directories(dir);
  const auto write = [](const std::filesystem::path& p, const std::vector<std::uint8_t>& b) {
    std::ofstream out(p, std::ios::binary);
    out.write(reinterpret_cast<const char*>(b.data()), static_cast<std::streamsize>(b.size()));
  };
  write(dir / "img", idx_images(kIdxImagesMagic, 2, 1, 2, {0, 9, 12, 5}));
  write(dir / "lab", idx_labels(kIdxLabelsMagic, {3, 4}));
  const Dataset ds = load_idx(dir / "img", dir / "lab");
  ASSERT_EQ(ds.size(), 2u);
  EXPECT_EQ(ds.d, 2u);
  EXPECT_EQ(ds.o, 10u);
  EXPECT_EQ(ds.examples[0].x, (std::vector<double>{0.0, 1.0}));
  EXPECT_THROW(load_idx(dir / "missing", dir / "lab"), DataError);
  std::filesystem::remove_all(dir);
}
