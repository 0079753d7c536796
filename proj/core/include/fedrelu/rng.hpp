#pragma once

#include <cstdint>
#include <random>

namespace fedrelu {

// Deterministic random stream identified by (seed, stream_id).
//
// The engine is std::mt19937_64, whose output sequence is fixed by the C++
// standard, seeded with splitmix64(seed ^ splitmix64(stream_id)). Uniform
// doubles take the top 53 bits; normals use the Box-Muller transform with the
// second variate cached. The std:: distributions are avoided because their
// algorithms are implementation-defined.
class RngStream {
 public:
  RngStream(std::uint64_t seed, std::uint64_t stream_id);

  std::uint64_t seed() const { return seed_; }
  std::uint64_t stream_id() const { return stream_id_; }

  // Independent sub-stream labelled by `label`, for hierarchical derivation.
  RngStream derive(std::uint64_t label) const;

  std::uint64_t next_u64() { return engine_(); }
  // Uniform on [0, 1).
  double uniform();
  // Uniform integer on [0, n). n must be positive.
  std::uint64_t uniform_index(std::uint64_t n);
  // Standard normal.
  double normal();

 private:
  std::uint64_t seed_;
  std::uint64_t stream_id_;
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

std::uint64_t splitmix64(std::uint64_t x);

// Well-known stream labels derived from a run's master seed.
namespace streams {
inline constexpr std::uint64_t kInit = 1;
inline constexpr std::uint64_t kData = 2;
inline constexpr std::uint64_t kTeacher = 3;
inline constexpr std::uint64_t kPartition = 4;
inline constexpr std::uint64_t kProbe = 5;
inline constexpr std::uint64_t kClientBase = 1000;
}  // namespace streams

}  // namespace fedrelu
