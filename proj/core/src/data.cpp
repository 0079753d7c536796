#include "fedrelu/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iterator>
#include <numeric>
#include <set>
#include <sstream>
#include <string_view>
#include <unordered_set>

#include "fedrelu/linalg.hpp"

namespace fedrelu::data {

bool Dataset::has_labels() const {
  return !examples.empty() &&
         std::all_of(examples.begin(), examples.end(),
                     [](const Example& e) { return e.label.has_value(); });
}

std::vector<int> Dataset::classes() const {
  std::set<int> seen;
  for (const auto& e : examples)
    if (e.label) seen.insert(*e.label);
  return {seen.begin(), seen.end()};
}

void validate(const Dataset& ds) {
  for (std::size_t j = 0; j < ds.examples.size(); ++j) {
    const auto& e = ds.examples[j];
    if (e.x.size() != ds.d || e.y.size() != ds.o) {
      throw DataError("dataset example " + std::to_string(j) + " has dims (" +
                      std::to_string(e.x.size()) + ", " + std::to_string(e.y.size()) +
                      "), expected (" + std::to_string(ds.d) + ", " + std::to_string(ds.o) +
                      ")");
    }
    const double nrm = norm2(e.x);
    if (std::abs(nrm - 1.0) > kUnitNormTol) {
      std::ostringstream msg;
      msg.precision(17);
      msg << "dataset example " << j << " has input norm " << nrm << ", expected 1";
      throw DataError(msg.str());
    }
  }
}

Shard::Shard(const Dataset& ds, std::vector<std::size_t> indices, std::size_t client_id)
    : client_id_(client_id),
      indices_(std::move(indices)),
      inputs_(ds.d, indices_.size()),
      targets_(ds.o, indices_.size()) {
  labels_.reserve(indices_.size());
  for (std::size_t j = 0; j < indices_.size(); ++j) {
    const std::size_t idx = indices_[j];
    if (idx >= ds.size()) {
      throw DataError("shard index " + std::to_string(idx) + " out of range for dataset of " +
                      std::to_string(ds.size()));
    }
    const Example& e = ds.examples[idx];
    for (std::size_t r = 0; r < ds.d; ++r) inputs_(r, j) = e.x[r];
    for (std::size_t r = 0; r < ds.o; ++r) targets_(r, j) = e.y[r];
    labels_.push_back(e.label.value_or(-1));
  }
}

std::vector<double> Shard::input(std::size_t j) const {
  std::vector<double> x(inputs_.rows());
  for (std::size_t r = 0; r < x.size(); ++r) x[r] = inputs_(r, j);
  return x;
}

std::vector<double> Shard::target(std::size_t j) const {
  std::vector<double> y(targets_.rows());
  for (std::size_t r = 0; r < y.size(); ++r) y[r] = targets_(r, j);
  return y;
}

std::string to_string(Scheme s) {
  return s == Scheme::kIid ? "iid" : "label_shards";
}

std::size_t Partition::max_shard_size() const {
  std::size_t n = 0;
  for (const auto& s : shards) n = std::max(n, s.size());
  return n;
}

void validate_partition(const Partition& p, std::size_t n) {
  std::vector<char> seen(n, 0);
  std::size_t total = 0;
  for (const auto& shard : p.shards) {
    for (std::size_t idx : shard.indices()) {
      if (idx >= n) throw DataError("partition index " + std::to_string(idx) + " out of range");
      if (seen[idx]) throw DataError("partition index " + std::to_string(idx) + " repeated");
      seen[idx] = 1;
      ++total;
    }
  }
  if (total != n) {
    throw DataError("partition covers " + std::to_string(total) + " of " + std::to_string(n) +
                    " examples");
  }
}

PackingInfeasibleError::PackingInfeasibleError(std::size_t accepted, std::size_t requested,
                                               const std::string& why)
    : DataError("cannot place " + std::to_string(requested) + " separated points: " + why +
                " (accepted " + std::to_string(accepted) + ")"),
      accepted_(accepted) {}

namespace {

double sq_distance(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double diff = a[i] - b[i];
    s += diff * diff;
  }
  return s;
}

std::vector<double> random_unit_vector(std::size_t d, RngStream& rng) {
  std::vector<double> v(d);
  double nrm = 0.0;
  while (nrm == 0.0) {
    for (double& x : v) x = rng.normal();
    nrm = norm2(v);
  }
  for (double& x : v) x /= nrm;
  return v;
}

}  // namespace

Dataset gen_separable(const SeparableOptions& opts, RngStream& rng, RngStream& teacher_rng) {
  if (opts.d < 2) throw ArgumentError("gen_separable: d must be >= 2");
  if (opts.o < 1) throw ArgumentError("gen_separable: o must be >= 1");
  if (!(opts.phi >= 0.0 && opts.phi < 2.0))
    throw ArgumentError("gen_separable: phi must lie in [0, 2)");

  // Balls of radius phi/2 around separated unit vectors are disjoint and fit
  // in the ball of radius 1 + phi/2, so n <= (1 + 2/phi)^d.
  if (opts.phi > 0.0) {
    const double log_cap = static_cast<double>(opts.d) * std::log1p(2.0 / opts.phi);
    if (std::log(static_cast<double>(opts.n)) > log_cap) {
      throw PackingInfeasibleError(0, opts.n, "exceeds the volume packing bound");
    }
  }

  Dataset ds;
  ds.d = opts.d;
  ds.o = opts.o;
  ds.phi = opts.phi;
  ds.examples.reserve(opts.n);

  const double phi_sq = opts.phi * opts.phi;
  const std::size_t max_attempts = 1000 * std::max<std::size_t>(opts.n, 1);
  std::size_t attempts = 0;
  while (ds.examples.size() < opts.n) {
    if (attempts++ >= max_attempts) {
      throw PackingInfeasibleError(ds.examples.size(), opts.n,
                                   "attempt cap of " + std::to_string(max_attempts) + " reached");
    }
    std::vector<double> x = random_unit_vector(opts.d, rng);
    const bool clear =
        std::none_of(ds.examples.begin(), ds.examples.end(),
                     [&](const Example& e) { return sq_distance(e.x, x) < phi_sq; });
    if (clear) ds.examples.push_back({std::move(x), {}, std::nullopt});
  }

  const Matrix teacher = gaussian_matrix(opts.o, opts.d, opts.teacher_std, teacher_rng);
  for (auto& e : ds.examples) {
    e.y = matvec(teacher, e.x);
    if (opts.o == 1) {
      e.label = e.y[0] >= 0.0 ? 1 : 0;
    } else {
      e.label = static_cast<int>(std::distance(e.y.begin(), std::max_element(e.y.begin(), e.y.end())));
    }
  }
  return ds;
}

double min_pairwise_distance(const Dataset& ds) {
  if (ds.size() < 2) throw DataError("min_pairwise_distance: need at least 2 examples");
  double best = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < ds.size(); ++i)
    for (std::size_t j = i + 1; j < ds.size(); ++j)
      best = std::min(best, sq_distance(ds.examples[i].x, ds.examples[j].x));
  return std::sqrt(best);
}

namespace {

void shuffle(std::vector<std::size_t>& v, RngStream& rng) {
  // Fisher-Yates with the stream's unbiased index sampler.
  for (std::size_t i = v.size(); i > 1; --i) {
    const std::size_t j = rng.uniform_index(i);
    std::swap(v[i - 1], v[j]);
  }
}

}  // namespace

Partition partition_iid(const Dataset& ds, std::size_t k, RngStream& rng) {
  if (k == 0) throw ArgumentError("partition_iid: K must be >= 1");
  if (k > ds.size()) {
    throw ArgumentError("partition_iid: K=" + std::to_string(k) + " exceeds n=" +
                        std::to_string(ds.size()));
  }
  std::vector<std::size_t> perm(ds.size());
  std::iota(perm.begin(), perm.end(), 0);
  shuffle(perm, rng);

  Partition p;
  p.scheme = Scheme::kIid;
  const std::size_t base = ds.size() / k;
  const std::size_t extra = ds.size() % k;
  std::size_t pos = 0;
  for (std::size_t c = 0; c < k; ++c) {
    const std::size_t len = base + (c < extra ? 1 : 0);
    std::vector<std::size_t> idx(perm.begin() + pos, perm.begin() + pos + len);
    std::sort(idx.begin(), idx.end());
    p.shards.emplace_back(ds, std::move(idx), c);
    pos += len;
  }
  return p;
}

Partition partition_label_shards(const Dataset& ds, std::size_t k,
                                 std::size_t classes_per_client, RngStream& rng) {
  if (k == 0) throw ArgumentError("partition_label_shards: K must be >= 1");
  if (classes_per_client == 0)
    throw ArgumentError("partition_label_shards: classes_per_client must be >= 1");
  if (!ds.has_labels()) throw DataError("partition_label_shards: dataset has no labels");
  const std::size_t num_chunks = k * classes_per_client;
  if (num_chunks > ds.size()) {
    throw DataError("partition_label_shards: K*classes_per_client=" + std::to_string(num_chunks) +
                    " exceeds n=" + std::to_string(ds.size()));
  }

  std::vector<std::size_t> order(ds.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return *ds.examples[a].label < *ds.examples[b].label;
  });

  // Group sorted positions by class.
  std::vector<std::pair<std::size_t, std::size_t>> class_ranges;  // [begin, end)
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    const int label = *ds.examples[order[i]].label;
    while (j < order.size() && *ds.examples[order[j]].label == label) ++j;
    class_ranges.emplace_back(i, j);
    i = j;
  }

  // Chunk boundaries as [begin, end) positions in `order`.
  std::vector<std::pair<std::size_t, std::size_t>> chunks;
  if (num_chunks >= class_ranges.size()) {
    // Every chunk holds a single label. Each class gets at least one chunk;
    // the rest go one at a time to the class with the most examples per
    // chunk (lowest label on ties), never exceeding the class size.
    std::vector<std::size_t> per_class(class_ranges.size(), 1);
    for (std::size_t extra = num_chunks - class_ranges.size(); extra > 0; --extra) {
      std::size_t best = class_ranges.size();
      double best_load = -1.0;
      for (std::size_t c = 0; c < class_ranges.size(); ++c) {
        const std::size_t sz = class_ranges[c].second - class_ranges[c].first;
        if (per_class[c] >= sz) continue;
        const double load = static_cast<double>(sz) / static_cast<double>(per_class[c]);
        if (load > best_load) {
          best_load = load;
          best = c;
        }
      }
      ++per_class[best];  // num_chunks <= n guarantees a candidate exists
    }
    for (std::size_t c = 0; c < class_ranges.size(); ++c) {
      const auto [b, e] = class_ranges[c];
      const std::size_t sz = e - b;
      for (std::size_t q = 0; q < per_class[c]; ++q)
        chunks.emplace_back(b + q * sz / per_class[c], b + (q + 1) * sz / per_class[c]);
    }
  } else {
    // Fewer chunks than classes: plain contiguous slices, so a chunk may mix
    // labels.
    for (std::size_t q = 0; q < num_chunks; ++q)
      chunks.emplace_back(q * order.size() / num_chunks, (q + 1) * order.size() / num_chunks);
  }

  // Chunk q goes to client perm[q mod K]: neighbouring chunks (same class)
  // land on different clients.
  std::vector<std::size_t> client_perm(k);
  std::iota(client_perm.begin(), client_perm.end(), 0);
  shuffle(client_perm, rng);
  std::vector<std::vector<std::size_t>> members(k);
  for (std::size_t q = 0; q < chunks.size(); ++q) {
    auto& dst = members[client_perm[q % k]];
    for (std::size_t pos = chunks[q].first; pos < chunks[q].second; ++pos)
      dst.push_back(order[pos]);
  }

  Partition p;
  p.scheme = Scheme::kLabelShards;
  for (std::size_t c = 0; c < k; ++c) {
    std::sort(members[c].begin(), members[c].end());
    p.shards.emplace_back(ds, std::move(members[c]), c);
  }
  return p;
}

// --- IDX ----------------------------------------------------------------

namespace {

class ByteReader {
 public:
  ByteReader(std::span<const std::uint8_t> bytes, std::string_view what)
      : bytes_(bytes), what_(what) {}

  std::uint32_t u32() {
    require(4);
    const std::uint32_t v = (std::uint32_t{bytes_[pos_]} << 24) |
                            (std::uint32_t{bytes_[pos_ + 1]} << 16) |
                            (std::uint32_t{bytes_[pos_ + 2]} << 8) |
                            std::uint32_t{bytes_[pos_ + 3]};
    pos_ += 4;
    return v;
  }

  std::span<const std::uint8_t> take(std::size_t n) {
    require(n);
    auto out = bytes_.subspan(pos_, n);
    pos_ += n;
    return out;
  }

 private:
  void require(std::size_t n) const {
    if (bytes_.size() - pos_ < n) {
      throw IdxTruncatedError(std::string(what_) + ": truncated at byte " + std::to_string(pos_) +
                              ", needed " + std::to_string(n) + " more of " +
                              std::to_string(bytes_.size()));
    }
  }

  std::span<const std::uint8_t> bytes_;
  std::string_view what_;
  std::size_t pos_ = 0;
};

std::string hex32(std::uint32_t v) {
  std::ostringstream s;
  s << "0x" << std::hex;
  s.width(8);
  s.fill('0');
  s << v;
  return s.str();
}

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace

IdxImages parse_idx_images(std::span<const std::uint8_t> bytes) {
  ByteReader r(bytes, "idx images");
  const std::uint32_t magic = r.u32();
  if (magic != kIdxImagesMagic) {
    throw IdxMagicError("idx images: magic " + hex32(magic) + ", expected " +
                        hex32(kIdxImagesMagic));
  }
  IdxImages out;
  out.count = r.u32();
  out.rows = r.u32();
  out.cols = r.u32();
  const std::size_t pixels = out.rows * out.cols;
  out.pixels.reserve(out.count);
  for (std::size_t i = 0; i < out.count; ++i) {
    const auto raw = r.take(pixels);
    std::vector<double> img(pixels);
    for (std::size_t p = 0; p < pixels; ++p) img[p] = static_cast<double>(raw[p]) / 255.0;
    out.pixels.push_back(std::move(img));
  }
  return out;
}

std::vector<std::uint8_t> parse_idx_labels(std::span<const std::uint8_t> bytes) {
  ByteReader r(bytes, "idx labels");
  const std::uint32_t magic = r.u32();
  if (magic != kIdxLabelsMagic) {
    throw IdxMagicError("idx labels: magic " + hex32(magic) + ", expected " +
                        hex32(kIdxLabelsMagic));
  }
  const std::uint32_t count = r.u32();
  const auto raw = r.take(count);
  return {raw.begin(), raw.end()};
}

Dataset build_idx_dataset(const IdxImages& images, std::span<const std::uint8_t> labels,
                          const IdxLoadOptions& opts, IdxLoadReport* report) {
  if (images.count != labels.size()) {
    throw IdxCountMismatchError("idx: " + std::to_string(images.count) + " images but " +
                                std::to_string(labels.size()) + " labels");
  }
  Dataset ds;
  ds.d = images.rows * images.cols;
  ds.o = opts.num_classes;
  IdxLoadReport rep;
  std::unordered_set<std::string> seen;
  const std::size_t limit = opts.limit == 0 ? images.count : std::min(opts.limit, images.count);
  for (std::size_t i = 0; i < limit; ++i) {
    ++rep.parsed;
    std::vector<double> x = images.pixels[i];
    const double nrm = norm2(x);
    if (nrm == 0.0) {
      ++rep.dropped_zero;
      continue;
    }
    for (double& v : x) v /= nrm;
    std::string key(reinterpret_cast<const char*>(x.data()), x.size() * sizeof(double));
    if (!seen.insert(std::move(key)).second) {
      ++rep.dropped_duplicate;
      continue;
    }
    const int label = labels[i];
    if (static_cast<std::size_t>(label) >= opts.num_classes) {
      throw DataError("idx: label " + std::to_string(label) + " outside " +
                      std::to_string(opts.num_classes) + " classes");
    }
    std::vector<double> y(opts.num_classes, 0.0);
    y[static_cast<std::size_t>(label)] = opts.target_scale;
    ds.examples.push_back({std::move(x), std::move(y), label});
  }
  if (report) *report = rep;
  return ds;
}

Dataset load_idx(const std::filesystem::path& images_path,
                 const std::filesystem::path& labels_path, const IdxLoadOptions& opts,
                 IdxLoadReport* report) {
  const auto image_bytes = read_file(images_path);
  const auto label_bytes = read_file(labels_path);
  const IdxImages images = parse_idx_images(image_bytes);
  const auto labels = parse_idx_labels(label_bytes);
  return build_idx_dataset(images, labels, opts, report);
}

}  // namespace fedrelu::data
