#include "vtc/ann_index.hpp"

#include <algorithm>
#include <cmath>

#include "vtc/errors.hpp"

namespace vtc {

VectorIndex::VectorIndex(std::vector<std::string> ids, Matrix vectors, IndexMode mode, LshParams lsh)
    : ids_(std::move(ids)), vectors_(std::move(vectors)), mode_(mode), lsh_(lsh) {
  if (ids_.size() != vectors_.rows()) {
    throw DimensionError("index has " + std::to_string(ids_.size()) + " ids for " +
                         std::to_string(vectors_.rows()) + " vectors");
  }
  for (std::size_t i = 0; i < ids_.size(); ++i) {
    if (!positions_.emplace(ids_[i], i).second) throw ConfigError("duplicate index id: " + ids_[i]);
    auto row = vectors_.row(i);
    const double n = l2_norm(row);
    if (n == 0.0) throw DegenerateInputError("cannot index zero vector for id " + ids_[i]);
    for (double& v : row) v /= n;
  }
  if (mode_ != IndexMode::lsh) return;
  if (lsh_.tables == 0) throw ConfigError("lsh needs at least one table");
  if (lsh_.hyperplanes > 63) throw ConfigError("lsh supports at most 63 hyperplanes per table");
  Rng rng(lsh_.seed);
  planes_.reserve(lsh_.tables);
  buckets_.resize(lsh_.tables);
  for (std::size_t t = 0; t < lsh_.tables; ++t) {
    Matrix planes(lsh_.hyperplanes, vectors_.cols());
    for (double& v : planes.data()) v = rng.normal();
    planes_.push_back(std::move(planes));
    for (std::size_t i = 0; i < ids_.size(); ++i) buckets_[t][code(t, vectors_.row(i))].push_back(i);
  }
}

std::size_t VectorIndex::position(const std::string& id) const {
  auto it = positions_.find(id);
  if (it == positions_.end()) throw LookupError("id not in index: " + id);
  return it->second;
}

std::uint64_t VectorIndex::code(std::size_t table, std::span<const double> v) const {
  std::uint64_t c = 0;
  const Matrix& planes = planes_[table];
  for (std::size_t h = 0; h < planes.rows(); ++h)
    if (dot(planes.row(h), v) >= 0.0) c |= (std::uint64_t{1} << h);
  return c;
}

std::vector<std::size_t> VectorIndex::rank(std::span<const double> query,
                                           std::vector<std::size_t> rows, std::size_t k) const {
  if (query.size() != vectors_.cols()) {
    throw DimensionError("query dimension " + std::to_string(query.size()) + " vs index " +
                         std::to_string(vectors_.cols()));
  }
  const double qn = l2_norm(query);
  if (qn == 0.0) throw DegenerateInputError("zero query vector");
  std::vector<std::pair<double, std::size_t>> scored;
  scored.reserve(rows.size());
  for (std::size_t r : rows) scored.emplace_back(1.0 - dot(query, vectors_.row(r)) / qn, r);
  auto less = [this](const auto& a, const auto& b) {
    if (a.first != b.first) return a.first < b.first;
    return ids_[a.second] < ids_[b.second];
  };
  const std::size_t take = std::min(k, scored.size());
  std::partial_sort(scored.begin(), scored.begin() + static_cast<std::ptrdiff_t>(take), scored.end(), less);
  std::vector<std::size_t> out;
  out.reserve(take);
  for (std::size_t i = 0; i < take; ++i) out.push_back(scored[i].second);
  return out;
}

namespace {

std::vector<std::size_t> filter_excluded(std::vector<std::size_t> rows, std::span<const std::size_t> exclude) {
  if (exclude.empty()) return rows;
  std::erase_if(rows, [&](std::size_t r) { return std::find(exclude.begin(), exclude.end(), r) != exclude.end(); });
  return rows;
}

std::size_t distinct_excluded(std::span<const std::size_t> exclude, std::size_t n) {
  std::vector<std::size_t> e(exclude.begin(), exclude.end());
  std::erase_if(e, [n](std::size_t r) { return r >= n; });
  std::sort(e.begin(), e.end());
  return static_cast<std::size_t>(std::unique(e.begin(), e.end()) - e.begin());
}

}  // namespace

std::vector<std::size_t> VectorIndex::knn_exact(std::span<const double> query, std::size_t k,
                                                std::span<const std::size_t> exclude) const {
  const std::size_t available = size() - distinct_excluded(exclude, size());
  if (k > available) {
    throw CapacityError("requested K=" + std::to_string(k) + " but only " +
                        std::to_string(available) + " vectors are eligible");
  }
  std::vector<std::size_t> all(size());
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
  return rank(query, filter_excluded(std::move(all), exclude), k);
}

std::vector<std::size_t> VectorIndex::candidates(std::span<const double> query) const {
  std::vector<char> seen(size(), 0);
  std::vector<std::size_t> out;
  const std::size_t bits = lsh_.hyperplanes;
  const std::size_t radius = std::min(lsh_.probe_radius, bits);
  for (std::size_t t = 0; t < lsh_.tables; ++t) {
    const std::uint64_t base = code(t, query);
    // Enumerate all codes within Hamming distance `radius` of base.
    std::vector<std::uint64_t> probes{base};
    std::vector<std::uint64_t> frontier{base};
    std::vector<std::size_t> last_bit{0};
    for (std::size_t r = 0; r < radius; ++r) {
      std::vector<std::uint64_t> next;
      std::vector<std::size_t> next_bit;
      for (std::size_t i = 0; i < frontier.size(); ++i)
        for (std::size_t b = last_bit[i]; b < bits; ++b) {
          next.push_back(frontier[i] ^ (std::uint64_t{1} << b));
          next_bit.push_back(b + 1);
        }
      probes.insert(probes.end(), next.begin(), next.end());
      frontier = std::move(next);
      last_bit = std::move(next_bit);
    }
    for (std::uint64_t p : probes) {
      auto it = buckets_[t].find(p);
      if (it == buckets_[t].end()) continue;
      for (std::size_t row : it->second)
        if (!seen[row]) {
          seen[row] = 1;
          out.push_back(row);
        }
    }
  }
  std::sort(out.begin(), out.end());
  return out;
}

std::size_t VectorIndex::candidate_count(std::span<const double> query) const {
  if (mode_ != IndexMode::lsh) return size();
  return candidates(query).size();
}

std::vector<std::size_t> VectorIndex::knn_approx(std::span<const double> query, std::size_t k,
                                                 std::span<const std::size_t> exclude) const {
  if (mode_ != IndexMode::lsh) throw ConfigError("knn_approx requires an index built in lsh mode");
  const std::size_t available = size() - distinct_excluded(exclude, size());
  if (k > available) {
    throw CapacityError("requested K=" + std::to_string(k) + " but only " +
                        std::to_string(available) + " vectors are eligible");
  }
  auto cands = filter_excluded(candidates(query), exclude);
  if (cands.size() < k) return knn_exact(query, k, exclude);
  return rank(query, std::move(cands), k);
}

std::vector<std::size_t> VectorIndex::knn(std::span<const double> query, std::size_t k,
                                          std::span<const std::size_t> exclude) const {
  return mode_ == IndexMode::lsh ? knn_approx(query, k, exclude) : knn_exact(query, k, exclude);
}

ClusterAssignment VectorIndex::assignment(const std::string& anchor_id,
                                          std::span<const std::size_t> rows) const {
  ClusterAssignment a{anchor_id, {}};
  a.neighbor_ids.reserve(rows.size());
  for (std::size_t r : rows) a.neighbor_ids.push_back(ids_[r]);
  return a;
}

std::vector<ClusterAssignment> build_clusters(const VectorIndex& index, std::size_t k) {
  if (index.size() <= k) {
    throw CapacityError("build_clusters needs more than K=" + std::to_string(k) + " vectors, have " +
                        std::to_string(index.size()));
  }
  std::vector<ClusterAssignment> out;
  out.reserve(index.size());
  for (std::size_t i = 0; i < index.size(); ++i) {
    const std::size_t self[] = {i};
    out.push_back(index.assignment(index.ids()[i], index.knn(index.vectors().row(i), k, self)));
  }
  return out;
}

}  // namespace vtc
