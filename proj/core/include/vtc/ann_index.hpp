#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "vtc/matrix.hpp"
#include "vtc/rng.hpp"

namespace vtc {

enum class IndexMode { exact, lsh };

/// Random signed-hyperplane LSH. Each table hashes a vector to `hyperplanes` sign
/// bits; a query probes every bucket within `probe_radius` bit flips of its own
/// code in each table.
struct LshParams {
  std::size_t tables = 8;
  std::size_t hyperplanes = 8;
  std::size_t probe_radius = 2;
  Seed seed = 7;
};

struct ClusterAssignment {
  std::string anchor_id;
  std::vector<std::string> neighbor_ids;  // ascending cosine distance, ties by id
};

/// Cosine-distance K nearest neighbor index over a fixed set of vectors.
class VectorIndex {
 public:
  VectorIndex(std::vector<std::string> ids, Matrix vectors, IndexMode mode = IndexMode::exact,
              LshParams lsh = {});

  std::size_t size() const noexcept { return ids_.size(); }
  IndexMode mode() const noexcept { return mode_; }
  const std::vector<std::string>& ids() const noexcept { return ids_; }
  const Matrix& vectors() const noexcept { return vectors_; }
  std::size_t position(const std::string& id) const;

  /// Exact K smallest cosine distances, excluding the given row positions.
  std::vector<std::size_t> knn_exact(std::span<const double> query, std::size_t k,
                                     std::span<const std::size_t> exclude = {}) const;
  /// LSH candidates ranked exactly; falls back to a full scan when fewer than k
  /// candidates survive. Requires lsh mode.
  std::vector<std::size_t> knn_approx(std::span<const double> query, std::size_t k,
                                      std::span<const std::size_t> exclude = {}) const;
  /// Dispatches on the index mode.
  std::vector<std::size_t> knn(std::span<const double> query, std::size_t k,
                               std::span<const std::size_t> exclude = {}) const;

  ClusterAssignment assignment(const std::string& anchor_id, std::span<const std::size_t> rows) const;

  /// Number of distinct candidates LSH would rank for this query.
  std::size_t candidate_count(std::span<const double> query) const;

 private:
  std::uint64_t code(std::size_t table, std::span<const double> v) const;
  std::vector<std::size_t> rank(std::span<const double> query, std::vector<std::size_t> rows,
                                std::size_t k) const;
  std::vector<std::size_t> candidates(std::span<const double> query) const;

  std::vector<std::string> ids_;
  Matrix vectors_;  // rows normalized to unit length
  IndexMode mode_;
  LshParams lsh_;
  std::unordered_map<std::string, std::size_t> positions_;
  std::vector<Matrix> planes_;  // per table: hyperplanes x dim
  std::vector<std::unordered_map<std::uint64_t, std::vector<std::size_t>>> buckets_;
};

/// One assignment per indexed vector with its own row excluded.
std::vector<ClusterAssignment> build_clusters(const VectorIndex& index, std::size_t k);

}  // namespace vtc
