/*
    Licensed under the Apache License, Version 2.0 (the "License");
    you may not use this file except in compliance with the License.
    You may obtain a copy of the License at

        https://www.apache.org/licenses/LICENSE-2.0

    Unless required by applicable law or agreed to in writing, software
    distributed under the License is distributed on an "AS IS" BASIS,
    WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
    See the License for the specific language governing permissions and
    limitations under the License.
*/

#pragma once

#include <cstddef>
#include <vector>

#include "evotaxo/errors.hpp"

namespace evotaxo {

class ClusteringError : public Error {
public:
    using Error::Error;
};

/// Dense symmetric distance matrix, row-major.
class DistanceMatrix {
public:
    DistanceMatrix() = default;
    explicit DistanceMatrix(std::size_t n) : n_(n), d_(n * n, 0.0) {}

    std::size_t size() const { return n_; }
    double operator()(std::size_t i, std::size_t j) const { return d_[i * n_ + j]; }
    /// Writes both (i,j) and (j,i).
    void set(std::size_t i, std::size_t j, double v) {
        d_[i * n_ + j] = v;
        d_[j * n_ + i] = v;
    }
    const double* row(std::size_t i) const { return d_.data() + i * n_; }

    /// Throws ClusteringError unless entries are finite, nonnegative, symmetric
    /// within `tolerance` and zero on the diagonal.
    void validate(double tolerance = 1e-12) const;

private:
    std::size_t n_ = 0;
    std::vector<double> d_;
};

inline constexpr int kNoise = -1;
/// Largest bucket the dense representation accepts.
inline constexpr std::size_t kMaxClusterPoints = 20000;

struct ClusterLabeling {
    std::vector<int> labels;  // kNoise or 0..cluster_count-1, numbered by smallest member index
    int cluster_count = 0;

    friend bool operator==(const ClusterLabeling&, const ClusterLabeling&) = default;
};

/// Distance to the k-th nearest other point. Requires 1 <= k < n.
std::vector<double> core_distances(const DistanceMatrix& d, std::size_t k);

/// max(core(i), core(j), d(i,j)) off the diagonal, 0 on it.
DistanceMatrix mutual_reachability(const DistanceMatrix& d, const std::vector<double>& core);

struct MstEdge {
    std::size_t a = 0;  // a < b
    std::size_t b = 0;
    double weight = 0.0;

    friend bool operator==(const MstEdge&, const MstEdge&) = default;
};

/// Prim's algorithm under the strict order (weight, min endpoint, max endpoint),
/// so the tree is unique. Edges are returned in that order.
std::vector<MstEdge> minimum_spanning_tree(const DistanceMatrix& mr);

/// Single-linkage hierarchy from the MST, condensed at `min_cluster_size`, with
/// excess-of-mass selection. `allow_single_cluster` lets the root itself be
/// selected, so one dense group is reported as a cluster rather than noise.
ClusterLabeling extract_clusters(std::size_t n, std::vector<MstEdge> edges, std::size_t min_cluster_size,
                                 bool allow_single_cluster = true);

struct HdbscanParams {
    std::size_t min_cluster_size = 10;
    std::size_t min_samples = 0;  // neighbours excluding the point itself; 0 means min_cluster_size
    bool allow_single_cluster = true;
};

/// Full pipeline. Fewer than min_cluster_size points are all noise; min_samples
/// is clamped to n - 1.
ClusterLabeling hdbscan(const DistanceMatrix& d, const HdbscanParams& params = {});

/// True when both labelings induce the same partition with the same noise set.
bool same_partition(const std::vector<int>& a, const std::vector<int>& b);

/// Renumbers clusters by their smallest member index.
ClusterLabeling canonical_labeling(const std::vector<int>& labels);

}  // namespace evotaxo
