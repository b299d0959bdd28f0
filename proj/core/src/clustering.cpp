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

#include "evotaxo/clustering.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <set>
#include <string>
#include <tuple>

namespace evotaxo {

namespace {
constexpr double kInf = std::numeric_limits<double>::infinity();
constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();
}  // namespace

void DistanceMatrix::validate(double tolerance) const {
    for (std::size_t i = 0; i < n_; ++i) {
        if ((*this)(i, i) != 0.0) throw ClusteringError("distance matrix has a nonzero diagonal at " + std::to_string(i));
        for (std::size_t j = i + 1; j < n_; ++j) {
            const double a = (*this)(i, j);
            const double b = (*this)(j, i);
            if (!std::isfinite(a) || !std::isfinite(b) || a < 0.0 || b < 0.0)
                throw ClusteringError("distance matrix has an invalid entry at (" + std::to_string(i) + "," +
                                      std::to_string(j) + ")");
            if (std::abs(a - b) > tolerance)
                throw ClusteringError("distance matrix is not symmetric at (" + std::to_string(i) + "," +
                                      std::to_string(j) + ")");
        }
    }
}

std::vector<double> core_distances(const DistanceMatrix& d, std::size_t k) {
    const std::size_t n = d.size();
    if (k < 1 || k >= n)
        throw ClusteringError("min_samples must satisfy 1 <= k < n (k=" + std::to_string(k) + ", n=" + std::to_string(n) + ")");
    std::vector<double> core(n);
    std::vector<double> row;
    for (std::size_t i = 0; i < n; ++i) {
        row.clear();
        for (std::size_t j = 0; j < n; ++j)
            if (j != i) row.push_back(d(i, j));
        std::nth_element(row.begin(), row.begin() + static_cast<std::ptrdiff_t>(k - 1), row.end());
        core[i] = row[k - 1];
    }
    return core;
}

DistanceMatrix mutual_reachability(const DistanceMatrix& d, const std::vector<double>& core) {
    const std::size_t n = d.size();
    if (core.size() != n) throw ClusteringError("core distance count does not match the matrix");
    DistanceMatrix mr(n);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i + 1; j < n; ++j) mr.set(i, j, std::max({core[i], core[j], d(i, j)}));
    return mr;
}

std::vector<MstEdge> minimum_spanning_tree(const DistanceMatrix& mr) {
    const std::size_t n = mr.size();
    std::vector<MstEdge> edges;
    if (n < 2) return edges;
    edges.reserve(n - 1);

    using Key = std::tuple<double, std::size_t, std::size_t>;
    auto key = [](double w, std::size_t u, std::size_t v) { return Key{w, std::min(u, v), std::max(u, v)}; };

    std::vector<bool> in_tree(n, false);
    std::vector<double> best(n, kInf);
    std::vector<std::size_t> via(n, 0);
    std::size_t current = 0;
    in_tree[0] = true;
    for (std::size_t step = 1; step < n; ++step) {
        const double* row = mr.row(current);
        for (std::size_t v = 0; v < n; ++v) {
            if (in_tree[v]) continue;
            if (key(row[v], current, v) < key(best[v], via[v], v)) {
                best[v] = row[v];
                via[v] = current;
            }
        }
        std::size_t pick = n;
        for (std::size_t v = 0; v < n; ++v) {
            if (in_tree[v]) continue;
            if (pick == n || key(best[v], via[v], v) < key(best[pick], via[pick], pick)) pick = v;
        }
        in_tree[pick] = true;
        edges.push_back(MstEdge{std::min(pick, via[pick]), std::max(pick, via[pick]), best[pick]});
        current = pick;
    }
    std::sort(edges.begin(), edges.end(), [](const MstEdge& x, const MstEdge& y) {
        return std::tie(x.weight, x.a, x.b) < std::tie(y.weight, y.a, y.b);
    });
    return edges;
}

namespace {

struct Merge {
    std::size_t left;
    std::size_t right;
    double distance;
    std::size_t size;
};

struct CondensedRow {
    std::size_t parent;
    std::size_t child;
    double lambda;
    std::size_t size;
};

std::vector<Merge> single_linkage(std::size_t n, const std::vector<MstEdge>& edges) {
    std::vector<std::size_t> parent(2 * n - 1);
    std::vector<std::size_t> size(2 * n - 1, 0);
    for (std::size_t i = 0; i < parent.size(); ++i) parent[i] = i;
    std::fill(size.begin(), size.begin() + static_cast<std::ptrdiff_t>(n), 1);
    auto find = [&](std::size_t x) {
        std::size_t r = x;
        while (parent[r] != r) r = parent[r];
        while (parent[x] != r) {
            const auto next = parent[x];
            parent[x] = r;
            x = next;
        }
        return r;
    };
    std::vector<Merge> out;
    out.reserve(n - 1);
    std::size_t next_label = n;
    for (const auto& e : edges) {
        const auto a = find(e.a);
        const auto b = find(e.b);
        out.push_back(Merge{a, b, e.weight, size[a] + size[b]});
        parent[a] = parent[b] = next_label;
        size[next_label] = size[a] + size[b];
        ++next_label;
    }
    return out;
}

std::vector<std::size_t> bfs_hierarchy(const std::vector<Merge>& h, std::size_t root) {
    const std::size_t n = h.size() + 1;
    std::vector<std::size_t> result;
    std::vector<std::size_t> queue{root};
    while (!queue.empty()) {
        result.insert(result.end(), queue.begin(), queue.end());
        std::vector<std::size_t> internal;
        for (auto x : queue)
            if (x >= n) internal.push_back(x - n);
        queue.clear();
        for (auto i : internal) queue.push_back(h[i].left);
        for (auto i : internal) queue.push_back(h[i].right);
    }
    return result;
}

std::vector<CondensedRow> condense(const std::vector<Merge>& h, std::size_t min_cluster_size) {
    const std::size_t root = 2 * h.size();
    const std::size_t n = h.size() + 1;
    std::size_t next_label = n + 1;
    std::vector<std::size_t> relabel(root + 1, 0);
    relabel[root] = n;
    std::vector<bool> ignore(root + 1, false);
    std::vector<CondensedRow> rows;

    auto drop_subtree = [&](std::size_t node, std::size_t sub_root, double lambda) {
        for (auto sub : bfs_hierarchy(h, sub_root)) {
            if (sub < n) rows.push_back(CondensedRow{relabel[node], sub, lambda, 1});
            ignore[sub] = true;
        }
    };

    for (auto node : bfs_hierarchy(h, root)) {
        if (ignore[node] || node < n) continue;
        const auto& m = h[node - n];
        const double lambda = m.distance > 0.0 ? 1.0 / m.distance : kInf;
        const std::size_t left_count = m.left >= n ? h[m.left - n].size : 1;
        const std::size_t right_count = m.right >= n ? h[m.right - n].size : 1;

        if (left_count >= min_cluster_size && right_count >= min_cluster_size) {
            relabel[m.left] = next_label++;
            rows.push_back(CondensedRow{relabel[node], relabel[m.left], lambda, left_count});
            relabel[m.right] = next_label++;
            rows.push_back(CondensedRow{relabel[node], relabel[m.right], lambda, right_count});
        } else if (left_count < min_cluster_size && right_count < min_cluster_size) {
            drop_subtree(node, m.left, lambda);
            drop_subtree(node, m.right, lambda);
        } else if (left_count < min_cluster_size) {
            relabel[m.right] = relabel[node];
            drop_subtree(node, m.left, lambda);
        } else {
            relabel[m.left] = relabel[node];
            drop_subtree(node, m.right, lambda);
        }
    }
    return rows;
}

std::map<std::size_t, double> stabilities(const std::vector<CondensedRow>& rows) {
    std::size_t largest_child = 0;
    std::size_t smallest = std::numeric_limits<std::size_t>::max();
    std::size_t largest_parent = 0;
    for (const auto& r : rows) {
        largest_child = std::max(largest_child, r.child);
        smallest = std::min(smallest, r.parent);
        largest_parent = std::max(largest_parent, r.parent);
    }
    largest_child = std::max(largest_child, smallest);
    std::vector<double> births(largest_child + 1, kNaN);
    for (const auto& r : rows) births[r.child] = r.lambda;
    births[smallest] = 0.0;

    std::vector<double> result(largest_parent - smallest + 1, 0.0);
    for (const auto& r : rows)
        result[r.parent - smallest] += (r.lambda - births[r.parent]) * static_cast<double>(r.size);

    std::map<std::size_t, double> out;
    for (std::size_t c = smallest; c <= largest_parent; ++c) out[c] = result[c - smallest];
    return out;
}

}  // namespace

ClusterLabeling extract_clusters(std::size_t n, std::vector<MstEdge> edges, std::size_t min_cluster_size,
                                 bool allow_single_cluster) {
    if (min_cluster_size < 2) throw ClusteringError("min_cluster_size must be at least 2");
    if (n == 0) return {};
    if (edges.size() + 1 != n) throw ClusteringError("a spanning tree over n points has n-1 edges");
    if (n == 1) return ClusterLabeling{{kNoise}, 0};
    std::stable_sort(edges.begin(), edges.end(), [](const MstEdge& x, const MstEdge& y) { return x.weight < y.weight; });

    const auto hierarchy = single_linkage(n, edges);
    const auto rows = condense(hierarchy, min_cluster_size);
    auto stability = stabilities(rows);
    const std::size_t root_cluster = n;

    // Cluster ids are a topological order: children carry larger ids than parents.
    std::vector<std::size_t> node_list;
    for (auto it = stability.rbegin(); it != stability.rend(); ++it) node_list.push_back(it->first);
    if (!allow_single_cluster) node_list.pop_back();

    std::vector<CondensedRow> cluster_tree;
    for (const auto& r : rows)
        if (r.size > 1) cluster_tree.push_back(r);

    std::map<std::size_t, bool> is_cluster;
    for (auto c : node_list) is_cluster[c] = true;

    for (auto node : node_list) {
        double subtree = 0.0;
        for (const auto& r : cluster_tree)
            if (r.parent == node) subtree += stability[r.child];
        if (subtree > stability[node]) {
            is_cluster[node] = false;
            stability[node] = subtree;
        } else {
            std::vector<std::size_t> queue{node};
            while (!queue.empty()) {
                std::vector<std::size_t> next;
                for (auto q : queue) {
                    if (q != node) is_cluster[q] = false;
                    for (const auto& r : cluster_tree)
                        if (r.parent == q) next.push_back(r.child);
                }
                queue = std::move(next);
            }
        }
    }

    std::set<std::size_t> clusters;
    for (const auto& [c, selected] : is_cluster)
        if (selected) clusters.insert(c);

    // Points are absorbed upwards through every unselected node.
    std::size_t max_parent = 0;
    for (const auto& r : rows) max_parent = std::max(max_parent, r.parent);
    std::vector<std::size_t> uf(std::max(max_parent + 1, n));
    for (std::size_t i = 0; i < uf.size(); ++i) uf[i] = i;
    auto find = [&](std::size_t x) {
        while (uf[x] != x) x = uf[x];
        return x;
    };
    for (const auto& r : rows)
        if (!clusters.count(r.child)) uf[find(r.child)] = find(r.parent);

    double root_threshold = -kInf;
    for (const auto& r : rows)
        if (r.parent == root_cluster) root_threshold = std::max(root_threshold, r.lambda);
    std::vector<double> point_lambda(n, kNaN);
    for (const auto& r : rows)
        if (r.child < n) point_lambda[r.child] = r.lambda;

    std::map<std::size_t, int> label_of;
    for (auto c : clusters) label_of.emplace(c, static_cast<int>(label_of.size()));

    std::vector<int> labels(n, kNoise);
    for (std::size_t p = 0; p < n; ++p) {
        const auto c = find(p);
        if (c != root_cluster) {
            labels[p] = label_of.at(c);
        } else if (clusters.size() == 1 && allow_single_cluster && clusters.count(root_cluster)) {
            if (point_lambda[p] >= root_threshold) labels[p] = label_of.at(c);
        }
    }

    // A root cluster can keep fewer points than the size threshold; such a group is noise.
    std::map<int, std::size_t> sizes;
    for (int l : labels)
        if (l != kNoise) ++sizes[l];
    for (int& l : labels)
        if (l != kNoise && sizes[l] < min_cluster_size) l = kNoise;
    return canonical_labeling(labels);
}

ClusterLabeling hdbscan(const DistanceMatrix& d, const HdbscanParams& params) {
    const std::size_t n = d.size();
    if (params.min_cluster_size < 2) throw ClusteringError("min_cluster_size must be at least 2");
    if (n > kMaxClusterPoints)
        throw ClusteringError("bucket of " + std::to_string(n) + " points exceeds the dense limit of " +
                              std::to_string(kMaxClusterPoints));
    if (n == 0) return {};
    if (n < params.min_cluster_size) return ClusterLabeling{std::vector<int>(n, kNoise), 0};
    std::size_t k = params.min_samples == 0 ? params.min_cluster_size : params.min_samples;
    k = std::min(k, n - 1);
    const auto core = core_distances(d, k);
    const auto mr = mutual_reachability(d, core);
    return extract_clusters(n, minimum_spanning_tree(mr), params.min_cluster_size, params.allow_single_cluster);
}

ClusterLabeling canonical_labeling(const std::vector<int>& labels) {
    std::map<int, int> remap;
    ClusterLabeling out;
    out.labels.reserve(labels.size());
    for (int l : labels) {
        if (l == kNoise) {
            out.labels.push_back(kNoise);
            continue;
        }
        auto [it, inserted] = remap.emplace(l, static_cast<int>(remap.size()));
        out.labels.push_back(it->second);
    }
    out.cluster_count = static_cast<int>(remap.size());
    return out;
}

bool same_partition(const std::vector<int>& a, const std::vector<int>& b) {
    return a.size() == b.size() && canonical_labeling(a) == canonical_labeling(b);
}

}  // namespace evotaxo
