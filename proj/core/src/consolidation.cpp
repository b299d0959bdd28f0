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

#include "evotaxo/consolidation.hpp"

#include <algorithm>
#include <cmath>
#include <ostream>
#include <set>

#include <nlohmann/json.hpp>

#include "evotaxo/text.hpp"

namespace evotaxo {

using nlohmann::json;

std::string to_string(const BucketKey& key) { return std::string(to_string(key.kind)) + ":" + key.target; }

BucketKey bucket_key_of(const DraftAction& action) {
    if (!is_structural(action.kind)) throw ActionError(ActionError::Code::not_structural, "only structural drafts are bucketed");
    if (action.kind == ActionKind::add_path) return BucketKey{action.kind, std::string(kPathTarget)};
    return BucketKey{action.kind, action.target_node};
}

std::vector<Bucket> partition_backlog(const Backlog& backlog) {
    std::map<BucketKey, Bucket> by_key;
    for (const auto& e : backlog.entries()) {
        auto key = bucket_key_of(e.action);
        auto& b = by_key[key];
        b.key = key;
        b.members.push_back(e.action);
    }
    std::vector<Bucket> out;
    out.reserve(by_key.size());
    for (auto& [key, b] : by_key) {
        std::sort(b.members.begin(), b.members.end(), [](const DraftAction& x, const DraftAction& y) {
            return std::tie(x.timestamp, x.id) < std::tie(y.timestamp, y.id);
        });
        b.tau_min = b.members.front().timestamp;
        b.tau_max = b.members.back().timestamp;
        out.push_back(std::move(b));
    }
    return out;
}

std::string_view to_string(View view) { return view == View::semantic ? "semantic" : "joint"; }

View parse_view(std::string_view s) {
    if (s == "semantic") return View::semantic;
    if (s == "joint") return View::joint;
    throw ParseError("unknown view '" + std::string(s) + "'");
}

json to_json(const CandidateCluster& c) {
    return json{{"id", c.id},
                {"view", to_string(c.view)},
                {"bucket", to_string(c.key)},
                {"members", c.members},
                {"medoid", c.medoid}};
}

Embedding normalized(Embedding v) {
    double norm = 0.0;
    for (double x : v) norm += x * x;
    norm = std::sqrt(norm);
    if (norm > 0.0)
        for (double& x : v) x /= norm;
    return v;
}

void EmbeddingCache::ensure(const std::vector<DraftAction>& drafts, const Taxonomy& tax, Embedder& embedder,
                            std::size_t batch_size) {
    std::vector<const DraftAction*> missing;
    std::set<std::string> queued;
    for (const auto& d : drafts)
        if (!vectors_.count(d.id) && queued.insert(d.id).second) missing.push_back(&d);
    for (std::size_t start = 0; start < missing.size(); start += batch_size) {
        const auto end = std::min(missing.size(), start + batch_size);
        std::vector<std::string> texts;
        for (auto i = start; i < end; ++i) texts.push_back(canonical_text(*missing[i], tax));
        auto vecs = embedder.embed(texts);
        if (vecs.size() != texts.size()) throw ProviderError("embedder returned a wrong number of vectors", false);
        for (auto i = start; i < end; ++i) vectors_[missing[i]->id] = normalized(std::move(vecs[i - start]));
    }
}

const Embedding& EmbeddingCache::at(const std::string& id) const {
    auto it = vectors_.find(id);
    if (it == vectors_.end()) throw ClusteringError("no embedding for draft " + id);
    return it->second;
}

void EmbeddingCache::retain(const Backlog& backlog) {
    std::set<std::string> live;
    for (const auto& e : backlog.entries()) live.insert(e.action.id);
    std::erase_if(vectors_, [&](const auto& kv) { return !live.count(kv.first); });
}

json to_json(const EmbeddingCache& cache) {
    json j = json::object();
    for (const auto& [id, v] : cache.vectors_) j[id] = v;
    return j;
}

EmbeddingCache embedding_cache_from_json(const json& j) {
    EmbeddingCache cache;
    try {
        for (const auto& [id, v] : j.items()) cache.vectors_[id] = v.get<Embedding>();
    } catch (const json::exception& e) {
        throw ParseError(std::string("malformed embedding cache: ") + e.what());
    }
    return cache;
}

double d_sem(const Embedding& a, const Embedding& b) {
    if (a.size() != b.size()) throw ClusteringError("embedding dimensions differ");
    double dot = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) dot += a[i] * b[i];
    return std::clamp(1.0 - dot, 0.0, 2.0);
}

double d_time(Instant a, Instant b, Instant tau_min, Instant tau_max) {
    const double gap = std::abs(static_cast<double>(a - b));
    return gap / (static_cast<double>(tau_max - tau_min) + kTimeEpsilon);
}

double d_joint(double semantic, double temporal, double lambda) {
    if (!(lambda >= 0.0 && lambda <= 1.0)) throw ClusteringError("lambda must lie in [0, 1]");
    return (1.0 - lambda) * semantic + lambda * temporal;
}

DistanceMatrix semantic_matrix(const Bucket& bucket, const EmbeddingCache& cache) {
    const auto n = bucket.members.size();
    std::vector<const Embedding*> z;
    for (const auto& m : bucket.members) z.push_back(&cache.at(m.id));
    DistanceMatrix d(n);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i + 1; j < n; ++j) d.set(i, j, d_sem(*z[i], *z[j]));
    return d;
}

DistanceMatrix joint_matrix(const Bucket& bucket, const EmbeddingCache& cache, double lambda) {
    if (!(lambda >= 0.0 && lambda <= 1.0)) throw ClusteringError("lambda must lie in [0, 1]");
    const auto sem = semantic_matrix(bucket, cache);
    const auto n = bucket.members.size();
    DistanceMatrix d(n);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i + 1; j < n; ++j) {
            const double t = d_time(bucket.members[i].timestamp, bucket.members[j].timestamp, bucket.tau_min,
                                    bucket.tau_max);
            d.set(i, j, d_joint(sem(i, j), t, lambda));
        }
    return d;
}

double jaccard(const std::vector<std::string>& a, const std::vector<std::string>& b) {
    std::set<std::string> sa(a.begin(), a.end());
    std::set<std::string> sb(b.begin(), b.end());
    if (sa.empty() && sb.empty()) return 1.0;
    std::size_t inter = 0;
    for (const auto& x : sa) inter += sb.count(x);
    return static_cast<double>(inter) / static_cast<double>(sa.size() + sb.size() - inter);
}

namespace {

std::vector<CandidateCluster> clusters_of(const Bucket& bucket, const DistanceMatrix& d, View view,
                                          const ConsolidationParams& params, std::string_view prefix) {
    const auto labeling = hdbscan(d, HdbscanParams{params.min_cluster_size, params.min_samples,
                                                   params.allow_single_cluster});
    std::vector<std::vector<std::size_t>> groups(static_cast<std::size_t>(labeling.cluster_count));
    for (std::size_t i = 0; i < labeling.labels.size(); ++i)
        if (labeling.labels[i] != kNoise) groups[static_cast<std::size_t>(labeling.labels[i])].push_back(i);

    std::vector<CandidateCluster> out;
    for (std::size_t g = 0; g < groups.size(); ++g) {
        const auto& idx = groups[g];
        CandidateCluster c;
        c.id = std::string(prefix) + to_string(bucket.key) + "/" + std::string(to_string(view)) + "/" + std::to_string(g);
        c.view = view;
        c.key = bucket.key;
        // Medoid: smallest summed in-view distance, ties to the smaller id.
        double best = 0.0;
        for (auto i : idx) {
            c.members.push_back(bucket.members[i].id);
            double sum = 0.0;
            for (auto j : idx) sum += d(i, j);
            const auto& id = bucket.members[i].id;
            if (c.medoid.empty() || sum < best || (sum == best && id < c.medoid)) {
                best = sum;
                c.medoid = id;
            }
        }
        std::sort(c.members.begin(), c.members.end());
        out.push_back(std::move(c));
    }
    return out;
}

}  // namespace

std::vector<CandidateCluster> consolidate(const Bucket& bucket, const ConsolidationParams& params,
                                          const EmbeddingCache& cache, std::string_view id_prefix) {
    if (bucket.members.size() < params.min_cluster_size) return {};
    auto out = clusters_of(bucket, semantic_matrix(bucket, cache), View::semantic, params, id_prefix);
    const auto semantic_count = out.size();
    for (auto& c : clusters_of(bucket, joint_matrix(bucket, cache, params.lambda), View::joint, params, id_prefix)) {
        bool duplicate = false;
        for (std::size_t s = 0; s < semantic_count && !duplicate; ++s)
            duplicate = jaccard(out[s].members, c.members) >= params.dedup_jaccard;
        if (!duplicate) out.push_back(std::move(c));
    }
    return out;
}

std::vector<CandidateCluster> consolidate_all(const std::vector<Bucket>& buckets, const ConsolidationParams& params,
                                              const EmbeddingCache& cache, std::string_view id_prefix) {
    std::vector<CandidateCluster> out;
    for (const auto& b : buckets) {
        auto part = consolidate(b, params, cache, id_prefix);
        out.insert(out.end(), std::make_move_iterator(part.begin()), std::make_move_iterator(part.end()));
    }
    return out;
}

void write_cluster_csv(std::ostream& out, int window, const std::vector<CandidateCluster>& clusters, bool header) {
    if (header) out << "window,bucket,view,cluster_id,members\n";
    for (const auto& c : clusters)
        out << window << ',' << to_string(c.key) << ',' << to_string(c.view) << ',' << c.id << ','
            << text::join(c.members, ";") << '\n';
}

}  // namespace evotaxo
