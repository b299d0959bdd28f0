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

#include <compare>
#include <iosfwd>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "evotaxo/actions.hpp"
#include "evotaxo/clustering.hpp"
#include "evotaxo/providers.hpp"

namespace evotaxo {

/// Target of add_path buckets, which always hang off the root.
inline constexpr std::string_view kPathTarget = "⊥";

struct BucketKey {
    ActionKind kind = ActionKind::add_child;
    std::string target;

    friend auto operator<=>(const BucketKey&, const BucketKey&) = default;
    friend bool operator==(const BucketKey&, const BucketKey&) = default;
};

/// "kind:target", e.g. "add_child:n0003".
std::string to_string(const BucketKey& key);
BucketKey bucket_key_of(const DraftAction& action);

struct Bucket {
    BucketKey key;
    std::vector<DraftAction> members;  // sorted by (timestamp, id)
    Instant tau_min = 0;
    Instant tau_max = 0;
};

/// One bucket per distinct key, in key order.
std::vector<Bucket> partition_backlog(const Backlog& backlog);

enum class View { semantic, joint };
std::string_view to_string(View view);
View parse_view(std::string_view s);

struct CandidateCluster {
    std::string id;
    View view = View::semantic;
    BucketKey key;
    std::vector<std::string> members;  // draft ids, sorted
    std::string medoid;

    friend bool operator==(const CandidateCluster&, const CandidateCluster&) = default;
};

nlohmann::json to_json(const CandidateCluster& c);

/// Unit-norm embeddings of canonical action text, computed once per draft id.
class EmbeddingCache {
public:
    /// Embeds every draft not yet cached, in batches, in the order given.
    void ensure(const std::vector<DraftAction>& drafts, const Taxonomy& tax, Embedder& embedder,
                std::size_t batch_size = 64);
    /// Throws ClusteringError when `id` has no embedding.
    const Embedding& at(const std::string& id) const;
    bool contains(const std::string& id) const { return vectors_.count(id) > 0; }
    /// Drops embeddings of drafts that left the backlog.
    void retain(const Backlog& backlog);
    std::size_t size() const { return vectors_.size(); }

    friend nlohmann::json to_json(const EmbeddingCache& cache);
    friend EmbeddingCache embedding_cache_from_json(const nlohmann::json& j);

private:
    std::map<std::string, Embedding> vectors_;
};

nlohmann::json to_json(const EmbeddingCache& cache);
EmbeddingCache embedding_cache_from_json(const nlohmann::json& j);

/// Returns a unit-norm copy. A zero vector stays zero.
Embedding normalized(Embedding v);

/// 1 - cos, clamped to [0, 2]. Throws ClusteringError on dimension mismatch.
double d_sem(const Embedding& a, const Embedding& b);

inline constexpr double kTimeEpsilon = 1e-9;
/// |ta - tb| / (tau_max - tau_min + eps), in [0, 1).
double d_time(Instant a, Instant b, Instant tau_min, Instant tau_max);
/// (1 - lambda) d_sem + lambda d_time. Throws ClusteringError when lambda is outside [0, 1].
double d_joint(double semantic, double temporal, double lambda);

DistanceMatrix semantic_matrix(const Bucket& bucket, const EmbeddingCache& cache);
DistanceMatrix joint_matrix(const Bucket& bucket, const EmbeddingCache& cache, double lambda);

struct ConsolidationParams {
    double lambda = 0.5;
    std::size_t min_cluster_size = 10;
    std::size_t min_samples = 0;  // 0 means min_cluster_size
    bool allow_single_cluster = true;
    double dedup_jaccard = 0.8;
};

double jaccard(const std::vector<std::string>& a, const std::vector<std::string>& b);

/// Both clustering passes over one bucket. Joint-view clusters overlapping a
/// semantic-view cluster at `dedup_jaccard` or more are dropped. Cluster ids
/// are `prefix + key + "/" + view + "/" + ordinal`.
std::vector<CandidateCluster> consolidate(const Bucket& bucket, const ConsolidationParams& params,
                                          const EmbeddingCache& cache, std::string_view id_prefix = {});

/// Every bucket, concatenated in bucket order.
std::vector<CandidateCluster> consolidate_all(const std::vector<Bucket>& buckets, const ConsolidationParams& params,
                                              const EmbeddingCache& cache, std::string_view id_prefix = {});

/// CSV rows `window,bucket,view,cluster_id,members` with members joined by ';'.
void write_cluster_csv(std::ostream& out, int window, const std::vector<CandidateCluster>& clusters,
                       bool header = true);

}  // namespace evotaxo
