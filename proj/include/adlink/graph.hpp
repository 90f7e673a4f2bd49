#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "adlink/corpus.hpp"
#include "adlink/encoder.hpp"

namespace adlink::graph {

// Bipartite post/hash graph. Vertices get dense indices: posts first in
// ascending post_int order, then hashes in ascending string order; the
// "smallest vertex" tie-breaks below refer to this ordering.
struct BipartiteGraph {
    std::vector<int64_t> post_ids;                         // sorted unique
    std::vector<std::string> hash_values;                  // sorted unique
    std::vector<std::pair<uint32_t, uint32_t>> edges;      // (post idx, hash idx), dedup

    size_t post_count() const { return post_ids.size(); }
    size_t hash_count() const { return hash_values.size(); }
    size_t vertex_count() const { return post_ids.size() + hash_values.size(); }
    bool is_post_vertex(uint32_t v) const { return v < post_ids.size(); }
};

struct Component {
    int id = 0;
    std::vector<uint32_t> vertices;  // global vertex indices, ascending
};

struct ScoredPostGraph {
    struct Edge {
        uint32_t a = 0, b = 0;  // indices into posts, a < b
        double score = 0.0;
        bool scored = false;
    };
    std::vector<int64_t> posts;  // post_int values, ascending
    std::vector<Edge> edges;
};

struct SweepRow {
    double threshold = 0.0;
    double edges_filtered_pct = 0.0;
    size_t component_count = 0;
    double component_increase_pct = 0.0;
};

struct SweepReport {
    // Increase formula: (components_after - components_before) /
    // components_before * 100, with components_before the full original
    // graph's component count; splitting the giant into k parts adds k-1.
    std::vector<SweepRow> rows;
    size_t original_component_count = 0;
    std::string to_csv() const;
    std::string to_plot_json() const;
};

// One vertex per distinct post_int / phash16, one edge per co-occurrence
// in an ad row, deduplicated. phone_int is not a linkage source here;
// callers wanting phone edges must materialize them as hash vertices.
BipartiteGraph build_bipartite(const std::vector<corpus::AdRecord>& ads);

// Union-find connectivity. Components sorted by descending size, then
// ascending smallest vertex index; ids follow that order, so the giant
// (with ties broken toward the smallest vertex) is always id 0.
std::vector<Component> connected_components(const BipartiteGraph& g);

// Posts of the giant component, adjacent iff they share a hash vertex.
// Simple graph: no self loops, one edge per unordered pair.
ScoredPostGraph project_giant(const BipartiteGraph& g, const std::vector<Component>& components);

// Scores every edge with the cosine of its endpoint embeddings; each
// vertex is embedded once.
void score_edges(ScoredPostGraph& pg, const enc::SentenceEncoder& encoder,
                 const std::map<int64_t, std::string>& texts);

// For each threshold: drop edges with score < threshold, count the
// components the projected vertices fall into.
SweepReport sweep_thresholds(const ScoredPostGraph& pg, const std::vector<double>& grid,
                             size_t original_component_count);

std::vector<double> default_threshold_grid();  // 0.05, 0.10, ..., 0.95

// Plain union-find over n elements.
class UnionFind {
public:
    explicit UnionFind(size_t n);
    uint32_t find(uint32_t x);
    void unite(uint32_t a, uint32_t b);
    size_t component_count() const { return components_; }

private:
    std::vector<uint32_t> parent_;
    std::vector<uint32_t> rank_;
    size_t components_;
};

}  // namespace adlink::graph
