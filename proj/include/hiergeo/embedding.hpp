#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "hiergeo/matrix.hpp"

namespace hiergeo {

enum class View : std::uint8_t { drone = 0, satellite = 1 };

struct EmbeddingRecord {
    std::int64_t image_id = 0;
    std::int64_t building_id = 0;
    View view = View::drone;
    std::vector<float> vector;
};

// Fixed-dimension feature set. `normalized` tracks whether every vector is
// unit length, preventing double normalization across save/load cycles.
struct EmbeddingSet {
    std::uint32_t dimension = 0;
    bool normalized = false;
    std::vector<EmbeddingRecord> records;

    void validate() const;  // unique image ids, uniform dimension
    EmbeddingSet filter_view(View view) const;
    EmbeddingSet filter_buildings(const std::vector<std::int64_t>& ids) const;
};

std::vector<double> l2_normalize(const std::vector<double>& v);

// Chain rule through u = v / ||v||: maps the gradient w.r.t. the unit vector
// back to the gradient w.r.t. the raw vector.
std::vector<double> l2_normalize_backward(const std::vector<double>& raw,
                                          const std::vector<double>& grad_unit);

// No-op when the set is already normalized.
void normalize(EmbeddingSet& set);

// Cosine similarities, rows = queries, cols = gallery. Both sets must be
// normalized and share one dimension. Accumulation in f64.
Matrix similarity_matrix(const EmbeddingSet& queries, const EmbeddingSet& gallery);

// d = 1 - r entrywise.
Matrix similarity_to_distance(const Matrix& similarities);

// Binary format, little-endian: magic "HGEO1", dimension u32, count u64,
// then per record image_id u64, building_id u64, view u8, normalized u8,
// dimension x f32. A JSON-lines file with the same fields is also accepted
// by load_embeddings.
void save_embeddings(const EmbeddingSet& set, const std::string& path);
void save_embeddings_jsonl(const EmbeddingSet& set, const std::string& path);
EmbeddingSet load_embeddings(const std::string& path);

// Square f64 distance matrix, magic "HGEO1D": n_query u64, n_total u64,
// then n_total^2 f64 row-major. Rows 0..n_query-1 are queries.
struct SquareDistanceFile {
    std::uint64_t n_query = 0;
    Matrix matrix;
};
void save_distance_matrix(const SquareDistanceFile& f, const std::string& path);
SquareDistanceFile load_distance_matrix(const std::string& path);

}  // namespace hiergeo
