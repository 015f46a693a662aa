#include "hiergeo/embedding.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <unordered_set>

#include <json.hpp>

#include "hiergeo/errors.hpp"
#include "hiergeo/parallel.hpp"

namespace hiergeo {

namespace {

constexpr char kMagic[5] = {'H', 'G', 'E', 'O', '1'};
constexpr char kMagicDist[6] = {'H', 'G', 'E', 'O', '1', 'D'};

template <typename T>
void write_pod(std::ostream& out, T v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::istream& in, const std::string& what) {
    T v{};
    in.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!in) throw InputError("truncated file while reading " + what);
    return v;
}

}  // namespace

void EmbeddingSet::validate() const {
    std::unordered_set<std::int64_t> seen;
    for (const auto& r : records) {
        if (r.vector.size() != dimension)
            throw InputError("embedding dimension mismatch for image " +
                             std::to_string(r.image_id));
        if (!seen.insert(r.image_id).second)
            throw InputError("duplicate image_id " + std::to_string(r.image_id));
    }
}

EmbeddingSet EmbeddingSet::filter_view(View view) const {
    EmbeddingSet out;
    out.dimension = dimension;
    out.normalized = normalized;
    for (const auto& r : records)
        if (r.view == view) out.records.push_back(r);
    return out;
}

EmbeddingSet EmbeddingSet::filter_buildings(
    const std::vector<std::int64_t>& ids) const {
    std::unordered_set<std::int64_t> keep(ids.begin(), ids.end());
    EmbeddingSet out;
    out.dimension = dimension;
    out.normalized = normalized;
    for (const auto& r : records)
        if (keep.count(r.building_id)) out.records.push_back(r);
    return out;
}

std::vector<double> l2_normalize(const std::vector<double>& v) {
    double sq = 0.0;
    for (double x : v) sq += x * x;
    const double norm = std::sqrt(sq);
    if (!(norm > 0.0)) throw InputError("l2_normalize: zero vector");
    std::vector<double> out(v.size());
    for (std::size_t i = 0; i < v.size(); ++i) out[i] = v[i] / norm;
    return out;
}

std::vector<double> l2_normalize_backward(
    const std::vector<double>& raw, const std::vector<double>& grad_unit) {
    if (raw.size() != grad_unit.size())
        throw InputError("l2_normalize_backward: size mismatch");
    double sq = 0.0;
    for (double x : raw) sq += x * x;
    const double norm = std::sqrt(sq);
    if (!(norm > 0.0)) throw InputError("l2_normalize_backward: zero vector");
    double dot = 0.0;
    for (std::size_t i = 0; i < raw.size(); ++i)
        dot += grad_unit[i] * raw[i] / norm;
    std::vector<double> out(raw.size());
    for (std::size_t i = 0; i < raw.size(); ++i)
        out[i] = (grad_unit[i] - dot * raw[i] / norm) / norm;
    return out;
}

void normalize(EmbeddingSet& set) {
    if (set.normalized) return;
    set.validate();
    for (auto& r : set.records) {
        double sq = 0.0;
        for (float x : r.vector) sq += static_cast<double>(x) * x;
        const double norm = std::sqrt(sq);
        if (!(norm > 0.0))
            throw InputError("zero vector for image " +
                             std::to_string(r.image_id));
        for (auto& x : r.vector)
            x = static_cast<float>(static_cast<double>(x) / norm);
    }
    set.normalized = true;
}

Matrix similarity_matrix(const EmbeddingSet& queries,
                         const EmbeddingSet& gallery) {
    if (queries.dimension != gallery.dimension)
        throw InputError("similarity_matrix: dimension mismatch");
    if (!queries.normalized || !gallery.normalized)
        throw InputError("similarity_matrix: sets must be normalized");
    const std::size_t nq = queries.records.size();
    const std::size_t ng = gallery.records.size();
    const std::size_t dim = queries.dimension;
    Matrix out(nq, ng);
    parallel_for(nq, [&](std::size_t i) {
        const float* q = queries.records[i].vector.data();
        double* row = out.row(i);
        for (std::size_t j = 0; j < ng; ++j) {
            const float* g = gallery.records[j].vector.data();
            double acc = 0.0;
            for (std::size_t d = 0; d < dim; ++d)
                acc += static_cast<double>(q[d]) * static_cast<double>(g[d]);
            row[j] = acc;
        }
    });
    return out;
}

Matrix similarity_to_distance(const Matrix& similarities) {
    Matrix out(similarities.rows, similarities.cols);
    for (std::size_t i = 0; i < similarities.data.size(); ++i)
        out.data[i] = 1.0 - similarities.data[i];
    return out;
}

void save_embeddings(const EmbeddingSet& set, const std::string& path) {
    set.validate();
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write embeddings: " + path);
    out.write(kMagic, sizeof(kMagic));
    write_pod<std::uint32_t>(out, set.dimension);
    write_pod<std::uint64_t>(out, set.records.size());
    for (const auto& r : set.records) {
        write_pod<std::uint64_t>(out, static_cast<std::uint64_t>(r.image_id));
        write_pod<std::uint64_t>(out, static_cast<std::uint64_t>(r.building_id));
        write_pod<std::uint8_t>(out, static_cast<std::uint8_t>(r.view));
        write_pod<std::uint8_t>(out, set.normalized ? 1 : 0);
        out.write(reinterpret_cast<const char*>(r.vector.data()),
                  static_cast<std::streamsize>(r.vector.size() * sizeof(float)));
    }
    if (!out) throw IoError("write failed: " + path);
}

void save_embeddings_jsonl(const EmbeddingSet& set, const std::string& path) {
    set.validate();
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw IoError("cannot write embeddings: " + path);
    for (const auto& r : set.records) {
        nlohmann::json j;
        j["image_id"] = r.image_id;
        j["building_id"] = r.building_id;
        j["view"] = r.view == View::drone ? "drone" : "satellite";
        j["normalized"] = set.normalized;
        j["vector"] = r.vector;
        out << j.dump() << '\n';
    }
    if (!out) throw IoError("write failed: " + path);
}

namespace {

EmbeddingSet load_embeddings_binary(std::ifstream& in, const std::string& path) {
    EmbeddingSet set;
    set.dimension = read_pod<std::uint32_t>(in, "dimension");
    const auto count = read_pod<std::uint64_t>(in, "record count");
    set.records.reserve(count);
    int norm_flag = -1;
    for (std::uint64_t i = 0; i < count; ++i) {
        EmbeddingRecord r;
        r.image_id =
            static_cast<std::int64_t>(read_pod<std::uint64_t>(in, "image_id"));
        r.building_id = static_cast<std::int64_t>(
            read_pod<std::uint64_t>(in, "building_id"));
        const auto view = read_pod<std::uint8_t>(in, "view");
        if (view > 1)
            throw InputError(path + ": invalid view tag " +
                             std::to_string(int(view)));
        r.view = static_cast<View>(view);
        const auto flag = read_pod<std::uint8_t>(in, "normalized flag");
        if (flag > 1) throw InputError(path + ": invalid normalized flag");
        if (norm_flag < 0)
            norm_flag = flag;
        else if (norm_flag != flag)
            throw InputError(path + ": mixed normalized flags");
        r.vector.resize(set.dimension);
        in.read(reinterpret_cast<char*>(r.vector.data()),
                static_cast<std::streamsize>(set.dimension * sizeof(float)));
        if (!in) throw InputError(path + ": truncated vector data");
        set.records.push_back(std::move(r));
    }
    char extra;
    if (in.read(&extra, 1))
        throw InputError(path + ": trailing bytes after last record");
    set.normalized = norm_flag == 1;
    set.validate();
    return set;
}

EmbeddingSet load_embeddings_jsonl(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw InputError("cannot open embeddings: " + path);
    EmbeddingSet set;
    bool first = true;
    int norm_flag = -1;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(line);
            EmbeddingRecord r;
            r.image_id = j.at("image_id").get<std::int64_t>();
            r.building_id = j.at("building_id").get<std::int64_t>();
            const std::string view = j.at("view").get<std::string>();
            if (view == "drone")
                r.view = View::drone;
            else if (view == "satellite")
                r.view = View::satellite;
            else
                throw InputError("unknown view: " + view);
            const bool flag = j.at("normalized").get<bool>();
            if (norm_flag < 0)
                norm_flag = flag ? 1 : 0;
            else if (norm_flag != (flag ? 1 : 0))
                throw InputError("mixed normalized flags");
            r.vector = j.at("vector").get<std::vector<float>>();
            if (first) {
                set.dimension = static_cast<std::uint32_t>(r.vector.size());
                first = false;
            }
            set.records.push_back(std::move(r));
        } catch (const nlohmann::json::exception& e) {
            throw InputError(path + ":" + std::to_string(lineno) + ": " +
                             e.what());
        }
    }
    set.normalized = norm_flag == 1;
    set.validate();
    return set;
}

}  // namespace

EmbeddingSet load_embeddings(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw InputError("cannot open embeddings: " + path);
    char magic[sizeof(kMagic)] = {};
    in.read(magic, sizeof(magic));
    if (in && std::memcmp(magic, kMagic, sizeof(kMagic)) == 0)
        return load_embeddings_binary(in, path);
    return load_embeddings_jsonl(path);
}

void save_distance_matrix(const SquareDistanceFile& f, const std::string& path) {
    if (f.matrix.rows != f.matrix.cols)
        throw InputError("distance matrix must be square");
    if (f.n_query > f.matrix.rows)
        throw InputError("n_query exceeds matrix size");
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write distance matrix: " + path);
    out.write(kMagicDist, sizeof(kMagicDist));
    write_pod<std::uint64_t>(out, f.n_query);
    write_pod<std::uint64_t>(out, f.matrix.rows);
    out.write(reinterpret_cast<const char*>(f.matrix.data.data()),
              static_cast<std::streamsize>(f.matrix.data.size() * sizeof(double)));
    if (!out) throw IoError("write failed: " + path);
}

SquareDistanceFile load_distance_matrix(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw InputError("cannot open distance matrix: " + path);
    char magic[sizeof(kMagicDist)] = {};
    in.read(magic, sizeof(magic));
    if (!in || std::memcmp(magic, kMagicDist, sizeof(kMagicDist)) != 0)
        throw InputError(path + ": bad magic, expected HGEO1D");
    SquareDistanceFile f;
    f.n_query = read_pod<std::uint64_t>(in, "n_query");
    const auto n = read_pod<std::uint64_t>(in, "n_total");
    if (f.n_query > n) throw InputError(path + ": n_query exceeds n_total");
    f.matrix = Matrix(n, n);
    in.read(reinterpret_cast<char*>(f.matrix.data.data()),
            static_cast<std::streamsize>(f.matrix.data.size() * sizeof(double)));
    if (!in) throw InputError(path + ": truncated matrix data");
    return f;
}

}  // namespace hiergeo
