#include "kml/embedding.hpp"

#include <algorithm>
#include <cstring>
#include <fstream>

#include <nlohmann/json.hpp>

#include "kml/errors.hpp"

namespace kml {

using ordered_json = nlohmann::ordered_json;

const char* to_string(EmbeddingMode m) {
    switch (m) {
        case EmbeddingMode::Frozen: return "frozen";
        case EmbeddingMode::Trainable: return "trainable";
        default: return "file-loaded-then-trainable";
    }
}

EmbeddingMode embedding_mode_from_string(const std::string& s) {
    if (s == "frozen") return EmbeddingMode::Frozen;
    if (s == "trainable") return EmbeddingMode::Trainable;
    if (s == "file-loaded-then-trainable") return EmbeddingMode::FileLoadedThenTrainable;
    throw BadConfig("unknown embedding mode '" + s + "'");
}

EmbeddingTable EmbeddingTable::random(std::vector<std::string> ids, std::size_t dim, Rng& rng) {
    std::sort(ids.begin(), ids.end());
    EmbeddingTable t;
    t.dim_ = dim;
    t.ids_ = std::move(ids);
    for (std::size_t i = 0; i < t.ids_.size(); ++i) {
        if (!t.index_.emplace(t.ids_[i], i).second)
            throw DuplicateEntity("embedding id '" + t.ids_[i] + "'");
    }
    t.rows_ = Mat(t.ids_.size(), dim);
    for (double& v : t.rows_.a) v = rng.gaussian();
    t.renormalize();
    return t;
}

std::size_t EmbeddingTable::index_of(const std::string& id) const {
    auto it = index_.find(id);
    if (it == index_.end()) throw UnknownCategory("no embedding for '" + id + "'");
    return it->second;
}

Vec EmbeddingTable::unit(std::size_t idx) const {
    const double* r = rows_.row(idx);
    return Vec(r, r + dim_);
}

Vec EmbeddingTable::unit(const std::string& id) const { return unit(index_of(id)); }

void EmbeddingTable::renormalize() {
    for (std::size_t i = 0; i < rows_.rows; ++i) {
        double* r = rows_.row(i);
        double n = std::sqrt(dot(r, r, dim_));
        if (n < 1e-12) { // re-seat a collapsed row on the first axis
            std::fill(r, r + dim_, 0.0);
            r[0] = 1.0;
            continue;
        }
        for (std::size_t j = 0; j < dim_; ++j) r[j] /= n;
    }
}

void EmbeddingTable::save(const std::string& path) const {
    ordered_json header;
    header["dim"] = dim_;
    header["count"] = ids_.size();
    header["ids"] = ids_;
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write '" + path + "'");
    out << header.dump() << '\n';
    std::vector<float> buf(dim_);
    for (std::size_t i = 0; i < rows_.rows; ++i) {
        const double* r = rows_.row(i);
        for (std::size_t j = 0; j < dim_; ++j) buf[j] = static_cast<float>(r[j]);
        out.write(reinterpret_cast<const char*>(buf.data()),
                  static_cast<std::streamsize>(sizeof(float) * dim_));
    }
}

EmbeddingTable EmbeddingTable::load(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open '" + path + "'");
    std::string line;
    if (!std::getline(in, line)) throw BadCheckpoint("'" + path + "': missing header");
    ordered_json header;
    try {
        header = ordered_json::parse(line);
    } catch (const std::exception& e) {
        throw BadCheckpoint("'" + path + "': " + e.what());
    }
    EmbeddingTable t;
    t.dim_ = header.at("dim").get<std::size_t>();
    t.ids_ = header.at("ids").get<std::vector<std::string>>();
    if (t.ids_.size() != header.at("count").get<std::size_t>())
        throw BadCheckpoint("'" + path + "': count mismatch");
    if (!std::is_sorted(t.ids_.begin(), t.ids_.end()))
        throw BadCheckpoint("'" + path + "': ids not sorted");
    for (std::size_t i = 0; i < t.ids_.size(); ++i) t.index_.emplace(t.ids_[i], i);
    t.rows_ = Mat(t.ids_.size(), t.dim_);
    std::vector<float> buf(t.dim_);
    for (std::size_t i = 0; i < t.rows_.rows; ++i) {
        in.read(reinterpret_cast<char*>(buf.data()),
                static_cast<std::streamsize>(sizeof(float) * t.dim_));
        if (!in) throw BadCheckpoint("'" + path + "': truncated rows");
        double* r = t.rows_.row(i);
        for (std::size_t j = 0; j < t.dim_; ++j) r[j] = static_cast<double>(buf[j]);
    }
    t.renormalize(); // f32 round-trip leaves rows fractionally off unit
    return t;
}

} // namespace kml
