#pragma once

#include <map>
#include <string>
#include <vector>

#include "kml/linalg.hpp"
#include "kml/rng.hpp"

namespace kml {

enum class EmbeddingMode { Frozen, Trainable, FileLoadedThenTrainable };

const char* to_string(EmbeddingMode m);
EmbeddingMode embedding_mode_from_string(const std::string& s);

// Entity id -> unit row. Ids are stored sorted so iteration order, row
// indices and serialized bytes are all deterministic. Rows are re-normalized
// after every optimizer step; unit() never returns a non-unit vector.
class EmbeddingTable {
public:
    EmbeddingTable() = default;

    // gaussian rows, normalized; ids are sorted internally
    static EmbeddingTable random(std::vector<std::string> ids, std::size_t dim, Rng& rng);

    std::size_t size() const { return ids_.size(); }
    std::size_t dim() const { return dim_; }
    const std::vector<std::string>& ids() const { return ids_; }

    bool has(const std::string& id) const { return index_.count(id) > 0; }
    std::size_t index_of(const std::string& id) const; // throws UnknownCategory

    const double* row(std::size_t idx) const { return rows_.row(idx); }
    Vec unit(const std::string& id) const;
    Vec unit(std::size_t idx) const;

    Mat& rows() { return rows_; }
    const Mat& rows() const { return rows_; }

    void renormalize();

    // header line {"dim","count","ids"} + '\n' + little-endian f32 rows
    void save(const std::string& path) const;
    static EmbeddingTable load(const std::string& path);

private:
    std::size_t dim_ = 0;
    std::vector<std::string> ids_;
    std::map<std::string, std::size_t> index_;
    Mat rows_;
};

} // namespace kml
