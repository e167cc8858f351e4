#include "kml/checkpoint.hpp"

#include <bit>
#include <filesystem>
#include <fstream>

#include <nlohmann/json.hpp>

#include "kml/errors.hpp"
#include "kml/version.hpp"

namespace kml {

namespace fs = std::filesystem;
using ordered_json = nlohmann::ordered_json;

// raw f32 blobs are written in host byte order; the format says little-endian
static_assert(std::endian::native == std::endian::little);

namespace {

void write_f32(std::ofstream& out, const double* src, std::size_t n) {
    std::vector<float> buf(n);
    for (std::size_t i = 0; i < n; ++i) buf[i] = static_cast<float>(src[i]);
    out.write(reinterpret_cast<const char*>(buf.data()),
              static_cast<std::streamsize>(sizeof(float) * n));
}

void read_f32(std::ifstream& in, double* dst, std::size_t n, const std::string& path) {
    std::vector<float> buf(n);
    in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(sizeof(float) * n));
    if (!in) throw BadCheckpoint("'" + path + "': truncated parameter block");
    for (std::size_t i = 0; i < n; ++i) dst[i] = static_cast<double>(buf[i]);
}

int version_major(const std::string& v) {
    // "kml <major>.<minor>.<patch>"
    auto sp = v.find(' ');
    if (sp == std::string::npos) return -1;
    auto dot = v.find('.', sp);
    if (dot == std::string::npos) return -1;
    try {
        return std::stoi(v.substr(sp + 1, dot - sp - 1));
    } catch (...) {
        return -1;
    }
}

} // namespace

void save_module(const std::string& path, const RelationModule& m, std::uint64_t seed) {
    ordered_json header;
    header["relation"] = m.relation;
    header["d_in"] = m.d_in;
    header["d_hidden"] = m.d_hidden;
    header["d_out"] = m.d_out;
    header["activation"] = "tanh";
    header["seed"] = seed;
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write '" + path + "'");
    out << header.dump() << '\n';
    write_f32(out, m.w1.a.data(), m.w1.size());
    write_f32(out, m.b1.data(), m.b1.size());
    write_f32(out, m.w2.a.data(), m.w2.size());
    write_f32(out, m.b2.data(), m.b2.size());
}

RelationModule load_module(const std::string& path) {
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
    RelationModule m;
    try {
        m.relation = header.at("relation").get<std::string>();
        m.d_in = header.at("d_in").get<std::size_t>();
        m.d_hidden = header.at("d_hidden").get<std::size_t>();
        m.d_out = header.at("d_out").get<std::size_t>();
        if (header.at("activation").get<std::string>() != "tanh")
            throw BadCheckpoint("'" + path + "': unsupported activation");
    } catch (const BadCheckpoint&) {
        throw;
    } catch (const std::exception& e) {
        throw BadCheckpoint("'" + path + "': " + e.what());
    }
    m.w1 = Mat(m.d_hidden, m.d_in);
    m.b1 = Vec(m.d_hidden, 0.0);
    m.w2 = Mat(m.d_out, m.d_hidden);
    m.b2 = Vec(m.d_out, 0.0);
    read_f32(in, m.w1.a.data(), m.w1.size(), path);
    read_f32(in, m.b1.data(), m.b1.size(), path);
    read_f32(in, m.w2.a.data(), m.w2.size(), path);
    read_f32(in, m.b2.data(), m.b2.size(), path);
    return m;
}

void save_checkpoint(const std::string& dir, const ModuleSet& modules,
                     const EmbeddingTable& embeddings, std::uint64_t seed) {
    fs::create_directories(dir);
    ordered_json manifest;
    manifest["version"] = kVersion;
    manifest["dim"] = modules.dim;
    manifest["hidden"] = modules.hidden;
    manifest["seed"] = seed;
    manifest["embedding_file"] = "embeddings.bin";
    manifest["modules"] = ordered_json::array();
    for (const auto& [rel, m] : modules.by_relation) {
        const std::string file = rel + ".km";
        save_module((fs::path(dir) / file).string(), m, seed);
        ordered_json entry;
        entry["relation"] = rel;
        entry["file"] = file;
        manifest["modules"].push_back(entry);
    }
    embeddings.save((fs::path(dir) / "embeddings.bin").string());
    std::ofstream out(fs::path(dir) / "manifest.json");
    if (!out) throw IoError("cannot write manifest in '" + dir + "'");
    out << manifest.dump(2) << '\n';
}

Checkpoint load_checkpoint(const std::string& dir) {
    const fs::path mpath = fs::path(dir) / "manifest.json";
    std::ifstream in(mpath);
    if (!in) throw IoError("cannot open '" + mpath.string() + "'");
    ordered_json manifest;
    try {
        in >> manifest;
    } catch (const std::exception& e) {
        throw BadCheckpoint("'" + mpath.string() + "': " + e.what());
    }
    Checkpoint ck;
    try {
        ck.version = manifest.at("version").get<std::string>();
        ck.seed = manifest.at("seed").get<std::uint64_t>();
        ck.modules.dim = manifest.at("dim").get<std::size_t>();
        ck.modules.hidden = manifest.at("hidden").get<std::size_t>();
        if (version_major(ck.version) != kVersionMajor)
            throw BadCheckpoint("version '" + ck.version + "' incompatible with " + kVersion);
        for (const auto& entry : manifest.at("modules")) {
            const std::string rel = entry.at("relation").get<std::string>();
            const std::string file = entry.at("file").get<std::string>();
            RelationModule m = load_module((fs::path(dir) / file).string());
            if (m.relation != rel)
                throw BadCheckpoint("module file '" + file + "' holds '" + m.relation + "'");
            if (m.d_in != ck.modules.dim || m.d_hidden != ck.modules.hidden)
                throw BadCheckpoint("module '" + rel + "' dims disagree with manifest");
            ck.modules.by_relation.emplace(rel, std::move(m));
        }
        ck.embeddings =
            EmbeddingTable::load((fs::path(dir) / manifest.at("embedding_file").get<std::string>()).string());
    } catch (const BadCheckpoint&) {
        throw;
    } catch (const IoError&) {
        throw;
    } catch (const std::exception& e) {
        throw BadCheckpoint("'" + mpath.string() + "': " + e.what());
    }
    if (ck.embeddings.dim() != ck.modules.dim)
        throw BadCheckpoint("embedding dim disagrees with manifest");
    return ck;
}

} // namespace kml
