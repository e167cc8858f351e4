#pragma once

#include <cstdint>
#include <string>

#include "kml/embedding.hpp"
#include "kml/relation_module.hpp"

namespace kml {

// On-disk layout of a trained run, all under one directory:
//   manifest.json    version, dims, seed, module list, embedding file
//   embeddings.bin   EmbeddingTable format
//   <RELATION>.km    one file per module: a single-line JSON header
//                    {relation, d_in, d_hidden, d_out, activation, seed}
//                    followed by raw little-endian f32 W1, b1, W2, b2
//
// Parameters are serialized as f32 and promoted back to f64 on load.
// Loading rejects manifests whose version major differs from ours.

struct Checkpoint {
    ModuleSet modules;
    EmbeddingTable embeddings;
    std::uint64_t seed = 0;
    std::string version;
};

void save_module(const std::string& path, const RelationModule& m, std::uint64_t seed);
RelationModule load_module(const std::string& path);

void save_checkpoint(const std::string& dir, const ModuleSet& modules,
                     const EmbeddingTable& embeddings, std::uint64_t seed);
Checkpoint load_checkpoint(const std::string& dir); // throws BadCheckpoint

} // namespace kml
