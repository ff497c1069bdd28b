#pragma once

#include <string>

#include "mgb/graph.hpp"

namespace mgb {

// Line-oriented UTF-8 graph ingestion format:
//   nodes file: id<TAB>kind<TAB>[label]    kind is "doc" or "user"; documents
//                                          require an integer label
//   edges file: src<TAB>dst                symmetrised on ingestion
// Features file: 16-byte header (magic "MGBF", u32 rows, u32 cols, u32
// reserved) followed by a little-endian row-major float32 matrix, rows
// ordered by document id.
//
// Malformed content raises IngestError with the offending line number.
SocialGraph load_graph(const std::string& nodes_path, const std::string& edges_path,
                       const std::string& features_path);

void save_graph(const SocialGraph& g, const std::string& nodes_path, const std::string& edges_path,
                const std::string& features_path);

Tensor load_feature_matrix(const std::string& path);
void save_feature_matrix(const Tensor& m, const std::string& path);

}  // namespace mgb
