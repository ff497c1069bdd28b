#include "mgb/graph_io.hpp"

#include <cstring>
#include <fstream>
#include <sstream>
#include <vector>

namespace mgb {

namespace {

constexpr char kFeatureMagic[4] = {'M', 'G', 'B', 'F'};

[[noreturn]] void fail(const std::string& path, size_t line, const std::string& what) {
    throw IngestError(path + ":" + std::to_string(line) + ": " + what);
}

std::vector<std::string> split_tabs(const std::string& line) {
    std::vector<std::string> out;
    size_t start = 0;
    while (true) {
        const size_t pos = line.find('\t', start);
        if (pos == std::string::npos) {
            out.push_back(line.substr(start));
            return out;
        }
        out.push_back(line.substr(start, pos - start));
        start = pos + 1;
    }
}

int64_t parse_int(const std::string& s, const std::string& path, size_t line) {
    try {
        size_t used = 0;
        const int64_t v = std::stoll(s, &used);
        if (used != s.size()) fail(path, line, "trailing characters in integer '" + s + "'");
        return v;
    } catch (const IngestError&) {
        throw;
    } catch (const std::exception&) {
        fail(path, line, "expected integer, got '" + s + "'");
    }
}

void write_u32(std::ostream& os, uint32_t x) {
    unsigned char b[4] = {static_cast<unsigned char>(x), static_cast<unsigned char>(x >> 8),
                          static_cast<unsigned char>(x >> 16), static_cast<unsigned char>(x >> 24)};
    os.write(reinterpret_cast<const char*>(b), 4);
}

uint32_t read_u32(std::istream& is) {
    unsigned char b[4];
    is.read(reinterpret_cast<char*>(b), 4);
    return static_cast<uint32_t>(b[0]) | (static_cast<uint32_t>(b[1]) << 8) |
           (static_cast<uint32_t>(b[2]) << 16) | (static_cast<uint32_t>(b[3]) << 24);
}

}  // namespace

SocialGraph load_graph(const std::string& nodes_path, const std::string& edges_path,
                       const std::string& features_path) {
    std::ifstream nf(nodes_path);
    if (!nf) throw IngestError("cannot open nodes file '" + nodes_path + "'");

    std::vector<NodeKind> kinds;
    std::vector<int32_t> labels_by_node;
    std::string line;
    size_t lineno = 0;
    int32_t max_label = -1;
    while (std::getline(nf, line)) {
        ++lineno;
        if (line.empty()) continue;
        const auto parts = split_tabs(line);
        if (parts.size() < 2) fail(nodes_path, lineno, "expected id<TAB>kind");
        const int64_t id = parse_int(parts[0], nodes_path, lineno);
        if (id != static_cast<int64_t>(kinds.size())) {
            fail(nodes_path, lineno, "node ids must be dense and ascending from 0");
        }
        if (parts[1] == "doc" || parts[1] == "document") {
            if (parts.size() < 3 || parts[2].empty()) fail(nodes_path, lineno, "document without label");
            const int64_t y = parse_int(parts[2], nodes_path, lineno);
            if (y < 0) fail(nodes_path, lineno, "negative label");
            kinds.push_back(NodeKind::Document);
            labels_by_node.push_back(static_cast<int32_t>(y));
            max_label = std::max(max_label, static_cast<int32_t>(y));
        } else if (parts[1] == "user") {
            kinds.push_back(NodeKind::User);
            labels_by_node.push_back(-1);
        } else {
            fail(nodes_path, lineno, "unknown node kind '" + parts[1] + "'");
        }
    }
    if (kinds.empty()) throw IngestError(nodes_path + ": no nodes");
    if (max_label < 1) throw IngestError(nodes_path + ": fewer than 2 document classes");

    std::ifstream ef(edges_path);
    if (!ef) throw IngestError("cannot open edges file '" + edges_path + "'");
    std::vector<std::pair<NodeId, NodeId>> edges;
    lineno = 0;
    while (std::getline(ef, line)) {
        ++lineno;
        if (line.empty()) continue;
        const auto parts = split_tabs(line);
        if (parts.size() != 2) fail(edges_path, lineno, "expected src<TAB>dst");
        const int64_t a = parse_int(parts[0], edges_path, lineno);
        const int64_t b = parse_int(parts[1], edges_path, lineno);
        if (a < 0 || b < 0 || a >= static_cast<int64_t>(kinds.size()) ||
            b >= static_cast<int64_t>(kinds.size())) {
            fail(edges_path, lineno, "edge endpoint out of range");
        }
        if (a == b) fail(edges_path, lineno, "self-edge");
        edges.emplace_back(static_cast<NodeId>(a), static_cast<NodeId>(b));
    }

    Tensor features = load_feature_matrix(features_path);
    std::vector<int32_t> doc_labels;
    for (size_t i = 0; i < kinds.size(); ++i) {
        if (kinds[i] == NodeKind::Document) doc_labels.push_back(labels_by_node[i]);
    }
    try {
        return SocialGraph::build(std::move(kinds), std::move(edges), std::move(features),
                                  std::move(doc_labels), max_label + 1);
    } catch (const ConfigError& e) {
        throw IngestError(std::string("graph construction failed: ") + e.what());
    }
}

void save_graph(const SocialGraph& g, const std::string& nodes_path, const std::string& edges_path,
                const std::string& features_path) {
    std::ofstream nf(nodes_path);
    if (!nf) throw IngestError("cannot write nodes file '" + nodes_path + "'");
    for (NodeId v = 0; v < g.num_nodes(); ++v) {
        if (g.is_doc(v)) {
            nf << v << "\tdoc\t" << g.label_of(v) << "\n";
        } else {
            nf << v << "\tuser\n";
        }
    }
    std::ofstream ef(edges_path);
    if (!ef) throw IngestError("cannot write edges file '" + edges_path + "'");
    for (NodeId v = 0; v < g.num_nodes(); ++v) {
        for (NodeId w : g.neighbors(v)) {
            if (v < w) ef << v << "\t" << w << "\n";
        }
    }
    save_feature_matrix(g.doc_features(), features_path);
}

Tensor load_feature_matrix(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IngestError("cannot open features file '" + path + "'");
    char magic[4];
    f.read(magic, 4);
    if (!f || std::memcmp(magic, kFeatureMagic, 4) != 0) {
        throw IngestError(path + ": bad magic, expected MGBF");
    }
    const uint32_t rows = read_u32(f);
    const uint32_t cols = read_u32(f);
    read_u32(f);  // reserved
    if (!f) throw IngestError(path + ": truncated header");
    Tensor out(static_cast<int64_t>(rows), static_cast<int64_t>(cols));
    std::vector<float> buf(static_cast<size_t>(rows) * cols);
    f.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size() * sizeof(float)));
    if (!f) throw IngestError(path + ": truncated feature matrix");
    for (size_t i = 0; i < buf.size(); ++i) out.v[i] = static_cast<double>(buf[i]);
    return out;
}

void save_feature_matrix(const Tensor& m, const std::string& path) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw IngestError("cannot write features file '" + path + "'");
    f.write(kFeatureMagic, 4);
    write_u32(f, static_cast<uint32_t>(m.rows));
    write_u32(f, static_cast<uint32_t>(m.cols));
    write_u32(f, 0);
    std::vector<float> buf(static_cast<size_t>(m.size()));
    for (size_t i = 0; i < buf.size(); ++i) buf[i] = static_cast<float>(m.v[i]);
    f.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size() * sizeof(float)));
}

}  // namespace mgb
