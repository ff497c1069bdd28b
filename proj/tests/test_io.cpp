#include <cstdio>
#include <filesystem>
#include <fstream>

#include "doctest.h"
#include "mgb/graph_io.hpp"
#include "mgb/model.hpp"

using namespace mgb;
namespace fs = std::filesystem;

namespace {

struct TempDir {
    fs::path path;
    TempDir() {
        path = fs::temp_directory_path() / ("mgb_io_test_" + std::to_string(::getpid()) + "_" +
                                            std::to_string(counter++));
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
    std::string file(const std::string& name) const { return (path / name).string(); }
    static inline int counter = 0;
};

void write_file(const std::string& path, const std::string& content) {
    std::ofstream f(path);
    f << content;
}

std::string read_bytes(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    return std::string(std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>());
}

}  // namespace

TEST_CASE("graph files round trip") {
    TempDir dir;
    Tensor feats(2, 3);
    for (int64_t i = 0; i < feats.size(); ++i) feats.v[static_cast<size_t>(i)] = 0.25 * static_cast<double>(i);
    const SocialGraph g = SocialGraph::build({NodeKind::Document, NodeKind::User, NodeKind::Document},
                                             {{0, 1}, {1, 2}}, feats, {0, 1}, 2);
    save_graph(g, dir.file("nodes.tsv"), dir.file("edges.tsv"), dir.file("feat.mgbf"));
    const SocialGraph h = load_graph(dir.file("nodes.tsv"), dir.file("edges.tsv"), dir.file("feat.mgbf"));
    CHECK(h.num_nodes() == 3);
    CHECK(h.num_docs() == 2);
    CHECK(h.num_classes() == 2);
    CHECK(h.label_of(0) == 0);
    CHECK(h.label_of(2) == 1);
    CHECK(h.doc_features().rows == 2);
    for (int64_t i = 0; i < feats.size(); ++i) {
        CHECK(h.doc_features().v[static_cast<size_t>(i)] == feats.v[static_cast<size_t>(i)]);
    }
}

TEST_CASE("ingestion errors carry line numbers") {
    TempDir dir;
    write_file(dir.file("feat.mgbf"), "");
    SUBCASE("bad kind") {
        write_file(dir.file("nodes.tsv"), "0\tdoc\t0\n1\tgremlin\n");
        write_file(dir.file("edges.tsv"), "0\t1\n");
        try {
            load_graph(dir.file("nodes.tsv"), dir.file("edges.tsv"), dir.file("feat.mgbf"));
            FAIL("expected IngestError");
        } catch (const IngestError& e) {
            CHECK(std::string(e.what()).find(":2:") != std::string::npos);
        }
    }
    SUBCASE("document without label") {
        write_file(dir.file("nodes.tsv"), "0\tdoc\n");
        write_file(dir.file("edges.tsv"), "");
        CHECK_THROWS_AS(load_graph(dir.file("nodes.tsv"), dir.file("edges.tsv"), dir.file("feat.mgbf")),
                        IngestError);
    }
    SUBCASE("self edge line is rejected") {
        write_file(dir.file("nodes.tsv"), "0\tdoc\t0\n1\tuser\n2\tdoc\t1\n");
        write_file(dir.file("edges.tsv"), "0\t1\n1\t1\n");
        try {
            load_graph(dir.file("nodes.tsv"), dir.file("edges.tsv"), dir.file("feat.mgbf"));
            FAIL("expected IngestError");
        } catch (const IngestError& e) {
            CHECK(std::string(e.what()).find(":2:") != std::string::npos);
        }
    }
    SUBCASE("non-dense node ids are rejected") {
        write_file(dir.file("nodes.tsv"), "0\tdoc\t0\n5\tuser\n");
        write_file(dir.file("edges.tsv"), "");
        CHECK_THROWS_AS(load_graph(dir.file("nodes.tsv"), dir.file("edges.tsv"), dir.file("feat.mgbf")),
                        IngestError);
    }
}

TEST_CASE("feature matrix format") {
    TempDir dir;
    SUBCASE("header magic is checked") {
        write_file(dir.file("feat.mgbf"), "NOPExxxxxxxxxxxxxxxx");
        CHECK_THROWS_AS(load_feature_matrix(dir.file("feat.mgbf")), IngestError);
    }
    SUBCASE("byte-identical save for identical input") {
        Tensor m(3, 4);
        for (int64_t i = 0; i < m.size(); ++i) m.v[static_cast<size_t>(i)] = std::sin(static_cast<double>(i));
        save_feature_matrix(m, dir.file("a.mgbf"));
        save_feature_matrix(m, dir.file("b.mgbf"));
        CHECK(read_bytes(dir.file("a.mgbf")) == read_bytes(dir.file("b.mgbf")));
        const Tensor r = load_feature_matrix(dir.file("a.mgbf"));
        CHECK(r.rows == 3);
        CHECK(r.cols == 4);
        // float32 storage: values equal after a float round trip
        for (int64_t i = 0; i < m.size(); ++i) {
            CHECK(r.v[static_cast<size_t>(i)] ==
                  static_cast<double>(static_cast<float>(m.v[static_cast<size_t>(i)])));
        }
    }
    SUBCASE("truncated matrix detected") {
        Tensor m(2, 2);
        save_feature_matrix(m, dir.file("t.mgbf"));
        std::string bytes = read_bytes(dir.file("t.mgbf"));
        bytes.resize(bytes.size() - 3);
        std::ofstream f(dir.file("t.mgbf"), std::ios::binary);
        f << bytes;
        f.close();
        CHECK_THROWS_AS(load_feature_matrix(dir.file("t.mgbf")), IngestError);
    }
}

TEST_CASE("checkpoints round trip bit-exactly") {
    TempDir dir;
    ModelConfig cfg;
    cfg.input_dim = 7;
    cfg.head_dim = 5;
    cfg.n_heads = 2;
    cfg.mlp_dim = 4;
    cfg.num_classes = 3;
    const ModelState a = init_model(cfg, true, 321);
    save_checkpoint(a, dir.file("a.mgbc"));
    const ModelState b = load_checkpoint(dir.file("a.mgbc"));
    CHECK(b.cfg.input_dim == 7);
    CHECK(b.cfg.num_classes == 3);
    CHECK(b.has_head);
    bool identical = true;
    a.for_each_param([&](const std::string& name, const Tensor& t) {
        b.for_each_param([&](const std::string& n2, const Tensor& t2) {
            if (n2 != name) return;
            for (int64_t i = 0; i < t.size(); ++i) {
                if (t.v[static_cast<size_t>(i)] != t2.v[static_cast<size_t>(i)]) identical = false;
            }
        });
    });
    CHECK(identical);
    // byte-identical re-serialisation
    save_checkpoint(b, dir.file("b.mgbc"));
    CHECK(read_bytes(dir.file("a.mgbc")) == read_bytes(dir.file("b.mgbc")));

    SUBCASE("headless states round trip too") {
        const ModelState h = init_model(cfg, false, 99);
        save_checkpoint(h, dir.file("h.mgbc"));
        const ModelState r = load_checkpoint(dir.file("h.mgbc"));
        CHECK_FALSE(r.has_head);
    }
    SUBCASE("corrupt magic is rejected") {
        write_file(dir.file("bad.mgbc"), "WHAT");
        CHECK_THROWS_AS(load_checkpoint(dir.file("bad.mgbc")), IngestError);
    }
}

TEST_CASE("episode manifests are line-delimited json") {
    TempDir dir;
    std::vector<Episode> eps(2);
    eps[0].index = 0;
    eps[0].support.anchor = 4;
    eps[0].support.radius = 2;
    eps[0].support.nodes = {1, 2, 4};
    eps[0].unmasked = {{1}, {2}};
    eps[0].query.nodes = {1, 3};
    eps[0].query.targets = {3};
    eps[1].index = 1;
    eps[1].support.nodes = {0};
    write_episode_manifest(eps, dir.file("eps.jsonl"));
    std::ifstream f(dir.file("eps.jsonl"));
    std::string line;
    int lines = 0;
    while (std::getline(f, line)) {
        if (!line.empty()) ++lines;
    }
    CHECK(lines == 2);
}
