#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "mea/io.hpp"
#include "mea/rng.hpp"

using namespace mea;

namespace {

struct TempDir {
    std::filesystem::path path;
    TempDir() {
        path = std::filesystem::temp_directory_path() /
               ("mea-io-test-" + std::to_string(std::rand()));
        std::filesystem::create_directories(path);
    }
    ~TempDir() { std::filesystem::remove_all(path); }
    std::string file(const std::string& name) const { return (path / name).string(); }
};

std::vector<char> slurp(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    return {std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>()};
}

Field32 random_field32(int n, Rng& rng) {
    Field32 f(n);
    for (std::size_t i = 0; i < f.size(); ++i) f.data()[i] = float(rng.uniform());
    return f;
}

}  // namespace

TEST_CASE("MEAF round trip is float32-exact and byte-stable") {
    TempDir dir;
    Rng rng(5);
    Field f(33);
    for (std::size_t i = 0; i < f.size(); ++i) f.data()[i] = rng.uniform(-2.0, 2.0);

    const auto path = dir.file("field.meaf");
    io::write_meaf(path, f);
    const Field g = io::read_meaf(path);
    REQUIRE(g.n() == 33);
    for (std::size_t i = 0; i < f.size(); ++i)
        CHECK(g.data()[i] == double(float(f.data()[i])));

    const auto path2 = dir.file("field2.meaf");
    io::write_meaf(path2, g);
    CHECK(slurp(path) == slurp(path2));

    // header: magic, version, n
    const auto bytes = slurp(path);
    REQUIRE(bytes.size() == 4 + 4 + 4 + 33 * 33 * 4);
    CHECK(std::string(bytes.data(), 4) == "MEAF");
}

TEST_CASE("MEAF rejects truncated and foreign files") {
    TempDir dir;
    const auto path = dir.file("bad.meaf");
    std::ofstream(path, std::ios::binary) << "MEAFxxxx";
    CHECK_THROWS(io::read_meaf(path));
    const auto path2 = dir.file("other.bin");
    std::ofstream(path2, std::ios::binary) << "NOPE1234";
    CHECK_THROWS(io::read_meaf(path2));
    CHECK_THROWS(io::read_meaf(dir.file("missing.meaf")));
}

TEST_CASE("MEAD round trip with mixed labeled/unlabeled samples") {
    TempDir dir;
    Rng rng(7);
    io::Dataset ds;
    ds.n = 21;
    for (int s = 0; s < 5; ++s) {
        io::DatasetEntry e;
        e.k = random_field32(21, rng);
        if (s % 2 == 0) {
            e.has_T = true;
            e.T = random_field32(21, rng);
        }
        ds.entries.push_back(std::move(e));
    }
    const auto path = dir.file("data.mead");
    io::write_mead(path, ds);
    const io::Dataset rt = io::read_mead(path);
    REQUIRE(rt.size() == 5);
    CHECK(rt.n == 21);
    CHECK(rt.labeled_count() == 3);
    CHECK(io::dataset_hash(rt) == io::dataset_hash(ds));

    const auto path2 = dir.file("data2.mead");
    io::write_mead(path2, rt);
    CHECK(slurp(path) == slurp(path2));
}

TEST_CASE("manifest round trip preserves keys") {
    TempDir dir;
    const auto path = dir.file("data.mead.manifest");
    io::write_manifest(path, {{"seed", "42"}, {"k_in", "0.1"}, {"discarded", "2"}});
    const auto m = io::read_manifest(path);
    CHECK(m.at("seed") == "42");
    CHECK(m.at("k_in") == "0.1");
    CHECK(m.at("discarded") == "2");
}

TEST_CASE("MEAC round trip keeps tensors, kind tag and metadata") {
    TempDir dir;
    Rng rng(11);
    io::Checkpoint ckpt;
    ckpt.model_kind = "mea1-v1";
    io::TensorBlob t1;
    t1.name = "enc1.w";
    t1.dims = {8, 1, 3, 3};
    t1.data.resize(72);
    for (auto& v : t1.data) v = float(rng.normal());
    ckpt.tensors.push_back(t1);
    io::TensorBlob t2;
    t2.name = "enc1.b";
    t2.dims = {8};
    t2.data.assign(8, 0.25f);
    ckpt.tensors.push_back(t2);
    ckpt.metadata = {{"epoch", "100"}, {"lr", "0.0001"}, {"seed", "3"}, {"dataset", "abc123"}};

    const auto path = dir.file("model.meac");
    io::write_meac(path, ckpt);
    const io::Checkpoint rt = io::read_meac(path);
    CHECK(rt.model_kind == "mea1-v1");
    REQUIRE(rt.tensors.size() == 2);
    CHECK(rt.find("enc1.w") != nullptr);
    CHECK(rt.find("enc1.w")->dims == std::vector<std::uint32_t>{8, 1, 3, 3});
    CHECK(rt.find("enc1.w")->data == t1.data);
    CHECK(rt.find("nonexistent") == nullptr);
    CHECK(rt.meta("epoch") == "100");
    CHECK(rt.meta("missing", "fallback") == "fallback");

    const auto path2 = dir.file("model2.meac");
    io::write_meac(path2, rt);
    CHECK(slurp(path) == slurp(path2));
}

TEST_CASE("field hash differs for different fields and matches for equal ones") {
    Rng rng(13);
    const Field32 a = random_field32(11, rng);
    Field32 b = a;
    CHECK(io::field_hash(a) == io::field_hash(b));
    b.data()[17] += 0.5f;
    CHECK(io::field_hash(a) != io::field_hash(b));
}
