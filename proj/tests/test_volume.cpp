#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>

#include "doctest.h"
#include "sliceterp/rng.hpp"
#include "sliceterp/volume.hpp"

using namespace sliceterp;
namespace fs = std::filesystem;

namespace {

Volume make_volume(std::vector<float> voxels, int s, int h, int w) {
    Volume v;
    v.patient_id = "test";
    v.n_slices = s;
    v.height = h;
    v.width = w;
    v.voxels = std::move(voxels);
    return v;
}

std::string temp_dir() {
    auto dir = fs::temp_directory_path() / "sliceterp_volume_tests";
    fs::create_directories(dir);
    return dir.string();
}

std::string read_file(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    return std::string(std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>());
}

}  // namespace

TEST_SUITE_BEGIN("volume");

TEST_CASE("normalize_minmax maps extremes to 0 and 1") {
    auto v = make_volume({2, 6, 2, 6}, 1, 2, 2);
    normalize_minmax(v);
    CHECK(v.voxels == std::vector<float>{0, 1, 0, 1});
}

TEST_CASE("normalize_minmax is the identity on [0,1] volumes with full range") {
    auto v = make_volume({0.0f, 0.25f, 0.5f, 1.0f}, 1, 2, 2);
    auto before = v.voxels;
    normalize_minmax(v);
    CHECK(v.voxels == before);
}

TEST_CASE("normalize_minmax is idempotent") {
    Rng rng(5);
    std::vector<float> vals(64);
    for (auto& x : vals) x = static_cast<float>(rng.uniform(-3, 9));
    auto v = make_volume(vals, 4, 4, 4);
    normalize_minmax(v);
    auto once = v.voxels;
    normalize_minmax(v);
    CHECK(v.voxels == once);
    for (float x : v.voxels) {
        CHECK(x >= 0.0f);
        CHECK(x <= 1.0f);
    }
}

TEST_CASE("normalize_minmax maps constant volume to zeros") {
    auto v = make_volume({3, 3, 3, 3}, 1, 2, 2);
    normalize_minmax(v);
    CHECK(v.voxels == std::vector<float>{0, 0, 0, 0});
}

TEST_CASE("resize_bilinear to same extents is identity") {
    Rng rng(9);
    Slice s;
    s.height = 5;
    s.width = 7;
    s.data.resize(35);
    for (auto& x : s.data) x = static_cast<float>(rng.uniform(0, 1));
    auto out = resize_bilinear(s, 5, 7);
    for (size_t i = 0; i < s.data.size(); ++i)
        CHECK(out.data[i] == doctest::Approx(s.data[i]).epsilon(1e-6));
}

TEST_CASE("resize_bilinear center-aligned upscale values") {
    Slice s;
    s.height = 2;
    s.width = 2;
    s.data = {0, 1, 0, 1};
    auto out = resize_bilinear(s, 2, 4);
    // hand-evaluated from x_src = (j+0.5)*w_src/w_dst - 0.5
    std::vector<float> expect = {0.0f, 0.25f, 0.75f, 1.0f};
    for (int row = 0; row < 2; ++row)
        for (int j = 0; j < 4; ++j)
            CHECK(out.at(row, j) == doctest::Approx(expect[static_cast<size_t>(j)]));
}

TEST_CASE("resize_bilinear keeps constants constant and rejects bad extents") {
    Slice s;
    s.height = 3;
    s.width = 3;
    s.data.assign(9, 0.42f);
    auto out = resize_bilinear(s, 7, 5);
    for (float v : out.data) CHECK(v == doctest::Approx(0.42f));
    CHECK_THROWS_AS(resize_bilinear(s, 0, 5), std::invalid_argument);
}

TEST_CASE("generate_phantom is deterministic per seed") {
    PhantomParams p;
    p.seed = 7;
    auto a = generate_phantom(p, "P0");
    auto b = generate_phantom(p, "P0");
    CHECK(a.voxels == b.voxels);
    p.seed = 8;
    auto c = generate_phantom(p, "P0");
    CHECK(a.voxels != c.voxels);
}

TEST_CASE("generate_phantom degenerate params give all-zero volume") {
    PhantomParams p;
    p.n_blobs = 0;
    p.noise_sigma = 0.0;
    auto v = generate_phantom(p, "P0");
    for (float x : v.voxels) CHECK(x == 0.0f);
}

TEST_CASE("phantom varies more at gap 2 than at gap 1") {
    PhantomParams p;
    p.seed = 7;
    auto v = generate_phantom(p, "P0");
    auto mad = [&](int gap) {
        double acc = 0.0;
        int64_t n = 0;
        for (int s = 0; s + gap < v.n_slices; ++s)
            for (int y = 0; y < v.height; ++y)
                for (int x = 0; x < v.width; ++x) {
                    acc += std::abs(v.at(s, y, x) - v.at(s + gap, y, x));
                    ++n;
                }
        return acc / static_cast<double>(n);
    };
    CHECK(mad(1) < mad(2));
}

TEST_CASE("extract_triplets counts") {
    PhantomParams p;
    p.n_slices = 20;
    p.height = 8;
    p.width = 8;
    auto v = generate_phantom(p, "P0");
    CHECK(extract_triplets(v, 1).size() == 18);
    CHECK(extract_triplets(v, 2).size() == 16);

    p.n_slices = 5;
    auto small = generate_phantom(p, "P1");
    auto t = extract_triplets(small, 2);
    REQUIRE(t.size() == 1);
    CHECK(t[0].slice_index == 2);

    p.n_slices = 4;
    auto tiny = generate_phantom(p, "P2");
    CHECK(extract_triplets(tiny, 2).empty());
}

TEST_CASE("extract_triplets count law over n and k") {
    for (int k : {1, 2, 3})
        for (int n = 2 * k + 1; n <= 64; n += 7) {
            PhantomParams p;
            p.n_slices = n;
            p.height = 4;
            p.width = 4;
            p.n_blobs = 1;
            auto v = generate_phantom(p, "P");
            CHECK(extract_triplets(v, k).size() == static_cast<size_t>(n - 2 * k));
        }
}

TEST_CASE("make_splits 20 patients -> 14/3/3") {
    std::vector<std::string> ids;
    for (int i = 0; i < 20; ++i) ids.push_back("P" + std::to_string(i));
    auto m = make_splits(ids, SplitRatios{}, 7);
    CHECK(m.train.size() == 14);
    CHECK(m.val.size() == 3);
    CHECK(m.test.size() == 3);

    auto m2 = make_splits(ids, SplitRatios{}, 7);
    CHECK(m.train == m2.train);
    CHECK(m.val == m2.val);
    CHECK(m.test == m2.test);
}

TEST_CASE("make_splits disjointness and completeness across 100 seeds") {
    std::vector<std::string> ids;
    for (int i = 0; i < 17; ++i) ids.push_back("P" + std::to_string(i));
    for (uint64_t seed = 0; seed < 100; ++seed) {
        auto m = make_splits(ids, SplitRatios{}, seed);
        std::set<std::string> all;
        for (const auto& s : m.train) all.insert(s);
        for (const auto& s : m.val) all.insert(s);
        for (const auto& s : m.test) all.insert(s);
        CHECK(all.size() == ids.size());
        CHECK(m.train.size() + m.val.size() + m.test.size() == ids.size());
    }
}

TEST_CASE("make_splits rejects invalid inputs") {
    CHECK_THROWS_AS(make_splits({"a", "b"}, SplitRatios{}, 1), std::invalid_argument);
    CHECK_THROWS_AS(make_splits({"a", "b", "c"}, SplitRatios{0.5, 0.1, 0.1}, 1),
                    std::invalid_argument);
}

TEST_CASE("svol round-trip is bit-identical") {
    PhantomParams p;
    p.height = 16;
    p.width = 12;
    p.n_slices = 6;
    auto v = generate_phantom(p, "patient-42");
    v.in_plane_mm = 0.5f;
    v.slice_mm = 1.5f;
    auto path = temp_dir() + "/roundtrip.svol";
    save_volume(v, path);
    auto w = load_volume(path);
    CHECK(w.patient_id == v.patient_id);
    CHECK(w.height == v.height);
    CHECK(w.width == v.width);
    CHECK(w.n_slices == v.n_slices);
    CHECK(w.in_plane_mm == v.in_plane_mm);
    CHECK(w.slice_mm == v.slice_mm);
    CHECK(w.voxels == v.voxels);

    // repeated save is byte-identical
    auto path2 = temp_dir() + "/roundtrip2.svol";
    save_volume(v, path2);
    CHECK(read_file(path) == read_file(path2));
}

TEST_CASE("svol corrupt magic names the offset") {
    auto path = temp_dir() + "/badmagic.svol";
    std::ofstream(path, std::ios::binary) << "SVOX1 {}\n";
    try {
        load_volume(path);
        FAIL("expected BadMagicError");
    } catch (const BadMagicError& e) {
        CHECK(std::string(e.what()).find("offset 3") != std::string::npos);
    }
}

TEST_CASE("svol header/payload mismatch is a truncation error") {
    PhantomParams p;
    p.height = 8;
    p.width = 8;
    p.n_slices = 4;
    auto v = generate_phantom(p, "t");
    auto path = temp_dir() + "/trunc.svol";
    save_volume(v, path);
    auto bytes = read_file(path);
    std::ofstream(path, std::ios::binary) << bytes.substr(0, bytes.size() - 17);
    CHECK_THROWS_AS(load_volume(path), TruncatedPayloadError);
}

TEST_CASE("svol extent overflow is rejected") {
    auto path = temp_dir() + "/overflow.svol";
    std::ofstream(path, std::ios::binary)
        << "SVOL1 {\"patient_id\":\"x\",\"height\":100000,\"width\":100000,\"slices\":100000,"
           "\"in_plane_mm\":0.5,\"slice_mm\":1.5}\n";
    CHECK_THROWS_AS(load_volume(path), ExtentOverflowError);
}

TEST_CASE("build_dataset filters volumes below the slice threshold") {
    auto dir = temp_dir() + "/dataset";
    fs::remove_all(dir);
    fs::create_directories(dir);
    for (int i = 0; i < 6; ++i) {
        PhantomParams p;
        p.height = 8;
        p.width = 8;
        p.n_slices = (i == 5) ? 10 : 24;  // one volume fails quality control
        p.seed = 100 + static_cast<uint64_t>(i);
        auto v = generate_phantom(p, "P" + std::to_string(i));
        char name[32];
        std::snprintf(name, sizeof(name), "p%02d.svol", i);
        save_volume(v, dir + "/" + name);
    }
    auto ds = build_dataset(dir, 1, SplitRatios{}, 7, 20);
    CHECK(ds.n_volumes_loaded == 5);
    CHECK(ds.n_volumes_skipped == 1);
    CHECK(ds.train.size() + ds.val.size() + ds.test.size() == 5 * 22);

    // patient-level separation: no patient id in two splits
    std::set<std::string> train_ids, val_ids, test_ids;
    for (const auto& t : ds.train) train_ids.insert(t.patient_id);
    for (const auto& t : ds.val) val_ids.insert(t.patient_id);
    for (const auto& t : ds.test) test_ids.insert(t.patient_id);
    for (const auto& id : train_ids) {
        CHECK(val_ids.count(id) == 0);
        CHECK(test_ids.count(id) == 0);
    }
}

TEST_SUITE_END();
