#include <catch2/catch_amalgamated.hpp>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <random>

#include "stenoseg/data.hpp"

using namespace stenoseg;
namespace fs = std::filesystem;

namespace {

// Independent oracle: per-pixel crossing-number point-in-polygon test.
bool pnpoly(double px, double py, const std::vector<double>& poly) {
    const std::size_t n = poly.size() / 2;
    bool in = false;
    for (std::size_t i = 0, k = n - 1; i < n; k = i++) {
        const double xi = poly[2 * i], yi = poly[2 * i + 1];
        const double xk = poly[2 * k], yk = poly[2 * k + 1];
        if (((yi > py) != (yk > py)) && (px < (xk - xi) * (py - yi) / (yk - yi) + xi)) in = !in;
    }
    return in;
}

std::vector<std::uint8_t> brute_force_mask(const std::vector<double>& poly, std::size_t H,
                                           std::size_t W) {
    std::vector<std::uint8_t> m(H * W, 0);
    for (std::size_t r = 0; r < H; ++r)
        for (std::size_t c = 0; c < W; ++c)
            m[r * W + c] = pnpoly(double(c) + 0.5, double(r) + 0.5, poly) ? 1 : 0;
    return m;
}

fs::path tmpdir() {
    auto p = fs::temp_directory_path() / "stenoseg_data_test";
    fs::create_directories(p);
    return p;
}

void write_file(const fs::path& p, const std::string& content) {
    std::ofstream out(p);
    out << content;
}

}  // namespace

TEST_CASE("annotation loading: minimal valid document") {
    auto p = tmpdir() / "ok.json";
    write_file(p, R"({
      "images": [{"id": 1, "file_name": "a.pgm", "width": 64, "height": 64}],
      "annotations": [{"id": 10, "image_id": 1, "category_id": 26,
                       "segmentation": [[4.0,4.0, 20.0,6.0, 8.0,18.0]]}],
      "categories": [{"id": 26, "name": "stenosis"}]
    })");
    auto set = load_annotations(p.string());
    REQUIRE(set.images.size() == 1);
    REQUIRE(set.annotations.size() == 1);
    REQUIRE(set.categories.size() == 1);
    REQUIRE(set.annotations[0].segmentation[0].size() == 6);
    REQUIRE(set.annotations_for(1).size() == 1);
}

TEST_CASE("annotation loading: distinct error kinds") {
    SECTION("parse failure") {
        auto p = tmpdir() / "broken.json";
        write_file(p, "{ not json");
        REQUIRE_THROWS_AS(load_annotations(p.string()), AnnotationParseError);
    }
    SECTION("dangling image id, named in the message") {
        auto p = tmpdir() / "dangling.json";
        write_file(p, R"({
          "images": [{"id": 1, "file_name": "a.pgm", "width": 8, "height": 8}],
          "annotations": [{"id": 7, "image_id": 999, "category_id": 1,
                           "segmentation": [[0.0,0.0, 4.0,0.0, 0.0,4.0]]}]
        })");
        try {
            load_annotations(p.string());
            FAIL("expected DanglingReferenceError");
        } catch (const DanglingReferenceError& e) {
            REQUIRE(std::string(e.what()).find("999") != std::string::npos);
        }
    }
    SECTION("odd-length polygon") {
        auto p = tmpdir() / "odd.json";
        write_file(p, R"({
          "images": [{"id": 1, "file_name": "a.pgm", "width": 8, "height": 8}],
          "annotations": [{"id": 7, "image_id": 1, "category_id": 1,
                           "segmentation": [[0.0,0.0, 4.0,0.0, 0.0]]}]
        })");
        REQUIRE_THROWS_AS(load_annotations(p.string()), BadPolygonError);
    }
}

TEST_CASE("rasterization: axis-aligned rectangle covers exactly 50 pixels") {
    std::vector<double> rect{10, 10, 20, 10, 20, 15, 10, 15};
    auto m = rasterize_polygon(rect, 32, 32);
    std::size_t count = 0;
    for (auto v : m) count += v;
    REQUIRE(count == 50);
    // columns 10..19 x rows 10..14
    for (std::size_t r = 10; r < 15; ++r)
        for (std::size_t c = 10; c < 20; ++c) REQUIRE(m[r * 32 + c] == 1);
}

TEST_CASE("rasterization: degenerate polygon yields empty mask and a warning") {
    std::vector<double> line{2, 2, 8, 8, 5, 5};
    std::vector<std::string> warnings;
    auto m = rasterize_polygon(line, 16, 16, &warnings);
    for (auto v : m) REQUIRE(v == 0);
    REQUIRE(warnings.size() == 1);
}

TEST_CASE("rasterization: rejects malformed polygons") {
    REQUIRE_THROWS_AS(rasterize_polygon({0, 0, 1, 1}, 8, 8), BadPolygonError);
    REQUIRE_THROWS_AS(rasterize_polygon({0, 0, 1, 1, 2, 2, 3}, 8, 8), BadPolygonError);
}

TEST_CASE("rasterization agrees with the brute-force oracle on 100 random polygons") {
    std::mt19937_64 rng(71);
    std::uniform_real_distribution<double> coord{0.0, 64.0};
    std::uniform_int_distribution<std::size_t> vn{3, 9};
    for (int trial = 0; trial < 100; ++trial) {
        std::vector<double> poly;
        const std::size_t n = vn(rng);
        for (std::size_t i = 0; i < 2 * n; ++i) poly.push_back(coord(rng));
        auto got = rasterize_polygon(poly, 64, 64);
        auto want = brute_force_mask(poly, 64, 64);
        INFO("trial " << trial);
        REQUIRE(got == want);
    }
}

TEST_CASE("multiple polygons per annotation OR-combine") {
    Annotation a;
    a.segmentation = {{1, 1, 4, 1, 4, 4, 1, 4}, {10, 10, 14, 10, 14, 14, 10, 14}};
    auto m = rasterize_annotation(a, 16, 16);
    REQUIRE(m[2 * 16 + 2] == 1);
    REQUIRE(m[12 * 16 + 12] == 1);
    REQUIRE(m[8 * 16 + 8] == 0);
}

TEST_CASE("fold planning") {
    std::vector<std::string> ids;
    for (int i = 0; i < 1200; ++i) ids.push_back("im" + std::to_string(i));

    SECTION("1200 ids, 5 folds: 240 validation / 960 train each") {
        auto plan = make_folds(ids, 5, 9);
        REQUIRE(plan.folds.size() == 5);
        for (const auto& f : plan.folds) {
            REQUIRE(f.validation_ids.size() == 240);
            REQUIRE(f.train_ids.size() == 960);
        }
    }
    SECTION("leave-one-out structure at k = n") {
        std::vector<std::string> small(ids.begin(), ids.begin() + 7);
        auto plan = make_folds(small, 7, 1);
        for (const auto& f : plan.folds) REQUIRE(f.validation_ids.size() == 1);
    }
    SECTION("determinism in the seed") {
        auto a = make_folds(ids, 5, 42), b = make_folds(ids, 5, 42), c = make_folds(ids, 5, 43);
        REQUIRE(a.folds[0].validation_ids == b.folds[0].validation_ids);
        REQUIRE(a.folds[0].validation_ids != c.folds[0].validation_ids);
    }
    SECTION("partition properties on random (n,k)") {
        std::mt19937_64 rng(5);
        for (int trial = 0; trial < 30; ++trial) {
            std::uniform_int_distribution<std::size_t> nd{2, 97};
            const std::size_t n = nd(rng);
            std::uniform_int_distribution<std::size_t> kd{2, n};
            const std::size_t k = kd(rng);
            std::vector<std::string> v(ids.begin(), ids.begin() + long(n));
            auto plan = make_folds(v, k, trial);  // validate() runs inside
            std::size_t mx = 0, mn = SIZE_MAX;
            for (const auto& f : plan.folds) {
                mx = std::max(mx, f.validation_ids.size());
                mn = std::min(mn, f.validation_ids.size());
            }
            REQUIRE(mx - mn <= 1);
        }
    }
    SECTION("errors") {
        std::vector<std::string> three(ids.begin(), ids.begin() + 3);
        REQUIRE_THROWS_AS(make_folds(three, 5, 0), DataError);
        REQUIRE_THROWS_AS(make_folds(ids, 1, 0), DataError);
    }
    SECTION("corrupted plan rejected") {
        auto plan = make_folds(ids, 5, 1);
        plan.folds[0].train_ids.push_back(plan.folds[0].validation_ids[0]);
        REQUIRE_THROWS_AS(plan.validate(ids), DataError);
    }
}

TEST_CASE("sample preparation") {
    auto dir = tmpdir();
    SECTION("constant 8-bit 255 image becomes all-ones at target size") {
        GrayImage g;
        g.width = g.height = 16;
        g.max_value = 255;
        g.pixels.assign(256, 255);
        auto p = (dir / "white.pgm").string();
        write_pgm(p, g);
        auto s = prepare_sample("white", p, {}, 32);
        REQUIRE(s.image.shape() == Shape{1, 32, 32});
        for (float v : s.image.values()) REQUIRE(v == Catch::Approx(1.0f));
        for (auto v : s.mask) REQUIRE(v == 0);  // no annotations -> empty mask
    }
    SECTION("resized mask area scales with the resolution ratio") {
        GrayImage g;
        g.width = g.height = 256;
        g.max_value = 255;
        g.pixels.assign(256 * 256, 40);
        auto p = (dir / "square.pgm").string();
        write_pgm(p, g);
        Annotation a;
        a.segmentation = {{96, 96, 160, 96, 160, 160, 96, 160}};  // 64x64 square
        auto s = prepare_sample("sq", p, {&a}, 512);
        std::size_t area = 0;
        for (auto v : s.mask) area += v;
        const double expected = 64.0 * 64.0 * 4.0;  // 2x upscale in each axis
        REQUIRE(std::abs(double(area) - expected) / expected < 0.04);
    }
    SECTION("deterministic and idempotent") {
        GrayImage g;
        g.width = 20;
        g.height = 12;
        g.max_value = 65535;
        g.pixels.resize(240);
        for (std::size_t i = 0; i < 240; ++i) g.pixels[i] = std::uint16_t(i * 253 % 65536);
        auto p = (dir / "grad.pgm").string();
        write_pgm(p, g);
        auto s1 = prepare_sample("g", p, {}, 64);
        auto s2 = prepare_sample("g", p, {}, 64);
        REQUIRE(s1.image.values() == s2.image.values());
        REQUIRE(s1.mask == s2.mask);
        for (float v : s1.image.values()) {
            REQUIRE(v >= 0.0f);
            REQUIRE(v <= 1.0f);
        }
    }
    SECTION("undecodable file") {
        auto p = (dir / "bogus.pgm").string();
        std::ofstream(p) << "not an image";
        REQUIRE_THROWS_AS(prepare_sample("x", p, {}, 32), IOError);
    }
}

TEST_CASE("image round trips: PGM binary/ascii and PNG, 8 and 16 bit") {
    auto dir = tmpdir();
    std::mt19937_64 rng(3);
    for (std::uint16_t maxv : {std::uint16_t(255), std::uint16_t(65535)}) {
        GrayImage g;
        g.width = 13;
        g.height = 9;
        g.max_value = maxv;
        g.pixels.resize(13 * 9);
        std::uniform_int_distribution<int> d{0, int(maxv)};
        for (auto& p : g.pixels) p = std::uint16_t(d(rng));

        auto pgm = (dir / ("rt" + std::to_string(maxv) + ".pgm")).string();
        write_pgm(pgm, g);
        auto back = read_image(pgm);
        REQUIRE(back.pixels == g.pixels);
        REQUIRE(back.max_value == maxv);

        auto png = (dir / ("rt" + std::to_string(maxv) + ".png")).string();
        write_png(png, g);
        auto back2 = read_image(png);
        REQUIRE(back2.pixels == g.pixels);
    }
    // ASCII PGM (P2) parses, including comments
    auto p2 = (dir / "ascii.pgm").string();
    std::ofstream(p2) << "P2\n# comment\n3 2\n255\n0 10 20\n30 40 50\n";
    auto img = read_image(p2);
    REQUIRE(img.width == 3);
    REQUIRE(img.height == 2);
    REQUIRE(img.pixels == std::vector<std::uint16_t>{0, 10, 20, 30, 40, 50});
}

TEST_CASE("synthetic blob mask equals the analytic polygon mask") {
    auto data = generate_blob_dataset(8, 64, 77);
    REQUIRE(data.size() == 8);
    for (const auto& b : data) {
        REQUIRE(b.sample.mask == brute_force_mask(b.polygon, 64, 64));
        std::size_t fg = 0;
        for (auto v : b.sample.mask) fg += v;
        REQUIRE(fg > 0);  // blob always lands inside the frame
        for (float v : b.sample.image.values()) {
            REQUIRE(v >= 0.0f);
            REQUIRE(v <= 1.0f);
        }
    }
    // determinism
    auto again = generate_blob_dataset(8, 64, 77);
    REQUIRE(again[3].sample.image.values() == data[3].sample.image.values());
}

TEST_CASE("sample cache round trip and checksum stability") {
    auto dir = tmpdir() / "cache";
    fs::create_directories(dir);
    auto data = generate_blob_dataset(2, 32, 5);
    for (const auto& b : data) save_sample(b.sample, dir.string());
    for (const auto& b : data) {
        auto s = load_sample(b.sample.id, dir.string());
        REQUIRE(s.image.values() == b.sample.image.values());
        REQUIRE(s.mask == b.sample.mask);
        REQUIRE(sample_checksum(s) == sample_checksum(b.sample));
    }
}
