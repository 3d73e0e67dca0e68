#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>

#include "sparsegrasp/dataset.hpp"

using namespace sg;
namespace fs = std::filesystem;

namespace {

constexpr double kPi = 3.14159265358979323846;

fs::path temp_dir(const std::string& tag) {
    auto d = fs::temp_directory_path() / ("sg_test_" + tag);
    fs::remove_all(d);
    fs::create_directories(d);
    return d;
}

void write_file(const fs::path& p, const std::string& text) {
    std::ofstream f(p);
    f << text;
}

bool point_in_strip(double px, double py, const GraspRectangle& r) {
    const double dx = px - r.cx, dy = py - r.cy;
    const double c = std::cos(r.angle), s = std::sin(r.angle);
    const double along = dx * c + dy * s;
    const double across = -dx * s + dy * c;
    return std::fabs(along) <= r.width / 6.0 && std::fabs(across) <= r.height / 2.0;
}

}  // namespace

TEST_CASE("cornell annotation parsing recovers rectangles and skips NaN entries") {
    const auto dir = temp_dir("cornell_parse");
    const auto path = dir / "pcd0000cpos.txt";
    // One axis-aligned rect (center 15,20, w 10, h 6) and one rotated 30 deg,
    // then a rect with a NaN corner that must be dropped.
    const double a = kPi / 6.0;
    const double cx = 40, cy = 40, w = 20, h = 8;
    const double ux = std::cos(a), uy = std::sin(a), vx = -std::sin(a), vy = std::cos(a);
    std::ostringstream ss;
    ss << "10 17\n20 17\n20 23\n10 23\n";
    ss << (cx - ux * w / 2 - vx * h / 2) << " " << (cy - uy * w / 2 - vy * h / 2) << "\n"
       << (cx + ux * w / 2 - vx * h / 2) << " " << (cy + uy * w / 2 - vy * h / 2) << "\n"
       << (cx + ux * w / 2 + vx * h / 2) << " " << (cy + uy * w / 2 + vy * h / 2) << "\n"
       << (cx - ux * w / 2 + vx * h / 2) << " " << (cy - uy * w / 2 + vy * h / 2) << "\n";
    ss << "NaN 5\n10 5\n10 9\n5 9\n";
    write_file(path, ss.str());

    int skipped = 0;
    auto rects = parse_cornell_rects(path.string(), &skipped);
    REQUIRE(rects.size() == 2);
    CHECK(skipped == 1);
    CHECK(rects[0].cx == doctest::Approx(15.0));
    CHECK(rects[0].cy == doctest::Approx(20.0));
    CHECK(rects[0].width == doctest::Approx(10.0));
    CHECK(rects[0].height == doctest::Approx(6.0));
    CHECK(rects[0].angle == doctest::Approx(0.0));
    CHECK(rects[1].cx == doctest::Approx(cx));
    CHECK(rects[1].cy == doctest::Approx(cy));
    CHECK(rects[1].width == doctest::Approx(w));
    CHECK(rects[1].height == doctest::Approx(h));
    CHECK(angle_offset(rects[1].angle, a) < 1e-4);  // corners written at 6 digits
    fs::remove_all(dir);
}

TEST_CASE("jacquard annotation parsing folds angles and keeps jaw size") {
    const auto dir = temp_dir("jacquard_parse");
    const auto path = dir / "0_grasps.txt";
    write_file(path, "50;60;120;30;12\n10;10;-45;18;6\nbroken line\n");
    int skipped = 0;
    auto rects = parse_jacquard_rects(path.string(), &skipped);
    REQUIRE(rects.size() == 2);
    CHECK(skipped == 1);
    CHECK(rects[0].cx == doctest::Approx(50.0));
    CHECK(rects[0].cy == doctest::Approx(60.0));
    // 120 degrees folds into (-pi/2, pi/2]: -60 degrees.
    CHECK(rects[0].angle == doctest::Approx(-kPi / 3.0));
    CHECK(rects[0].width == doctest::Approx(30.0));
    CHECK(rects[0].height == doctest::Approx(12.0));
    CHECK(rects[1].angle == doctest::Approx(-kPi / 4.0));
    fs::remove_all(dir);
}

TEST_CASE("rasterized maps paint exactly the center-third strip") {
    GraspRectangle r;
    r.cx = 30;
    r.cy = 30;
    r.angle = kPi / 6.0;
    r.width = 18;
    r.height = 10;
    const double ws = 64.0;
    auto maps = rasterize_maps({r}, 64, 64, ws);

    // Quality is anti-aliased: fractional coverage on the strip border, 1 in
    // the interior, 0 away from the strip. Angle/width planes are painted
    // exactly where the pixel center is inside the strip.
    GraspRectangle margin = r;  // strip grown by a pixel half-diagonal
    margin.width += 6.0 * 0.7072;  // /6 axis: +- width/6 + 0.71
    margin.height += 2.0 * 0.7072;
    int painted = 0;
    for (int y = 0; y < 64; ++y)
        for (int x = 0; x < 64; ++x) {
            const size_t i = static_cast<size_t>(y) * 64 + x;
            const bool in = point_in_strip(x, y, r);
            if (in) {
                ++painted;
                CHECK(maps.quality->v[i] > 0.0f);
                CHECK(maps.quality->v[i] <= 1.0f);
                CHECK(maps.cos2theta->v[i] == doctest::Approx(std::cos(2 * r.angle)));
                CHECK(maps.sin2theta->v[i] == doctest::Approx(std::sin(2 * r.angle)));
                CHECK(maps.width->v[i] == doctest::Approx(18.0 / ws));
            } else {
                CHECK(maps.width->v[i] == 0.0f);
                if (maps.quality->v[i] > 0.0f) {
                    // A border pixel: partially covered, still within a
                    // half-diagonal of the strip.
                    CHECK(maps.quality->v[i] < 1.0f);
                    CHECK(point_in_strip(x, y, margin));
                }
            }
        }
    // The strip is about (width/3) x height pixels.
    CHECK(painted > 30);
    CHECK(painted < 90);
    CHECK_THROWS(rasterize_maps({}, 64, 64, ws));
}

TEST_CASE("later rectangles overwrite earlier ones where strips overlap") {
    GraspRectangle a{20, 20, 0.0, 18, 12};
    GraspRectangle b{20, 20, 0.0, 12, 8};  // nested inside a's strip
    auto maps = rasterize_maps({a, b}, 40, 40, 40.0);
    const size_t center = 20 * 40 + 20;
    CHECK(maps.width->v[center] == doctest::Approx(12.0 / 40.0));
}

TEST_CASE("width plane clips at 1 for jaw openings beyond the scale") {
    GraspRectangle r{20, 20, 0.0, 90, 10};
    auto maps = rasterize_maps({r}, 40, 40, 40.0);
    const size_t center = 20 * 40 + 20;
    CHECK(maps.width->v[center] == doctest::Approx(1.0));
}

TEST_CASE("synthetic generation is deterministic and self-consistent") {
    auto a = synth_generate(8, 96, 42);
    auto b = synth_generate(8, 96, 42);
    REQUIRE(a.size() == 8);
    for (size_t i = 0; i < a.size(); ++i) {
        CHECK(a[i].rgb->v == b[i].rgb->v);  // bitwise
        CHECK(a[i].depth->v == b[i].depth->v);
        REQUIRE(a[i].rects.size() == 1);
        CHECK(a[i].rects[0].cx == b[i].rects[0].cx);
        // Pose stays inside the frame with margin.
        CHECK(a[i].rects[0].cx > 4.0);
        CHECK(a[i].rects[0].cx < 92.0);
        CHECK(a[i].rects[0].angle > -kPi / 2);
        CHECK(a[i].rects[0].angle <= kPi / 2);
    }
    auto c = synth_generate(8, 96, 43);
    CHECK(a[0].rgb->v != c[0].rgb->v);

    // The grasp sits on the object: depth at the center is raised (closer).
    for (const auto& s : a) {
        const int x = static_cast<int>(std::lround(s.rects[0].cx));
        const int y = static_cast<int>(std::lround(s.rects[0].cy));
        CHECK(s.depth->v[static_cast<size_t>(y) * 96 + x] < 0.8f);
    }
}

TEST_CASE("synthetic write/load round trip through the cornell layout") {
    const auto dir = temp_dir("synth_io");
    auto samples = synth_generate(4, 96, 3);
    synth_write(samples, dir.string());
    for (int i = 0; i < 4; ++i) {
        char base[32];
        std::snprintf(base, sizeof(base), "pcd%04d", i);
        CHECK(fs::exists(dir / (std::string(base) + "r.png")));
        CHECK(fs::exists(dir / (std::string(base) + "d.png")));
        CHECK(fs::exists(dir / (std::string(base) + "cpos.txt")));
    }
    auto loaded = load_cornell_dir(dir.string());
    REQUIRE(loaded.size() == 4);
    for (size_t i = 0; i < 4; ++i) {
        REQUIRE(loaded[i].rects.size() == 1);
        CHECK(loaded[i].rects[0].cx == doctest::Approx(samples[i].rects[0].cx).epsilon(0.05));
        CHECK(angle_offset(loaded[i].rects[0].angle, samples[i].rects[0].angle) < 1e-3);
        CHECK(loaded[i].rects[0].width ==
              doctest::Approx(samples[i].rects[0].width).epsilon(0.05));
        // 8-bit RGB and 16-bit millimeter depth quantization.
        for (size_t j = 0; j < loaded[i].rgb->v.size(); j += 997)
            CHECK(loaded[i].rgb->v[j] ==
                  doctest::Approx(samples[i].rgb->v[j]).epsilon(0.01).scale(1));
        for (size_t j = 0; j < loaded[i].depth->v.size(); j += 997)
            CHECK(loaded[i].depth->v[j] ==
                  doctest::Approx(samples[i].depth->v[j]).epsilon(0.002).scale(1));
    }
    fs::remove_all(dir);
}

TEST_CASE("augment applies one consistent affine to image, depth and rectangles") {
    auto samples = synth_generate(6, 96, 11);
    AugmentConfig cfg;
    std::mt19937 rng(5);
    int produced = 0;
    for (const auto& s : samples) {
        auto res = augment(s, cfg, rng);
        if (!res) continue;
        ++produced;
        REQUIRE_FALSE(res->sample.rects.empty());
        // Rectangle centers transform by exactly the reported affine.
        for (size_t i = 0; i < res->sample.rects.size(); ++i) {
            const auto& orig = s.rects[i];
            const auto& got = res->sample.rects[i];
            const auto& A = res->affine;
            CHECK(got.cx == doctest::Approx(A[0] * orig.cx + A[1] * orig.cy + A[2]).epsilon(1e-6));
            CHECK(got.cy == doctest::Approx(A[3] * orig.cx + A[4] * orig.cy + A[5]).epsilon(1e-6));
            // Zoom scales width/height by the affine's scale factor.
            const double sc = std::hypot(A[0], A[3]);
            CHECK(got.width == doctest::Approx(orig.width * sc).epsilon(1e-6));
            CHECK(got.height == doctest::Approx(orig.height * sc).epsilon(1e-6));
        }
        CHECK(res->sample.rgb->shape == s.rgb->shape);
        CHECK(res->sample.depth->shape == s.depth->shape);
    }
    CHECK(produced >= 4);  // the retry budget keeps most draws alive
}

TEST_CASE("augmented maps match warped original maps within discretization slack") {
    auto samples = synth_generate(4, 96, 19);
    AugmentConfig cfg;
    std::mt19937 rng(7);
    const double ws = 150.0 * 96 / 224.0;
    for (const auto& s : samples) {
        auto res = augment(s, cfg, rng);
        if (!res) continue;
        auto direct = rasterize_maps(res->sample.rects, 96, 96, ws);
        auto original = rasterize_maps(s.rects, 96, 96, ws);
        auto warped = warp_plane(original.quality, res->affine);
        int differ = 0;
        for (size_t i = 0; i < direct.quality->v.size(); ++i) {
            const bool a = direct.quality->v[i] > 0.5f;
            const bool b = warped->v[i] > 0.5f;
            differ += a != b;
        }
        CHECK(static_cast<double>(differ) / direct.quality->v.size() <= 0.02);
    }
}

TEST_CASE("split arithmetic: disjoint, exhaustive, deterministic") {
    auto s1 = split_indices(100, SplitSpec{0.9, 4});
    CHECK(s1.train.size() == 90);
    CHECK(s1.test.size() == 10);
    std::vector<char> seen(100, 0);
    for (int i : s1.train) seen[static_cast<size_t>(i)] += 1;
    for (int i : s1.test) seen[static_cast<size_t>(i)] += 1;
    for (char c : seen) CHECK(c == 1);

    auto s2 = split_indices(100, SplitSpec{0.9, 4});
    CHECK(s1.train == s2.train);
    auto s3 = split_indices(100, SplitSpec{0.9, 5});
    CHECK(s1.train != s3.train);

    auto s4 = split_indices(7, SplitSpec{0.5, 0});
    CHECK(s4.train.size() == 3);  // floor
    CHECK(s4.test.size() == 4);
}

TEST_CASE("network input tensor is centered and clamped") {
    auto s = synth_generate(1, 96, 2)[0];
    auto x = sample_to_input(s);
    REQUIRE(x->shape == std::vector<int>{1, 4, 96, 96});
    // RGB planes are the image minus 0.5.
    for (size_t j = 0; j < 96 * 96; j += 131)
        CHECK(x->v[j] == doctest::Approx(s.rgb->v[j] - 0.5f).epsilon(1e-6));
    // Depth plane has approximately zero mean and bounded range.
    double mean = 0.0;
    for (size_t j = 3 * 96 * 96; j < 4 * 96 * 96; ++j) {
        mean += x->v[j];
        CHECK(x->v[j] >= -1.0f);
        CHECK(x->v[j] <= 1.0f);
    }
    CHECK(std::fabs(mean / (96 * 96)) < 0.05);
}

TEST_CASE("discovery rejects a directory without samples") {
    const auto dir = temp_dir("empty_dir");
    CHECK(discover_cornell(dir.string()).empty());
    CHECK_THROWS(load_cornell_dir(dir.string()));
    fs::remove_all(dir);
}
