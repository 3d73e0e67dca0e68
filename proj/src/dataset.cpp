#include "sparsegrasp/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

namespace fs = std::filesystem;

namespace sg {

namespace {

constexpr double kPi = 3.14159265358979323846;
constexpr double kDepthScale = 1000.0;  // 16-bit depth PNGs store millimeters

TensorPtr mat_to_rgb(const cv::Mat& img) {
    cv::Mat rgb;
    cv::cvtColor(img, rgb, cv::COLOR_BGR2RGB);
    const int H = rgb.rows, W = rgb.cols;
    auto t = make_tensor({3, H, W});
    for (int c = 0; c < 3; ++c)
        for (int y = 0; y < H; ++y)
            for (int x = 0; x < W; ++x)
                t->v[static_cast<size_t>((c * H + y) * W + x)] =
                    rgb.at<cv::Vec3b>(y, x)[c] / 255.0f;
    return t;
}

TensorPtr mat_to_depth(const cv::Mat& img) {
    const int H = img.rows, W = img.cols;
    auto t = make_tensor({1, H, W});
    for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x) {
            float d;
            if (img.type() == CV_16U)
                d = static_cast<float>(img.at<uint16_t>(y, x) / kDepthScale);
            else if (img.type() == CV_32F)
                d = img.at<float>(y, x);
            else
                d = static_cast<float>(img.at<uint8_t>(y, x) / 255.0);
            t->v[static_cast<size_t>(y * W + x)] = d;
        }
    return t;
}

cv::Mat rgb_to_mat(const TensorPtr& rgb) {
    const int H = rgb->dim(1), W = rgb->dim(2);
    cv::Mat img(H, W, CV_8UC3);
    for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x) {
            cv::Vec3b px;
            for (int c = 0; c < 3; ++c)
                px[2 - c] = static_cast<uint8_t>(std::clamp(
                    std::lround(rgb->v[static_cast<size_t>((c * H + y) * W + x)] * 255.0f), 0L,
                    255L));
            img.at<cv::Vec3b>(y, x) = px;  // BGR on disk
        }
    return img;
}

cv::Mat depth_to_mat16(const TensorPtr& depth) {
    const int H = depth->dim(1), W = depth->dim(2);
    cv::Mat img(H, W, CV_16U);
    for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x)
            img.at<uint16_t>(y, x) = static_cast<uint16_t>(std::clamp(
                std::lround(depth->v[static_cast<size_t>(y * W + x)] * kDepthScale), 0L, 65535L));
    return img;
}

bool rect_inside(const GraspRectangle& r, int H, int W) {
    for (const auto& p : r.corners())
        if (p.x < 0 || p.x > W - 1 || p.y < 0 || p.y > H - 1) return false;
    return true;
}

}  // namespace

std::vector<GraspRectangle> parse_cornell_rects(const std::string& annot_path, int* skipped) {
    std::ifstream in(annot_path);
    if (!in) throw std::runtime_error("cannot open annotation file " + annot_path);
    std::vector<GraspRectangle> rects;
    int bad = 0;
    std::array<Vec2, 4> pts;
    int have = 0;
    bool corrupt = false;
    std::string line;
    while (std::getline(in, line)) {
        if (line.find_first_not_of(" \t\r\n") == std::string::npos) continue;
        std::istringstream ls(line);
        double x, y;
        if (!(ls >> x >> y) || !std::isfinite(x) || !std::isfinite(y)) corrupt = true;
        else pts[static_cast<size_t>(have)] = {x, y};
        ++have;
        if (have == 4) {
            if (!corrupt) {
                auto r = rectangle_from_corners(pts);
                if (r.width > 0 && r.height > 0)
                    rects.push_back(r);
                else
                    ++bad;
            } else {
                ++bad;
            }
            have = 0;
            corrupt = false;
        }
    }
    if (have != 0) ++bad;  // trailing partial rectangle
    if (skipped) *skipped = bad;
    return rects;
}

std::vector<GraspRectangle> parse_jacquard_rects(const std::string& grasp_path, int* skipped) {
    std::ifstream in(grasp_path);
    if (!in) throw std::runtime_error("cannot open grasp file " + grasp_path);
    std::vector<GraspRectangle> rects;
    int bad = 0;
    std::string line;
    while (std::getline(in, line)) {
        if (line.find_first_not_of(" \t\r\n") == std::string::npos) continue;
        std::replace(line.begin(), line.end(), ';', ' ');
        std::istringstream ls(line);
        double x, y, deg, opening, jaw;
        if (!(ls >> x >> y >> deg >> opening >> jaw) || !std::isfinite(x) || !std::isfinite(y) ||
            opening <= 0 || jaw <= 0) {
            ++bad;
            continue;
        }
        GraspRectangle r;
        r.cx = x;
        r.cy = y;
        r.angle = fold_half_pi(deg * kPi / 180.0);
        r.width = opening;
        r.height = jaw;
        rects.push_back(r);
    }
    if (skipped) *skipped = bad;
    return rects;
}

DatasetSample load_rgbd_image(const std::string& rgb_path, const std::string& depth_path) {
    cv::Mat img = cv::imread(rgb_path, cv::IMREAD_COLOR);
    if (img.empty()) throw std::runtime_error("cannot read image " + rgb_path);
    DatasetSample s;
    s.id = fs::path(rgb_path).stem().string();
    s.rgb = mat_to_rgb(img);
    if (depth_path.empty()) {
        s.depth = make_tensor({1, s.rgb->dim(1), s.rgb->dim(2)}, 0.8f);
    } else {
        cv::Mat dep = cv::imread(depth_path, cv::IMREAD_UNCHANGED);
        if (dep.empty()) throw std::runtime_error("cannot read depth " + depth_path);
        s.depth = mat_to_depth(dep);
    }
    return s;
}

DatasetSample parse_cornell_sample(const std::string& rgb_path, const std::string& depth_path,
                                   const std::string& annot_path) {
    cv::Mat img = cv::imread(rgb_path, cv::IMREAD_COLOR);
    if (img.empty()) throw std::runtime_error("cannot read image " + rgb_path);
    cv::Mat dep = cv::imread(depth_path, cv::IMREAD_UNCHANGED);
    if (dep.empty()) throw std::runtime_error("cannot read depth " + depth_path);
    DatasetSample s;
    s.id = fs::path(rgb_path).stem().string();
    s.rgb = mat_to_rgb(img);
    s.depth = mat_to_depth(dep);
    s.rects = parse_cornell_rects(annot_path, &s.skipped_rects);
    return s;
}

DatasetSample parse_jacquard_sample(const std::string& rgb_path, const std::string& depth_path,
                                    const std::string& grasp_path) {
    cv::Mat img = cv::imread(rgb_path, cv::IMREAD_COLOR);
    if (img.empty()) throw std::runtime_error("cannot read image " + rgb_path);
    cv::Mat dep = cv::imread(depth_path, cv::IMREAD_UNCHANGED);
    if (dep.empty()) throw std::runtime_error("cannot read depth " + depth_path);
    DatasetSample s;
    s.id = fs::path(grasp_path).stem().string();
    s.rgb = mat_to_rgb(img);
    s.depth = mat_to_depth(dep);
    s.rects = parse_jacquard_rects(grasp_path, &s.skipped_rects);
    return s;
}

GroundTruthMaps rasterize_maps(const std::vector<GraspRectangle>& rects, int height, int width,
                               double width_scale) {
    if (rects.empty()) throw std::invalid_argument("rasterize_maps: no rectangles");
    GroundTruthMaps m;
    m.quality = make_tensor({1, 1, height, width});
    m.cos2theta = make_tensor({1, 1, height, width});
    m.sin2theta = make_tensor({1, 1, height, width});
    m.width = make_tensor({1, 1, height, width});
    for (const auto& r : rects) {
        GraspRectangle painted = r;
        painted.width = r.width / 3.0;
        const auto cs = painted.corners();
        double minx = cs[0].x, maxx = cs[0].x, miny = cs[0].y, maxy = cs[0].y;
        for (const auto& p : cs) {
            minx = std::min(minx, p.x);
            maxx = std::max(maxx, p.x);
            miny = std::min(miny, p.y);
            maxy = std::max(maxy, p.y);
        }
        const int x0 = std::max(0, static_cast<int>(std::floor(minx)));
        const int x1 = std::min(width - 1, static_cast<int>(std::ceil(maxx)));
        const int y0 = std::max(0, static_cast<int>(std::floor(miny)));
        const int y1 = std::min(height - 1, static_cast<int>(std::ceil(maxy)));
        const double ux = std::cos(painted.angle), uy = std::sin(painted.angle);
        const float c2 = static_cast<float>(std::cos(2.0 * r.angle));
        const float s2 = static_cast<float>(std::sin(2.0 * r.angle));
        const float wn = static_cast<float>(std::min(r.width / width_scale, 1.0));
        for (int y = y0; y <= y1; ++y)
            for (int x = x0; x <= x1; ++x) {
                // Quality gets sub-pixel coverage (4x4 supersampling) so a
                // rotated strip rasterizes without jagged-edge artifacts; the
                // other planes are painted wherever the pixel center is inside.
                int hits = 0;
                for (int sy = 0; sy < 4; ++sy)
                    for (int sx = 0; sx < 4; ++sx) {
                        const double px = x + (sx + 0.5) / 4.0 - 0.5;
                        const double py = y + (sy + 0.5) / 4.0 - 0.5;
                        const double dx = px - painted.cx, dy = py - painted.cy;
                        const double along = dx * ux + dy * uy;
                        const double across = -dx * uy + dy * ux;
                        if (std::fabs(along) <= painted.width / 2.0 &&
                            std::fabs(across) <= painted.height / 2.0)
                            ++hits;
                    }
                if (hits == 0) continue;
                const size_t i = static_cast<size_t>(y * width + x);
                m.quality->v[i] = static_cast<float>(hits) / 16.0f;
                const double dx = x - painted.cx, dy = y - painted.cy;
                const double along = dx * ux + dy * uy;
                const double across = -dx * uy + dy * ux;
                if (std::fabs(along) <= painted.width / 2.0 &&
                    std::fabs(across) <= painted.height / 2.0) {
                    m.cos2theta->v[i] = c2;
                    m.sin2theta->v[i] = s2;
                    m.width->v[i] = wn;
                }
            }
    }
    return m;
}

std::optional<AugmentResult> augment(const DatasetSample& sample, const AugmentConfig& config,
                                     std::mt19937& rng) {
    const int H = sample.rgb->dim(1), W = sample.rgb->dim(2);
    std::uniform_real_distribution<double> uni(0.0, 1.0);
    for (int attempt = 0; attempt <= config.retry_budget; ++attempt) {
        const double angle = config.rotate ? uni(rng) * kPi : 0.0;
        const double zoom = config.zoom_min + uni(rng) * (config.zoom_max - config.zoom_min);
        const double tx = (uni(rng) * 2.0 - 1.0) * config.max_translate_frac * W;
        const double ty = (uni(rng) * 2.0 - 1.0) * config.max_translate_frac * H;

        // original -> augmented: rotate about the (jittered) center then magnify by 1/zoom.
        const double s = 1.0 / zoom;
        const double ca = std::cos(angle) * s, sa = std::sin(angle) * s;
        const double cx = W / 2.0, cy = H / 2.0;
        const double ox = cx + tx, oy = cy + ty;
        std::array<double, 6> A = {ca, -sa, cx - ca * ox + sa * oy,
                                   sa, ca,  cy - sa * ox - ca * oy};

        std::vector<GraspRectangle> rects;
        for (const auto& r : sample.rects) {
            const auto cs = r.corners();
            std::array<Vec2, 4> tc;
            for (int i = 0; i < 4; ++i)
                tc[static_cast<size_t>(i)] = {
                    A[0] * cs[static_cast<size_t>(i)].x + A[1] * cs[static_cast<size_t>(i)].y + A[2],
                    A[3] * cs[static_cast<size_t>(i)].x + A[4] * cs[static_cast<size_t>(i)].y + A[5]};
            auto tr = rectangle_from_corners(tc);
            if (rect_inside(tr, H, W)) rects.push_back(tr);
        }
        if (rects.empty()) continue;

        AugmentResult out;
        out.affine = A;
        out.retries = attempt;
        out.sample.id = sample.id + "_aug";
        out.sample.rects = std::move(rects);
        out.sample.rgb = make_tensor({3, H, W});
        out.sample.depth = make_tensor({1, H, W});
        cv::Mat M(2, 3, CV_64F);
        for (int i = 0; i < 6; ++i) M.at<double>(i / 3, i % 3) = A[static_cast<size_t>(i)];
        for (int c = 0; c < 3; ++c) {
            cv::Mat src(H, W, CV_32F,
                        const_cast<float*>(sample.rgb->v.data() + static_cast<size_t>(c) * H * W));
            cv::Mat dst(H, W, CV_32F, out.sample.rgb->v.data() + static_cast<size_t>(c) * H * W);
            cv::warpAffine(src, dst, M, {W, H}, cv::INTER_LINEAR, cv::BORDER_REPLICATE);
        }
        {
            cv::Mat src(H, W, CV_32F, const_cast<float*>(sample.depth->v.data()));
            cv::Mat dst(H, W, CV_32F, out.sample.depth->v.data());
            cv::warpAffine(src, dst, M, {W, H}, cv::INTER_LINEAR, cv::BORDER_REPLICATE);
        }
        return out;
    }
    return std::nullopt;
}

TensorPtr warp_plane(const TensorPtr& plane, const std::array<double, 6>& affine) {
    const int H = plane->dim(2), W = plane->dim(3);
    auto out = make_tensor(plane->shape);
    cv::Mat M(2, 3, CV_64F);
    for (int i = 0; i < 6; ++i) M.at<double>(i / 3, i % 3) = affine[static_cast<size_t>(i)];
    cv::Mat src(H, W, CV_32F, const_cast<float*>(plane->v.data()));
    cv::Mat dst(H, W, CV_32F, out->v.data());
    cv::warpAffine(src, dst, M, {W, H}, cv::INTER_NEAREST, cv::BORDER_CONSTANT, 0.0);
    return out;
}

std::vector<DatasetSample> synth_generate(int count, int image_size, uint32_t seed) {
    std::vector<DatasetSample> out;
    const int S = image_size;
    for (int i = 0; i < count; ++i) {
        std::seed_seq sseq{seed, static_cast<uint32_t>(i)};
        std::mt19937 rng(sseq);
        std::uniform_real_distribution<double> uni(0.0, 1.0);

        DatasetSample s;
        char id[32];
        std::snprintf(id, sizeof(id), "pcd%04d", i);
        s.id = id;
        s.rgb = make_tensor({3, S, S});
        s.depth = make_tensor({1, S, S});

        // textured background around mid grey, flat depth plane
        const double bg = 0.35 + 0.25 * uni(rng);
        const double bg_depth = 0.8;
        for (int y = 0; y < S; ++y)
            for (int x = 0; x < S; ++x) {
                const double n = 0.04 * (uni(rng) - 0.5);
                for (int c = 0; c < 3; ++c)
                    s.rgb->v[static_cast<size_t>((c * S + y) * S + x)] =
                        static_cast<float>(std::clamp(bg + n, 0.0, 1.0));
                s.depth->v[static_cast<size_t>(y * S + x)] = static_cast<float>(bg_depth);
            }

        const bool ellipse = (i % 2) == 1;
        const double angle = uni(rng) * kPi;
        const double length = (0.45 + 0.17 * uni(rng)) * S;
        const double thick = 0.12 * S;  // uniform stock: one jaw opening fits all
        const double margin = std::max(length, thick) * 0.6 + 2.0;
        const double cx = margin + uni(rng) * (S - 2.0 * margin);
        const double cy = margin + uni(rng) * (S - 2.0 * margin);
        const double obj_height = 0.04 + 0.03 * uni(rng);
        // high-contrast object color
        std::array<double, 3> col = {uni(rng), uni(rng), uni(rng)};
        for (auto& c : col) c = bg > 0.5 ? c * 0.25 : 0.75 + c * 0.25;

        const double ux = std::cos(angle), uy = std::sin(angle);
        for (int y = 0; y < S; ++y)
            for (int x = 0; x < S; ++x) {
                const double dx = x - cx, dy = y - cy;
                const double along = dx * ux + dy * uy;
                const double across = -dx * uy + dy * ux;
                bool inside;
                if (ellipse) {
                    const double a = length / 2.0, b = thick / 2.0;
                    inside = (along * along) / (a * a) + (across * across) / (b * b) <= 1.0;
                } else {
                    inside = std::fabs(along) <= length / 2.0 && std::fabs(across) <= thick / 2.0;
                }
                if (inside) {
                    for (int c = 0; c < 3; ++c)
                        s.rgb->v[static_cast<size_t>((c * S + y) * S + x)] =
                            static_cast<float>(col[static_cast<size_t>(c)]);
                    s.depth->v[static_cast<size_t>(y * S + x)] =
                        static_cast<float>(bg_depth - obj_height);
                }
            }

        // antipodal grasp across the minor axis
        GraspRectangle gt;
        gt.cx = cx;
        gt.cy = cy;
        gt.angle = fold_half_pi(angle + kPi / 2.0);
        // A generous jaw opening and a ground-truth rectangle running most of
        // the bar: the painted strip then covers a wide band of the object,
        // so a decode pixel a few pixels off-center still reads supervised
        // angle/width values.
        gt.width = thick * 2.4;
        gt.height = length * 0.9;
        s.rects.push_back(gt);
        out.push_back(std::move(s));
    }
    return out;
}

void synth_write(const std::vector<DatasetSample>& samples, const std::string& dir) {
    fs::create_directories(dir);
    for (const auto& s : samples) {
        const std::string base = (fs::path(dir) / s.id).string();
        if (!cv::imwrite(base + "r.png", rgb_to_mat(s.rgb)))
            throw std::runtime_error("cannot write " + base + "r.png");
        if (!cv::imwrite(base + "d.png", depth_to_mat16(s.depth)))
            throw std::runtime_error("cannot write " + base + "d.png");
        std::ofstream out(base + "cpos.txt");
        out.precision(4);
        out << std::fixed;
        for (const auto& r : s.rects)
            for (const auto& p : r.corners()) out << p.x << " " << p.y << "\n";
    }
}

std::vector<CornellEntry> discover_cornell(const std::string& dir) {
    std::vector<CornellEntry> out;
    if (!fs::exists(dir)) throw std::runtime_error("dataset directory not found: " + dir);
    for (const auto& e : fs::recursive_directory_iterator(dir)) {
        if (!e.is_regular_file()) continue;
        const std::string name = e.path().filename().string();
        if (name.size() < 9 || name.rfind("pcd", 0) != 0 || name.find("r.png") == std::string::npos)
            continue;
        const std::string stem = name.substr(0, name.size() - 5);  // strip "r.png"
        CornellEntry ent;
        ent.id = stem;
        ent.rgb = e.path().string();
        const auto parent = e.path().parent_path();
        for (const char* dn : {"d.png", "d.tiff"}) {
            auto p = parent / (stem + dn);
            if (fs::exists(p)) {
                ent.depth = p.string();
                break;
            }
        }
        auto ap = parent / (stem + "cpos.txt");
        if (!fs::exists(ap) || ent.depth.empty()) continue;
        ent.annot = ap.string();
        out.push_back(ent);
    }
    std::sort(out.begin(), out.end(),
              [](const CornellEntry& a, const CornellEntry& b) { return a.id < b.id; });
    return out;
}

std::vector<CornellEntry> discover_jacquard(const std::string& dir) {
    std::vector<CornellEntry> out;
    if (!fs::exists(dir)) throw std::runtime_error("dataset directory not found: " + dir);
    for (const auto& e : fs::recursive_directory_iterator(dir)) {
        if (!e.is_regular_file()) continue;
        const std::string name = e.path().filename().string();
        const auto pos = name.find("_grasps.txt");
        if (pos == std::string::npos) continue;
        const std::string stem = name.substr(0, pos);
        CornellEntry ent;
        ent.id = stem;
        ent.annot = e.path().string();
        const auto parent = e.path().parent_path();
        for (const char* suffix : {"_RGB.png", "_rgb.png", "_RGB.jpg"}) {
            auto p = parent / (stem + suffix);
            if (fs::exists(p)) {
                ent.rgb = p.string();
                break;
            }
        }
        for (const char* suffix : {"_perfect_depth.tiff", "_depth.png", "_stereo_depth.tiff"}) {
            auto p = parent / (stem + suffix);
            if (fs::exists(p)) {
                ent.depth = p.string();
                break;
            }
        }
        if (ent.rgb.empty() || ent.depth.empty()) continue;
        out.push_back(ent);
    }
    std::sort(out.begin(), out.end(),
              [](const CornellEntry& a, const CornellEntry& b) { return a.id < b.id; });
    return out;
}

std::vector<DatasetSample> load_cornell_dir(const std::string& dir) {
    std::vector<DatasetSample> out;
    for (const auto& e : discover_cornell(dir))
        out.push_back(parse_cornell_sample(e.rgb, e.depth, e.annot));
    if (out.empty()) throw std::invalid_argument("no cornell samples found in " + dir);
    return out;
}

std::vector<DatasetSample> load_jacquard_dir(const std::string& dir) {
    std::vector<DatasetSample> out;
    for (const auto& e : discover_jacquard(dir))
        out.push_back(parse_jacquard_sample(e.rgb, e.depth, e.annot));
    if (out.empty()) throw std::invalid_argument("no jacquard samples found in " + dir);
    return out;
}

Split split_indices(int count, const SplitSpec& spec) {
    if (spec.train_fraction <= 0.0 || spec.train_fraction >= 1.0)
        throw std::invalid_argument("split: train_fraction must be in (0,1)");
    std::vector<int> idx(static_cast<size_t>(count));
    std::iota(idx.begin(), idx.end(), 0);
    std::mt19937 rng(spec.seed);
    std::shuffle(idx.begin(), idx.end(), rng);
    const int ntrain = static_cast<int>(std::floor(spec.train_fraction * count));
    Split s;
    s.train.assign(idx.begin(), idx.begin() + ntrain);
    s.test.assign(idx.begin() + ntrain, idx.end());
    return s;
}

TensorPtr sample_to_input(const DatasetSample& sample) {
    const int H = sample.rgb->dim(1), W = sample.rgb->dim(2);
    auto t = make_tensor({1, 4, H, W});
    const int64_t plane = static_cast<int64_t>(H) * W;
    for (int c = 0; c < 3; ++c)
        for (int64_t i = 0; i < plane; ++i)
            t->v[static_cast<size_t>(c * plane + i)] =
                sample.rgb->v[static_cast<size_t>(c * plane + i)] - 0.5f;
    double mean = 0.0;
    for (int64_t i = 0; i < plane; ++i) mean += sample.depth->v[static_cast<size_t>(i)];
    mean /= static_cast<double>(plane);
    for (int64_t i = 0; i < plane; ++i)
        t->v[static_cast<size_t>(3 * plane + i)] = std::clamp(
            sample.depth->v[static_cast<size_t>(i)] - static_cast<float>(mean), -1.0f, 1.0f);
    return t;
}

}  // namespace sg
