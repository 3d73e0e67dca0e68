#pragma once

#include <array>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "sparsegrasp/geom.hpp"
#include "sparsegrasp/tensor.hpp"

namespace sg {

struct DatasetSample {
    std::string id;
    TensorPtr rgb;    // [3,H,W] in [0,1]
    TensorPtr depth;  // [1,H,W] meters
    std::vector<GraspRectangle> rects;  // positive grasps only
    int skipped_rects = 0;  // malformed annotation lines dropped at parse
    bool usable() const { return !rects.empty(); }
};

// Rasterized training targets, planes [1,1,H,W].
struct GroundTruthMaps {
    TensorPtr quality;
    TensorPtr cos2theta;
    TensorPtr sin2theta;
    TensorPtr width;
};

struct SplitSpec {
    double train_fraction = 0.9;
    uint32_t seed = 0;
};

struct AugmentConfig {
    double max_translate_frac = 0.08;  // center jitter as a fraction of image size
    double zoom_min = 0.8;             // crop fraction; < 1 magnifies
    double zoom_max = 1.0;
    bool rotate = true;
    int retry_budget = 10;
};

struct AugmentResult {
    DatasetSample sample;
    std::array<double, 6> affine;  // row-major 2x3, original -> augmented coords
    int retries = 0;
};

// RGB image plus optional depth image (empty path: flat 0.8 m plane).
DatasetSample load_rgbd_image(const std::string& rgb_path, const std::string& depth_path);

DatasetSample parse_cornell_sample(const std::string& rgb_path, const std::string& depth_path,
                                   const std::string& annot_path);

DatasetSample parse_jacquard_sample(const std::string& rgb_path, const std::string& depth_path,
                                    const std::string& grasp_path);

// Parses only the rectangle annotations (testable without image files).
std::vector<GraspRectangle> parse_cornell_rects(const std::string& annot_path,
                                                int* skipped = nullptr);
std::vector<GraspRectangle> parse_jacquard_rects(const std::string& grasp_path,
                                                 int* skipped = nullptr);

// Paints the center third (along the width axis) of every rectangle:
// quality 1, angle encoded as cos/sin of 2*angle, width normalized and
// clipped to [0,1]. Later rectangles overwrite earlier ones.
GroundTruthMaps rasterize_maps(const std::vector<GraspRectangle>& rects, int height, int width,
                               double width_scale);

// Consistent crop/zoom/rotate of image, depth and rectangles. Returns nullopt
// if every draw within the retry budget dropped all rectangles.
std::optional<AugmentResult> augment(const DatasetSample& sample, const AugmentConfig& config,
                                     std::mt19937& rng);

// Applies the augment affine to a single plane (bilinear, zero border).
TensorPtr warp_plane(const TensorPtr& plane, const std::array<double, 6>& affine);

// Synthetic desk-scale scenes: one bar or ellipse on a textured background,
// depth consistent, analytic antipodal ground truth across the minor axis.
std::vector<DatasetSample> synth_generate(int count, int image_size, uint32_t seed);

// Writes samples in the Cornell directory layout (pcdNNNNr.png /
// pcdNNNNd.png 16-bit millimeters / pcdNNNNcpos.txt).
void synth_write(const std::vector<DatasetSample>& samples, const std::string& dir);

struct CornellEntry {
    std::string rgb, depth, annot, id;
};
std::vector<CornellEntry> discover_cornell(const std::string& dir);
std::vector<CornellEntry> discover_jacquard(const std::string& dir);

std::vector<DatasetSample> load_cornell_dir(const std::string& dir);
std::vector<DatasetSample> load_jacquard_dir(const std::string& dir);

struct Split {
    std::vector<int> train;
    std::vector<int> test;
};
Split split_indices(int count, const SplitSpec& spec);

// Network input [1,4,H,W]: zero-centered RGB plus per-sample mean-subtracted
// depth clamped to [-1,1].
TensorPtr sample_to_input(const DatasetSample& sample);

}  // namespace sg
