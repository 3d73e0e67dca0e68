#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "sparsegrasp/geom.hpp"
#include "sparsegrasp/ops.hpp"
#include "sparsegrasp/sparse.hpp"

namespace sg {

struct InceptionBranch {
    int reduce_channels = 0;  // 0: plain 1x1 branch of out_channels
    int out_channels = 0;
    int kernel = 1;
};

struct StageSpec {
    enum class Kind { Conv, ConvTransposed, Residual, Inception, Heads };
    Kind kind = Kind::Conv;
    int out_channels = 0;
    int kernel = 3;
    int stride = 1;
    int padding = 1;
    int output_padding = 0;
    bool batchnorm = true;
    bool activation = true;
    std::vector<InceptionBranch> branches;
};

struct ArchitectureSpec {
    std::string name;
    int input_channels = 4;
    int input_size = 224;
    double scale_factor = 1.0;
    double width_scale = 150.0;  // pixel scale for the width head at this resolution
    std::vector<StageSpec> stages;

    // Full-scale presets and the reduced desk variants (96 px, quarter width).
    static ArchitectureSpec grconvnet(int input_channels = 4, int input_size = 224,
                                      double scale = 1.0);
    static ArchitectureSpec ginnet(int input_channels = 4, int input_size = 224,
                                   double scale = 1.0);
    static ArchitectureSpec by_name(const std::string& name);

    std::string to_json() const;
    static ArchitectureSpec from_json(const std::string& text);
};

// Four pixel-wise planes decoded into grasp poses: quality, cos 2theta,
// sin 2theta, normalized width. Each is [N,1,H,W].
struct GraspMaps {
    TensorPtr quality;
    TensorPtr cos2theta;
    TensorPtr sin2theta;
    TensorPtr width;
};

struct LayerParamRow {
    std::string name;
    int64_t total = 0;
    int64_t active = 0;
};

struct ParamReport {
    int64_t maskable_total = 0;
    int64_t maskable_active = 0;
    int64_t unmasked = 0;  // biases, never masked
    std::vector<LayerParamRow> layers;
};

// A built architecture: every conv carries a ScoredTensor, batchnorms are
// non-affine, biases frozen.
class Model {
public:
    Model(const ArchitectureSpec& arch, const SparsityConfig& sparsity);

    GraspMaps forward(Tape& tape, const TensorPtr& input, bool training);

    // Score tensors in layer order (the only trainable parameters).
    std::vector<TensorPtr> score_params();
    void accumulate_score_grads();

    ParamReport param_report() const;
    uint64_t weight_hash() const;  // FNV-1a over all weight and bias bytes

    const ArchitectureSpec& arch() const { return arch_; }
    const SparsityConfig& sparsity() const { return sparsity_; }

    struct NamedArray {
        std::string name;
        TensorPtr tensor;
    };
    // All persistent arrays (weights, scores, biases, batchnorm stats) for
    // checkpointing; order is stable.
    std::vector<NamedArray> named_arrays();
    // Live batchnorm state per conv layer that has one, keyed by layer name.
    std::vector<std::pair<std::string, BatchNormState*>> bn_accessors();
    void set_k_fraction(float k);

private:
    struct BuiltConv {
        std::string name;
        ScoredTensor st;
        TensorPtr bias;
        bool transposed = false;
        int stride = 1, padding = 0, output_padding = 0;
        std::optional<BatchNormState> bn;
        bool activation = false;
    };

    TensorPtr run_conv(Tape& tape, BuiltConv& c, const TensorPtr& x, bool training);

    ArchitectureSpec arch_;
    SparsityConfig sparsity_;
    std::vector<BuiltConv> convs_;
    // Execution order: stage -> indices into convs_.
    std::vector<std::vector<int>> stage_convs_;
};

// Quality argmax decode. Smoothing sigma <= 0 disables the Gaussian blur.
GraspPoseImage decode_best_grasp(const GraspMaps& maps, double smoothing_sigma,
                                 double width_scale, int batch_index = 0);

std::vector<GraspPoseImage> decode_topn_grasps(const GraspMaps& maps, int n, double nms_radius,
                                               double smoothing_sigma, double width_scale,
                                               int batch_index = 0);

}  // namespace sg
