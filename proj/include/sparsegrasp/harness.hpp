#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "sparsegrasp/dataset.hpp"
#include "sparsegrasp/nets.hpp"

namespace sg {

struct TrainConfig {
    std::string arch = "sparse-ginnet";  // sparse-grconvnet | sparse-ginnet | desk-*
    float k_fraction = 0.5f;
    double split = 0.9;  // train fraction
    int batch_size = 8;
    float lr = 0.001f;
    int epochs = -1;  // -1: architecture default (50 GR-ConvNet, 30 GI-NNet)
    uint32_t seed = 0;
    std::string loss = "smoothl1";  // smoothl1 | mse
    float loss_beta = 1.0f;
    std::string dataset = "synthetic";  // cornell | jacquard | synthetic
    std::string data_dir;
    int synth_count = 500;
    double smoothing_sigma = 2.0;
    bool augment = false;  // on by default for cornell via resolve()
    double val_fraction = 0.1;  // held-out slice of train for best-checkpoint selection

    int resolved_epochs() const;
    std::string to_json() const;
    static TrainConfig from_json(const std::string& text);
};

struct EpochLog {
    int epoch = 0;
    double train_loss = 0.0;
    double val_accuracy = 0.0;
    uint64_t weight_hash = 0;
};

struct TrainResult {
    std::vector<EpochLog> log;
    double best_val_accuracy = 0.0;
    int best_epoch = -1;
    double wall_seconds = 0.0;
    std::string checkpoint_path;
};

struct EvalReport {
    std::vector<uint8_t> per_image_valid;
    std::vector<std::string> image_ids;
    int test_count = 0;
    int valid_count = 0;
    double accuracy = 0.0;  // valid_count / test_count
    int64_t params_total = 0;
    int64_t params_active = 0;
    double wall_seconds = 0.0;
    std::string config_echo;
    std::string to_json() const;
};

// Self-describing container: magic line, little-endian u64 header length,
// JSON header (arch, config, seed, array manifest), then raw f32 payloads.
struct Checkpoint {
    std::string arch_json;
    std::string config_json;
    uint32_t seed = 0;
    float k_fraction = 1.0f;
    std::vector<std::pair<std::string, TensorPtr>> arrays;

    void save(const std::string& path) const;
    static Checkpoint load(const std::string& path);
};

Checkpoint snapshot_model(Model& model, const TrainConfig& config);
std::unique_ptr<Model> model_from_checkpoint(const Checkpoint& ckpt);

// Loads (or generates, for the synthetic kind) the dataset named by config.
std::vector<DatasetSample> load_dataset(const TrainConfig& config);

TrainResult train(const TrainConfig& config, const std::vector<DatasetSample>& data,
                  const std::string& out_dir);

EvalReport evaluate(Model& model, const std::vector<DatasetSample>& test_set,
                    double smoothing_sigma);

struct GridCell {
    float k = 0.0f;
    double split = 0.0;
    double accuracy = 0.0;
    bool ok = false;
    std::string error;
};

struct ExperimentGrid {
    std::vector<float> k_values;
    std::vector<double> splits;
    std::vector<GridCell> cells;  // row-major, k-major

    std::string render_text() const;
    std::string render_csv() const;
};

ExperimentGrid sweep(const TrainConfig& base, const std::vector<float>& k_values,
                     const std::vector<double>& splits, const std::string& out_dir);

struct ParamTableRow {
    float k = 0.0f;
    int64_t total = 0;
    int64_t active = 0;
};
std::vector<ParamTableRow> param_report_table(const std::string& arch,
                                              const std::vector<float>& k_values);

// Runs a checkpointed model over image files; writes decoded top-N grasps as
// JSON records plus the four raw maps in the named-array container format.
int predict(const Checkpoint& ckpt, const std::vector<std::string>& image_files,
            const std::string& out_dir, int top_n, double smoothing_sigma);

// Maps container for predict output and tests.
void save_named_arrays(const std::string& path,
                       const std::vector<std::pair<std::string, TensorPtr>>& arrays);
std::vector<std::pair<std::string, TensorPtr>> load_named_arrays(const std::string& path);

}  // namespace sg
