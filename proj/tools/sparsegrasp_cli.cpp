#include <cstdio>
#include <exception>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "sparsegrasp/harness.hpp"

namespace fs = std::filesystem;

namespace {

void add_common(CLI::App* cmd, sg::TrainConfig& cfg) {
    cmd->add_option("--arch", cfg.arch,
                    "sparse-grconvnet | sparse-ginnet | desk-grconvnet | desk-ginnet");
    cmd->add_option("--k", cfg.k_fraction, "active edge fraction in (0,1]");
    cmd->add_option("--split", cfg.split, "train fraction in (0,1)");
    cmd->add_option("--dataset", cfg.dataset, "cornell | jacquard | synthetic");
    cmd->add_option("--data-dir", cfg.data_dir, "dataset directory");
    cmd->add_option("--epochs", cfg.epochs, "epoch budget (-1: architecture default)");
    cmd->add_option("--batch-size", cfg.batch_size);
    cmd->add_option("--lr", cfg.lr);
    cmd->add_option("--seed", cfg.seed);
    cmd->add_option("--smoothing-sigma", cfg.smoothing_sigma,
                    "quality map blur before argmax (0 disables)");
    cmd->add_option("--loss", cfg.loss, "smoothl1 | mse");
    cmd->add_option("--synth-count", cfg.synth_count, "synthetic dataset size");
    cmd->add_flag("--augment,!--no-augment", cfg.augment, "crop/zoom/rotate augmentation");
}

int run(int argc, char** argv) {
    CLI::App app{"Sparse grasp-pose network trainer and evaluation harness"};
    app.require_subcommand(1);

    sg::TrainConfig cfg;
    cfg.augment = false;
    std::string out = "out";
    std::string ckpt_path;
    std::vector<std::string> images;
    std::vector<float> k_list = {0.1f, 0.3f, 0.5f, 0.7f, 0.9f};
    std::vector<double> split_list = {0.1, 0.3, 0.5, 0.7, 0.9};
    int top_n = 5;
    int synth_count = 500;
    int synth_size = 96;

    auto* c_train = app.add_subcommand("train", "train a sparse model");
    add_common(c_train, cfg);
    c_train->add_option("--out", out, "output directory");

    auto* c_eval = app.add_subcommand("eval", "evaluate a checkpoint on the test split");
    add_common(c_eval, cfg);
    c_eval->add_option("--checkpoint", ckpt_path, "checkpoint file")->required();
    c_eval->add_option("--out", out);

    auto* c_sweep = app.add_subcommand("sweep", "sparsity x split grid");
    add_common(c_sweep, cfg);
    c_sweep->add_option("--out", out);
    c_sweep->add_option("--k-list", k_list, "sparsity rows");
    c_sweep->add_option("--split-list", split_list, "split columns");

    auto* c_params = app.add_subcommand("params", "parameter count table");
    c_params->add_option("--arch", cfg.arch);
    c_params->add_option("--k-list", k_list);

    auto* c_predict = app.add_subcommand("predict", "decode grasps for image files");
    c_predict->add_option("--checkpoint", ckpt_path)->required();
    c_predict->add_option("--out", out);
    c_predict->add_option("--top-n", top_n);
    c_predict->add_option("--smoothing-sigma", cfg.smoothing_sigma);
    c_predict->add_option("images", images, "image files")->required();

    auto* c_synth = app.add_subcommand("synth", "generate a synthetic dataset");
    c_synth->add_option("--out", out)->required();
    c_synth->add_option("--count", synth_count);
    c_synth->add_option("--size", synth_size);
    c_synth->add_option("--seed", cfg.seed);

    CLI11_PARSE(app, argc, argv);

    if (c_train->parsed()) {
        auto data = sg::load_dataset(cfg);
        auto result = sg::train(cfg, data, out);
        std::ofstream log((fs::path(out) / "train_log.csv").string());
        log << "epoch,train_loss,val_accuracy\n";
        for (const auto& e : result.log)
            log << e.epoch << "," << e.train_loss << "," << e.val_accuracy << "\n";
        std::printf("best val accuracy %.2f%% at epoch %d (%.1fs), checkpoint %s\n",
                    result.best_val_accuracy * 100.0, result.best_epoch, result.wall_seconds,
                    result.checkpoint_path.c_str());
    } else if (c_eval->parsed()) {
        auto ckpt = sg::Checkpoint::load(ckpt_path);
        auto model = sg::model_from_checkpoint(ckpt);
        auto data = sg::load_dataset(cfg);
        auto split = sg::split_indices(static_cast<int>(data.size()),
                                       sg::SplitSpec{cfg.split, cfg.seed});
        std::vector<sg::DatasetSample> test;
        for (int i : split.test) test.push_back(data[static_cast<size_t>(i)]);
        auto report = sg::evaluate(*model, test, cfg.smoothing_sigma);
        report.config_echo = cfg.to_json();
        fs::create_directories(out);
        std::ofstream((fs::path(out) / "report.json").string()) << report.to_json();
        std::printf("accuracy %.2f%% (%d/%d), active params %lld of %lld\n",
                    report.accuracy * 100.0, report.valid_count, report.test_count,
                    static_cast<long long>(report.params_active),
                    static_cast<long long>(report.params_total));
    } else if (c_sweep->parsed()) {
        auto grid = sg::sweep(cfg, k_list, split_list, out);
        std::printf("%s", grid.render_text().c_str());
    } else if (c_params->parsed()) {
        auto rows = sg::param_report_table(cfg.arch, k_list);
        std::printf("%-6s %12s %12s\n", "K", "total", "active");
        for (const auto& r : rows)
            std::printf("%-6.0f %12lld %12lld\n", r.k * 100.0f,
                        static_cast<long long>(r.total), static_cast<long long>(r.active));
    } else if (c_predict->parsed()) {
        auto ckpt = sg::Checkpoint::load(ckpt_path);
        const int n = sg::predict(ckpt, images, out, top_n, cfg.smoothing_sigma);
        std::printf("wrote grasp records for %d image(s) to %s\n", n, out.c_str());
    } else if (c_synth->parsed()) {
        auto samples = sg::synth_generate(synth_count, synth_size, cfg.seed);
        sg::synth_write(samples, out);
        std::printf("wrote %d synthetic samples to %s\n", synth_count, out.c_str());
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    try {
        return run(argc, argv);
    } catch (const std::invalid_argument& e) {
        std::fprintf(stderr, "config error: %s\n", e.what());
        return 1;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    }
}
