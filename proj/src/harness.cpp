#include "sparsegrasp/harness.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>
#include <stdexcept>

#include "json.hpp"

#include "sparsegrasp/adam.hpp"
#include "sparsegrasp/diag.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace sg {

namespace {

double now_seconds() {
    return std::chrono::duration<double>(
               std::chrono::steady_clock::now().time_since_epoch())
        .count();
}

constexpr char kMagic[8] = {'S', 'G', 'R', 'A', 'S', 'P', '1', '\n'};

void write_container(const std::string& path, json header,
                     const std::vector<std::pair<std::string, TensorPtr>>& arrays) {
    json manifest = json::array();
    for (const auto& [name, t] : arrays) manifest.push_back({{"name", name}, {"shape", t->shape}});
    header["arrays"] = manifest;
    const std::string htext = header.dump();
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + path);
    out.write(kMagic, 8);
    const uint64_t hlen = htext.size();
    out.write(reinterpret_cast<const char*>(&hlen), 8);
    out.write(htext.data(), static_cast<std::streamsize>(htext.size()));
    for (const auto& [name, t] : arrays)
        out.write(reinterpret_cast<const char*>(t->v.data()),
                  static_cast<std::streamsize>(t->v.size() * sizeof(float)));
    if (!out) throw std::runtime_error("write failed: " + path);
}

std::pair<json, std::vector<std::pair<std::string, TensorPtr>>> read_container(
    const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open " + path);
    char magic[8];
    in.read(magic, 8);
    if (!in || std::memcmp(magic, kMagic, 8) != 0)
        throw std::runtime_error("not a container file: " + path);
    uint64_t hlen = 0;
    in.read(reinterpret_cast<char*>(&hlen), 8);
    std::string htext(hlen, '\0');
    in.read(htext.data(), static_cast<std::streamsize>(hlen));
    const json header = json::parse(htext);
    std::vector<std::pair<std::string, TensorPtr>> arrays;
    for (const auto& m : header.at("arrays")) {
        auto t = make_tensor(m.at("shape").get<std::vector<int>>());
        in.read(reinterpret_cast<char*>(t->v.data()),
                static_cast<std::streamsize>(t->v.size() * sizeof(float)));
        if (!in) throw std::runtime_error("truncated container: " + path);
        arrays.emplace_back(m.at("name").get<std::string>(), t);
    }
    return {header, arrays};
}

GraspRectangle predicted_rectangle(const GraspPoseImage& pose) {
    GraspRectangle r;
    r.cx = pose.x;
    r.cy = pose.y;
    r.angle = pose.theta;
    // Square jaw footprint: as tall as the opening is wide, tolerant to the
    // center sliding along the object axis.
    r.width = std::max(pose.width, 1.0);
    r.height = std::max(pose.width, 1.0);
    return r;
}

}  // namespace

int TrainConfig::resolved_epochs() const {
    if (epochs > 0) return epochs;
    return arch.find("grconvnet") != std::string::npos ? 50 : 30;
}

std::string TrainConfig::to_json() const {
    json j;
    j["arch"] = arch;
    j["k_fraction"] = k_fraction;
    j["split"] = split;
    j["batch_size"] = batch_size;
    j["lr"] = lr;
    j["epochs"] = epochs;
    j["seed"] = seed;
    j["loss"] = loss;
    j["loss_beta"] = loss_beta;
    j["dataset"] = dataset;
    j["data_dir"] = data_dir;
    j["synth_count"] = synth_count;
    j["smoothing_sigma"] = smoothing_sigma;
    j["augment"] = augment;
    j["val_fraction"] = val_fraction;
    return j.dump();
}

TrainConfig TrainConfig::from_json(const std::string& text) {
    const json j = json::parse(text);
    TrainConfig c;
    c.arch = j.value("arch", c.arch);
    c.k_fraction = j.value("k_fraction", c.k_fraction);
    c.split = j.value("split", c.split);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.lr = j.value("lr", c.lr);
    c.epochs = j.value("epochs", c.epochs);
    c.seed = j.value("seed", c.seed);
    c.loss = j.value("loss", c.loss);
    c.loss_beta = j.value("loss_beta", c.loss_beta);
    c.dataset = j.value("dataset", c.dataset);
    c.data_dir = j.value("data_dir", c.data_dir);
    c.synth_count = j.value("synth_count", c.synth_count);
    c.smoothing_sigma = j.value("smoothing_sigma", c.smoothing_sigma);
    c.augment = j.value("augment", c.augment);
    c.val_fraction = j.value("val_fraction", c.val_fraction);
    return c;
}

std::string EvalReport::to_json() const {
    json j;
    j["test_count"] = test_count;
    j["valid_count"] = valid_count;
    j["accuracy"] = accuracy;
    j["params_total"] = params_total;
    j["params_active"] = params_active;
    j["wall_seconds"] = wall_seconds;
    j["config"] = config_echo.empty() ? json() : json::parse(config_echo);
    json per = json::array();
    for (size_t i = 0; i < per_image_valid.size(); ++i)
        per.push_back({{"id", i < image_ids.size() ? image_ids[i] : ""},
                       {"valid", per_image_valid[i] != 0}});
    j["per_image"] = per;
    return j.dump(2);
}

void Checkpoint::save(const std::string& path) const {
    json header;
    header["kind"] = "checkpoint";
    header["format_version"] = 1;
    header["arch"] = json::parse(arch_json);
    header["config"] = config_json.empty() ? json() : json::parse(config_json);
    header["seed"] = seed;
    header["k_fraction"] = k_fraction;
    write_container(path, header, arrays);
}

Checkpoint Checkpoint::load(const std::string& path) {
    auto [header, arrays] = read_container(path);
    if (header.value("kind", "") != "checkpoint")
        throw std::runtime_error("not a checkpoint: " + path);
    Checkpoint c;
    c.arch_json = header.at("arch").dump();
    c.config_json = header.at("config").is_null() ? "" : header.at("config").dump();
    c.seed = header.at("seed").get<uint32_t>();
    c.k_fraction = header.at("k_fraction").get<float>();
    c.arrays = std::move(arrays);
    return c;
}

void save_named_arrays(const std::string& path,
                       const std::vector<std::pair<std::string, TensorPtr>>& arrays) {
    json header;
    header["kind"] = "arrays";
    header["format_version"] = 1;
    write_container(path, header, arrays);
}

std::vector<std::pair<std::string, TensorPtr>> load_named_arrays(const std::string& path) {
    return read_container(path).second;
}

Checkpoint snapshot_model(Model& model, const TrainConfig& config) {
    Checkpoint c;
    c.arch_json = model.arch().to_json();
    c.config_json = config.to_json();
    c.seed = config.seed;
    c.k_fraction = model.sparsity().k_fraction;
    for (auto& a : model.named_arrays()) {
        auto copy = make_tensor(a.tensor->shape);
        copy->v = a.tensor->v;
        c.arrays.emplace_back(a.name, copy);
    }
    return c;
}

std::unique_ptr<Model> model_from_checkpoint(const Checkpoint& ckpt) {
    SparsityConfig sc;
    sc.k_fraction = ckpt.k_fraction;
    sc.seed = ckpt.seed;
    auto model = std::make_unique<Model>(ArchitectureSpec::from_json(ckpt.arch_json), sc);
    std::map<std::string, TensorPtr> by_name(ckpt.arrays.begin(), ckpt.arrays.end());
    for (auto& a : model->named_arrays()) {
        if (a.name.find(".bn_") != std::string::npos) continue;  // handled below
        auto it = by_name.find(a.name);
        if (it == by_name.end())
            throw std::runtime_error("checkpoint missing array " + a.name + " for arch " +
                                     ArchitectureSpec::from_json(ckpt.arch_json).name);
        if (it->second->shape != a.tensor->shape)
            throw std::runtime_error("checkpoint shape mismatch for " + a.name);
        a.tensor->v = it->second->v;
    }
    for (auto& [name, bn] : model->bn_accessors()) {
        auto mit = by_name.find(name + ".bn_mean");
        auto vit = by_name.find(name + ".bn_var");
        if (mit == by_name.end() || vit == by_name.end())
            throw std::runtime_error("checkpoint missing batchnorm stats for " + name);
        bn->running_mean = mit->second->v;
        bn->running_var = vit->second->v;
        bn->seen_batch = true;
    }
    model->set_k_fraction(ckpt.k_fraction);  // refresh masks from loaded scores
    return model;
}

std::vector<DatasetSample> load_dataset(const TrainConfig& config) {
    std::string dir = config.data_dir;
    if (dir.empty()) {
        const char* root = std::getenv("SPARSEGRASP_DATA_ROOT");
        if (root) dir = std::string(root) + "/" + config.dataset;
    }
    if (config.dataset == "synthetic") {
        const int size = ArchitectureSpec::by_name(config.arch).input_size;
        if (!dir.empty() && fs::exists(dir) && !discover_cornell(dir).empty())
            return load_cornell_dir(dir);
        auto samples = synth_generate(config.synth_count, size, config.seed);
        if (!dir.empty()) {
            // exercise the Cornell loader path end to end
            synth_write(samples, dir);
            return load_cornell_dir(dir);
        }
        return samples;
    }
    if (dir.empty())
        throw std::invalid_argument("no data directory: pass --data-dir or set SPARSEGRASP_DATA_ROOT");
    if (config.dataset == "cornell") return load_cornell_dir(dir);
    if (config.dataset == "jacquard") return load_jacquard_dir(dir);
    throw std::invalid_argument("unknown dataset kind: " + config.dataset);
}

EvalReport evaluate(Model& model, const std::vector<DatasetSample>& test_set,
                    double smoothing_sigma) {
    const double t0 = now_seconds();
    EvalReport r;
    const double width_scale = model.arch().width_scale;
    for (const auto& s : test_set) {
        Tape tape;
        auto maps = model.forward(tape, sample_to_input(s), false);
        tape.clear();
        const auto pose = decode_best_grasp(maps, smoothing_sigma, width_scale);
        bool ok = false;
        if (!s.rects.empty())
            ok = is_valid_grasp(predicted_rectangle(pose), s.rects).valid;
        r.per_image_valid.push_back(ok ? 1 : 0);
        r.image_ids.push_back(s.id);
        r.valid_count += ok ? 1 : 0;
    }
    r.test_count = static_cast<int>(test_set.size());
    r.accuracy = r.test_count ? static_cast<double>(r.valid_count) / r.test_count : 0.0;
    const auto pr = model.param_report();
    r.params_total = pr.maskable_total;
    r.params_active = pr.maskable_active;
    r.wall_seconds = now_seconds() - t0;
    return r;
}

TrainResult train(const TrainConfig& config, const std::vector<DatasetSample>& data,
                  const std::string& out_dir) {
    const double t0 = now_seconds();
    fs::create_directories(out_dir);

    const auto split = split_indices(static_cast<int>(data.size()),
                                     SplitSpec{config.split, config.seed});
    {
        std::set<int> tr(split.train.begin(), split.train.end());
        for (int i : split.test)
            if (tr.count(i)) throw std::logic_error("train/test partitions overlap");
    }
    const int nval = static_cast<int>(std::floor(config.val_fraction * split.train.size()));
    std::vector<int> train_idx(split.train.begin(), split.train.end() - nval);
    std::vector<int> val_idx(split.train.end() - nval, split.train.end());

    const auto arch = ArchitectureSpec::by_name(config.arch);
    SparsityConfig sc;
    sc.k_fraction = config.k_fraction;
    sc.seed = config.seed;
    Model model(arch, sc);
    const uint64_t frozen_hash = model.weight_hash();

    Adam opt(config.lr);
    for (auto& p : model.score_params()) opt.add_param(p);

    const int S = arch.input_size;
    const bool use_augment = config.augment;

    // ground-truth maps for non-augmented samples, built once
    std::vector<GroundTruthMaps> targets(data.size());
    if (!use_augment)
        for (int i : train_idx)
            targets[static_cast<size_t>(i)] =
                rasterize_maps(data[static_cast<size_t>(i)].rects, S, S, arch.width_scale);

    std::vector<DatasetSample> val_samples;
    for (int i : val_idx) val_samples.push_back(data[static_cast<size_t>(i)]);

    TrainResult result;
    const int epochs = config.resolved_epochs();
    const std::string ckpt_path = (fs::path(out_dir) / "best.ckpt").string();

    for (int epoch = 0; epoch < epochs; ++epoch) {
        std::seed_seq eseed{config.seed, static_cast<uint32_t>(epoch), 0x5eedu};
        std::mt19937 erng(eseed);
        std::vector<int> order = train_idx;
        std::shuffle(order.begin(), order.end(), erng);

        double loss_sum = 0.0;
        int batches = 0;
        for (size_t b0 = 0; b0 < order.size(); b0 += static_cast<size_t>(config.batch_size)) {
            const int B = static_cast<int>(
                std::min(static_cast<size_t>(config.batch_size), order.size() - b0));
            auto input = make_tensor({B, 4, S, S});
            auto tq = make_tensor({B, 1, S, S});
            auto tc = make_tensor({B, 1, S, S});
            auto ts = make_tensor({B, 1, S, S});
            auto tw = make_tensor({B, 1, S, S});
            const int64_t plane = static_cast<int64_t>(S) * S;
            for (int bi = 0; bi < B; ++bi) {
                const int si = order[b0 + static_cast<size_t>(bi)];
                const DatasetSample* sample = &data[static_cast<size_t>(si)];
                DatasetSample augmented;
                GroundTruthMaps maps;
                if (use_augment) {
                    std::seed_seq aseed{config.seed, static_cast<uint32_t>(epoch),
                                        static_cast<uint32_t>(si)};
                    std::mt19937 arng(aseed);
                    auto res = augment(*sample, AugmentConfig{}, arng);
                    if (res) {
                        augmented = std::move(res->sample);
                        sample = &augmented;
                    }
                    maps = rasterize_maps(sample->rects, S, S, arch.width_scale);
                } else {
                    maps = targets[static_cast<size_t>(si)];
                }
                auto in1 = sample_to_input(*sample);
                std::memcpy(input->v.data() + static_cast<int64_t>(bi) * 4 * plane,
                            in1->v.data(), sizeof(float) * 4 * static_cast<size_t>(plane));
                auto copy_plane = [&](TensorPtr dst, const TensorPtr& src) {
                    std::memcpy(dst->v.data() + static_cast<int64_t>(bi) * plane, src->v.data(),
                                sizeof(float) * static_cast<size_t>(plane));
                };
                copy_plane(tq, maps.quality);
                copy_plane(tc, maps.cos2theta);
                copy_plane(ts, maps.sin2theta);
                copy_plane(tw, maps.width);
            }

            Tape tape;
            auto out = model.forward(tape, input, true);
            auto plane_loss = [&](const TensorPtr& pred, const TensorPtr& target) {
                return config.loss == "mse" ? mse_loss(tape, pred, target)
                                            : smooth_l1_loss(tape, pred, target, config.loss_beta);
            };
            auto loss = add_scalars(tape, {plane_loss(out.quality, tq), plane_loss(out.cos2theta, tc),
                                           plane_loss(out.sin2theta, ts), plane_loss(out.width, tw)});
            if (!std::isfinite(loss->v[0]))
                throw std::runtime_error("non-finite loss at epoch " + std::to_string(epoch) +
                                         " batch " + std::to_string(batches));
            tape.backward(loss);
            model.accumulate_score_grads();
            opt.step();
            opt.zero_grad();
            tape.clear();
            loss_sum += loss->v[0];
            ++batches;
        }

        if (model.weight_hash() != frozen_hash)
            throw std::logic_error("frozen weights changed during training");

        EpochLog log;
        log.epoch = epoch;
        log.train_loss = batches ? loss_sum / batches : 0.0;
        log.weight_hash = frozen_hash;
        if (!val_samples.empty())
            log.val_accuracy = evaluate(model, val_samples, config.smoothing_sigma).accuracy;
        result.log.push_back(log);

        if (result.best_epoch < 0 || log.val_accuracy > result.best_val_accuracy) {
            result.best_val_accuracy = log.val_accuracy;
            result.best_epoch = epoch;
            snapshot_model(model, config).save(ckpt_path);
        }
    }

    result.checkpoint_path = ckpt_path;
    result.wall_seconds = now_seconds() - t0;
    return result;
}

std::string ExperimentGrid::render_text() const {
    std::ostringstream os;
    os << "K\\split ";
    for (double s : splits) {
        std::ostringstream c;
        c << static_cast<int>(s * 100) << "-" << static_cast<int>((1 - s) * 100 + 0.5);
        os << " | " << c.str();
        for (size_t i = c.str().size(); i < 7; ++i) os << ' ';
    }
    os << "\n";
    for (size_t ki = 0; ki < k_values.size(); ++ki) {
        std::ostringstream row;
        row << static_cast<int>(k_values[ki] * 100 + 0.5f) << "%";
        os << row.str();
        for (size_t i = row.str().size(); i < 8; ++i) os << ' ';
        for (size_t si = 0; si < splits.size(); ++si) {
            const auto& cell = cells[ki * splits.size() + si];
            char buf[16];
            if (cell.ok)
                std::snprintf(buf, sizeof(buf), "%6.2f ", cell.accuracy * 100.0);
            else
                std::snprintf(buf, sizeof(buf), "  FAIL ");
            os << " | " << buf;
        }
        os << "\n";
    }
    return os.str();
}

std::string ExperimentGrid::render_csv() const {
    std::ostringstream os;
    os << "k";
    for (double s : splits)
        os << "," << static_cast<int>(s * 100) << "-" << static_cast<int>((1 - s) * 100 + 0.5);
    os << "\n";
    for (size_t ki = 0; ki < k_values.size(); ++ki) {
        os << k_values[ki];
        for (size_t si = 0; si < splits.size(); ++si) {
            const auto& cell = cells[ki * splits.size() + si];
            os << ",";
            if (cell.ok)
                os << cell.accuracy * 100.0;
            else
                os << "error";
        }
        os << "\n";
    }
    return os.str();
}

ExperimentGrid sweep(const TrainConfig& base, const std::vector<float>& k_values,
                     const std::vector<double>& splits, const std::string& out_dir) {
    fs::create_directories(out_dir);
    ExperimentGrid grid;
    grid.k_values = k_values;
    grid.splits = splits;
    auto data = load_dataset(base);
    for (float k : k_values) {
        for (double split : splits) {
            GridCell cell;
            cell.k = k;
            cell.split = split;
            std::ostringstream cname;
            cname << "cell_k" << static_cast<int>(k * 100 + 0.5f) << "_split"
                  << static_cast<int>(split * 100 + 0.5);
            const std::string cell_dir = (fs::path(out_dir) / cname.str()).string();
            try {
                TrainConfig cfg = base;
                cfg.k_fraction = k;
                cfg.split = split;
                auto tr = train(cfg, data, cell_dir);
                auto ckpt = Checkpoint::load(tr.checkpoint_path);
                auto model = model_from_checkpoint(ckpt);
                const auto sp = split_indices(static_cast<int>(data.size()),
                                              SplitSpec{split, cfg.seed});
                std::vector<DatasetSample> test;
                for (int i : sp.test) test.push_back(data[static_cast<size_t>(i)]);
                auto report = evaluate(*model, test, cfg.smoothing_sigma);
                cell.accuracy = report.accuracy;
                cell.ok = true;
                std::ofstream((fs::path(cell_dir) / "report.json").string())
                    << report.to_json();
            } catch (const std::exception& e) {
                cell.error = e.what();
            }
            grid.cells.push_back(cell);
        }
    }
    std::ofstream((fs::path(out_dir) / "grid.txt").string()) << grid.render_text();
    std::ofstream((fs::path(out_dir) / "grid.csv").string()) << grid.render_csv();
    return grid;
}

std::vector<ParamTableRow> param_report_table(const std::string& arch,
                                              const std::vector<float>& k_values) {
    SparsityConfig sc;
    sc.k_fraction = 1.0f;
    Model model(ArchitectureSpec::by_name(arch), sc);
    std::vector<ParamTableRow> rows;
    for (float k : k_values) {
        model.set_k_fraction(k);
        const auto pr = model.param_report();
        rows.push_back({k, pr.maskable_total, pr.maskable_active});
    }
    return rows;
}

int predict(const Checkpoint& ckpt, const std::vector<std::string>& image_files,
            const std::string& out_dir, int top_n, double smoothing_sigma) {
    fs::create_directories(out_dir);
    auto model = model_from_checkpoint(ckpt);
    const int S = model->arch().input_size;
    int written = 0;
    for (const auto& file : image_files) {
        DatasetSample s;
        try {
            std::string depth = file;
            const auto pos = depth.rfind("r.png");
            if (pos != std::string::npos) depth = depth.substr(0, pos) + "d.png";
            if (depth != file && fs::exists(depth))
                s = load_rgbd_image(file, depth);
            else
                s = load_rgbd_image(file, "");  // flat depth plane
        } catch (const std::exception& e) {
            diag::warn("predict: skipping " + file + ": " + e.what());
            continue;
        }
        if (s.rgb->dim(1) != S || s.rgb->dim(2) != S) {
            diag::warn("predict: skipping " + file + ": expected " + std::to_string(S) +
                       "px input");
            continue;
        }
        Tape tape;
        auto maps = model->forward(tape, sample_to_input(s), false);
        tape.clear();
        const auto poses =
            decode_topn_grasps(maps, top_n, S / 16.0, smoothing_sigma, model->arch().width_scale);
        json rec;
        rec["image"] = file;
        for (const auto& p : poses)
            rec["grasps"].push_back({{"x", p.x},
                                     {"y", p.y},
                                     {"theta", p.theta},
                                     {"width", p.width},
                                     {"quality", p.quality}});
        const std::string stem = fs::path(file).stem().string();
        std::ofstream((fs::path(out_dir) / (stem + "_grasps.json")).string()) << rec.dump(2);
        save_named_arrays((fs::path(out_dir) / (stem + "_maps.bin")).string(),
                          {{"quality", maps.quality},
                           {"cos2theta", maps.cos2theta},
                           {"sin2theta", maps.sin2theta},
                           {"width", maps.width}});
        ++written;
    }
    return written;
}

}  // namespace sg
