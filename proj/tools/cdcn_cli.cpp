#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "cdcn/checkpoint.hpp"
#include "cdcn/data.hpp"
#include "cdcn/image_io.hpp"
#include "cdcn/losses.hpp"
#include "cdcn/trainer.hpp"

extern "C" void openblas_set_num_threads(int);

namespace fs = std::filesystem;
using namespace cdcn;

namespace {

std::vector<SampleRecord> load_dir(const std::string& dir, const ModelConfig& model) {
    return load_dataset(read_manifest(dir), model.input_size, model.modalities);
}

void write_outputs(const std::string& out_dir, const EvalOutcome& outcome) {
    fs::create_directories(out_dir);
    const std::string csv = (fs::path(out_dir) / "scores.csv").string();
    write_score_csv(csv, outcome.scores);
    const std::string json = (fs::path(out_dir) / "report.json").string();
    std::ofstream out(json);
    if (!out) throw IoError("cannot write report: " + json);
    out << format_report_json(outcome.report) << "\n";
    std::cout << format_report_text(outcome.report);
    char line[64];
    std::snprintf(line, sizeof(line), "threshold %.6g\n", outcome.threshold);
    std::cout << line << "scores: " << csv << "\nreport: " << json << "\n";
}

int cmd_train(const std::string& config_path) {
    TrainConfig cfg = read_train_config(config_path);
    cfg.validate();
    if (cfg.train_data.empty())
        throw ValueError("train config: train_data is required");
    auto train_set = load_dir(cfg.train_data, cfg.model);
    std::vector<SampleRecord> dev_set;
    if (!cfg.dev_data.empty()) dev_set = load_dir(cfg.dev_data, cfg.model);

    TrainResult result = train_model(cfg, train_set, dev_set);
    const EpochLog& last = result.epochs.back();
    char line[160];
    std::snprintf(line, sizeof(line), "epoch %d mean_overall %.6g", last.epoch,
                  double(last.mean_overall));
    std::cout << line;
    if (last.has_dev) {
        std::snprintf(line, sizeof(line), " dev_acer %.4f", last.dev_acer);
        std::cout << line;
    }
    std::cout << "\nlast checkpoint: " << result.last_checkpoint
              << "\nbest checkpoint: " << result.best_checkpoint << "\n";
    return 0;
}

int cmd_eval(const std::string& ckpt, const std::string& data_dir,
             const std::string& policy_text, const std::string& out_dir,
             int batch_size) {
    ThresholdPolicy policy = parse_threshold_policy(policy_text);
    auto model = load_checkpoint(ckpt);
    auto records = load_dir(data_dir, model->config());
    EvalOutcome outcome = evaluate_model(*model, records, policy, batch_size);
    write_outputs(out_dir, outcome);
    return 0;
}

int cmd_predict(const std::string& ckpt, const std::vector<std::string>& images) {
    auto model = load_checkpoint(ckpt);
    const ModelConfig& cfg = model->config();

    auto to_input = [&](const std::string& path) {
        Tensor chw = image_to_tensor(read_png(path));
        if (chw.dim(0) == 1) {
            Tensor three({3, chw.dim(1), chw.dim(2)});
            const int64_t hw = chw.dim(1) * int64_t(chw.dim(2));
            for (int c = 0; c < 3; ++c)
                std::copy(chw.data(), chw.data() + hw, three.data() + c * hw);
            chw = three;
        }
        NoGradGuard guard;
        Tensor resized = resize(chw.reshape({1, 3, chw.dim(1), chw.dim(2)}),
                                cfg.input_size, cfg.input_size, ResizeMode::kBilinear);
        return resized;
    };

    NoGradGuard guard;
    if (cfg.modalities.size() == 1) {
        for (const std::string& path : images) {
            Tensor mask = model->forward({{cfg.modalities[0], to_input(path)}}, false);
            char line[64];
            std::snprintf(line, sizeof(line), " %.6f\n", double(predict_score(mask)));
            std::cout << path << line;
        }
        return 0;
    }
    if (images.size() != cfg.modalities.size()) {
        throw ValueError("model expects " + std::to_string(cfg.modalities.size()) +
                         " images (one per modality, in config order), got " +
                         std::to_string(images.size()));
    }
    std::map<Modality, Tensor> inputs;
    for (size_t i = 0; i < images.size(); ++i)
        inputs[cfg.modalities[i]] = to_input(images[i]);
    Tensor mask = model->forward(inputs, false);
    char line[64];
    std::snprintf(line, sizeof(line), "%.6f\n", double(predict_score(mask)));
    std::cout << line;
    return 0;
}

int cmd_fuse_scores(const std::vector<std::string>& files,
                    const std::vector<double>& weights,
                    const std::string& out_csv, const std::string& policy_text) {
    if (files.size() != weights.size())
        throw ValueError("need exactly one weight per input file");
    if (files.empty()) throw ValueError("no score files given");
    double total = 0.0;
    for (double w : weights) {
        if (w < 0.0) throw ValueError("weights must be non-negative");
        total += w;
    }
    if (std::abs(total - 1.0) > 1e-6) throw ValueError("weights must sum to 1");

    std::vector<std::vector<ScoredSample>> sets;
    for (const std::string& f : files) sets.push_back(read_score_csv(f));

    // every file must cover exactly the same sample ids
    std::map<std::string, size_t> order;
    for (size_t i = 0; i < sets[0].size(); ++i) order[sets[0][i].sample_id] = i;
    for (size_t f = 1; f < sets.size(); ++f) {
        std::set<std::string> a, b;
        for (const auto& s : sets[0]) a.insert(s.sample_id);
        for (const auto& s : sets[f]) b.insert(s.sample_id);
        if (a != b) {
            std::string diff;
            for (const auto& id : a)
                if (!b.count(id)) diff += " -" + id;
            for (const auto& id : b)
                if (!a.count(id)) diff += " +" + id;
            throw ValueError("sample ids differ between " + files[0] + " and " +
                             files[f] + ":" + diff);
        }
    }

    std::vector<ScoredSample> fused = sets[0];
    for (auto& s : fused) s.score *= weights[0];
    for (size_t f = 1; f < sets.size(); ++f) {
        for (const auto& s : sets[f]) {
            ScoredSample& dst = fused[order.at(s.sample_id)];
            if (s.label != dst.label || s.sub_protocol != dst.sub_protocol)
                throw ValueError("conflicting label or sub-protocol for sample '" +
                                 s.sample_id + "' in " + files[f]);
            dst.score += weights[f] * s.score;
        }
    }

    write_score_csv(out_csv, fused);
    ThresholdPolicy policy = parse_threshold_policy(policy_text);
    const double threshold = select_threshold(fused, policy);
    EvalReport report = build_report(fused, threshold);
    std::cout << format_report_text(report);
    char line[64];
    std::snprintf(line, sizeof(line), "threshold %.6g\n", threshold);
    std::cout << line << "fused scores: " << out_csv << "\n";
    return 0;
}

int cmd_synth_data(const std::string& out_dir, int n_live, int n_spoof,
                   uint32_t seed, int size) {
    auto records = synth_dataset(n_live, n_spoof, size, seed);
    write_dataset(out_dir, records);
    std::cout << "wrote " << records.size() << " samples under " << out_dir << "\n";
    return 0;
}

// channel-mean of a (1,C,H,W) activation as a min-max normalized gray image
Image8 feature_image(const Tensor& feat) {
    const int c = feat.dim(1), h = feat.dim(2), w = feat.dim(3);
    std::vector<float> mean(size_t(h) * w, 0.0f);
    for (int ch = 0; ch < c; ++ch) {
        const float* src = feat.data() + int64_t(ch) * h * w;
        for (size_t i = 0; i < mean.size(); ++i) mean[i] += src[i] / float(c);
    }
    float lo = mean[0], hi = mean[0];
    for (float v : mean) {
        lo = std::min(lo, v);
        hi = std::max(hi, v);
    }
    const float span = hi > lo ? hi - lo : 1.0f;
    for (float& v : mean) v = (v - lo) / span;
    return tensor_to_image(Tensor({1, h, w}, std::move(mean)));
}

int cmd_dump_features(const std::string& ckpt, const std::string& data_dir,
                      const std::string& sample_id, const std::string& out_dir) {
    auto model = load_checkpoint(ckpt);
    auto records = load_dir(data_dir, model->config());
    const SampleRecord* rec = nullptr;
    for (const auto& r : records)
        if (r.id == sample_id) rec = &r;
    if (!rec) throw ValueError("sample '" + sample_id + "' not found in " + data_dir);

    NoGradGuard guard;
    std::map<Modality, Tensor> inputs;
    for (const auto& [m, img] : rec->images)
        inputs[m] = img.reshape({1, img.dim(0), img.dim(1), img.dim(2)});
    ForwardTrace trace = model->forward_traced(inputs, false);

    fs::create_directories(out_dir);
    int written = 0;
    for (size_t b = 0; b < trace.branch_levels.size(); ++b) {
        const std::string& branch = trace.branch_names[b];
        const LevelFeatures& levels = trace.branch_levels[b];
        const std::pair<const char*, const Tensor*> taps[] = {
            {"low", &levels.low}, {"mid", &levels.mid}, {"high", &levels.high}};
        for (const auto& [level, feat] : taps) {
            const std::string path =
                (fs::path(out_dir) / (sample_id + "_" + branch + "_" + level + ".png"))
                    .string();
            write_png(path, feature_image(*feat));
            ++written;
        }
    }
    // the mask is already in [0,1]; keep its scale instead of min-max
    Tensor mask = trace.mask.reshape({1, trace.mask.dim(1), trace.mask.dim(2)});
    const std::string mask_path =
        (fs::path(out_dir) / (sample_id + "_mask.png")).string();
    write_png(mask_path, tensor_to_image(mask));
    ++written;
    std::cout << "wrote " << written << " images under " << out_dir << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    openblas_set_num_threads(1);

    CLI::App app{"central difference convolution networks for face anti-spoofing"};
    app.require_subcommand(1);

    std::string config_path;
    auto* train = app.add_subcommand("train", "train a model from a config file");
    train->add_option("--config", config_path, "key = value training config")
        ->required();

    std::string ckpt, data_dir, policy = "fixed:0.5", out_dir = ".";
    int batch_size = 8;
    auto* eval = app.add_subcommand("eval", "evaluate a checkpoint on a dataset");
    eval->add_option("--checkpoint", ckpt, "checkpoint file")->required();
    eval->add_option("--data", data_dir, "dataset directory")->required();
    eval->add_option("--threshold", policy, "fixed:<t> | min_acer | eer");
    eval->add_option("--out", out_dir, "output directory for scores.csv/report.json");
    eval->add_option("--batch-size", batch_size, "evaluation batch size");

    std::string predict_ckpt;
    std::vector<std::string> images;
    auto* predict = app.add_subcommand("predict", "score images with a checkpoint");
    predict->add_option("--checkpoint", predict_ckpt, "checkpoint file")->required();
    predict->add_option("--image", images,
                        "input PNG; repeat per sample (single-modal) or per "
                        "modality in config order (multi-modal)")
        ->required();

    std::vector<std::string> fuse_files;
    std::vector<double> fuse_weights;
    std::string fuse_out = "fused_scores.csv", fuse_policy = "min_acer";
    auto* fuse = app.add_subcommand("fuse-scores", "weighted fusion of score CSVs");
    fuse->add_option("--in", fuse_files, "score CSV files")
        ->required()
        ->delimiter(',');
    fuse->add_option("--weights", fuse_weights, "fusion weights, must sum to 1")
        ->required()
        ->delimiter(',');
    fuse->add_option("--out", fuse_out, "fused score CSV path");
    fuse->add_option("--threshold", fuse_policy, "fixed:<t> | min_acer | eer");

    std::string synth_out;
    int n_live = 8, n_spoof = 8, size = 64;
    uint32_t seed = 0;
    auto* synth = app.add_subcommand("synth-data", "generate a synthetic dataset");
    synth->add_option("--out", synth_out, "output directory")->required();
    synth->add_option("--live", n_live, "number of live samples");
    synth->add_option("--spoof", n_spoof, "number of spoof samples");
    synth->add_option("--seed", seed, "generator seed");
    synth->add_option("--size", size, "image size (multiple of 8)");

    std::string feat_ckpt, feat_data, feat_sample, feat_out = "features";
    auto* dump = app.add_subcommand("dump-features",
                                    "export level feature maps and the mask as PNGs");
    dump->add_option("--checkpoint", feat_ckpt, "checkpoint file")->required();
    dump->add_option("--data", feat_data, "dataset directory")->required();
    dump->add_option("--sample", feat_sample, "sample id to visualize")->required();
    dump->add_option("--out", feat_out, "output directory");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        // fold CLI11's exit-code zoo into the documented 0/1 contract
        return app.exit(e) == 0 ? 0 : 1;
    }

    try {
        if (app.got_subcommand(train)) return cmd_train(config_path);
        if (app.got_subcommand(eval))
            return cmd_eval(ckpt, data_dir, policy, out_dir, batch_size);
        if (app.got_subcommand(predict)) return cmd_predict(predict_ckpt, images);
        if (app.got_subcommand(fuse))
            return cmd_fuse_scores(fuse_files, fuse_weights, fuse_out, fuse_policy);
        if (app.got_subcommand(synth)) return cmd_synth_data(synth_out, n_live, n_spoof, seed, size);
        if (app.got_subcommand(dump))
            return cmd_dump_features(feat_ckpt, feat_data, feat_sample, feat_out);
    } catch (const ValueError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const ShapeError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 0;
}
