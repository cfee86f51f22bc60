#pragma once

// Batch command implementations behind the command-line tool: ingest, train,
// eval, predict, report. Each validates its inputs before producing any
// output files, and returns a process exit code:
//   0 success, 1 usage/config error, 2 partial data failure, 3 numeric failure.

#include <filesystem>
#include <iostream>
#include <set>

#include "stenoseg/config.hpp"
#include "stenoseg/report.hpp"

namespace stenoseg::cli {

constexpr int kOk = 0;
constexpr int kUsageError = 1;
constexpr int kPartialDataFailure = 2;
constexpr int kNumericFailure = 3;

namespace fs = std::filesystem;

namespace detail {

inline std::string hex64(std::uint64_t v) {
    char buf[20];
    std::snprintf(buf, sizeof buf, "%016llx", (unsigned long long)v);
    return buf;
}

inline void write_file(const std::string& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IOError("cannot write: " + path);
    out << content;
}

inline std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IOError("cannot read: " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

// Samples for a run: synthetic blob corpus or the ingested cache.
inline std::vector<Sample> resolve_samples(const RunConfig& cfg) {
    if (cfg.synthetic) {
        std::vector<Sample> out;
        for (auto& b : generate_blob_dataset(cfg.synthetic_count, cfg.synthetic_size, cfg.seed))
            out.push_back(std::move(b.sample));
        return out;
    }
    if (cfg.cache_dir.empty())
        throw ConfigError("data.cache_dir is required unless data.synthetic=true");
    const auto manifest = nlohmann::json::parse(read_file(cfg.cache_dir + "/manifest.json"));
    std::vector<Sample> out;
    for (const auto& entry : manifest.at("samples"))
        out.push_back(load_sample(entry.at("id").get<std::string>(), cfg.cache_dir));
    if (out.empty()) throw DataError("no samples in cache manifest");
    return out;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// ingest: prepare the sample cache + manifest from COCO-style annotations.

inline int cmd_ingest(const std::string& annotations_path, const std::string& images_dir,
                      const std::string& out_dir, std::size_t sample_size = 512,
                      std::ostream& err = std::cerr) {
    AnnotationSet set;
    try {
        set = load_annotations(annotations_path);
    } catch (const DataError& e) {
        err << "ingest: " << e.what() << "\n";
        return kPartialDataFailure;
    } catch (const IOError& e) {
        err << "ingest: " << e.what() << "\n";
        return kUsageError;
    }
    fs::create_directories(out_dir);
    nlohmann::json manifest;
    manifest["sample_size"] = sample_size;
    auto& list = manifest["samples"] = nlohmann::json::array();
    std::size_t failures = 0;
    for (const auto& im : set.images) {
        const std::string id = fs::path(im.file_name).stem().string();
        try {
            std::vector<std::string> warnings;
            auto s = prepare_sample(id, images_dir + "/" + im.file_name,
                                    set.annotations_for(im.id), sample_size, &warnings);
            for (const auto& w : warnings) err << "ingest: " << im.file_name << ": " << w << "\n";
            save_sample(s, out_dir);
            std::size_t fg = 0;
            for (auto v : s.mask) fg += v;
            list.push_back({{"id", id},
                            {"checksum", detail::hex64(sample_checksum(s))},
                            {"foreground_pixels", fg}});
        } catch (const std::exception& e) {
            err << "ingest: " << im.file_name << ": " << e.what() << "\n";
            ++failures;
        }
    }
    manifest["count"] = list.size();
    manifest["failures"] = failures;
    detail::write_file(out_dir + "/manifest.json", manifest.dump(2) + "\n");
    return failures ? kPartialDataFailure : kOk;
}

// ---------------------------------------------------------------------------
// train: k-fold training per the run configuration.

inline int cmd_train(const std::string& config_path, const std::string& out_dir,
                     bool resume = false, std::ostream& err = std::cerr,
                     std::ostream& info = std::cout) {
    RunConfig cfg;
    std::vector<Sample> samples;
    FoldPlan plan;
    try {
        cfg = load_config(config_path);
        samples = detail::resolve_samples(cfg);
        std::vector<std::string> ids;
        for (const auto& s : samples) ids.push_back(s.id);
        plan = make_folds(ids, cfg.fold_count, cfg.seed);
    } catch (const ConfigError& e) {
        err << "train: " << e.what() << "\n";
        return kUsageError;
    } catch (const DataError& e) {
        err << "train: " << e.what() << "\n";
        return kPartialDataFailure;
    } catch (const IOError& e) {
        err << "train: " << e.what() << "\n";
        return kPartialDataFailure;
    }

    fs::create_directories(out_dir);
    detail::write_file(out_dir + "/config.txt", echo_config(cfg));
    try {
        for (std::size_t f = 0; f < plan.folds.size(); ++f) {
            const std::string fold_dir = out_dir + "/fold-" + std::to_string(f);
            fs::create_directories(fold_dir);
            auto net = build<float>(cfg.model_spec(), cfg.seed);
            Optimizer<float> opt(cfg.optim, net->parameters());
            std::mt19937_64 rng(cfg.seed);
            if (resume && fs::exists(fold_dir + "/best.ckpt")) {
                std::size_t step = 0;
                checkpoint_load(fold_dir + "/best.ckpt", net->registry, opt, rng, step);
                info << "resumed fold " << f << " from step " << step << "\n";
            }
            auto resolve = [&](const std::vector<std::string>& ids) {
                std::vector<const Sample*> out;
                for (const auto& id : ids)
                    for (const auto& s : samples)
                        if (s.id == id) out.push_back(&s);
                return out;
            };
            std::ofstream log(fold_dir + "/metrics.csv");
            auto res = run_training(*net, opt, resolve(plan.folds[f].train_ids),
                                    resolve(plan.folds[f].validation_ids), cfg.loss, fold_dir,
                                    cfg.eval_every, cfg.target_f1, &log, f);
            info << "fold " << f << ": " << res.steps_run << " steps, best F1 "
                 << res.best_f1 << " at step " << res.best_step << "\n";
        }
    } catch (const NumericError& e) {
        err << "train: " << e.what() << "\n";
        return kNumericFailure;
    }
    return kOk;
}

// ---------------------------------------------------------------------------
// eval: metrics CSV + per-image JSON-lines detail for a checkpoint.

inline int cmd_eval(const std::string& config_path, const std::string& checkpoint_path,
                    const std::string& out_dir, std::ostream& err = std::cerr) {
    RunConfig cfg;
    std::vector<Sample> samples;
    std::unique_ptr<Network<float>> net;
    try {
        cfg = load_config(config_path);
        samples = detail::resolve_samples(cfg);
        if (samples.empty()) throw DataError("no samples");
        net = build<float>(cfg.model_spec(), cfg.seed);
        Optimizer<float> opt(cfg.optim, net->parameters());
        std::mt19937_64 rng;
        std::size_t step = 0;
        checkpoint_load(checkpoint_path, net->registry, opt, rng, step);
    } catch (const ConfigError& e) {
        err << "eval: " << e.what() << "\n";
        return kUsageError;
    } catch (const std::exception& e) {
        err << "eval: " << e.what() << "\n";
        return kPartialDataFailure;
    }
    try {
        std::vector<const Sample*> ptrs;
        for (const auto& s : samples) ptrs.push_back(&s);
        auto report = evaluate(*net, ptrs, cfg.threshold, variant_name(cfg.variant));
        fs::create_directories(out_dir);
        detail::write_file(out_dir + "/config.txt", echo_config(cfg));
        detail::write_file(out_dir + "/metrics.csv",
                           metrics_csv_header() + "\n" + metrics_csv_row(report) + "\n");
        std::ostringstream jl;
        for (std::size_t i = 0; i < ptrs.size(); ++i) {
            const auto& c = report.per_image[i];
            nlohmann::json j{{"id", ptrs[i]->id},
                             {"tp", c.tp},
                             {"fp", c.fp},
                             {"fn", c.fn},
                             {"tn", c.tn}};
            jl << j.dump() << "\n";
        }
        detail::write_file(out_dir + "/per_image.jsonl", jl.str());
    } catch (const NumericError& e) {
        err << "eval: " << e.what() << "\n";
        return kNumericFailure;
    }
    return kOk;
}

// ---------------------------------------------------------------------------
// predict: binary mask image (plus optional probability map) for one input.

inline int cmd_predict(const std::string& config_path, const std::string& checkpoint_path,
                       const std::string& image_path, const std::string& out_path,
                       bool probability_map = false, std::ostream& err = std::cerr) {
    RunConfig cfg;
    std::unique_ptr<Network<float>> net;
    GrayImage input;
    try {
        cfg = load_config(config_path);
        input = read_image(image_path);
        net = build<float>(cfg.model_spec(), cfg.seed);
        Optimizer<float> opt(cfg.optim, net->parameters());
        std::mt19937_64 rng;
        std::size_t step = 0;
        checkpoint_load(checkpoint_path, net->registry, opt, rng, step);
    } catch (const ConfigError& e) {
        err << "predict: " << e.what() << "\n";
        return kUsageError;
    } catch (const std::exception& e) {
        err << "predict: " << e.what() << "\n";
        return kPartialDataFailure;
    }
    try {
        auto sample = prepare_sample("input", image_path, {}, cfg.sample_size ? cfg.sample_size
                                                                              : input.width);
        auto [img, msk] = make_batch<float>({&sample});
        auto out = net->forward(img);
        auto pred = thresholded_mask(out.primary, cfg.threshold);
        const std::size_t S = sample.size();
        // back to the input resolution
        auto mask_native =
            resize_nearest(pred, S, S, input.height, input.width);
        GrayImage mask_img;
        mask_img.width = input.width;
        mask_img.height = input.height;
        mask_img.max_value = 255;
        mask_img.pixels.resize(mask_native.size());
        for (std::size_t i = 0; i < mask_native.size(); ++i)
            mask_img.pixels[i] = mask_native[i] ? 255 : 0;
        if (out_path.size() > 4 && out_path.substr(out_path.size() - 4) == ".png")
            write_png(out_path, mask_img);
        else
            write_pgm(out_path, mask_img);
        if (probability_map) {
            const auto& v = out.primary.values();
            std::vector<float> prob(S * S);
            for (std::size_t i = 0; i < S * S; ++i)
                prob[i] = 1.0f / (1.0f + std::exp(std::min(40.0f, v[i] - v[S * S + i])));
            auto prob_native = resize_bilinear(prob, S, S, input.height, input.width);
            GrayImage pm;
            pm.width = input.width;
            pm.height = input.height;
            pm.max_value = 65535;
            pm.pixels.resize(prob_native.size());
            for (std::size_t i = 0; i < prob_native.size(); ++i)
                pm.pixels[i] = std::uint16_t(std::clamp(prob_native[i], 0.0f, 1.0f) * 65535.0f);
            write_pgm(out_path + ".prob.pgm", pm);
        }
    } catch (const NumericError& e) {
        err << "predict: " << e.what() << "\n";
        return kNumericFailure;
    }
    return kOk;
}

// ---------------------------------------------------------------------------
// report: merged CSV + SVG bubble chart from one or more metrics CSVs.

inline int cmd_report(const std::vector<std::string>& csv_paths, const std::string& out_dir,
                      std::ostream& err = std::cerr) {
    if (csv_paths.empty()) {
        err << "report: need at least one metrics CSV\n";
        return kUsageError;
    }
    std::vector<ReportRow> rows;
    try {
        for (const auto& p : csv_paths)
            for (auto& r : parse_metrics_csv(detail::read_file(p))) rows.push_back(std::move(r));
    } catch (const IOError& e) {
        err << "report: " << e.what() << "\n";
        return kPartialDataFailure;
    }
    rows = merge_reports(std::move(rows));
    fs::create_directories(out_dir);
    detail::write_file(out_dir + "/combined.csv", render_merged_csv(rows));
    detail::write_file(out_dir + "/chart.svg", render_bubble_svg(rows));
    return kOk;
}

}  // namespace stenoseg::cli
