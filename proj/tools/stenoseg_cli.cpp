// Command-line front end: ingest | train | eval | predict | report.

#include <CLI11.hpp>

#include "stenoseg/cli.hpp"

int main(int argc, char** argv) {
    CLI::App app{"Coronary stenosis segmentation laboratory"};
    app.require_subcommand(1);

    std::string config, out, checkpoint, annotations, images_dir, image;
    std::vector<std::string> csvs;
    bool resume = false, prob_map = false;
    std::size_t sample_size = 512;
    std::uint64_t seed = 0;
    bool seed_set = false;

    auto* ingest = app.add_subcommand("ingest", "Prepare the sample cache from annotations");
    ingest->add_option("--annotations", annotations, "COCO-style JSON file")->required();
    ingest->add_option("--images", images_dir, "Directory holding the image files")->required();
    ingest->add_option("--out", out, "Cache output directory")->required();
    ingest->add_option("--sample-size", sample_size, "Working resolution (default 512)");

    auto* train = app.add_subcommand("train", "K-fold training per a run configuration");
    train->add_option("--config", config, "Run configuration file")->required();
    train->add_option("--out", out, "Output directory")->required();
    train->add_flag("--resume", resume, "Resume each fold from its best checkpoint");
    train->add_option("--seed", seed, "Override the configured seed")->each([&](const std::string&) {
        seed_set = true;
    });

    auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint; emit metrics CSV + JSONL");
    eval->add_option("--config", config, "Run configuration file")->required();
    eval->add_option("--checkpoint", checkpoint, "Checkpoint file")->required();
    eval->add_option("--out", out, "Output directory")->required();

    auto* predict = app.add_subcommand("predict", "Write a binary mask for one image");
    predict->add_option("--config", config, "Run configuration file")->required();
    predict->add_option("--checkpoint", checkpoint, "Checkpoint file")->required();
    predict->add_option("--image", image, "Input image (PGM or PNG)")->required();
    predict->add_option("--out", out, "Output mask path (.png or .pgm)")->required();
    predict->add_flag("--prob", prob_map, "Also write a 16-bit probability map");

    auto* report = app.add_subcommand("report", "Merge metrics CSVs into a table + SVG chart");
    report->add_option("csvs", csvs, "Metrics CSV files")->required();
    report->add_option("--out", out, "Output directory")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : stenoseg::cli::kUsageError;
    }

    using namespace stenoseg::cli;
    try {
        if (*ingest) return cmd_ingest(annotations, images_dir, out, sample_size);
        if (*train) {
            if (seed_set) {
                // materialize the override by rewriting a temp config copy
                auto cfg = stenoseg::load_config(config);
                cfg.seed = seed;
                cfg.optim.seed = seed;
                const std::string tmp = out + ".config.override";
                std::filesystem::create_directories(
                    std::filesystem::path(tmp).parent_path().string().empty()
                        ? "."
                        : std::filesystem::path(tmp).parent_path().string());
                detail::write_file(tmp, stenoseg::echo_config(cfg));
                const int rc = cmd_train(tmp, out, resume);
                std::filesystem::remove(tmp);
                return rc;
            }
            return cmd_train(config, out, resume);
        }
        if (*eval) return cmd_eval(config, checkpoint, out);
        if (*predict) return cmd_predict(config, checkpoint, image, out, prob_map);
        if (*report) return cmd_report(csvs, out);
    } catch (const stenoseg::ConfigError& e) {
        std::cerr << e.what() << "\n";
        return kUsageError;
    } catch (const stenoseg::NumericError& e) {
        std::cerr << e.what() << "\n";
        return kNumericFailure;
    } catch (const std::exception& e) {
        std::cerr << e.what() << "\n";
        return kPartialDataFailure;
    }
    return kUsageError;
}
