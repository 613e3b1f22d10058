// Command line front end for the benchmark pipeline.
// Exit codes: 0 success, 1 usage/config error, 2 stage failure.

#include <cstdio>
#include <filesystem>
#include <functional>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "vpbench/pipeline.hpp"
#include "vpbench/version.hpp"

namespace {

struct CommonOpts {
    std::string config_path;
    std::optional<std::uint64_t> seed;
    std::string out_dir;
    int workers = 0;
};

void add_common(CLI::App* cmd, CommonOpts& opts) {
    cmd->add_option("--config", opts.config_path, "Run configuration file (JSON)")
        ->check(CLI::ExistingFile);
    cmd->add_option("--seed", opts.seed, "Override the master seed");
    cmd->add_option("--out", opts.out_dir, "Override the output directory");
    cmd->add_option("--workers", opts.workers, "Worker threads for data generation")
        ->check(CLI::PositiveNumber);
}

vpbench::harness::RunConfig make_config(const CommonOpts& opts) {
    using vpbench::harness::RunConfig;
    RunConfig cfg = opts.config_path.empty() ? RunConfig::defaults()
                                             : RunConfig::load(opts.config_path);
    if (opts.seed) {
        cfg.master_seed = *opts.seed;
        cfg.derive_seeds();
    }
    if (!opts.out_dir.empty()) cfg.output_dir = opts.out_dir;
    if (opts.workers > 0) cfg.workers = opts.workers;
    cfg.validate();
    return cfg;
}

int run_stage(const CommonOpts& opts, const std::function<void(vpbench::harness::Pipeline&)>& fn) {
    std::optional<vpbench::harness::Pipeline> pipeline;
    try {
        pipeline.emplace(make_config(opts));
    } catch (const std::exception& e) {
        std::cerr << "configuration error: " << e.what() << "\n";
        return 1;
    }
    try {
        fn(*pipeline);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"vpbench: scores video predictors by how well executed robot "
                 "actions can be inferred from their predicted frames, next to "
                 "PSNR/SSIM/FVD-lite"};
    app.set_version_flag("--version", vpbench::kCodeVersion);
    app.require_subcommand(1);

    CommonOpts opts;
    std::string kind, dataset, model;

    CLI::App* generate = app.add_subcommand("generate", "Generate the push-world dataset");
    add_common(generate, opts);

    CLI::App* predict = app.add_subcommand("predict", "Build one predictor's dataset");
    add_common(predict, opts);
    predict->add_option("--kind", kind, "Predictor name from the configuration")
        ->required();

    CLI::App* train = app.add_subcommand("train-inference",
                                         "Train the action-inference regressor");
    add_common(train, opts);
    train->add_option("--dataset", dataset,
                      "Predictor name, 'oracle_baseline', or a dataset path")
        ->required();

    CLI::App* evaluate = app.add_subcommand("evaluate", "Score trained regressors");
    add_common(evaluate, opts);
    evaluate->add_option("--model", model,
                         "Single model to evaluate (default: all + baseline)");

    CLI::App* report = app.add_subcommand("report", "Assemble the metric report");
    add_common(report, opts);

    CLI::App* run = app.add_subcommand("run", "Run every stage");
    add_common(run, opts);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 1;
    }

    using vpbench::harness::kOracleBaselineName;
    using vpbench::harness::Pipeline;

    if (generate->parsed())
        return run_stage(opts, [](Pipeline& p) {
            const bool hit = p.stage_generate();
            std::printf("[vpbench] generate %s -> %s\n", hit ? "cached" : "done",
                        p.gt_dir().c_str());
        });

    if (predict->parsed())
        return run_stage(opts, [&](Pipeline& p) {
            const bool hit = p.stage_predict(kind);
            std::printf("[vpbench] predict/%s %s -> %s\n", kind.c_str(),
                        hit ? "cached" : "done", p.pred_dir(kind).c_str());
        });

    if (train->parsed())
        return run_stage(opts, [&](Pipeline& p) {
            std::string name = dataset;
            if (name != kOracleBaselineName) {
                bool known = false;
                for (const auto& pc : p.config().predictors)
                    known = known || pc.display_name() == name;
                if (!known) {
                    // Treat as a dataset path: train directly against it.
                    vpbench::infer::PairSource source(name);
                    vpbench::infer::train_inference(source, p.config().net,
                                                    p.config().train,
                                                    p.train_dir("custom"));
                    std::printf("[vpbench] train-inference done -> %s\n",
                                p.train_dir("custom").c_str());
                    return;
                }
            }
            const bool hit = p.stage_train(name);
            std::printf("[vpbench] train-inference/%s %s -> %s\n", name.c_str(),
                        hit ? "cached" : "done", p.train_dir(name).c_str());
        });

    if (evaluate->parsed())
        return run_stage(opts, [&](Pipeline& p) {
            std::vector<std::string> names;
            if (!model.empty()) {
                names.push_back(model);
            } else {
                for (const auto& pc : p.config().predictors)
                    names.push_back(pc.display_name());
                names.push_back(kOracleBaselineName);
            }
            for (const std::string& name : names) {
                const bool hit = p.stage_evaluate(name);
                p.stage_classic(name);
                std::printf("[vpbench] evaluate/%s %s -> %s\n", name.c_str(),
                            hit ? "cached" : "done", p.eval_file(name).c_str());
            }
        });

    if (report->parsed())
        return run_stage(opts, [](Pipeline& p) {
            p.stage_report();
            std::printf("[vpbench] report -> %s\n",
                        (p.report_dir() / "report.txt").c_str());
        });

    if (run->parsed())
        return run_stage(opts, [](Pipeline& p) {
            p.run();
            std::printf("[vpbench] run complete -> %s\n",
                        (p.report_dir() / "report.txt").c_str());
        });

    return 1;
}
