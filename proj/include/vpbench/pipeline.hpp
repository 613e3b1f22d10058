#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "vpbench/inference.hpp"
#include "vpbench/predictors.hpp"
#include "vpbench/sim.hpp"

namespace vpbench::harness {

/// Full description of one benchmark run. Stage seeds are derived from
/// master_seed (predictor seeds are keyed by predictor name, so adding or
/// removing one predictor leaves the others' artifacts byte-identical).
struct RunConfig {
    sim::WorldConfig world;
    sim::SplitSpec splits;
    std::vector<pred::PredictorConfig> predictors;
    infer::InferenceNetSpec net;
    infer::TrainConfig train;
    std::vector<std::string> metrics = {"r2", "mae", "psnr", "ssim", "fvd_lite"};
    std::filesystem::path output_dir = "vpbench_run";
    std::uint64_t master_seed = 12345;
    int workers = 1;

    static RunConfig defaults();
    static RunConfig from_json(const nlohmann::json& j);
    static RunConfig load(const std::filesystem::path& config_path);
    nlohmann::ordered_json to_json() const;

    void validate() const;
    void derive_seeds();  // world/train/predictor seeds from master_seed

    bool wants(const std::string& metric) const;
    const pred::PredictorConfig& predictor(const std::string& name) const;
};

inline constexpr const char* kOracleBaselineName = "oracle_baseline";

struct ReportRow {
    std::string name;
    double aggregate_r2 = 0.0;
    double aggregate_mae = 0.0;
    double even_r2 = 0.0, odd_r2 = 0.0;
    double even_mae = 0.0, odd_mae = 0.0;
    std::optional<double> fvd_lite;
    std::optional<double> mean_psnr;
    std::optional<double> mean_ssim;
    std::uint64_t best_episode = 0;
    std::uint64_t worst_episode = 0;
    std::vector<double> r2_steps;
    std::vector<double> mae_steps;
    std::vector<double> psnr_steps;
    std::vector<double> ssim_steps;
};

struct RankingEntry {
    std::string metric;
    std::vector<std::string> order;  // best first
    bool had_ties = false;
};

struct SpearmanEntry {
    std::string metric_a;
    std::string metric_b;
    double rho = 0.0;
};

struct MetricReport {
    nlohmann::ordered_json config;
    std::string config_hash;
    std::string code_version;
    std::vector<std::pair<std::string, std::string>> dataset_hashes;
    std::vector<ReportRow> rows;  // predictors in config order
    ReportRow oracle_baseline;
    std::vector<RankingEntry> rankings;
    std::vector<SpearmanEntry> spearman;

    nlohmann::ordered_json to_json() const;
    const ReportRow& row(const std::string& name) const;
};

/// Rank predictor rows per metric (higher-better for r2/psnr/ssim,
/// lower-better for mae/fvd_lite; ties broken by name and flagged) and
/// compute pairwise Spearman correlations between the metric rankings.
void rank_models(MetricReport& report);

/// Spearman rank correlation of two rankings over the same item set.
double spearman_rho(const std::vector<std::string>& order_a,
                    const std::vector<std::string>& order_b);

/// Write one CSV per metric under `dir`: rows are timesteps, and each
/// predictor contributes an even and an odd column that partition them by
/// the parity of the underlying commanded action step.
void emit_curves(const MetricReport& report, const std::filesystem::path& dir);

/// Stage orchestration with content-hash caching. Artifacts live under
/// config.output_dir:
///   gt/              generated pushworld dataset
///   pred/<name>/     per-predictor prediction dataset
///   train/<name>/    checkpoint + log (+ oracle_baseline trained on gt)
///   eval/<name>.json inference scores and best/worst episode ids
///   traces/          inferred-vs-truth action traces for best/worst episodes
///   classic/<name>.json  psnr/ssim/fvd-lite results
///   report/          report.json/.csv/.txt + curves/
class Pipeline {
public:
    explicit Pipeline(RunConfig config);

    const RunConfig& config() const { return config_; }

    bool stage_generate();                           // returns true on cache hit
    bool stage_predict(const std::string& name);
    bool stage_train(const std::string& name);       // predictor or oracle_baseline
    bool stage_evaluate(const std::string& name);
    bool stage_classic(const std::string& name);
    bool stage_report();

    MetricReport run();         // every stage in dependency order
    MetricReport read_report() const;

    std::filesystem::path gt_dir() const;
    std::filesystem::path pred_dir(const std::string& name) const;
    std::filesystem::path train_dir(const std::string& name) const;
    std::filesystem::path eval_file(const std::string& name) const;
    std::filesystem::path classic_file(const std::string& name) const;
    std::filesystem::path report_dir() const;
    std::filesystem::path traces_dir() const;

private:
    MetricReport assemble_report() const;
    void write_run_manifest() const;
    std::string config_hash() const;

    RunConfig config_;
};

/// Convenience wrapper: load-or-default config, run all stages.
MetricReport run_pipeline(const RunConfig& config);

}  // namespace vpbench::harness
