#include "vpbench/pipeline.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <map>
#include <set>

#include "vpbench/binio.hpp"
#include "vpbench/metrics.hpp"
#include "vpbench/rng.hpp"
#include "vpbench/version.hpp"

namespace vpbench::harness {

namespace {

constexpr std::uint64_t kWorldTag = 0x776f726c64ULL;
constexpr std::uint64_t kTrainTag = 0x747261696eULL;
constexpr std::uint64_t kPredTag = 0x70726564ULL;

std::string format_double(double v) {
    char buf[64];
    const auto res = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, res.ptr);
}

std::string hash_of_string(const std::string& s) {
    return binio::hash_hex(binio::hash_bytes(s.data(), s.size()));
}

std::string hash_of_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot hash missing file: " + path.string());
    binio::Fnv1a64 h;
    char buf[1 << 16];
    while (in.read(buf, sizeof(buf)) || in.gcount() > 0)
        h.update(buf, static_cast<std::size_t>(in.gcount()));
    return binio::hash_hex(h.digest());
}

std::string stage_key(std::initializer_list<std::string> parts) {
    binio::Fnv1a64 h;
    for (const std::string& p : parts) {
        h.update_string(p);
        h.update_string("|");
    }
    return binio::hash_hex(h.digest());
}

nlohmann::ordered_json world_to_json(const sim::WorldConfig& w) {
    return {{"image_size", w.image_size},       {"channels", w.channels},
            {"episode_length", w.episode_length}, {"num_objects", w.num_objects},
            {"gripper_radius", w.gripper_radius}, {"object_radius", w.object_radius},
            {"sigma_hi", w.sigma_hi},             {"sigma_lo", w.sigma_lo},
            {"margin", w.margin}};
}

nlohmann::ordered_json predictor_to_json(const pred::PredictorConfig& p) {
    return {{"kind", pred::to_string(p.kind)},
            {"name", p.display_name()},
            {"blur_sigma", p.blur_sigma},
            {"noise_sigma", p.noise_sigma},
            {"drift_rate", p.drift_rate}};
}

nlohmann::json read_json_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open " + path.string());
    nlohmann::json j;
    try {
        in >> j;
    } catch (const std::exception& e) {
        throw IoError("invalid JSON in " + path.string() + ": " + e.what());
    }
    return j;
}

void write_json_file(const nlohmann::ordered_json& j, const std::filesystem::path& path) {
    std::error_code ec;
    std::filesystem::create_directories(path.parent_path(), ec);
    std::ofstream out(path);
    if (!out) throw IoError("cannot write " + path.string());
    out << j.dump(2) << "\n";
    if (!out) throw IoError("failed writing " + path.string());
}

bool stage_cached(const std::filesystem::path& marker, const std::string& key,
                  const std::string& field = "cache_key") {
    if (!std::filesystem::exists(marker)) return false;
    try {
        const nlohmann::json j = read_json_file(marker);
        return j.value(field, "") == key;
    } catch (...) {
        return false;
    }
}

}  // namespace

RunConfig RunConfig::defaults() {
    RunConfig cfg;
    cfg.predictors = {
        {pred::PredictorKind::Oracle},    {pred::PredictorKind::BlurOracle},
        {pred::PredictorKind::NoiseOracle}, {pred::PredictorKind::Frozen},
        {pred::PredictorKind::ActionFree}, {pred::PredictorKind::Drift},
        {pred::PredictorKind::Warp},
    };
    cfg.derive_seeds();
    return cfg;
}

void RunConfig::derive_seeds() {
    world.seed = mix_seed(master_seed, kWorldTag);
    train.seed = mix_seed(master_seed, kTrainTag);
    for (pred::PredictorConfig& p : predictors) {
        const std::string name = p.display_name();
        p.seed = mix_seed(master_seed,
                          kPredTag ^ binio::hash_bytes(name.data(), name.size()));
    }
}

RunConfig RunConfig::from_json(const nlohmann::json& j) {
    RunConfig cfg = defaults();
    static const std::set<std::string> known = {
        "world", "splits", "predictors", "net", "train",
        "metrics", "output_dir", "master_seed", "workers"};
    for (const auto& [key, value] : j.items()) {
        (void)value;
        if (!known.count(key)) throw Error("run config: unknown key '" + key + "'");
    }

    if (j.contains("master_seed")) cfg.master_seed = j.at("master_seed").get<std::uint64_t>();
    if (j.contains("output_dir"))
        cfg.output_dir = j.at("output_dir").get<std::string>();
    if (j.contains("workers")) cfg.workers = j.at("workers").get<int>();
    if (j.contains("metrics")) cfg.metrics = j.at("metrics").get<std::vector<std::string>>();

    if (j.contains("world")) {
        const auto& w = j.at("world");
        cfg.world.image_size = w.value("image_size", cfg.world.image_size);
        cfg.world.channels = w.value("channels", cfg.world.channels);
        cfg.world.episode_length = w.value("episode_length", cfg.world.episode_length);
        cfg.world.num_objects = w.value("num_objects", cfg.world.num_objects);
        cfg.world.gripper_radius = w.value("gripper_radius", cfg.world.gripper_radius);
        cfg.world.object_radius = w.value("object_radius", cfg.world.object_radius);
        cfg.world.sigma_hi = w.value("sigma_hi", cfg.world.sigma_hi);
        cfg.world.sigma_lo = w.value("sigma_lo", cfg.world.sigma_lo);
        cfg.world.margin = w.value("margin", cfg.world.margin);
    }
    if (j.contains("splits")) {
        const auto& s = j.at("splits");
        cfg.splits.train = s.value("train", cfg.splits.train);
        cfg.splits.val = s.value("val", cfg.splits.val);
        cfg.splits.test = s.value("test", cfg.splits.test);
    }
    if (j.contains("net")) {
        const auto& n = j.at("net");
        cfg.net.image_size = n.value("image_size", cfg.net.image_size);
        cfg.net.conv_channels = n.value("conv_channels", cfg.net.conv_channels);
        cfg.net.kernel = n.value("kernel", cfg.net.kernel);
        cfg.net.stride = n.value("stride", cfg.net.stride);
    }
    if (j.contains("train")) {
        const auto& t = j.at("train");
        const std::string opt = t.value("optimizer", std::string("adam"));
        if (opt != "adam" && opt != "sgd")
            throw Error("run config: unknown optimizer '" + opt + "'");
        cfg.train.optimizer = opt == "adam" ? nn::OptMethod::Adam : nn::OptMethod::Sgd;
        cfg.train.learning_rate = t.value("learning_rate", cfg.train.learning_rate);
        cfg.train.batch_size = t.value("batch_size", cfg.train.batch_size);
        cfg.train.max_epochs = t.value("max_epochs", cfg.train.max_epochs);
        cfg.train.patience = t.value("patience", cfg.train.patience);
    }
    if (j.contains("predictors")) {
        cfg.predictors.clear();
        for (const auto& pj : j.at("predictors")) {
            pred::PredictorConfig p;
            p.kind = pred::predictor_kind_from_string(pj.at("kind").get<std::string>());
            p.name = pj.value("name", std::string());
            p.blur_sigma = pj.value("blur_sigma", p.blur_sigma);
            p.noise_sigma = pj.value("noise_sigma", p.noise_sigma);
            p.drift_rate = pj.value("drift_rate", p.drift_rate);
            cfg.predictors.push_back(p);
        }
    }
    cfg.derive_seeds();
    cfg.validate();
    return cfg;
}

RunConfig RunConfig::load(const std::filesystem::path& config_path) {
    return from_json(read_json_file(config_path));
}

nlohmann::ordered_json RunConfig::to_json() const {
    nlohmann::ordered_json j;
    j["master_seed"] = master_seed;
    j["world"] = world_to_json(world);
    j["splits"] = {{"train", splits.train}, {"val", splits.val}, {"test", splits.test}};
    nlohmann::ordered_json preds = nlohmann::ordered_json::array();
    for (const pred::PredictorConfig& p : predictors) preds.push_back(predictor_to_json(p));
    j["predictors"] = preds;
    j["net"] = net.to_json();
    nlohmann::ordered_json t = train.to_json();
    t.erase("seed");  // derived from master_seed
    j["train"] = t;
    j["metrics"] = metrics;
    j["output_dir"] = output_dir.string();
    j["workers"] = workers;
    return j;
}

void RunConfig::validate() const {
    world.validate();
    if (world.episode_length < 4)
        throw Error("run config: episode_length must be >= 4 to form one inference pair");
    if (predictors.empty()) throw Error("run config: needs at least one predictor");
    std::set<std::string> names;
    for (const pred::PredictorConfig& p : predictors) {
        const std::string name = p.display_name();
        if (name == kOracleBaselineName)
            throw Error("run config: predictor name '" + name + "' is reserved");
        if (!names.insert(name).second)
            throw Error("run config: duplicate predictor name '" + name + "'");
    }
    static const std::set<std::string> known_metrics = {"r2", "mae", "psnr", "ssim",
                                                        "fvd_lite"};
    for (const std::string& m : metrics)
        if (!known_metrics.count(m)) throw Error("run config: unknown metric '" + m + "'");
    if (splits.train == 0 || splits.val == 0 || splits.test < 2)
        throw Error("run config: needs train/val episodes and a test split of >= 2");
    if (net.image_size != world.image_size)
        throw Error("run config: net image_size must match world image_size");
    if (workers < 1) throw Error("run config: workers must be >= 1");
}

bool RunConfig::wants(const std::string& metric) const {
    return std::find(metrics.begin(), metrics.end(), metric) != metrics.end();
}

const pred::PredictorConfig& RunConfig::predictor(const std::string& name) const {
    for (const pred::PredictorConfig& p : predictors)
        if (p.display_name() == name) return p;
    throw Error("run config: no predictor named '" + name + "'");
}

const ReportRow& MetricReport::row(const std::string& name) const {
    if (name == kOracleBaselineName) return oracle_baseline;
    for (const ReportRow& r : rows)
        if (r.name == name) return r;
    throw Error("report has no row named '" + name + "'");
}

// ---------------------------------------------------------------------------
// Pipeline

Pipeline::Pipeline(RunConfig config) : config_(std::move(config)) {
    config_.validate();
}

std::filesystem::path Pipeline::gt_dir() const { return config_.output_dir / "gt"; }
std::filesystem::path Pipeline::pred_dir(const std::string& name) const {
    return config_.output_dir / "pred" / name;
}
std::filesystem::path Pipeline::train_dir(const std::string& name) const {
    return config_.output_dir / "train" / name;
}
std::filesystem::path Pipeline::eval_file(const std::string& name) const {
    return config_.output_dir / "eval" / (name + ".json");
}
std::filesystem::path Pipeline::classic_file(const std::string& name) const {
    return config_.output_dir / "classic" / (name + ".json");
}
std::filesystem::path Pipeline::report_dir() const { return config_.output_dir / "report"; }
std::filesystem::path Pipeline::traces_dir() const { return config_.output_dir / "traces"; }

std::string Pipeline::config_hash() const {
    nlohmann::ordered_json canonical = config_.to_json();
    canonical.erase("output_dir");  // placement and parallelism do not
    canonical.erase("workers");     // affect artifact bytes
    return hash_of_string(canonical.dump());
}

bool Pipeline::stage_generate() {
    const std::string key =
        stage_key({"generate", kCodeVersion, world_to_json(config_.world).dump(),
                   std::to_string(config_.world.seed),
                   std::to_string(config_.splits.train), std::to_string(config_.splits.val),
                   std::to_string(config_.splits.test)});
    if (stage_cached(gt_dir() / "manifest.json", key)) return true;

    sim::SplitSpec splits = config_.splits;
    sim::generate_dataset(config_.world, splits, gt_dir(), config_.workers);
    // Stamp the cache key into the manifest.
    data::Manifest m = data::read_manifest(gt_dir());
    m.cache_key = key;
    data::write_manifest(m, gt_dir());
    return false;
}

bool Pipeline::stage_predict(const std::string& name) {
    const pred::PredictorConfig& p = config_.predictor(name);
    const data::Manifest gt = data::read_manifest(gt_dir());
    nlohmann::ordered_json pj = predictor_to_json(p);
    pj["seed"] = p.seed;
    const std::string key =
        stage_key({"predict", kCodeVersion, gt.content_hash, pj.dump()});
    if (stage_cached(pred_dir(name) / "manifest.json", key)) return true;

    pred::build_prediction_dataset(p, config_.world, gt_dir(), pred_dir(name),
                                   config_.workers);
    data::Manifest m = data::read_manifest(pred_dir(name));
    m.cache_key = key;
    data::write_manifest(m, pred_dir(name));
    return false;
}

bool Pipeline::stage_train(const std::string& name) {
    const bool baseline = (name == kOracleBaselineName);
    const std::filesystem::path data_dir = baseline ? gt_dir() : pred_dir(name);
    const data::Manifest src = data::read_manifest(data_dir);
    infer::TrainConfig tc = config_.train;  // shared seed across predictors
    const std::string key =
        stage_key({"train", kCodeVersion, src.content_hash, tc.to_json().dump(),
                   config_.net.to_json().dump()});
    if (stage_cached(train_dir(name) / "train_meta.json", key) &&
        std::filesystem::exists(train_dir(name) / "checkpoint.bin"))
        return true;

    infer::PairSource source(data_dir);
    infer::train_inference(source, config_.net, tc, train_dir(name));
    // Stamp the cache key.
    nlohmann::ordered_json meta = read_json_file(train_dir(name) / "train_meta.json");
    meta["cache_key"] = key;
    write_json_file(meta, train_dir(name) / "train_meta.json");
    return false;
}

bool Pipeline::stage_evaluate(const std::string& name) {
    const bool baseline = (name == kOracleBaselineName);
    const std::filesystem::path data_dir = baseline ? gt_dir() : pred_dir(name);
    const data::Manifest src = data::read_manifest(data_dir);
    const std::filesystem::path checkpoint = train_dir(name) / "checkpoint.bin";
    const nlohmann::json meta = read_json_file(train_dir(name) / "train_meta.json");
    const std::string key =
        stage_key({"evaluate", kCodeVersion, hash_of_file(checkpoint), src.content_hash,
                   meta.value("cache_key", "")});
    if (stage_cached(eval_file(name), key)) return true;

    const nn::Network net = nn::load_checkpoint(checkpoint);
    infer::PairSource source(data_dir);
    const infer::PairSource::SplitView test = source.open_split("test");
    const std::array<double, 2> mean = meta.at("target_mean").get<std::array<double, 2>>();
    const std::array<double, 2> stdev = meta.at("target_std").get<std::array<double, 2>>();

    std::vector<std::vector<std::array<double, 2>>> preds, targets;
    const infer::InferenceScore score = infer::evaluate(net, test, mean, stdev, &preds,
                                                        &targets);

    // Per-episode pooled R^2 drives the best/worst trace selection.
    std::vector<double> per_episode_r2(test.episode_count());
    for (std::size_t e = 0; e < test.episode_count(); ++e) {
        std::vector<double> p, t;
        p.reserve(score.steps * 2);
        t.reserve(score.steps * 2);
        for (std::size_t j = 0; j < score.steps; ++j)
            for (std::size_t d = 0; d < 2; ++d) {
                p.push_back(preds[e][j][d]);
                t.push_back(targets[e][j][d]);
            }
        try {
            per_episode_r2[e] = infer::r2(p, t);
        } catch (const DegenerateInputError&) {
            per_episode_r2[e] = -std::numeric_limits<double>::infinity();
        }
    }
    std::size_t best = 0, worst = 0;
    for (std::size_t e = 1; e < per_episode_r2.size(); ++e) {
        if (per_episode_r2[e] > per_episode_r2[best]) best = e;
        if (per_episode_r2[e] < per_episode_r2[worst]) worst = e;
    }
    const std::vector<std::uint64_t>& ids = test.ids();

    auto write_trace = [&](std::size_t e, const std::string& label) {
        std::error_code ec;
        std::filesystem::create_directories(traces_dir(), ec);
        const auto path = traces_dir() / (name + "_" + label + ".csv");
        std::ofstream out(path);
        if (!out) throw IoError("cannot write trace " + path.string());
        out << "episode,step,target_dx,inferred_dx,target_dy,inferred_dy\n";
        for (std::size_t j = 0; j < score.steps; ++j)
            out << ids[e] << "," << j + 1 << "," << format_double(targets[e][j][0]) << ","
                << format_double(preds[e][j][0]) << "," << format_double(targets[e][j][1])
                << "," << format_double(preds[e][j][1]) << "\n";
    };
    write_trace(best, "best");
    write_trace(worst, "worst");

    nlohmann::ordered_json out;
    out["cache_key"] = key;
    out["model"] = name;
    out["dataset_hash"] = src.content_hash;
    out["checkpoint_hash"] = hash_of_file(checkpoint);
    out["score"] = score.to_json();
    out["best_episode"] = ids[best];
    out["worst_episode"] = ids[worst];
    out["per_episode_r2"] = per_episode_r2;
    write_json_file(out, eval_file(name));
    return false;
}

bool Pipeline::stage_classic(const std::string& name) {
    const bool baseline = (name == kOracleBaselineName);
    const data::Manifest gt_manifest = data::read_manifest(gt_dir());
    const std::filesystem::path data_dir = baseline ? gt_dir() : pred_dir(name);
    const data::Manifest pred_manifest = data::read_manifest(data_dir);
    std::string metric_tag;
    for (const std::string& m : config_.metrics) metric_tag += m + ",";
    const std::string key = stage_key({"classic", kCodeVersion, gt_manifest.content_hash,
                                       pred_manifest.content_hash, metric_tag});
    if (stage_cached(classic_file(name), key)) return true;

    const data::DatasetReader gt(gt_dir());
    const data::DatasetReader predicted(data_dir);
    const std::vector<std::uint64_t>& test_ids = gt.manifest().split("test");
    const std::size_t t_total = gt.manifest().array("video").shape[0];
    const std::size_t pred_len = baseline
                                     ? t_total - pred::kContextFrames
                                     : predicted.manifest().array("video").shape[0];

    const bool want_psnr = config_.wants("psnr");
    const bool want_ssim = config_.wants("ssim");
    const bool want_fvd = config_.wants("fvd_lite");

    std::vector<double> psnr_steps(pred_len, 0.0), ssim_steps(pred_len, 0.0);
    std::vector<double> per_episode_psnr, per_episode_ssim;
    std::vector<std::vector<double>> real_features, pred_features;
    per_episode_psnr.reserve(test_ids.size());
    per_episode_ssim.reserve(test_ids.size());

    for (const std::uint64_t id : test_ids) {
        const Video gt_video = gt.read_video(id);
        const Video gt_tail = gt_video.slice(t_total - pred_len, pred_len);
        const Video pv = baseline ? gt_tail : predicted.read_video(id);
        if (pv.frames != pred_len)
            throw Error("classic metrics: prediction length mismatch for episode " +
                        std::to_string(id));
        double ep_psnr = 0.0, ep_ssim = 0.0;
        for (std::size_t t = 0; t < pred_len; ++t) {
            if (want_psnr) {
                const double v = metrics::psnr(FrameView(pv, t), FrameView(gt_tail, t));
                psnr_steps[t] += v;
                ep_psnr += v;
            }
            if (want_ssim) {
                const double v = metrics::ssim(FrameView(pv, t), FrameView(gt_tail, t));
                ssim_steps[t] += v;
                ep_ssim += v;
            }
        }
        if (want_psnr) per_episode_psnr.push_back(ep_psnr / static_cast<double>(pred_len));
        if (want_ssim) per_episode_ssim.push_back(ep_ssim / static_cast<double>(pred_len));
        if (want_fvd) {
            real_features.push_back(metrics::video_feature(gt_tail));
            pred_features.push_back(metrics::video_feature(pv));
        }
    }

    nlohmann::ordered_json out;
    out["cache_key"] = key;
    out["model"] = name;
    out["gt_hash"] = gt_manifest.content_hash;
    out["pred_hash"] = pred_manifest.content_hash;
    out["episodes"] = test_ids.size();
    const double inv_n = 1.0 / static_cast<double>(test_ids.size());
    if (want_psnr) {
        for (double& v : psnr_steps) v *= inv_n;
        double mean = 0.0;
        for (double v : per_episode_psnr) mean += v;
        out["mean_psnr"] = mean * inv_n;
        out["psnr_steps"] = psnr_steps;
        out["per_episode_psnr"] = per_episode_psnr;
    }
    if (want_ssim) {
        for (double& v : ssim_steps) v *= inv_n;
        double mean = 0.0;
        for (double v : per_episode_ssim) mean += v;
        out["mean_ssim"] = mean * inv_n;
        out["ssim_steps"] = ssim_steps;
        out["per_episode_ssim"] = per_episode_ssim;
    }
    if (want_fvd) {
        out["fvd_lite"] = metrics::frechet_distance(
            metrics::estimate_moments(real_features),
            metrics::estimate_moments(pred_features));
    }
    write_json_file(out, classic_file(name));
    return false;
}

MetricReport Pipeline::assemble_report() const {
    MetricReport report;
    report.code_version = kCodeVersion;
    nlohmann::ordered_json canonical = config_.to_json();
    canonical.erase("output_dir");
    canonical.erase("workers");
    report.config = canonical;
    report.config_hash = config_hash();

    const data::Manifest gt = data::read_manifest(gt_dir());
    report.dataset_hashes.emplace_back("ground_truth", gt.content_hash);

    auto load_row = [&](const std::string& name) {
        ReportRow row;
        row.name = name;
        const nlohmann::json ev = read_json_file(eval_file(name));
        const infer::InferenceScore score = infer::InferenceScore::from_json(ev.at("score"));
        row.aggregate_r2 = score.aggregate_r2;
        row.aggregate_mae = score.aggregate_mae;
        row.even_r2 = score.even_r2;
        row.odd_r2 = score.odd_r2;
        row.even_mae = score.even_mae;
        row.odd_mae = score.odd_mae;
        row.r2_steps = score.r2_steps;
        row.mae_steps = score.mae_steps;
        row.best_episode = ev.at("best_episode").get<std::uint64_t>();
        row.worst_episode = ev.at("worst_episode").get<std::uint64_t>();
        const nlohmann::json cl = read_json_file(classic_file(name));
        if (cl.contains("mean_psnr")) {
            row.mean_psnr = cl.at("mean_psnr").get<double>();
            row.psnr_steps = cl.at("psnr_steps").get<std::vector<double>>();
        }
        if (cl.contains("mean_ssim")) {
            row.mean_ssim = cl.at("mean_ssim").get<double>();
            row.ssim_steps = cl.at("ssim_steps").get<std::vector<double>>();
        }
        if (cl.contains("fvd_lite")) row.fvd_lite = cl.at("fvd_lite").get<double>();
        return row;
    };

    for (const pred::PredictorConfig& p : config_.predictors) {
        report.rows.push_back(load_row(p.display_name()));
        report.dataset_hashes.emplace_back(
            p.display_name(), data::read_manifest(pred_dir(p.display_name())).content_hash);
    }
    report.oracle_baseline = load_row(kOracleBaselineName);
    if (report.rows.size() >= 3) rank_models(report);
    return report;
}

bool Pipeline::stage_report() {
    std::vector<std::string> input_keys;
    for (const pred::PredictorConfig& p : config_.predictors) {
        input_keys.push_back(read_json_file(eval_file(p.display_name())).value("cache_key", ""));
        input_keys.push_back(
            read_json_file(classic_file(p.display_name())).value("cache_key", ""));
    }
    input_keys.push_back(read_json_file(eval_file(kOracleBaselineName)).value("cache_key", ""));
    input_keys.push_back(
        read_json_file(classic_file(kOracleBaselineName)).value("cache_key", ""));
    std::string joined;
    for (const std::string& k : input_keys) joined += k + "|";
    const std::string key = stage_key({"report", kCodeVersion, config_hash(), joined});
    if (stage_cached(report_dir() / "stage.json", key) &&
        std::filesystem::exists(report_dir() / "report.json"))
        return true;

    const MetricReport report = assemble_report();
    write_json_file(report.to_json(), report_dir() / "report.json");
    emit_curves(report, report_dir() / "curves");

    // Flat CSV, Table-1 column order.
    {
        std::ofstream out(report_dir() / "report.csv");
        if (!out) throw IoError("cannot write report.csv");
        out << "model,fvd_lite,aggregate_r2,aggregate_mae,mean_psnr,mean_ssim\n";
        auto emit = [&](const ReportRow& r) {
            out << r.name << ",";
            out << (r.fvd_lite ? format_double(*r.fvd_lite) : "") << ",";
            out << format_double(r.aggregate_r2) << "," << format_double(r.aggregate_mae)
                << ",";
            out << (r.mean_psnr ? format_double(*r.mean_psnr) : "") << ",";
            out << (r.mean_ssim ? format_double(*r.mean_ssim) : "") << "\n";
        };
        for (const ReportRow& r : report.rows) emit(r);
        emit(report.oracle_baseline);
    }

    // Human-readable table; best value per column is starred.
    {
        std::ofstream out(report_dir() / "report.txt");
        if (!out) throw IoError("cannot write report.txt");
        auto best_of = [&](auto getter, bool higher_better) {
            double best = higher_better ? -std::numeric_limits<double>::infinity()
                                        : std::numeric_limits<double>::infinity();
            for (const ReportRow& r : report.rows) {
                const auto v = getter(r);
                if (!v) continue;
                if (higher_better ? *v > best : *v < best) best = *v;
            }
            return best;
        };
        const double best_fvd = best_of([](const ReportRow& r) { return r.fvd_lite; }, false);
        const double best_r2 = best_of(
            [](const ReportRow& r) { return std::optional<double>(r.aggregate_r2); }, true);
        const double best_mae = best_of(
            [](const ReportRow& r) { return std::optional<double>(r.aggregate_mae); }, false);
        const double best_psnr = best_of([](const ReportRow& r) { return r.mean_psnr; }, true);
        const double best_ssim = best_of([](const ReportRow& r) { return r.mean_ssim; }, true);

        char line[256];
        out << "model             fvd_lite      r2         mae       psnr      ssim\n";
        auto emit = [&](const ReportRow& r, bool rankable) {
            auto mark = [&](double v, double best) {
                return (rankable && v == best) ? '*' : ' ';
            };
            std::snprintf(line, sizeof(line), "%-16s %c%-11.4f %c%-9.4f %c%-8.4f %c%-8.3f %c%-7.4f\n",
                          r.name.c_str(),
                          r.fvd_lite ? mark(*r.fvd_lite, best_fvd) : ' ',
                          r.fvd_lite.value_or(0.0),
                          mark(r.aggregate_r2, best_r2), r.aggregate_r2,
                          mark(r.aggregate_mae, best_mae), r.aggregate_mae,
                          r.mean_psnr ? mark(*r.mean_psnr, best_psnr) : ' ',
                          r.mean_psnr.value_or(0.0),
                          r.mean_ssim ? mark(*r.mean_ssim, best_ssim) : ' ',
                          r.mean_ssim.value_or(0.0));
            out << line;
        };
        for (const ReportRow& r : report.rows) emit(r, true);
        emit(report.oracle_baseline, false);
        out << "\nSpearman rank correlations:\n";
        for (const SpearmanEntry& s : report.spearman) {
            std::snprintf(line, sizeof(line), "  %-10s vs %-10s %+.4f\n", s.metric_a.c_str(),
                          s.metric_b.c_str(), s.rho);
            out << line;
        }
    }

    write_json_file({{"cache_key", key}}, report_dir() / "stage.json");
    return false;
}

void Pipeline::write_run_manifest() const {
    nlohmann::ordered_json j;
    j["code_version"] = kCodeVersion;
    j["config"] = config_.to_json();
    j["config_hash"] = config_hash();
    j["derived_seeds"] = {{"world", config_.world.seed}, {"train", config_.train.seed}};
    nlohmann::ordered_json pseeds;
    for (const pred::PredictorConfig& p : config_.predictors)
        pseeds[p.display_name()] = p.seed;
    j["derived_seeds"]["predictors"] = pseeds;
    // Each predictor's inference net is trained from scratch with this
    // shared seed; nothing is warm-started.
    j["training_policy"] = "fresh network per predictor, shared train seed";
    write_json_file(j, config_.output_dir / "run_manifest.json");
}

MetricReport Pipeline::run() {
    auto guarded = [&](const std::string& stage, auto&& fn) {
        const auto start = std::chrono::steady_clock::now();
        bool hit = false;
        try {
            hit = fn();
        } catch (const std::exception& e) {
            throw Error("stage '" + stage + "' failed (master_seed=" +
                        std::to_string(config_.master_seed) + ", artifacts in " +
                        config_.output_dir.string() + "): " + e.what());
        }
        const double secs =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        std::printf("[vpbench] %-32s %s (%.1fs)\n", stage.c_str(),
                    hit ? "cached" : "done", secs);
        std::fflush(stdout);
    };

    write_run_manifest();
    guarded("generate", [&] { return stage_generate(); });
    for (const pred::PredictorConfig& p : config_.predictors) {
        const std::string name = p.display_name();
        guarded("predict/" + name, [&] { return stage_predict(name); });
        guarded("train-inference/" + name, [&] { return stage_train(name); });
        guarded("evaluate/" + name, [&] { return stage_evaluate(name); });
        guarded("classic-metrics/" + name, [&] { return stage_classic(name); });
    }
    guarded("train-inference/oracle_baseline",
            [&] { return stage_train(kOracleBaselineName); });
    guarded("evaluate/oracle_baseline", [&] { return stage_evaluate(kOracleBaselineName); });
    guarded("classic-metrics/oracle_baseline",
            [&] { return stage_classic(kOracleBaselineName); });
    guarded("report", [&] { return stage_report(); });
    return read_report();
}

MetricReport Pipeline::read_report() const { return assemble_report(); }

MetricReport run_pipeline(const RunConfig& config) { return Pipeline(config).run(); }

// ---------------------------------------------------------------------------
// Ranking

namespace {

std::vector<std::string> rank_order(const std::vector<std::pair<std::string, double>>& scores,
                                    bool higher_better, bool* had_ties) {
    std::vector<std::pair<std::string, double>> sorted = scores;
    std::sort(sorted.begin(), sorted.end(), [&](const auto& a, const auto& b) {
        if (a.second != b.second) return higher_better ? a.second > b.second
                                                       : a.second < b.second;
        return a.first < b.first;  // deterministic tie-break
    });
    if (had_ties) {
        *had_ties = false;
        for (std::size_t i = 1; i < sorted.size(); ++i)
            if (sorted[i].second == sorted[i - 1].second) *had_ties = true;
    }
    std::vector<std::string> order;
    order.reserve(sorted.size());
    for (const auto& [name, value] : sorted) order.push_back(name);
    return order;
}

}  // namespace

double spearman_rho(const std::vector<std::string>& order_a,
                    const std::vector<std::string>& order_b) {
    if (order_a.size() != order_b.size() || order_a.size() < 2)
        throw Error("spearman_rho: rankings must cover the same items (>= 2)");
    std::map<std::string, std::size_t> rank_b;
    for (std::size_t i = 0; i < order_b.size(); ++i) rank_b[order_b[i]] = i + 1;
    const double n = static_cast<double>(order_a.size());
    double d2 = 0.0;
    for (std::size_t i = 0; i < order_a.size(); ++i) {
        const auto it = rank_b.find(order_a[i]);
        if (it == rank_b.end())
            throw Error("spearman_rho: rankings cover different items");
        const double d = static_cast<double>(i + 1) - static_cast<double>(it->second);
        d2 += d * d;
    }
    return 1.0 - 6.0 * d2 / (n * (n * n - 1.0));
}

void rank_models(MetricReport& report) {
    if (report.rows.size() < 3)
        throw Error("rank_models: needs at least 3 predictor rows");
    report.rankings.clear();
    report.spearman.clear();

    auto column = [&](const std::string& metric)
        -> std::optional<std::vector<std::pair<std::string, double>>> {
        std::vector<std::pair<std::string, double>> out;
        for (const ReportRow& r : report.rows) {
            std::optional<double> v;
            if (metric == "r2") v = r.aggregate_r2;
            else if (metric == "mae") v = r.aggregate_mae;
            else if (metric == "psnr") v = r.mean_psnr;
            else if (metric == "ssim") v = r.mean_ssim;
            else if (metric == "fvd_lite") v = r.fvd_lite;
            if (!v) return std::nullopt;  // metric not computed for every row
            out.emplace_back(r.name, *v);
        }
        return out;
    };

    static const std::vector<std::pair<std::string, bool>> metric_order = {
        {"fvd_lite", false}, {"r2", true}, {"mae", false}, {"psnr", true}, {"ssim", true}};
    for (const auto& [metric, higher_better] : metric_order) {
        const auto scores = column(metric);
        if (!scores) continue;
        RankingEntry entry;
        entry.metric = metric;
        entry.order = rank_order(*scores, higher_better, &entry.had_ties);
        report.rankings.push_back(std::move(entry));
    }
    for (std::size_t a = 0; a < report.rankings.size(); ++a)
        for (std::size_t b = a + 1; b < report.rankings.size(); ++b)
            report.spearman.push_back(
                {report.rankings[a].metric, report.rankings[b].metric,
                 spearman_rho(report.rankings[a].order, report.rankings[b].order)});
}

// ---------------------------------------------------------------------------
// Curves

namespace {

/// Parity of the commanded action step behind a 1-based pair index.
bool pair_step_is_even(std::size_t step_1based) { return step_1based % 2 == 1; }
/// Parity of the commanded action step that produced a 1-based frame index.
bool frame_step_is_even(std::size_t frame_1based) { return frame_1based % 2 == 0; }

void write_curve_csv(const std::filesystem::path& path,
                     const std::vector<const ReportRow*>& rows,
                     const std::vector<double> ReportRow::*member,
                     bool frame_indexed) {
    std::size_t steps = 0;
    for (const ReportRow* r : rows) steps = std::max(steps, (r->*member).size());
    if (steps == 0) return;
    std::ofstream out(path);
    if (!out) throw IoError("cannot write curve file " + path.string());
    out << "step";
    for (const ReportRow* r : rows) out << "," << r->name << "_even," << r->name << "_odd";
    out << "\n";
    for (std::size_t i = 1; i <= steps; ++i) {
        const bool even = frame_indexed ? frame_step_is_even(i) : pair_step_is_even(i);
        out << i;
        for (const ReportRow* r : rows) {
            const auto& values = r->*member;
            const std::string v = i <= values.size() ? format_double(values[i - 1]) : "";
            if (even)
                out << "," << v << ",";
            else
                out << ",," << v;
        }
        out << "\n";
    }
}

}  // namespace

void emit_curves(const MetricReport& report, const std::filesystem::path& dir) {
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    std::vector<const ReportRow*> rows;
    for (const ReportRow& r : report.rows) rows.push_back(&r);
    rows.push_back(&report.oracle_baseline);

    write_curve_csv(dir / "r2.csv", rows, &ReportRow::r2_steps, false);
    write_curve_csv(dir / "mae.csv", rows, &ReportRow::mae_steps, false);
    write_curve_csv(dir / "psnr.csv", rows, &ReportRow::psnr_steps, true);
    write_curve_csv(dir / "ssim.csv", rows, &ReportRow::ssim_steps, true);
}

// ---------------------------------------------------------------------------
// Report serialization

namespace {

nlohmann::ordered_json row_to_json(const ReportRow& r) {
    nlohmann::ordered_json j;
    j["name"] = r.name;
    if (r.fvd_lite) j["fvd_lite"] = *r.fvd_lite;
    j["aggregate_r2"] = r.aggregate_r2;
    j["aggregate_mae"] = r.aggregate_mae;
    if (r.mean_psnr) j["mean_psnr"] = *r.mean_psnr;
    if (r.mean_ssim) j["mean_ssim"] = *r.mean_ssim;
    j["even_r2"] = r.even_r2;
    j["odd_r2"] = r.odd_r2;
    j["even_mae"] = r.even_mae;
    j["odd_mae"] = r.odd_mae;
    j["best_episode"] = r.best_episode;
    j["worst_episode"] = r.worst_episode;
    j["r2_steps"] = r.r2_steps;
    j["mae_steps"] = r.mae_steps;
    if (!r.psnr_steps.empty()) j["psnr_steps"] = r.psnr_steps;
    if (!r.ssim_steps.empty()) j["ssim_steps"] = r.ssim_steps;
    return j;
}

}  // namespace

nlohmann::ordered_json MetricReport::to_json() const {
    nlohmann::ordered_json j;
    j["schema_version"] = kReportSchemaVersion;
    j["code_version"] = code_version;
    j["config_hash"] = config_hash;
    j["config"] = config;
    nlohmann::ordered_json hashes;
    for (const auto& [name, hash] : dataset_hashes) hashes[name] = hash;
    j["dataset_hashes"] = hashes;
    nlohmann::ordered_json rows_json = nlohmann::ordered_json::array();
    for (const ReportRow& r : rows) rows_json.push_back(row_to_json(r));
    j["rows"] = rows_json;
    j["oracle_baseline"] = row_to_json(oracle_baseline);
    nlohmann::ordered_json rankings_json = nlohmann::ordered_json::array();
    for (const RankingEntry& r : rankings)
        rankings_json.push_back(
            {{"metric", r.metric}, {"order", r.order}, {"had_ties", r.had_ties}});
    j["rankings"] = rankings_json;
    nlohmann::ordered_json spearman_json = nlohmann::ordered_json::array();
    for (const SpearmanEntry& s : spearman)
        spearman_json.push_back(
            {{"metric_a", s.metric_a}, {"metric_b", s.metric_b}, {"rho", s.rho}});
    j["spearman"] = spearman_json;
    return j;
}

}  // namespace vpbench::harness
