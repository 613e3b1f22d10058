#include "vpbench/inference.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>

#include "vpbench/binio.hpp"
#include "vpbench/rng.hpp"

namespace vpbench::infer {

nn::Network InferenceNetSpec::build() const {
    std::vector<nn::LayerSpec> layers;
    std::size_t channels = input_channels;
    for (std::size_t out : conv_channels) {
        layers.push_back(nn::LayerSpec::conv2d(channels, out, kernel, stride));
        layers.push_back(nn::LayerSpec::relu());
        channels = out;
    }
    layers.push_back(nn::LayerSpec::global_avg_pool());
    layers.push_back(nn::LayerSpec::dense(channels, action_dims));
    return nn::Network(std::move(layers), {image_size, image_size, input_channels});
}

nlohmann::ordered_json InferenceNetSpec::to_json() const {
    return {{"image_size", image_size},
            {"input_channels", input_channels},
            {"conv_channels", conv_channels},
            {"kernel", kernel},
            {"stride", stride},
            {"action_dims", action_dims}};
}

nlohmann::ordered_json TrainConfig::to_json() const {
    return {{"optimizer", optimizer == nn::OptMethod::Adam ? "adam" : "sgd"},
            {"learning_rate", learning_rate},
            {"batch_size", batch_size},
            {"max_epochs", max_epochs},
            {"patience", patience},
            {"seed", seed}};
}

std::vector<PairRecord> make_pairs(std::size_t frame_count,
                                   std::span<const float> targets) {
    if (frame_count < 2)
        throw ShapeError("make_pairs: need at least 2 frames");
    if (targets.size() != (frame_count - 1) * 2)
        throw ShapeError("make_pairs: " + std::to_string(frame_count) + " frames require " +
                         std::to_string(frame_count - 1) + " targets, got " +
                         std::to_string(targets.size() / 2));
    std::vector<PairRecord> out(frame_count - 1);
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i].step = i;
        out[i].even = (i % 2 == 0);
        out[i].target = {static_cast<double>(targets[2 * i]),
                         static_cast<double>(targets[2 * i + 1])};
    }
    return out;
}

PairSource::PairSource(std::filesystem::path dataset_dir)
    : dir_(std::move(dataset_dir)), manifest_(data::read_manifest(dir_)) {
    const data::ArraySpec& video = manifest_.array("video");
    if (video.shape.size() != 4) throw IoError("pair source: video array is not 4-d");
    const std::size_t frames = video.shape[0];
    image_size_ = video.shape[1];
    if (manifest_.kind == "predictions") {
        frame_offset_ = 0;
        target_offset_ = 0;
        pairs_per_episode_ = frames - 1;
    } else if (manifest_.kind == "pushworld") {
        // Ground-truth playback: frames 3..T (indices 2..T-1), so the pair
        // at step j spans frames (j+2, j+3) and the action with index j+2.
        if (frames < 4) throw IoError("pair source: ground-truth episodes too short");
        frame_offset_ = 2;
        target_offset_ = 2;
        pairs_per_episode_ = frames - 3;
    } else {
        throw IoError("pair source: unsupported dataset kind '" + manifest_.kind + "'");
    }
    if (pairs_per_episode_ == 0)
        throw IoError("pair source: dataset yields no frame pairs");
}

PairSource::SplitView PairSource::open_split(const std::string& name) const {
    SplitView view;
    view.source_ = this;
    view.ids_ = manifest_.split(name);
    view.episodes_.reserve(view.ids_.size());
    for (std::uint64_t id : view.ids_)
        view.episodes_.emplace_back(data::episode_path(dir_, id), manifest_);
    return view;
}

void PairSource::SplitView::fill_input(std::size_t episode_ordinal, std::size_t step,
                                       double* dst) const {
    const PairSource& src = *source_;
    const std::span<const float> video = episodes_[episode_ordinal].array("video");
    const std::size_t frame_elems = src.image_size_ * src.image_size_ * 3;
    const float* a = video.data() + (src.frame_offset_ + step) * frame_elems;
    const float* b = a + frame_elems;
    const std::size_t pixels = src.image_size_ * src.image_size_;
    for (std::size_t p = 0; p < pixels; ++p) {
        const float* pa = a + p * 3;
        const float* pb = b + p * 3;
        double* d = dst + p * 6;
        d[0] = pa[0];
        d[1] = pa[1];
        d[2] = pa[2];
        d[3] = pb[0];
        d[4] = pb[1];
        d[5] = pb[2];
    }
}

std::array<double, 2> PairSource::SplitView::target(std::size_t episode_ordinal,
                                                    std::size_t step) const {
    const PairSource& src = *source_;
    const std::span<const float> actions = episodes_[episode_ordinal].array("actions");
    const std::size_t base = (src.target_offset_ + step) * 2;
    return {static_cast<double>(actions[base]), static_cast<double>(actions[base + 1])};
}

double r2(std::span<const double> preds, std::span<const double> targets) {
    if (preds.size() != targets.size())
        throw ShapeError("r2: size mismatch");
    if (targets.size() < 2)
        throw DegenerateInputError("r2: needs at least 2 points");
    double mean = 0.0;
    for (double t : targets) mean += t;
    mean /= static_cast<double>(targets.size());
    double ss_tot = 0.0, ss_res = 0.0;
    for (std::size_t i = 0; i < targets.size(); ++i) {
        const double dt = targets[i] - mean;
        const double dr = targets[i] - preds[i];
        ss_tot += dt * dt;
        ss_res += dr * dr;
    }
    if (!(ss_tot > 0.0))
        throw DegenerateInputError("r2: targets have zero variance; score undefined");
    return 1.0 - ss_res / ss_tot;
}

double mean_absolute_error(std::span<const double> preds, std::span<const double> targets) {
    if (preds.size() != targets.size() || preds.empty())
        throw ShapeError("mae: inputs must be non-empty and equal-sized");
    double acc = 0.0;
    for (std::size_t i = 0; i < preds.size(); ++i) acc += std::abs(preds[i] - targets[i]);
    return acc / static_cast<double>(preds.size());
}

namespace {

struct Standardizer {
    std::array<double, 2> mean{0.0, 0.0};
    std::array<double, 2> std{1.0, 1.0};

    static Standardizer fit(const PairSource::SplitView& split) {
        const std::size_t steps = split.source().pairs_per_episode();
        Standardizer s;
        std::array<double, 2> acc{0.0, 0.0};
        std::size_t n = 0;
        for (std::size_t e = 0; e < split.episode_count(); ++e)
            for (std::size_t j = 0; j < steps; ++j) {
                const auto t = split.target(e, j);
                acc[0] += t[0];
                acc[1] += t[1];
                ++n;
            }
        if (n == 0) throw DegenerateInputError("train split has no samples");
        s.mean = {acc[0] / n, acc[1] / n};
        std::array<double, 2> var{0.0, 0.0};
        for (std::size_t e = 0; e < split.episode_count(); ++e)
            for (std::size_t j = 0; j < steps; ++j) {
                const auto t = split.target(e, j);
                var[0] += (t[0] - s.mean[0]) * (t[0] - s.mean[0]);
                var[1] += (t[1] - s.mean[1]) * (t[1] - s.mean[1]);
            }
        for (std::size_t d = 0; d < 2; ++d) {
            const double sd = std::sqrt(var[d] / n);
            s.std[d] = sd > 1e-12 ? sd : 1.0;
        }
        return s;
    }
};

/// Forward a list of (episode, step) samples in batches; returns
/// de-standardized predictions in sample order.
std::vector<std::array<double, 2>> predict_samples(
    const nn::Network& net, const PairSource::SplitView& split,
    const std::vector<std::pair<std::size_t, std::size_t>>& samples,
    const Standardizer& stats, std::size_t batch_size) {
    const std::size_t hw = split.source().image_size();
    const std::size_t in_elems = hw * hw * 6;
    std::vector<std::array<double, 2>> out(samples.size());
    for (std::size_t start = 0; start < samples.size(); start += batch_size) {
        const std::size_t count = std::min(batch_size, samples.size() - start);
        nn::Tensor batch({count, hw, hw, 6});
        for (std::size_t i = 0; i < count; ++i) {
            const auto& [e, j] = samples[start + i];
            split.fill_input(e, j, batch.data.data() + i * in_elems);
        }
        const nn::Tensor pred = net.forward(batch);
        for (std::size_t i = 0; i < count; ++i)
            out[start + i] = {pred.data[i * 2] * stats.std[0] + stats.mean[0],
                              pred.data[i * 2 + 1] * stats.std[1] + stats.mean[1]};
    }
    return out;
}

double validation_mae(const nn::Network& net, const PairSource::SplitView& split,
                      const Standardizer& stats) {
    const std::size_t steps = split.source().pairs_per_episode();
    std::vector<std::pair<std::size_t, std::size_t>> samples;
    samples.reserve(split.sample_count());
    for (std::size_t e = 0; e < split.episode_count(); ++e)
        for (std::size_t j = 0; j < steps; ++j) samples.emplace_back(e, j);
    const auto preds = predict_samples(net, split, samples, stats, 128);
    double acc = 0.0;
    for (std::size_t i = 0; i < samples.size(); ++i) {
        const auto t = split.target(samples[i].first, samples[i].second);
        acc += std::abs(preds[i][0] - t[0]) + std::abs(preds[i][1] - t[1]);
    }
    return acc / (2.0 * static_cast<double>(samples.size()));
}

}  // namespace

TrainResult train_inference(const PairSource& data, const InferenceNetSpec& spec,
                            const TrainConfig& config,
                            const std::filesystem::path& out_dir) {
    if (data.image_size() != spec.image_size)
        throw ShapeError("train_inference: dataset frame size " +
                         std::to_string(data.image_size()) + " does not match net input " +
                         std::to_string(spec.image_size));
    if (config.max_epochs == 0 || config.batch_size == 0)
        throw Error("train_inference: max_epochs and batch_size must be positive");
    const PairSource::SplitView train = data.open_split("train");
    const PairSource::SplitView val = data.open_split("val");
    if (train.episode_count() == 0 || val.episode_count() == 0)
        throw DegenerateInputError("train_inference: empty train or val split");

    std::error_code ec;
    std::filesystem::create_directories(out_dir, ec);

    const Standardizer stats = Standardizer::fit(train);
    nn::Network net = spec.build();
    net.init_params(config.seed);
    std::vector<nn::Tensor*> params = net.parameters();
    std::vector<nn::Tensor> grads = net.make_grad_buffers();

    nn::OptimizerState opt = config.optimizer == nn::OptMethod::Adam
                                 ? nn::OptimizerState::adam(config.learning_rate)
                                 : nn::OptimizerState::sgd(config.learning_rate);
    opt.attach(params);

    const std::size_t steps = data.pairs_per_episode();
    std::vector<std::pair<std::size_t, std::size_t>> order;
    order.reserve(train.sample_count());
    for (std::size_t e = 0; e < train.episode_count(); ++e)
        for (std::size_t j = 0; j < steps; ++j) order.emplace_back(e, j);

    Rng shuffle_rng(mix_seed(config.seed, 0x73687566ULL));
    const std::size_t hw = data.image_size();
    const std::size_t in_elems = hw * hw * 6;

    TrainResult result;
    result.target_mean = stats.mean;
    result.target_std = stats.std;
    result.best_val_mae = std::numeric_limits<double>::infinity();

    std::vector<std::vector<double>> best_params;

    for (std::size_t epoch = 1; epoch <= config.max_epochs; ++epoch) {
        shuffle_rng.shuffle(order);
        double loss_sum = 0.0;
        std::size_t batches = 0;
        for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
            const std::size_t count = std::min(config.batch_size, order.size() - start);
            nn::Tensor batch({count, hw, hw, 6});
            nn::Tensor target({count, 2});
            for (std::size_t i = 0; i < count; ++i) {
                const auto& [e, j] = order[start + i];
                train.fill_input(e, j, batch.data.data() + i * in_elems);
                const auto t = train.target(e, j);
                target.data[i * 2] = (t[0] - stats.mean[0]) / stats.std[0];
                target.data[i * 2 + 1] = (t[1] - stats.mean[1]) / stats.std[1];
            }
            nn::ForwardTrace trace;
            const nn::Tensor pred = net.forward(batch, &trace);
            const nn::LossResult loss = nn::mse_loss(pred, target);
            if (!std::isfinite(loss.value))
                throw Error("train_inference diverged: non-finite loss at epoch " +
                            std::to_string(epoch) + ", batch " + std::to_string(batches));
            for (nn::Tensor& g : grads) std::fill(g.data.begin(), g.data.end(), 0.0);
            net.backward(trace, loss.grad, grads);
            opt.step(params, grads);
            loss_sum += loss.value;
            ++batches;
        }
        const double train_loss = loss_sum / static_cast<double>(batches);
        const double val_mae = validation_mae(net, val, stats);
        if (!std::isfinite(val_mae))
            throw Error("train_inference diverged: non-finite validation MAE at epoch " +
                        std::to_string(epoch));
        result.log.push_back({epoch, train_loss, val_mae});
        result.epochs_run = epoch;

        if (val_mae < result.best_val_mae) {
            result.best_val_mae = val_mae;
            result.best_epoch = epoch;
            best_params.clear();
            for (const nn::Tensor* p : params) best_params.push_back(p->data);
        } else if (epoch - result.best_epoch >= config.patience) {
            break;
        }
    }

    for (std::size_t i = 0; i < params.size(); ++i) params[i]->data = best_params[i];

    result.checkpoint = out_dir / "checkpoint.bin";
    nn::save_checkpoint(net, result.checkpoint, config.seed);

    {
        std::ofstream log(out_dir / "log.csv");
        if (!log) throw IoError("cannot write training log in " + out_dir.string());
        log << "epoch,train_loss,val_mae\n";
        for (const EpochLog& row : result.log)
            log << row.epoch << "," << row.train_loss << "," << row.val_mae << "\n";
    }
    {
        nlohmann::ordered_json meta;
        meta["train_config"] = config.to_json();
        meta["net_spec"] = spec.to_json();
        meta["dataset"] = {{"path", data.dir().string()},
                           {"content_hash", data.manifest().content_hash},
                           {"kind", data.manifest().kind}};
        meta["target_mean"] = result.target_mean;
        meta["target_std"] = result.target_std;
        meta["best_epoch"] = result.best_epoch;
        meta["best_val_mae"] = result.best_val_mae;
        meta["epochs_run"] = result.epochs_run;
        std::ofstream out(out_dir / "train_meta.json");
        if (!out) throw IoError("cannot write train_meta.json in " + out_dir.string());
        out << meta.dump(2) << "\n";
    }
    return result;
}

InferenceScore evaluate(const nn::Network& net, const PairSource::SplitView& test,
                        const std::array<double, 2>& target_mean,
                        const std::array<double, 2>& target_std,
                        std::vector<std::vector<std::array<double, 2>>>* predictions,
                        std::vector<std::vector<std::array<double, 2>>>* targets_out) {
    const std::size_t episodes = test.episode_count();
    const std::size_t steps = test.source().pairs_per_episode();
    if (episodes < 2)
        throw DegenerateInputError("evaluate: needs a test split of at least 2 episodes");

    Standardizer stats;
    stats.mean = target_mean;
    stats.std = target_std;

    std::vector<std::pair<std::size_t, std::size_t>> samples;
    samples.reserve(episodes * steps);
    for (std::size_t e = 0; e < episodes; ++e)
        for (std::size_t j = 0; j < steps; ++j) samples.emplace_back(e, j);
    const auto preds = predict_samples(net, test, samples, stats, 128);

    if (predictions) predictions->assign(episodes, {});
    if (targets_out) targets_out->assign(episodes, {});

    InferenceScore score;
    score.episodes = episodes;
    score.steps = steps;
    score.r2_steps.assign(steps, 0.0);
    score.mae_steps.assign(steps, 0.0);
    score.r2_steps_dim.assign(steps, {0.0, 0.0});
    score.mae_steps_dim.assign(steps, {0.0, 0.0});

    std::vector<double> step_preds(episodes), step_targets(episodes);
    for (std::size_t j = 0; j < steps; ++j) {
        bool degenerate = false;
        for (std::size_t d = 0; d < 2; ++d) {
            for (std::size_t e = 0; e < episodes; ++e) {
                step_preds[e] = preds[e * steps + j][d];
                step_targets[e] = test.target(e, j)[d];
            }
            score.mae_steps_dim[j][d] = mean_absolute_error(step_preds, step_targets);
            try {
                score.r2_steps_dim[j][d] = r2(step_preds, step_targets);
            } catch (const DegenerateInputError&) {
                degenerate = true;
                score.r2_steps_dim[j][d] = 0.0;
            }
        }
        score.mae_steps[j] = 0.5 * (score.mae_steps_dim[j][0] + score.mae_steps_dim[j][1]);
        score.r2_steps[j] = 0.5 * (score.r2_steps_dim[j][0] + score.r2_steps_dim[j][1]);
        if (degenerate) score.degenerate_steps.push_back(j);
    }

    if (predictions || targets_out) {
        for (std::size_t e = 0; e < episodes; ++e) {
            if (predictions) {
                (*predictions)[e].resize(steps);
                for (std::size_t j = 0; j < steps; ++j)
                    (*predictions)[e][j] = preds[e * steps + j];
            }
            if (targets_out) {
                (*targets_out)[e].resize(steps);
                for (std::size_t j = 0; j < steps; ++j)
                    (*targets_out)[e][j] = test.target(e, j);
            }
        }
    }

    auto is_degenerate = [&](std::size_t j) {
        return std::find(score.degenerate_steps.begin(), score.degenerate_steps.end(), j) !=
               score.degenerate_steps.end();
    };
    double r2_sum = 0.0, mae_sum = 0.0;
    double even_r2 = 0.0, odd_r2 = 0.0, even_mae = 0.0, odd_mae = 0.0;
    std::array<double, 2> r2_dims{0.0, 0.0}, mae_dims{0.0, 0.0};
    std::size_t used = 0, even_n = 0, odd_n = 0;
    for (std::size_t j = 0; j < steps; ++j) {
        if (is_degenerate(j)) continue;
        ++used;
        r2_sum += score.r2_steps[j];
        mae_sum += score.mae_steps[j];
        for (std::size_t d = 0; d < 2; ++d) {
            r2_dims[d] += score.r2_steps_dim[j][d];
            mae_dims[d] += score.mae_steps_dim[j][d];
        }
        if (j % 2 == 0) {
            even_r2 += score.r2_steps[j];
            even_mae += score.mae_steps[j];
            ++even_n;
        } else {
            odd_r2 += score.r2_steps[j];
            odd_mae += score.mae_steps[j];
            ++odd_n;
        }
    }
    if (used == 0) throw DegenerateInputError("evaluate: every timestep was degenerate");
    score.aggregate_r2 = r2_sum / static_cast<double>(used);
    score.aggregate_mae = mae_sum / static_cast<double>(used);
    score.even_r2 = even_n ? even_r2 / static_cast<double>(even_n) : 0.0;
    score.odd_r2 = odd_n ? odd_r2 / static_cast<double>(odd_n) : 0.0;
    score.even_mae = even_n ? even_mae / static_cast<double>(even_n) : 0.0;
    score.odd_mae = odd_n ? odd_mae / static_cast<double>(odd_n) : 0.0;
    for (std::size_t d = 0; d < 2; ++d) {
        score.r2_dims[d] = r2_dims[d] / static_cast<double>(used);
        score.mae_dims[d] = mae_dims[d] / static_cast<double>(used);
    }
    return score;
}

nlohmann::ordered_json InferenceScore::to_json() const {
    nlohmann::ordered_json j;
    j["episodes"] = episodes;
    j["steps"] = steps;
    j["aggregate_r2"] = aggregate_r2;
    j["aggregate_mae"] = aggregate_mae;
    j["even_r2"] = even_r2;
    j["odd_r2"] = odd_r2;
    j["even_mae"] = even_mae;
    j["odd_mae"] = odd_mae;
    j["r2_dims"] = r2_dims;
    j["mae_dims"] = mae_dims;
    j["r2_steps"] = r2_steps;
    j["mae_steps"] = mae_steps;
    j["r2_steps_dim"] = r2_steps_dim;
    j["mae_steps_dim"] = mae_steps_dim;
    j["degenerate_steps"] = degenerate_steps;
    return j;
}

InferenceScore InferenceScore::from_json(const nlohmann::json& j) {
    InferenceScore s;
    s.episodes = j.at("episodes").get<std::size_t>();
    s.steps = j.at("steps").get<std::size_t>();
    s.aggregate_r2 = j.at("aggregate_r2").get<double>();
    s.aggregate_mae = j.at("aggregate_mae").get<double>();
    s.even_r2 = j.at("even_r2").get<double>();
    s.odd_r2 = j.at("odd_r2").get<double>();
    s.even_mae = j.at("even_mae").get<double>();
    s.odd_mae = j.at("odd_mae").get<double>();
    s.r2_dims = j.at("r2_dims").get<std::array<double, 2>>();
    s.mae_dims = j.at("mae_dims").get<std::array<double, 2>>();
    s.r2_steps = j.at("r2_steps").get<std::vector<double>>();
    s.mae_steps = j.at("mae_steps").get<std::vector<double>>();
    s.r2_steps_dim = j.at("r2_steps_dim").get<std::vector<std::array<double, 2>>>();
    s.mae_steps_dim = j.at("mae_steps_dim").get<std::vector<std::array<double, 2>>>();
    s.degenerate_steps = j.at("degenerate_steps").get<std::vector<std::size_t>>();
    return s;
}

}  // namespace vpbench::infer
