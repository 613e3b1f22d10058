#include "vpbench/predictors.hpp"

#include <algorithm>
#include <thread>

#include "image_ops.hpp"
#include "vpbench/rng.hpp"

namespace vpbench::pred {

namespace {

// Stream tags keep stochastic predictors decorrelated from the simulator
// and from each other under a shared master seed.
constexpr std::uint64_t kNoiseTag = 0x6e6f697365ULL;
constexpr std::uint64_t kActionFreeTag = 0x61637466ULL;

sim::Episode episode_from_reader(const data::DatasetReader& source, std::uint64_t id) {
    sim::Episode ep;
    ep.video = source.read_video(id);
    const std::vector<float> actions = source.read_array(id, "actions");
    ep.actions.reserve(actions.size() / 2);
    for (std::size_t i = 0; i + 1 < actions.size(); i += 2)
        ep.actions.push_back({actions[i], actions[i + 1]});
    return ep;
}

}  // namespace

std::string to_string(PredictorKind kind) {
    switch (kind) {
        case PredictorKind::Oracle: return "oracle";
        case PredictorKind::BlurOracle: return "blur_oracle";
        case PredictorKind::NoiseOracle: return "noise_oracle";
        case PredictorKind::Frozen: return "frozen";
        case PredictorKind::ActionFree: return "action_free";
        case PredictorKind::Drift: return "drift";
        case PredictorKind::Warp: return "warp";
    }
    throw Error("unknown predictor kind");
}

PredictorKind predictor_kind_from_string(const std::string& name) {
    if (name == "oracle") return PredictorKind::Oracle;
    if (name == "blur_oracle") return PredictorKind::BlurOracle;
    if (name == "noise_oracle") return PredictorKind::NoiseOracle;
    if (name == "frozen") return PredictorKind::Frozen;
    if (name == "action_free") return PredictorKind::ActionFree;
    if (name == "drift") return PredictorKind::Drift;
    if (name == "warp") return PredictorKind::Warp;
    throw Error("unknown predictor kind: " + name);
}

Video predict(const PredictorConfig& config, const sim::WorldConfig& world,
              const sim::Episode& episode, std::uint64_t episode_index) {
    const std::size_t t_total = episode.video.frames;
    if (t_total < kContextFrames + 1)
        throw ShapeError("predict: episode has no frames beyond the context");
    const std::size_t pred_len = t_total - kContextFrames;
    const std::size_t h = episode.video.height, w = episode.video.width,
                      c = episode.video.channels;

    switch (config.kind) {
        case PredictorKind::Oracle:
            return episode.video.slice(kContextFrames, pred_len);

        case PredictorKind::BlurOracle: {
            Video out(pred_len, h, w, c);
            for (std::size_t t = 0; t < pred_len; ++t)
                img::gaussian_blur(episode.video.frame(kContextFrames + t), out.frame(t),
                                   h, w, c, config.blur_sigma);
            return out;
        }

        case PredictorKind::NoiseOracle: {
            Video out = episode.video.slice(kContextFrames, pred_len);
            Rng rng = Rng::stream(config.seed ^ kNoiseTag, episode_index);
            for (float& v : out.data) {
                const double noisy = static_cast<double>(v) +
                                     rng.normal(0.0, config.noise_sigma);
                v = static_cast<float>(std::clamp(noisy, 0.0, 1.0));
            }
            return out;
        }

        case PredictorKind::Frozen: {
            Video out(pred_len, h, w, c);
            const float* last_context = episode.video.frame(kContextFrames - 1);
            for (std::size_t t = 0; t < pred_len; ++t)
                std::copy(last_context, last_context + out.frame_elems(), out.frame(t));
            return out;
        }

        case PredictorKind::ActionFree: {
            // Same initial scene, independently sampled actions: the output
            // is statistically unrelated to the executed sequence.
            sim::SimState state = sim::init_state(world, episode_index);
            Rng rng = Rng::stream(config.seed ^ kActionFreeTag, episode_index);
            const std::vector<sim::Vec2> commanded = sim::sample_action_sequence(world, rng);
            const sim::Episode resim = sim::rollout(world, state, commanded);
            return resim.video.slice(kContextFrames, pred_len);
        }

        case PredictorKind::Drift: {
            Video out(pred_len, h, w, c);
            for (std::size_t t = 0; t < pred_len; ++t) {
                const double sigma = config.drift_rate * static_cast<double>(t + 1);
                img::gaussian_blur(episode.video.frame(kContextFrames + t), out.frame(t),
                                   h, w, c, sigma);
            }
            return out;
        }

        case PredictorKind::Warp: {
            if (episode.actions.size() + 1 != t_total)
                throw ShapeError("predict: warp needs the episode action sequence");
            Video out(pred_len, h, w, c);
            std::vector<float> prev(episode.video.frame(kContextFrames - 1),
                                    episode.video.frame(kContextFrames - 1) +
                                        episode.video.frame_elems());
            for (std::size_t t = 0; t < pred_len; ++t) {
                // Action that produced ground-truth frame t + kContextFrames.
                const sim::Vec2 a = episode.actions[kContextFrames - 1 + t];
                img::bilinear_shift(prev.data(), out.frame(t), h, w, c, a.x, a.y);
                const float* produced = out.frame(t);
                prev.assign(produced, produced + out.frame_elems());
            }
            return out;
        }
    }
    throw Error("unknown predictor kind");
}

Video predict(const PredictorConfig& config, const sim::WorldConfig& world,
              const data::DatasetReader& source, std::uint64_t episode_index) {
    const sim::Episode ep = episode_from_reader(source, episode_index);
    return predict(config, world, ep, episode_index);
}

std::string build_prediction_dataset(const PredictorConfig& config,
                                     const sim::WorldConfig& world,
                                     const std::filesystem::path& source_dir,
                                     const std::filesystem::path& out_dir,
                                     int workers) {
    const data::DatasetReader source(source_dir);
    const auto& video_spec = source.manifest().array("video");
    const std::size_t t_total = video_spec.shape[0];
    const std::size_t size = video_spec.shape[1];
    if (t_total < kContextFrames + 2)
        throw Error("build_prediction_dataset: source episodes too short");
    const std::size_t pred_len = t_total - kContextFrames;

    data::Manifest manifest;
    manifest.kind = "predictions";
    manifest.config = {
        {"predictor",
         {{"kind", to_string(config.kind)},
          {"name", config.display_name()},
          {"blur_sigma", config.blur_sigma},
          {"noise_sigma", config.noise_sigma},
          {"drift_rate", config.drift_rate},
          {"seed", config.seed},
          {"context_frames", kContextFrames},
          // Predicted frame t is paired with the action between ground-truth
          // positions t+1 and t+2; the first consumed action is discarded.
          {"action_alignment", "frame_t_pairs_with_action_t_plus_1"}}},
        {"source",
         {{"path", source_dir.string()},
          {"content_hash", source.manifest().content_hash},
          {"kind", source.manifest().kind}}},
    };
    manifest.seed = config.seed;
    manifest.arrays = {
        {"video", {pred_len, size, size, 3}},
        {"actions", {pred_len - 1, 2}},
    };
    manifest.splits = source.manifest().splits;

    std::error_code ec;
    std::filesystem::create_directories(out_dir, ec);

    const std::vector<std::uint64_t> ids = source.manifest().all_ids();
    std::vector<std::uint64_t> hashes(ids.size(), 0);

    auto worker = [&](std::size_t begin, std::size_t end) {
        const data::DatasetReader local(source_dir);
        for (std::size_t i = begin; i < end; ++i) {
            const std::uint64_t id = ids[i];
            const sim::Episode ep = episode_from_reader(local, id);
            const Video prediction = predict(config, world, ep, id);

            std::vector<float> targets;
            targets.reserve((pred_len - 1) * 2);
            for (std::size_t j = 0; j + 1 < pred_len; ++j) {
                const sim::Vec2& a = ep.actions[kContextFrames + j];
                targets.push_back(static_cast<float>(a.x));
                targets.push_back(static_cast<float>(a.y));
            }
            hashes[i] = data::write_episode(out_dir, manifest, id,
                                            {std::span<const float>(prediction.data),
                                             std::span<const float>(targets)});
        }
    };

    const std::size_t n_workers = std::max(1, workers);
    if (n_workers <= 1 || ids.size() < 2) {
        worker(0, ids.size());
    } else {
        std::vector<std::thread> pool;
        const std::size_t chunk = (ids.size() + n_workers - 1) / n_workers;
        for (std::size_t w = 0; w < n_workers && w * chunk < ids.size(); ++w)
            pool.emplace_back(worker, w * chunk, std::min(ids.size(), (w + 1) * chunk));
        for (auto& th : pool) th.join();
    }

    manifest.content_hash = data::combine_episode_hashes(hashes);
    data::write_manifest(manifest, out_dir);
    return manifest.content_hash;
}

}  // namespace vpbench::pred
