#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include "vpbench/dataset.hpp"
#include "vpbench/sim.hpp"
#include "vpbench/video.hpp"

namespace vpbench::pred {

/// Surrogate video-prediction models of controlled quality. Each consumes
/// 2 context frames (and, except action_free, the commanded actions) and
/// emits episode_length - 2 predicted frames.
enum class PredictorKind {
    Oracle,       // ground-truth playback
    BlurOracle,   // ground truth with per-frame Gaussian blur
    NoiseOracle,  // ground truth with iid pixel noise, clipped
    Frozen,       // repeats the last context frame
    ActionFree,   // re-simulation with freshly sampled actions
    Drift,        // blur growing linearly with the step index
    Warp,         // shifts the previous frame by the commanded action
};

std::string to_string(PredictorKind kind);
PredictorKind predictor_kind_from_string(const std::string& name);

struct PredictorConfig {
    PredictorKind kind = PredictorKind::Oracle;
    std::string name;  // defaults to the kind string
    double blur_sigma = 2.0;
    double noise_sigma = 0.1;
    double drift_rate = 0.15;
    std::uint64_t seed = 0;

    std::string display_name() const { return name.empty() ? to_string(kind) : name; }
};

inline constexpr std::size_t kContextFrames = 2;

/// Predict frames 3..T of `episode` (indices 2..T-1). The episode index
/// selects the per-episode RNG stream for stochastic kinds, so predictions
/// are deterministic given (config, seed, episode).
Video predict(const PredictorConfig& config, const sim::WorldConfig& world,
              const sim::Episode& episode, std::uint64_t episode_index);

/// Same entry point reading the episode from a generated dataset.
Video predict(const PredictorConfig& config, const sim::WorldConfig& world,
              const data::DatasetReader& source, std::uint64_t episode_index);

/// Build the on-disk prediction dataset for every split of `source`:
/// per episode, the predicted video plus the aligned 27 action targets
/// (predicted frame t pairs with the displacement between ground-truth
/// positions t+1 and t+2; the action spent producing the first predicted
/// frame is consumed). Returns the dataset content hash.
std::string build_prediction_dataset(const PredictorConfig& config,
                                     const sim::WorldConfig& world,
                                     const std::filesystem::path& source_dir,
                                     const std::filesystem::path& out_dir,
                                     int workers = 1);

}  // namespace vpbench::pred
