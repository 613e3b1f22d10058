#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "vpbench/dataset.hpp"
#include "vpbench/nn.hpp"

namespace vpbench::infer {

/// The pairwise-frame regressor: two RGB frames stacked along channels,
/// four stride-2 convolutions with ReLU, global average pooling, and a
/// dense head emitting (dx, dy). One parameter set is shared across every
/// timestep of every sequence.
struct InferenceNetSpec {
    std::size_t image_size = 64;
    std::size_t input_channels = 6;
    std::vector<std::size_t> conv_channels = {16, 32, 64, 128};
    std::size_t kernel = 3;
    std::size_t stride = 2;
    std::size_t action_dims = 2;

    nn::Network build() const;
    nlohmann::ordered_json to_json() const;
};

struct TrainConfig {
    nn::OptMethod optimizer = nn::OptMethod::Adam;
    double learning_rate = 1e-3;
    std::size_t batch_size = 32;
    std::size_t max_epochs = 30;
    std::size_t patience = 5;  // epochs without validation-MAE improvement
    std::uint64_t seed = 0;

    nlohmann::ordered_json to_json() const;
};

/// Descriptor of one training sample produced from a predicted video:
/// frames (step, step+1) stacked, the action executed between them, and the
/// parity of the underlying commanded step (even = fresh-velocity draw).
struct PairRecord {
    std::size_t step = 0;  // 0-based pair index within the episode
    bool even = false;
    std::array<double, 2> target{0.0, 0.0};
};

/// Validate the frame/action alignment and enumerate the samples of one
/// episode: F frames and F-1 targets yield F-1 records.
std::vector<PairRecord> make_pairs(std::size_t frame_count,
                                   std::span<const float> targets);

/// Uniform view over the two pair-bearing dataset kinds:
/// predictions (frames 0.., stored targets) and pushworld ground truth
/// (frames from index 2, targets sliced out of the realized actions).
class PairSource {
public:
    explicit PairSource(std::filesystem::path dataset_dir);

    const data::Manifest& manifest() const { return manifest_; }
    const std::filesystem::path& dir() const { return dir_; }
    std::size_t image_size() const { return image_size_; }
    std::size_t pairs_per_episode() const { return pairs_per_episode_; }
    std::size_t frame_offset() const { return frame_offset_; }

    /// Open every episode of a split (kept mapped for repeated epochs).
    class SplitView {
    public:
        std::size_t episode_count() const { return ids_.size(); }
        std::size_t sample_count() const { return ids_.size() * source_->pairs_per_episode(); }
        const std::vector<std::uint64_t>& ids() const { return ids_; }
        const PairSource& source() const { return *source_; }

        /// Stack frames (step, step+1) as H x W x 6 doubles into dst.
        void fill_input(std::size_t episode_ordinal, std::size_t step, double* dst) const;
        std::array<double, 2> target(std::size_t episode_ordinal, std::size_t step) const;

    private:
        friend class PairSource;
        const PairSource* source_ = nullptr;
        std::vector<std::uint64_t> ids_;
        std::vector<data::EpisodeView> episodes_;
    };

    SplitView open_split(const std::string& name) const;

private:
    std::filesystem::path dir_;
    data::Manifest manifest_;
    std::size_t image_size_ = 0;
    std::size_t frame_offset_ = 0;
    std::size_t pairs_per_episode_ = 0;
    std::size_t target_offset_ = 0;  // index into the actions array
};

/// 1 - SS_res / SS_tot. Throws DegenerateInputError when the targets have
/// zero variance (fewer than 2 points or all identical).
double r2(std::span<const double> preds, std::span<const double> targets);
double mean_absolute_error(std::span<const double> preds, std::span<const double> targets);

struct EpochLog {
    std::size_t epoch = 0;
    double train_loss = 0.0;
    double val_mae = 0.0;
};

struct TrainResult {
    double best_val_mae = 0.0;
    std::size_t best_epoch = 0;
    std::size_t epochs_run = 0;
    std::vector<EpochLog> log;
    std::array<double, 2> target_mean{0.0, 0.0};
    std::array<double, 2> target_std{1.0, 1.0};
    std::filesystem::path checkpoint;
};

/// Train the regressor on the train/val splits of `data`. Samples are drawn
/// iid over (episode, step); targets are standardized by train-split
/// statistics for optimization and de-standardized for reporting. The
/// checkpoint with the best validation MAE is kept. Artifacts written to
/// out_dir: checkpoint.bin, log.csv, train_meta.json.
TrainResult train_inference(const PairSource& data, const InferenceNetSpec& spec,
                            const TrainConfig& config,
                            const std::filesystem::path& out_dir);

struct InferenceScore {
    std::size_t episodes = 0;
    std::size_t steps = 0;
    std::vector<double> r2_steps;                      // per step, mean over dims
    std::vector<double> mae_steps;
    std::vector<std::array<double, 2>> r2_steps_dim;   // per step, (dx, dy)
    std::vector<std::array<double, 2>> mae_steps_dim;
    std::vector<std::size_t> degenerate_steps;         // excluded from aggregates
    double aggregate_r2 = 0.0;
    double aggregate_mae = 0.0;
    double even_r2 = 0.0, odd_r2 = 0.0;   // parity of the commanded step
    double even_mae = 0.0, odd_mae = 0.0;
    std::array<double, 2> r2_dims{0.0, 0.0};
    std::array<double, 2> mae_dims{0.0, 0.0};

    nlohmann::ordered_json to_json() const;
    static InferenceScore from_json(const nlohmann::json& j);
};

/// Score a trained net on a test split: per-timestep R^2 and MAE across
/// episodes, aggregated as the mean over timesteps, with parity splits and
/// per-dimension breakdowns. Optionally returns the de-standardized
/// per-episode predictions for trace extraction.
InferenceScore evaluate(const nn::Network& net, const PairSource::SplitView& test,
                        const std::array<double, 2>& target_mean,
                        const std::array<double, 2>& target_std,
                        std::vector<std::vector<std::array<double, 2>>>* predictions = nullptr,
                        std::vector<std::vector<std::array<double, 2>>>* targets = nullptr);

}  // namespace vpbench::infer
