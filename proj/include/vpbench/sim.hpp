#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <vector>

#include "vpbench/rng.hpp"
#include "vpbench/video.hpp"

namespace vpbench::sim {

struct Vec2 {
    double x = 0.0;
    double y = 0.0;
};

struct Color3 {
    float r = 0.0f;
    float g = 0.0f;
    float b = 0.0f;
};

/// Geometry and sampling parameters of the synthetic push table.
///
/// Actions are commanded gripper displacements in pixels. Their per-component
/// standard deviation alternates: fresh draws of sigma_hi at even steps, a
/// sigma_lo perturbation of the previous action at odd steps.
struct WorldConfig {
    std::size_t image_size = 64;
    std::size_t channels = 3;
    std::size_t episode_length = 30;  // frames per episode (T)
    std::size_t num_objects = 3;
    double gripper_radius = 4.0;
    double object_radius = 5.0;
    double sigma_hi = 3.0;
    double sigma_lo = 0.5;
    double margin = 8.0;
    std::uint64_t seed = 0;

    double bound_lo() const { return margin; }
    double bound_hi() const { return static_cast<double>(image_size) - margin; }

    void validate() const;
};

/// Scene state: disc centers in pixel coordinates (x = column, y = row)
/// plus the per-episode palette.
struct SimState {
    Vec2 gripper;
    std::vector<Vec2> objects;
    std::vector<Color3> object_colors;
    Color3 gripper_color;
    Color3 background;
};

/// One generated episode. Positions difference exactly to `actions`:
/// boundary clipping and contact push-back are folded into the recorded
/// action, so targets extracted by differencing are noiseless.
struct Episode {
    Video video;                                     // T x S x S x 3
    std::vector<Vec2> gripper_positions;             // T
    std::vector<Vec2> actions;                       // T - 1, realized
    std::vector<std::vector<Vec2>> object_positions; // T x num_objects
};

/// Commanded action sequence of length T - 1 with the alternating-variance
/// structure described on WorldConfig.
std::vector<Vec2> sample_action_sequence(const WorldConfig& config, Rng& rng);

/// Advance the scene by one commanded action. The gripper is clipped to the
/// table bounds; overlapped objects are pushed out along the contact normal
/// (sliding along a wall when pinned). Returns the realized gripper
/// displacement. Positions are kept on the float32 grid so episodes survive
/// storage bit-exactly.
Vec2 step(SimState& state, Vec2 commanded, const WorldConfig& config);

/// Rasterize anti-aliased discs (objects first, gripper on top) over a
/// uniform background into a S x S x 3 float frame. 4x4 supersampling per
/// pixel makes sub-pixel displacements visible in the intensities.
void render(const SimState& state, const WorldConfig& config, float* frame);
Video render_frame(const SimState& state, const WorldConfig& config);

/// The deterministic initial scene of episode `episode_index` under
/// config.seed (gripper pose, object poses, palette).
SimState init_state(const WorldConfig& config, std::uint64_t episode_index);

/// Roll a state forward through a commanded action sequence, rendering every
/// frame and recording realized actions.
Episode rollout(const WorldConfig& config, SimState state,
                const std::vector<Vec2>& commanded);

/// init_state + sampled commanded actions + rollout for one episode index.
Episode generate_episode(const WorldConfig& config, std::uint64_t episode_index);

struct SplitSpec {
    std::size_t train = 2000;
    std::size_t val = 200;
    std::size_t test = 256;
    std::size_t total() const { return train + val + test; }
};

/// Write a full dataset (manifest + one binary file per episode) under
/// `out_dir`. Episodes are generated on `workers` threads from per-episode
/// RNG streams, so the bytes do not depend on the worker count.
/// Returns the dataset content hash (hex).
std::string generate_dataset(const WorldConfig& config, const SplitSpec& splits,
                             const std::filesystem::path& out_dir, int workers = 1);

}  // namespace vpbench::sim
