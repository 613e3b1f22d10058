#include "vpbench/sim.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <thread>

#include "vpbench/dataset.hpp"

namespace vpbench::sim {

namespace {

// Fixed palette anchors. Object colors are sampled per episode away from
// both so the gripper stays identifiable.
constexpr Color3 kGripperColor{0.10f, 0.25f, 0.95f};
constexpr Color3 kBackground{0.92f, 0.92f, 0.88f};

double quantize(double v) { return static_cast<double>(static_cast<float>(v)); }

Vec2 quantize(Vec2 v) { return {quantize(v.x), quantize(v.y)}; }

double clamp(double v, double lo, double hi) { return std::min(std::max(v, lo), hi); }

double color_dist2(Color3 a, Color3 b) {
    const double dr = a.r - b.r, dg = a.g - b.g, db = a.b - b.b;
    return dr * dr + dg * dg + db * db;
}

/// Push `obj` out of the gripper disc along the contact normal. When the
/// pushed position clips at a table wall, the object slides along that wall
/// to the nearest point at contact distance, so it never rests overlapping
/// the gripper.
Vec2 resolve_push(Vec2 gripper, Vec2 obj, double contact, double lo, double hi) {
    const double dx = obj.x - gripper.x;
    const double dy = obj.y - gripper.y;
    const double dist = std::hypot(dx, dy);
    if (dist >= contact) return obj;
    double nx = 1.0, ny = 0.0;
    if (dist > 1e-12) {
        nx = dx / dist;
        ny = dy / dist;
    }
    Vec2 target{gripper.x + nx * contact, gripper.y + ny * contact};
    Vec2 clipped{clamp(target.x, lo, hi), clamp(target.y, lo, hi)};
    if (clipped.x == target.x && clipped.y == target.y) return target;

    // Wall-pinned: keep the clipped coordinate(s) on the wall and solve the
    // other so the center-to-center distance is exactly `contact`.
    auto solve_axis = [&](double fixed_delta, double push_dir) -> double {
        const double rest = contact * contact - fixed_delta * fixed_delta;
        if (rest < 0.0) return std::numeric_limits<double>::quiet_NaN();
        const double span = std::sqrt(rest);
        const double preferred = push_dir >= 0.0 ? span : -span;
        return preferred;
    };

    if (clipped.x != target.x) {
        // x pinned at a wall; slide in y.
        const double off = solve_axis(clipped.x - gripper.x, ny);
        if (std::isfinite(off)) {
            double y = gripper.y + off;
            if (y < lo || y > hi) y = gripper.y - off;
            if (y >= lo && y <= hi) return {clipped.x, y};
        }
    }
    if (clipped.y != target.y) {
        // y pinned at a wall; slide in x.
        const double off = solve_axis(clipped.y - gripper.y, nx);
        if (std::isfinite(off)) {
            double x = gripper.x + off;
            if (x < lo || x > hi) x = gripper.x - off;
            if (x >= lo && x <= hi) return {x, clipped.y};
        }
    }
    // No sliding solution exists only when the gripper is farther than
    // `contact` from the wall, in which case the clipped point is already
    // overlap-free.
    return clipped;
}

struct Disc {
    Vec2 center;
    double radius;
    Color3 color;
};

void rasterize_disc(const Disc& disc, std::size_t size, float* frame) {
    const double r = disc.radius;
    const long x0 = std::max<long>(0, static_cast<long>(std::floor(disc.center.x - r - 1.0)));
    const long x1 = std::min<long>(static_cast<long>(size) - 1,
                                   static_cast<long>(std::ceil(disc.center.x + r + 1.0)));
    const long y0 = std::max<long>(0, static_cast<long>(std::floor(disc.center.y - r - 1.0)));
    const long y1 = std::min<long>(static_cast<long>(size) - 1,
                                   static_cast<long>(std::ceil(disc.center.y + r + 1.0)));
    const double r2 = r * r;
    for (long y = y0; y <= y1; ++y) {
        for (long x = x0; x <= x1; ++x) {
            int covered = 0;
            for (int sy = 0; sy < 4; ++sy) {
                const double py = static_cast<double>(y) + (sy + 0.5) / 4.0;
                const double dy = py - disc.center.y;
                for (int sx = 0; sx < 4; ++sx) {
                    const double px = static_cast<double>(x) + (sx + 0.5) / 4.0;
                    const double dx = px - disc.center.x;
                    if (dx * dx + dy * dy <= r2) ++covered;
                }
            }
            if (covered == 0) continue;
            const float alpha = static_cast<float>(covered) / 16.0f;
            float* px = frame + (static_cast<std::size_t>(y) * size +
                                 static_cast<std::size_t>(x)) * 3;
            px[0] = (1.0f - alpha) * px[0] + alpha * disc.color.r;
            px[1] = (1.0f - alpha) * px[1] + alpha * disc.color.g;
            px[2] = (1.0f - alpha) * px[2] + alpha * disc.color.b;
        }
    }
}

SimState sample_initial_state(const WorldConfig& config, Rng& rng) {
    const double lo = config.bound_lo(), hi = config.bound_hi();
    const double contact = config.gripper_radius + config.object_radius;
    SimState st;
    st.gripper_color = kGripperColor;
    st.background = kBackground;
    st.gripper = quantize({rng.uniform(lo, hi), rng.uniform(lo, hi)});

    st.objects.reserve(config.num_objects);
    for (std::size_t i = 0; i < config.num_objects; ++i) {
        Vec2 pos;
        for (int attempt = 0; attempt < 64; ++attempt) {
            pos = {rng.uniform(lo, hi), rng.uniform(lo, hi)};
            const double gd = std::hypot(pos.x - st.gripper.x, pos.y - st.gripper.y);
            if (gd < contact + 1.0) continue;
            bool clear = true;
            for (const Vec2& other : st.objects) {
                if (std::hypot(pos.x - other.x, pos.y - other.y) <
                    2.0 * config.object_radius) {
                    clear = false;
                    break;
                }
            }
            if (clear || attempt >= 48) break;  // crowded tables may touch each other
        }
        // Never start overlapping the gripper.
        const double gd = std::hypot(pos.x - st.gripper.x, pos.y - st.gripper.y);
        if (gd < contact)
            pos = resolve_push(st.gripper, pos, contact, lo, hi);
        st.objects.push_back(quantize(pos));
    }

    st.object_colors.reserve(config.num_objects);
    for (std::size_t i = 0; i < config.num_objects; ++i) {
        Color3 c;
        do {
            c = {static_cast<float>(rng.uniform(0.05, 0.95)),
                 static_cast<float>(rng.uniform(0.05, 0.95)),
                 static_cast<float>(rng.uniform(0.05, 0.95))};
        } while (color_dist2(c, kGripperColor) < 0.20 || color_dist2(c, kBackground) < 0.12);
        st.object_colors.push_back(c);
    }
    return st;
}

}  // namespace

void WorldConfig::validate() const {
    if (image_size < 8) throw Error("world config: image_size must be at least 8");
    if (channels != 3) throw Error("world config: only 3-channel rendering is supported");
    if (episode_length < 3)
        throw Error("world config: episode_length must be >= 3 (2 context + 1 predicted)");
    if (!(sigma_hi > sigma_lo) || !(sigma_lo > 0.0))
        throw Error("world config: requires sigma_hi > sigma_lo > 0");
    if (margin <= 0.0 || 2.0 * margin >= static_cast<double>(image_size))
        throw Error("world config: margin must satisfy 0 < margin < image_size/2");
    if (gripper_radius <= 0.0 || object_radius <= 0.0)
        throw Error("world config: radii must be positive");
    if (bound_hi() - bound_lo() <= 2.0 * (gripper_radius + object_radius))
        throw Error("world config: table too small for gripper/object contact radius");
}

std::vector<Vec2> sample_action_sequence(const WorldConfig& config, Rng& rng) {
    const std::size_t count = config.episode_length - 1;
    std::vector<Vec2> actions(count);
    for (std::size_t t = 0; t < count; ++t) {
        if (t % 2 == 0) {
            actions[t].x = rng.normal(0.0, config.sigma_hi);
            actions[t].y = rng.normal(0.0, config.sigma_hi);
        } else {
            actions[t].x = rng.normal(actions[t - 1].x, config.sigma_lo);
            actions[t].y = rng.normal(actions[t - 1].y, config.sigma_lo);
        }
    }
    return actions;
}

Vec2 step(SimState& state, Vec2 commanded, const WorldConfig& config) {
    const double lo = config.bound_lo(), hi = config.bound_hi();
    const double contact = config.gripper_radius + config.object_radius;
    const Vec2 before = state.gripper;

    state.gripper = quantize({clamp(before.x + commanded.x, lo, hi),
                              clamp(before.y + commanded.y, lo, hi)});
    for (Vec2& obj : state.objects)
        obj = quantize(resolve_push(state.gripper, obj, contact, lo, hi));

    return quantize({state.gripper.x - before.x, state.gripper.y - before.y});
}

void render(const SimState& state, const WorldConfig& config, float* frame) {
    const std::size_t size = config.image_size;
    for (std::size_t i = 0; i < size * size; ++i) {
        frame[i * 3 + 0] = state.background.r;
        frame[i * 3 + 1] = state.background.g;
        frame[i * 3 + 2] = state.background.b;
    }
    for (std::size_t i = 0; i < state.objects.size(); ++i)
        rasterize_disc({state.objects[i], config.object_radius, state.object_colors[i]},
                       size, frame);
    rasterize_disc({state.gripper, config.gripper_radius, state.gripper_color}, size, frame);
}

Video render_frame(const SimState& state, const WorldConfig& config) {
    Video v(1, config.image_size, config.image_size, 3);
    render(state, config, v.frame(0));
    return v;
}

SimState init_state(const WorldConfig& config, std::uint64_t episode_index) {
    Rng rng = Rng::stream(config.seed, episode_index);
    return sample_initial_state(config, rng);
}

Episode rollout(const WorldConfig& config, SimState state,
                const std::vector<Vec2>& commanded) {
    const std::size_t t_total = config.episode_length;
    if (commanded.size() != t_total - 1)
        throw Error("rollout: expected " + std::to_string(t_total - 1) + " actions, got " +
                    std::to_string(commanded.size()));

    Episode ep;
    ep.video = Video(t_total, config.image_size, config.image_size, 3);
    ep.gripper_positions.reserve(t_total);
    ep.actions.reserve(t_total - 1);
    ep.object_positions.reserve(t_total);

    ep.gripper_positions.push_back(state.gripper);
    ep.object_positions.push_back(state.objects);
    render(state, config, ep.video.frame(0));

    for (std::size_t t = 0; t + 1 < t_total; ++t) {
        const Vec2 realized = step(state, commanded[t], config);
        ep.actions.push_back(realized);
        ep.gripper_positions.push_back(state.gripper);
        ep.object_positions.push_back(state.objects);
        render(state, config, ep.video.frame(t + 1));
    }
    return ep;
}

Episode generate_episode(const WorldConfig& config, std::uint64_t episode_index) {
    Rng rng = Rng::stream(config.seed, episode_index);
    SimState state = sample_initial_state(config, rng);
    const std::vector<Vec2> commanded = sample_action_sequence(config, rng);
    return rollout(config, state, commanded);
}

namespace {

std::vector<float> flatten_positions(const std::vector<Vec2>& positions) {
    std::vector<float> out;
    out.reserve(positions.size() * 2);
    for (const Vec2& p : positions) {
        out.push_back(static_cast<float>(p.x));
        out.push_back(static_cast<float>(p.y));
    }
    return out;
}

}  // namespace

std::string generate_dataset(const WorldConfig& config, const SplitSpec& splits,
                             const std::filesystem::path& out_dir, int workers) {
    config.validate();
    const std::size_t total = splits.total();
    const std::size_t t_total = config.episode_length;

    data::Manifest manifest;
    manifest.kind = "pushworld";
    manifest.config = {
        {"image_size", config.image_size},
        {"channels", config.channels},
        {"episode_length", config.episode_length},
        {"num_objects", config.num_objects},
        {"gripper_radius", config.gripper_radius},
        {"object_radius", config.object_radius},
        {"sigma_hi", config.sigma_hi},
        {"sigma_lo", config.sigma_lo},
        {"margin", config.margin},
    };
    manifest.seed = config.seed;
    manifest.arrays = {
        {"video", {t_total, config.image_size, config.image_size, 3}},
        {"gripper_positions", {t_total, 2}},
        {"actions", {t_total - 1, 2}},
        {"object_positions", {t_total, config.num_objects, 2}},
    };
    std::vector<std::uint64_t> ids(total);
    for (std::size_t i = 0; i < total; ++i) ids[i] = i;
    manifest.splits = {
        {"train", {ids.begin(), ids.begin() + splits.train}},
        {"val", {ids.begin() + splits.train, ids.begin() + splits.train + splits.val}},
        {"test", {ids.begin() + splits.train + splits.val, ids.end()}},
    };

    std::error_code ec;
    std::filesystem::create_directories(out_dir, ec);

    std::vector<std::uint64_t> hashes(total, 0);
    auto worker = [&](std::size_t begin, std::size_t end) {
        for (std::size_t id = begin; id < end; ++id) {
            const Episode ep = generate_episode(config, id);
            std::vector<float> gripper = flatten_positions(ep.gripper_positions);
            std::vector<float> actions = flatten_positions(ep.actions);
            std::vector<float> objects;
            objects.reserve(t_total * config.num_objects * 2);
            for (const auto& frame_objects : ep.object_positions)
                for (const Vec2& p : frame_objects) {
                    objects.push_back(static_cast<float>(p.x));
                    objects.push_back(static_cast<float>(p.y));
                }
            hashes[id] = data::write_episode(
                out_dir, manifest, id,
                {std::span<const float>(ep.video.data),
                 std::span<const float>(gripper),
                 std::span<const float>(actions),
                 std::span<const float>(objects)});
        }
    };

    const std::size_t n_workers = std::max(1, workers);
    if (n_workers <= 1 || total < 2) {
        worker(0, total);
    } else {
        std::vector<std::thread> pool;
        const std::size_t chunk = (total + n_workers - 1) / n_workers;
        for (std::size_t w = 0; w < n_workers && w * chunk < total; ++w)
            pool.emplace_back(worker, w * chunk, std::min(total, (w + 1) * chunk));
        for (auto& th : pool) th.join();
    }

    manifest.content_hash = data::combine_episode_hashes(hashes);
    write_manifest(manifest, out_dir);
    return manifest.content_hash;
}

}  // namespace vpbench::sim
