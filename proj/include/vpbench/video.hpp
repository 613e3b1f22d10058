#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "vpbench/error.hpp"

namespace vpbench {

/// T x H x W x C block of float32 intensities in [0, 1], frame-major.
/// This is the unit the simulator and every predictor emit.
struct Video {
    std::size_t frames = 0;
    std::size_t height = 0;
    std::size_t width = 0;
    std::size_t channels = 0;
    std::vector<float> data;

    Video() = default;
    Video(std::size_t t, std::size_t h, std::size_t w, std::size_t c)
        : frames(t), height(h), width(w), channels(c), data(t * h * w * c, 0.0f) {}

    std::size_t frame_elems() const { return height * width * channels; }
    std::size_t size() const { return data.size(); }

    float* frame(std::size_t t) { return data.data() + t * frame_elems(); }
    const float* frame(std::size_t t) const { return data.data() + t * frame_elems(); }

    std::span<const float> frame_span(std::size_t t) const {
        return {frame(t), frame_elems()};
    }

    bool same_geometry(const Video& other) const {
        return frames == other.frames && height == other.height && width == other.width &&
               channels == other.channels;
    }

    /// Video holding frames [first, first + count) of this one.
    Video slice(std::size_t first, std::size_t count) const {
        if (first + count > frames) throw ShapeError("video slice out of range");
        Video out(count, height, width, channels);
        std::copy(frame(first), frame(first + count), out.data.begin());
        return out;
    }
};

/// Non-owning view of one H x W x C frame.
struct FrameView {
    const float* data = nullptr;
    std::size_t height = 0;
    std::size_t width = 0;
    std::size_t channels = 0;

    FrameView() = default;
    FrameView(const float* d, std::size_t h, std::size_t w, std::size_t c)
        : data(d), height(h), width(w), channels(c) {}
    FrameView(const Video& v, std::size_t t)
        : data(v.frame(t)), height(v.height), width(v.width), channels(v.channels) {}

    std::size_t size() const { return height * width * channels; }
    float at(std::size_t y, std::size_t x, std::size_t c) const {
        return data[(y * width + x) * channels + c];
    }
};

}  // namespace vpbench
