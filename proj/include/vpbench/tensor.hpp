#pragma once

#include <cmath>
#include <cstddef>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "vpbench/error.hpp"

namespace vpbench::nn {

/// Dense n-dimensional array of doubles with an optional gradient buffer of
/// the same length. Storage is 64-bit throughout so finite-difference checks
/// stay tight.
struct Tensor {
    std::vector<std::size_t> shape;
    std::vector<double> data;
    std::vector<double> grad;  // empty or same length as data

    Tensor() = default;

    explicit Tensor(std::vector<std::size_t> dims) : shape(std::move(dims)) {
        data.assign(numel(), 0.0);
    }

    Tensor(std::vector<std::size_t> dims, std::vector<double> values)
        : shape(std::move(dims)), data(std::move(values)) {
        if (data.size() != numel()) {
            throw ShapeError("tensor data length " + std::to_string(data.size()) +
                             " does not match shape " + shape_string());
        }
    }

    std::size_t numel() const {
        std::size_t n = 1;
        for (std::size_t d : shape) n *= d;
        return n;
    }

    void ensure_grad() {
        if (grad.size() != data.size()) grad.assign(data.size(), 0.0);
    }

    void zero_grad() {
        if (!grad.empty()) std::fill(grad.begin(), grad.end(), 0.0);
    }

    bool all_finite() const {
        for (double v : data)
            if (!std::isfinite(v)) return false;
        return true;
    }

    std::string shape_string() const {
        std::ostringstream out;
        out << "[";
        for (std::size_t i = 0; i < shape.size(); ++i) {
            if (i) out << ", ";
            out << shape[i];
        }
        out << "]";
        return out.str();
    }
};

inline bool same_shape(const Tensor& a, const Tensor& b) {
    return a.shape == b.shape;
}

}  // namespace vpbench::nn
