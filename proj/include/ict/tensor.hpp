#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "ict/errors.hpp"

namespace ict {

// Dense row-major tensor of 64-bit reals. Rank 0 (scalar), 1 or 2 in
// practice; the shape is kept generic for serialization.
struct Tensor {
    std::vector<int64_t> shape;
    std::vector<double> data;

    Tensor() = default;
    Tensor(std::vector<int64_t> s, std::vector<double> d);

    static Tensor zeros(std::vector<int64_t> shape);
    static Tensor full(std::vector<int64_t> shape, double value);
    static Tensor scalar(double v) { return Tensor({}, {v}); }
    static Tensor row(std::vector<double> d);

    int64_t numel() const { return int64_t(data.size()); }
    bool is_scalar() const { return shape.empty(); }
    bool same_shape(const Tensor& o) const { return shape == o.shape; }

    // 2-D accessors; rank-1 tensors behave as a single row.
    int64_t rows() const { return shape.size() == 2 ? shape[0] : 1; }
    int64_t cols() const {
        if (shape.size() == 2) return shape[1];
        if (shape.size() == 1) return shape[0];
        return 1;
    }
    double& at(int64_t r, int64_t c) { return data[size_t(r * cols() + c)]; }
    double at(int64_t r, int64_t c) const { return data[size_t(r * cols() + c)]; }

    double item() const;
    bool all_finite() const;
    std::string shape_str() const;
};

// Throws ContractError naming the context if any entry is NaN/Inf.
void assert_all_finite(const Tensor& t, const std::string& context);

}  // namespace ict
