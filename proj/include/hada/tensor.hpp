#pragma once

#include <cstddef>
#include <initializer_list>
#include <random>
#include <string>
#include <vector>

#include "hada/errors.hpp"

namespace hada {

// Dense row-major f64 tensor. Rank 0 (scalar), 1 (vector) and 2 (matrix)
// are the only ranks the engine produces.
struct Tensor {
    std::vector<std::size_t> shape;
    std::vector<double> data;

    Tensor() = default;
    Tensor(std::vector<std::size_t> s, std::vector<double> d);

    static Tensor scalar(double v);
    static Tensor zeros(std::vector<std::size_t> shape);
    static Tensor full(std::vector<std::size_t> shape, double v);
    static Tensor vector(std::vector<double> v);
    static Tensor matrix(std::size_t rows, std::size_t cols, std::vector<double> v);
    static Tensor identity(std::size_t n);

    std::size_t size() const { return data.size(); }
    std::size_t rank() const { return shape.size(); }
    std::size_t rows() const;
    std::size_t cols() const;

    double& at(std::size_t r, std::size_t c);
    double at(std::size_t r, std::size_t c) const;
    double item() const;  // rank-0/size-1 access

    bool same_shape(const Tensor& other) const { return shape == other.shape; }
    bool all_finite() const;
};

std::string shape_str(const std::vector<std::size_t>& shape);
std::size_t shape_numel(const std::vector<std::size_t>& shape);

// Uniform(-1/sqrt(fan_in), +1/sqrt(fan_in)) init used for every affine weight.
Tensor init_uniform(std::vector<std::size_t> shape, std::size_t fan_in, std::mt19937_64& rng);

}  // namespace hada
