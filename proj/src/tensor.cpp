#include "hada/tensor.hpp"

#include <cmath>
#include <sstream>

namespace hada {

Tensor::Tensor(std::vector<std::size_t> s, std::vector<double> d)
    : shape(std::move(s)), data(std::move(d)) {
    if (shape_numel(shape) != data.size()) {
        throw ShapeError("tensor: shape " + shape_str(shape) + " does not match " +
                         std::to_string(data.size()) + " values");
    }
}

Tensor Tensor::scalar(double v) { return Tensor({}, {v}); }

Tensor Tensor::zeros(std::vector<std::size_t> shape) {
    std::vector<double> d(shape_numel(shape), 0.0);
    return Tensor(std::move(shape), std::move(d));
}

Tensor Tensor::full(std::vector<std::size_t> shape, double v) {
    std::vector<double> d(shape_numel(shape), v);
    return Tensor(std::move(shape), std::move(d));
}

Tensor Tensor::vector(std::vector<double> v) {
    std::size_t n = v.size();
    return Tensor({n}, std::move(v));
}

Tensor Tensor::matrix(std::size_t rows, std::size_t cols, std::vector<double> v) {
    return Tensor({rows, cols}, std::move(v));
}

Tensor Tensor::identity(std::size_t n) {
    Tensor t = zeros({n, n});
    for (std::size_t i = 0; i < n; ++i) t.data[i * n + i] = 1.0;
    return t;
}

std::size_t Tensor::rows() const {
    if (rank() != 2) throw ShapeError("rows(): tensor is not a matrix, shape " + shape_str(shape));
    return shape[0];
}

std::size_t Tensor::cols() const {
    if (rank() != 2) throw ShapeError("cols(): tensor is not a matrix, shape " + shape_str(shape));
    return shape[1];
}

double& Tensor::at(std::size_t r, std::size_t c) { return data[r * cols() + c]; }
double Tensor::at(std::size_t r, std::size_t c) const { return data[r * cols() + c]; }

double Tensor::item() const {
    if (data.size() != 1) {
        throw ShapeError("item(): tensor has " + std::to_string(data.size()) + " elements");
    }
    return data[0];
}

bool Tensor::all_finite() const {
    for (double v : data) {
        if (!std::isfinite(v)) return false;
    }
    return true;
}

std::string shape_str(const std::vector<std::size_t>& shape) {
    std::ostringstream os;
    os << "[";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << "x";
        os << shape[i];
    }
    os << "]";
    return os.str();
}

std::size_t shape_numel(const std::vector<std::size_t>& shape) {
    std::size_t n = 1;
    for (std::size_t d : shape) n *= d;
    return n;
}

Tensor init_uniform(std::vector<std::size_t> shape, std::size_t fan_in, std::mt19937_64& rng) {
    double bound = 1.0 / std::sqrt(static_cast<double>(fan_in == 0 ? 1 : fan_in));
    std::uniform_real_distribution<double> dist(-bound, bound);
    Tensor t = Tensor::zeros(std::move(shape));
    for (double& v : t.data) v = dist(rng);
    return t;
}

}  // namespace hada
