#include "ict/tensor.hpp"

#include <cmath>
#include <sstream>

namespace ict {

namespace {
int64_t shape_numel(const std::vector<int64_t>& shape) {
    int64_t n = 1;
    for (int64_t d : shape) {
        if (d <= 0) throw ContractError("Tensor: non-positive dimension");
        n *= d;
    }
    return n;
}
}  // namespace

Tensor::Tensor(std::vector<int64_t> s, std::vector<double> d)
    : shape(std::move(s)), data(std::move(d)) {
    if (shape_numel(shape) != int64_t(data.size()))
        throw ContractError("Tensor: shape/data size mismatch (" + shape_str() +
                            " vs " + std::to_string(data.size()) + " values)");
}

Tensor Tensor::zeros(std::vector<int64_t> shape) {
    int64_t n = shape_numel(shape);
    return Tensor(std::move(shape), std::vector<double>(size_t(n), 0.0));
}

Tensor Tensor::full(std::vector<int64_t> shape, double value) {
    int64_t n = shape_numel(shape);
    return Tensor(std::move(shape), std::vector<double>(size_t(n), value));
}

Tensor Tensor::row(std::vector<double> d) {
    int64_t n = int64_t(d.size());
    return Tensor({n}, std::move(d));
}

double Tensor::item() const {
    if (data.size() != 1)
        throw ContractError("Tensor::item on non-scalar of shape " + shape_str());
    return data[0];
}

bool Tensor::all_finite() const {
    for (double v : data)
        if (!std::isfinite(v)) return false;
    return true;
}

std::string Tensor::shape_str() const {
    std::ostringstream os;
    os << "(";
    for (size_t i = 0; i < shape.size(); ++i) {
        if (i) os << ",";
        os << shape[i];
    }
    os << ")";
    return os.str();
}

void assert_all_finite(const Tensor& t, const std::string& context) {
    if (!t.all_finite())
        throw ContractError("non-finite value in " + context);
}

}  // namespace ict
