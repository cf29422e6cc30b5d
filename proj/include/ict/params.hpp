#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "ict/tensor.hpp"

namespace ict {

// Ordered name -> Tensor map holding all trainable parameters. Iteration
// order is insertion order and is stable across runs.
struct ParamStore {
    std::vector<std::pair<std::string, Tensor>> entries;
    int64_t step_count = 0;

    Tensor& add(const std::string& name, Tensor t);
    bool has(const std::string& name) const { return index_.count(name) > 0; }
    Tensor& at(const std::string& name);
    const Tensor& at(const std::string& name) const;
    size_t size() const { return entries.size(); }

    bool bitwise_equal(const ParamStore& o) const;

private:
    std::unordered_map<std::string, size_t> index_;
};

// Gradients in the same order as the ParamStore they were taken against.
using GradStore = std::vector<std::pair<std::string, Tensor>>;

}  // namespace ict
