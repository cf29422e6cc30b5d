#include "ict/params.hpp"

#include <cstring>

#include "ict/errors.hpp"

namespace ict {

Tensor& ParamStore::add(const std::string& name, Tensor t) {
    if (has(name)) throw ContractError("ParamStore: duplicate parameter " + name);
    index_[name] = entries.size();
    entries.emplace_back(name, std::move(t));
    return entries.back().second;
}

Tensor& ParamStore::at(const std::string& name) {
    auto it = index_.find(name);
    if (it == index_.end()) throw ContractError("ParamStore: unknown parameter " + name);
    return entries[it->second].second;
}

const Tensor& ParamStore::at(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw ContractError("ParamStore: unknown parameter " + name);
    return entries[it->second].second;
}

bool ParamStore::bitwise_equal(const ParamStore& o) const {
    if (entries.size() != o.entries.size()) return false;
    for (size_t i = 0; i < entries.size(); ++i) {
        if (entries[i].first != o.entries[i].first) return false;
        if (entries[i].second.shape != o.entries[i].second.shape) return false;
        // Bitwise, not value, comparison: -0.0 vs 0.0 must be caught.
        const auto& a = entries[i].second.data;
        const auto& b = o.entries[i].second.data;
        if (std::memcmp(a.data(), b.data(), a.size() * sizeof(double)) != 0) return false;
    }
    return true;
}

}  // namespace ict
