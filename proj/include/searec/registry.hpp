#pragma once

#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "searec/tensor.hpp"

namespace searec {

// Owns the canonical name -> tensor mapping for trainable parameters.
// Aliases document weight sharing: an alias resolves to the same tensor
// object as its canonical name, and never counts twice in totals.
template <typename Real>
class ParamRegistry {
  public:
    TensorPtr<Real> add(const std::string& name, TensorPtr<Real> t) {
        if (index_.count(name) || aliases_.count(name))
            throw ConfigError("duplicate parameter name: " + name);
        t->requires_grad = true;
        t->is_param = true;
        index_[name] = canonical_.size();
        canonical_.emplace_back(name, t);
        return canonical_.back().second;
    }

    void alias(const std::string& alias_name, const std::string& canonical_name) {
        if (index_.count(alias_name) || aliases_.count(alias_name))
            throw ConfigError("duplicate parameter name: " + alias_name);
        if (!index_.count(canonical_name))
            throw ConfigError("alias target not registered: " + canonical_name);
        aliases_[alias_name] = canonical_name;
    }

    bool has(const std::string& name) const {
        return index_.count(name) || aliases_.count(name);
    }

    TensorPtr<Real> get(const std::string& name) const {
        auto a = aliases_.find(name);
        const std::string& key = a == aliases_.end() ? name : a->second;
        auto it = index_.find(key);
        if (it == index_.end()) throw ConfigError("unknown parameter: " + name);
        return canonical_[it->second].second;
    }

    // canonical entries in registration order
    const std::vector<std::pair<std::string, TensorPtr<Real>>>& params() const {
        return canonical_;
    }

    const std::unordered_map<std::string, std::string>& aliases() const { return aliases_; }

    std::size_t total_elements() const {
        std::size_t n = 0;
        for (const auto& kv : canonical_) n += kv.second->numel();
        return n;
    }

    void zero_grads() {
        for (auto& kv : canonical_) kv.second->zero_grad();
    }

  private:
    std::vector<std::pair<std::string, TensorPtr<Real>>> canonical_;
    std::unordered_map<std::string, std::size_t> index_;
    std::unordered_map<std::string, std::string> aliases_;
};

}  // namespace searec
