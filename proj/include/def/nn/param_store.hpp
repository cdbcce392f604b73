#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace def::nn {

struct ParamRef {
    std::size_t offset = 0;
    std::size_t size = 0;
};

/// Flat parameter vector with a matching gradient vector. Tensors are named
/// slices of the flat storage.
class ParamStore {
public:
    struct Entry {
        std::string name;
        ParamRef ref;
    };

    ParamRef add(std::string name, std::size_t size);

    std::size_t size() const { return values_.size(); }
    const std::vector<Entry>& entries() const { return entries_; }

    std::span<double> values() { return values_; }
    std::span<const double> values() const { return values_; }
    std::span<double> grads() { return grads_; }
    std::span<const double> grads() const { return grads_; }

    std::span<double> value(ParamRef r) { return values().subspan(r.offset, r.size); }
    std::span<const double> value(ParamRef r) const { return values().subspan(r.offset, r.size); }
    std::span<double> grad(ParamRef r) { return grads().subspan(r.offset, r.size); }

    void zero_grad();
    double grad_norm() const;
    bool all_finite() const;

private:
    std::vector<double> values_;
    std::vector<double> grads_;
    std::vector<Entry> entries_;
};

}  // namespace def::nn
