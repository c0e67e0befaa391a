#pragma once

#include <string>
#include <unordered_map>
#include <vector>

#include "uqr/rng.hpp"
#include "uqr/tensor.hpp"

namespace uqr {

// One trainable array. Gradients accumulate here across per-example tapes
// until the optimizer consumes them.
struct Param {
    std::string name;
    Shape shape;
    std::vector<double> value;
    std::vector<double> grad;
};

class ParamBank {
public:
    int add(std::string name, Shape shape, std::vector<double> init);
    int add_zeros(std::string name, Shape shape);
    // Uniform(-s, s) with s = sqrt(6 / (fan_in + fan_out)).
    int add_glorot(std::string name, Shape shape, RngStream& rng);

    Param& at(int idx) { return params_[idx]; }
    const Param& at(int idx) const { return params_[idx]; }
    int index_of(const std::string& name) const;
    int count() const { return static_cast<int>(params_.size()); }

    void zero_grads();

    void save(const std::string& path) const;
    // Loads values into matching names; shape mismatch or unknown name fails.
    void load(const std::string& path);

private:
    std::vector<Param> params_;
    std::unordered_map<std::string, int> by_name_;
};

// Lazily mounts bank parameters onto one tape as requires_grad leaves, and
// harvests tape gradients back into the bank afterwards. A map built over a
// const bank is read-only: mounting works, harvesting throws.
class ParamMap {
public:
    ParamMap(Tape& tape, ParamBank& bank)
        : tape_(&tape), bank_(&bank), mutable_bank_(&bank), node_of_(bank.count(), -1) {}
    ParamMap(Tape& tape, const ParamBank& bank)
        : tape_(&tape), bank_(&bank), mutable_bank_(nullptr), node_of_(bank.count(), -1) {}

    Tensor get(int param_idx);

    // bank.grad += scale * tape gradient, for every mounted parameter.
    void harvest(double scale = 1.0);

private:
    Tape* tape_;
    const ParamBank* bank_;
    ParamBank* mutable_bank_;
    std::vector<int> node_of_;
};

} // namespace uqr
