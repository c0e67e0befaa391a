#include "uqr/params.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "uqr/serialize.hpp"

namespace uqr {

int ParamBank::add(std::string name, Shape shape, std::vector<double> init) {
    if (by_name_.count(name)) throw UsageError("duplicate parameter name: " + name);
    if (numel(shape) != static_cast<std::int64_t>(init.size())) {
        throw ShapeError("parameter " + name + ": init size does not match shape");
    }
    Param p;
    p.name = std::move(name);
    p.shape = std::move(shape);
    p.grad.assign(init.size(), 0.0);
    p.value = std::move(init);
    params_.push_back(std::move(p));
    int idx = static_cast<int>(params_.size()) - 1;
    by_name_[params_[idx].name] = idx;
    return idx;
}

int ParamBank::add_zeros(std::string name, Shape shape) {
    std::vector<double> init(numel(shape), 0.0);
    return add(std::move(name), std::move(shape), std::move(init));
}

int ParamBank::add_glorot(std::string name, Shape shape, RngStream& rng) {
    std::int64_t n = numel(shape);
    int fan_out = shape.empty() ? 1 : shape[0];
    int fan_in = static_cast<int>(n / std::max(fan_out, 1));
    double s = std::sqrt(6.0 / (fan_in + fan_out));
    std::vector<double> init(n);
    for (auto& v : init) v = (2.0 * rng.uniform() - 1.0) * s;
    return add(std::move(name), std::move(shape), std::move(init));
}

int ParamBank::index_of(const std::string& name) const {
    auto it = by_name_.find(name);
    if (it == by_name_.end()) throw UsageError("unknown parameter: " + name);
    return it->second;
}

void ParamBank::zero_grads() {
    for (auto& p : params_) std::fill(p.grad.begin(), p.grad.end(), 0.0);
}

void ParamBank::save(const std::string& path) const {
    std::ofstream os(path);
    if (!os) throw IoError("cannot open " + path + " for writing");
    for (const auto& p : params_) {
        os << "param: " << p.name << '\n';
        write_tensor(os, p.shape, p.value);
    }
    if (!os) throw IoError("failed writing " + path);
}

void ParamBank::load(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw IoError("cannot open " + path);
    std::string tag, name;
    int seen = 0;
    while (is >> tag) {
        if (tag != "param:") throw ParseError("expected 'param:' in " + path);
        if (!(is >> name)) throw ParseError("missing parameter name in " + path);
        Shape shape;
        std::vector<double> data;
        read_tensor(is, shape, data);
        int idx = index_of(name);
        if (shape != params_[idx].shape) {
            throw ShapeError("parameter " + name + ": stored shape " + shape_str(shape) +
                             " does not match model shape " + shape_str(params_[idx].shape));
        }
        params_[idx].value = std::move(data);
        ++seen;
    }
    if (seen != count()) {
        throw ParseError(path + " holds " + std::to_string(seen) + " parameters, model expects " +
                         std::to_string(count()));
    }
}

Tensor ParamMap::get(int param_idx) {
    if (param_idx < 0 || param_idx >= static_cast<int>(node_of_.size())) {
        throw UsageError("parameter index out of range");
    }
    if (node_of_[param_idx] < 0) {
        const Param& p = bank_->at(param_idx);
        Tensor t = tape_->leaf(p.shape, p.value, true);
        node_of_[param_idx] = t.id();
        return t;
    }
    return tape_->node(node_of_[param_idx]);
}

void ParamMap::harvest(double scale) {
    if (!mutable_bank_) throw UsageError("harvest on a read-only ParamMap");
    for (size_t i = 0; i < node_of_.size(); ++i) {
        if (node_of_[i] < 0) continue;
        const auto& g = tape_->grad_of(node_of_[i]);
        auto& pg = mutable_bank_->at(static_cast<int>(i)).grad;
        for (size_t j = 0; j < g.size(); ++j) pg[j] += scale * g[j];
    }
}

} // namespace uqr
