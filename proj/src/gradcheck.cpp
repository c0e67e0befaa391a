#include "uqr/gradcheck.hpp"

#include <cmath>

namespace uqr {

namespace {

double eval_scalar(const std::function<Tensor(Tape&, const std::vector<Tensor>&)>& f,
                   const std::vector<GradCheckInput>& inputs) {
    Tape tape;
    std::vector<Tensor> leaves;
    leaves.reserve(inputs.size());
    for (const auto& in : inputs) leaves.push_back(tape.leaf(in.shape, in.value, true));
    Tensor y = f(tape, leaves);
    if (y.size() != 1) throw UsageError("check_gradients: f must return a scalar");
    return y.scalar();
}

} // namespace

double check_gradients(const std::function<Tensor(Tape&, const std::vector<Tensor>&)>& f,
                       const std::vector<GradCheckInput>& inputs,
                       double step) {
    // Reverse-mode gradients in one pass.
    Tape tape;
    std::vector<Tensor> leaves;
    leaves.reserve(inputs.size());
    for (const auto& in : inputs) leaves.push_back(tape.leaf(in.shape, in.value, true));
    Tensor y = f(tape, leaves);
    if (y.size() != 1) throw UsageError("check_gradients: f must return a scalar");
    tape.backward(y);

    double worst = 0.0;
    for (size_t k = 0; k < inputs.size(); ++k) {
        const auto& ad = leaves[k].grad();
        for (size_t i = 0; i < inputs[k].value.size(); ++i) {
            std::vector<GradCheckInput> plus = inputs;
            std::vector<GradCheckInput> minus = inputs;
            plus[k].value[i] += step;
            minus[k].value[i] -= step;
            double fd = (eval_scalar(f, plus) - eval_scalar(f, minus)) / (2.0 * step);
            double denom = std::max({std::abs(ad[i]), std::abs(fd), 1e-8});
            worst = std::max(worst, std::abs(ad[i] - fd) / denom);
        }
    }
    return worst;
}

} // namespace uqr
