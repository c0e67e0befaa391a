#pragma once

#include <functional>
#include <vector>

#include "uqr/tensor.hpp"

namespace uqr {

struct GradCheckInput {
    Shape shape;
    std::vector<double> value;
};

// Compares reverse-mode gradients of a scalar-valued computation against
// central finite differences. `f` receives a fresh tape and one leaf per
// input (requires_grad set) and must return a scalar tensor on that tape.
// Returns max over entries of |ad - fd| / max(|ad|, |fd|, 1e-8).
double check_gradients(const std::function<Tensor(Tape&, const std::vector<Tensor>&)>& f,
                       const std::vector<GradCheckInput>& inputs,
                       double step = 1e-4);

} // namespace uqr
