#pragma once

#include <cstdint>
#include <deque>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "uqr/errors.hpp"

namespace uqr {

using Shape = std::vector<int>;

std::int64_t numel(const Shape& shape);
std::string shape_str(const Shape& shape);

class Tape;

// Lightweight handle to a value recorded on a Tape. Copying a Tensor copies
// the handle, not the data.
class Tensor {
public:
    Tensor() = default;

    const Shape& shape() const;
    const std::vector<double>& value() const;
    const std::vector<double>& grad() const;
    std::int64_t size() const;
    bool requires_grad() const;

    // Value of a single-element tensor.
    double scalar() const;

    int id() const { return id_; }
    Tape& tape() const { return *tape_; }
    bool valid() const { return tape_ != nullptr; }

private:
    friend class Tape;
    Tensor(Tape* tape, int id) : tape_(tape), id_(id) {}

    Tape* tape_ = nullptr;
    int id_ = -1;
};

// Records every operation in execution order (inputs always precede their
// consumers), so one reverse sweep propagates gradients to every
// requires_grad tensor reachable from the loss. A Tape and its tensors
// belong to a single thread; independent tapes may run concurrently.
class Tape {
public:
    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    // --- leaves ---------------------------------------------------------
    Tensor leaf(Shape shape, std::vector<double> data, bool requires_grad = false);
    Tensor constant(Shape shape, std::vector<double> data);
    Tensor scalar_const(double v);
    Tensor full(Shape shape, double v, bool requires_grad = false);
    Tensor zeros(Shape shape, bool requires_grad = false);

    // --- elementwise (shapes equal, or one side a single element) --------
    Tensor add(Tensor a, Tensor b);
    Tensor sub(Tensor a, Tensor b);
    Tensor mul(Tensor a, Tensor b);
    Tensor div(Tensor a, Tensor b);
    Tensor add_scalar(Tensor a, double c);
    Tensor mul_scalar(Tensor a, double c);
    Tensor neg(Tensor a);
    Tensor exp(Tensor a);
    Tensor log(Tensor a);
    Tensor tanh(Tensor a);
    Tensor relu(Tensor a);
    Tensor sigmoid(Tensor a);
    Tensor softplus(Tensor a);
    Tensor sqrt(Tensor a);
    // Elementwise max(a, c); gradient passes through entries where a > c.
    Tensor max_scalar(Tensor a, double c);

    // --- linear algebra ---------------------------------------------------
    // [m x k] @ [k x n] -> [m x n]; or [m x k] @ [k] -> [m].
    Tensor matmul(Tensor a, Tensor b);

    // --- convolution / pooling -------------------------------------------
    // input [c_in, h, w], kernels [c_out, c_in, k, k].
    Tensor conv2d(Tensor input, Tensor kernels, int stride, int pad);
    Tensor bias_channels(Tensor x, Tensor bias); // x [c,h,w], bias [c]
    Tensor max_pool2d(Tensor x, int window, int stride); // x [c,h,w] or [h,w]
    Tensor avg_pool2d(Tensor x, int window, int stride);

    // --- reductions --------------------------------------------------------
    Tensor sum(Tensor a);
    Tensor sum_axis(Tensor a, int axis); // 2-d only
    Tensor mean(Tensor a);
    Tensor softmax(Tensor a);            // 1-d
    Tensor softmax_axis(Tensor a, int axis); // 2-d, per row (axis=1) or column (axis=0)
    Tensor logsumexp(Tensor a);          // 1-d -> scalar, max-stabilized

    // --- structure ----------------------------------------------------------
    Tensor reshape(Tensor a, Shape shape);
    Tensor concat(const std::vector<Tensor>& parts); // 1-d parts
    Tensor slice(Tensor a, int start, int len);      // 1-d
    Tensor select(Tensor a, int index);              // 1-d -> scalar
    Tensor select_row(Tensor m, int row);            // [r,c] -> [c]

    // Identity forward; backward multiplies the incoming gradient by -lambda.
    Tensor grad_reverse(Tensor a, double lambda);

    // --- engine -------------------------------------------------------------
    void zero_grads();

    // Reverse sweep from `loss` (scalar not required, but seeds with ones).
    // Nodes listed in `stop_at` are treated as leaves: their gradients are
    // still accumulated but the sweep does not continue below them.
    void backward(Tensor loss, const std::vector<int>& stop_at = {});

    int node_count() const { return static_cast<int>(nodes_.size()); }

    // Handle to an existing node by id.
    Tensor node(int id) {
        if (id < 0 || id >= node_count()) throw UsageError("node id out of range");
        return Tensor(this, id);
    }

    const Shape& shape_of(int id) const { return nodes_[id].shape; }
    const std::vector<double>& value_of(int id) const { return nodes_[id].value; }
    const std::vector<double>& grad_of(int id) const { return nodes_[id].grad; }
    bool requires_grad_of(int id) const { return nodes_[id].requires_grad; }

private:
    struct Node {
        Shape shape;
        std::vector<double> value;
        std::vector<double> grad;
        bool requires_grad = false;
    };
    struct Op {
        int output = -1;
        std::vector<int> inputs;
        std::function<void(Tape&)> backward;
    };

    int new_node(Shape shape, std::vector<double> value, bool requires_grad);
    void record(int output, std::vector<int> inputs, std::function<void(Tape&)> backward);
    Tensor handle(int id) { return Tensor(this, id); }

    static void check_same_tape(const Tensor& a, const Tape* t);

    // deque: references into nodes stay valid while new ones are recorded
    std::deque<Node> nodes_;
    std::vector<Op> ops_;
    std::vector<int> op_of_node_; // producing op index per node, -1 for leaves
};

// Convenience operators (both operands must live on the same tape).
Tensor operator+(Tensor a, Tensor b);
Tensor operator-(Tensor a, Tensor b);
Tensor operator*(Tensor a, Tensor b);
Tensor operator/(Tensor a, Tensor b);
Tensor operator-(Tensor a);

struct LstmWeights {
    Tensor w_x; // [4H, X]
    Tensor w_h; // [4H, H]
    Tensor b;   // [4H]
};

// Gated update: input/forget/candidate/output gates from one fused
// preactivation, sigmoid/tanh nonlinearities. Differentiable through
// unrolled sequences.
std::pair<Tensor, Tensor> lstm_cell(Tensor x, Tensor h_prev, Tensor c_prev,
                                    const LstmWeights& w);

} // namespace uqr
