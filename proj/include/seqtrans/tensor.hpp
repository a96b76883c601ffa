#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "seqtrans/rng.hpp"

namespace seqtrans::nn {

// Dense double-precision array. Rank 0 (scalar), 1 (vector) or 2 (matrix).
struct Array {
    std::vector<std::size_t> shape;
    std::vector<double> data;

    Array() = default;
    explicit Array(std::vector<std::size_t> s);
    Array(std::vector<std::size_t> s, std::vector<double> d);

    static Array scalar(double v) { return Array({}, {v}); }
    static Array vec(std::vector<double> d);
    static Array matrix(std::size_t r, std::size_t c) { return Array({r, c}); }

    std::size_t size() const { return data.size(); }
    std::size_t rows() const { return shape.size() < 2 ? 1 : shape[0]; }
    std::size_t cols() const { return shape.empty() ? 1 : shape.back(); }

    double& at(std::size_t r, std::size_t c) { return data[r * cols() + c]; }
    double at(std::size_t r, std::size_t c) const { return data[r * cols() + c]; }
};

std::string shape_str(const std::vector<std::size_t>& s);

// Numerically stable softmax (max subtraction). Plain helper, no tape.
std::vector<double> softmax(std::span<const double> logits);

class Tape;

// Handle to a node on a Tape. Cheap to copy; values live on the tape.
class Tensor {
public:
    Tensor() = default;

    const std::vector<std::size_t>& shape() const;
    std::span<const double> values() const;
    // Valid after Tape::backward; empty span for no-grad nodes.
    std::span<const double> grad() const;
    double item() const;

    std::size_t size() const { return values().size(); }
    std::size_t rows() const { return shape().size() < 2 ? 1 : shape()[0]; }
    std::size_t cols() const { return shape().empty() ? 1 : shape().back(); }
    bool valid() const { return tape_ != nullptr; }

private:
    friend class Tape;
    Tensor(Tape* tape, std::uint32_t id) : tape_(tape), id_(id) {}
    Tape* tape_ = nullptr;
    std::uint32_t id_ = 0;
};

struct LstmParams {
    // gate block order: input, forget, cell-candidate, output
    Array w_input;   // 4d x input_dim
    Array w_hidden;  // 4d x d
    Array bias;      // 4d

    static LstmParams zeros(std::size_t d, std::size_t input_dim);
    std::size_t hidden_dim() const { return bias.size() / 4; }
    std::size_t input_dim() const { return w_input.cols(); }
};

struct LstmLeaves {
    Tensor w_input, w_hidden, bias;
};

struct LstmState {
    Tensor h, c;
};

// Records primitive ops in topological order; values are computed eagerly and
// backward() replays the records once, accumulating gradients.
class Tape {
public:
    explicit Tape(bool grad_enabled = true) : grad_enabled_(grad_enabled) {}
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    bool grad_enabled() const { return grad_enabled_; }
    std::size_t node_count() const { return nodes_.size(); }

    // differentiable leaf (copies the array in)
    Tensor leaf(const Array& a);
    // non-differentiable input
    Tensor constant(const Array& a);
    Tensor constant(std::vector<double> data, std::vector<std::size_t> shape);

    // [m x k] . [k x n]
    Tensor matmul(Tensor a, Tensor b);
    // [m x k] . [n x k]^T — the layout every affine map here uses
    Tensor matmul_nt(Tensor a, Tensor b);

    Tensor add(Tensor a, Tensor b);           // same shape
    Tensor add_rowvec(Tensor x, Tensor v);    // [B x k] + [k] broadcast over rows
    Tensor mul(Tensor a, Tensor b);           // elementwise, same shape
    Tensor concat_cols(Tensor a, Tensor b);
    Tensor slice_cols(Tensor x, std::size_t begin, std::size_t end);

    Tensor sigmoid(Tensor x);
    Tensor tanh(Tensor x);
    Tensor exp(Tensor x);
    Tensor log(Tensor x);
    Tensor sqrt(Tensor x);
    Tensor clamp_min(Tensor x, double floor);
    Tensor scale(Tensor x, double s);
    Tensor add_scalar(Tensor x, double s);

    Tensor row_sum(Tensor x);  // [B x k] -> [B]
    Tensor sum(Tensor x);      // -> scalar

    // rows of table selected by id; backward touches only those rows
    Tensor embedding_lookup(Tensor table, std::size_t id);
    Tensor embedding_lookup(Tensor table, std::span<const int> ids);

    // training=true: zero with probability rate, scale survivors by 1/(1-rate)
    Tensor dropout(Tensor x, double rate, Rng& rng, bool training);

    // -log softmax(logits)[target] per row; scalar for rank-1 logits
    Tensor softmax_cross_entropy(Tensor logits, std::span<const int> targets);
    Tensor softmax_cross_entropy(Tensor logits, int target);

    // standard LSTM cell, composed from primitives
    LstmLeaves lstm_leaves(const LstmParams& p);
    LstmState lstm_step(const LstmLeaves& p, Tensor x, LstmState prev);
    LstmState lstm_initial_state(std::size_t batch, std::size_t d);

    void backward(Tensor root);

private:
    struct Node {
        std::vector<std::size_t> shape;
        std::vector<double> val;
        std::vector<double> grad;
        bool requires_grad = false;
        std::function<void(Tape&)> backprop;
    };

    Tensor make(std::vector<std::size_t> shape, std::size_t n, bool requires_grad);
    Node& node(std::uint32_t id) { return nodes_[id]; }
    const Node& node(std::uint32_t id) const { return nodes_[id]; }
    void check_owned(Tensor t) const;
    Tensor unary_map(Tensor x, double (*f)(double), double (*df)(double val, double out));

    bool grad_enabled_;
    std::vector<Node> nodes_;

    friend class Tensor;
};

}  // namespace seqtrans::nn
