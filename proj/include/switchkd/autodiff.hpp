#pragma once

#include <deque>
#include <functional>
#include <vector>

#include "switchkd/errors.hpp"

namespace switchkd {

class Tape;

// Handle to one node of a Tape: a dense f64 array with shape, values and a
// lazily allocated gradient. Cheap to copy; the storage lives on the tape.
class DiffArray {
public:
    DiffArray() = default;

    const std::vector<int>& shape() const;
    const std::vector<double>& values() const;
    // Accumulated gradient; empty until a backward pass reaches this node.
    const std::vector<double>& grad() const;
    bool requires_grad() const;

    size_t size() const;
    int rows() const; // 2-D convenience
    int cols() const;
    double value() const; // scalar nodes only

    bool defined() const { return tape_ != nullptr; }
    Tape* tape() const { return tape_; }
    int id() const { return id_; }

private:
    friend class Tape;
    DiffArray(Tape* t, int id) : tape_(t), id_(id) {}
    Tape* tape_ = nullptr;
    int id_ = -1;
};

// Reverse-mode tape. One tape is one single-threaded computation context;
// independent tapes may run concurrently.
class Tape {
public:
    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    DiffArray leaf(std::vector<int> shape, std::vector<double> values, bool requires_grad);
    DiffArray constant(std::vector<int> shape, std::vector<double> values);
    DiffArray scalar(double v, bool requires_grad = false);

    // Reverse sweep from a scalar root. Gradients of requires_grad nodes
    // accumulate across calls until zero_grad().
    void backward(const DiffArray& root);
    void zero_grad();

    size_t num_nodes() const { return nodes_.size(); }

    // --- internals shared with the op implementations ---
    struct Node {
        std::vector<int> shape;
        std::vector<double> values;
        std::vector<double> grad;
        bool requires_grad = false;
        // Pushes the node's adjoint into its parents' adjoint buffers.
        std::function<void(Tape&, const std::vector<double>&)> backprop;
    };

    Node& node(int id) { return nodes_[id]; }
    const Node& node(int id) const { return nodes_[id]; }
    bool wants_grad(int id) const { return nodes_[id].requires_grad; }
    // Adjoint buffer for `id`, zero-initialized on first touch (backward only).
    std::vector<double>& adj(int id);

    DiffArray emit(std::vector<int> shape, std::vector<double> values, bool requires_grad,
                   std::function<void(Tape&, const std::vector<double>&)> backprop);

private:
    std::deque<Node> nodes_;
    std::vector<std::vector<double>> adjoint_;
};

// --- differentiable ops ---
DiffArray add(const DiffArray& a, const DiffArray& b);
DiffArray sub(const DiffArray& a, const DiffArray& b);
DiffArray mul(const DiffArray& a, const DiffArray& b); // elementwise
DiffArray scale(const DiffArray& a, double s);
DiffArray add_scalar(const DiffArray& a, double c);
DiffArray matmul(const DiffArray& a, const DiffArray& b);
DiffArray gelu(const DiffArray& a); // tanh approximation
DiffArray exp(const DiffArray& a);
DiffArray log(const DiffArray& a);
DiffArray sum(const DiffArray& a);
DiffArray mean(const DiffArray& a);
DiffArray clamp_min(const DiffArray& a, double floor);
// out[i] = a.flat[indices[i]]; gradients scatter-add back.
DiffArray gather(const DiffArray& a, const std::vector<int>& indices);
DiffArray softmax(const DiffArray& z, double temperature); // 1-D
DiffArray softmax_rows(const DiffArray& m, double temperature);
DiffArray logsumexp_rows(const DiffArray& m); // [T x N] -> [T]
DiffArray transpose(const DiffArray& a);
DiffArray reshape(const DiffArray& a, std::vector<int> shape);
DiffArray concat_rows(const DiffArray& a, const DiffArray& b);
DiffArray concat_cols(const DiffArray& a, const DiffArray& b);
DiffArray slice_rows(const DiffArray& a, int r0, int r1);
DiffArray slice_cols(const DiffArray& a, int c0, int c1);
DiffArray add_rowvec(const DiffArray& m, const DiffArray& v);
DiffArray embedding_rows(const DiffArray& table, const std::vector<int>& ids);
DiffArray layer_norm_rows(const DiffArray& x, const DiffArray& gain, const DiffArray& bias,
                          double eps = 1e-5);
// Same values, no history: gradients stop here.
DiffArray detach(const DiffArray& a);

// Index-only, non-differentiable. Stable: ties keep ascending original index.
std::vector<int> sort_descending_indices(const std::vector<double>& v);

// Central finite differences, (f(x+eps e_i) - f(x-eps e_i)) / (2 eps).
// The gradient-check oracle; independent of the tape machinery above.
std::vector<double> finite_diff_gradient(const std::function<double(const std::vector<double>&)>& f,
                                         std::vector<double> at, double eps);

} // namespace switchkd
