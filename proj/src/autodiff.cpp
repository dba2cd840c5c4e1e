#include "switchkd/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "switchkd/kernels.hpp"

namespace switchkd {

namespace {

size_t shape_size(const std::vector<int>& shape) {
    size_t n = 1;
    for (int d : shape) {
        if (d <= 0) throw DimensionError("shape dimensions must be positive");
        n *= static_cast<size_t>(d);
    }
    return n;
}

void require_same_tape(const DiffArray& a, const DiffArray& b) {
    if (!a.defined() || !b.defined() || a.tape() != b.tape())
        throw ContractError("operands must live on the same tape");
}

void require_same_shape(const DiffArray& a, const DiffArray& b, const char* op) {
    if (a.shape() != b.shape()) throw DimensionError(std::string(op) + ": shape mismatch");
}

void require_finite(const std::vector<double>& v, const char* op) {
    for (double x : v)
        if (!std::isfinite(x)) throw NumericError(std::string(op) + ": non-finite input");
}

constexpr double kGeluC = 0.7978845608028654; // sqrt(2/pi)
constexpr double kGeluA = 0.044715;

double gelu_fwd(double x) {
    return 0.5 * x * (1.0 + std::tanh(kGeluC * (x + kGeluA * x * x * x)));
}

double gelu_bwd(double x) {
    const double u = kGeluC * (x + kGeluA * x * x * x);
    const double t = std::tanh(u);
    const double du = kGeluC * (1.0 + 3.0 * kGeluA * x * x);
    return 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du;
}

// Rowwise temperature softmax with max subtraction; shared by the 1-D and
// rowwise ops.
void softmax_rows_values(const std::vector<double>& in, int rows, int cols, double temperature,
                         std::vector<double>& out) {
    out.resize(in.size());
    for (int r = 0; r < rows; ++r) {
        const double* x = in.data() + static_cast<size_t>(r) * cols;
        double* y = out.data() + static_cast<size_t>(r) * cols;
        double m = x[0];
        for (int j = 1; j < cols; ++j) m = std::max(m, x[j]);
        double s = 0.0;
        for (int j = 0; j < cols; ++j) {
            y[j] = std::exp((x[j] - m) / temperature);
            s += y[j];
        }
        for (int j = 0; j < cols; ++j) y[j] /= s;
    }
}

// dx = y .* (dy - dot(dy, y)) / temperature, per row.
void softmax_rows_backprop(const std::vector<double>& y, int rows, int cols, double temperature,
                           const std::vector<double>& out_adj, std::vector<double>& in_adj) {
    for (int r = 0; r < rows; ++r) {
        const double* yr = y.data() + static_cast<size_t>(r) * cols;
        const double* ga = out_adj.data() + static_cast<size_t>(r) * cols;
        double* gi = in_adj.data() + static_cast<size_t>(r) * cols;
        double dot = 0.0;
        for (int j = 0; j < cols; ++j) dot += ga[j] * yr[j];
        for (int j = 0; j < cols; ++j) gi[j] += yr[j] * (ga[j] - dot) / temperature;
    }
}

} // namespace

// --- DiffArray ---

const std::vector<int>& DiffArray::shape() const { return tape_->node(id_).shape; }
const std::vector<double>& DiffArray::values() const { return tape_->node(id_).values; }
const std::vector<double>& DiffArray::grad() const { return tape_->node(id_).grad; }
bool DiffArray::requires_grad() const { return tape_->node(id_).requires_grad; }
size_t DiffArray::size() const { return values().size(); }

int DiffArray::rows() const {
    const auto& s = shape();
    if (s.size() != 2) throw DimensionError("rows(): not a 2-D array");
    return s[0];
}

int DiffArray::cols() const {
    const auto& s = shape();
    if (s.size() != 2) throw DimensionError("cols(): not a 2-D array");
    return s[1];
}

double DiffArray::value() const {
    if (size() != 1) throw ContractError("value(): not a scalar");
    return values()[0];
}

// --- Tape ---

DiffArray Tape::leaf(std::vector<int> shape, std::vector<double> values, bool requires_grad) {
    if (shape_size(shape) != values.size())
        throw DimensionError("leaf: values length does not match shape");
    Node n;
    n.shape = std::move(shape);
    n.values = std::move(values);
    n.requires_grad = requires_grad;
    nodes_.push_back(std::move(n));
    return DiffArray(this, static_cast<int>(nodes_.size()) - 1);
}

DiffArray Tape::constant(std::vector<int> shape, std::vector<double> values) {
    return leaf(std::move(shape), std::move(values), false);
}

DiffArray Tape::scalar(double v, bool requires_grad) { return leaf({1}, {v}, requires_grad); }

DiffArray Tape::emit(std::vector<int> shape, std::vector<double> values, bool requires_grad,
                     std::function<void(Tape&, const std::vector<double>&)> backprop) {
    if (shape_size(shape) != values.size())
        throw DimensionError("emit: values length does not match shape");
    Node n;
    n.shape = std::move(shape);
    n.values = std::move(values);
    n.requires_grad = requires_grad;
    if (requires_grad) n.backprop = std::move(backprop);
    nodes_.push_back(std::move(n));
    return DiffArray(this, static_cast<int>(nodes_.size()) - 1);
}

std::vector<double>& Tape::adj(int id) {
    auto& a = adjoint_[id];
    if (a.empty()) a.assign(nodes_[id].values.size(), 0.0);
    return a;
}

void Tape::backward(const DiffArray& root) {
    if (root.tape() != this) throw ContractError("backward: root is not on this tape");
    if (root.size() != 1) throw ContractError("backward: root must be a scalar");
    const int root_id = root.id();
    adjoint_.assign(static_cast<size_t>(root_id) + 1, {});
    adj(root_id)[0] = 1.0;
    // Reverse replay: each recorded operation is visited exactly once.
    for (int id = root_id; id >= 0; --id) {
        if (adjoint_[id].empty()) continue;
        Node& n = nodes_[id];
        if (n.backprop) n.backprop(*this, adjoint_[id]);
    }
    for (int id = root_id; id >= 0; --id) {
        if (adjoint_[id].empty() || !nodes_[id].requires_grad) continue;
        Node& n = nodes_[id];
        if (n.grad.empty()) n.grad.assign(n.values.size(), 0.0);
        kernels::axpy(1.0, adjoint_[id].data(), n.grad.data(), n.grad.size());
    }
    adjoint_.clear();
}

void Tape::zero_grad() {
    for (auto& n : nodes_) std::fill(n.grad.begin(), n.grad.end(), 0.0);
}

// --- ops ---

DiffArray add(const DiffArray& a, const DiffArray& b) {
    require_same_tape(a, b);
    require_same_shape(a, b, "add");
    Tape& t = *a.tape();
    std::vector<double> out(a.size());
    kernels::add(a.values().data(), b.values().data(), out.data(), out.size());
    const int ia = a.id(), ib = b.id();
    return t.emit(a.shape(), std::move(out), a.requires_grad() || b.requires_grad(),
                  [ia, ib](Tape& t, const std::vector<double>& g) {
                      if (t.wants_grad(ia)) kernels::axpy(1.0, g.data(), t.adj(ia).data(), g.size());
                      if (t.wants_grad(ib)) kernels::axpy(1.0, g.data(), t.adj(ib).data(), g.size());
                  });
}

DiffArray sub(const DiffArray& a, const DiffArray& b) {
    require_same_tape(a, b);
    require_same_shape(a, b, "sub");
    Tape& t = *a.tape();
    std::vector<double> out(a.size());
    kernels::sub(a.values().data(), b.values().data(), out.data(), out.size());
    const int ia = a.id(), ib = b.id();
    return t.emit(a.shape(), std::move(out), a.requires_grad() || b.requires_grad(),
                  [ia, ib](Tape& t, const std::vector<double>& g) {
                      if (t.wants_grad(ia)) kernels::axpy(1.0, g.data(), t.adj(ia).data(), g.size());
                      if (t.wants_grad(ib)) kernels::axpy(-1.0, g.data(), t.adj(ib).data(), g.size());
                  });
}

DiffArray mul(const DiffArray& a, const DiffArray& b) {
    require_same_tape(a, b);
    require_same_shape(a, b, "mul");
    Tape& t = *a.tape();
    std::vector<double> out(a.size());
    kernels::mul(a.values().data(), b.values().data(), out.data(), out.size());
    const int ia = a.id(), ib = b.id();
    return t.emit(a.shape(), std::move(out), a.requires_grad() || b.requires_grad(),
                  [ia, ib](Tape& t, const std::vector<double>& g) {
                      if (t.wants_grad(ia)) {
                          auto& ga = t.adj(ia);
                          const auto& bv = t.node(ib).values;
                          for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bv[i];
                      }
                      if (t.wants_grad(ib)) {
                          auto& gb = t.adj(ib);
                          const auto& av = t.node(ia).values;
                          for (size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * av[i];
                      }
                  });
}

DiffArray scale(const DiffArray& a, double s) {
    Tape& t = *a.tape();
    std::vector<double> out(a.size());
    kernels::scale(a.values().data(), s, out.data(), out.size());
    const int ia = a.id();
    return t.emit(a.shape(), std::move(out), a.requires_grad(),
                  [ia, s](Tape& t, const std::vector<double>& g) {
                      if (t.wants_grad(ia)) kernels::axpy(s, g.data(), t.adj(ia).data(), g.size());
                  });
}

DiffArray add_scalar(const DiffArray& a, double c) {
    Tape& t = *a.tape();
    std::vector<double> out(a.values());
    for (double& x : out) x += c;
    const int ia = a.id();
    return t.emit(a.shape(), std::move(out), a.requires_grad(),
                  [ia](Tape& t, const std::vector<double>& g) {
                      if (t.wants_grad(ia)) kernels::axpy(1.0, g.data(), t.adj(ia).data(), g.size());
                  });
}

DiffArray matmul(const DiffArray& a, const DiffArray& b) {
    require_same_tape(a, b);
    if (a.shape().size() != 2 || b.shape().size() != 2)
        throw DimensionError("matmul: operands must be 2-D");
    const int m = a.rows(), k = a.cols(), n = b.cols();
    if (b.rows() != k) throw DimensionError("matmul: inner dimensions disagree");
    Tape& t = *a.tape();
    std::vector<double> out(static_cast<size_t>(m) * n);
    kernels::matmul(a.values().data(), b.values().data(), out.data(), m, k, n);
    const int ia = a.id(), ib = b.id();
    return t.emit({m, n}, std::move(out), a.requires_grad() || b.requires_grad(),
                  [ia, ib, m, k, n](Tape& t, const std::vector<double>& g) {
                      if (t.wants_grad(ia)) {
                          // dA += dC * B^T
                          std::vector<double> bt(static_cast<size_t>(n) * k);
                          kernels::transpose(t.node(ib).values.data(), bt.data(), k, n);
                          kernels::matmul_acc(g.data(), bt.data(), t.adj(ia).data(), m, n, k);
                      }
                      if (t.wants_grad(ib)) {
                          // dB += A^T * dC
                          std::vector<double> at(static_cast<size_t>(k) * m);
                          kernels::transpose(t.node(ia).values.data(), at.data(), m, k);
                          kernels::matmul_acc(at.data(), g.data(), t.adj(ib).data(), k, m, n);
                      }
                  });
}

DiffArray gelu(const DiffArray& a) {
    Tape& t = *a.tape();
    std::vector<double> out(a.size());
    for (size_t i = 0; i < out.size(); ++i) out[i] = gelu_fwd(a.values()[i]);
    const int ia = a.id();
    return t.emit(a.shape(), std::move(out), a.requires_grad(),
                  [ia](Tape& t, const std::vector<double>& g) {
                      if (!t.wants_grad(ia)) return;
                      auto& ga = t.adj(ia);
                      const auto& x = t.node(ia).values;
                      for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * gelu_bwd(x[i]);
                  });
}

DiffArray exp(const DiffArray& a) {
    Tape& t = *a.tape();
    require_finite(a.values(), "exp");
    std::vector<double> out(a.size());
    for (size_t i = 0; i < out.size(); ++i) out[i] = std::exp(a.values()[i]);
    const int ia = a.id();
    const int iout = static_cast<int>(t.num_nodes());
    return t.emit(a.shape(), std::move(out), a.requires_grad(),
                  [ia, iout](Tape& t, const std::vector<double>& g) {
                      if (!t.wants_grad(ia)) return;
                      auto& ga = t.adj(ia);
                      const auto& y = t.node(iout).values;
                      for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * y[i];
                  });
}

DiffArray log(const DiffArray& a) {
    Tape& t = *a.tape();
    for (double x : a.values())
        if (!(x > 0.0)) throw NumericError("log: input must be strictly positive");
    std::vector<double> out(a.size());
    for (size_t i = 0; i < out.size(); ++i) out[i] = std::log(a.values()[i]);
    const int ia = a.id();
    return t.emit(a.shape(), std::move(out), a.requires_grad(),
                  [ia](Tape& t, const std::vector<double>& g) {
                      if (!t.wants_grad(ia)) return;
                      auto& ga = t.adj(ia);
                      const auto& x = t.node(ia).values;
                      for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i] / x[i];
                  });
}

DiffArray sum(const DiffArray& a) {
    Tape& t = *a.tape();
    double s = 0.0;
    for (double x : a.values()) s += x;
    const int ia = a.id();
    return t.emit({1}, {s}, a.requires_grad(), [ia](Tape& t, const std::vector<double>& g) {
        if (!t.wants_grad(ia)) return;
        auto& ga = t.adj(ia);
        for (double& x : ga) x += g[0];
    });
}

DiffArray mean(const DiffArray& a) {
    Tape& t = *a.tape();
    double s = 0.0;
    for (double x : a.values()) s += x;
    const double inv = 1.0 / static_cast<double>(a.size());
    const int ia = a.id();
    return t.emit({1}, {s * inv}, a.requires_grad(), [ia, inv](Tape& t, const std::vector<double>& g) {
        if (!t.wants_grad(ia)) return;
        auto& ga = t.adj(ia);
        for (double& x : ga) x += g[0] * inv;
    });
}

DiffArray clamp_min(const DiffArray& a, double floor) {
    Tape& t = *a.tape();
    std::vector<double> out(a.size());
    for (size_t i = 0; i < out.size(); ++i) out[i] = std::max(a.values()[i], floor);
    const int ia = a.id();
    return t.emit(a.shape(), std::move(out), a.requires_grad(),
                  [ia, floor](Tape& t, const std::vector<double>& g) {
                      if (!t.wants_grad(ia)) return;
                      auto& ga = t.adj(ia);
                      const auto& x = t.node(ia).values;
                      for (size_t i = 0; i < g.size(); ++i)
                          if (x[i] > floor) ga[i] += g[i];
                  });
}

DiffArray gather(const DiffArray& a, const std::vector<int>& indices) {
    Tape& t = *a.tape();
    const int n = static_cast<int>(a.size());
    std::vector<double> out(indices.size());
    for (size_t i = 0; i < indices.size(); ++i) {
        if (indices[i] < 0 || indices[i] >= n)
            throw BoundsError("gather: index " + std::to_string(indices[i]) + " out of range");
        out[i] = a.values()[indices[i]];
    }
    const int ia = a.id();
    return t.emit({static_cast<int>(indices.size())}, std::move(out), a.requires_grad(),
                  [ia, indices](Tape& t, const std::vector<double>& g) {
                      if (!t.wants_grad(ia)) return;
                      auto& ga = t.adj(ia);
                      for (size_t i = 0; i < indices.size(); ++i) ga[indices[i]] += g[i];
                  });
}

DiffArray softmax(const DiffArray& z, double temperature) {
    if (z.shape().size() != 1) throw DimensionError("softmax: expects a 1-D array");
    if (!(temperature > 0.0)) throw ContractError("softmax: temperature must be positive");
    require_finite(z.values(), "softmax");
    Tape& t = *z.tape();
    std::vector<double> out;
    softmax_rows_values(z.values(), 1, static_cast<int>(z.size()), temperature, out);
    const int iz = z.id();
    const int iout = static_cast<int>(t.num_nodes());
    const int n = static_cast<int>(z.size());
    return t.emit(z.shape(), std::move(out), z.requires_grad(),
                  [iz, iout, n, temperature](Tape& t, const std::vector<double>& g) {
                      if (!t.wants_grad(iz)) return;
                      softmax_rows_backprop(t.node(iout).values, 1, n, temperature, g, t.adj(iz));
                  });
}

DiffArray softmax_rows(const DiffArray& m, double temperature) {
    if (m.shape().size() != 2) throw DimensionError("softmax_rows: expects a 2-D array");
    if (!(temperature > 0.0)) throw ContractError("softmax_rows: temperature must be positive");
    require_finite(m.values(), "softmax_rows");
    Tape& t = *m.tape();
    const int rows = m.rows(), cols = m.cols();
    std::vector<double> out;
    softmax_rows_values(m.values(), rows, cols, temperature, out);
    const int im = m.id();
    const int iout = static_cast<int>(t.num_nodes());
    return t.emit(m.shape(), std::move(out), m.requires_grad(),
                  [im, iout, rows, cols, temperature](Tape& t, const std::vector<double>& g) {
                      if (!t.wants_grad(im)) return;
                      softmax_rows_backprop(t.node(iout).values, rows, cols, temperature, g, t.adj(im));
                  });
}

DiffArray logsumexp_rows(const DiffArray& m) {
    if (m.shape().size() != 2) throw DimensionError("logsumexp_rows: expects a 2-D array");
    require_finite(m.values(), "logsumexp_rows");
    Tape& t = *m.tape();
    const int rows = m.rows(), cols = m.cols();
    std::vector<double> out(rows);
    std::vector<double> soft; // row softmax, saved for the backward pass
    softmax_rows_values(m.values(), rows, cols, 1.0, soft);
    for (int r = 0; r < rows; ++r) {
        const double* x = m.values().data() + static_cast<size_t>(r) * cols;
        double mx = x[0];
        for (int j = 1; j < cols; ++j) mx = std::max(mx, x[j]);
        double s = 0.0;
        for (int j = 0; j < cols; ++j) s += std::exp(x[j] - mx);
        out[r] = mx + std::log(s);
    }
    const int im = m.id();
    return t.emit({rows}, std::move(out), m.requires_grad(),
                  [im, rows, cols, soft = std::move(soft)](Tape& t, const std::vector<double>& g) {
                      if (!t.wants_grad(im)) return;
                      auto& gm = t.adj(im);
                      for (int r = 0; r < rows; ++r)
                          kernels::axpy(g[r], soft.data() + static_cast<size_t>(r) * cols,
                                        gm.data() + static_cast<size_t>(r) * cols, cols);
                  });
}

DiffArray transpose(const DiffArray& a) {
    if (a.shape().size() != 2) throw DimensionError("transpose: expects a 2-D array");
    Tape& t = *a.tape();
    const int m = a.rows(), n = a.cols();
    std::vector<double> out(a.size());
    kernels::transpose(a.values().data(), out.data(), m, n);
    const int ia = a.id();
    return t.emit({n, m}, std::move(out), a.requires_grad(),
                  [ia, m, n](Tape& t, const std::vector<double>& g) {
                      if (!t.wants_grad(ia)) return;
                      std::vector<double> gt(g.size());
                      kernels::transpose(g.data(), gt.data(), n, m);
                      kernels::axpy(1.0, gt.data(), t.adj(ia).data(), gt.size());
                  });
}

DiffArray reshape(const DiffArray& a, std::vector<int> shape) {
    if (shape_size(shape) != a.size()) throw DimensionError("reshape: element count changed");
    Tape& t = *a.tape();
    const int ia = a.id();
    return t.emit(std::move(shape), a.values(), a.requires_grad(),
                  [ia](Tape& t, const std::vector<double>& g) {
                      if (t.wants_grad(ia)) kernels::axpy(1.0, g.data(), t.adj(ia).data(), g.size());
                  });
}

DiffArray concat_rows(const DiffArray& a, const DiffArray& b) {
    require_same_tape(a, b);
    if (a.shape().size() != 2 || b.shape().size() != 2 || a.cols() != b.cols())
        throw DimensionError("concat_rows: column counts disagree");
    Tape& t = *a.tape();
    const int ra = a.rows(), rb = b.rows(), n = a.cols();
    std::vector<double> out;
    out.reserve(a.size() + b.size());
    out.insert(out.end(), a.values().begin(), a.values().end());
    out.insert(out.end(), b.values().begin(), b.values().end());
    const int ia = a.id(), ib = b.id();
    return t.emit({ra + rb, n}, std::move(out), a.requires_grad() || b.requires_grad(),
                  [ia, ib, ra, rb, n](Tape& t, const std::vector<double>& g) {
                      const size_t na = static_cast<size_t>(ra) * n;
                      if (t.wants_grad(ia)) kernels::axpy(1.0, g.data(), t.adj(ia).data(), na);
                      if (t.wants_grad(ib))
                          kernels::axpy(1.0, g.data() + na, t.adj(ib).data(),
                                        static_cast<size_t>(rb) * n);
                  });
}

DiffArray concat_cols(const DiffArray& a, const DiffArray& b) {
    require_same_tape(a, b);
    if (a.shape().size() != 2 || b.shape().size() != 2 || a.rows() != b.rows())
        throw DimensionError("concat_cols: row counts disagree");
    Tape& t = *a.tape();
    const int r = a.rows(), ca = a.cols(), cb = b.cols();
    std::vector<double> out(static_cast<size_t>(r) * (ca + cb));
    for (int i = 0; i < r; ++i) {
        std::copy_n(a.values().data() + static_cast<size_t>(i) * ca, ca,
                    out.data() + static_cast<size_t>(i) * (ca + cb));
        std::copy_n(b.values().data() + static_cast<size_t>(i) * cb, cb,
                    out.data() + static_cast<size_t>(i) * (ca + cb) + ca);
    }
    const int ia = a.id(), ib = b.id();
    return t.emit({r, ca + cb}, std::move(out), a.requires_grad() || b.requires_grad(),
                  [ia, ib, r, ca, cb](Tape& t, const std::vector<double>& g) {
                      for (int i = 0; i < r; ++i) {
                          const double* gr = g.data() + static_cast<size_t>(i) * (ca + cb);
                          if (t.wants_grad(ia))
                              kernels::axpy(1.0, gr, t.adj(ia).data() + static_cast<size_t>(i) * ca, ca);
                          if (t.wants_grad(ib))
                              kernels::axpy(1.0, gr + ca, t.adj(ib).data() + static_cast<size_t>(i) * cb,
                                            cb);
                      }
                  });
}

DiffArray slice_rows(const DiffArray& a, int r0, int r1) {
    if (a.shape().size() != 2) throw DimensionError("slice_rows: expects a 2-D array");
    if (r0 < 0 || r1 > a.rows() || r0 >= r1) throw BoundsError("slice_rows: bad row range");
    Tape& t = *a.tape();
    const int n = a.cols();
    std::vector<double> out(a.values().begin() + static_cast<size_t>(r0) * n,
                            a.values().begin() + static_cast<size_t>(r1) * n);
    const int ia = a.id();
    return t.emit({r1 - r0, n}, std::move(out), a.requires_grad(),
                  [ia, r0, n](Tape& t, const std::vector<double>& g) {
                      if (!t.wants_grad(ia)) return;
                      kernels::axpy(1.0, g.data(), t.adj(ia).data() + static_cast<size_t>(r0) * n,
                                    g.size());
                  });
}

DiffArray slice_cols(const DiffArray& a, int c0, int c1) {
    if (a.shape().size() != 2) throw DimensionError("slice_cols: expects a 2-D array");
    if (c0 < 0 || c1 > a.cols() || c0 >= c1) throw BoundsError("slice_cols: bad column range");
    Tape& t = *a.tape();
    const int r = a.rows(), n = a.cols(), w = c1 - c0;
    std::vector<double> out(static_cast<size_t>(r) * w);
    for (int i = 0; i < r; ++i)
        std::copy_n(a.values().data() + static_cast<size_t>(i) * n + c0, w,
                    out.data() + static_cast<size_t>(i) * w);
    const int ia = a.id();
    return t.emit({r, w}, std::move(out), a.requires_grad(),
                  [ia, r, n, c0, w](Tape& t, const std::vector<double>& g) {
                      if (!t.wants_grad(ia)) return;
                      auto& ga = t.adj(ia);
                      for (int i = 0; i < r; ++i)
                          kernels::axpy(1.0, g.data() + static_cast<size_t>(i) * w,
                                        ga.data() + static_cast<size_t>(i) * n + c0, w);
                  });
}

DiffArray add_rowvec(const DiffArray& m, const DiffArray& v) {
    require_same_tape(m, v);
    if (m.shape().size() != 2 || v.shape().size() != 1 || v.shape()[0] != m.cols())
        throw DimensionError("add_rowvec: vector width must equal matrix columns");
    Tape& t = *m.tape();
    const int r = m.rows(), n = m.cols();
    std::vector<double> out(m.size());
    for (int i = 0; i < r; ++i)
        kernels::add(m.values().data() + static_cast<size_t>(i) * n, v.values().data(),
                     out.data() + static_cast<size_t>(i) * n, n);
    const int im = m.id(), iv = v.id();
    return t.emit(m.shape(), std::move(out), m.requires_grad() || v.requires_grad(),
                  [im, iv, r, n](Tape& t, const std::vector<double>& g) {
                      if (t.wants_grad(im)) kernels::axpy(1.0, g.data(), t.adj(im).data(), g.size());
                      if (t.wants_grad(iv)) {
                          auto& gv = t.adj(iv);
                          for (int i = 0; i < r; ++i)
                              kernels::axpy(1.0, g.data() + static_cast<size_t>(i) * n, gv.data(), n);
                      }
                  });
}

DiffArray embedding_rows(const DiffArray& table, const std::vector<int>& ids) {
    if (table.shape().size() != 2) throw DimensionError("embedding_rows: table must be 2-D");
    Tape& t = *table.tape();
    const int v = table.rows(), d = table.cols();
    std::vector<double> out(ids.size() * static_cast<size_t>(d));
    for (size_t i = 0; i < ids.size(); ++i) {
        if (ids[i] < 0 || ids[i] >= v)
            throw BoundsError("embedding_rows: id " + std::to_string(ids[i]) + " out of range");
        std::copy_n(table.values().data() + static_cast<size_t>(ids[i]) * d, d,
                    out.data() + i * static_cast<size_t>(d));
    }
    const int it = table.id();
    return t.emit({static_cast<int>(ids.size()), d}, std::move(out), table.requires_grad(),
                  [it, ids, d](Tape& t, const std::vector<double>& g) {
                      if (!t.wants_grad(it)) return;
                      auto& gt = t.adj(it);
                      for (size_t i = 0; i < ids.size(); ++i)
                          kernels::axpy(1.0, g.data() + i * static_cast<size_t>(d),
                                        gt.data() + static_cast<size_t>(ids[i]) * d, d);
                  });
}

DiffArray layer_norm_rows(const DiffArray& x, const DiffArray& gain, const DiffArray& bias,
                          double eps) {
    require_same_tape(x, gain);
    require_same_tape(x, bias);
    if (x.shape().size() != 2) throw DimensionError("layer_norm_rows: expects a 2-D array");
    const int r = x.rows(), n = x.cols();
    if (gain.shape() != std::vector<int>{n} || bias.shape() != std::vector<int>{n})
        throw DimensionError("layer_norm_rows: gain/bias width must equal columns");
    Tape& t = *x.tape();
    std::vector<double> out(x.size());
    std::vector<double> xhat(x.size());
    std::vector<double> inv_sd(r);
    for (int i = 0; i < r; ++i) {
        const double* xr = x.values().data() + static_cast<size_t>(i) * n;
        double mu = 0.0;
        for (int j = 0; j < n; ++j) mu += xr[j];
        mu /= n;
        double var = 0.0;
        for (int j = 0; j < n; ++j) var += (xr[j] - mu) * (xr[j] - mu);
        var /= n;
        const double is = 1.0 / std::sqrt(var + eps);
        inv_sd[i] = is;
        for (int j = 0; j < n; ++j) {
            const double xh = (xr[j] - mu) * is;
            xhat[static_cast<size_t>(i) * n + j] = xh;
            out[static_cast<size_t>(i) * n + j] = gain.values()[j] * xh + bias.values()[j];
        }
    }
    const int ix = x.id(), ig = gain.id(), ib = bias.id();
    return t.emit(x.shape(), std::move(out),
                  x.requires_grad() || gain.requires_grad() || bias.requires_grad(),
                  [ix, ig, ib, r, n, xhat = std::move(xhat),
                   inv_sd = std::move(inv_sd)](Tape& t, const std::vector<double>& g) {
                      const auto& gv = t.node(ig).values;
                      for (int i = 0; i < r; ++i) {
                          const double* gr = g.data() + static_cast<size_t>(i) * n;
                          const double* xh = xhat.data() + static_cast<size_t>(i) * n;
                          if (t.wants_grad(ib)) {
                              auto& gb = t.adj(ib);
                              for (int j = 0; j < n; ++j) gb[j] += gr[j];
                          }
                          if (t.wants_grad(ig)) {
                              auto& gg = t.adj(ig);
                              for (int j = 0; j < n; ++j) gg[j] += gr[j] * xh[j];
                          }
                          if (t.wants_grad(ix)) {
                              double m1 = 0.0, m2 = 0.0; // mean(dxhat), mean(dxhat .* xhat)
                              for (int j = 0; j < n; ++j) {
                                  const double dxh = gr[j] * gv[j];
                                  m1 += dxh;
                                  m2 += dxh * xh[j];
                              }
                              m1 /= n;
                              m2 /= n;
                              auto& gx = t.adj(ix);
                              for (int j = 0; j < n; ++j) {
                                  const double dxh = gr[j] * gv[j];
                                  gx[static_cast<size_t>(i) * n + j] +=
                                      (dxh - m1 - xh[j] * m2) * inv_sd[i];
                              }
                          }
                      }
                  });
}

DiffArray detach(const DiffArray& a) {
    return a.tape()->constant(a.shape(), a.values());
}

std::vector<int> sort_descending_indices(const std::vector<double>& v) {
    std::vector<int> idx(v.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::stable_sort(idx.begin(), idx.end(), [&](int a, int b) { return v[a] > v[b]; });
    return idx;
}

std::vector<double> finite_diff_gradient(const std::function<double(const std::vector<double>&)>& f,
                                         std::vector<double> at, double eps) {
    if (!(eps > 0.0)) throw ContractError("finite_diff_gradient: eps must be positive");
    std::vector<double> grad(at.size());
    for (size_t i = 0; i < at.size(); ++i) {
        const double x0 = at[i];
        at[i] = x0 + eps;
        const double fp = f(at);
        at[i] = x0 - eps;
        const double fm = f(at);
        at[i] = x0;
        if (!std::isfinite(fp) || !std::isfinite(fm))
            throw NumericError("finite_diff_gradient: function returned a non-finite value");
        grad[i] = (fp - fm) / (2.0 * eps);
    }
    return grad;
}

} // namespace switchkd
