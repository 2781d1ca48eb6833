#include "moevit/tensor.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <atomic>
#include <cmath>

namespace moevit {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using CMapMat = Eigen::Map<const RowMat>;

std::atomic<uint64_t> g_next_id{1};
thread_local uint64_t g_mac_count = 0;
bool g_matmul_backward_fault = false;

std::string shape_str(const std::vector<size_t>& s) {
  std::string out = "[";
  for (size_t i = 0; i < s.size(); ++i) {
    if (i) out += "x";
    out += std::to_string(s[i]);
  }
  return out + "]";
}

size_t shape_numel(const std::vector<size_t>& s) {
  size_t n = 1;
  for (size_t e : s) {
    if (e == 0) throw dim_error("zero extent in shape " + shape_str(s));
    n *= e;
  }
  return n;
}

void require_rank2(const Tensor& t, const char* what) {
  if (t.shape().size() != 2)
    throw dim_error(std::string(what) + ": expected rank-2 tensor, got " +
                    shape_str(t.shape()));
}

// Binary elementwise shape check. Returns true when b is a row vector
// broadcast over a's leading dimension (the only broadcast supported).
bool broadcast_rows(const Tensor& a, const Tensor& b) {
  if (a.shape() == b.shape()) return false;
  const auto& sa = a.shape();
  const auto& sb = b.shape();
  size_t bn = 0;
  if (sb.size() == 1) {
    bn = sb[0];
  } else if (sb.size() == 2 && sb[0] == 1) {
    bn = sb[1];
  } else {
    throw dim_error("incompatible shapes " + shape_str(sa) + " vs " +
                    shape_str(sb));
  }
  if (sa.size() != 2 || sa[1] != bn)
    throw dim_error("incompatible shapes " + shape_str(sa) + " vs " +
                    shape_str(sb));
  return true;
}

bool wants_grad(const detail::Node& p) { return p.requires_grad; }

void accumulate(detail::Node& p, const std::vector<double>& g) {
  p.ensure_grad();
  for (size_t i = 0; i < g.size(); ++i) p.grad[i] += g[i];
}

double gelu_scalar(double x) {
  constexpr double kAlpha = 0.7978845608028654;  // sqrt(2/pi)
  double inner = kAlpha * (x + 0.044715 * x * x * x);
  return 0.5 * x * (1.0 + std::tanh(inner));
}

double gelu_grad_scalar(double x) {
  constexpr double kAlpha = 0.7978845608028654;
  double x3 = x * x * x;
  double inner = kAlpha * (x + 0.044715 * x3);
  double t = std::tanh(inner);
  double sech2 = 1.0 - t * t;
  double dinner = kAlpha * (1.0 + 3.0 * 0.044715 * x * x);
  return 0.5 * (1.0 + t) + 0.5 * x * sech2 * dinner;
}

}  // namespace

namespace macs {
uint64_t count() { return g_mac_count; }
void reset() { g_mac_count = 0; }
void add(uint64_t n) { g_mac_count += n; }
}  // namespace macs

void inject_matmul_backward_fault(bool on) { g_matmul_backward_fault = on; }

// ---------------------------------------------------------------------------
// Tensor basics
// ---------------------------------------------------------------------------

Tensor make_op(std::vector<size_t> shape, std::vector<double> data,
               std::vector<Tensor> parents,
               std::function<void(detail::Node&)> backward) {
  if (shape_numel(shape) != data.size())
    throw dim_error("data length " + std::to_string(data.size()) +
                    " does not match shape " + shape_str(shape));
  auto node = std::make_shared<detail::Node>();
  node->id = g_next_id.fetch_add(1);
  node->shape = std::move(shape);
  node->data = std::move(data);
  for (const auto& p : parents) {
    node->requires_grad = node->requires_grad || p.requires_grad();
    node->parents.push_back(p.node());
  }
  if (node->requires_grad) node->backward_fn = std::move(backward);
  return Tensor(std::move(node));
}

Tensor Tensor::zeros(std::vector<size_t> shape, bool requires_grad) {
  return full(std::move(shape), 0.0, requires_grad);
}

Tensor Tensor::full(std::vector<size_t> shape, double value,
                    bool requires_grad) {
  std::vector<double> data(shape_numel(shape), value);
  return from(std::move(shape), std::move(data), requires_grad);
}

Tensor Tensor::from(std::vector<size_t> shape, std::vector<double> data,
                    bool requires_grad) {
  if (shape_numel(shape) != data.size())
    throw dim_error("data length " + std::to_string(data.size()) +
                    " does not match shape " + shape_str(shape));
  auto node = std::make_shared<detail::Node>();
  node->id = g_next_id.fetch_add(1);
  node->shape = std::move(shape);
  node->data = std::move(data);
  node->requires_grad = requires_grad;
  return Tensor(std::move(node));
}

Tensor Tensor::scalar(double v, bool requires_grad) {
  return from({1}, {v}, requires_grad);
}

size_t Tensor::rows() const {
  require_rank2(*this, "rows");
  return node_->shape[0];
}

size_t Tensor::cols() const {
  require_rank2(*this, "cols");
  return node_->shape[1];
}

const std::vector<double>& Tensor::grad() const {
  node_->ensure_grad();
  return node_->grad;
}

void Tensor::zero_grad() {
  node_->grad.assign(node_->data.size(), 0.0);
}

double Tensor::value() const {
  if (node_->data.size() != 1)
    throw contract_error("value(): tensor is not a scalar, shape " +
                         shape_str(node_->shape));
  return node_->data[0];
}

double Tensor::at(size_t i, size_t j) const {
  require_rank2(*this, "at");
  return node_->data[i * node_->shape[1] + j];
}

void Tensor::backward() const {
  if (!node_ || node_->data.size() != 1)
    throw contract_error("backward: loss must be a scalar tensor");
  // Collect the reachable subgraph. Node ids are creation order, so a
  // descending id sort is a reverse topological order of the tape.
  std::vector<detail::Node*> nodes;
  std::vector<detail::Node*> stack{node_.get()};
  std::vector<uint64_t> seen;
  auto mark = [&seen](uint64_t id) {
    auto it = std::lower_bound(seen.begin(), seen.end(), id);
    if (it != seen.end() && *it == id) return false;
    seen.insert(it, id);
    return true;
  };
  mark(node_->id);
  while (!stack.empty()) {
    detail::Node* n = stack.back();
    stack.pop_back();
    nodes.push_back(n);
    for (auto& p : n->parents)
      if (mark(p->id)) stack.push_back(p.get());
  }
  std::sort(nodes.begin(), nodes.end(),
            [](const detail::Node* a, const detail::Node* b) { return a->id > b->id; });
  node_->ensure_grad();
  node_->grad[0] += 1.0;
  for (detail::Node* n : nodes) {
    if (n->backward_fn && n->requires_grad) n->backward_fn(*n);
  }
}

// ---------------------------------------------------------------------------
// Linear algebra
// ---------------------------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_rank2(a, "matmul lhs");
  require_rank2(b, "matmul rhs");
  const size_t m = a.shape()[0], p = a.shape()[1];
  const size_t p2 = b.shape()[0], n = b.shape()[1];
  if (p != p2)
    throw dim_error("matmul: inner dimensions differ, " + shape_str(a.shape()) +
                    " x " + shape_str(b.shape()));
  std::vector<double> out(m * n);
  CMapMat A(a.data().data(), (Eigen::Index)m, (Eigen::Index)p);
  CMapMat B(b.data().data(), (Eigen::Index)p, (Eigen::Index)n);
  MapMat C(out.data(), (Eigen::Index)m, (Eigen::Index)n);
  C.noalias() = A * B;
  macs::add((uint64_t)m * p * n);
  return make_op({m, n}, std::move(out), {a, b}, [m, p, n](detail::Node& o) {
    const double sgn = g_matmul_backward_fault ? -1.0 : 1.0;
    CMapMat dC(o.grad.data(), (Eigen::Index)m, (Eigen::Index)n);
    auto& pa = *o.parents[0];
    auto& pb = *o.parents[1];
    CMapMat A(pa.data.data(), (Eigen::Index)m, (Eigen::Index)p);
    CMapMat B(pb.data.data(), (Eigen::Index)p, (Eigen::Index)n);
    if (wants_grad(pa)) {
      pa.ensure_grad();
      MapMat dA(pa.grad.data(), (Eigen::Index)m, (Eigen::Index)p);
      dA.noalias() += sgn * dC * B.transpose();
    }
    if (wants_grad(pb)) {
      pb.ensure_grad();
      MapMat dB(pb.grad.data(), (Eigen::Index)p, (Eigen::Index)n);
      dB.noalias() += sgn * A.transpose() * dC;
    }
  });
}

Tensor transpose(const Tensor& a) {
  require_rank2(a, "transpose");
  const size_t m = a.shape()[0], n = a.shape()[1];
  std::vector<double> out(m * n);
  for (size_t i = 0; i < m; ++i)
    for (size_t j = 0; j < n; ++j) out[j * m + i] = a.data()[i * n + j];
  return make_op({n, m}, std::move(out), {a}, [m, n](detail::Node& o) {
    auto& p = *o.parents[0];
    if (!wants_grad(p)) return;
    p.ensure_grad();
    for (size_t i = 0; i < m; ++i)
      for (size_t j = 0; j < n; ++j) p.grad[i * n + j] += o.grad[j * m + i];
  });
}

// ---------------------------------------------------------------------------
// Elementwise / broadcast
// ---------------------------------------------------------------------------

namespace {

// Shared plumbing for add/mul with optional row broadcast of b.
Tensor binary_op(const Tensor& a, const Tensor& b, bool is_mul) {
  const bool bcast = broadcast_rows(a, b);
  const size_t n = a.size();
  const size_t bn = b.size();
  std::vector<double> out(n);
  for (size_t i = 0; i < n; ++i) {
    const double bv = b.data()[bcast ? (i % bn) : i];
    out[i] = is_mul ? a.data()[i] * bv : a.data()[i] + bv;
  }
  return make_op(a.shape(), std::move(out), {a, b},
                 [bcast, n, bn, is_mul](detail::Node& o) {
                   auto& pa = *o.parents[0];
                   auto& pb = *o.parents[1];
                   if (wants_grad(pa)) {
                     pa.ensure_grad();
                     for (size_t i = 0; i < n; ++i) {
                       const double g = is_mul
                           ? o.grad[i] * pb.data[bcast ? (i % bn) : i]
                           : o.grad[i];
                       pa.grad[i] += g;
                     }
                   }
                   if (wants_grad(pb)) {
                     pb.ensure_grad();
                     for (size_t i = 0; i < n; ++i) {
                       const double g =
                           is_mul ? o.grad[i] * pa.data[i] : o.grad[i];
                       pb.grad[bcast ? (i % bn) : i] += g;
                     }
                   }
                 });
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) { return binary_op(a, b, false); }
Tensor mul(const Tensor& a, const Tensor& b) { return binary_op(a, b, true); }

Tensor sub(const Tensor& a, const Tensor& b) { return add(a, scale(b, -1.0)); }

Tensor div(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape())
    throw dim_error("div: shapes differ, " + shape_str(a.shape()) + " vs " +
                    shape_str(b.shape()));
  const size_t n = a.size();
  std::vector<double> out(n);
  for (size_t i = 0; i < n; ++i) out[i] = a.data()[i] / b.data()[i];
  return make_op(a.shape(), std::move(out), {a, b}, [n](detail::Node& o) {
    auto& pa = *o.parents[0];
    auto& pb = *o.parents[1];
    if (wants_grad(pa)) {
      pa.ensure_grad();
      for (size_t i = 0; i < n; ++i) pa.grad[i] += o.grad[i] / pb.data[i];
    }
    if (wants_grad(pb)) {
      pb.ensure_grad();
      for (size_t i = 0; i < n; ++i)
        pb.grad[i] -= o.grad[i] * pa.data[i] / (pb.data[i] * pb.data[i]);
    }
  });
}

Tensor scale(const Tensor& a, double c) {
  const size_t n = a.size();
  std::vector<double> out(n);
  for (size_t i = 0; i < n; ++i) out[i] = a.data()[i] * c;
  return make_op(a.shape(), std::move(out), {a}, [n, c](detail::Node& o) {
    auto& p = *o.parents[0];
    if (!wants_grad(p)) return;
    p.ensure_grad();
    for (size_t i = 0; i < n; ++i) p.grad[i] += o.grad[i] * c;
  });
}

Tensor add_const(const Tensor& a, double c) {
  const size_t n = a.size();
  std::vector<double> out(n);
  for (size_t i = 0; i < n; ++i) out[i] = a.data()[i] + c;
  return make_op(a.shape(), std::move(out), {a}, [n](detail::Node& o) {
    auto& p = *o.parents[0];
    if (!wants_grad(p)) return;
    p.ensure_grad();
    for (size_t i = 0; i < n; ++i) p.grad[i] += o.grad[i];
  });
}

Tensor relu(const Tensor& a) {
  const size_t n = a.size();
  std::vector<double> out(n);
  for (size_t i = 0; i < n; ++i) out[i] = a.data()[i] > 0.0 ? a.data()[i] : 0.0;
  return make_op(a.shape(), std::move(out), {a}, [n](detail::Node& o) {
    auto& p = *o.parents[0];
    if (!wants_grad(p)) return;
    p.ensure_grad();
    for (size_t i = 0; i < n; ++i)
      if (p.data[i] > 0.0) p.grad[i] += o.grad[i];
  });
}

Tensor gelu(const Tensor& a) {
  const size_t n = a.size();
  std::vector<double> out(n);
  for (size_t i = 0; i < n; ++i) out[i] = gelu_scalar(a.data()[i]);
  return make_op(a.shape(), std::move(out), {a}, [n](detail::Node& o) {
    auto& p = *o.parents[0];
    if (!wants_grad(p)) return;
    p.ensure_grad();
    for (size_t i = 0; i < n; ++i)
      p.grad[i] += o.grad[i] * gelu_grad_scalar(p.data[i]);
  });
}

// ---------------------------------------------------------------------------
// Reductions
// ---------------------------------------------------------------------------

Tensor sum(const Tensor& a) {
  double s = 0.0;
  for (double v : a.data()) s += v;
  const size_t n = a.size();
  return make_op({1}, {s}, {a}, [n](detail::Node& o) {
    auto& p = *o.parents[0];
    if (!wants_grad(p)) return;
    p.ensure_grad();
    for (size_t i = 0; i < n; ++i) p.grad[i] += o.grad[0];
  });
}

Tensor mean(const Tensor& a) { return scale(sum(a), 1.0 / (double)a.size()); }

Tensor row_sum(const Tensor& a) {
  require_rank2(a, "row_sum");
  const size_t m = a.shape()[0], n = a.shape()[1];
  std::vector<double> out(m, 0.0);
  for (size_t i = 0; i < m; ++i)
    for (size_t j = 0; j < n; ++j) out[i] += a.data()[i * n + j];
  return make_op({m, 1}, std::move(out), {a}, [m, n](detail::Node& o) {
    auto& p = *o.parents[0];
    if (!wants_grad(p)) return;
    p.ensure_grad();
    for (size_t i = 0; i < m; ++i)
      for (size_t j = 0; j < n; ++j) p.grad[i * n + j] += o.grad[i];
  });
}

Tensor col_sum(const Tensor& a) {
  require_rank2(a, "col_sum");
  const size_t m = a.shape()[0], n = a.shape()[1];
  std::vector<double> out(n, 0.0);
  for (size_t i = 0; i < m; ++i)
    for (size_t j = 0; j < n; ++j) out[j] += a.data()[i * n + j];
  return make_op({1, n}, std::move(out), {a}, [m, n](detail::Node& o) {
    auto& p = *o.parents[0];
    if (!wants_grad(p)) return;
    p.ensure_grad();
    for (size_t i = 0; i < m; ++i)
      for (size_t j = 0; j < n; ++j) p.grad[i * n + j] += o.grad[j];
  });
}

// ---------------------------------------------------------------------------
// Normalization
// ---------------------------------------------------------------------------

Tensor softmax_rows(const Tensor& a) {
  require_rank2(a, "softmax_rows");
  const size_t m = a.shape()[0], n = a.shape()[1];
  std::vector<double> out(m * n);
  for (size_t i = 0; i < m; ++i) {
    const double* row = a.data().data() + i * n;
    double mx = row[0];
    for (size_t j = 1; j < n; ++j) mx = std::max(mx, row[j]);
    double denom = 0.0;
    for (size_t j = 0; j < n; ++j) {
      out[i * n + j] = std::exp(row[j] - mx);
      denom += out[i * n + j];
    }
    for (size_t j = 0; j < n; ++j) out[i * n + j] /= denom;
  }
  return make_op({m, n}, std::move(out), {a}, [m, n](detail::Node& o) {
    auto& p = *o.parents[0];
    if (!wants_grad(p)) return;
    p.ensure_grad();
    for (size_t i = 0; i < m; ++i) {
      double dot = 0.0;
      for (size_t j = 0; j < n; ++j) dot += o.grad[i * n + j] * o.data[i * n + j];
      for (size_t j = 0; j < n; ++j)
        p.grad[i * n + j] += o.data[i * n + j] * (o.grad[i * n + j] - dot);
    }
  });
}

Tensor layer_norm(const Tensor& a, double eps) {
  require_rank2(a, "layer_norm");
  const size_t m = a.shape()[0], n = a.shape()[1];
  std::vector<double> out(m * n);
  std::vector<double> inv_sigma(m);
  for (size_t i = 0; i < m; ++i) {
    const double* row = a.data().data() + i * n;
    double mu = 0.0;
    for (size_t j = 0; j < n; ++j) mu += row[j];
    mu /= (double)n;
    double var = 0.0;
    for (size_t j = 0; j < n; ++j) var += (row[j] - mu) * (row[j] - mu);
    var /= (double)n;
    inv_sigma[i] = 1.0 / std::sqrt(var + eps);
    for (size_t j = 0; j < n; ++j) out[i * n + j] = (row[j] - mu) * inv_sigma[i];
  }
  return make_op({m, n}, std::move(out), {a},
                 [m, n, inv_sigma](detail::Node& o) {
                   auto& p = *o.parents[0];
                   if (!wants_grad(p)) return;
                   p.ensure_grad();
                   for (size_t i = 0; i < m; ++i) {
                     double gmean = 0.0, gymean = 0.0;
                     for (size_t j = 0; j < n; ++j) {
                       gmean += o.grad[i * n + j];
                       gymean += o.grad[i * n + j] * o.data[i * n + j];
                     }
                     gmean /= (double)n;
                     gymean /= (double)n;
                     for (size_t j = 0; j < n; ++j)
                       p.grad[i * n + j] +=
                           inv_sigma[i] * (o.grad[i * n + j] - gmean -
                                           o.data[i * n + j] * gymean);
                   }
                 });
}

// ---------------------------------------------------------------------------
// Structure
// ---------------------------------------------------------------------------

Tensor scale_rows(const Tensor& a, const Tensor& s) {
  require_rank2(a, "scale_rows");
  const size_t m = a.shape()[0], n = a.shape()[1];
  if (s.size() != m)
    throw dim_error("scale_rows: scale length " + std::to_string(s.size()) +
                    " does not match row count " + std::to_string(m));
  std::vector<double> out(m * n);
  for (size_t i = 0; i < m; ++i)
    for (size_t j = 0; j < n; ++j) out[i * n + j] = a.data()[i * n + j] * s.data()[i];
  return make_op({m, n}, std::move(out), {a, s}, [m, n](detail::Node& o) {
    auto& pa = *o.parents[0];
    auto& ps = *o.parents[1];
    if (wants_grad(pa)) {
      pa.ensure_grad();
      for (size_t i = 0; i < m; ++i)
        for (size_t j = 0; j < n; ++j)
          pa.grad[i * n + j] += o.grad[i * n + j] * ps.data[i];
    }
    if (wants_grad(ps)) {
      ps.ensure_grad();
      for (size_t i = 0; i < m; ++i) {
        double acc = 0.0;
        for (size_t j = 0; j < n; ++j) acc += o.grad[i * n + j] * pa.data[i * n + j];
        ps.grad[i] += acc;
      }
    }
  });
}

Tensor index_select(const Tensor& a, const std::vector<size_t>& idx) {
  require_rank2(a, "index_select");
  const size_t m = a.shape()[0], d = a.shape()[1];
  for (size_t v : idx)
    if (v >= m)
      throw index_error("index_select: index " + std::to_string(v) +
                        " out of range [0, " + std::to_string(m) + ")");
  std::vector<double> out(idx.size() * d);
  for (size_t r = 0; r < idx.size(); ++r)
    std::copy_n(a.data().data() + idx[r] * d, d, out.data() + r * d);
  return make_op({idx.size(), d}, std::move(out), {a}, [idx, d](detail::Node& o) {
    auto& p = *o.parents[0];
    if (!wants_grad(p)) return;
    p.ensure_grad();
    for (size_t r = 0; r < idx.size(); ++r)
      for (size_t j = 0; j < d; ++j) p.grad[idx[r] * d + j] += o.grad[r * d + j];
  });
}

Tensor index_add(const Tensor& base, const std::vector<size_t>& idx,
                 const Tensor& src) {
  require_rank2(base, "index_add base");
  require_rank2(src, "index_add src");
  const size_t m = base.shape()[0], d = base.shape()[1];
  if (src.shape()[1] != d || src.shape()[0] != idx.size())
    throw dim_error("index_add: src shape " + shape_str(src.shape()) +
                    " does not match " + std::to_string(idx.size()) +
                    " indices of width " + std::to_string(d));
  for (size_t v : idx)
    if (v >= m)
      throw index_error("index_add: index " + std::to_string(v) +
                        " out of range [0, " + std::to_string(m) + ")");
  std::vector<double> out(base.data());
  for (size_t r = 0; r < idx.size(); ++r)
    for (size_t j = 0; j < d; ++j) out[idx[r] * d + j] += src.data()[r * d + j];
  return make_op({m, d}, std::move(out), {base, src}, [idx, d](detail::Node& o) {
    auto& pb = *o.parents[0];
    auto& ps = *o.parents[1];
    if (wants_grad(pb)) accumulate(pb, o.grad);
    if (wants_grad(ps)) {
      ps.ensure_grad();
      for (size_t r = 0; r < idx.size(); ++r)
        for (size_t j = 0; j < d; ++j) ps.grad[r * d + j] += o.grad[idx[r] * d + j];
    }
  });
}

Tensor gather_scalar(const Tensor& a, const std::vector<size_t>& rows,
                     const std::vector<size_t>& cols) {
  require_rank2(a, "gather_scalar");
  if (rows.size() != cols.size())
    throw dim_error("gather_scalar: row/col index lists differ in length");
  const size_t m = a.shape()[0], n = a.shape()[1];
  std::vector<double> out(rows.size());
  for (size_t t = 0; t < rows.size(); ++t) {
    if (rows[t] >= m || cols[t] >= n)
      throw index_error("gather_scalar: index (" + std::to_string(rows[t]) +
                        ", " + std::to_string(cols[t]) + ") out of range");
    out[t] = a.data()[rows[t] * n + cols[t]];
  }
  return make_op({rows.size(), 1}, std::move(out), {a},
                 [rows, cols, n](detail::Node& o) {
                   auto& p = *o.parents[0];
                   if (!wants_grad(p)) return;
                   p.ensure_grad();
                   for (size_t t = 0; t < rows.size(); ++t)
                     p.grad[rows[t] * n + cols[t]] += o.grad[t];
                 });
}

Tensor slice_cols(const Tensor& a, size_t start, size_t len) {
  require_rank2(a, "slice_cols");
  const size_t m = a.shape()[0], n = a.shape()[1];
  if (start + len > n)
    throw index_error("slice_cols: [" + std::to_string(start) + ", " +
                      std::to_string(start + len) + ") exceeds width " +
                      std::to_string(n));
  std::vector<double> out(m * len);
  for (size_t i = 0; i < m; ++i)
    std::copy_n(a.data().data() + i * n + start, len, out.data() + i * len);
  return make_op({m, len}, std::move(out), {a}, [m, n, start, len](detail::Node& o) {
    auto& p = *o.parents[0];
    if (!wants_grad(p)) return;
    p.ensure_grad();
    for (size_t i = 0; i < m; ++i)
      for (size_t j = 0; j < len; ++j)
        p.grad[i * n + start + j] += o.grad[i * len + j];
  });
}

Tensor concat_cols(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw dim_error("concat_cols: no parts");
  const size_t m = parts[0].rows();
  size_t total = 0;
  for (const auto& t : parts) {
    if (t.rows() != m) throw dim_error("concat_cols: row counts differ");
    total += t.cols();
  }
  std::vector<double> out(m * total);
  std::vector<size_t> offsets;
  size_t off = 0;
  for (const auto& t : parts) {
    const size_t w = t.cols();
    offsets.push_back(off);
    for (size_t i = 0; i < m; ++i)
      std::copy_n(t.data().data() + i * w, w, out.data() + i * total + off);
    off += w;
  }
  std::vector<size_t> widths;
  for (const auto& t : parts) widths.push_back(t.cols());
  return make_op({m, total}, std::move(out), parts,
                 [m, total, offsets, widths](detail::Node& o) {
                   for (size_t pi = 0; pi < o.parents.size(); ++pi) {
                     auto& p = *o.parents[pi];
                     if (!wants_grad(p)) continue;
                     p.ensure_grad();
                     const size_t w = widths[pi], off = offsets[pi];
                     for (size_t i = 0; i < m; ++i)
                       for (size_t j = 0; j < w; ++j)
                         p.grad[i * w + j] += o.grad[i * total + off + j];
                   }
                 });
}

Tensor concat_rows(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw dim_error("concat_rows: no parts");
  const size_t d = parts[0].cols();
  size_t total = 0;
  for (const auto& t : parts) {
    if (t.cols() != d) throw dim_error("concat_rows: column counts differ");
    total += t.rows();
  }
  std::vector<double> out;
  out.reserve(total * d);
  std::vector<size_t> row_offsets;
  size_t off = 0;
  for (const auto& t : parts) {
    row_offsets.push_back(off);
    out.insert(out.end(), t.data().begin(), t.data().end());
    off += t.rows();
  }
  std::vector<size_t> row_counts;
  for (const auto& t : parts) row_counts.push_back(t.rows());
  return make_op({total, d}, std::move(out), parts,
                 [d, row_offsets, row_counts](detail::Node& o) {
                   for (size_t pi = 0; pi < o.parents.size(); ++pi) {
                     auto& p = *o.parents[pi];
                     if (!wants_grad(p)) continue;
                     p.ensure_grad();
                     const size_t r0 = row_offsets[pi];
                     for (size_t i = 0; i < row_counts[pi] * d; ++i)
                       p.grad[i] += o.grad[r0 * d + i];
                   }
                 });
}

// ---------------------------------------------------------------------------
// Objectives
// ---------------------------------------------------------------------------

Tensor cross_entropy(const Tensor& logits, const std::vector<size_t>& labels) {
  require_rank2(logits, "cross_entropy");
  const size_t b = logits.shape()[0], c = logits.shape()[1];
  if (labels.size() != b)
    throw dim_error("cross_entropy: " + std::to_string(labels.size()) +
                    " labels for " + std::to_string(b) + " rows");
  for (size_t y : labels)
    if (y >= c)
      throw index_error("cross_entropy: label " + std::to_string(y) +
                        " out of range [0, " + std::to_string(c) + ")");
  std::vector<double> probs(b * c);
  double loss = 0.0;
  for (size_t i = 0; i < b; ++i) {
    const double* row = logits.data().data() + i * c;
    double mx = row[0];
    for (size_t j = 1; j < c; ++j) mx = std::max(mx, row[j]);
    double denom = 0.0;
    for (size_t j = 0; j < c; ++j) {
      probs[i * c + j] = std::exp(row[j] - mx);
      denom += probs[i * c + j];
    }
    for (size_t j = 0; j < c; ++j) probs[i * c + j] /= denom;
    loss -= std::log(probs[i * c + labels[i]]);
  }
  loss /= (double)b;
  return make_op({1}, {loss}, {logits},
                 [b, c, labels, probs](detail::Node& o) {
                   auto& p = *o.parents[0];
                   if (!wants_grad(p)) return;
                   p.ensure_grad();
                   const double g = o.grad[0] / (double)b;
                   for (size_t i = 0; i < b; ++i)
                     for (size_t j = 0; j < c; ++j)
                       p.grad[i * c + j] +=
                           g * (probs[i * c + j] - (labels[i] == j ? 1.0 : 0.0));
                 });
}

}  // namespace moevit
