#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

namespace moevit {

struct dim_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct config_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct contract_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct index_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct train_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

namespace detail {

struct Node {
  uint64_t id = 0;
  std::vector<size_t> shape;
  std::vector<double> data;
  std::vector<double> grad;  // lazily allocated, same size as data
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward_fn;

  void ensure_grad() {
    if (grad.size() != data.size()) grad.assign(data.size(), 0.0);
  }
};

}  // namespace detail

// Multiply-accumulate counter for the dense kernels, per thread.
// Only matmul contributes; this is the instrumentation behind the
// empirical cost checks.
namespace macs {
uint64_t count();
void reset();
void add(uint64_t n);
}  // namespace macs

// Test fixture: flips the sign of the matmul backward rule so that
// gradient-check suites can prove they detect a broken derivative.
void inject_matmul_backward_fault(bool on);

/// Dense row-major 64-bit tensor with reverse-mode gradients.
/// Value-semantics handle over a shared graph node; data is immutable
/// after construction except for the grad buffer.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(std::vector<size_t> shape, bool requires_grad = false);
  static Tensor full(std::vector<size_t> shape, double value,
                     bool requires_grad = false);
  static Tensor from(std::vector<size_t> shape, std::vector<double> data,
                     bool requires_grad = false);
  static Tensor scalar(double v, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const std::vector<size_t>& shape() const { return node_->shape; }
  size_t size() const { return node_->data.size(); }
  size_t rows() const;
  size_t cols() const;
  const std::vector<double>& data() const { return node_->data; }
  std::vector<double>& mutable_data() { return node_->data; }
  bool requires_grad() const { return node_->requires_grad; }
  const std::vector<double>& grad() const;
  void zero_grad();

  double value() const;                   // scalar tensors only
  double at(size_t i, size_t j) const;    // rank-2 access

  /// Reverse pass from a scalar loss. Visits every reachable op once,
  /// in reverse topological (recording) order; accumulates into grads.
  void backward() const;

  std::shared_ptr<detail::Node> node() const { return node_; }

 private:
  explicit Tensor(std::shared_ptr<detail::Node> n) : node_(std::move(n)) {}
  std::shared_ptr<detail::Node> node_;

  friend Tensor make_op(std::vector<size_t> shape, std::vector<double> data,
                        std::vector<Tensor> parents,
                        std::function<void(detail::Node&)> backward);
};

Tensor make_op(std::vector<size_t> shape, std::vector<double> data,
               std::vector<Tensor> parents,
               std::function<void(detail::Node&)> backward);

// -- linear algebra --
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);

// -- elementwise / broadcast (leading-dimension broadcast only) --
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double c);
Tensor add_const(const Tensor& a, double c);
Tensor relu(const Tensor& a);
Tensor gelu(const Tensor& a);

// -- reductions --
Tensor mean(const Tensor& a);
Tensor sum(const Tensor& a);
Tensor row_sum(const Tensor& a);  // [m x n] -> [m x 1]
Tensor col_sum(const Tensor& a);  // [m x n] -> [1 x n]

// -- normalization --
Tensor softmax_rows(const Tensor& a);
Tensor layer_norm(const Tensor& a, double eps = 1e-12);

// -- structure --
Tensor scale_rows(const Tensor& a, const Tensor& s);  // s: [m] or [m x 1]
Tensor index_select(const Tensor& a, const std::vector<size_t>& idx);
Tensor index_add(const Tensor& base, const std::vector<size_t>& idx,
                 const Tensor& src);
Tensor gather_scalar(const Tensor& a, const std::vector<size_t>& rows,
                     const std::vector<size_t>& cols);  // -> [n x 1]
Tensor slice_cols(const Tensor& a, size_t start, size_t len);
Tensor concat_cols(const std::vector<Tensor>& parts);
Tensor concat_rows(const std::vector<Tensor>& parts);

// -- objectives --
Tensor cross_entropy(const Tensor& logits, const std::vector<size_t>& labels);

}  // namespace moevit
