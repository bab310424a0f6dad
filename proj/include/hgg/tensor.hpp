#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

namespace hgg {

struct TensorImpl {
  std::vector<std::size_t> shape;
  std::vector<double> value;
  std::vector<double> grad;    // scratch, managed by the tape that saw the tensor
  bool requires_grad = false;  // trainable leaf, reported by Tape::backward
  bool tracked = false;        // can reach a trainable leaf through recorded ops
  std::string name;
};

/// Shared-payload handle to a dense f64 array in row-major order. Copies
/// alias the same storage, so handles are cheap to pass around and a Tape
/// never sees its operands reallocated. Values are written once; only
/// parameter tensors are updated in place, and only between tapes.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(std::vector<std::size_t> shape, bool requires_grad = false);
  static Tensor full(std::vector<std::size_t> shape, double fill, bool requires_grad = false);
  static Tensor from(std::vector<std::size_t> shape, std::vector<double> data,
                     bool requires_grad = false);
  static Tensor scalar(double v);
  static Tensor vec(std::vector<double> data);

  bool defined() const { return impl_ != nullptr; }
  const std::vector<std::size_t>& shape() const { return impl_->shape; }
  std::size_t rank() const { return impl_->shape.size(); }
  std::size_t numel() const { return impl_->value.size(); }
  std::size_t rows() const;
  std::size_t cols() const;
  bool is_scalar() const { return numel() == 1; }

  const std::vector<double>& value() const { return impl_->value; }
  // the handle is const, the shared payload is not
  std::vector<double>& mutable_value() const { return impl_->value; }
  double item() const;
  const std::vector<double>& grad() const { return impl_->grad; }

  bool requires_grad() const { return impl_->requires_grad; }
  Tensor& set_requires_grad(bool b);
  const std::string& name() const { return impl_->name; }
  Tensor& set_name(std::string n);

  TensorImpl* impl() const { return impl_.get(); }
  std::shared_ptr<TensorImpl> impl_ptr() const { return impl_; }

 private:
  std::shared_ptr<TensorImpl> impl_;
};

/// Gradients from one backward pass, keyed by tensor identity. Tensors that
/// never reached the loss read back as zeros of their own shape.
class GradTable {
 public:
  std::vector<double> get(const Tensor& t) const;
  bool contains(const Tensor& t) const { return grads_.count(t.impl()) != 0; }
  std::size_t size() const { return grads_.size(); }

 private:
  friend class Tape;
  std::unordered_map<const TensorImpl*, std::vector<double>> grads_;
};

/// Records every kernel it executes, in order, together with the saved values
/// its backward needs. backward() replays the records strictly in reverse;
/// a tensor consumed by several kernels accumulates the sum of their
/// contributions. One tape is single-threaded; independent tapes over
/// different graphs may run concurrently as long as backward passes into
/// shared parameters are not interleaved.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  // dense products
  Tensor matmul(const Tensor& a, const Tensor& b);     // a[m,k] * b[k,n]
  Tensor matmul_nt(const Tensor& a, const Tensor& b);  // a[m,k] * b[n,k]^T
  Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b);  // x*w^T + b

  // elementwise; the smaller operand broadcasts over leading dimensions,
  // and a one-element tensor broadcasts anywhere
  Tensor add(const Tensor& a, const Tensor& b);
  Tensor sub(const Tensor& a, const Tensor& b);
  Tensor mul(const Tensor& a, const Tensor& b);
  Tensor affine(const Tensor& x, double scale, double shift);
  Tensor relu(const Tensor& x);
  Tensor exp(const Tensor& x);
  Tensor log(const Tensor& x);

  // reductions and row-normalizers over the last axis
  Tensor softmax(const Tensor& x);
  Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta);
  Tensor mean(const Tensor& x, std::size_t axis);
  Tensor mean_all(const Tensor& x);
  Tensor sum_all(const Tensor& x);

  // structure
  Tensor concat(const std::vector<Tensor>& parts, std::size_t axis);
  Tensor scatter_mean(const Tensor& values, const std::vector<std::size_t>& target_index,
                      std::size_t n_targets);
  Tensor gather_rows(const Tensor& x, const std::vector<std::size_t>& index);
  /// scatter_mean(gather_rows(x, src), dst, n_dst) without materializing the
  /// gathered rows; the workhorse of neighborhood aggregation.
  Tensor neighbor_mean(const Tensor& x, const std::vector<std::size_t>& src,
                       const std::vector<std::size_t>& dst, std::size_t n_dst);
  Tensor slice_rows(const Tensor& x, std::size_t begin, std::size_t count);
  Tensor slice_cols(const Tensor& x, std::size_t begin, std::size_t count);
  Tensor reshape(const Tensor& x, std::vector<std::size_t> shape);
  Tensor pick(const Tensor& x, std::size_t index);

  /// Reverse pass from a scalar loss. Every tensor with requires_grad that
  /// participated on this tape appears in the table with d loss / d tensor.
  GradTable backward(const Tensor& loss);

  std::size_t steps() const { return steps_.size(); }

 private:
  friend struct TapeAccess;
  Tensor make(std::vector<std::size_t> shape);
  static bool tracked(const Tensor& t) { return t.impl()->requires_grad || t.impl()->tracked; }
  void note(const Tensor& t);
  void mark(const Tensor& out, std::initializer_list<const Tensor*> tracked_inputs,
            std::function<void()> back);

  std::vector<std::function<void()>> steps_;
  std::vector<std::shared_ptr<TensorImpl>> touched_;
  std::unordered_set<const TensorImpl*> seen_;
};

struct FdReport {
  double max_rel_err = 0.0;
  std::string worst_param;
  std::size_t worst_index = 0;
  std::size_t entries_checked = 0;
};

/// Central-difference check of the analytic gradient. `f` must rebuild the
/// forward pass on the tape it is given, reading the current parameter
/// values, and return the scalar loss. Relative error per entry is
/// |ga - gfd| / max(1e-8, |ga| + |gfd|).
///
/// `max_entries_per_param` = 0 probes every entry; a positive value probes a
/// deterministic evenly-spaced subset of each parameter tensor, which is how
/// million-parameter models stay checkable in seconds.
FdReport finite_diff_check(const std::function<Tensor(Tape&)>& f,
                           const std::vector<Tensor>& params, double eps,
                           std::size_t max_entries_per_param = 0);

}  // namespace hgg
