#include "hgg/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>

namespace hgg {
namespace {

constexpr double kLayerNormEps = 1e-12;

std::string shape_str(const std::vector<std::size_t>& s) {
  std::ostringstream os;
  os << "(";
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) os << ", ";
    os << s[i];
  }
  os << ")";
  return os.str();
}

[[noreturn]] void fail(const std::string& kernel, const std::string& msg) {
  throw std::invalid_argument(kernel + ": " + msg);
}

void require_rank2(const char* kernel, const Tensor& t) {
  if (t.rank() != 2) fail(kernel, "expected a rank-2 tensor, got shape " + shape_str(t.shape()));
}

// c[m,n] += a[m,k] * b[k,n]
void mm_nn_acc(const double* __restrict a, const double* __restrict b, double* __restrict c,
               std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* ai = a + i * k;
    double* ci = c + i * n;
    for (std::size_t l = 0; l < k; ++l) {
      const double av = ai[l];
      const double* bl = b + l * n;
      for (std::size_t j = 0; j < n; ++j) ci[j] += av * bl[j];
    }
  }
}

// c[m,n] += a[m,k] * b[n,k]^T
void mm_nt_acc(const double* __restrict a, const double* __restrict b, double* __restrict c,
               std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* ai = a + i * k;
    double* ci = c + i * n;
    for (std::size_t j = 0; j < n; ++j) {
      const double* bj = b + j * k;
      double s0 = 0.0, s1 = 0.0, s2 = 0.0, s3 = 0.0, s4 = 0.0, s5 = 0.0, s6 = 0.0, s7 = 0.0;
      std::size_t l = 0;
      for (; l + 8 <= k; l += 8) {
        s0 += ai[l] * bj[l];
        s1 += ai[l + 1] * bj[l + 1];
        s2 += ai[l + 2] * bj[l + 2];
        s3 += ai[l + 3] * bj[l + 3];
        s4 += ai[l + 4] * bj[l + 4];
        s5 += ai[l + 5] * bj[l + 5];
        s6 += ai[l + 6] * bj[l + 6];
        s7 += ai[l + 7] * bj[l + 7];
      }
      double s = ((s0 + s1) + (s2 + s3)) + ((s4 + s5) + (s6 + s7));
      for (; l < k; ++l) s += ai[l] * bj[l];
      ci[j] += s;
    }
  }
}

// c[k,n] += a[m,k]^T * b[m,n]
void mm_tn_acc(const double* __restrict a, const double* __restrict b, double* __restrict c,
               std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* ai = a + i * k;
    const double* bi = b + i * n;
    for (std::size_t l = 0; l < k; ++l) {
      const double av = ai[l];
      double* cl = c + l * n;
      for (std::size_t j = 0; j < n; ++j) cl[j] += av * bi[j];
    }
  }
}

bool is_suffix(const std::vector<std::size_t>& small, const std::vector<std::size_t>& big) {
  if (small.size() > big.size()) return false;
  for (std::size_t i = 0; i < small.size(); ++i)
    if (small[small.size() - 1 - i] != big[big.size() - 1 - i]) return false;
  return true;
}

}  // namespace

// ---------------------------------------------------------------------------
// Tensor

Tensor Tensor::zeros(std::vector<std::size_t> shape, bool requires_grad) {
  return from(std::move(shape), {}, requires_grad);
}

Tensor Tensor::full(std::vector<std::size_t> shape, double fill, bool requires_grad) {
  Tensor t = from(std::move(shape), {}, requires_grad);
  std::fill(t.impl()->value.begin(), t.impl()->value.end(), fill);
  return t;
}

Tensor Tensor::from(std::vector<std::size_t> shape, std::vector<double> data, bool requires_grad) {
  if (shape.empty()) fail("tensor", "rank-0 shapes are not supported");
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  Tensor t;
  t.impl_ = std::make_shared<TensorImpl>();
  t.impl_->shape = std::move(shape);
  if (data.empty()) {
    t.impl_->value.assign(n, 0.0);
  } else {
    if (data.size() != n)
      fail("tensor", "data length " + std::to_string(data.size()) + " does not match shape " +
                         shape_str(t.impl_->shape));
    t.impl_->value = std::move(data);
  }
  t.impl_->requires_grad = requires_grad;
  return t;
}

Tensor Tensor::scalar(double v) { return from({1}, {v}); }

Tensor Tensor::vec(std::vector<double> data) {
  std::size_t n = data.size();
  return from({n}, std::move(data));
}

std::size_t Tensor::rows() const {
  require_rank2("rows", *this);
  return impl_->shape[0];
}

std::size_t Tensor::cols() const {
  require_rank2("cols", *this);
  return impl_->shape[1];
}

double Tensor::item() const {
  if (numel() != 1) fail("item", "tensor of shape " + shape_str(shape()) + " is not a scalar");
  return impl_->value[0];
}

Tensor& Tensor::set_requires_grad(bool b) {
  impl_->requires_grad = b;
  return *this;
}

Tensor& Tensor::set_name(std::string n) {
  impl_->name = std::move(n);
  return *this;
}

// ---------------------------------------------------------------------------
// GradTable

std::vector<double> GradTable::get(const Tensor& t) const {
  auto it = grads_.find(t.impl());
  if (it == grads_.end()) return std::vector<double>(t.numel(), 0.0);
  return it->second;
}

// ---------------------------------------------------------------------------
// Tape plumbing

Tensor Tape::make(std::vector<std::size_t> shape) { return Tensor::zeros(std::move(shape)); }

void Tape::note(const Tensor& t) {
  TensorImpl* p = t.impl();
  if (seen_.insert(p).second) touched_.push_back(t.impl_ptr());
}

void Tape::mark(const Tensor& out, std::initializer_list<const Tensor*> tracked_inputs,
                std::function<void()> back) {
  bool any = false;
  for (const Tensor* t : tracked_inputs)
    if (t->defined() && tracked(*t)) {
      any = true;
      break;
    }
  if (!any) return;
  out.impl()->tracked = true;
  for (const Tensor* t : tracked_inputs)
    if (t->defined() && tracked(*t)) note(*t);
  note(out);
  steps_.push_back(std::move(back));
}

GradTable Tape::backward(const Tensor& loss) {
  if (!loss.defined() || loss.numel() != 1)
    throw std::invalid_argument("backward: loss must be a scalar tensor");
  for (auto& p : touched_) p->grad.assign(p->value.size(), 0.0);
  if (tracked(loss)) {
    loss.impl()->grad.assign(1, 1.0);
    for (auto it = steps_.rbegin(); it != steps_.rend(); ++it) (*it)();
  }
  GradTable table;
  for (auto& p : touched_)
    if (p->requires_grad) table.grads_.emplace(p.get(), p->grad);
  return table;
}

// ---------------------------------------------------------------------------
// products

Tensor Tape::matmul(const Tensor& a, const Tensor& b) {
  require_rank2("matmul", a);
  require_rank2("matmul", b);
  if (a.cols() != b.rows())
    fail("matmul", "incompatible shapes " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  Tensor out = make({m, n});
  mm_nn_acc(a.value().data(), b.value().data(), out.impl()->value.data(), m, k, n);
  auto ai = a.impl_ptr(), bi = b.impl_ptr(), oi = out.impl_ptr();
  const bool ta = tracked(a), tb = tracked(b);
  mark(out, {&a, &b}, [=] {
    if (ta) mm_nt_acc(oi->grad.data(), bi->value.data(), ai->grad.data(), m, n, k);
    if (tb) mm_tn_acc(ai->value.data(), oi->grad.data(), bi->grad.data(), m, k, n);
  });
  return out;
}

Tensor Tape::matmul_nt(const Tensor& a, const Tensor& b) {
  require_rank2("matmul_nt", a);
  require_rank2("matmul_nt", b);
  if (a.cols() != b.cols())
    fail("matmul_nt",
         "incompatible shapes " + shape_str(a.shape()) + " x " + shape_str(b.shape()) + "^T");
  const std::size_t m = a.rows(), k = a.cols(), n = b.rows();
  Tensor out = make({m, n});
  mm_nt_acc(a.value().data(), b.value().data(), out.impl()->value.data(), m, k, n);
  auto ai = a.impl_ptr(), bi = b.impl_ptr(), oi = out.impl_ptr();
  const bool ta = tracked(a), tb = tracked(b);
  mark(out, {&a, &b}, [=] {
    if (ta) mm_nn_acc(oi->grad.data(), bi->value.data(), ai->grad.data(), m, n, k);
    if (tb) mm_tn_acc(oi->grad.data(), ai->value.data(), bi->grad.data(), m, n, k);
  });
  return out;
}

Tensor Tape::linear(const Tensor& x, const Tensor& w, const Tensor& b) {
  require_rank2("linear", x);
  require_rank2("linear", w);
  if (x.cols() != w.cols())
    fail("linear",
         "incompatible shapes " + shape_str(x.shape()) + " x " + shape_str(w.shape()) + "^T");
  if (b.rank() != 1 || b.numel() != w.rows())
    fail("linear", "bias shape " + shape_str(b.shape()) + " does not match weight shape " +
                       shape_str(w.shape()));
  const std::size_t m = x.rows(), k = x.cols(), n = w.rows();
  Tensor out = make({m, n});
  double* ov = out.impl()->value.data();
  const double* bv = b.value().data();
  for (std::size_t i = 0; i < m; ++i) std::copy(bv, bv + n, ov + i * n);
  mm_nt_acc(x.value().data(), w.value().data(), ov, m, k, n);
  auto xi = x.impl_ptr(), wi = w.impl_ptr(), bi = b.impl_ptr(), oi = out.impl_ptr();
  const bool tx = tracked(x), tw = tracked(w), tb = tracked(b);
  mark(out, {&x, &w, &b}, [=] {
    if (tx) mm_nn_acc(oi->grad.data(), wi->value.data(), xi->grad.data(), m, n, k);
    if (tw) mm_tn_acc(oi->grad.data(), xi->value.data(), wi->grad.data(), m, n, k);
    if (tb) {
      const double* g = oi->grad.data();
      double* db = bi->grad.data();
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) db[j] += g[i * n + j];
    }
  });
  return out;
}

// ---------------------------------------------------------------------------
// elementwise

namespace {
enum class EwOp { Add, Sub, Mul };
}

static Tensor ew_op(Tape& tape, const Tensor& a, const Tensor& b, EwOp op, const char* name);

Tensor Tape::add(const Tensor& a, const Tensor& b) { return ew_op(*this, a, b, EwOp::Add, "add"); }
Tensor Tape::sub(const Tensor& a, const Tensor& b) { return ew_op(*this, a, b, EwOp::Sub, "sub"); }
Tensor Tape::mul(const Tensor& a, const Tensor& b) { return ew_op(*this, a, b, EwOp::Mul, "mul"); }

struct TapeAccess {
  static Tensor make(Tape& t, std::vector<std::size_t> shape) { return t.make(std::move(shape)); }
  static void mark(Tape& t, const Tensor& out, std::initializer_list<const Tensor*> ins,
                   std::function<void()> back) {
    t.mark(out, ins, std::move(back));
  }
  static bool tracked(const Tensor& t) { return Tape::tracked(t); }
};

static Tensor ew_op(Tape& tape, const Tensor& a, const Tensor& b, EwOp op, const char* name) {
  // mode 0: same shape; 1: b broadcasts into a; 2: a broadcasts into b
  int mode;
  if (a.shape() == b.shape())
    mode = 0;
  else if (b.numel() == 1 || is_suffix(b.shape(), a.shape()))
    mode = 1;
  else if (a.numel() == 1 || is_suffix(a.shape(), b.shape()))
    mode = 2;
  else
    fail(name, "shapes " + shape_str(a.shape()) + " and " + shape_str(b.shape()) +
                   " are not broadcastable");
  const Tensor& big = (mode == 2) ? b : a;
  const std::size_t n = big.numel(), na = a.numel(), nb = b.numel();
  Tensor out = TapeAccess::make(tape, big.shape());
  const double* av = a.value().data();
  const double* bv = b.value().data();
  double* ov = out.impl()->value.data();
  for (std::size_t i = 0; i < n; ++i) {
    const double x = av[mode == 2 ? i % na : i];
    const double y = bv[mode == 1 ? i % nb : i];
    ov[i] = op == EwOp::Add ? x + y : op == EwOp::Sub ? x - y : x * y;
  }
  auto ai = a.impl_ptr(), bi = b.impl_ptr(), oi = out.impl_ptr();
  const bool ta = TapeAccess::tracked(a), tb = TapeAccess::tracked(b);
  TapeAccess::mark(tape, out, {&a, &b}, [=] {
    const double* g = oi->grad.data();
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t ia = mode == 2 ? i % na : i;
      const std::size_t ib = mode == 1 ? i % nb : i;
      switch (op) {
        case EwOp::Add:
          if (ta) ai->grad[ia] += g[i];
          if (tb) bi->grad[ib] += g[i];
          break;
        case EwOp::Sub:
          if (ta) ai->grad[ia] += g[i];
          if (tb) bi->grad[ib] -= g[i];
          break;
        case EwOp::Mul:
          if (ta) ai->grad[ia] += g[i] * bi->value[ib];
          if (tb) bi->grad[ib] += g[i] * ai->value[ia];
          break;
      }
    }
  });
  return out;
}

Tensor Tape::affine(const Tensor& x, double scale, double shift) {
  Tensor out = make(x.shape());
  const std::size_t n = x.numel();
  for (std::size_t i = 0; i < n; ++i) out.impl()->value[i] = scale * x.value()[i] + shift;
  auto xi = x.impl_ptr(), oi = out.impl_ptr();
  mark(out, {&x}, [=] {
    for (std::size_t i = 0; i < n; ++i) xi->grad[i] += scale * oi->grad[i];
  });
  return out;
}

Tensor Tape::relu(const Tensor& x) {
  Tensor out = make(x.shape());
  const std::size_t n = x.numel();
  for (std::size_t i = 0; i < n; ++i) out.impl()->value[i] = x.value()[i] > 0.0 ? x.value()[i] : 0.0;
  auto xi = x.impl_ptr(), oi = out.impl_ptr();
  mark(out, {&x}, [=] {
    for (std::size_t i = 0; i < n; ++i)
      if (xi->value[i] > 0.0) xi->grad[i] += oi->grad[i];
  });
  return out;
}

Tensor Tape::exp(const Tensor& x) {
  Tensor out = make(x.shape());
  const std::size_t n = x.numel();
  for (std::size_t i = 0; i < n; ++i) out.impl()->value[i] = std::exp(x.value()[i]);
  auto xi = x.impl_ptr(), oi = out.impl_ptr();
  mark(out, {&x}, [=] {
    for (std::size_t i = 0; i < n; ++i) xi->grad[i] += oi->grad[i] * oi->value[i];
  });
  return out;
}

Tensor Tape::log(const Tensor& x) {
  const std::size_t n = x.numel();
  for (std::size_t i = 0; i < n; ++i)
    if (!(x.value()[i] > 0.0))
      fail("log", "non-positive input " + std::to_string(x.value()[i]) + " at entry " +
                      std::to_string(i));
  Tensor out = make(x.shape());
  for (std::size_t i = 0; i < n; ++i) out.impl()->value[i] = std::log(x.value()[i]);
  auto xi = x.impl_ptr(), oi = out.impl_ptr();
  mark(out, {&x}, [=] {
    for (std::size_t i = 0; i < n; ++i) xi->grad[i] += oi->grad[i] / xi->value[i];
  });
  return out;
}

// ---------------------------------------------------------------------------
// last-axis normalizers and reductions

Tensor Tape::softmax(const Tensor& x) {
  if (x.rank() < 1 || x.rank() > 2)
    fail("softmax", "expected rank 1 or 2, got shape " + shape_str(x.shape()));
  const std::size_t cols = x.shape().back();
  const std::size_t rows = x.numel() / std::max<std::size_t>(cols, 1);
  if (cols == 0) fail("softmax", "empty reduced axis, shape " + shape_str(x.shape()));
  Tensor out = make(x.shape());
  const double* xv = x.value().data();
  double* ov = out.impl()->value.data();
  for (std::size_t r = 0; r < rows; ++r) {
    const double* row = xv + r * cols;
    double* orow = ov + r * cols;
    double mx = row[0];
    for (std::size_t j = 1; j < cols; ++j) mx = std::max(mx, row[j]);
    double sum = 0.0;
    for (std::size_t j = 0; j < cols; ++j) {
      orow[j] = std::exp(row[j] - mx);
      sum += orow[j];
    }
    for (std::size_t j = 0; j < cols; ++j) orow[j] /= sum;
  }
  auto xi = x.impl_ptr(), oi = out.impl_ptr();
  mark(out, {&x}, [=] {
    for (std::size_t r = 0; r < rows; ++r) {
      const double* y = oi->value.data() + r * cols;
      const double* g = oi->grad.data() + r * cols;
      double* dx = xi->grad.data() + r * cols;
      double dot = 0.0;
      for (std::size_t j = 0; j < cols; ++j) dot += g[j] * y[j];
      for (std::size_t j = 0; j < cols; ++j) dx[j] += y[j] * (g[j] - dot);
    }
  });
  return out;
}

Tensor Tape::layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta) {
  if (x.rank() < 1 || x.rank() > 2)
    fail("layer_norm", "expected rank 1 or 2, got shape " + shape_str(x.shape()));
  const std::size_t cols = x.shape().back();
  if (cols == 0) fail("layer_norm", "empty reduced axis, shape " + shape_str(x.shape()));
  const std::size_t rows = x.numel() / cols;
  if (gamma.rank() != 1 || gamma.numel() != cols || beta.rank() != 1 || beta.numel() != cols)
    fail("layer_norm", "scale/shift shapes " + shape_str(gamma.shape()) + ", " +
                           shape_str(beta.shape()) + " do not match feature width " +
                           std::to_string(cols));
  Tensor out = make(x.shape());
  std::vector<double> xhat(x.numel());
  std::vector<double> inv_std(rows);
  const double* xv = x.value().data();
  const double* gv = gamma.value().data();
  const double* bv = beta.value().data();
  double* ov = out.impl()->value.data();
  for (std::size_t r = 0; r < rows; ++r) {
    const double* row = xv + r * cols;
    double mu = 0.0;
    for (std::size_t j = 0; j < cols; ++j) mu += row[j];
    mu /= static_cast<double>(cols);
    double var = 0.0;
    for (std::size_t j = 0; j < cols; ++j) {
      const double d = row[j] - mu;
      var += d * d;
    }
    var /= static_cast<double>(cols);
    const double r_std = 1.0 / std::sqrt(var + kLayerNormEps);
    inv_std[r] = r_std;
    for (std::size_t j = 0; j < cols; ++j) {
      const double h = (row[j] - mu) * r_std;
      xhat[r * cols + j] = h;
      ov[r * cols + j] = gv[j] * h + bv[j];
    }
  }
  auto xi = x.impl_ptr(), gi = gamma.impl_ptr(), bi = beta.impl_ptr(), oi = out.impl_ptr();
  const bool tx = tracked(x), tg = tracked(gamma), tb = tracked(beta);
  mark(out, {&x, &gamma, &beta},
       [=, xhat = std::move(xhat), inv_std = std::move(inv_std)] {
         for (std::size_t r = 0; r < rows; ++r) {
           const double* g = oi->grad.data() + r * cols;
           const double* h = xhat.data() + r * cols;
           if (tg || tb) {
             for (std::size_t j = 0; j < cols; ++j) {
               if (tg) gi->grad[j] += g[j] * h[j];
               if (tb) bi->grad[j] += g[j];
             }
           }
           if (tx) {
             double mean_dh = 0.0, mean_dh_h = 0.0;
             for (std::size_t j = 0; j < cols; ++j) {
               const double dh = g[j] * gi->value[j];
               mean_dh += dh;
               mean_dh_h += dh * h[j];
             }
             mean_dh /= static_cast<double>(cols);
             mean_dh_h /= static_cast<double>(cols);
             double* dx = xi->grad.data() + r * cols;
             for (std::size_t j = 0; j < cols; ++j) {
               const double dh = g[j] * gi->value[j];
               dx[j] += inv_std[r] * (dh - mean_dh - h[j] * mean_dh_h);
             }
           }
         }
       });
  return out;
}

Tensor Tape::mean(const Tensor& x, std::size_t axis) {
  require_rank2("mean", x);
  if (axis > 1) fail("mean", "axis " + std::to_string(axis) + " out of range for rank 2");
  const std::size_t m = x.rows(), n = x.cols();
  if ((axis == 0 && m == 0) || (axis == 1 && n == 0))
    fail("mean", "empty reduced axis, shape " + shape_str(x.shape()));
  Tensor out = make({axis == 0 ? n : m});
  const double* xv = x.value().data();
  double* ov = out.impl()->value.data();
  if (axis == 0) {
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) ov[j] += xv[i * n + j];
    for (std::size_t j = 0; j < n; ++j) ov[j] /= static_cast<double>(m);
  } else {
    for (std::size_t i = 0; i < m; ++i) {
      double s = 0.0;
      for (std::size_t j = 0; j < n; ++j) s += xv[i * n + j];
      ov[i] = s / static_cast<double>(n);
    }
  }
  auto xi = x.impl_ptr(), oi = out.impl_ptr();
  mark(out, {&x}, [=] {
    if (axis == 0) {
      const double inv = 1.0 / static_cast<double>(m);
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) xi->grad[i * n + j] += oi->grad[j] * inv;
    } else {
      const double inv = 1.0 / static_cast<double>(n);
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) xi->grad[i * n + j] += oi->grad[i] * inv;
    }
  });
  return out;
}

Tensor Tape::mean_all(const Tensor& x) {
  const std::size_t n = x.numel();
  if (n == 0) fail("mean_all", "empty tensor");
  double s = 0.0;
  for (double v : x.value()) s += v;
  Tensor out = Tensor::scalar(s / static_cast<double>(n));
  auto xi = x.impl_ptr(), oi = out.impl_ptr();
  mark(out, {&x}, [=] {
    const double g = oi->grad[0] / static_cast<double>(n);
    for (std::size_t i = 0; i < n; ++i) xi->grad[i] += g;
  });
  return out;
}

Tensor Tape::sum_all(const Tensor& x) {
  double s = 0.0;
  for (double v : x.value()) s += v;
  Tensor out = Tensor::scalar(s);
  auto xi = x.impl_ptr(), oi = out.impl_ptr();
  const std::size_t n = x.numel();
  mark(out, {&x}, [=] {
    for (std::size_t i = 0; i < n; ++i) xi->grad[i] += oi->grad[0];
  });
  return out;
}

// ---------------------------------------------------------------------------
// structure

Tensor Tape::concat(const std::vector<Tensor>& parts, std::size_t axis) {
  if (parts.empty()) fail("concat", "no tensors to concatenate");
  const std::size_t rank = parts[0].rank();
  if (axis >= rank) fail("concat", "axis " + std::to_string(axis) + " out of range");
  std::vector<std::size_t> out_shape = parts[0].shape();
  for (std::size_t p = 1; p < parts.size(); ++p) {
    if (parts[p].rank() != rank)
      fail("concat", "rank mismatch: " + shape_str(parts[0].shape()) + " vs " +
                         shape_str(parts[p].shape()));
    for (std::size_t d = 0; d < rank; ++d)
      if (d != axis && parts[p].shape()[d] != out_shape[d])
        fail("concat", "shapes " + shape_str(parts[0].shape()) + " and " +
                           shape_str(parts[p].shape()) + " differ off the concat axis");
    out_shape[axis] += parts[p].shape()[axis];
  }
  Tensor out = make(out_shape);
  // treat as [outer, axis_dim, inner] blocks
  std::size_t outer = 1, inner = 1;
  for (std::size_t d = 0; d < axis; ++d) outer *= out_shape[d];
  for (std::size_t d = axis + 1; d < rank; ++d) inner *= out_shape[d];
  const std::size_t out_axis = out_shape[axis];
  std::size_t offset = 0;
  std::vector<std::size_t> offsets(parts.size());
  for (std::size_t p = 0; p < parts.size(); ++p) {
    offsets[p] = offset;
    const std::size_t ax = parts[p].shape()[axis];
    const double* src = parts[p].value().data();
    double* dst = out.impl()->value.data();
    for (std::size_t o = 0; o < outer; ++o)
      std::copy(src + o * ax * inner, src + (o + 1) * ax * inner,
                dst + (o * out_axis + offset) * inner);
    offset += ax;
  }
  std::vector<std::shared_ptr<TensorImpl>> impls;
  impls.reserve(parts.size());
  for (const auto& p : parts) impls.push_back(p.impl_ptr());
  bool any = false;
  for (const auto& p : parts) any = any || tracked(p);
  if (any) {
    out.impl()->tracked = true;
    for (const auto& p : parts)
      if (tracked(p)) note(p);
    note(out);
    auto oi = out.impl_ptr();
    std::vector<bool> tr(parts.size());
    for (std::size_t p = 0; p < parts.size(); ++p) tr[p] = tracked(parts[p]);
    std::vector<std::size_t> axes(parts.size());
    for (std::size_t p = 0; p < parts.size(); ++p) axes[p] = parts[p].shape()[axis];
    steps_.push_back([=] {
      for (std::size_t p = 0; p < impls.size(); ++p) {
        if (!tr[p]) continue;
        const std::size_t ax = axes[p];
        double* dst = impls[p]->grad.data();
        const double* g = oi->grad.data();
        for (std::size_t o = 0; o < outer; ++o)
          for (std::size_t i = 0; i < ax * inner; ++i)
            dst[o * ax * inner + i] += g[(o * out_axis + offsets[p]) * inner + i];
      }
    });
  }
  return out;
}

Tensor Tape::scatter_mean(const Tensor& values, const std::vector<std::size_t>& target_index,
                          std::size_t n_targets) {
  require_rank2("scatter_mean", values);
  if (target_index.size() != values.rows())
    fail("scatter_mean", "got " + std::to_string(target_index.size()) + " indices for " +
                             std::to_string(values.rows()) + " value rows");
  if (n_targets == 0) fail("scatter_mean", "n_targets must be positive");
  for (std::size_t t : target_index)
    if (t >= n_targets)
      fail("scatter_mean", "target index " + std::to_string(t) + " out of range for " +
                               std::to_string(n_targets) + " targets");
  const std::size_t d = values.cols();
  Tensor out = make({n_targets, d});
  std::vector<double> count(n_targets, 0.0);
  const double* vv = values.value().data();
  double* ov = out.impl()->value.data();
  for (std::size_t r = 0; r < target_index.size(); ++r) {
    const std::size_t t = target_index[r];
    count[t] += 1.0;
    for (std::size_t j = 0; j < d; ++j) ov[t * d + j] += vv[r * d + j];
  }
  for (std::size_t t = 0; t < n_targets; ++t)
    if (count[t] > 0.0)
      for (std::size_t j = 0; j < d; ++j) ov[t * d + j] /= count[t];
  auto vi = values.impl_ptr(), oi = out.impl_ptr();
  mark(out, {&values}, [=, idx = target_index, count = std::move(count)] {
    for (std::size_t r = 0; r < idx.size(); ++r) {
      const std::size_t t = idx[r];
      const double inv = 1.0 / count[t];
      for (std::size_t j = 0; j < d; ++j) vi->grad[r * d + j] += oi->grad[t * d + j] * inv;
    }
  });
  return out;
}

Tensor Tape::gather_rows(const Tensor& x, const std::vector<std::size_t>& index) {
  require_rank2("gather_rows", x);
  const std::size_t m = x.rows(), d = x.cols();
  for (std::size_t i : index)
    if (i >= m)
      fail("gather_rows",
           "row index " + std::to_string(i) + " out of range for " + std::to_string(m) + " rows");
  Tensor out = make({index.size(), d});
  const double* xv = x.value().data();
  double* ov = out.impl()->value.data();
  for (std::size_t r = 0; r < index.size(); ++r)
    std::copy(xv + index[r] * d, xv + (index[r] + 1) * d, ov + r * d);
  auto xi = x.impl_ptr(), oi = out.impl_ptr();
  mark(out, {&x}, [=, idx = index] {
    for (std::size_t r = 0; r < idx.size(); ++r)
      for (std::size_t j = 0; j < d; ++j) xi->grad[idx[r] * d + j] += oi->grad[r * d + j];
  });
  return out;
}

Tensor Tape::neighbor_mean(const Tensor& x, const std::vector<std::size_t>& src,
                           const std::vector<std::size_t>& dst, std::size_t n_dst) {
  require_rank2("neighbor_mean", x);
  if (src.size() != dst.size())
    fail("neighbor_mean", "src/dst lists differ in length: " + std::to_string(src.size()) +
                              " vs " + std::to_string(dst.size()));
  if (n_dst == 0) fail("neighbor_mean", "n_dst must be positive");
  const std::size_t m = x.rows(), d = x.cols();
  for (std::size_t i : src)
    if (i >= m)
      fail("neighbor_mean",
           "source index " + std::to_string(i) + " out of range for " + std::to_string(m) + " rows");
  for (std::size_t t : dst)
    if (t >= n_dst)
      fail("neighbor_mean", "target index " + std::to_string(t) + " out of range for " +
                                std::to_string(n_dst) + " targets");
  Tensor out = make({n_dst, d});
  std::vector<double> count(n_dst, 0.0);
  const double* xv = x.value().data();
  double* ov = out.impl()->value.data();
  for (std::size_t e = 0; e < src.size(); ++e) {
    const std::size_t t = dst[e];
    count[t] += 1.0;
    const double* row = xv + src[e] * d;
    for (std::size_t j = 0; j < d; ++j) ov[t * d + j] += row[j];
  }
  for (std::size_t t = 0; t < n_dst; ++t)
    if (count[t] > 0.0)
      for (std::size_t j = 0; j < d; ++j) ov[t * d + j] /= count[t];
  auto xi = x.impl_ptr(), oi = out.impl_ptr();
  mark(out, {&x}, [=, s = src, t = dst, count = std::move(count)] {
    for (std::size_t e = 0; e < s.size(); ++e) {
      const double inv = 1.0 / count[t[e]];
      const double* g = oi->grad.data() + t[e] * d;
      double* dx = xi->grad.data() + s[e] * d;
      for (std::size_t j = 0; j < d; ++j) dx[j] += g[j] * inv;
    }
  });
  return out;
}

Tensor Tape::slice_rows(const Tensor& x, std::size_t begin, std::size_t count) {
  require_rank2("slice_rows", x);
  if (begin + count > x.rows())
    fail("slice_rows", "range [" + std::to_string(begin) + ", " + std::to_string(begin + count) +
                           ") out of bounds for " + std::to_string(x.rows()) + " rows");
  const std::size_t d = x.cols();
  Tensor out = make({count, d});
  const double* xv = x.value().data();
  std::copy(xv + begin * d, xv + (begin + count) * d, out.impl()->value.data());
  auto xi = x.impl_ptr(), oi = out.impl_ptr();
  mark(out, {&x}, [=] {
    for (std::size_t i = 0; i < count * d; ++i) xi->grad[begin * d + i] += oi->grad[i];
  });
  return out;
}

Tensor Tape::slice_cols(const Tensor& x, std::size_t begin, std::size_t count) {
  require_rank2("slice_cols", x);
  if (begin + count > x.cols())
    fail("slice_cols", "range [" + std::to_string(begin) + ", " + std::to_string(begin + count) +
                           ") out of bounds for " + std::to_string(x.cols()) + " columns");
  const std::size_t m = x.rows(), d = x.cols();
  Tensor out = make({m, count});
  const double* xv = x.value().data();
  double* ov = out.impl()->value.data();
  for (std::size_t i = 0; i < m; ++i)
    std::copy(xv + i * d + begin, xv + i * d + begin + count, ov + i * count);
  auto xi = x.impl_ptr(), oi = out.impl_ptr();
  mark(out, {&x}, [=] {
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < count; ++j)
        xi->grad[i * d + begin + j] += oi->grad[i * count + j];
  });
  return out;
}

Tensor Tape::reshape(const Tensor& x, std::vector<std::size_t> shape) {
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  if (shape.empty() || n != x.numel())
    fail("reshape", "cannot reshape " + shape_str(x.shape()) + " to " + shape_str(shape));
  Tensor out = Tensor::from(std::move(shape), x.value());
  auto xi = x.impl_ptr(), oi = out.impl_ptr();
  mark(out, {&x}, [=] {
    for (std::size_t i = 0; i < n; ++i) xi->grad[i] += oi->grad[i];
  });
  return out;
}

Tensor Tape::pick(const Tensor& x, std::size_t index) {
  if (index >= x.numel())
    fail("pick", "index " + std::to_string(index) + " out of range for " +
                     std::to_string(x.numel()) + " entries");
  Tensor out = Tensor::scalar(x.value()[index]);
  auto xi = x.impl_ptr(), oi = out.impl_ptr();
  mark(out, {&x}, [=] { xi->grad[index] += oi->grad[0]; });
  return out;
}

// ---------------------------------------------------------------------------
// finite differences

FdReport finite_diff_check(const std::function<Tensor(Tape&)>& f,
                           const std::vector<Tensor>& params, double eps,
                           std::size_t max_entries_per_param) {
  if (!(eps > 0.0)) throw std::invalid_argument("finite_diff_check: eps must be positive");
  GradTable table;
  {
    Tape tape;
    Tensor loss = f(tape);
    table = tape.backward(loss);
  }
  auto eval = [&]() {
    Tape tape;
    return f(tape).item();
  };
  FdReport report;
  for (const Tensor& p : params) {
    const std::size_t n = p.numel();
    const std::vector<double> analytic = table.get(p);
    std::vector<std::size_t> entries;
    if (max_entries_per_param == 0 || n <= max_entries_per_param) {
      entries.resize(n);
      for (std::size_t i = 0; i < n; ++i) entries[i] = i;
    } else {
      entries.reserve(max_entries_per_param);
      for (std::size_t t = 0; t < max_entries_per_param; ++t)
        entries.push_back(t * n / max_entries_per_param);
    }
    std::vector<double>& v = p.mutable_value();
    for (std::size_t idx : entries) {
      const double saved = v[idx];
      v[idx] = saved + eps;
      const double up = eval();
      v[idx] = saved - eps;
      const double down = eval();
      v[idx] = saved;
      if (!std::isfinite(up) || !std::isfinite(down))
        throw std::runtime_error("finite_diff_check: non-finite loss perturbing " +
                                 (p.name().empty() ? std::string("<unnamed>") : p.name()) + "[" +
                                 std::to_string(idx) + "]");
      const double fd = (up - down) / (2.0 * eps);
      const double ga = analytic[idx];
      const double rel = std::abs(ga - fd) / std::max(1e-8, std::abs(ga) + std::abs(fd));
      ++report.entries_checked;
      if (rel > report.max_rel_err) {
        report.max_rel_err = rel;
        report.worst_param = p.name();
        report.worst_index = idx;
      }
    }
  }
  return report;
}

}  // namespace hgg
