#include "irf/tensor.hpp"

#include <cblas.h>

#include <algorithm>
#include <cstring>
#include <sstream>

extern "C" void openblas_set_num_threads(int);

namespace irf {

namespace {

// Batch-item/chain level parallelism owns the cores; nested BLAS threading
// would also break run-to-run determinism.
struct BlasSingleThreadInit {
  BlasSingleThreadInit() { openblas_set_num_threads(1); }
};
const BlasSingleThreadInit blas_init;

void gemm(bool trans_a, bool trans_b, int m, int n, int k, float alpha, const float* a, int lda,
          const float* b, int ldb, float beta, float* c, int ldc) {
  cblas_sgemm(CblasRowMajor, trans_a ? CblasTrans : CblasNoTrans, trans_b ? CblasTrans : CblasNoTrans,
              m, n, k, alpha, a, lda, b, ldb, beta, c, ldc);
}
void gemm(bool trans_a, bool trans_b, int m, int n, int k, double alpha, const double* a, int lda,
          const double* b, int ldb, double beta, double* c, int ldc) {
  cblas_dgemm(CblasRowMajor, trans_a ? CblasTrans : CblasNoTrans, trans_b ? CblasTrans : CblasNoTrans,
              m, n, k, alpha, a, lda, b, ldb, beta, c, ldc);
}

template <typename T>
std::shared_ptr<std::vector<T>> alloc(int64_t n) {
  return std::make_shared<std::vector<T>>(n);
}

[[noreturn]] void shape_error(const std::string& op, const std::vector<int>& a, const std::vector<int>& b) {
  throw std::invalid_argument(op + ": incompatible shapes " + shape_str(a) + " and " + shape_str(b));
}

struct ConvDims {
  int cin, h, w, cout, kh, kw, ph, pw, ho, wo;
  int64_t k() const { return int64_t(cin) * kh * kw; }
  int64_t n() const { return int64_t(ho) * wo; }
};

template <typename T>
ConvDims conv_dims(const Tensor<T>& input, const Tensor<T>& kernel, Pad pad) {
  if (input.shape.size() != 3 || kernel.shape.size() != 4)
    shape_error("conv2d", input.shape, kernel.shape);
  ConvDims d{};
  d.cin = input.shape[0];
  d.h = input.shape[1];
  d.w = input.shape[2];
  d.cout = kernel.shape[0];
  d.kh = kernel.shape[2];
  d.kw = kernel.shape[3];
  if (kernel.shape[1] != d.cin)
    throw std::invalid_argument("conv2d: kernel expects " + std::to_string(kernel.shape[1]) +
                                " input channels, input has " + std::to_string(d.cin) +
                                " (input " + shape_str(input.shape) + ", kernel " + shape_str(kernel.shape) + ")");
  if (pad == Pad::same) {
    if (d.kh % 2 == 0 || d.kw % 2 == 0)
      throw std::invalid_argument("conv2d: same-padding requires odd kernel extents, got " + shape_str(kernel.shape));
    d.ph = d.kh / 2;
    d.pw = d.kw / 2;
    d.ho = d.h;
    d.wo = d.w;
  } else {
    d.ph = d.pw = 0;
    d.ho = d.h - d.kh + 1;
    d.wo = d.w - d.kw + 1;
    if (d.ho < 1 || d.wo < 1) shape_error("conv2d(valid)", input.shape, kernel.shape);
  }
  return d;
}

template <typename T>
void im2col(const T* in, const ConvDims& d, std::vector<T>& col) {
  col.assign(d.k() * d.n(), T(0));
  for (int ci = 0; ci < d.cin; ++ci) {
    for (int ky = 0; ky < d.kh; ++ky) {
      for (int kx = 0; kx < d.kw; ++kx) {
        T* row = col.data() + ((int64_t(ci) * d.kh + ky) * d.kw + kx) * d.n();
        for (int oy = 0; oy < d.ho; ++oy) {
          int iy = oy + ky - d.ph;
          if (iy < 0 || iy >= d.h) continue;
          const T* src = in + (int64_t(ci) * d.h + iy) * d.w;
          for (int ox = 0; ox < d.wo; ++ox) {
            int ix = ox + kx - d.pw;
            if (ix >= 0 && ix < d.w) row[int64_t(oy) * d.wo + ox] = src[ix];
          }
        }
      }
    }
  }
}

template <typename T>
void col2im_add(const std::vector<T>& col, const ConvDims& d, T* din) {
  for (int ci = 0; ci < d.cin; ++ci) {
    for (int ky = 0; ky < d.kh; ++ky) {
      for (int kx = 0; kx < d.kw; ++kx) {
        const T* row = col.data() + ((int64_t(ci) * d.kh + ky) * d.kw + kx) * d.n();
        for (int oy = 0; oy < d.ho; ++oy) {
          int iy = oy + ky - d.ph;
          if (iy < 0 || iy >= d.h) continue;
          T* dst = din + (int64_t(ci) * d.h + iy) * d.w;
          for (int ox = 0; ox < d.wo; ++ox) {
            int ix = ox + kx - d.pw;
            if (ix >= 0 && ix < d.w) dst[ix] += row[int64_t(oy) * d.wo + ox];
          }
        }
      }
    }
  }
}

}  // namespace

std::string shape_str(const std::vector<int>& shape) {
  std::ostringstream os;
  os << "[";
  for (size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << "]";
  return os.str();
}

// ---------------------------------------------------------------- Tensor ---

template <typename T>
T Tensor<T>::scalar_value() const {
  if (numel() != 1)
    throw std::invalid_argument("scalar_value: tensor has shape " + shape_str(shape));
  return (*data)[0];
}

template <typename T>
Tensor<T> Tensor<T>::zeros(std::vector<int> shape) {
  Tensor t;
  t.shape = std::move(shape);
  t.data = alloc<T>(t.numel());
  return t;
}

template <typename T>
Tensor<T> Tensor<T>::full(std::vector<int> shape, T value) {
  Tensor t = zeros(std::move(shape));
  std::fill(t.data->begin(), t.data->end(), value);
  return t;
}

template <typename T>
Tensor<T> Tensor<T>::from_vector(std::vector<int> shape, std::vector<T> values) {
  Tensor t;
  t.shape = std::move(shape);
  if (int64_t(values.size()) != t.numel())
    throw std::invalid_argument("from_vector: " + std::to_string(values.size()) +
                                " values for shape " + shape_str(t.shape));
  t.data = std::make_shared<std::vector<T>>(std::move(values));
  return t;
}

template <typename T>
Tensor<T> Tensor<T>::scalar(T value) {
  return full({1}, value);
}

template <typename T>
Tensor<T> Tensor<T>::randn(std::vector<int> shape, Rng& rng) {
  Tensor t = zeros(std::move(shape));
  for (auto& v : *t.data) v = static_cast<T>(rng.normal());
  return t;
}

// ---------------------------------------------------------- GradientTape ---

template <typename T>
static thread_local GradientTape<T>* tl_tape = nullptr;

template <typename T>
GradientTape<T>::GradientTape() {
  if (tl_tape<T>) throw std::logic_error("GradientTape: a tape is already active on this thread");
  tl_tape<T> = this;
}

template <typename T>
GradientTape<T>::~GradientTape() {
  tl_tape<T> = nullptr;
}

template <typename T>
GradientTape<T>* GradientTape<T>::current() {
  return tl_tape<T>;
}

template <typename T>
int GradientTape<T>::lookup(const Tensor<T>& t) const {
  auto it = index_.find(t.data.get());
  return it == index_.end() ? -1 : it->second;
}

template <typename T>
int GradientTape<T>::node_of(const Tensor<T>& t) {
  int id = lookup(t);
  if (id >= 0) return id;
  if (!t.requires_grad) return -1;
  Node node;
  node.numel = t.numel();
  nodes_.push_back(std::move(node));
  id = int(nodes_.size()) - 1;
  index_.emplace(t.data.get(), id);
  return id;
}

template <typename T>
int GradientTape<T>::record(const Tensor<T>& out, std::vector<int> parents, BackwardFn fn) {
  Node node;
  node.parents = std::move(parents);
  node.backprop = std::move(fn);
  node.numel = out.numel();
  nodes_.push_back(std::move(node));
  int id = int(nodes_.size()) - 1;
  index_.emplace(out.data.get(), id);
  return id;
}

template <typename T>
std::vector<T>& GradientTape<T>::grad_buffer(int node) {
  auto& n = nodes_[node];
  if (n.grad.empty()) n.grad.assign(n.numel, T(0));
  return n.grad;
}

template <typename T>
void GradientTape<T>::backward(const Tensor<T>& loss) {
  int id = lookup(loss);
  if (id < 0) throw std::invalid_argument("backward: loss tensor is not on the tape");
  if (loss.numel() != 1)
    throw std::invalid_argument("backward: loss must be scalar, has shape " + shape_str(loss.shape));
  grad_buffer(id)[0] += T(1);
  for (int i = int(nodes_.size()) - 1; i >= 0; --i) {
    if (nodes_[i].backprop && !nodes_[i].grad.empty()) nodes_[i].backprop(*this, i);
  }
  // Leaves that never influenced the loss still expose a zero gradient.
  for (auto& n : nodes_) {
    if (!n.backprop && n.grad.empty()) n.grad.assign(n.numel, T(0));
  }
}

template <typename T>
const std::vector<T>* GradientTape<T>::grad(const Tensor<T>& t) const {
  int id = lookup(t);
  if (id < 0 || nodes_[id].grad.empty()) return nullptr;
  return &nodes_[id].grad;
}

// ------------------------------------------------------------ primitives ---

namespace {

template <typename T, typename Fwd, typename Bwd>
Tensor<T> unary_op(const Tensor<T>& x, Fwd fwd, Bwd make_backward) {
  Tensor<T> out;
  out.shape = x.shape;
  out.data = alloc<T>(x.numel());
  fwd(x.ptr(), out.data->data(), x.numel());
  out.requires_grad = x.requires_grad;
  auto* tape = GradientTape<T>::current();
  if (tape && out.requires_grad) {
    int px = tape->node_of(x);
    if (px >= 0) tape->record(out, {px}, make_backward(px));
  }
  return out;
}

}  // namespace

template <typename T>
Tensor<T> elementwise(EwOp op, const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape != b.shape) shape_error("elementwise", a.shape, b.shape);
  int64_t n = a.numel();
  Tensor<T> out;
  out.shape = a.shape;
  out.data = alloc<T>(n);
  const T* pa = a.ptr();
  const T* pb = b.ptr();
  T* po = out.data->data();
  switch (op) {
    case EwOp::add: for (int64_t i = 0; i < n; ++i) po[i] = pa[i] + pb[i]; break;
    case EwOp::sub: for (int64_t i = 0; i < n; ++i) po[i] = pa[i] - pb[i]; break;
    case EwOp::mul: for (int64_t i = 0; i < n; ++i) po[i] = pa[i] * pb[i]; break;
    case EwOp::div: for (int64_t i = 0; i < n; ++i) po[i] = pa[i] / pb[i]; break;
  }
  out.requires_grad = a.requires_grad || b.requires_grad;
  auto* tape = GradientTape<T>::current();
  if (tape && out.requires_grad) {
    int ia = tape->node_of(a), ib = tape->node_of(b);
    auto da = a.data, db = b.data;
    tape->record(out, {ia, ib}, [op, ia, ib, da, db, n](GradientTape<T>& tp, int self) {
      const auto& g = tp.grad_buffer(self);
      const T* pa = da->data();
      const T* pb = db->data();
      if (ia >= 0) {
        auto& ga = tp.grad_buffer(ia);
        switch (op) {
          case EwOp::add:
          case EwOp::sub: for (int64_t i = 0; i < n; ++i) ga[i] += g[i]; break;
          case EwOp::mul: for (int64_t i = 0; i < n; ++i) ga[i] += g[i] * pb[i]; break;
          case EwOp::div: for (int64_t i = 0; i < n; ++i) ga[i] += g[i] / pb[i]; break;
        }
      }
      if (ib >= 0) {
        auto& gb = tp.grad_buffer(ib);
        switch (op) {
          case EwOp::add: for (int64_t i = 0; i < n; ++i) gb[i] += g[i]; break;
          case EwOp::sub: for (int64_t i = 0; i < n; ++i) gb[i] -= g[i]; break;
          case EwOp::mul: for (int64_t i = 0; i < n; ++i) gb[i] += g[i] * pa[i]; break;
          case EwOp::div: for (int64_t i = 0; i < n; ++i) gb[i] -= g[i] * pa[i] / (pb[i] * pb[i]); break;
        }
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> elementwise(EwOp op, const Tensor<T>& a, T b) {
  int64_t n = a.numel();
  Tensor<T> out;
  out.shape = a.shape;
  out.data = alloc<T>(n);
  const T* pa = a.ptr();
  T* po = out.data->data();
  switch (op) {
    case EwOp::add: for (int64_t i = 0; i < n; ++i) po[i] = pa[i] + b; break;
    case EwOp::sub: for (int64_t i = 0; i < n; ++i) po[i] = pa[i] - b; break;
    case EwOp::mul: for (int64_t i = 0; i < n; ++i) po[i] = pa[i] * b; break;
    case EwOp::div: for (int64_t i = 0; i < n; ++i) po[i] = pa[i] / b; break;
  }
  out.requires_grad = a.requires_grad;
  auto* tape = GradientTape<T>::current();
  if (tape && out.requires_grad) {
    int ia = tape->node_of(a);
    if (ia >= 0) {
      tape->record(out, {ia}, [op, ia, b, n](GradientTape<T>& tp, int self) {
        const auto& g = tp.grad_buffer(self);
        auto& ga = tp.grad_buffer(ia);
        switch (op) {
          case EwOp::add:
          case EwOp::sub: for (int64_t i = 0; i < n; ++i) ga[i] += g[i]; break;
          case EwOp::mul: for (int64_t i = 0; i < n; ++i) ga[i] += g[i] * b; break;
          case EwOp::div: for (int64_t i = 0; i < n; ++i) ga[i] += g[i] / b; break;
        }
      });
    }
  }
  return out;
}

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape.size() != 2 || b.shape.size() != 2 || a.shape[1] != b.shape[0])
    shape_error("matmul", a.shape, b.shape);
  int m = a.shape[0], k = a.shape[1], n = b.shape[1];
  Tensor<T> out;
  out.shape = {m, n};
  out.data = alloc<T>(int64_t(m) * n);
  gemm(false, false, m, n, k, T(1), a.ptr(), k, b.ptr(), n, T(0), out.data->data(), n);
  out.requires_grad = a.requires_grad || b.requires_grad;
  auto* tape = GradientTape<T>::current();
  if (tape && out.requires_grad) {
    int ia = tape->node_of(a), ib = tape->node_of(b);
    auto da = a.data, db = b.data;
    tape->record(out, {ia, ib}, [ia, ib, da, db, m, k, n](GradientTape<T>& tp, int self) {
      const auto& g = tp.grad_buffer(self);
      if (ia >= 0) {  // dA += G · Bᵀ
        auto& ga = tp.grad_buffer(ia);
        gemm(false, true, m, k, n, T(1), g.data(), n, db->data(), n, T(1), ga.data(), k);
      }
      if (ib >= 0) {  // dB += Aᵀ · G
        auto& gb = tp.grad_buffer(ib);
        gemm(true, false, k, n, m, T(1), da->data(), k, g.data(), n, T(1), gb.data(), n);
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> conv2d(const Tensor<T>& input, const Tensor<T>& kernel, Pad pad) {
  ConvDims d = conv_dims(input, kernel, pad);
  static thread_local std::vector<T> col;
  im2col(input.ptr(), d, col);
  Tensor<T> out;
  out.shape = {d.cout, d.ho, d.wo};
  out.data = alloc<T>(int64_t(d.cout) * d.n());
  gemm(false, false, d.cout, int(d.n()), int(d.k()), T(1), kernel.ptr(), int(d.k()), col.data(),
       int(d.n()), T(0), out.data->data(), int(d.n()));
  out.requires_grad = input.requires_grad || kernel.requires_grad;
  auto* tape = GradientTape<T>::current();
  if (tape && out.requires_grad) {
    int ii = tape->node_of(input), ik = tape->node_of(kernel);
    auto din = input.data;
    auto dker = kernel.data;
    tape->record(out, {ii, ik}, [ii, ik, din, dker, d](GradientTape<T>& tp, int self) {
      const auto& g = tp.grad_buffer(self);
      static thread_local std::vector<T> bcol;
      if (ik >= 0) {  // dW += G · colᵀ  (col rebuilt from the saved input)
        im2col(din->data(), d, bcol);
        auto& gk = tp.grad_buffer(ik);
        gemm(false, true, d.cout, int(d.k()), int(d.n()), T(1), g.data(), int(d.n()), bcol.data(),
             int(d.n()), T(1), gk.data(), int(d.k()));
      }
      if (ii >= 0) {  // dcol = Wᵀ · G, then scatter back
        static thread_local std::vector<T> dcol;
        dcol.assign(d.k() * d.n(), T(0));
        gemm(true, false, int(d.k()), int(d.n()), d.cout, T(1), dker->data(), int(d.k()), g.data(),
             int(d.n()), T(0), dcol.data(), int(d.n()));
        auto& gi = tp.grad_buffer(ii);
        col2im_add(dcol, d, gi.data());
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> activation(ActKind kind, const Tensor<T>& x) {
  auto xd = x.data;
  int64_t n = x.numel();
  if (kind == ActKind::relu) {
    return unary_op(
        x,
        [](const T* in, T* out, int64_t m) {
          for (int64_t i = 0; i < m; ++i) out[i] = in[i] > T(0) ? in[i] : T(0);
        },
        [xd, n](int px) {
          return [px, xd, n](GradientTape<T>& tp, int self) {
            const auto& g = tp.grad_buffer(self);
            auto& gx = tp.grad_buffer(px);
            const T* p = xd->data();
            for (int64_t i = 0; i < n; ++i)
              if (p[i] > T(0)) gx[i] += g[i];
          };
        });
  }
  return unary_op(
      x,
      [](const T* in, T* out, int64_t m) {
        for (int64_t i = 0; i < m; ++i) {
          T s = T(1) / (T(1) + std::exp(-in[i]));
          out[i] = in[i] * s;
        }
      },
      [xd, n](int px) {
        return [px, xd, n](GradientTape<T>& tp, int self) {
          const auto& g = tp.grad_buffer(self);
          auto& gx = tp.grad_buffer(px);
          const T* p = xd->data();
          for (int64_t i = 0; i < n; ++i) {
            T s = T(1) / (T(1) + std::exp(-p[i]));
            gx[i] += g[i] * s * (T(1) + p[i] * (T(1) - s));
          }
        };
      });
}

template <typename T>
Tensor<T> group_norm(const Tensor<T>& x, int groups, double eps) {
  if (x.shape.size() != 3)
    throw std::invalid_argument("group_norm: expected [C,H,W], got " + shape_str(x.shape));
  if (eps <= 0) throw std::invalid_argument("group_norm: eps must be > 0");
  int c = x.shape[0];
  if (groups < 1 || c % groups != 0)
    throw std::invalid_argument("group_norm: " + std::to_string(c) + " channels not divisible by " +
                                std::to_string(groups) + " groups");
  int64_t hw = int64_t(x.shape[1]) * x.shape[2];
  int64_t per = (c / groups) * hw;
  Tensor<T> out;
  out.shape = x.shape;
  out.data = alloc<T>(x.numel());
  auto stats = std::make_shared<std::vector<T>>(2 * groups);  // mean, inv_std per group
  const T* p = x.ptr();
  T* po = out.data->data();
  for (int gidx = 0; gidx < groups; ++gidx) {
    const T* s = p + gidx * per;
    double mean = 0;
    for (int64_t i = 0; i < per; ++i) mean += s[i];
    mean /= double(per);
    double var = 0;
    for (int64_t i = 0; i < per; ++i) {
      double dlt = s[i] - mean;
      var += dlt * dlt;
    }
    var /= double(per);
    double inv = 1.0 / std::sqrt(var + eps);
    (*stats)[2 * gidx] = T(mean);
    (*stats)[2 * gidx + 1] = T(inv);
    T* o = po + gidx * per;
    for (int64_t i = 0; i < per; ++i) o[i] = T((s[i] - mean) * inv);
  }
  out.requires_grad = x.requires_grad;
  auto* tape = GradientTape<T>::current();
  if (tape && out.requires_grad) {
    int px = tape->node_of(x);
    if (px >= 0) {
      auto xd = x.data;
      tape->record(out, {px}, [px, xd, stats, groups, per](GradientTape<T>& tp, int self) {
        const auto& g = tp.grad_buffer(self);
        auto& gx = tp.grad_buffer(px);
        const T* p = xd->data();
        for (int gidx = 0; gidx < groups; ++gidx) {
          T mean = (*stats)[2 * gidx];
          T inv = (*stats)[2 * gidx + 1];
          const T* gs = g.data() + gidx * per;
          const T* xs = p + gidx * per;
          double sum_g = 0, sum_gy = 0;
          for (int64_t i = 0; i < per; ++i) {
            double y = (xs[i] - mean) * inv;
            sum_g += gs[i];
            sum_gy += gs[i] * y;
          }
          double mg = sum_g / double(per), mgy = sum_gy / double(per);
          T* out_g = gx.data() + gidx * per;
          for (int64_t i = 0; i < per; ++i) {
            double y = (xs[i] - mean) * inv;
            out_g[i] += T(inv * (gs[i] - mg - y * mgy));
          }
        }
      });
    }
  }
  return out;
}

template <typename T>
Tensor<T> scale_channel(const Tensor<T>& x, const Tensor<T>& scale) {
  if (x.shape.size() != 3 || scale.numel() != x.shape[0]) shape_error("scale_channel", x.shape, scale.shape);
  int c = x.shape[0];
  int64_t hw = int64_t(x.shape[1]) * x.shape[2];
  Tensor<T> out;
  out.shape = x.shape;
  out.data = alloc<T>(x.numel());
  const T* p = x.ptr();
  const T* ps = scale.ptr();
  T* po = out.data->data();
  for (int ci = 0; ci < c; ++ci)
    for (int64_t i = 0; i < hw; ++i) po[ci * hw + i] = p[ci * hw + i] * ps[ci];
  out.requires_grad = x.requires_grad || scale.requires_grad;
  auto* tape = GradientTape<T>::current();
  if (tape && out.requires_grad) {
    int px = tape->node_of(x), psn = tape->node_of(scale);
    auto xd = x.data, sd = scale.data;
    tape->record(out, {px, psn}, [px, psn, xd, sd, c, hw](GradientTape<T>& tp, int self) {
      const auto& g = tp.grad_buffer(self);
      if (px >= 0) {
        auto& gx = tp.grad_buffer(px);
        const T* ps = sd->data();
        for (int ci = 0; ci < c; ++ci)
          for (int64_t i = 0; i < hw; ++i) gx[ci * hw + i] += g[ci * hw + i] * ps[ci];
      }
      if (psn >= 0) {
        auto& gs = tp.grad_buffer(psn);
        const T* p = xd->data();
        for (int ci = 0; ci < c; ++ci) {
          double acc = 0;
          for (int64_t i = 0; i < hw; ++i) acc += g[ci * hw + i] * p[ci * hw + i];
          gs[ci] += T(acc);
        }
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> bias_add_channel(const Tensor<T>& x, const Tensor<T>& bias) {
  if (x.shape.size() != 3 || bias.numel() != x.shape[0]) shape_error("bias_add_channel", x.shape, bias.shape);
  int c = x.shape[0];
  int64_t hw = int64_t(x.shape[1]) * x.shape[2];
  Tensor<T> out;
  out.shape = x.shape;
  out.data = alloc<T>(x.numel());
  const T* p = x.ptr();
  const T* pb = bias.ptr();
  T* po = out.data->data();
  for (int ci = 0; ci < c; ++ci)
    for (int64_t i = 0; i < hw; ++i) po[ci * hw + i] = p[ci * hw + i] + pb[ci];
  out.requires_grad = x.requires_grad || bias.requires_grad;
  auto* tape = GradientTape<T>::current();
  if (tape && out.requires_grad) {
    int px = tape->node_of(x), pbn = tape->node_of(bias);
    tape->record(out, {px, pbn}, [px, pbn, c, hw](GradientTape<T>& tp, int self) {
      const auto& g = tp.grad_buffer(self);
      if (px >= 0) {
        auto& gx = tp.grad_buffer(px);
        for (int64_t i = 0; i < int64_t(c) * hw; ++i) gx[i] += g[i];
      }
      if (pbn >= 0) {
        auto& gb = tp.grad_buffer(pbn);
        for (int ci = 0; ci < c; ++ci) {
          double acc = 0;
          for (int64_t i = 0; i < hw; ++i) acc += g[ci * hw + i];
          gb[ci] += T(acc);
        }
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> resample2x(const Tensor<T>& x, Resample dir) {
  if (x.shape.size() != 3)
    throw std::invalid_argument("resample2x: expected [C,H,W], got " + shape_str(x.shape));
  int c = x.shape[0], h = x.shape[1], w = x.shape[2];
  Tensor<T> out;
  if (dir == Resample::up) {
    out.shape = {c, 2 * h, 2 * w};
    out.data = alloc<T>(out.numel());
    const T* p = x.ptr();
    T* po = out.data->data();
    for (int ci = 0; ci < c; ++ci)
      for (int y = 0; y < 2 * h; ++y)
        for (int xx = 0; xx < 2 * w; ++xx)
          po[(int64_t(ci) * 2 * h + y) * 2 * w + xx] = p[(int64_t(ci) * h + y / 2) * w + xx / 2];
  } else {
    if (h % 2 || w % 2)
      throw std::invalid_argument("resample2x(down): H,W must be even, got " + shape_str(x.shape));
    out.shape = {c, h / 2, w / 2};
    out.data = alloc<T>(out.numel());
    const T* p = x.ptr();
    T* po = out.data->data();
    for (int ci = 0; ci < c; ++ci)
      for (int y = 0; y < h / 2; ++y)
        for (int xx = 0; xx < w / 2; ++xx) {
          const T* b = p + (int64_t(ci) * h + 2 * y) * w + 2 * xx;
          po[(int64_t(ci) * (h / 2) + y) * (w / 2) + xx] = (b[0] + b[1] + b[w] + b[w + 1]) * T(0.25);
        }
  }
  out.requires_grad = x.requires_grad;
  auto* tape = GradientTape<T>::current();
  if (tape && out.requires_grad) {
    int px = tape->node_of(x);
    if (px >= 0) {
      tape->record(out, {px}, [px, dir, c, h, w](GradientTape<T>& tp, int self) {
        const auto& g = tp.grad_buffer(self);
        auto& gx = tp.grad_buffer(px);
        if (dir == Resample::up) {
          for (int ci = 0; ci < c; ++ci)
            for (int y = 0; y < 2 * h; ++y)
              for (int xx = 0; xx < 2 * w; ++xx)
                gx[(int64_t(ci) * h + y / 2) * w + xx / 2] += g[(int64_t(ci) * 2 * h + y) * 2 * w + xx];
        } else {
          for (int ci = 0; ci < c; ++ci)
            for (int y = 0; y < h / 2; ++y)
              for (int xx = 0; xx < w / 2; ++xx) {
                T quarter = g[(int64_t(ci) * (h / 2) + y) * (w / 2) + xx] * T(0.25);
                T* b = gx.data() + (int64_t(ci) * h + 2 * y) * w + 2 * xx;
                b[0] += quarter;
                b[1] += quarter;
                b[w] += quarter;
                b[w + 1] += quarter;
              }
        }
      });
    }
  }
  return out;
}

template <typename T>
Tensor<T> concat_channels(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape.size() != 3 || b.shape.size() != 3 || a.shape[1] != b.shape[1] || a.shape[2] != b.shape[2])
    shape_error("concat_channels", a.shape, b.shape);
  int ca = a.shape[0], cb = b.shape[0];
  int64_t hw = int64_t(a.shape[1]) * a.shape[2];
  Tensor<T> out;
  out.shape = {ca + cb, a.shape[1], a.shape[2]};
  out.data = alloc<T>(out.numel());
  std::memcpy(out.data->data(), a.ptr(), sizeof(T) * ca * hw);
  std::memcpy(out.data->data() + ca * hw, b.ptr(), sizeof(T) * cb * hw);
  out.requires_grad = a.requires_grad || b.requires_grad;
  auto* tape = GradientTape<T>::current();
  if (tape && out.requires_grad) {
    int ia = tape->node_of(a), ib = tape->node_of(b);
    tape->record(out, {ia, ib}, [ia, ib, ca, cb, hw](GradientTape<T>& tp, int self) {
      const auto& g = tp.grad_buffer(self);
      if (ia >= 0) {
        auto& ga = tp.grad_buffer(ia);
        for (int64_t i = 0; i < ca * hw; ++i) ga[i] += g[i];
      }
      if (ib >= 0) {
        auto& gb = tp.grad_buffer(ib);
        for (int64_t i = 0; i < cb * hw; ++i) gb[i] += g[ca * hw + i];
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> dropout(const Tensor<T>& x, double rate, Rng& rng) {
  if (rate < 0 || rate >= 1) throw std::invalid_argument("dropout: rate must be in [0,1)");
  if (rate == 0) return x;
  int64_t n = x.numel();
  auto mask = std::make_shared<std::vector<uint8_t>>(n);
  for (int64_t i = 0; i < n; ++i) (*mask)[i] = rng.uniform() >= rate ? 1 : 0;
  T scale = T(1.0 / (1.0 - rate));
  Tensor<T> out;
  out.shape = x.shape;
  out.data = alloc<T>(n);
  const T* p = x.ptr();
  T* po = out.data->data();
  for (int64_t i = 0; i < n; ++i) po[i] = (*mask)[i] ? p[i] * scale : T(0);
  out.requires_grad = x.requires_grad;
  auto* tape = GradientTape<T>::current();
  if (tape && out.requires_grad) {
    int px = tape->node_of(x);
    if (px >= 0) {
      tape->record(out, {px}, [px, mask, scale, n](GradientTape<T>& tp, int self) {
        const auto& g = tp.grad_buffer(self);
        auto& gx = tp.grad_buffer(px);
        for (int64_t i = 0; i < n; ++i)
          if ((*mask)[i]) gx[i] += g[i] * scale;
      });
    }
  }
  return out;
}

template <typename T>
Tensor<T> sum_all(const Tensor<T>& x) {
  int64_t n = x.numel();
  double acc = 0;
  const T* p = x.ptr();
  for (int64_t i = 0; i < n; ++i) acc += p[i];
  Tensor<T> out = Tensor<T>::scalar(T(acc));
  out.requires_grad = x.requires_grad;
  auto* tape = GradientTape<T>::current();
  if (tape && out.requires_grad) {
    int px = tape->node_of(x);
    if (px >= 0) {
      tape->record(out, {px}, [px, n](GradientTape<T>& tp, int self) {
        T g = tp.grad_buffer(self)[0];
        auto& gx = tp.grad_buffer(px);
        for (int64_t i = 0; i < n; ++i) gx[i] += g;
      });
    }
  }
  return out;
}

template <typename T>
Tensor<T> mean_all(const Tensor<T>& x) {
  return elementwise(EwOp::div, sum_all(x), T(x.numel()));
}

template <typename T>
Tensor<T> abs_all(const Tensor<T>& x) {
  auto xd = x.data;
  int64_t n = x.numel();
  return unary_op(
      x,
      [](const T* in, T* out, int64_t m) {
        for (int64_t i = 0; i < m; ++i) out[i] = std::abs(in[i]);
      },
      [xd, n](int px) {
        return [px, xd, n](GradientTape<T>& tp, int self) {
          const auto& g = tp.grad_buffer(self);
          auto& gx = tp.grad_buffer(px);
          const T* p = xd->data();
          for (int64_t i = 0; i < n; ++i) {
            if (p[i] > T(0)) gx[i] += g[i];
            else if (p[i] < T(0)) gx[i] -= g[i];
          }
        };
      });
}

template <typename T>
bool all_finite(const Tensor<T>& x) {
  const T* p = x.ptr();
  int64_t n = x.numel();
  for (int64_t i = 0; i < n; ++i)
    if (!std::isfinite(double(p[i]))) return false;
  return true;
}

template <typename T>
void check_finite(const Tensor<T>& x, const std::string& what) {
  if (!all_finite(x)) throw NumericError("non-finite values in " + what);
}

double grad_check(const std::function<Tensor<double>(const std::vector<Tensor<double>>&)>& f,
                  std::vector<Tensor<double>> point, double h) {
  if (!(h > 0 && h <= 1e-2)) throw std::invalid_argument("grad_check: h must be in (0, 1e-2]");
  for (auto& t : point) t.requires_grad = true;
  std::vector<std::vector<double>> analytic;
  {
    GradientTape<double> tape;
    Tensor<double> loss = f(point);
    check_finite(loss, "grad_check loss");
    tape.backward(loss);
    for (auto& t : point) {
      const auto* g = tape.grad(t);
      analytic.push_back(g ? *g : std::vector<double>(t.numel(), 0.0));
    }
  }
  double worst = 0;
  for (size_t ti = 0; ti < point.size(); ++ti) {
    for (int64_t j = 0; j < point[ti].numel(); ++j) {
      auto eval_at = [&](double delta) {
        std::vector<Tensor<double>> probe;
        probe.reserve(point.size());
        for (size_t q = 0; q < point.size(); ++q) {
          Tensor<double> c;
          c.shape = point[q].shape;
          c.data = std::make_shared<std::vector<double>>(*point[q].data);
          if (q == ti) (*c.data)[j] += delta;
          probe.push_back(std::move(c));
        }
        return f(probe).scalar_value();
      };
      double num = (eval_at(h) - eval_at(-h)) / (2 * h);
      if (!std::isfinite(num) || !std::isfinite(analytic[ti][j]))
        throw NumericError("grad_check: non-finite value encountered");
      double err = std::abs(analytic[ti][j] - num) / (std::abs(num) + 1e-12);
      worst = std::max(worst, err);
    }
  }
  return worst;
}

// ---------------------------------------------------------- instantiation ---

#define IRF_INSTANTIATE(T)                                                              \
  template struct Tensor<T>;                                                            \
  template class GradientTape<T>;                                                       \
  template Tensor<T> elementwise(EwOp, const Tensor<T>&, const Tensor<T>&);             \
  template Tensor<T> elementwise(EwOp, const Tensor<T>&, T);                            \
  template Tensor<T> matmul(const Tensor<T>&, const Tensor<T>&);                        \
  template Tensor<T> conv2d(const Tensor<T>&, const Tensor<T>&, Pad);                   \
  template Tensor<T> activation(ActKind, const Tensor<T>&);                             \
  template Tensor<T> group_norm(const Tensor<T>&, int, double);                         \
  template Tensor<T> scale_channel(const Tensor<T>&, const Tensor<T>&);                 \
  template Tensor<T> bias_add_channel(const Tensor<T>&, const Tensor<T>&);              \
  template Tensor<T> resample2x(const Tensor<T>&, Resample);                            \
  template Tensor<T> concat_channels(const Tensor<T>&, const Tensor<T>&);               \
  template Tensor<T> dropout(const Tensor<T>&, double, Rng&);                           \
  template Tensor<T> sum_all(const Tensor<T>&);                                         \
  template Tensor<T> mean_all(const Tensor<T>&);                                        \
  template Tensor<T> abs_all(const Tensor<T>&);                                         \
  template bool all_finite(const Tensor<T>&);                                           \
  template void check_finite(const Tensor<T>&, const std::string&);

IRF_INSTANTIATE(float)
IRF_INSTANTIATE(double)

#undef IRF_INSTANTIATE

}  // namespace irf
