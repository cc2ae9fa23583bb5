#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <unordered_map>
#include <vector>

#include "irf/common.hpp"
#include "irf/rng.hpp"

namespace irf {

// Dense N-d array over float or double. Value semantics: the data buffer is
// never mutated after construction; copies share it. Finite-ness is not
// enforced on construction — check_finite() is the explicit gate.
template <typename T>
struct Tensor {
  std::vector<int> shape;
  std::shared_ptr<std::vector<T>> data;
  bool requires_grad = false;

  Tensor() : data(std::make_shared<std::vector<T>>()) {}

  int64_t numel() const {
    int64_t n = 1;
    for (int d : shape) n *= d;
    return shape.empty() ? 0 : n;
  }
  const T* ptr() const { return data->data(); }
  T at(int64_t i) const { return (*data)[i]; }
  T scalar_value() const;

  static Tensor zeros(std::vector<int> shape);
  static Tensor full(std::vector<int> shape, T value);
  static Tensor from_vector(std::vector<int> shape, std::vector<T> values);
  static Tensor scalar(T value);
  static Tensor randn(std::vector<int> shape, Rng& rng);

  Tensor with_grad() const {
    Tensor t = *this;
    t.requires_grad = true;
    return t;
  }
};

std::string shape_str(const std::vector<int>& shape);

// Reverse-mode tape. Constructing one installs it as the active tape for the
// current thread; ops involving a requires_grad tensor record themselves.
// One training step builds and consumes one tape (single writer).
template <typename T>
class GradientTape {
 public:
  GradientTape();
  ~GradientTape();
  GradientTape(const GradientTape&) = delete;
  GradientTape& operator=(const GradientTape&) = delete;

  static GradientTape* current();

  // Seeds d(loss)/d(loss) = 1 and sweeps the record in reverse topological
  // order. loss must be a scalar produced under this tape. Repeated calls
  // without a fresh tape accumulate into the same gradient buffers.
  void backward(const Tensor<T>& loss);

  // Gradient buffer for a tensor, or nullptr if it never entered the tape.
  const std::vector<T>* grad(const Tensor<T>& t) const;

  // --- recording interface (used by ops; not by user code) ---
  using BackwardFn = std::function<void(GradientTape&, int self)>;
  int node_of(const Tensor<T>& t);            // tracks requires_grad leaves lazily
  int lookup(const Tensor<T>& t) const;       // -1 if untracked
  int record(const Tensor<T>& out, std::vector<int> parents, BackwardFn fn);
  std::vector<T>& grad_buffer(int node);
  bool pending(int node) const { return node >= 0; }
  size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    std::vector<int> parents;
    BackwardFn backprop;       // null for leaves
    std::vector<T> grad;       // lazily sized
    int64_t numel = 0;
  };
  std::vector<Node> nodes_;
  std::unordered_map<const void*, int> index_;
};

enum class EwOp { add, sub, mul, div };
enum class Pad { same, valid };
enum class ActKind { relu, silu };
enum class Resample { up, down };

// --- elementwise (equal shapes or tensor⊙scalar; no general broadcasting) ---
template <typename T> Tensor<T> elementwise(EwOp op, const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> elementwise(EwOp op, const Tensor<T>& a, T b);
template <typename T> Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) { return elementwise(EwOp::add, a, b); }
template <typename T> Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) { return elementwise(EwOp::sub, a, b); }
template <typename T> Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) { return elementwise(EwOp::mul, a, b); }
template <typename T> Tensor<T> add(const Tensor<T>& a, T b) { return elementwise(EwOp::add, a, b); }
template <typename T> Tensor<T> mul(const Tensor<T>& a, T b) { return elementwise(EwOp::mul, a, b); }

// --- dense linear algebra (BLAS-backed) ---
template <typename T> Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b);

// input [C_in,H,W], kernel [C_out,C_in,kH,kW]; cross-correlation, stride 1.
// Pad::same requires odd kH,kW and preserves H,W.
template <typename T> Tensor<T> conv2d(const Tensor<T>& input, const Tensor<T>& kernel, Pad pad);

// --- pointwise nonlinearities and normalization ---
template <typename T> Tensor<T> activation(ActKind kind, const Tensor<T>& x);
template <typename T> Tensor<T> relu(const Tensor<T>& x) { return activation(ActKind::relu, x); }
template <typename T> Tensor<T> silu(const Tensor<T>& x) { return activation(ActKind::silu, x); }

// x [C,H,W]; per-group zero mean / unit variance, no affine.
template <typename T> Tensor<T> group_norm(const Tensor<T>& x, int groups, double eps);

// Per-channel affine pieces for [C,H,W] maps; scale/bias carry numel == C.
template <typename T> Tensor<T> scale_channel(const Tensor<T>& x, const Tensor<T>& scale);
template <typename T> Tensor<T> bias_add_channel(const Tensor<T>& x, const Tensor<T>& bias);

// up: nearest-neighbor 2x; down: 2x2 mean pool (H,W even).
template <typename T> Tensor<T> resample2x(const Tensor<T>& x, Resample dir);

template <typename T> Tensor<T> concat_channels(const Tensor<T>& a, const Tensor<T>& b);

// Inverted dropout; the mask is drawn from rng, gradients reuse it.
template <typename T> Tensor<T> dropout(const Tensor<T>& x, double rate, Rng& rng);

// --- reductions ---
template <typename T> Tensor<T> sum_all(const Tensor<T>& x);
template <typename T> Tensor<T> mean_all(const Tensor<T>& x);
template <typename T> Tensor<T> abs_all(const Tensor<T>& x);

// --- finiteness ---
template <typename T> bool all_finite(const Tensor<T>& x);
// Throws NumericError naming `what` if any element is NaN/Inf.
template <typename T> void check_finite(const Tensor<T>& x, const std::string& what);

// backward() free-function form: loss must be scalar and on the tape.
template <typename T> void backward(const Tensor<T>& loss, GradientTape<T>& tape) { tape.backward(loss); }

// Central-difference gradient check of f over every element of every input.
// Returns max over elements of |analytic - numeric| / (|numeric| + 1e-12).
// h must lie in (0, 1e-2]. Throws NumericError on non-finite values.
double grad_check(const std::function<Tensor<double>(const std::vector<Tensor<double>>&)>& f,
                  std::vector<Tensor<double>> point, double h);

}  // namespace irf
