#pragma once

#include <algorithm>
#include <cstddef>
#include <functional>
#include <memory>
#include <numeric>
#include <sstream>
#include <utility>
#include <vector>

#include "seqrec/common.hpp"

namespace seqrec {

namespace detail {

struct TensorImpl {
  std::vector<std::size_t> shape;
  std::vector<real> data;
  std::vector<real> grad;  // empty until the tensor participates in a backward pass
  bool requires_grad = false;
  long node = -1;           // id on the thread's tape
  std::uint64_t node_gen = 0;  // tape generation the id belongs to
};

inline std::string shape_str(const std::vector<std::size_t>& s) {
  std::ostringstream os;
  os << "[";
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
  os << "]";
  return os.str();
}

}  // namespace detail

// Dense row-major tensor handle. Copying a Tensor copies the handle, not
// the buffer; clone() makes a deep copy.
class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(std::vector<std::size_t> shape, real fill = real(0)) {
    std::size_t n = 1;
    for (auto e : shape) n *= e;
    impl_ = std::make_shared<detail::TensorImpl>();
    impl_->shape = std::move(shape);
    impl_->data.assign(n, fill);
  }

  Tensor(std::vector<std::size_t> shape, std::vector<real> values) {
    std::size_t n = 1;
    for (auto e : shape) n *= e;
    if (n != values.size())
      throw shape_error("tensor init: " + detail::shape_str(shape) + " needs " +
                        std::to_string(n) + " values, got " +
                        std::to_string(values.size()));
    impl_ = std::make_shared<detail::TensorImpl>();
    impl_->shape = std::move(shape);
    impl_->data = std::move(values);
  }

  static Tensor scalar(real v) { return Tensor({1}, std::vector<real>{v}); }

  bool defined() const { return impl_ != nullptr; }
  const std::vector<std::size_t>& shape() const { return impl_->shape; }
  std::size_t ndim() const { return impl_->shape.size(); }
  std::size_t numel() const { return impl_->data.size(); }
  std::size_t extent(std::size_t i) const { return impl_->shape.at(i); }
  std::size_t rows() const { return impl_->shape.at(0); }
  std::size_t cols() const { return impl_->shape.at(1); }

  std::vector<real>& values() { return impl_->data; }
  const std::vector<real>& values() const { return impl_->data; }

  real& at(std::size_t i) { return impl_->data[i]; }
  real at(std::size_t i) const { return impl_->data[i]; }
  real& operator()(std::size_t r, std::size_t c) {
    return impl_->data[r * cols() + c];
  }
  real operator()(std::size_t r, std::size_t c) const {
    return impl_->data[r * cols() + c];
  }

  real item() const {
    if (numel() != 1)
      throw shape_error("item() on non-scalar tensor " +
                        detail::shape_str(shape()));
    return impl_->data[0];
  }

  bool requires_grad() const { return impl_ && impl_->requires_grad; }
  void set_requires_grad(bool on) {
    impl_->requires_grad = on;
    if (on && impl_->grad.size() != impl_->data.size())
      impl_->grad.assign(impl_->data.size(), real(0));
  }
  bool has_grad() const { return impl_ && !impl_->grad.empty(); }
  std::vector<real>& grad() {
    ensure_grad();
    return impl_->grad;
  }
  const std::vector<real>& grad() const { return impl_->grad; }
  void zero_grad() {
    if (!impl_->grad.empty())
      std::fill(impl_->grad.begin(), impl_->grad.end(), real(0));
  }
  void ensure_grad() {
    if (impl_->grad.size() != impl_->data.size())
      impl_->grad.assign(impl_->data.size(), real(0));
  }

  Tensor clone() const {
    Tensor t;
    t.impl_ = std::make_shared<detail::TensorImpl>();
    t.impl_->shape = impl_->shape;
    t.impl_->data = impl_->data;
    return t;
  }

  detail::TensorImpl* impl() const { return impl_.get(); }

  bool same_buffer(const Tensor& other) const { return impl_ == other.impl_; }

 private:
  std::shared_ptr<detail::TensorImpl> impl_;
};

namespace detail {
inline void check_finite(const Tensor& t, const char* op) {
  if (!finite_checks_enabled()) return;
  for (real v : t.values()) {
    if (!std::isfinite(v))
      throw numeric_error(std::string(op) + ": non-finite value produced");
  }
}
}  // namespace detail

// One recorded primitive application: which nodes fed it, which node it
// produced, and how to push gradients back through it.
struct TapeEntry {
  const char* op;
  std::vector<long> inputs;
  long output;
  std::function<void()> backward;
};

// Reverse-mode tape. Forward primitives append entries; backward_from
// replays them once in reverse, accumulating into .grad buffers. One tape
// per thread so independent runs never share state.
class Tape {
 public:
  static Tape& active() {
    thread_local Tape t;
    return t;
  }

  bool recording() const { return enabled_; }
  void set_recording(bool on) { enabled_ = on; }

  std::size_t size() const { return entries_.size(); }
  const TapeEntry& entry(std::size_t i) const { return entries_[i]; }

  void clear() {
    entries_.clear();
    next_node_ = 0;
    ++generation_;
  }

  // Assigns the tensor an id on this tape if it does not have a current one.
  long ensure_node(const Tensor& t) {
    auto* impl = t.impl();
    if (impl->node_gen != generation_ || impl->node < 0) {
      impl->node = next_node_++;
      impl->node_gen = generation_;
    }
    return impl->node;
  }

  long node_of(const Tensor& t) const {
    auto* impl = t.impl();
    if (impl->node_gen != generation_) return -1;
    return impl->node;
  }

  void record(const char* op, const std::vector<Tensor>& ins, Tensor& out,
              std::function<void()> backward) {
    TapeEntry e;
    e.op = op;
    e.inputs.reserve(ins.size());
    for (const auto& t : ins) e.inputs.push_back(ensure_node(t));
    e.output = ensure_node(out);
    e.backward = std::move(backward);
    out.impl()->requires_grad = true;
    entries_.push_back(std::move(e));
  }

  // Accumulates d(loss)/d(leaf) into every participating tensor's grad
  // buffer. Entries that cannot reach the loss are skipped, so each
  // reachable node is visited exactly once.
  void backward_from(const Tensor& loss) {
    if (loss.numel() != 1)
      throw shape_error("backward: loss must be scalar, got " +
                        detail::shape_str(loss.shape()));
    const long root = node_of(loss);
    if (root < 0)
      throw shape_error("backward: loss is not on the computation tape");
    std::vector<char> reachable(static_cast<std::size_t>(next_node_), 0);
    reachable[static_cast<std::size_t>(root)] = 1;
    loss.impl()->grad.assign(1, real(0));
    loss.impl()->grad[0] = real(1);
    for (std::size_t i = entries_.size(); i-- > 0;) {
      const TapeEntry& e = entries_[i];
      if (e.output > root || !reachable[static_cast<std::size_t>(e.output)])
        continue;
      for (long in : e.inputs) reachable[static_cast<std::size_t>(in)] = 1;
      e.backward();
    }
  }

 private:
  std::vector<TapeEntry> entries_;
  long next_node_ = 0;
  std::uint64_t generation_ = 1;
  bool enabled_ = true;
};

struct NoGradGuard {
  NoGradGuard() : prev_(Tape::active().recording()) {
    Tape::active().set_recording(false);
  }
  ~NoGradGuard() { Tape::active().set_recording(prev_); }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool prev_;
};

inline void backward(const Tensor& loss) { Tape::active().backward_from(loss); }

namespace detail {

inline bool participates(const Tensor& t) { return t.requires_grad(); }

inline bool should_record(std::initializer_list<const Tensor*> ins) {
  if (!Tape::active().recording()) return false;
  for (const Tensor* t : ins)
    if ((*t).requires_grad()) return true;
  return false;
}

// g += contribution, allocating on first touch.
inline void accumulate(Tensor& t, const std::vector<real>& contrib) {
  auto& g = t.grad();
  for (std::size_t i = 0; i < g.size(); ++i) g[i] += contrib[i];
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Primitives. Each computes its forward value, checks finiteness, and (when
// recording) appends a backward rule to the active tape.
// ---------------------------------------------------------------------------

inline Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.ndim() != 2 || b.ndim() != 2 || a.cols() != b.rows())
    throw shape_error("matmul: incompatible shapes " +
                      detail::shape_str(a.shape()) + " and " +
                      detail::shape_str(b.shape()));
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  Tensor out({m, n});
  const real* pa = a.values().data();
  const real* pb = b.values().data();
  real* po = out.values().data();
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t l = 0; l < k; ++l) {
      const real av = pa[i * k + l];
      if (av == real(0)) continue;
      const real* brow = pb + l * n;
      real* orow = po + i * n;
      for (std::size_t j = 0; j < n; ++j) orow[j] += av * brow[j];
    }
  }
  detail::check_finite(out, "matmul");
  if (detail::should_record({&a, &b})) {
    Tensor ac = a, bc = b, oc = out;
    Tape::active().record("matmul", {a, b}, out, [ac, bc, oc]() mutable {
      const auto& g = oc.grad();
      const std::size_t m2 = ac.rows(), k2 = ac.cols(), n2 = bc.cols();
      if (ac.requires_grad()) {
        auto& ga = ac.grad();
        const real* pbv = bc.values().data();
        for (std::size_t i = 0; i < m2; ++i)
          for (std::size_t l = 0; l < k2; ++l) {
            real s = 0;
            const real* grow = g.data() + i * n2;
            const real* brow = pbv + l * n2;
            for (std::size_t j = 0; j < n2; ++j) s += grow[j] * brow[j];
            ga[i * k2 + l] += s;
          }
      }
      if (bc.requires_grad()) {
        auto& gb = bc.grad();
        const real* pav = ac.values().data();
        for (std::size_t i = 0; i < m2; ++i) {
          const real* grow = g.data() + i * n2;
          for (std::size_t l = 0; l < k2; ++l) {
            const real av = pav[i * k2 + l];
            if (av == real(0)) continue;
            real* gbrow = gb.data() + l * n2;
            for (std::size_t j = 0; j < n2; ++j) gbrow[j] += av * grow[j];
          }
        }
      }
    });
  }
  return out;
}

inline Tensor transpose(const Tensor& a) {
  if (a.ndim() != 2)
    throw shape_error("transpose: expected 2-d tensor, got " +
                      detail::shape_str(a.shape()));
  const std::size_t m = a.rows(), n = a.cols();
  Tensor out({n, m});
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out(j, i) = a(i, j);
  if (detail::should_record({&a})) {
    Tensor ac = a, oc = out;
    Tape::active().record("transpose", {a}, out, [ac, oc]() mutable {
      if (!ac.requires_grad()) return;
      const auto& g = oc.grad();
      auto& ga = ac.grad();
      const std::size_t m2 = ac.rows(), n2 = ac.cols();
      for (std::size_t i = 0; i < m2; ++i)
        for (std::size_t j = 0; j < n2; ++j) ga[i * n2 + j] += g[j * m2 + i];
    });
  }
  return out;
}

namespace detail {
inline void require_same_shape(const Tensor& a, const Tensor& b,
                               const char* op) {
  if (a.shape() != b.shape())
    throw shape_error(std::string(op) + ": shape mismatch " +
                      shape_str(a.shape()) + " vs " + shape_str(b.shape()));
}
}  // namespace detail

inline Tensor add(const Tensor& a, const Tensor& b) {
  detail::require_same_shape(a, b, "add");
  Tensor out(a.shape());
  for (std::size_t i = 0; i < out.numel(); ++i)
    out.at(i) = a.at(i) + b.at(i);
  detail::check_finite(out, "add");
  if (detail::should_record({&a, &b})) {
    Tensor ac = a, bc = b, oc = out;
    Tape::active().record("add", {a, b}, out, [ac, bc, oc]() mutable {
      const auto& g = oc.grad();
      if (ac.requires_grad()) detail::accumulate(ac, g);
      if (bc.requires_grad()) detail::accumulate(bc, g);
    });
  }
  return out;
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
  detail::require_same_shape(a, b, "sub");
  Tensor out(a.shape());
  for (std::size_t i = 0; i < out.numel(); ++i)
    out.at(i) = a.at(i) - b.at(i);
  detail::check_finite(out, "sub");
  if (detail::should_record({&a, &b})) {
    Tensor ac = a, bc = b, oc = out;
    Tape::active().record("sub", {a, b}, out, [ac, bc, oc]() mutable {
      const auto& g = oc.grad();
      if (ac.requires_grad()) detail::accumulate(ac, g);
      if (bc.requires_grad()) {
        auto& gb = bc.grad();
        for (std::size_t i = 0; i < gb.size(); ++i) gb[i] -= g[i];
      }
    });
  }
  return out;
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
  detail::require_same_shape(a, b, "mul");
  Tensor out(a.shape());
  for (std::size_t i = 0; i < out.numel(); ++i)
    out.at(i) = a.at(i) * b.at(i);
  detail::check_finite(out, "mul");
  if (detail::should_record({&a, &b})) {
    Tensor ac = a, bc = b, oc = out;
    Tape::active().record("mul", {a, b}, out, [ac, bc, oc]() mutable {
      const auto& g = oc.grad();
      if (ac.requires_grad()) {
        auto& ga = ac.grad();
        for (std::size_t i = 0; i < ga.size(); ++i)
          ga[i] += g[i] * bc.at(i);
      }
      if (bc.requires_grad()) {
        auto& gb = bc.grad();
        for (std::size_t i = 0; i < gb.size(); ++i)
          gb[i] += g[i] * ac.at(i);
      }
    });
  }
  return out;
}

inline Tensor scale(const Tensor& a, real s) {
  Tensor out(a.shape());
  for (std::size_t i = 0; i < out.numel(); ++i) out.at(i) = a.at(i) * s;
  detail::check_finite(out, "scale");
  if (detail::should_record({&a})) {
    Tensor ac = a, oc = out;
    Tape::active().record("scale", {a}, out, [ac, oc, s]() mutable {
      if (!ac.requires_grad()) return;
      const auto& g = oc.grad();
      auto& ga = ac.grad();
      for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += s * g[i];
    });
  }
  return out;
}

// x[m,n] + v[n] broadcast over rows.
inline Tensor add_rowvec(const Tensor& x, const Tensor& v) {
  if (x.ndim() != 2 || v.numel() != x.cols())
    throw shape_error("add_rowvec: " + detail::shape_str(x.shape()) + " vs " +
                      detail::shape_str(v.shape()));
  Tensor out(x.shape());
  const std::size_t m = x.rows(), n = x.cols();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out(i, j) = x(i, j) + v.at(j);
  detail::check_finite(out, "add_rowvec");
  if (detail::should_record({&x, &v})) {
    Tensor xc = x, vc = v, oc = out;
    Tape::active().record("add_rowvec", {x, v}, out, [xc, vc, oc]() mutable {
      const auto& g = oc.grad();
      const std::size_t m2 = xc.rows(), n2 = xc.cols();
      if (xc.requires_grad())
        detail::accumulate(xc, g);
      if (vc.requires_grad()) {
        auto& gv = vc.grad();
        for (std::size_t i = 0; i < m2; ++i)
          for (std::size_t j = 0; j < n2; ++j) gv[j] += g[i * n2 + j];
      }
    });
  }
  return out;
}

inline Tensor gelu(const Tensor& x) {
  Tensor out(x.shape());
  constexpr real inv_sqrt2 = real(0.70710678118654752440084436210485);
  for (std::size_t i = 0; i < x.numel(); ++i) {
    const real v = x.at(i);
    out.at(i) = real(0.5) * v * (real(1) + std::erf(v * inv_sqrt2));
  }
  detail::check_finite(out, "gelu");
  if (detail::should_record({&x})) {
    Tensor xc = x, oc = out;
    Tape::active().record("gelu", {x}, out, [xc, oc]() mutable {
      if (!xc.requires_grad()) return;
      const auto& g = oc.grad();
      auto& gx = xc.grad();
      constexpr real is2 = real(0.70710678118654752440084436210485);
      constexpr real inv_sqrt2pi = real(0.39894228040143267793994605993438);
      for (std::size_t i = 0; i < gx.size(); ++i) {
        const real v = xc.at(i);
        const real cdf = real(0.5) * (real(1) + std::erf(v * is2));
        const real pdf = inv_sqrt2pi * std::exp(real(-0.5) * v * v);
        gx[i] += g[i] * (cdf + v * pdf);
      }
    });
  }
  return out;
}

inline Tensor log_sigmoid(const Tensor& x) {
  Tensor out(x.shape());
  for (std::size_t i = 0; i < x.numel(); ++i) {
    const real v = x.at(i);
    // -log(1 + e^{-v}), computed without overflow on either tail
    out.at(i) = v >= real(0) ? -std::log1p(std::exp(-v))
                             : v - std::log1p(std::exp(v));
  }
  detail::check_finite(out, "log_sigmoid");
  if (detail::should_record({&x})) {
    Tensor xc = x, oc = out;
    Tape::active().record("log_sigmoid", {x}, out, [xc, oc]() mutable {
      if (!xc.requires_grad()) return;
      const auto& g = oc.grad();
      auto& gx = xc.grad();
      for (std::size_t i = 0; i < gx.size(); ++i) {
        const real v = xc.at(i);
        const real sig = v >= real(0) ? real(1) / (real(1) + std::exp(-v))
                                      : std::exp(v) / (real(1) + std::exp(v));
        gx[i] += g[i] * (real(1) - sig);
      }
    });
  }
  return out;
}

// Softmax over the last axis. mask, when given, must match x's shape and
// holds 1 for kept entries, 0 for masked ones; masked entries come out as
// exactly 0. A row with no kept entry is an error.
inline Tensor softmax_lastdim(const Tensor& x, const Tensor* mask = nullptr) {
  if (mask && mask->shape() != x.shape())
    throw shape_error("softmax_lastdim: mask shape " +
                      detail::shape_str(mask->shape()) + " does not match " +
                      detail::shape_str(x.shape()));
  const std::size_t n = x.ndim() == 0 ? 1 : x.shape().back();
  const std::size_t rows = x.numel() / n;
  Tensor out(x.shape());
  for (std::size_t r = 0; r < rows; ++r) {
    const real* xr = x.values().data() + r * n;
    const real* mr = mask ? mask->values().data() + r * n : nullptr;
    real mx = -std::numeric_limits<real>::infinity();
    for (std::size_t j = 0; j < n; ++j)
      if (!mr || mr[j] != real(0)) mx = std::max(mx, xr[j]);
    if (mx == -std::numeric_limits<real>::infinity())
      throw numeric_error("softmax_lastdim: fully masked row " +
                          std::to_string(r));
    real denom = 0;
    real* orow = out.values().data() + r * n;
    for (std::size_t j = 0; j < n; ++j) {
      if (!mr || mr[j] != real(0)) {
        orow[j] = std::exp(xr[j] - mx);
        denom += orow[j];
      } else {
        orow[j] = real(0);
      }
    }
    for (std::size_t j = 0; j < n; ++j) orow[j] /= denom;
  }
  detail::check_finite(out, "softmax_lastdim");
  if (detail::should_record({&x})) {
    Tensor xc = x, oc = out;
    Tape::active().record("softmax_lastdim", {x}, out, [xc, oc, n, rows]() mutable {
      if (!xc.requires_grad()) return;
      const auto& g = oc.grad();
      auto& gx = xc.grad();
      for (std::size_t r = 0; r < rows; ++r) {
        const real* y = oc.values().data() + r * n;
        const real* gr = g.data() + r * n;
        real dot = 0;
        for (std::size_t j = 0; j < n; ++j) dot += gr[j] * y[j];
        for (std::size_t j = 0; j < n; ++j)
          gx[r * n + j] += y[j] * (gr[j] - dot);
      }
    });
  }
  return out;
}

// Per-last-axis normalization to zero mean / unit variance (biased), then
// affine transform by gain and bias.
inline Tensor layer_norm(const Tensor& x, const Tensor& gain,
                         const Tensor& bias, real eps) {
  const std::size_t n = x.shape().back();
  if (gain.numel() != n || bias.numel() != n)
    throw shape_error("layer_norm: gain/bias length " +
                      std::to_string(gain.numel()) + "/" +
                      std::to_string(bias.numel()) + " vs last extent " +
                      std::to_string(n));
  if (!(eps > real(0))) throw config_error("layer_norm: eps must be > 0");
  const std::size_t rows = x.numel() / n;
  Tensor out(x.shape());
  std::vector<real> xhat(x.numel());
  std::vector<real> inv_sd(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const real* xr = x.values().data() + r * n;
    real mean = 0;
    for (std::size_t j = 0; j < n; ++j) mean += xr[j];
    mean /= real(n);
    real var = 0;
    for (std::size_t j = 0; j < n; ++j) {
      const real d = xr[j] - mean;
      var += d * d;
    }
    var /= real(n);
    const real isd = real(1) / std::sqrt(var + eps);
    inv_sd[r] = isd;
    real* orow = out.values().data() + r * n;
    for (std::size_t j = 0; j < n; ++j) {
      const real xh = (xr[j] - mean) * isd;
      xhat[r * n + j] = xh;
      orow[j] = gain.at(j) * xh + bias.at(j);
    }
  }
  detail::check_finite(out, "layer_norm");
  if (detail::should_record({&x, &gain, &bias})) {
    Tensor xc = x, gc = gain, bc = bias, oc = out;
    auto xh = std::make_shared<std::vector<real>>(std::move(xhat));
    auto isd = std::make_shared<std::vector<real>>(std::move(inv_sd));
    Tape::active().record(
        "layer_norm", {x, gain, bias}, out, [xc, gc, bc, oc, xh, isd, n, rows]() mutable {
          const auto& g = oc.grad();
          if (gc.requires_grad()) {
            auto& gg = gc.grad();
            for (std::size_t r = 0; r < rows; ++r)
              for (std::size_t j = 0; j < n; ++j)
                gg[j] += g[r * n + j] * (*xh)[r * n + j];
          }
          if (bc.requires_grad()) {
            auto& gb = bc.grad();
            for (std::size_t r = 0; r < rows; ++r)
              for (std::size_t j = 0; j < n; ++j) gb[j] += g[r * n + j];
          }
          if (xc.requires_grad()) {
            auto& gx = xc.grad();
            for (std::size_t r = 0; r < rows; ++r) {
              real sum_dy = 0, sum_dy_xh = 0;
              for (std::size_t j = 0; j < n; ++j) {
                const real dy = g[r * n + j] * gc.at(j);
                sum_dy += dy;
                sum_dy_xh += dy * (*xh)[r * n + j];
              }
              const real inv_n = real(1) / real(n);
              for (std::size_t j = 0; j < n; ++j) {
                const real dy = g[r * n + j] * gc.at(j);
                gx[r * n + j] += (*isd)[r] * (dy - inv_n * sum_dy -
                                              (*xh)[r * n + j] * inv_n *
                                                  sum_dy_xh);
              }
            }
          }
        });
  }
  return out;
}

// Zeroes each element with probability p and scales survivors by 1/(1-p)
// while training; identity at inference. Deterministic for a fixed rng seed.
inline Tensor dropout(const Tensor& x, real p, bool training, Rng& rng) {
  if (!(p >= real(0) && p < real(1)))
    throw config_error("dropout: p must lie in [0, 1), got " +
                       std::to_string(p));
  if (!training || p == real(0)) {
    Tensor out(x.shape(), x.values());
    if (detail::should_record({&x})) {
      Tensor xc = x, oc = out;
      Tape::active().record("dropout", {x}, out, [xc, oc]() mutable {
        if (!xc.requires_grad()) return;
        detail::accumulate(xc, oc.grad());
      });
    }
    return out;
  }
  Tensor out(x.shape());
  auto keep = std::make_shared<std::vector<std::uint8_t>>(x.numel());
  const real inv_keep = real(1) / (real(1) - p);
  for (std::size_t i = 0; i < x.numel(); ++i) {
    const bool k = rng.uniform() >= static_cast<double>(p);
    (*keep)[i] = k;
    out.at(i) = k ? x.at(i) * inv_keep : real(0);
  }
  detail::check_finite(out, "dropout");
  if (detail::should_record({&x})) {
    Tensor xc = x, oc = out;
    Tape::active().record("dropout", {x}, out, [xc, oc, keep, inv_keep]() mutable {
      if (!xc.requires_grad()) return;
      const auto& g = oc.grad();
      auto& gx = xc.grad();
      for (std::size_t i = 0; i < gx.size(); ++i)
        if ((*keep)[i]) gx[i] += g[i] * inv_keep;
    });
  }
  return out;
}

// out[t,:] = table[ids[t],:]. Index 0 is the padding row: it is gathered
// like any other but never receives gradient.
inline Tensor embedding_gather(const Tensor& table,
                               const std::vector<int>& ids) {
  if (table.ndim() != 2)
    throw shape_error("embedding_gather: table must be 2-d");
  const std::size_t d = table.cols();
  const long vocab = static_cast<long>(table.rows());
  Tensor out({ids.size(), d});
  for (std::size_t t = 0; t < ids.size(); ++t) {
    if (ids[t] < 0 || ids[t] >= vocab)
      throw data_error("embedding_gather: id " + std::to_string(ids[t]) +
                       " outside [0, " + std::to_string(vocab - 1) + "]");
    const real* src = table.values().data() + std::size_t(ids[t]) * d;
    std::copy(src, src + d, out.values().data() + t * d);
  }
  if (detail::should_record({&table})) {
    Tensor tc = table, oc = out;
    auto idc = std::make_shared<std::vector<int>>(ids);
    Tape::active().record("embedding_gather", {table}, out, [tc, oc, idc, d]() mutable {
      if (!tc.requires_grad()) return;
      const auto& g = oc.grad();
      auto& gt = tc.grad();
      for (std::size_t t = 0; t < idc->size(); ++t) {
        const int id = (*idc)[t];
        if (id == 0) continue;
        real* dst = gt.data() + std::size_t(id) * d;
        const real* src = g.data() + t * d;
        for (std::size_t j = 0; j < d; ++j) dst[j] += src[j];
      }
    });
  }
  return out;
}

inline Tensor col_slice(const Tensor& x, std::size_t start, std::size_t count) {
  if (x.ndim() != 2 || start + count > x.cols())
    throw shape_error("col_slice: [" + std::to_string(start) + ", " +
                      std::to_string(start + count) + ") outside " +
                      detail::shape_str(x.shape()));
  const std::size_t m = x.rows(), n = x.cols();
  Tensor out({m, count});
  for (std::size_t i = 0; i < m; ++i)
    std::copy(x.values().data() + i * n + start,
              x.values().data() + i * n + start + count,
              out.values().data() + i * count);
  if (detail::should_record({&x})) {
    Tensor xc = x, oc = out;
    Tape::active().record("col_slice", {x}, out, [xc, oc, start, count]() mutable {
      if (!xc.requires_grad()) return;
      const auto& g = oc.grad();
      auto& gx = xc.grad();
      const std::size_t m2 = xc.rows(), n2 = xc.cols();
      for (std::size_t i = 0; i < m2; ++i)
        for (std::size_t j = 0; j < count; ++j)
          gx[i * n2 + start + j] += g[i * count + j];
    });
  }
  return out;
}

inline Tensor col_concat(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw shape_error("col_concat: no parts");
  const std::size_t m = parts.front().rows();
  std::size_t total = 0;
  for (const auto& p : parts) {
    if (p.ndim() != 2 || p.rows() != m)
      throw shape_error("col_concat: row mismatch");
    total += p.cols();
  }
  Tensor out({m, total});
  std::size_t off = 0;
  for (const auto& p : parts) {
    const std::size_t c = p.cols();
    for (std::size_t i = 0; i < m; ++i)
      std::copy(p.values().data() + i * c, p.values().data() + (i + 1) * c,
                out.values().data() + i * total + off);
    off += c;
  }
  bool rec = Tape::active().recording();
  bool any = false;
  for (const auto& p : parts) any = any || p.requires_grad();
  if (rec && any) {
    auto pc = std::make_shared<std::vector<Tensor>>(parts);
    Tensor oc = out;
    Tape::active().record("col_concat", parts, out, [pc, oc, m, total]() mutable {
      const auto& g = oc.grad();
      std::size_t off2 = 0;
      for (auto& p : *pc) {
        const std::size_t c = p.cols();
        if (p.requires_grad()) {
          auto& gp = p.grad();
          for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < c; ++j)
              gp[i * c + j] += g[i * total + off2 + j];
        }
        off2 += c;
      }
    });
  }
  return out;
}

inline Tensor row_sum(const Tensor& x) {
  if (x.ndim() != 2) throw shape_error("row_sum: expected 2-d tensor");
  const std::size_t m = x.rows(), n = x.cols();
  Tensor out({m});
  for (std::size_t i = 0; i < m; ++i) {
    real s = 0;
    for (std::size_t j = 0; j < n; ++j) s += x(i, j);
    out.at(i) = s;
  }
  detail::check_finite(out, "row_sum");
  if (detail::should_record({&x})) {
    Tensor xc = x, oc = out;
    Tape::active().record("row_sum", {x}, out, [xc, oc]() mutable {
      if (!xc.requires_grad()) return;
      const auto& g = oc.grad();
      auto& gx = xc.grad();
      const std::size_t m2 = xc.rows(), n2 = xc.cols();
      for (std::size_t i = 0; i < m2; ++i)
        for (std::size_t j = 0; j < n2; ++j) gx[i * n2 + j] += g[i];
    });
  }
  return out;
}

inline Tensor sum(const Tensor& x) {
  Tensor out({1});
  real s = 0;
  for (std::size_t i = 0; i < x.numel(); ++i) s += x.at(i);
  out.at(0) = s;
  detail::check_finite(out, "sum");
  if (detail::should_record({&x})) {
    Tensor xc = x, oc = out;
    Tape::active().record("sum", {x}, out, [xc, oc]() mutable {
      if (!xc.requires_grad()) return;
      const real g = oc.grad()[0];
      auto& gx = xc.grad();
      for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += g;
    });
  }
  return out;
}

// Mean of x over positions where active != 0.
inline Tensor masked_mean(const Tensor& x,
                          const std::vector<std::uint8_t>& active) {
  if (active.size() != x.numel())
    throw shape_error("masked_mean: mask length mismatch");
  std::size_t count = 0;
  real s = 0;
  for (std::size_t i = 0; i < x.numel(); ++i)
    if (active[i]) {
      s += x.at(i);
      ++count;
    }
  if (count == 0) throw data_error("masked_mean: no active positions");
  Tensor out({1});
  out.at(0) = s / real(count);
  detail::check_finite(out, "masked_mean");
  if (detail::should_record({&x})) {
    Tensor xc = x, oc = out;
    auto ac = std::make_shared<std::vector<std::uint8_t>>(active);
    Tape::active().record("masked_mean", {x}, out, [xc, oc, ac, count]() mutable {
      if (!xc.requires_grad()) return;
      const real g = oc.grad()[0] / real(count);
      auto& gx = xc.grad();
      for (std::size_t i = 0; i < gx.size(); ++i)
        if ((*ac)[i]) gx[i] += g;
    });
  }
  return out;
}

// Mean cross-entropy of row-wise softmax against integer targets. target < 0
// marks an inactive row. Softmax is recomputed in backward from the saved
// logits rather than cached.
inline Tensor cross_entropy_rows(const Tensor& logits,
                                 const std::vector<long>& targets) {
  if (logits.ndim() != 2 || targets.size() != logits.rows())
    throw shape_error("cross_entropy_rows: logits " +
                      detail::shape_str(logits.shape()) + " vs " +
                      std::to_string(targets.size()) + " targets");
  const std::size_t m = logits.rows(), n = logits.cols();
  std::size_t count = 0;
  real total = 0;
  for (std::size_t r = 0; r < m; ++r) {
    if (targets[r] < 0) continue;
    if (targets[r] >= static_cast<long>(n))
      throw data_error("cross_entropy_rows: target " +
                       std::to_string(targets[r]) + " out of range");
    const real* row = logits.values().data() + r * n;
    real mx = row[0];
    for (std::size_t j = 1; j < n; ++j) mx = std::max(mx, row[j]);
    real denom = 0;
    for (std::size_t j = 0; j < n; ++j) denom += std::exp(row[j] - mx);
    total += std::log(denom) + mx - row[targets[r]];
    ++count;
  }
  if (count == 0)
    throw data_error("cross_entropy_rows: all rows inactive");
  Tensor out({1});
  out.at(0) = total / real(count);
  detail::check_finite(out, "cross_entropy_rows");
  if (detail::should_record({&logits})) {
    Tensor lc = logits, oc = out;
    auto tc = std::make_shared<std::vector<long>>(targets);
    Tape::active().record("cross_entropy_rows", {logits}, out,
                          [lc, oc, tc, m, n, count]() mutable {
      if (!lc.requires_grad()) return;
      const real g = oc.grad()[0] / real(count);
      auto& gl = lc.grad();
      for (std::size_t r = 0; r < m; ++r) {
        if ((*tc)[r] < 0) continue;
        const real* row = lc.values().data() + r * n;
        real mx = row[0];
        for (std::size_t j = 1; j < n; ++j) mx = std::max(mx, row[j]);
        real denom = 0;
        for (std::size_t j = 0; j < n; ++j) denom += std::exp(row[j] - mx);
        for (std::size_t j = 0; j < n; ++j) {
          const real p = std::exp(row[j] - mx) / denom;
          gl[r * n + j] +=
              g * (p - (static_cast<long>(j) == (*tc)[r] ? real(1) : real(0)));
        }
      }
    });
  }
  return out;
}

// Max over coordinates of |analytic - central difference| / max(1, |analytic|)
// for a scalar-valued tensor function.
inline real grad_check(const std::function<Tensor(const Tensor&)>& f,
                       const Tensor& x0, real eps) {
  if (!(eps >= real(1e-7) && eps <= real(1e-4)))
    throw config_error("grad_check: eps must lie in [1e-7, 1e-4]");
  Tensor x = x0.clone();
  x.set_requires_grad(true);
  Tape::active().clear();
  Tensor y = f(x);
  if (y.numel() != 1)
    throw shape_error("grad_check: f must be scalar-valued");
  backward(y);
  std::vector<real> analytic = x.grad();
  Tape::active().clear();
  real worst = 0;
  {
    NoGradGuard ng;
    for (std::size_t i = 0; i < x.numel(); ++i) {
      const real orig = x.at(i);
      x.at(i) = orig + eps;
      const real up = f(x).item();
      x.at(i) = orig - eps;
      const real dn = f(x).item();
      x.at(i) = orig;
      const real numeric = (up - dn) / (real(2) * eps);
      const real err = std::abs(analytic[i] - numeric) /
                       std::max(real(1), std::abs(analytic[i]));
      worst = std::max(worst, err);
    }
  }
  return worst;
}

}  // namespace seqrec
