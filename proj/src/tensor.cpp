// SPDX-License-Identifier: Apache-2.0
#include "hardcore/tensor.hpp"

#include <algorithm>
#include <bit>
#include <cstdint>
#include <cmath>
#include <cstring>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <unordered_set>

namespace hardcore::tensor {

namespace detail {

struct Node {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;
  bool requires_grad = false;
  bool leaf = true;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward_fn;

  std::vector<double>& ensure_grad() {
    if (grad.empty()) grad.assign(value.size(), 0.0);
    return grad;
  }
};

}  // namespace detail

using detail::Node;

namespace {

thread_local bool g_grad_enabled = true;

[[noreturn]] void fail(const std::string& op, const std::string& what) {
  throw std::invalid_argument(op + ": " + what);
}

bool needs_grad(std::initializer_list<const Tensor*> inputs) {
  if (!g_grad_enabled) return false;
  return std::any_of(inputs.begin(), inputs.end(),
                     [](const Tensor* t) { return t->requires_grad(); });
}

// Creates the output node. The backward closure is only attached when some
// input tracks gradients.
std::shared_ptr<Node> make_node(Shape shape, std::vector<double> value,
                                std::initializer_list<const Tensor*> inputs) {
  auto node = std::make_shared<Node>();
  node->shape = shape;
  node->value = std::move(value);
  node->leaf = false;
  if (needs_grad(inputs)) {
    node->requires_grad = true;
    for (const Tensor* t : inputs) {
      if (t->requires_grad()) node->parents.push_back(t->node());
    }
  }
  return node;
}

void require_defined(const Tensor& t, const char* op) {
  if (!t.defined()) fail(op, "undefined tensor");
}

constexpr std::size_t kLanes = 32;

// 4-wide double vector (GCC/Clang extension); lanes are independent so
// results do not depend on the instruction set selected.
typedef double Vec4 __attribute__((vector_size(32)));
constexpr std::size_t kVecs = kLanes / 4;

inline Vec4 load4(const double* p) {
  Vec4 v;
  std::memcpy(&v, p, sizeof v);
  return v;
}
inline void store4(double* p, Vec4 v) { std::memcpy(p, &v, sizeof v); }

// dst[i] = src[(i - halo) mod m] for i in [0, m + 2 halo)
void pad_circular(const double* src, std::size_t m, std::size_t halo, double* dst) {
  for (std::size_t i = 0; i < halo; ++i) dst[i] = src[(m - (halo - i) % m) % m];
  std::copy(src, src + m, dst + halo);
  for (std::size_t i = 0; i < halo; ++i) dst[halo + m + i] = src[i % m];
}

// out[k] += sum_{r, j} w[r * kernel + j] * rows[r][k + j * step], k in [0, m).
void tap_accumulate(const double* const* rows, const double* w, std::size_t n_rows, std::size_t kernel,
                    std::size_t step, std::size_t m, double* out) {
  std::size_t kb = 0;
  for (; kb + kLanes <= m; kb += kLanes) {
    Vec4 acc[kVecs];
    for (std::size_t v = 0; v < kVecs; ++v) acc[v] = load4(out + kb + 4 * v);
    for (std::size_t r = 0; r < n_rows; ++r) {
      for (std::size_t j = 0; j < kernel; ++j) {
        const double wj = w[r * kernel + j];
        const double* src = rows[r] + kb + j * step;
        for (std::size_t v = 0; v < kVecs; ++v) acc[v] += wj * load4(src + 4 * v);
      }
    }
    for (std::size_t v = 0; v < kVecs; ++v) store4(out + kb + 4 * v, acc[v]);
  }
  for (; kb < m; ++kb) {
    double acc = out[kb];
    for (std::size_t r = 0; r < n_rows; ++r)
      for (std::size_t j = 0; j < kernel; ++j) acc += w[r * kernel + j] * rows[r][kb + j * step];
    out[kb] = acc;
  }
}

// tap_accumulate for n_out outputs sharing the rows; output q uses weights
// w + q * w_stride. Groups of four outputs share every row load.
void tap_accumulate_outputs(const double* const* rows, const double* w, std::size_t w_stride, std::size_t n_rows,
                            std::size_t kernel, std::size_t step, std::size_t m, double* const* outs,
                            std::size_t n_out) {
  constexpr std::size_t TO = 4, TV = 2, TL = TV * 4;
  std::size_t q0 = 0;
  for (; q0 + TO <= n_out && m >= TL; q0 += TO) {
    std::size_t kb = 0;
    for (; kb + TL <= m; kb += TL) {
      Vec4 acc[TO][TV];
      for (std::size_t q = 0; q < TO; ++q)
        for (std::size_t v = 0; v < TV; ++v) acc[q][v] = load4(outs[q0 + q] + kb + 4 * v);
      for (std::size_t r = 0; r < n_rows; ++r) {
        for (std::size_t j = 0; j < kernel; ++j) {
          const double* src = rows[r] + kb + j * step;
          Vec4 xv[TV];
          for (std::size_t v = 0; v < TV; ++v) xv[v] = load4(src + 4 * v);
          for (std::size_t q = 0; q < TO; ++q) {
            const double wq = w[(q0 + q) * w_stride + r * kernel + j];
            for (std::size_t v = 0; v < TV; ++v) acc[q][v] += wq * xv[v];
          }
        }
      }
      for (std::size_t q = 0; q < TO; ++q)
        for (std::size_t v = 0; v < TV; ++v) store4(outs[q0 + q] + kb + 4 * v, acc[q][v]);
    }
    for (; kb < m; ++kb)
      for (std::size_t q = q0; q < q0 + TO; ++q) {
        double acc = outs[q][kb];
        for (std::size_t r = 0; r < n_rows; ++r)
          for (std::size_t j = 0; j < kernel; ++j) acc += w[q * w_stride + r * kernel + j] * rows[r][kb + j * step];
        outs[q][kb] = acc;
      }
  }
  for (; q0 < n_out; ++q0) tap_accumulate(rows, w + q0 * w_stride, n_rows, kernel, step, m, outs[q0]);
}

// sum_k a[k] * x[k] in kLanes independent partial sums
double lane_dot(const double* a, const double* x, std::size_t m) {
  Vec4 acc[kVecs] = {};
  std::size_t k = 0;
  for (; k + kLanes <= m; k += kLanes)
    for (std::size_t v = 0; v < kVecs; ++v) acc[v] += load4(a + k + 4 * v) * load4(x + k + 4 * v);
  double total = 0.0;
  for (; k < m; ++k) total += a[k] * x[k];
  for (std::size_t v = 0; v < kVecs; ++v)
    for (int l = 0; l < 4; ++l) total += acc[v][l];
  return total;
}

// c[i * ldc + r] += sum_k a[i][k] * x[r][k] for i < na, r < nx.
// Full 4 x 3 tiles keep twelve vector accumulators in registers.
void gram_accumulate(const double* const* a, std::size_t na, const double* const* x, std::size_t nx,
                     std::size_t m, double* c, std::size_t ldc) {
  constexpr std::size_t TA = 4, TX = 3;
  const std::size_t mv = m / 4 * 4;
  std::size_t i0 = 0;
  for (; i0 + TA <= na; i0 += TA) {
    std::size_t r0 = 0;
    for (; r0 + TX <= nx; r0 += TX) {
      Vec4 acc[TA][TX] = {};
      for (std::size_t k = 0; k < mv; k += 4) {
        Vec4 xv[TX];
        for (std::size_t r = 0; r < TX; ++r) xv[r] = load4(x[r0 + r] + k);
        for (std::size_t i = 0; i < TA; ++i) {
          const Vec4 av = load4(a[i0 + i] + k);
          for (std::size_t r = 0; r < TX; ++r) acc[i][r] += av * xv[r];
        }
      }
      for (std::size_t i = 0; i < TA; ++i)
        for (std::size_t r = 0; r < TX; ++r) {
          double total = 0.0;
          for (std::size_t k = mv; k < m; ++k) total += a[i0 + i][k] * x[r0 + r][k];
          total += (acc[i][r][0] + acc[i][r][1]) + (acc[i][r][2] + acc[i][r][3]);
          c[(i0 + i) * ldc + r0 + r] += total;
        }
    }
    for (; r0 < nx; ++r0)
      for (std::size_t i = i0; i < i0 + TA; ++i) c[i * ldc + r0] += lane_dot(a[i], x[r0], m);
  }
  for (; i0 < na; ++i0)
    for (std::size_t r = 0; r < nx; ++r) c[i0 * ldc + r] += lane_dot(a[i0], x[r], m);
}

}  // namespace

// ---------------------------------------------------------------------------
// Shape

Shape::Shape(std::initializer_list<std::size_t> d) {
  if (d.size() > 3) throw std::invalid_argument("Shape: at most 3 dimensions");
  rank = d.size();
  std::size_t i = 0;
  for (auto v : d) dims[i++] = v;
}

std::size_t Shape::size() const {
  std::size_t n = 1;
  for (std::size_t i = 0; i < rank; ++i) n *= dims[i];
  return n;
}

bool Shape::operator==(const Shape& other) const {
  if (rank != other.rank) return false;
  for (std::size_t i = 0; i < rank; ++i)
    if (dims[i] != other.dims[i]) return false;
  return true;
}

std::string Shape::str() const {
  std::ostringstream os;
  os << '(';
  for (std::size_t i = 0; i < rank; ++i) os << (i ? "x" : "") << dims[i];
  os << ')';
  return os.str();
}

// ---------------------------------------------------------------------------
// Tensor

static Tensor make_leaf(Shape shape, std::vector<double> values, bool requires_grad) {
  if (shape.size() != values.size())
    fail("Tensor", "shape " + shape.str() + " does not match " + std::to_string(values.size()) +
                       " values");
  auto node = std::make_shared<Node>();
  node->shape = shape;
  node->value = std::move(values);
  node->requires_grad = requires_grad;
  return Tensor(std::move(node));
}

Tensor Tensor::constant(Shape shape, std::vector<double> values) {
  return make_leaf(shape, std::move(values), false);
}

Tensor Tensor::parameter(Shape shape, std::vector<double> values) {
  return make_leaf(shape, std::move(values), true);
}

const Shape& Tensor::shape() const {
  require_defined(*this, "shape");
  return node_->shape;
}

std::span<const double> Tensor::values() const {
  require_defined(*this, "values");
  return node_->value;
}

std::span<double> Tensor::mutable_values() {
  require_defined(*this, "mutable_values");
  if (!node_->leaf) fail("mutable_values", "only leaf tensors may be modified in place");
  return node_->value;
}

double Tensor::item() const {
  if (size() != 1) fail("item", "tensor of shape " + shape().str() + " is not a scalar");
  return node_->value[0];
}

bool Tensor::requires_grad() const { return node_ && node_->requires_grad; }

std::span<const double> Tensor::grad() const {
  require_defined(*this, "grad");
  return node_->grad;
}

std::span<double> Tensor::mutable_grad() {
  require_defined(*this, "mutable_grad");
  return node_->ensure_grad();
}

void Tensor::zero_grad() {
  require_defined(*this, "zero_grad");
  std::fill(node_->grad.begin(), node_->grad.end(), 0.0);
}

void Tensor::backward() const {
  require_defined(*this, "backward");
  if (size() != 1) fail("backward", "output of shape " + shape().str() + " is not a scalar");
  if (!node_->requires_grad) return;

  // Iterative post-order DFS gives a topological order (parents before children).
  std::vector<Node*> order;
  std::unordered_set<Node*> visited;
  std::vector<std::pair<Node*, std::size_t>> stack{{node_.get(), 0}};
  visited.insert(node_.get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node* parent = node->parents[next++].get();
      if (visited.insert(parent).second) stack.emplace_back(parent, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  node_->ensure_grad()[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* node = *it;
    if (node->backward_fn && !node->grad.empty()) node->backward_fn(*node);
  }
}

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }
bool grad_enabled() { return g_grad_enabled; }

// ---------------------------------------------------------------------------
// Operations

Tensor weight_norm(const Tensor& direction, const Tensor& gain) {
  require_defined(direction, "weight_norm");
  require_defined(gain, "weight_norm");
  const Shape& vs = direction.shape();
  if (vs.rank != 3) fail("weight_norm", "direction must be out x in x kernel");
  const std::size_t out = vs[0];
  const std::size_t slice = vs[1] * vs[2];
  if (gain.shape() != Shape{out}) fail("weight_norm", "gain must have one entry per output channel");

  auto v = direction.values();
  auto g = gain.values();
  std::vector<double> norms(out);
  std::vector<double> w(v.size());
  for (std::size_t o = 0; o < out; ++o) {
    const double* vo = v.data() + o * slice;
    double sq = 0.0;
    for (std::size_t i = 0; i < slice; ++i) sq += vo[i] * vo[i];
    const double n = std::sqrt(sq);
    if (!(n > 0.0)) fail("weight_norm", "direction slice of output channel " + std::to_string(o) + " has zero norm");
    norms[o] = n;
    for (std::size_t i = 0; i < slice; ++i) w[o * slice + i] = g[o] * vo[i] / n;
  }

  auto node = make_node(vs, std::move(w), {&direction, &gain});
  if (node->requires_grad) {
    node->backward_fn = [d = direction.node(), gn = gain.node(), norms = std::move(norms), out,
                         slice](Node& self) {
      const auto& v = d->value;
      const auto& gw = self.grad;
      // With u = v/||v||: dL/dg = <dW, u>, dL/dv = g/||v|| (dW - <dW, u> u).
      for (std::size_t o = 0; o < out; ++o) {
        const double* vo = v.data() + o * slice;
        const double* go = gw.data() + o * slice;
        double proj = 0.0;
        for (std::size_t i = 0; i < slice; ++i) proj += go[i] * vo[i];
        proj /= norms[o];
        if (gn->requires_grad) gn->ensure_grad()[o] += proj;
        if (d->requires_grad) {
          auto& dv = d->ensure_grad();
          const double scale = gn->value[o] / norms[o];
          for (std::size_t i = 0; i < slice; ++i)
            dv[o * slice + i] += scale * (go[i] - proj * vo[i] / norms[o]);
        }
      }
    };
  }
  return Tensor(std::move(node));
}

Tensor conv1d_circular(const Tensor& input, const Tensor& weight, const Tensor& bias,
                       std::size_t dilation) {
  require_defined(input, "conv1d_circular");
  require_defined(weight, "conv1d_circular");
  require_defined(bias, "conv1d_circular");
  const Shape& xs = input.shape();
  const Shape& ws = weight.shape();
  if (xs.rank != 3) fail("conv1d_circular", "input must be batch x channels x time");
  if (ws.rank != 3) fail("conv1d_circular", "weight must be out x in x kernel");
  const std::size_t batch = xs[0], cin = xs[1], m = xs[2];
  const std::size_t cout = ws[0], kernel = ws[2];
  if (ws[1] != cin)
    fail("conv1d_circular", "weight expects " + std::to_string(ws[1]) + " input channels, got " +
                                std::to_string(cin));
  if (bias.shape() != Shape{cout}) fail("conv1d_circular", "bias must have one entry per output channel");
  if (kernel % 2 == 0) fail("conv1d_circular", "kernel size must be odd");
  if (dilation < 1) fail("conv1d_circular", "dilation must be >= 1");
  if ((kernel - 1) * dilation >= m) fail("conv1d_circular", "(kernel - 1) * dilation must be < sequence length");

  const std::size_t halo = (kernel - 1) / 2 * dilation;
  const std::size_t padded = m + 2 * halo;

  auto x = input.values();
  auto w = weight.values();
  auto bv = bias.values();
  std::vector<double> out(batch * cout * m);
  {
    std::vector<double> xpad(cin * padded);
    std::vector<const double*> rows(cin);
    std::vector<double*> outs(cout);
    for (std::size_t p = 0; p < cin; ++p) rows[p] = xpad.data() + p * padded;
    for (std::size_t b = 0; b < batch; ++b) {
      for (std::size_t p = 0; p < cin; ++p)
        pad_circular(x.data() + (b * cin + p) * m, m, halo, xpad.data() + p * padded);
      for (std::size_t o = 0; o < cout; ++o) {
        outs[o] = out.data() + (b * cout + o) * m;
        std::fill(outs[o], outs[o] + m, bv[o]);
      }
      tap_accumulate_outputs(rows.data(), w.data(), cin * kernel, cin, kernel, dilation, m, outs.data(), cout);
    }
  }

  auto node = make_node(Shape{batch, cout, m}, std::move(out), {&input, &weight, &bias});
  if (node->requires_grad) {
    node->backward_fn = [xn = input.node(), wn = weight.node(), bn = bias.node(), batch, cin, cout, m, kernel,
                         dilation, halo, padded](Node& self) {
      const auto& gout = self.grad;
      const auto& x = xn->value;
      const auto& w = wn->value;
      double* gx = xn->requires_grad ? xn->ensure_grad().data() : nullptr;
      double* gw = wn->requires_grad ? wn->ensure_grad().data() : nullptr;
      double* gb = bn->requires_grad ? bn->ensure_grad().data() : nullptr;
      std::vector<double> xpad(gw ? cin * padded : 0);
      std::vector<double> gpad(gx ? cout * padded : 0);
      std::vector<const double*> grows(cout), orows(cout), taps(gw ? cin * kernel : 0);
      std::vector<double*> gxrows(cin);
      for (std::size_t p = 0; p < cin && gw; ++p)
        for (std::size_t j = 0; j < kernel; ++j) taps[p * kernel + j] = xpad.data() + p * padded + j * dilation;
      for (std::size_t o = 0; o < cout && gx; ++o) grows[o] = gpad.data() + o * padded;
      // transposed, tap-reversed kernel per input channel: wt[p][o][j] = w[o][p][kernel - 1 - j]
      std::vector<double> wt(gx ? cin * cout * kernel : 0);
      if (gx)
        for (std::size_t o = 0; o < cout; ++o)
          for (std::size_t p = 0; p < cin; ++p)
            for (std::size_t j = 0; j < kernel; ++j)
              wt[(p * cout + o) * kernel + j] = w[(o * cin + p) * kernel + (kernel - 1 - j)];
      for (std::size_t b = 0; b < batch; ++b) {
        const double* go_rows = gout.data() + b * cout * m;
        for (std::size_t o = 0; o < cout; ++o) orows[o] = go_rows + o * m;
        if (gb)
          for (std::size_t o = 0; o < cout; ++o) {
            const double* go = go_rows + o * m;
            double acc = 0.0;
            for (std::size_t k = 0; k < m; ++k) acc += go[k];
            gb[o] += acc;
          }
        if (gw) {
          for (std::size_t p = 0; p < cin; ++p)
            pad_circular(x.data() + (b * cin + p) * m, m, halo, xpad.data() + p * padded);
          gram_accumulate(orows.data(), cout, taps.data(), cin * kernel, m, gw, cin * kernel);
        }
        if (gx) {
          // gx[p][n] += sum_{o, j} w[o][p][j] go[o][n - (j - c) delta] = sum wt[p][o][j'] gpad[o][n + j' delta]
          for (std::size_t o = 0; o < cout; ++o) pad_circular(go_rows + o * m, m, halo, gpad.data() + o * padded);
          for (std::size_t p = 0; p < cin; ++p) gxrows[p] = gx + (b * cin + p) * m;
          tap_accumulate_outputs(grows.data(), wt.data(), cout * kernel, cout, kernel, dilation, m, gxrows.data(),
                                 cin);
        }
      }
    };
  }
  return Tensor(std::move(node));
}

Tensor conv1d_circular(const Tensor& input, const WeightNormedKernel& kernel, std::size_t dilation) {
  return conv1d_circular(input, weight_norm(kernel.direction, kernel.gain), kernel.bias, dilation);
}

Tensor linear(const Tensor& input, const Tensor& weight, const Tensor& bias) {
  require_defined(input, "linear");
  require_defined(weight, "linear");
  require_defined(bias, "linear");
  const Shape& xs = input.shape();
  const Shape& ws = weight.shape();
  if (xs.rank != 2 || ws.rank != 2) fail("linear", "expected batch x features input and out x in weight");
  const std::size_t batch = xs[0], fin = xs[1], fout = ws[0];
  if (ws[1] != fin)
    fail("linear", "weight expects " + std::to_string(ws[1]) + " inputs, got " + std::to_string(fin));
  if (bias.shape() != Shape{fout}) fail("linear", "bias must have one entry per output");

  auto x = input.values();
  auto w = weight.values();
  auto bv = bias.values();
  std::vector<double> out(batch * fout);
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t o = 0; o < fout; ++o) {
      double acc = bv[o];
      for (std::size_t i = 0; i < fin; ++i) acc += w[o * fin + i] * x[b * fin + i];
      out[b * fout + o] = acc;
    }

  auto node = make_node(Shape{batch, fout}, std::move(out), {&input, &weight, &bias});
  if (node->requires_grad) {
    node->backward_fn = [xn = input.node(), wn = weight.node(), bn = bias.node(), batch, fin,
                         fout](Node& self) {
      const auto& g = self.grad;
      double* gx = xn->requires_grad ? xn->ensure_grad().data() : nullptr;
      double* gw = wn->requires_grad ? wn->ensure_grad().data() : nullptr;
      double* gb = bn->requires_grad ? bn->ensure_grad().data() : nullptr;
      for (std::size_t b = 0; b < batch; ++b)
        for (std::size_t o = 0; o < fout; ++o) {
          const double go = g[b * fout + o];
          if (gb) gb[o] += go;
          for (std::size_t i = 0; i < fin; ++i) {
            if (gw) gw[o * fin + i] += go * xn->value[b * fin + i];
            if (gx) gx[b * fin + i] += go * wn->value[o * fin + i];
          }
        }
    };
  }
  return Tensor(std::move(node));
}

namespace {

inline double tanh_kernel(double x) {
  // tanh|x| = e / (e + 2) with e = expm1(2|x|); expm1 via 2^n (1 + q(r)) - 1,
  // 2|x| = n ln2 + r, |r| <= ln2 / 2, q the Taylor series of expm1 to r^13.
  constexpr double kInvLn2 = 1.4426950408889634;
  constexpr double kLn2Hi = 6.93147180369123816490e-01;
  constexpr double kLn2Lo = 1.90821492927058770002e-10;
  constexpr double kShifter = 0x1.8p52;
  const double a = 2.0 * std::min(std::abs(x), 20.0);
  const double kd = a * kInvLn2 + kShifter;
  const double n = kd - kShifter;
  const double r = (a - n * kLn2Hi) - n * kLn2Lo;
  double q = 1.0 / 6227020800.0;
  q = q * r + 1.0 / 479001600.0;
  q = q * r + 1.0 / 39916800.0;
  q = q * r + 1.0 / 3628800.0;
  q = q * r + 1.0 / 362880.0;
  q = q * r + 1.0 / 40320.0;
  q = q * r + 1.0 / 5040.0;
  q = q * r + 1.0 / 720.0;
  q = q * r + 1.0 / 120.0;
  q = q * r + 1.0 / 24.0;
  q = q * r + 1.0 / 6.0;
  q = q * r + 0.5;
  q = q * r * r + r;
  const std::uint64_t bits = (std::bit_cast<std::uint64_t>(kd) << 52) + (std::uint64_t{1023} << 52);
  const double scale = std::bit_cast<double>(bits);
  const double e = scale * q + (scale - 1.0);
  return std::copysign(e / (e + 2.0), x);
}

}  // namespace

double tanh_scalar(double x) { return tanh_kernel(x); }

Tensor tanh(const Tensor& input) {
  require_defined(input, "tanh");
  auto x = input.values();
  std::vector<double> out(x.size());
  const double* xs = x.data();
  double* ys = out.data();
  for (std::size_t i = 0; i < x.size(); ++i) ys[i] = tanh_kernel(xs[i]);
  auto node = make_node(input.shape(), std::move(out), {&input});
  if (node->requires_grad) {
    node->backward_fn = [xn = input.node()](Node& self) {
      auto& gx = xn->ensure_grad();
      for (std::size_t i = 0; i < gx.size(); ++i) {
        const double y = self.value[i];
        gx[i] += self.grad[i] * (1.0 - y * y);
      }
    };
  }
  return Tensor(std::move(node));
}

Tensor broadcast_add_channels(const Tensor& series, const Tensor& bias) {
  require_defined(series, "broadcast_add_channels");
  require_defined(bias, "broadcast_add_channels");
  const Shape& ss = series.shape();
  const Shape& bs = bias.shape();
  if (ss.rank != 3 || bs.rank != 2) fail("broadcast_add_channels", "expected batch x C x M series and batch x C' bias");
  const std::size_t batch = ss[0], c = ss[1], m = ss[2], cb = bs[1];
  if (bs[0] != batch) fail("broadcast_add_channels", "batch size mismatch");
  if (cb > c)
    fail("broadcast_add_channels", "bias has " + std::to_string(cb) + " channels but series only " + std::to_string(c));

  std::vector<double> out(series.values().begin(), series.values().end());
  auto bv = bias.values();
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t ch = 0; ch < cb; ++ch) {
      double* row = out.data() + (b * c + ch) * m;
      const double add = bv[b * cb + ch];
      for (std::size_t k = 0; k < m; ++k) row[k] += add;
    }

  auto node = make_node(ss, std::move(out), {&series, &bias});
  if (node->requires_grad) {
    node->backward_fn = [sn = series.node(), bn = bias.node(), batch, c, m, cb](Node& self) {
      const auto& g = self.grad;
      if (sn->requires_grad) {
        auto& gs = sn->ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i) gs[i] += g[i];
      }
      if (bn->requires_grad) {
        auto& gb = bn->ensure_grad();
        for (std::size_t b = 0; b < batch; ++b)
          for (std::size_t ch = 0; ch < cb; ++ch) {
            const double* row = g.data() + (b * c + ch) * m;
            double acc = 0.0;
            for (std::size_t k = 0; k < m; ++k) acc += row[k];
            gb[b * cb + ch] += acc;
          }
      }
    };
  }
  return Tensor(std::move(node));
}

Tensor subtract_time_mean(const Tensor& series) {
  require_defined(series, "subtract_time_mean");
  const Shape& ss = series.shape();
  if (ss.rank != 3) fail("subtract_time_mean", "expected batch x C x M");
  const std::size_t rows = ss[0] * ss[1], m = ss[2];
  auto x = series.values();
  std::vector<double> out(x.size());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* xr = x.data() + r * m;
    const double mean = std::accumulate(xr, xr + m, 0.0) / static_cast<double>(m);
    double* orow = out.data() + r * m;
    for (std::size_t k = 0; k < m; ++k) orow[k] = xr[k] - mean;
  }
  auto node = make_node(ss, std::move(out), {&series});
  if (node->requires_grad) {
    node->backward_fn = [sn = series.node(), rows, m](Node& self) {
      auto& gx = sn->ensure_grad();
      for (std::size_t r = 0; r < rows; ++r) {
        const double* g = self.grad.data() + r * m;
        const double mean = std::accumulate(g, g + m, 0.0) / static_cast<double>(m);
        for (std::size_t k = 0; k < m; ++k) gx[r * m + k] += g[k] - mean;
      }
    };
  }
  return Tensor(std::move(node));
}

Tensor add(const Tensor& a, const Tensor& b) {
  require_defined(a, "add");
  require_defined(b, "add");
  if (!(a.shape() == b.shape())) fail("add", "shape mismatch " + a.shape().str() + " vs " + b.shape().str());
  auto av = a.values();
  auto bv = b.values();
  std::vector<double> out(av.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] + bv[i];
  auto node = make_node(a.shape(), std::move(out), {&a, &b});
  if (node->requires_grad) {
    node->backward_fn = [an = a.node(), bn = b.node()](Node& self) {
      for (Node* p : {an.get(), bn.get()}) {
        if (!p->requires_grad) continue;
        auto& g = p->ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
      }
    };
  }
  return Tensor(std::move(node));
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_defined(a, "mul");
  require_defined(b, "mul");
  if (!(a.shape() == b.shape())) fail("mul", "shape mismatch " + a.shape().str() + " vs " + b.shape().str());
  auto av = a.values();
  auto bv = b.values();
  std::vector<double> out(av.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * bv[i];
  auto node = make_node(a.shape(), std::move(out), {&a, &b});
  if (node->requires_grad) {
    node->backward_fn = [an = a.node(), bn = b.node()](Node& self) {
      if (an->requires_grad) {
        auto& g = an->ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * bn->value[i];
      }
      if (bn->requires_grad) {
        auto& g = bn->ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * an->value[i];
      }
    };
  }
  return Tensor(std::move(node));
}

Tensor affine(const Tensor& x, double scale, double offset) {
  require_defined(x, "affine");
  auto xv = x.values();
  std::vector<double> out(xv.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = scale * xv[i] + offset;
  auto node = make_node(x.shape(), std::move(out), {&x});
  if (node->requires_grad) {
    node->backward_fn = [xn = x.node(), scale](Node& self) {
      auto& g = xn->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += scale * self.grad[i];
    };
  }
  return Tensor(std::move(node));
}

Tensor scale_rows(const Tensor& x, std::span<const double> factors) {
  require_defined(x, "scale_rows");
  const Shape& xs = x.shape();
  if (xs.rank < 1 || xs[0] != factors.size()) fail("scale_rows", "need one factor per batch row");
  const std::size_t row = xs.size() / xs[0];
  auto xv = x.values();
  std::vector<double> out(xv.size());
  for (std::size_t b = 0; b < factors.size(); ++b)
    for (std::size_t i = 0; i < row; ++i) out[b * row + i] = factors[b] * xv[b * row + i];
  auto node = make_node(xs, std::move(out), {&x});
  if (node->requires_grad) {
    node->backward_fn = [xn = x.node(), f = std::vector<double>(factors.begin(), factors.end()),
                         row](Node& self) {
      auto& g = xn->ensure_grad();
      for (std::size_t b = 0; b < f.size(); ++b)
        for (std::size_t i = 0; i < row; ++i) g[b * row + i] += f[b] * self.grad[b * row + i];
    };
  }
  return Tensor(std::move(node));
}

Tensor sum(const Tensor& x) {
  require_defined(x, "sum");
  auto xv = x.values();
  auto node = make_node(Shape{}, {std::accumulate(xv.begin(), xv.end(), 0.0)}, {&x});
  if (node->requires_grad) {
    node->backward_fn = [xn = x.node()](Node& self) {
      auto& g = xn->ensure_grad();
      for (auto& v : g) v += self.grad[0];
    };
  }
  return Tensor(std::move(node));
}

Tensor shoelace_sum(std::span<const double> b, const Tensor& h) {
  require_defined(h, "shoelace_sum");
  const Shape& hs = h.shape();
  std::size_t batch = 0, m = 0;
  if (hs.rank == 3 && hs[1] == 1) {
    batch = hs[0];
    m = hs[2];
  } else if (hs.rank == 2) {
    batch = hs[0];
    m = hs[1];
  } else {
    fail("shoelace_sum", "h must be batch x 1 x M or batch x M");
  }
  if (b.size() != batch * m) fail("shoelace_sum", "b and h sample counts differ");
  if (m < 3) fail("shoelace_sum", "need at least 3 vertices");

  auto hv = h.values();
  std::vector<double> out(batch);
  for (std::size_t r = 0; r < batch; ++r) {
    const double* br = b.data() + r * m;
    const double* hr = hv.data() + r * m;
    double acc = br[0] * (hr[m - 1] - hr[1]);
    for (std::size_t i = 1; i + 1 < m; ++i) acc += br[i] * (hr[i - 1] - hr[i + 1]);
    acc += br[m - 1] * (hr[m - 2] - hr[0]);
    out[r] = acc;
  }
  auto node = make_node(Shape{batch, 1}, std::move(out), {&h});
  if (node->requires_grad) {
    node->backward_fn = [hn = h.node(), bs = std::vector<double>(b.begin(), b.end()), batch,
                         m](Node& self) {
      // d/dh_j = b_{j+1} - b_{j-1}
      auto& g = hn->ensure_grad();
      for (std::size_t r = 0; r < batch; ++r) {
        const double go = self.grad[r];
        const double* br = bs.data() + r * m;
        double* gr = g.data() + r * m;
        for (std::size_t j = 0; j < m; ++j) {
          const double next = br[(j + 1) % m];
          const double prev = br[(j + m - 1) % m];
          gr[j] += go * (next - prev);
        }
      }
    };
  }
  return Tensor(std::move(node));
}

Tensor mean_squared_error(const Tensor& pred, std::span<const double> target) {
  require_defined(pred, "mean_squared_error");
  auto pv = pred.values();
  if (pv.size() != target.size())
    fail("mean_squared_error", "prediction has " + std::to_string(pv.size()) + " elements, target " +
                                   std::to_string(target.size()));
  if (pv.empty()) fail("mean_squared_error", "empty input");
  double acc = 0.0;
  for (std::size_t i = 0; i < pv.size(); ++i) {
    const double d = pv[i] - target[i];
    acc += d * d;
  }
  const double n = static_cast<double>(pv.size());
  auto node = make_node(Shape{}, {acc / n}, {&pred});
  if (node->requires_grad) {
    node->backward_fn = [pn = pred.node(), t = std::vector<double>(target.begin(), target.end()),
                         n](Node& self) {
      auto& g = pn->ensure_grad();
      const double s = 2.0 * self.grad[0] / n;
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += s * (pn->value[i] - t[i]);
    };
  }
  return Tensor(std::move(node));
}

Tensor mean_squared_log_error(const Tensor& pred, std::span<const double> target, double floor) {
  require_defined(pred, "mean_squared_log_error");
  auto pv = pred.values();
  if (pv.size() != target.size()) fail("mean_squared_log_error", "prediction/target length mismatch");
  if (pv.empty()) fail("mean_squared_log_error", "empty input");
  std::vector<double> residual(pv.size());
  std::vector<char> clamped(pv.size(), 0);
  double acc = 0.0;
  for (std::size_t i = 0; i < pv.size(); ++i) {
    if (!(target[i] > 0.0)) fail("mean_squared_log_error", "targets must be positive");
    double p = pv[i];
    if (!(p > floor)) {
      p = floor;
      clamped[i] = 1;
    }
    residual[i] = std::log(p) - std::log(target[i]);
    acc += residual[i] * residual[i];
  }
  const double n = static_cast<double>(pv.size());
  auto node = make_node(Shape{}, {acc / n}, {&pred});
  if (node->requires_grad) {
    node->backward_fn = [pn = pred.node(), residual = std::move(residual),
                         clamped = std::move(clamped), n](Node& self) {
      auto& g = pn->ensure_grad();
      const double s = 2.0 * self.grad[0] / n;
      for (std::size_t i = 0; i < g.size(); ++i)
        if (!clamped[i]) g[i] += s * residual[i] / pn->value[i];
    };
  }
  return Tensor(std::move(node));
}

}  // namespace hardcore::tensor
