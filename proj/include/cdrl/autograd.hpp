#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <functional>
#include <stdexcept>
#include <utility>
#include <vector>

#include "cdrl/tensor.hpp"

// Reverse-mode autodiff over Tensor. A Tape owns the node arena; ops append
// nodes and register backward closures. Graphs are rebuilt per step.
namespace cdrl::ag {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMat>;
using CMatMap = Eigen::Map<const RowMat>;

class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  int add_node(Tensor value, bool requires_grad) {
    nodes_.push_back(Node{std::move(value), Tensor{}, nullptr, requires_grad, false});
    return static_cast<int>(nodes_.size()) - 1;
  }

  void set_backward(int id, std::function<void()> fn) {
    nodes_[static_cast<std::size_t>(id)].backward = std::move(fn);
  }

  const Tensor& value(int id) const { return nodes_[static_cast<std::size_t>(id)].value; }
  bool requires_grad(int id) const { return nodes_[static_cast<std::size_t>(id)].requires_grad; }

  // Lazily allocated zero gradient; marks the node as reached.
  Tensor& grad(int id) {
    Node& n = nodes_[static_cast<std::size_t>(id)];
    if (!n.grad_live) {
      n.grad = Tensor::zeros(n.value.shape());
      n.grad_live = true;
    }
    return n.grad;
  }

  bool grad_live(int id) const { return nodes_[static_cast<std::size_t>(id)].grad_live; }

  void backward(int root) {
    Node& r = nodes_[static_cast<std::size_t>(root)];
    if (r.value.numel() != 1)
      throw std::invalid_argument("backward: root must be scalar");
    grad(root)[0] = 1.0;
    for (int id = root; id >= 0; --id) {
      Node& n = nodes_[static_cast<std::size_t>(id)];
      if (n.backward && n.grad_live && n.requires_grad) n.backward();
    }
  }

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    std::function<void()> backward;
    bool requires_grad;
    bool grad_live;
  };
  std::vector<Node> nodes_;
};

struct Val {
  Tape* tape = nullptr;
  int id = -1;
  const Tensor& value() const { return tape->value(id); }
  Tensor& grad() const { return tape->grad(id); }
  bool rg() const { return tape->requires_grad(id); }
};

inline Val leaf(Tape& t, Tensor v, bool requires_grad = false) {
  return Val{&t, t.add_node(std::move(v), requires_grad)};
}

inline Val constant(Tape& t, Tensor v) { return leaf(t, std::move(v), false); }

namespace detail {

inline void accumulate(Tensor& dst, const Tensor& src) {
  for (std::size_t i = 0; i < dst.numel(); ++i) dst[i] += src[i];
}

inline Val unary(Val a, Tensor out,
                 std::function<void(Tape&, int, int)> bw) {
  Tape& t = *a.tape;
  int id = t.add_node(std::move(out), a.rg());
  if (a.rg())
    t.set_backward(id, [&t, id, ia = a.id, bw = std::move(bw)] { bw(t, id, ia); });
  return Val{&t, id};
}

}  // namespace detail

// ---- elementwise -----------------------------------------------------------

inline Val add(Val a, Val b) {
  if (!a.value().same_shape(b.value()))
    throw std::invalid_argument("add: shape mismatch");
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] += b.value()[i];
  Tape& t = *a.tape;
  int id = t.add_node(std::move(out), a.rg() || b.rg());
  if (t.requires_grad(id))
    t.set_backward(id, [&t, id, ia = a.id, ib = b.id] {
      const Tensor& g = t.grad(id);
      if (t.requires_grad(ia)) detail::accumulate(t.grad(ia), g);
      if (t.requires_grad(ib)) detail::accumulate(t.grad(ib), g);
    });
  return Val{&t, id};
}

inline Val sub(Val a, Val b) {
  if (!a.value().same_shape(b.value()))
    throw std::invalid_argument("sub: shape mismatch");
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] -= b.value()[i];
  Tape& t = *a.tape;
  int id = t.add_node(std::move(out), a.rg() || b.rg());
  if (t.requires_grad(id))
    t.set_backward(id, [&t, id, ia = a.id, ib = b.id] {
      const Tensor& g = t.grad(id);
      if (t.requires_grad(ia)) detail::accumulate(t.grad(ia), g);
      if (t.requires_grad(ib)) {
        Tensor& gb = t.grad(ib);
        for (std::size_t i = 0; i < gb.numel(); ++i) gb[i] -= g[i];
      }
    });
  return Val{&t, id};
}

inline Val mul(Val a, Val b) {
  if (!a.value().same_shape(b.value()))
    throw std::invalid_argument("mul: shape mismatch");
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] *= b.value()[i];
  Tape& t = *a.tape;
  int id = t.add_node(std::move(out), a.rg() || b.rg());
  if (t.requires_grad(id))
    t.set_backward(id, [&t, id, ia = a.id, ib = b.id] {
      const Tensor& g = t.grad(id);
      if (t.requires_grad(ia)) {
        Tensor& ga = t.grad(ia);
        const Tensor& vb = t.value(ib);
        for (std::size_t i = 0; i < ga.numel(); ++i) ga[i] += g[i] * vb[i];
      }
      if (t.requires_grad(ib)) {
        Tensor& gb = t.grad(ib);
        const Tensor& va = t.value(ia);
        for (std::size_t i = 0; i < gb.numel(); ++i) gb[i] += g[i] * va[i];
      }
    });
  return Val{&t, id};
}

inline Val div(Val a, Val b) {
  if (!a.value().same_shape(b.value()))
    throw std::invalid_argument("div: shape mismatch");
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] /= b.value()[i];
  Tape& t = *a.tape;
  int id = t.add_node(std::move(out), a.rg() || b.rg());
  if (t.requires_grad(id))
    t.set_backward(id, [&t, id, ia = a.id, ib = b.id] {
      const Tensor& g = t.grad(id);
      const Tensor& va = t.value(ia);
      const Tensor& vb = t.value(ib);
      if (t.requires_grad(ia)) {
        Tensor& ga = t.grad(ia);
        for (std::size_t i = 0; i < ga.numel(); ++i) ga[i] += g[i] / vb[i];
      }
      if (t.requires_grad(ib)) {
        Tensor& gb = t.grad(ib);
        for (std::size_t i = 0; i < gb.numel(); ++i)
          gb[i] -= g[i] * va[i] / (vb[i] * vb[i]);
      }
    });
  return Val{&t, id};
}

inline Val cmul(Val a, double c) {
  Tensor out = a.value();
  for (auto& x : out.vec()) x *= c;
  return detail::unary(a, std::move(out), [c](Tape& t, int id, int ia) {
    const Tensor& g = t.grad(id);
    Tensor& ga = t.grad(ia);
    for (std::size_t i = 0; i < ga.numel(); ++i) ga[i] += c * g[i];
  });
}

inline Val cadd(Val a, double c) {
  Tensor out = a.value();
  for (auto& x : out.vec()) x += c;
  return detail::unary(a, std::move(out), [](Tape& t, int id, int ia) {
    detail::accumulate(t.grad(ia), t.grad(id));
  });
}

inline Val relu(Val a) {
  Tensor out = a.value();
  for (auto& x : out.vec()) x = x > 0.0 ? x : 0.0;
  return detail::unary(a, std::move(out), [](Tape& t, int id, int ia) {
    const Tensor& g = t.grad(id);
    const Tensor& v = t.value(ia);
    Tensor& ga = t.grad(ia);
    for (std::size_t i = 0; i < ga.numel(); ++i)
      if (v[i] > 0.0) ga[i] += g[i];
  });
}

inline Val tanh_op(Val a) {
  Tensor out = a.value();
  for (auto& x : out.vec()) x = std::tanh(x);
  return detail::unary(a, std::move(out), [](Tape& t, int id, int ia) {
    const Tensor& g = t.grad(id);
    const Tensor& y = t.value(id);
    Tensor& ga = t.grad(ia);
    for (std::size_t i = 0; i < ga.numel(); ++i)
      ga[i] += g[i] * (1.0 - y[i] * y[i]);
  });
}

inline Val sigmoid(Val a) {
  Tensor out = a.value();
  for (auto& x : out.vec()) x = 1.0 / (1.0 + std::exp(-x));
  return detail::unary(a, std::move(out), [](Tape& t, int id, int ia) {
    const Tensor& g = t.grad(id);
    const Tensor& y = t.value(id);
    Tensor& ga = t.grad(ia);
    for (std::size_t i = 0; i < ga.numel(); ++i)
      ga[i] += g[i] * y[i] * (1.0 - y[i]);
  });
}

inline Val exp_op(Val a) {
  Tensor out = a.value();
  for (auto& x : out.vec()) x = std::exp(x);
  return detail::unary(a, std::move(out), [](Tape& t, int id, int ia) {
    const Tensor& g = t.grad(id);
    const Tensor& y = t.value(id);
    Tensor& ga = t.grad(ia);
    for (std::size_t i = 0; i < ga.numel(); ++i) ga[i] += g[i] * y[i];
  });
}

inline Val log_op(Val a) {
  Tensor out = a.value();
  for (auto& x : out.vec()) x = std::log(x);
  return detail::unary(a, std::move(out), [](Tape& t, int id, int ia) {
    const Tensor& g = t.grad(id);
    const Tensor& v = t.value(ia);
    Tensor& ga = t.grad(ia);
    for (std::size_t i = 0; i < ga.numel(); ++i) ga[i] += g[i] / v[i];
  });
}

inline Val sqrt_op(Val a) {
  Tensor out = a.value();
  for (auto& x : out.vec()) x = std::sqrt(x);
  return detail::unary(a, std::move(out), [](Tape& t, int id, int ia) {
    const Tensor& g = t.grad(id);
    const Tensor& y = t.value(id);
    Tensor& ga = t.grad(ia);
    for (std::size_t i = 0; i < ga.numel(); ++i)
      ga[i] += g[i] * 0.5 / y[i];
  });
}

// ---- reductions -------------------------------------------------------------

inline Val vsum(Val a) {
  double s = 0.0;
  for (double v : a.value().vec()) s += v;
  return detail::unary(a, Tensor::scalar(s), [](Tape& t, int id, int ia) {
    const double g = t.grad(id)[0];
    Tensor& ga = t.grad(ia);
    for (auto& x : ga.vec()) x += g;
  });
}

inline Val vmean(Val a) {
  const double inv = 1.0 / static_cast<double>(a.value().numel());
  return cmul(vsum(a), inv);
}

inline Val dot_op(Val a, Val b) {
  if (a.value().numel() != b.value().numel())
    throw std::invalid_argument("dot: size mismatch");
  double s = dot(a.value(), b.value());
  Tape& t = *a.tape;
  int id = t.add_node(Tensor::scalar(s), a.rg() || b.rg());
  if (t.requires_grad(id))
    t.set_backward(id, [&t, id, ia = a.id, ib = b.id] {
      const double g = t.grad(id)[0];
      if (t.requires_grad(ia)) {
        Tensor& ga = t.grad(ia);
        const Tensor& vb = t.value(ib);
        for (std::size_t i = 0; i < ga.numel(); ++i) ga[i] += g * vb[i];
      }
      if (t.requires_grad(ib)) {
        Tensor& gb = t.grad(ib);
        const Tensor& va = t.value(ia);
        for (std::size_t i = 0; i < gb.numel(); ++i) gb[i] += g * va[i];
      }
    });
  return Val{&t, id};
}

// ---- shape ------------------------------------------------------------------

inline Val reshape(Val a, std::vector<int> shape) {
  Tensor out = a.value().reshaped(std::move(shape));
  return detail::unary(a, std::move(out), [](Tape& t, int id, int ia) {
    const Tensor& g = t.grad(id);
    Tensor& ga = t.grad(ia);
    for (std::size_t i = 0; i < ga.numel(); ++i) ga[i] += g[i];
  });
}

// Slice of the last dimension of a 1-d or 2-d tensor.
inline Val slice_last(Val a, int start, int len) {
  const Tensor& v = a.value();
  const int nd = v.ndim();
  if (nd != 1 && nd != 2) throw std::invalid_argument("slice_last: need 1-d/2-d");
  const int cols = v.dim(nd - 1);
  const int rows = nd == 2 ? v.dim(0) : 1;
  if (start < 0 || len <= 0 || start + len > cols)
    throw std::invalid_argument("slice_last: out of range");
  Tensor out(nd == 2 ? std::vector<int>{rows, len} : std::vector<int>{len});
  for (int r = 0; r < rows; ++r)
    for (int i = 0; i < len; ++i)
      out[static_cast<std::size_t>(r) * len + i] =
          v[static_cast<std::size_t>(r) * cols + start + i];
  return detail::unary(a, std::move(out),
                       [start, len, rows, cols](Tape& t, int id, int ia) {
    const Tensor& g = t.grad(id);
    Tensor& ga = t.grad(ia);
    for (int r = 0; r < rows; ++r)
      for (int i = 0; i < len; ++i)
        ga[static_cast<std::size_t>(r) * cols + start + i] +=
            g[static_cast<std::size_t>(r) * len + i];
  });
}

// Concatenate 1-d pieces (or rows of equal width) along the last axis.
inline Val concat_last(const std::vector<Val>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat_last: empty");
  Tape& t = *parts[0].tape;
  int total = 0;
  bool rg = false;
  for (const Val& p : parts) {
    if (p.value().ndim() != 1) throw std::invalid_argument("concat_last: need 1-d");
    total += p.value().dim(0);
    rg = rg || p.rg();
  }
  Tensor out({total});
  int off = 0;
  std::vector<std::pair<int, int>> spans;  // (id, offset)
  for (const Val& p : parts) {
    for (std::size_t i = 0; i < p.value().numel(); ++i) out[off + i] = p.value()[i];
    spans.emplace_back(p.id, off);
    off += static_cast<int>(p.value().numel());
  }
  int id = t.add_node(std::move(out), rg);
  if (rg)
    t.set_backward(id, [&t, id, spans] {
      const Tensor& g = t.grad(id);
      for (auto [pid, o] : spans) {
        if (!t.requires_grad(pid)) continue;
        Tensor& gp = t.grad(pid);
        for (std::size_t i = 0; i < gp.numel(); ++i) gp[i] += g[o + i];
      }
    });
  return Val{&t, id};
}

// Stack equal-length 1-d vectors into a [n, d] matrix.
inline Val stack_rows(const std::vector<Val>& rows) {
  if (rows.empty()) throw std::invalid_argument("stack_rows: empty");
  Tape& t = *rows[0].tape;
  const int d = rows[0].value().dim(0);
  bool rg = false;
  for (const Val& r : rows) {
    if (r.value().ndim() != 1 || r.value().dim(0) != d)
      throw std::invalid_argument("stack_rows: ragged input");
    rg = rg || r.rg();
  }
  const int n = static_cast<int>(rows.size());
  Tensor out({n, d});
  std::vector<int> ids;
  for (int r = 0; r < n; ++r) {
    ids.push_back(rows[static_cast<std::size_t>(r)].id);
    for (int i = 0; i < d; ++i)
      out[static_cast<std::size_t>(r) * d + i] = rows[static_cast<std::size_t>(r)].value()[i];
  }
  int id = t.add_node(std::move(out), rg);
  if (rg)
    t.set_backward(id, [&t, id, ids, d] {
      const Tensor& g = t.grad(id);
      for (std::size_t r = 0; r < ids.size(); ++r) {
        if (!t.requires_grad(ids[r])) continue;
        Tensor& gr = t.grad(ids[r]);
        for (int i = 0; i < d; ++i) gr[i] += g[r * static_cast<std::size_t>(d) + i];
      }
    });
  return Val{&t, id};
}

// ---- linear algebra ---------------------------------------------------------

inline Val matmul(Val a, Val b, bool ta = false, bool tb = false) {
  const Tensor& va = a.value();
  const Tensor& vb = b.value();
  if (va.ndim() != 2 || vb.ndim() != 2)
    throw std::invalid_argument("matmul: need 2-d operands");
  const int m = ta ? va.dim(1) : va.dim(0);
  const int k = ta ? va.dim(0) : va.dim(1);
  const int kb = tb ? vb.dim(1) : vb.dim(0);
  const int n = tb ? vb.dim(0) : vb.dim(1);
  if (k != kb) throw std::invalid_argument("matmul: inner dimension mismatch");

  Tensor out({m, n});
  {
    CMatMap A(va.data(), va.dim(0), va.dim(1));
    CMatMap B(vb.data(), vb.dim(0), vb.dim(1));
    MatMap C(out.data(), m, n);
    if (!ta && !tb) C.noalias() = A * B;
    else if (ta && !tb) C.noalias() = A.transpose() * B;
    else if (!ta && tb) C.noalias() = A * B.transpose();
    else C.noalias() = A.transpose() * B.transpose();
  }
  Tape& t = *a.tape;
  int id = t.add_node(std::move(out), a.rg() || b.rg());
  if (t.requires_grad(id))
    t.set_backward(id, [&t, id, ia = a.id, ib = b.id, ta, tb, m, n] {
      const Tensor& vg = t.grad(id);
      CMatMap G(vg.data(), m, n);
      const Tensor& va2 = t.value(ia);
      const Tensor& vb2 = t.value(ib);
      CMatMap A(va2.data(), va2.dim(0), va2.dim(1));
      CMatMap B(vb2.data(), vb2.dim(0), vb2.dim(1));
      if (t.requires_grad(ia)) {
        Tensor& ga = t.grad(ia);
        MatMap GA(ga.data(), va2.dim(0), va2.dim(1));
        if (!ta && !tb) GA.noalias() += G * B.transpose();
        else if (ta && !tb) GA.noalias() += B * G.transpose();
        else if (!ta && tb) GA.noalias() += G * B;
        else GA.noalias() += B.transpose() * G.transpose();
      }
      if (t.requires_grad(ib)) {
        Tensor& gb = t.grad(ib);
        MatMap GB(gb.data(), vb2.dim(0), vb2.dim(1));
        if (!ta && !tb) GB.noalias() += A.transpose() * G;
        else if (ta && !tb) GB.noalias() += A * G;
        else if (!ta && tb) GB.noalias() += G.transpose() * A;
        else GB.noalias() += G.transpose() * A.transpose();
      }
    });
  return Val{&t, id};
}

// Broadcast-add a row vector [c] to every row of [r, c].
inline Val add_rowvec(Val m, Val v) {
  const Tensor& vm = m.value();
  const Tensor& vv = v.value();
  if (vm.ndim() != 2 || vv.ndim() != 1 || vm.dim(1) != vv.dim(0))
    throw std::invalid_argument("add_rowvec: shape mismatch");
  Tensor out = vm;
  const int r = vm.dim(0), c = vm.dim(1);
  for (int i = 0; i < r; ++i)
    for (int j = 0; j < c; ++j) out[static_cast<std::size_t>(i) * c + j] += vv[j];
  Tape& t = *m.tape;
  int id = t.add_node(std::move(out), m.rg() || v.rg());
  if (t.requires_grad(id))
    t.set_backward(id, [&t, id, im = m.id, iv = v.id, r, c] {
      const Tensor& g = t.grad(id);
      if (t.requires_grad(im)) detail::accumulate(t.grad(im), g);
      if (t.requires_grad(iv)) {
        Tensor& gv = t.grad(iv);
        for (int i = 0; i < r; ++i)
          for (int j = 0; j < c; ++j) gv[j] += g[static_cast<std::size_t>(i) * c + j];
      }
    });
  return Val{&t, id};
}

// Mean over rows of [L, d] -> [d].
inline Val mean_rows(Val m) {
  const Tensor& vm = m.value();
  if (vm.ndim() != 2) throw std::invalid_argument("mean_rows: need 2-d");
  const int L = vm.dim(0), d = vm.dim(1);
  Tensor out({d});
  for (int l = 0; l < L; ++l)
    for (int j = 0; j < d; ++j) out[j] += vm[static_cast<std::size_t>(l) * d + j];
  const double inv = 1.0 / L;
  for (auto& x : out.vec()) x *= inv;
  return detail::unary(m, std::move(out), [L, d, inv](Tape& t, int id, int ia) {
    const Tensor& g = t.grad(id);
    Tensor& ga = t.grad(ia);
    for (int l = 0; l < L; ++l)
      for (int j = 0; j < d; ++j) ga[static_cast<std::size_t>(l) * d + j] += g[j] * inv;
  });
}

// ---- softmax family ---------------------------------------------------------

inline Val softmax_vec(Val a) {
  const Tensor& v = a.value();
  if (v.ndim() != 1) throw std::invalid_argument("softmax_vec: need 1-d");
  double mx = v[0];
  for (std::size_t i = 1; i < v.numel(); ++i) mx = std::max(mx, v[i]);
  Tensor out({v.dim(0)});
  double z = 0.0;
  for (std::size_t i = 0; i < v.numel(); ++i) z += (out[i] = std::exp(v[i] - mx));
  for (auto& x : out.vec()) x /= z;
  return detail::unary(a, std::move(out), [](Tape& t, int id, int ia) {
    const Tensor& g = t.grad(id);
    const Tensor& y = t.value(id);
    double gy = 0.0;
    for (std::size_t i = 0; i < y.numel(); ++i) gy += g[i] * y[i];
    Tensor& ga = t.grad(ia);
    for (std::size_t i = 0; i < ga.numel(); ++i) ga[i] += y[i] * (g[i] - gy);
  });
}

// Row-wise log-sum-exp of [r, c] -> [r].
inline Val lse_rows(Val a) {
  const Tensor& v = a.value();
  if (v.ndim() != 2) throw std::invalid_argument("lse_rows: need 2-d");
  const int r = v.dim(0), c = v.dim(1);
  Tensor out({r});
  for (int i = 0; i < r; ++i) {
    const double* row = v.data() + static_cast<std::size_t>(i) * c;
    double mx = row[0];
    for (int j = 1; j < c; ++j) mx = std::max(mx, row[j]);
    double z = 0.0;
    for (int j = 0; j < c; ++j) z += std::exp(row[j] - mx);
    out[i] = mx + std::log(z);
  }
  return detail::unary(a, std::move(out), [r, c](Tape& t, int id, int ia) {
    const Tensor& g = t.grad(id);
    const Tensor& v2 = t.value(ia);
    const Tensor& y = t.value(id);
    Tensor& ga = t.grad(ia);
    for (int i = 0; i < r; ++i)
      for (int j = 0; j < c; ++j)
        ga[static_cast<std::size_t>(i) * c + j] +=
            g[i] * std::exp(v2[static_cast<std::size_t>(i) * c + j] - y[i]);
  });
}

// ---- norms ------------------------------------------------------------------

// y = x / (||x|| + eps)
inline Val l2_normalize(Val a, double eps = 1e-8) {
  const Tensor& v = a.value();
  const double n = l2norm(v);
  const double s = n + eps;
  Tensor out = v;
  for (auto& x : out.vec()) x /= s;
  return detail::unary(a, std::move(out), [n, s](Tape& t, int id, int ia) {
    const Tensor& g = t.grad(id);
    const Tensor& x = t.value(ia);
    Tensor& ga = t.grad(ia);
    double xg = 0.0;
    for (std::size_t i = 0; i < x.numel(); ++i) xg += x[i] * g[i];
    const double denom = n > 0.0 ? n * s * s : s * s;
    for (std::size_t i = 0; i < ga.numel(); ++i)
      ga[i] += g[i] / s - x[i] * xg / denom;
  });
}

// cosine with the epsilon-guarded norms used by the regularization losses
inline Val cosine(Val u, Val v, double eps = 1e-8) {
  Val uv = dot_op(u, v);
  Val nu = cadd(sqrt_op(dot_op(u, u)), eps);
  Val nv = cadd(sqrt_op(dot_op(v, v)), eps);
  return div(uv, mul(nu, nv));
}

// ---- convolutions (batched, NCHW / NCL) -------------------------------------

namespace detail {

inline int conv_out(int in, int k, int stride, int pad) {
  return (in + 2 * pad - k) / stride + 1;
}

inline void im2col(const double* x, int C, int H, int W, int k, int stride,
                   int pad, double* cols /* [C*k*k, OH*OW] */) {
  const int OH = conv_out(H, k, stride, pad);
  const int OW = conv_out(W, k, stride, pad);
  const int span = OH * OW;
  for (int c = 0; c < C; ++c)
    for (int ky = 0; ky < k; ++ky)
      for (int kx = 0; kx < k; ++kx) {
        double* dst = cols + (static_cast<std::size_t>(c) * k * k + ky * k + kx) * span;
        for (int oy = 0; oy < OH; ++oy) {
          const int iy = oy * stride - pad + ky;
          for (int ox = 0; ox < OW; ++ox) {
            const int ix = ox * stride - pad + kx;
            dst[oy * OW + ox] =
                (iy >= 0 && iy < H && ix >= 0 && ix < W)
                    ? x[(static_cast<std::size_t>(c) * H + iy) * W + ix]
                    : 0.0;
          }
        }
      }
}

inline void col2im(const double* cols, int C, int H, int W, int k, int stride,
                   int pad, double* dx /* accumulated */) {
  const int OH = conv_out(H, k, stride, pad);
  const int OW = conv_out(W, k, stride, pad);
  const int span = OH * OW;
  for (int c = 0; c < C; ++c)
    for (int ky = 0; ky < k; ++ky)
      for (int kx = 0; kx < k; ++kx) {
        const double* src = cols + (static_cast<std::size_t>(c) * k * k + ky * k + kx) * span;
        for (int oy = 0; oy < OH; ++oy) {
          const int iy = oy * stride - pad + ky;
          if (iy < 0 || iy >= H) continue;
          for (int ox = 0; ox < OW; ++ox) {
            const int ix = ox * stride - pad + kx;
            if (ix < 0 || ix >= W) continue;
            dx[(static_cast<std::size_t>(c) * H + iy) * W + ix] += src[oy * OW + ox];
          }
        }
      }
}

}  // namespace detail

// x: [N,C,H,W], w: [OC,C,k,k], b: [OC] -> [N,OC,OH,OW]
inline Val conv2d(Val x, Val w, Val b, int stride, int pad) {
  const Tensor& vx = x.value();
  const Tensor& vw = w.value();
  const Tensor& vb = b.value();
  if (vx.ndim() != 4 || vw.ndim() != 4 || vb.ndim() != 1)
    throw std::invalid_argument("conv2d: bad ranks");
  const int N = vx.dim(0), C = vx.dim(1), H = vx.dim(2), W = vx.dim(3);
  const int OC = vw.dim(0), k = vw.dim(2);
  if (vw.dim(1) != C || vw.dim(3) != k || vb.dim(0) != OC)
    throw std::invalid_argument("conv2d: shape mismatch");
  const int OH = detail::conv_out(H, k, stride, pad);
  const int OW = detail::conv_out(W, k, stride, pad);
  const int ckk = C * k * k, span = OH * OW;

  Tensor out({N, OC, OH, OW});
  Tensor cols({N, ckk, span});
  for (int n = 0; n < N; ++n) {
    double* cn = cols.data() + static_cast<std::size_t>(n) * ckk * span;
    detail::im2col(vx.data() + static_cast<std::size_t>(n) * C * H * W, C, H, W, k,
                   stride, pad, cn);
    CMatMap Wm(vw.data(), OC, ckk);
    CMatMap Cm(cn, ckk, span);
    MatMap Om(out.data() + static_cast<std::size_t>(n) * OC * span, OC, span);
    Om.noalias() = Wm * Cm;
    for (int oc = 0; oc < OC; ++oc)
      Om.row(oc).array() += vb[oc];
  }

  Tape& t = *x.tape;
  int id = t.add_node(std::move(out), x.rg() || w.rg() || b.rg());
  if (t.requires_grad(id))
    t.set_backward(id, [&t, id, ix = x.id, iw = w.id, ib = b.id,
                        cols = std::move(cols), N, C, H, W, OC, k, stride, pad,
                        ckk, span] {
      const Tensor& g = t.grad(id);
      const Tensor& vw2 = t.value(iw);
      for (int n = 0; n < N; ++n) {
        CMatMap G(g.data() + static_cast<std::size_t>(n) * OC * span, OC, span);
        const double* cn = cols.data() + static_cast<std::size_t>(n) * ckk * span;
        if (t.requires_grad(iw)) {
          MatMap GW(t.grad(iw).data(), OC, ckk);
          CMatMap Cm(cn, ckk, span);
          GW.noalias() += G * Cm.transpose();
        }
        if (t.requires_grad(ib)) {
          Tensor& gb = t.grad(ib);
          for (int oc = 0; oc < OC; ++oc) gb[oc] += G.row(oc).sum();
        }
        if (t.requires_grad(ix)) {
          RowMat dcols(ckk, span);
          CMatMap Wm(vw2.data(), OC, ckk);
          dcols.noalias() = Wm.transpose() * G;
          detail::col2im(dcols.data(), C, H, W, k, stride, pad,
                         t.grad(ix).data() + static_cast<std::size_t>(n) * C * H * W);
        }
      }
    });
  return Val{&t, id};
}

// x: [N,C,L], w: [OC,C,k], b: [OC] -> [N,OC,OL]
inline Val conv1d(Val x, Val w, Val b, int stride, int pad) {
  const Tensor& vx = x.value();
  const Tensor& vw = w.value();
  const Tensor& vb = b.value();
  if (vx.ndim() != 3 || vw.ndim() != 3 || vb.ndim() != 1)
    throw std::invalid_argument("conv1d: bad ranks");
  const int N = vx.dim(0), C = vx.dim(1), L = vx.dim(2);
  const int OC = vw.dim(0), k = vw.dim(2);
  if (vw.dim(1) != C || vb.dim(0) != OC)
    throw std::invalid_argument("conv1d: shape mismatch");
  const int OL = detail::conv_out(L, k, stride, pad);
  const int ck = C * k;

  Tensor out({N, OC, OL});
  Tensor cols({N, ck, OL});
  for (int n = 0; n < N; ++n) {
    double* cn = cols.data() + static_cast<std::size_t>(n) * ck * OL;
    const double* xn = vx.data() + static_cast<std::size_t>(n) * C * L;
    for (int c = 0; c < C; ++c)
      for (int kk = 0; kk < k; ++kk) {
        double* dst = cn + (static_cast<std::size_t>(c) * k + kk) * OL;
        for (int o = 0; o < OL; ++o) {
          const int i = o * stride - pad + kk;
          dst[o] = (i >= 0 && i < L) ? xn[static_cast<std::size_t>(c) * L + i] : 0.0;
        }
      }
    CMatMap Wm(vw.data(), OC, ck);
    CMatMap Cm(cn, ck, OL);
    MatMap Om(out.data() + static_cast<std::size_t>(n) * OC * OL, OC, OL);
    Om.noalias() = Wm * Cm;
    for (int oc = 0; oc < OC; ++oc) Om.row(oc).array() += vb[oc];
  }

  Tape& t = *x.tape;
  int id = t.add_node(std::move(out), x.rg() || w.rg() || b.rg());
  if (t.requires_grad(id))
    t.set_backward(id, [&t, id, ix = x.id, iw = w.id, ib = b.id,
                        cols = std::move(cols), N, C, L, OC, k, stride, pad, ck] {
      const int OL = detail::conv_out(L, k, stride, pad);
      const Tensor& g = t.grad(id);
      const Tensor& vw2 = t.value(iw);
      for (int n = 0; n < N; ++n) {
        CMatMap G(g.data() + static_cast<std::size_t>(n) * OC * OL, OC, OL);
        const double* cn = cols.data() + static_cast<std::size_t>(n) * ck * OL;
        if (t.requires_grad(iw)) {
          MatMap GW(t.grad(iw).data(), OC, ck);
          CMatMap Cm(cn, ck, OL);
          GW.noalias() += G * Cm.transpose();
        }
        if (t.requires_grad(ib)) {
          Tensor& gb = t.grad(ib);
          for (int oc = 0; oc < OC; ++oc) gb[oc] += G.row(oc).sum();
        }
        if (t.requires_grad(ix)) {
          RowMat dcols(ck, OL);
          CMatMap Wm(vw2.data(), OC, ck);
          dcols.noalias() = Wm.transpose() * G;
          double* dx = t.grad(ix).data() + static_cast<std::size_t>(n) * C * L;
          for (int c = 0; c < C; ++c)
            for (int kk = 0; kk < k; ++kk)
              for (int o = 0; o < OL; ++o) {
                const int i = o * stride - pad + kk;
                if (i >= 0 && i < L)
                  dx[static_cast<std::size_t>(c) * L + i] +=
                      dcols(c * k + kk, o);
              }
        }
      }
    });
  return Val{&t, id};
}

// Non-overlapping average pooling, [N,C,H,W] -> [N,C,H/k,W/k].
inline Val avgpool2d(Val x, int k) {
  const Tensor& v = x.value();
  if (v.ndim() != 4) throw std::invalid_argument("avgpool2d: need 4-d");
  const int N = v.dim(0), C = v.dim(1), H = v.dim(2), W = v.dim(3);
  if (H % k || W % k) throw std::invalid_argument("avgpool2d: size not divisible");
  const int OH = H / k, OW = W / k;
  const double inv = 1.0 / (k * k);
  Tensor out({N, C, OH, OW});
  for (int n = 0; n < N; ++n)
    for (int c = 0; c < C; ++c)
      for (int oy = 0; oy < OH; ++oy)
        for (int ox = 0; ox < OW; ++ox) {
          double s = 0.0;
          for (int dy = 0; dy < k; ++dy)
            for (int dx = 0; dx < k; ++dx)
              s += v[((static_cast<std::size_t>(n) * C + c) * H + oy * k + dy) * W +
                     ox * k + dx];
          out[((static_cast<std::size_t>(n) * C + c) * OH + oy) * OW + ox] = s * inv;
        }
  return detail::unary(x, std::move(out),
                       [N, C, H, W, OH, OW, k, inv](Tape& t, int id, int ia) {
    const Tensor& g = t.grad(id);
    Tensor& ga = t.grad(ia);
    for (int n = 0; n < N; ++n)
      for (int c = 0; c < C; ++c)
        for (int oy = 0; oy < OH; ++oy)
          for (int ox = 0; ox < OW; ++ox) {
            const double gv =
                g[((static_cast<std::size_t>(n) * C + c) * OH + oy) * OW + ox] * inv;
            for (int dy = 0; dy < k; ++dy)
              for (int dx = 0; dx < k; ++dx)
                ga[((static_cast<std::size_t>(n) * C + c) * H + oy * k + dy) * W +
                   ox * k + dx] += gv;
          }
  });
}

// Nearest-neighbour 2x upsample, [N,C,H,W] -> [N,C,2H,2W].
inline Val upsample2x(Val x) {
  const Tensor& v = x.value();
  if (v.ndim() != 4) throw std::invalid_argument("upsample2x: need 4-d");
  const int N = v.dim(0), C = v.dim(1), H = v.dim(2), W = v.dim(3);
  Tensor out({N, C, 2 * H, 2 * W});
  for (int n = 0; n < N; ++n)
    for (int c = 0; c < C; ++c)
      for (int y = 0; y < 2 * H; ++y)
        for (int x2 = 0; x2 < 2 * W; ++x2)
          out[((static_cast<std::size_t>(n) * C + c) * 2 * H + y) * 2 * W + x2] =
              v[((static_cast<std::size_t>(n) * C + c) * H + y / 2) * W + x2 / 2];
  return detail::unary(x, std::move(out), [N, C, H, W](Tape& t, int id, int ia) {
    const Tensor& g = t.grad(id);
    Tensor& ga = t.grad(ia);
    for (int n = 0; n < N; ++n)
      for (int c = 0; c < C; ++c)
        for (int y = 0; y < 2 * H; ++y)
          for (int x2 = 0; x2 < 2 * W; ++x2)
            ga[((static_cast<std::size_t>(n) * C + c) * H + y / 2) * W + x2 / 2] +=
                g[((static_cast<std::size_t>(n) * C + c) * 2 * H + y) * 2 * W + x2];
  });
}

// Broadcast per-sample code [N,K] to [N,K,H,W].
inline Val tile_channels(Val code, int H, int W) {
  const Tensor& v = code.value();
  if (v.ndim() != 2) throw std::invalid_argument("tile_channels: need 2-d");
  const int N = v.dim(0), K = v.dim(1);
  Tensor out({N, K, H, W});
  for (int n = 0; n < N; ++n)
    for (int c = 0; c < K; ++c) {
      const double val = v[static_cast<std::size_t>(n) * K + c];
      double* dst = out.data() + (static_cast<std::size_t>(n) * K + c) * H * W;
      std::fill(dst, dst + static_cast<std::size_t>(H) * W, val);
    }
  return detail::unary(code, std::move(out), [N, K, H, W](Tape& t, int id, int ia) {
    const Tensor& g = t.grad(id);
    Tensor& ga = t.grad(ia);
    for (int n = 0; n < N; ++n)
      for (int c = 0; c < K; ++c) {
        double s = 0.0;
        const double* src = g.data() + (static_cast<std::size_t>(n) * K + c) * H * W;
        for (int i = 0; i < H * W; ++i) s += src[i];
        ga[static_cast<std::size_t>(n) * K + c] += s;
      }
  });
}

// Concatenate along the channel axis of [N,C,H,W] tensors.
inline Val concat_channels(Val a, Val b) {
  const Tensor& va = a.value();
  const Tensor& vb = b.value();
  if (va.ndim() != 4 || vb.ndim() != 4 || va.dim(0) != vb.dim(0) ||
      va.dim(2) != vb.dim(2) || va.dim(3) != vb.dim(3))
    throw std::invalid_argument("concat_channels: shape mismatch");
  const int N = va.dim(0), Ca = va.dim(1), Cb = vb.dim(1);
  const int H = va.dim(2), W = va.dim(3);
  const std::size_t plane = static_cast<std::size_t>(H) * W;
  Tensor out({N, Ca + Cb, H, W});
  for (int n = 0; n < N; ++n) {
    std::copy_n(va.data() + n * Ca * plane, Ca * plane,
                out.data() + static_cast<std::size_t>(n) * (Ca + Cb) * plane);
    std::copy_n(vb.data() + n * Cb * plane, Cb * plane,
                out.data() + (static_cast<std::size_t>(n) * (Ca + Cb) + Ca) * plane);
  }
  Tape& t = *a.tape;
  int id = t.add_node(std::move(out), a.rg() || b.rg());
  if (t.requires_grad(id))
    t.set_backward(id, [&t, id, ia = a.id, ib = b.id, N, Ca, Cb, plane] {
      const Tensor& g = t.grad(id);
      for (int n = 0; n < N; ++n) {
        if (t.requires_grad(ia)) {
          double* ga = t.grad(ia).data() + n * Ca * plane;
          const double* src = g.data() + static_cast<std::size_t>(n) * (Ca + Cb) * plane;
          for (std::size_t i = 0; i < Ca * plane; ++i) ga[i] += src[i];
        }
        if (t.requires_grad(ib)) {
          double* gb = t.grad(ib).data() + n * Cb * plane;
          const double* src =
              g.data() + (static_cast<std::size_t>(n) * (Ca + Cb) + Ca) * plane;
          for (std::size_t i = 0; i < Cb * plane; ++i) gb[i] += src[i];
        }
      }
    });
  return Val{&t, id};
}

// Spatial crop of [N,C,H,W].
inline Val crop2d(Val x, int y0, int x0, int h, int w) {
  const Tensor& v = x.value();
  if (v.ndim() != 4) throw std::invalid_argument("crop2d: need 4-d");
  const int N = v.dim(0), C = v.dim(1), H = v.dim(2), W = v.dim(3);
  if (y0 < 0 || x0 < 0 || y0 + h > H || x0 + w > W)
    throw std::invalid_argument("crop2d: out of range");
  Tensor out({N, C, h, w});
  for (int n = 0; n < N; ++n)
    for (int c = 0; c < C; ++c)
      for (int y = 0; y < h; ++y)
        for (int xx = 0; xx < w; ++xx)
          out[((static_cast<std::size_t>(n) * C + c) * h + y) * w + xx] =
              v[((static_cast<std::size_t>(n) * C + c) * H + y0 + y) * W + x0 + xx];
  return detail::unary(x, std::move(out),
                       [N, C, H, W, y0, x0, h, w](Tape& t, int id, int ia) {
    const Tensor& g = t.grad(id);
    Tensor& ga = t.grad(ia);
    for (int n = 0; n < N; ++n)
      for (int c = 0; c < C; ++c)
        for (int y = 0; y < h; ++y)
          for (int xx = 0; xx < w; ++xx)
            ga[((static_cast<std::size_t>(n) * C + c) * H + y0 + y) * W + x0 + xx] +=
                g[((static_cast<std::size_t>(n) * C + c) * h + y) * w + xx];
  });
}

// ---- composites --------------------------------------------------------------

inline Val mse(Val a, Val b) {
  Val d = sub(a, b);
  return vmean(mul(d, d));
}

}  // namespace cdrl::ag
