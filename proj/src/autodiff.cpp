#include "uncplan/autodiff.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <limits>
#include <stdexcept>

#if defined(__GLIBC__)
#include <malloc.h>
#endif

namespace uncplan::ad {

namespace {

#if defined(__GLIBC__)
// Tapes allocate and free large node vectors every training step; without
// this glibc hands the pages back to the kernel each time and the process
// spends more time faulting than computing.
struct MallocTune {
  MallocTune() {
    mallopt(M_MMAP_MAX, 0);
    mallopt(M_TRIM_THRESHOLD, 1 << 30);
  }
} g_malloc_tune;
#endif
using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using CMap = Eigen::Map<const RowMat>;
using MMap = Eigen::Map<RowMat>;

CMap vmap(const Tensor& t) { return CMap(t.values.data(), t.rows, t.cols); }
CMap gmap_c(const Tensor& t) { return CMap(t.grad.data(), t.rows, t.cols); }
MMap gmap(Tensor& t) { return MMap(t.grad.data(), t.rows, t.cols); }

bool g_perturb = false;

void check(bool ok, const char* msg) {
  if (!ok) throw std::invalid_argument(msg);
}
}  // namespace

void set_perturb_backward(bool on) { g_perturb = on; }
bool perturb_backward() { return g_perturb; }

Tape::Ref Tape::push(Node n) {
  nodes_.push_back(std::move(n));
  return static_cast<Ref>(nodes_.size() - 1);
}

Tape::Ref Tape::leaf(Tensor* t) {
  Node n;
  n.op = Op::kLeaf;
  n.external = t;
  n.out = *t;  // copy of values; grads flow back to the external tensor
  n.out.requires_grad = t->requires_grad;
  return push(std::move(n));
}

Tape::Ref Tape::constant(Tensor t) {
  Node n;
  n.op = Op::kConst;
  n.out = std::move(t);
  n.out.requires_grad = false;
  return push(std::move(n));
}

Tape::Ref Tape::zeros(int rows, int cols) { return constant(Tensor(rows, cols)); }

Tape::Ref Tape::matmul(Ref a, Ref b) {
  const Tensor& ta = nodes_[a].out;
  const Tensor& tb = nodes_[b].out;
  check(ta.cols == tb.rows, "matmul: inner dimension mismatch");
  Node n;
  n.op = Op::kMatmul;
  n.a = a;
  n.b = b;
  n.out = Tensor(ta.rows, tb.cols);
  n.out.requires_grad = ta.requires_grad || tb.requires_grad;
  MMap(n.out.values.data(), n.out.rows, n.out.cols).noalias() = vmap(ta) * vmap(tb);
  return push(std::move(n));
}

Tape::Ref Tape::matmul_nt(Ref a, Ref b) {
  const Tensor& ta = nodes_[a].out;
  const Tensor& tb = nodes_[b].out;
  check(ta.cols == tb.cols, "matmul_nt: inner dimension mismatch");
  Node n;
  n.op = Op::kMatmulNT;
  n.a = a;
  n.b = b;
  n.out = Tensor(ta.rows, tb.rows);
  n.out.requires_grad = ta.requires_grad || tb.requires_grad;
  MMap(n.out.values.data(), n.out.rows, n.out.cols).noalias() = vmap(ta) * vmap(tb).transpose();
  return push(std::move(n));
}

Tape::Ref Tape::add(Ref a, Ref b) {
  const Tensor& ta = nodes_[a].out;
  const Tensor& tb = nodes_[b].out;
  check(ta.rows == tb.rows && ta.cols == tb.cols, "add: shape mismatch");
  Node n;
  n.op = Op::kAdd;
  n.a = a;
  n.b = b;
  n.out = ta;
  n.out.grad.clear();
  n.out.requires_grad = ta.requires_grad || tb.requires_grad;
  for (int i = 0; i < n.out.numel(); ++i) n.out.values[i] += tb.values[i];
  return push(std::move(n));
}

Tape::Ref Tape::add_rowvec(Ref a, Ref v) {
  const Tensor& ta = nodes_[a].out;
  const Tensor& tv = nodes_[v].out;
  check(tv.rows == 1 && tv.cols == ta.cols, "add_rowvec: bias shape mismatch");
  Node n;
  n.op = Op::kAddRowVec;
  n.a = a;
  n.b = v;
  n.out = ta;
  n.out.grad.clear();
  n.out.requires_grad = ta.requires_grad || tv.requires_grad;
  for (int r = 0; r < ta.rows; ++r) {
    for (int c = 0; c < ta.cols; ++c) n.out.at(r, c) += tv.values[c];
  }
  return push(std::move(n));
}

Tape::Ref Tape::hadamard(Ref a, Ref b) {
  const Tensor& ta = nodes_[a].out;
  const Tensor& tb = nodes_[b].out;
  check(ta.rows == tb.rows && ta.cols == tb.cols, "hadamard: shape mismatch");
  Node n;
  n.op = Op::kHadamard;
  n.a = a;
  n.b = b;
  n.out = ta;
  n.out.grad.clear();
  n.out.requires_grad = ta.requires_grad || tb.requires_grad;
  for (int i = 0; i < n.out.numel(); ++i) n.out.values[i] *= tb.values[i];
  return push(std::move(n));
}

Tape::Ref Tape::affine(Ref a, double mul, double off) {
  Node n;
  n.op = Op::kAffine;
  n.a = a;
  n.mul = mul;
  n.off = off;
  n.out = nodes_[a].out;
  n.out.grad.clear();
  for (double& x : n.out.values) x = mul * x + off;
  return push(std::move(n));
}

Tape::Ref Tape::sigmoid(Ref a) {
  Node n;
  n.op = Op::kSigmoid;
  n.a = a;
  n.out = nodes_[a].out;
  n.out.grad.clear();
  for (double& x : n.out.values) x = 1.0 / (1.0 + std::exp(-x));
  return push(std::move(n));
}

Tape::Ref Tape::tanh_(Ref a) {
  Node n;
  n.op = Op::kTanh;
  n.a = a;
  n.out = nodes_[a].out;
  n.out.grad.clear();
  for (double& x : n.out.values) x = std::tanh(x);
  return push(std::move(n));
}

Tape::Ref Tape::relu(Ref a) {
  Node n;
  n.op = Op::kRelu;
  n.a = a;
  n.out = nodes_[a].out;
  n.out.grad.clear();
  for (double& x : n.out.values) x = x > 0.0 ? x : 0.0;
  return push(std::move(n));
}

Tape::Ref Tape::log_(Ref a) {
  Node n;
  n.op = Op::kLog;
  n.a = a;
  n.out = nodes_[a].out;
  n.out.grad.clear();
  for (double& x : n.out.values) x = std::log(x);
  return push(std::move(n));
}

Tape::Ref Tape::concat_cols(Ref a, Ref b) {
  const Tensor& ta = nodes_[a].out;
  const Tensor& tb = nodes_[b].out;
  check(ta.rows == tb.rows, "concat_cols: row mismatch");
  Node n;
  n.op = Op::kConcatCols;
  n.a = a;
  n.b = b;
  n.out = Tensor(ta.rows, ta.cols + tb.cols);
  n.out.requires_grad = ta.requires_grad || tb.requires_grad;
  for (int r = 0; r < ta.rows; ++r) {
    for (int c = 0; c < ta.cols; ++c) n.out.at(r, c) = ta.at(r, c);
    for (int c = 0; c < tb.cols; ++c) n.out.at(r, ta.cols + c) = tb.at(r, c);
  }
  return push(std::move(n));
}

Tape::Ref Tape::slice_cols(Ref a, int c0, int c1) {
  const Tensor& ta = nodes_[a].out;
  check(0 <= c0 && c0 < c1 && c1 <= ta.cols, "slice_cols: bad range");
  Node n;
  n.op = Op::kSliceCols;
  n.a = a;
  n.ints = {c0, c1};
  n.out = Tensor(ta.rows, c1 - c0);
  n.out.requires_grad = ta.requires_grad;
  for (int r = 0; r < ta.rows; ++r) {
    for (int c = c0; c < c1; ++c) n.out.at(r, c - c0) = ta.at(r, c);
  }
  return push(std::move(n));
}

Tape::Ref Tape::gather_rows(Ref a, std::vector<int> index) {
  const Tensor& ta = nodes_[a].out;
  Node n;
  n.op = Op::kGatherRows;
  n.a = a;
  n.out = Tensor(static_cast<int>(index.size()), ta.cols);
  n.out.requires_grad = ta.requires_grad;
  for (std::size_t r = 0; r < index.size(); ++r) {
    check(index[r] >= 0 && index[r] < ta.rows, "gather_rows: index out of range");
    for (int c = 0; c < ta.cols; ++c) n.out.at(static_cast<int>(r), c) = ta.at(index[r], c);
  }
  n.ints = std::move(index);
  return push(std::move(n));
}

Tape::Ref Tape::gated_gather(Ref own1, Ref peer1, Ref b1, Ref own2, Ref peer2, Ref b2,
                             std::vector<int> idx) {
  const Tensor& to1 = nodes_[own1].out;
  const Tensor& tp1 = nodes_[peer1].out;
  const Tensor& tb1 = nodes_[b1].out;
  const Tensor& to2 = nodes_[own2].out;
  const Tensor& tp2 = nodes_[peer2].out;
  const Tensor& tb2 = nodes_[b2].out;
  const int rows = to1.rows;
  const int cols = to1.cols;
  check(static_cast<int>(idx.size()) == rows, "gated_gather: index length mismatch");
  check(tp1.rows == rows && tp1.cols == cols && to2.rows == rows && to2.cols == cols &&
            tp2.rows == rows && tp2.cols == cols,
        "gated_gather: operand shape mismatch");
  check(tb1.rows == 1 && tb1.cols == cols && tb2.rows == 1 && tb2.cols == cols,
        "gated_gather: bias shape mismatch");
  Node n;
  n.op = Op::kGatedGather;
  n.srcs = {own1, peer1, b1, own2, peer2, b2};
  n.out = Tensor(rows, cols);
  n.out.requires_grad = to1.requires_grad || tp1.requires_grad || tb1.requires_grad ||
                        to2.requires_grad || tp2.requires_grad || tb2.requires_grad;
  Tensor lin(rows, cols), sig(rows, cols);
  {
    MMap lm(lin.values.data(), rows, cols);
    MMap sm(sig.values.data(), rows, cols);
    for (int r = 0; r < rows; ++r) {
      const int src = idx[r];
      check(src >= 0 && src < rows, "gated_gather: index out of range");
      lm.row(r) = vmap(to1).row(r) + vmap(tp1).row(src) + vmap(tb1).row(0);
      sm.row(r) = vmap(to2).row(r) + vmap(tp2).row(src) + vmap(tb2).row(0);
    }
    sm.array() = 1.0 / (1.0 + (-sm.array()).exp());
    MMap(n.out.values.data(), rows, cols).array() = lm.array() * sm.array();
  }
  n.aux.push_back(std::move(lin));
  n.aux.push_back(std::move(sig));
  n.ints = std::move(idx);
  return push(std::move(n));
}

Tape::Ref Tape::gru_cell(Ref input, Ref h, Ref wz, Ref uz, Ref bz, Ref wr, Ref ur, Ref br,
                         Ref wc, Ref uc, Ref bc) {
  const Tensor& tx = nodes_[input].out;
  const Tensor& th = nodes_[h].out;
  const Tensor& twz = nodes_[wz].out;
  const int rows = tx.rows;
  const int hidden = twz.rows;
  check(th.rows == rows && th.cols == hidden, "gru_cell: state shape mismatch");
  check(twz.cols == tx.cols, "gru_cell: input weight shape mismatch");
  Node n;
  n.op = Op::kGruCell;
  n.srcs = {input, h, wz, uz, bz, wr, ur, br, wc, uc, bc};
  n.out = Tensor(rows, hidden);
  n.out.requires_grad = false;
  for (Ref s : n.srcs) n.out.requires_grad = n.out.requires_grad || nodes_[s].out.requires_grad;

  auto pre = [&](Ref w, Ref u, Ref b, const Tensor& state) {
    Tensor a(rows, hidden);
    MMap m(a.values.data(), rows, hidden);
    m.noalias() = vmap(tx) * vmap(nodes_[w].out).transpose() +
                  vmap(state) * vmap(nodes_[u].out).transpose();
    m.rowwise() += vmap(nodes_[b].out).row(0);
    return a;
  };
  auto vsigmoid = [&](Tensor& t) {
    MMap m(t.values.data(), rows, hidden);
    m.array() = 1.0 / (1.0 + (-m.array()).exp());
  };

  Tensor z = pre(wz, uz, bz, th);
  vsigmoid(z);
  Tensor rg = pre(wr, ur, br, th);
  vsigmoid(rg);
  Tensor rh(rows, hidden);
  MMap(rh.values.data(), rows, hidden).array() =
      CMap(rg.values.data(), rows, hidden).array() * vmap(th).array();
  Tensor cand = pre(wc, uc, bc, rh);
  {
    // tanh(x) = 2*sigmoid(2x) - 1 via the vectorized exp
    MMap m(cand.values.data(), rows, hidden);
    m.array() = 2.0 / (1.0 + (-2.0 * m.array()).exp()) - 1.0;
  }

  {
    MMap m(n.out.values.data(), rows, hidden);
    auto za = CMap(z.values.data(), rows, hidden).array();
    m.array() = (1.0 - za) * CMap(cand.values.data(), rows, hidden).array() +
                za * vmap(th).array();
  }
  n.aux.push_back(std::move(z));
  n.aux.push_back(std::move(rg));
  n.aux.push_back(std::move(cand));
  return push(std::move(n));
}

Tape::Ref Tape::sum_all(Ref a) {
  Node n;
  n.op = Op::kSumAll;
  n.a = a;
  n.out = Tensor(1, 1);
  n.out.requires_grad = nodes_[a].out.requires_grad;
  double s = 0.0;
  for (double x : nodes_[a].out.values) s += x;
  n.out.values[0] = s;
  return push(std::move(n));
}

Tape::Ref Tape::softmax_rows(Ref a, std::vector<std::uint8_t> col_mask) {
  const Tensor& ta = nodes_[a].out;
  check(col_mask.empty() || static_cast<int>(col_mask.size()) == ta.cols,
        "softmax_rows: mask size mismatch");
  Node n;
  n.op = Op::kSoftmaxRows;
  n.a = a;
  n.out = Tensor(ta.rows, ta.cols);
  n.out.requires_grad = ta.requires_grad;
  auto active = [&](int c) { return col_mask.empty() || col_mask[c] != 0; };
  for (int r = 0; r < ta.rows; ++r) {
    double mx = -std::numeric_limits<double>::infinity();
    for (int c = 0; c < ta.cols; ++c) {
      if (active(c)) mx = std::max(mx, ta.at(r, c));
    }
    double z = 0.0;
    for (int c = 0; c < ta.cols; ++c) {
      if (active(c)) z += std::exp(ta.at(r, c) - mx);
    }
    for (int c = 0; c < ta.cols; ++c) {
      n.out.at(r, c) = active(c) ? std::exp(ta.at(r, c) - mx) / z : 0.0;
    }
  }
  n.mask = std::move(col_mask);
  return push(std::move(n));
}

Tape::Ref Tape::cross_entropy(Ref logits, std::vector<int> labels,
                              std::vector<std::uint8_t> col_mask) {
  const Tensor& tl = nodes_[logits].out;
  check(static_cast<int>(labels.size()) == tl.rows, "cross_entropy: label count mismatch");
  check(col_mask.empty() || static_cast<int>(col_mask.size()) == tl.cols,
        "cross_entropy: mask size mismatch");
  Node n;
  n.op = Op::kCrossEntropy;
  n.a = logits;
  n.out = Tensor(1, 1);
  n.out.requires_grad = tl.requires_grad;
  auto active = [&](int c) { return col_mask.empty() || col_mask[c] != 0; };
  double loss = 0.0;
  int counted = 0;
  for (int r = 0; r < tl.rows; ++r) {
    const int y = labels[r];
    if (y < 0) continue;
    check(y < tl.cols && active(y), "cross_entropy: label outside active columns");
    double mx = -std::numeric_limits<double>::infinity();
    for (int c = 0; c < tl.cols; ++c) {
      if (active(c)) mx = std::max(mx, tl.at(r, c));
    }
    double z = 0.0;
    for (int c = 0; c < tl.cols; ++c) {
      if (active(c)) z += std::exp(tl.at(r, c) - mx);
    }
    loss += mx + std::log(z) - tl.at(r, y);
    ++counted;
  }
  check(counted > 0, "cross_entropy: no labeled rows");
  n.out.values[0] = loss / counted;
  n.ints = std::move(labels);
  n.mask = std::move(col_mask);
  return push(std::move(n));
}

void Tape::backward(Ref loss) {
  check(loss >= 0 && loss < static_cast<Ref>(nodes_.size()), "backward: bad ref");
  check(nodes_[loss].out.numel() == 1, "backward: loss must be scalar");

  for (auto& n : nodes_) {
    if (n.out.requires_grad) n.out.grad.assign(n.out.values.size(), 0.0);
  }
  if (!nodes_[loss].out.requires_grad) return;  // constant loss: nothing to do
  nodes_[loss].out.grad[0] = 1.0;

  auto needs = [&](Ref r) { return r >= 0 && nodes_[r].out.requires_grad; };

  for (Ref i = static_cast<Ref>(nodes_.size()) - 1; i >= 0; --i) {
    Node& n = nodes_[i];
    if (!n.out.requires_grad) continue;
    Tensor& out = n.out;
    switch (n.op) {
      case Op::kLeaf:
        if (n.external->requires_grad) {
          if (n.external->grad.size() != n.external->values.size()) {
            n.external->grad.assign(n.external->values.size(), 0.0);
          }
          for (std::size_t k = 0; k < out.grad.size(); ++k) n.external->grad[k] += out.grad[k];
        }
        break;
      case Op::kConst:
        break;
      case Op::kMatmul: {
        Tensor& ta = nodes_[n.a].out;
        Tensor& tb = nodes_[n.b].out;
        if (needs(n.a)) gmap(ta).noalias() += gmap_c(out) * vmap(tb).transpose();
        if (needs(n.b)) gmap(tb).noalias() += vmap(ta).transpose() * gmap_c(out);
        break;
      }
      case Op::kMatmulNT: {
        Tensor& ta = nodes_[n.a].out;
        Tensor& tb = nodes_[n.b].out;
        if (needs(n.a)) gmap(ta).noalias() += gmap_c(out) * vmap(tb);
        if (needs(n.b)) gmap(tb).noalias() += gmap_c(out).transpose() * vmap(ta);
        break;
      }
      case Op::kAdd: {
        if (needs(n.a)) {
          auto& g = nodes_[n.a].out.grad;
          for (std::size_t k = 0; k < g.size(); ++k) g[k] += out.grad[k];
        }
        if (needs(n.b)) {
          auto& g = nodes_[n.b].out.grad;
          for (std::size_t k = 0; k < g.size(); ++k) g[k] += out.grad[k];
        }
        break;
      }
      case Op::kAddRowVec: {
        if (needs(n.a)) {
          auto& g = nodes_[n.a].out.grad;
          for (std::size_t k = 0; k < g.size(); ++k) g[k] += out.grad[k];
        }
        if (needs(n.b)) {
          auto& g = nodes_[n.b].out.grad;
          for (int r = 0; r < out.rows; ++r) {
            for (int c = 0; c < out.cols; ++c) g[c] += out.grad[r * out.cols + c];
          }
        }
        break;
      }
      case Op::kHadamard: {
        const Tensor& ta = nodes_[n.a].out;
        const Tensor& tb = nodes_[n.b].out;
        if (needs(n.a)) {
          auto& g = nodes_[n.a].out.grad;
          for (std::size_t k = 0; k < g.size(); ++k) g[k] += out.grad[k] * tb.values[k];
        }
        if (needs(n.b)) {
          auto& g = nodes_[n.b].out.grad;
          for (std::size_t k = 0; k < g.size(); ++k) g[k] += out.grad[k] * ta.values[k];
        }
        break;
      }
      case Op::kAffine: {
        if (needs(n.a)) {
          auto& g = nodes_[n.a].out.grad;
          for (std::size_t k = 0; k < g.size(); ++k) g[k] += n.mul * out.grad[k];
        }
        break;
      }
      case Op::kSigmoid: {
        if (needs(n.a)) {
          const double bias = g_perturb ? 1.001 : 1.0;
          auto& g = nodes_[n.a].out.grad;
          for (std::size_t k = 0; k < g.size(); ++k) {
            const double s = out.values[k];
            g[k] += bias * out.grad[k] * s * (1.0 - s);
          }
        }
        break;
      }
      case Op::kTanh: {
        if (needs(n.a)) {
          auto& g = nodes_[n.a].out.grad;
          for (std::size_t k = 0; k < g.size(); ++k) {
            g[k] += out.grad[k] * (1.0 - out.values[k] * out.values[k]);
          }
        }
        break;
      }
      case Op::kRelu: {
        if (needs(n.a)) {
          auto& g = nodes_[n.a].out.grad;
          for (std::size_t k = 0; k < g.size(); ++k) {
            if (out.values[k] > 0.0) g[k] += out.grad[k];
          }
        }
        break;
      }
      case Op::kLog: {
        if (needs(n.a)) {
          const Tensor& ta = nodes_[n.a].out;
          auto& g = nodes_[n.a].out.grad;
          for (std::size_t k = 0; k < g.size(); ++k) g[k] += out.grad[k] / ta.values[k];
        }
        break;
      }
      case Op::kConcatCols: {
        const int ca = nodes_[n.a].out.cols;
        if (needs(n.a)) {
          auto& g = nodes_[n.a].out.grad;
          for (int r = 0; r < out.rows; ++r) {
            for (int c = 0; c < ca; ++c) g[r * ca + c] += out.grad[r * out.cols + c];
          }
        }
        if (needs(n.b)) {
          const int cb = nodes_[n.b].out.cols;
          auto& g = nodes_[n.b].out.grad;
          for (int r = 0; r < out.rows; ++r) {
            for (int c = 0; c < cb; ++c) g[r * cb + c] += out.grad[r * out.cols + ca + c];
          }
        }
        break;
      }
      case Op::kSliceCols: {
        if (needs(n.a)) {
          const int c0 = n.ints[0];
          const int ca = nodes_[n.a].out.cols;
          auto& g = nodes_[n.a].out.grad;
          for (int r = 0; r < out.rows; ++r) {
            for (int c = 0; c < out.cols; ++c) g[r * ca + c0 + c] += out.grad[r * out.cols + c];
          }
        }
        break;
      }
      case Op::kGatherRows: {
        if (needs(n.a)) {
          const int ca = nodes_[n.a].out.cols;
          auto& g = nodes_[n.a].out.grad;
          for (int r = 0; r < out.rows; ++r) {
            const int src = n.ints[r];
            for (int c = 0; c < out.cols; ++c) g[src * ca + c] += out.grad[r * out.cols + c];
          }
        }
        break;
      }
      case Op::kSumAll: {
        if (needs(n.a)) {
          auto& g = nodes_[n.a].out.grad;
          for (double& v : g) v += out.grad[0];
        }
        break;
      }
      case Op::kSoftmaxRows: {
        if (needs(n.a)) {
          auto& g = nodes_[n.a].out.grad;
          auto active = [&](int c) { return n.mask.empty() || n.mask[c] != 0; };
          for (int r = 0; r < out.rows; ++r) {
            double dot = 0.0;
            for (int c = 0; c < out.cols; ++c) {
              if (active(c)) dot += out.grad[r * out.cols + c] * out.values[r * out.cols + c];
            }
            for (int c = 0; c < out.cols; ++c) {
              if (!active(c)) continue;
              const double s = out.values[r * out.cols + c];
              g[r * out.cols + c] += s * (out.grad[r * out.cols + c] - dot);
            }
          }
        }
        break;
      }
      case Op::kGatedGather: {
        const double bias = g_perturb ? 1.001 : 1.0;
        const Tensor& lin = n.aux[0];
        const Tensor& sig = n.aux[1];
        const Ref own1 = n.srcs[0], peer1 = n.srcs[1], b1 = n.srcs[2];
        const Ref own2 = n.srcs[3], peer2 = n.srcs[4], b2 = n.srcs[5];
        const int cols = out.cols;
        for (int r = 0; r < out.rows; ++r) {
          const int src = n.ints[r];
          for (int c = 0; c < cols; ++c) {
            const double g = out.grad[r * cols + c];
            if (g == 0.0) continue;
            const double s = sig.values[r * cols + c];
            const double dlin = g * s;
            const double dgate = bias * g * lin.values[r * cols + c] * s * (1.0 - s);
            if (needs(own1)) nodes_[own1].out.grad[r * cols + c] += dlin;
            if (needs(peer1)) nodes_[peer1].out.grad[src * cols + c] += dlin;
            if (needs(b1)) nodes_[b1].out.grad[c] += dlin;
            if (needs(own2)) nodes_[own2].out.grad[r * cols + c] += dgate;
            if (needs(peer2)) nodes_[peer2].out.grad[src * cols + c] += dgate;
            if (needs(b2)) nodes_[b2].out.grad[c] += dgate;
          }
        }
        break;
      }
      case Op::kGruCell: {
        const double bias = g_perturb ? 1.001 : 1.0;
        const Ref input = n.srcs[0], h = n.srcs[1];
        const Ref wz = n.srcs[2], uz = n.srcs[3], bz = n.srcs[4];
        const Ref wr = n.srcs[5], ur = n.srcs[6], br = n.srcs[7];
        const Ref wc = n.srcs[8], uc = n.srcs[9], bc = n.srcs[10];
        const Tensor& tx = nodes_[input].out;
        const Tensor& th = nodes_[h].out;
        const Tensor& z = n.aux[0];
        const Tensor& rg = n.aux[1];
        const Tensor& cand = n.aux[2];
        const int rows = out.rows;
        const int hidden = out.cols;
        const std::size_t sz = out.values.size();

        Tensor dac(rows, hidden), daz(rows, hidden), dar(rows, hidden), rh(rows, hidden);
        std::vector<double> dh(sz, 0.0), drg(sz, 0.0);
        for (std::size_t k = 0; k < sz; ++k) {
          const double g = out.grad[k];
          const double zk = z.values[k];
          const double ck = cand.values[k];
          dh[k] = g * zk;
          dac.values[k] = g * (1.0 - zk) * (1.0 - ck * ck);
          daz.values[k] = bias * g * (th.values[k] - ck) * zk * (1.0 - zk);
          rh.values[k] = rg.values[k] * th.values[k];
        }
        // candidate pre-activation: ac = x Wc^T + (rg.*h) Uc^T + bc
        if (needs(wc)) gmap(nodes_[wc].out).noalias() += vmap(dac).transpose() * vmap(tx);
        if (needs(uc)) gmap(nodes_[uc].out).noalias() += vmap(dac).transpose() * vmap(rh);
        if (needs(bc)) {
          auto& g = nodes_[bc].out.grad;
          for (int r = 0; r < rows; ++r) {
            for (int c = 0; c < hidden; ++c) g[c] += dac.values[r * hidden + c];
          }
        }
        {
          Tensor drh(rows, hidden);
          MMap(drh.values.data(), rows, hidden).noalias() = vmap(dac) * vmap(nodes_[uc].out);
          for (std::size_t k = 0; k < sz; ++k) {
            drg[k] = drh.values[k] * th.values[k];
            dh[k] += drh.values[k] * rg.values[k];
            dar.values[k] = bias * drg[k] * rg.values[k] * (1.0 - rg.values[k]);
          }
        }
        // gate pre-activations: a = x W^T + h U^T + b
        if (needs(wz)) gmap(nodes_[wz].out).noalias() += vmap(daz).transpose() * vmap(tx);
        if (needs(uz)) gmap(nodes_[uz].out).noalias() += vmap(daz).transpose() * vmap(th);
        if (needs(wr)) gmap(nodes_[wr].out).noalias() += vmap(dar).transpose() * vmap(tx);
        if (needs(ur)) gmap(nodes_[ur].out).noalias() += vmap(dar).transpose() * vmap(th);
        if (needs(bz) || needs(br)) {
          for (int r = 0; r < rows; ++r) {
            for (int c = 0; c < hidden; ++c) {
              if (needs(bz)) nodes_[bz].out.grad[c] += daz.values[r * hidden + c];
              if (needs(br)) nodes_[br].out.grad[c] += dar.values[r * hidden + c];
            }
          }
        }
        if (needs(input)) {
          gmap(nodes_[input].out).noalias() += vmap(daz) * vmap(nodes_[wz].out) +
                                               vmap(dar) * vmap(nodes_[wr].out) +
                                               vmap(dac) * vmap(nodes_[wc].out);
        }
        if (needs(h)) {
          auto& g = nodes_[h].out.grad;
          for (std::size_t k = 0; k < sz; ++k) g[k] += dh[k];
          gmap(nodes_[h].out).noalias() += vmap(daz) * vmap(nodes_[uz].out) +
                                           vmap(dar) * vmap(nodes_[ur].out);
        }
        break;
      }
      case Op::kCrossEntropy: {
        if (needs(n.a)) {
          const Tensor& tl = nodes_[n.a].out;
          auto& g = nodes_[n.a].out.grad;
          auto active = [&](int c) { return n.mask.empty() || n.mask[c] != 0; };
          int counted = 0;
          for (int y : n.ints) counted += y >= 0 ? 1 : 0;
          const double scale = out.grad[0] / counted;
          for (int r = 0; r < tl.rows; ++r) {
            const int y = n.ints[r];
            if (y < 0) continue;
            double mx = -std::numeric_limits<double>::infinity();
            for (int c = 0; c < tl.cols; ++c) {
              if (active(c)) mx = std::max(mx, tl.at(r, c));
            }
            double z = 0.0;
            for (int c = 0; c < tl.cols; ++c) {
              if (active(c)) z += std::exp(tl.at(r, c) - mx);
            }
            for (int c = 0; c < tl.cols; ++c) {
              if (!active(c)) continue;
              const double s = std::exp(tl.at(r, c) - mx) / z;
              g[r * tl.cols + c] += scale * (s - (c == y ? 1.0 : 0.0));
            }
          }
        }
        break;
      }
    }
  }
}

Adam::Adam(const std::vector<Tensor*>& params, AdamConfig cfg) : cfg_(cfg) {
  m_.reserve(params.size());
  v_.reserve(params.size());
  for (const Tensor* p : params) {
    m_.emplace_back(p->values.size(), 0.0);
    v_.emplace_back(p->values.size(), 0.0);
  }
}

double Adam::step(const std::vector<Tensor*>& params, double lr_scale) {
  if (params.size() != m_.size()) throw std::invalid_argument("adam: parameter set changed");
  double sq = 0.0;
  for (Tensor* p : params) {
    if (p->grad.size() != p->values.size()) p->grad.assign(p->values.size(), 0.0);
    for (double g : p->grad) sq += g * g;
  }
  const double norm = std::sqrt(sq);
  const double clip_scale =
      (cfg_.clip_norm > 0.0 && norm > cfg_.clip_norm) ? cfg_.clip_norm / norm : 1.0;

  ++step_;
  const double lr = cfg_.lr * lr_scale;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, step_);
  const double bc2 = 1.0 - std::pow(cfg_.beta2, step_);
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    Tensor& p = *params[pi];
    for (std::size_t k = 0; k < p.values.size(); ++k) {
      const double g = p.grad[k] * clip_scale;
      m_[pi][k] = cfg_.beta1 * m_[pi][k] + (1.0 - cfg_.beta1) * g;
      v_[pi][k] = cfg_.beta2 * v_[pi][k] + (1.0 - cfg_.beta2) * g * g;
      const double mhat = m_[pi][k] / bc1;
      const double vhat = v_[pi][k] / bc2;
      p.values[k] -= lr * cfg_.weight_decay * p.values[k];  // decoupled decay
      p.values[k] -= lr * mhat / (std::sqrt(vhat) + cfg_.eps);
    }
  }
  return norm;
}

}  // namespace uncplan::ad
