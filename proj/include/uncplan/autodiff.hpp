#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "uncplan/rng.hpp"

namespace uncplan::ad {

// Dense row-major 2-D tensor of 64-bit floats. Scalars are 1x1, row
// vectors 1xn.
struct Tensor {
  int rows = 0;
  int cols = 0;
  std::vector<double> values;
  bool requires_grad = false;
  std::vector<double> grad;

  Tensor() = default;
  Tensor(int r, int c, double fill = 0.0, bool rg = false)
      : rows(r), cols(c), values(static_cast<std::size_t>(r) * c, fill), requires_grad(rg) {
    if (rg) grad.assign(values.size(), 0.0);
  }

  static Tensor randn(int r, int c, Rng& rng, double scale, bool rg = true) {
    Tensor t(r, c, 0.0, rg);
    for (double& v : t.values) v = scale * rng.normal();
    return t;
  }

  int numel() const { return rows * cols; }
  double& at(int r, int c) { return values[static_cast<std::size_t>(r) * cols + c]; }
  double at(int r, int c) const { return values[static_cast<std::size_t>(r) * cols + c]; }
  void zero_grad() { grad.assign(values.size(), 0.0); }
};

// Test hook: when enabled, one backward rule (sigmoid) is deliberately
// miscalibrated so gradient checks must fail. Negative control only.
void set_perturb_backward(bool on);
bool perturb_backward();

// Reverse-mode tape. Build a fresh tape per forward/backward pass; leaves
// reference external parameter tensors and receive their gradients on
// backward() in recording order.
class Tape {
 public:
  using Ref = int;

  Ref leaf(Tensor* t);
  Ref constant(Tensor t);
  Ref zeros(int rows, int cols);

  Ref matmul(Ref a, Ref b);     // (m,k)x(k,n)
  Ref matmul_nt(Ref a, Ref b);  // (m,k)x(n,k)^T -> (m,n)
  Ref add(Ref a, Ref b);        // same shape
  Ref add_rowvec(Ref a, Ref v); // broadcast 1xn over rows of a
  Ref hadamard(Ref a, Ref b);
  Ref affine(Ref a, double mul, double off);
  Ref sigmoid(Ref a);
  Ref tanh_(Ref a);
  Ref relu(Ref a);
  Ref log_(Ref a);
  Ref concat_cols(Ref a, Ref b);
  Ref slice_cols(Ref a, int c0, int c1);
  Ref gather_rows(Ref a, std::vector<int> index);
  Ref sum_all(Ref a);  // 1x1

  // Fused gated message step: (own1 + peer1[idx] + b1) .* sigmoid(own2 +
  // peer2[idx] + b2). Equivalent to the composed ops but records one node,
  // which keeps tape memory flat across the serialized accumulation.
  Ref gated_gather(Ref own1, Ref peer1, Ref b1, Ref own2, Ref peer2, Ref b2,
                   std::vector<int> idx);

  // Fused GRU cell: z/r gates, candidate, h' = (1-z).*cand + z.*h.
  Ref gru_cell(Ref input, Ref h, Ref wz, Ref uz, Ref bz, Ref wr, Ref ur, Ref br, Ref wc,
               Ref uc, Ref bc);

  // Row-wise softmax; columns with mask==0 get probability exactly 0.
  // Empty mask = all columns active.
  Ref softmax_rows(Ref a, std::vector<std::uint8_t> col_mask = {});

  // Mean cross-entropy between row softmax of `logits` and one-hot labels;
  // rows with label -1 are excluded from the mean. Returns a 1x1 scalar.
  Ref cross_entropy(Ref logits, std::vector<int> labels,
                    std::vector<std::uint8_t> col_mask = {});

  const Tensor& val(Ref r) const { return nodes_[r].out; }
  const std::vector<double>& grad(Ref r) const { return nodes_[r].out.grad; }

  void backward(Ref loss);

 private:
  enum class Op {
    kLeaf, kConst, kMatmul, kMatmulNT, kAdd, kAddRowVec, kHadamard, kAffine,
    kSigmoid, kTanh, kRelu, kLog, kConcatCols, kSliceCols, kGatherRows,
    kSumAll, kSoftmaxRows, kCrossEntropy, kGatedGather, kGruCell,
  };
  struct Node {
    Op op;
    Ref a = -1, b = -1;
    Tensor out;
    Tensor* external = nullptr;
    std::vector<int> ints;
    std::vector<std::uint8_t> mask;
    double mul = 0.0, off = 0.0;
    std::vector<Ref> srcs;     // fused ops: additional inputs
    std::vector<Tensor> aux;   // fused ops: saved activations for backward
  };
  Ref push(Node n);
  std::vector<Node> nodes_;
};

// Adam with global gradient-norm clipping and decoupled weight decay.
struct AdamConfig {
  double lr = 0.001;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;
  double clip_norm = 0.0;  // 0 disables clipping
};

class Adam {
 public:
  Adam(const std::vector<Tensor*>& params, AdamConfig cfg);

  // Consumes the gradients currently stored on the parameters; lr_scale
  // implements the caller-driven step-decay schedule. Returns the pre-clip
  // global gradient norm.
  double step(const std::vector<Tensor*>& params, double lr_scale = 1.0);

  int steps_taken() const { return step_; }

 private:
  AdamConfig cfg_;
  int step_ = 0;
  std::vector<std::vector<double>> m_, v_;
};

}  // namespace uncplan::ad
