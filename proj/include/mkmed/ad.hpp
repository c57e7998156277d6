#pragma once

// Tape-based reverse-mode differentiation over dense Eigen matrices.
//
// A Tape owns the nodes of one forward pass. Values are lightweight handles
// into the tape; free functions build new nodes. Parameters live outside the
// tape in Param objects and are leased in as leaf nodes, so one Param can be
// reused across many tapes (and many times within one tape).
//
// The *_sorted reductions accumulate addends in value-sorted order, which
// makes sums over unordered collections (graph neighborhoods, substructure
// sets) bit-exactly independent of input ordering.

#include <cstdint>
#include <deque>
#include <functional>
#include <string>
#include <unordered_map>
#include <vector>

#include "mkmed/errors.hpp"
#include "mkmed/types.hpp"

namespace mkmed {
namespace ad {

// A named trainable tensor with its gradient and optimizer state.
struct Param {
  std::string name;
  Mat value;
  Mat grad;
  Mat adam_m;
  Mat adam_v;

  Param() = default;
  Param(std::string n, Mat v) : name(std::move(n)), value(std::move(v)) {}

  void zero_grad() { grad = Mat::Zero(value.rows(), value.cols()); }
};

class Tape;

struct Val {
  Tape* tape = nullptr;
  int id = -1;
  bool valid() const { return tape != nullptr && id >= 0; }
};

class Tape {
 public:
  struct Node {
    Mat value;
    Mat grad;
    bool needs_grad = false;
    Param* param = nullptr;
    std::function<void(Tape&, int)> back;
  };

  Val constant(Mat m);
  Val leaf(Param& p);

  const Mat& value(Val v) const { return nodes_[v.id].value; }
  const Mat& grad(Val v) const { return nodes_[v.id].grad; }

  // Reverse sweep from a 1x1 loss node; accumulates into Param::grad.
  void backward(Val loss);

  int size() const { return static_cast<int>(nodes_.size()); }

  // internal
  int emit(Mat value, bool needs_grad, std::function<void(Tape&, int)> back);
  Node& node(int id) { return nodes_[id]; }
  void accumulate(int id, const Mat& g);

 private:
  // deque: node references stay valid while later ops extend the tape
  std::deque<Node> nodes_;
  std::unordered_map<Param*, int> leased_;
};

// ---- elementwise & linear algebra ----
Val add(Val a, Val b);
Val sub(Val a, Val b);
Val mul(Val a, Val b);                 // hadamard
Val matmul(Val a, Val b);
Val transpose(Val a);
Val affine(Val a, double k, double c); // k*a + c
inline Val cmul(Val a, double k) { return affine(a, k, 0.0); }
inline Val neg(Val a) { return affine(a, -1.0, 0.0); }

Val sigmoid(Val a);
Val tanh_v(Val a);
Val relu(Val a);
Val exp_v(Val a);
Val log_v(Val a);
Val sqrt_v(Val a);
Val square(Val a);
Val rsqrt(Val a);                      // 1/sqrt(x)
Val clamp_max(Val a, double hi);       // grad 0 where clamped

// ---- broadcasting ----
Val add_rowvec(Val x, Val b);          // b is 1xD
Val scale_rows(Val x, Val c);          // c is Nx1
Val scale_by(Val x, Val t);            // t is 1x1

// ---- reductions ----
Val row_sum(Val x);                    // NxD -> Nx1
Val col_sum(Val x);                    // NxD -> 1xD
Val sum_all(Val x);                    // -> 1x1
Val mean_all(Val x);                   // -> 1x1
Val sum_rows_sorted(Val x);            // NxD -> 1xD, value-sorted accumulation
// Sums rows of m into out_rows buckets given per-row segment ids; when sorted,
// each bucket accumulates its rows in value-sorted order.
Val segment_sum(Val m, const IndexVec& segment_of_row, int out_rows, bool sorted);
Val weighted_sum_sorted(Val w, Val v); // w 1xK, v KxD -> 1xD

// ---- structure ----
Val gather_rows(Val x, IndexVec rows);
Val slice_rows(Val x, int start, int len);
Val slice_cols(Val x, int start, int len);
Val concat_rows(const std::vector<Val>& xs);
Val concat_cols(const std::vector<Val>& xs);

// ---- normalization / attention ----
Val softmax_rows(Val x);               // sorted-exp accumulation per row
Val layernorm_rows(Val x, Val gain, Val bias, double eps = 1e-5);

// ---- losses ----
Val nll_diagonal(Val s);               // mean_i [logsumexp(row_i) - s_ii]
Val bce_sum(Val p, const Mat& truth, double clamp_eps = 1e-7);
Val hinge_sum(Val p, const Mat& truth);

// AdamW with decoupled weight decay; deterministic.
class AdamW {
 public:
  AdamW(double lr, double weight_decay = 0.0, double beta1 = 0.9,
        double beta2 = 0.999, double eps = 1e-8)
      : lr_(lr), wd_(weight_decay), b1_(beta1), b2_(beta2), eps_(eps) {}

  void step(const std::vector<Param*>& params);
  void set_lr(double lr) { lr_ = lr; }
  double lr() const { return lr_; }

 private:
  double lr_, wd_, b1_, b2_, eps_;
  long t_ = 0;
};

// Indices of rows of m in lexicographically sorted order.
std::vector<int> sorted_row_order(const Mat& m);

}  // namespace ad
}  // namespace mkmed
