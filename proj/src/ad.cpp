#include "mkmed/ad.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace mkmed {
namespace ad {

namespace {

void require(bool ok, const std::string& what) {
  if (!ok) throw DimensionMismatch(what);
}

bool same_shape(const Mat& a, const Mat& b) {
  return a.rows() == b.rows() && a.cols() == b.cols();
}

using RowArr = Eigen::Array<Scalar, 1, Eigen::Dynamic>;

}  // namespace

std::vector<int> sorted_row_order(const Mat& m) {
  std::vector<int> order(static_cast<size_t>(m.rows()));
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    for (int j = 0; j < m.cols(); ++j) {
      if (m(a, j) < m(b, j)) return true;
      if (m(a, j) > m(b, j)) return false;
    }
    return false;
  });
  return order;
}

int Tape::emit(Mat value, bool needs_grad, std::function<void(Tape&, int)> back) {
  Node n;
  n.value = std::move(value);
  n.needs_grad = needs_grad;
  n.back = std::move(back);
  nodes_.push_back(std::move(n));
  return static_cast<int>(nodes_.size()) - 1;
}

void Tape::accumulate(int id, const Mat& g) {
  Node& n = nodes_[id];
  if (!n.needs_grad) return;
  if (n.grad.size() == 0) n.grad = Mat::Zero(n.value.rows(), n.value.cols());
  n.grad += g;
}

Val Tape::constant(Mat m) {
  int id = emit(std::move(m), false, nullptr);
  return {this, id};
}

Val Tape::leaf(Param& p) {
  auto it = leased_.find(&p);
  if (it != leased_.end()) return {this, it->second};
  int id = emit(p.value, true, nullptr);
  nodes_[id].param = &p;
  leased_.emplace(&p, id);
  return {this, id};
}

void Tape::backward(Val loss) {
  require(loss.tape == this, "backward: foreign value");
  Node& top = nodes_[loss.id];
  require(top.value.rows() == 1 && top.value.cols() == 1,
          "backward: loss must be 1x1");
  top.grad = Mat::Ones(1, 1);
  for (int i = loss.id; i >= 0; --i) {
    Node& n = nodes_[i];
    if (!n.needs_grad || n.grad.size() == 0) continue;
    if (n.back) n.back(*this, i);
    if (n.param) {
      if (n.param->grad.size() == 0)
        n.param->grad = Mat::Zero(n.value.rows(), n.value.cols());
      n.param->grad += n.grad;
    }
  }
}

namespace {

Val unary(Val a, Mat out, std::function<void(Tape&, int, int)> back) {
  Tape& t = *a.tape;
  bool ng = t.node(a.id).needs_grad;
  int pid = a.id;
  int id = t.emit(std::move(out), ng,
                  ng ? std::function<void(Tape&, int)>(
                           [pid, back](Tape& tt, int self) { back(tt, self, pid); })
                     : nullptr);
  return {&t, id};
}

Val binary(Val a, Val b, Mat out, std::function<void(Tape&, int, int, int)> back) {
  require(a.tape == b.tape, "binary op across tapes");
  Tape& t = *a.tape;
  bool ng = t.node(a.id).needs_grad || t.node(b.id).needs_grad;
  int pa = a.id, pb = b.id;
  int id = t.emit(std::move(out), ng,
                  ng ? std::function<void(Tape&, int)>([pa, pb, back](Tape& tt, int self) {
                        back(tt, self, pa, pb);
                      })
                     : nullptr);
  return {&t, id};
}

}  // namespace

Val add(Val a, Val b) {
  Tape& t = *a.tape;
  require(same_shape(t.value(a), t.value(b)), "add: shape mismatch");
  return binary(a, b, t.value(a) + t.value(b), [](Tape& tt, int self, int pa, int pb) {
    const Mat& g = tt.node(self).grad;
    tt.accumulate(pa, g);
    tt.accumulate(pb, g);
  });
}

Val sub(Val a, Val b) {
  Tape& t = *a.tape;
  require(same_shape(t.value(a), t.value(b)), "sub: shape mismatch");
  return binary(a, b, t.value(a) - t.value(b), [](Tape& tt, int self, int pa, int pb) {
    const Mat& g = tt.node(self).grad;
    tt.accumulate(pa, g);
    tt.accumulate(pb, -g);
  });
}

Val mul(Val a, Val b) {
  Tape& t = *a.tape;
  require(same_shape(t.value(a), t.value(b)), "mul: shape mismatch");
  return binary(a, b, t.value(a).cwiseProduct(t.value(b)),
                [](Tape& tt, int self, int pa, int pb) {
                  const Mat& g = tt.node(self).grad;
                  tt.accumulate(pa, g.cwiseProduct(tt.node(pb).value));
                  tt.accumulate(pb, g.cwiseProduct(tt.node(pa).value));
                });
}

Val matmul(Val a, Val b) {
  Tape& t = *a.tape;
  require(t.value(a).cols() == t.value(b).rows(), "matmul: inner dim mismatch");
  return binary(a, b, t.value(a) * t.value(b), [](Tape& tt, int self, int pa, int pb) {
    const Mat& g = tt.node(self).grad;
    tt.accumulate(pa, g * tt.node(pb).value.transpose());
    tt.accumulate(pb, tt.node(pa).value.transpose() * g);
  });
}

Val transpose(Val a) {
  Tape& t = *a.tape;
  return unary(a, t.value(a).transpose(), [](Tape& tt, int self, int pa) {
    tt.accumulate(pa, tt.node(self).grad.transpose());
  });
}

Val affine(Val a, double k, double c) {
  Tape& t = *a.tape;
  Mat out = (t.value(a).array() * k + c).matrix();
  return unary(a, std::move(out), [k](Tape& tt, int self, int pa) {
    tt.accumulate(pa, k * tt.node(self).grad);
  });
}

Val sigmoid(Val a) {
  Tape& t = *a.tape;
  Mat y = (1.0 / (1.0 + (-t.value(a).array()).exp())).matrix();
  return unary(a, std::move(y), [](Tape& tt, int self, int pa) {
    const Mat& y = tt.node(self).value;
    Mat d = (y.array() * (1.0 - y.array())).matrix();
    tt.accumulate(pa, tt.node(self).grad.cwiseProduct(d));
  });
}

Val tanh_v(Val a) {
  Tape& t = *a.tape;
  Mat y = t.value(a).array().tanh().matrix();
  return unary(a, std::move(y), [](Tape& tt, int self, int pa) {
    const Mat& y = tt.node(self).value;
    Mat d = (1.0 - y.array().square()).matrix();
    tt.accumulate(pa, tt.node(self).grad.cwiseProduct(d));
  });
}

Val relu(Val a) {
  Tape& t = *a.tape;
  Mat y = t.value(a).cwiseMax(0.0);
  return unary(a, std::move(y), [](Tape& tt, int self, int pa) {
    Mat mask = (tt.node(pa).value.array() > 0.0).cast<Scalar>().matrix();
    tt.accumulate(pa, tt.node(self).grad.cwiseProduct(mask));
  });
}

Val exp_v(Val a) {
  Tape& t = *a.tape;
  Mat y = t.value(a).array().exp().matrix();
  return unary(a, std::move(y), [](Tape& tt, int self, int pa) {
    tt.accumulate(pa, tt.node(self).grad.cwiseProduct(tt.node(self).value));
  });
}

Val log_v(Val a) {
  Tape& t = *a.tape;
  Mat y = t.value(a).array().log().matrix();
  return unary(a, std::move(y), [](Tape& tt, int self, int pa) {
    Mat d = tt.node(pa).value.array().inverse().matrix();
    tt.accumulate(pa, tt.node(self).grad.cwiseProduct(d));
  });
}

Val sqrt_v(Val a) {
  Tape& t = *a.tape;
  Mat y = t.value(a).array().sqrt().matrix();
  return unary(a, std::move(y), [](Tape& tt, int self, int pa) {
    Mat d = (0.5 * tt.node(self).value.array().inverse()).matrix();
    tt.accumulate(pa, tt.node(self).grad.cwiseProduct(d));
  });
}

Val square(Val a) {
  Tape& t = *a.tape;
  Mat y = t.value(a).array().square().matrix();
  return unary(a, std::move(y), [](Tape& tt, int self, int pa) {
    tt.accumulate(pa, tt.node(self).grad.cwiseProduct(2.0 * tt.node(pa).value));
  });
}

Val rsqrt(Val a) {
  Tape& t = *a.tape;
  Mat y = t.value(a).array().rsqrt().matrix();
  return unary(a, std::move(y), [](Tape& tt, int self, int pa) {
    Mat d = (-0.5 * tt.node(self).value.array().cube()).matrix();
    tt.accumulate(pa, tt.node(self).grad.cwiseProduct(d));
  });
}

Val clamp_max(Val a, double hi) {
  Tape& t = *a.tape;
  Mat y = t.value(a).cwiseMin(hi);
  return unary(a, std::move(y), [hi](Tape& tt, int self, int pa) {
    Mat mask = (tt.node(pa).value.array() <= hi).cast<Scalar>().matrix();
    tt.accumulate(pa, tt.node(self).grad.cwiseProduct(mask));
  });
}

Val add_rowvec(Val x, Val b) {
  Tape& t = *x.tape;
  require(t.value(b).rows() == 1 && t.value(b).cols() == t.value(x).cols(),
          "add_rowvec: bias must be 1xD");
  Mat out = t.value(x).rowwise() + t.value(b).row(0);
  return binary(x, b, std::move(out), [](Tape& tt, int self, int px, int pb) {
    const Mat& g = tt.node(self).grad;
    tt.accumulate(px, g);
    tt.accumulate(pb, g.colwise().sum());
  });
}

Val scale_rows(Val x, Val c) {
  Tape& t = *x.tape;
  require(t.value(c).cols() == 1 && t.value(c).rows() == t.value(x).rows(),
          "scale_rows: scale must be Nx1");
  Mat out = t.value(c).col(0).asDiagonal() * t.value(x);
  return binary(x, c, std::move(out), [](Tape& tt, int self, int px, int pc) {
    const Mat& g = tt.node(self).grad;
    tt.accumulate(px, tt.node(pc).value.col(0).asDiagonal() * g);
    Mat dc = g.cwiseProduct(tt.node(px).value).rowwise().sum();
    tt.accumulate(pc, dc);
  });
}

Val scale_by(Val x, Val s) {
  Tape& t = *x.tape;
  require(t.value(s).rows() == 1 && t.value(s).cols() == 1, "scale_by: scale must be 1x1");
  Mat out = t.value(s)(0, 0) * t.value(x);
  return binary(x, s, std::move(out), [](Tape& tt, int self, int px, int ps) {
    const Mat& g = tt.node(self).grad;
    tt.accumulate(px, tt.node(ps).value(0, 0) * g);
    Mat ds(1, 1);
    ds(0, 0) = g.cwiseProduct(tt.node(px).value).sum();
    tt.accumulate(ps, ds);
  });
}

Val row_sum(Val x) {
  Tape& t = *x.tape;
  Mat out = t.value(x).rowwise().sum();
  return unary(x, std::move(out), [](Tape& tt, int self, int px) {
    const Mat& g = tt.node(self).grad;
    tt.accumulate(px, g.replicate(1, tt.node(px).value.cols()));
  });
}

Val col_sum(Val x) {
  Tape& t = *x.tape;
  Mat out = t.value(x).colwise().sum();
  return unary(x, std::move(out), [](Tape& tt, int self, int px) {
    const Mat& g = tt.node(self).grad;
    tt.accumulate(px, g.replicate(tt.node(px).value.rows(), 1));
  });
}

Val sum_all(Val x) {
  Tape& t = *x.tape;
  Mat out(1, 1);
  out(0, 0) = t.value(x).sum();
  return unary(x, std::move(out), [](Tape& tt, int self, int px) {
    double g = tt.node(self).grad(0, 0);
    const Mat& v = tt.node(px).value;
    tt.accumulate(px, Mat::Constant(v.rows(), v.cols(), g));
  });
}

Val mean_all(Val x) {
  Tape& t = *x.tape;
  double n = static_cast<double>(t.value(x).size());
  return affine(sum_all(x), 1.0 / n, 0.0);
}

Val sum_rows_sorted(Val x) {
  Tape& t = *x.tape;
  const Mat& v = t.value(x);
  std::vector<int> order = sorted_row_order(v);
  Mat out = Mat::Zero(1, v.cols());
  for (int r : order) out.row(0) += v.row(r);
  return unary(x, std::move(out), [](Tape& tt, int self, int px) {
    const Mat& g = tt.node(self).grad;
    tt.accumulate(px, g.replicate(tt.node(px).value.rows(), 1));
  });
}

Val segment_sum(Val m, const IndexVec& segment_of_row, int out_rows, bool sorted) {
  Tape& t = *m.tape;
  const Mat& v = t.value(m);
  require(static_cast<int>(segment_of_row.size()) == v.rows(),
          "segment_sum: one segment id per row");
  std::vector<int> order(static_cast<size_t>(v.rows()));
  std::iota(order.begin(), order.end(), 0);
  if (sorted) order = sorted_row_order(v);
  Mat out = Mat::Zero(out_rows, v.cols());
  for (int r : order) {
    int s = segment_of_row[static_cast<size_t>(r)];
    if (s < 0 || s >= out_rows) throw IndexOutOfRange("segment_sum: segment id");
    out.row(s) += v.row(r);
  }
  IndexVec seg = segment_of_row;
  return unary(m, std::move(out), [seg](Tape& tt, int self, int pm) {
    const Mat& g = tt.node(self).grad;
    const Mat& v = tt.node(pm).value;
    Mat gm = Mat::Zero(v.rows(), v.cols());
    for (int r = 0; r < v.rows(); ++r) gm.row(r) = g.row(seg[static_cast<size_t>(r)]);
    tt.accumulate(pm, gm);
  });
}

Val weighted_sum_sorted(Val w, Val v) {
  Tape& t = *w.tape;
  const Mat& wm = t.value(w);
  const Mat& vm = t.value(v);
  require(wm.rows() == 1 && wm.cols() == vm.rows(), "weighted_sum_sorted: w is 1xK, v is KxD");
  // Order keys on (row, weight) so equal rows with different weights still
  // accumulate in one canonical order.
  Mat key(vm.rows(), vm.cols() + 1);
  key.leftCols(vm.cols()) = vm;
  key.col(vm.cols()) = wm.row(0).transpose();
  std::vector<int> order = sorted_row_order(key);
  Mat out = Mat::Zero(1, vm.cols());
  for (int r : order) out.row(0) += wm(0, r) * vm.row(r);
  return binary(w, v, std::move(out), [](Tape& tt, int self, int pw, int pv) {
    const Mat& g = tt.node(self).grad;
    const Mat& wm = tt.node(pw).value;
    const Mat& vm = tt.node(pv).value;
    Mat dw(1, wm.cols());
    for (int k = 0; k < wm.cols(); ++k) dw(0, k) = g.row(0).dot(vm.row(k));
    tt.accumulate(pw, dw);
    tt.accumulate(pv, wm.row(0).transpose() * g.row(0));
  });
}

Val gather_rows(Val x, IndexVec rows) {
  Tape& t = *x.tape;
  const Mat& v = t.value(x);
  Mat out(static_cast<Eigen::Index>(rows.size()), v.cols());
  for (size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] < 0 || rows[i] >= v.rows()) throw IndexOutOfRange("gather_rows");
    out.row(static_cast<Eigen::Index>(i)) = v.row(rows[i]);
  }
  return unary(x, std::move(out), [rows](Tape& tt, int self, int px) {
    const Mat& g = tt.node(self).grad;
    const Mat& v = tt.node(px).value;
    Mat gx = Mat::Zero(v.rows(), v.cols());
    for (size_t i = 0; i < rows.size(); ++i)
      gx.row(rows[i]) += g.row(static_cast<Eigen::Index>(i));
    tt.accumulate(px, gx);
  });
}

Val slice_rows(Val x, int start, int len) {
  Tape& t = *x.tape;
  const Mat& v = t.value(x);
  require(start >= 0 && len >= 0 && start + len <= v.rows(), "slice_rows: out of range");
  Mat out = v.middleRows(start, len);
  return unary(x, std::move(out), [start, len](Tape& tt, int self, int px) {
    const Mat& v = tt.node(px).value;
    Mat gx = Mat::Zero(v.rows(), v.cols());
    gx.middleRows(start, len) = tt.node(self).grad;
    tt.accumulate(px, gx);
  });
}

Val slice_cols(Val x, int start, int len) {
  Tape& t = *x.tape;
  const Mat& v = t.value(x);
  require(start >= 0 && len >= 0 && start + len <= v.cols(), "slice_cols: out of range");
  Mat out = v.middleCols(start, len);
  return unary(x, std::move(out), [start, len](Tape& tt, int self, int px) {
    const Mat& v = tt.node(px).value;
    Mat gx = Mat::Zero(v.rows(), v.cols());
    gx.middleCols(start, len) = tt.node(self).grad;
    tt.accumulate(px, gx);
  });
}

Val concat_rows(const std::vector<Val>& xs) {
  require(!xs.empty(), "concat_rows: empty");
  Tape& t = *xs[0].tape;
  Eigen::Index rows = 0, cols = t.value(xs[0]).cols();
  for (const Val& x : xs) {
    require(x.tape == &t, "concat_rows: cross-tape");
    require(t.value(x).cols() == cols, "concat_rows: column mismatch");
    rows += t.value(x).rows();
  }
  Mat out(rows, cols);
  Eigen::Index at = 0;
  bool ng = false;
  std::vector<int> ids;
  std::vector<Eigen::Index> offs, lens;
  for (const Val& x : xs) {
    Eigen::Index n = t.value(x).rows();
    out.middleRows(at, n) = t.value(x);
    ids.push_back(x.id);
    offs.push_back(at);
    lens.push_back(n);
    ng = ng || t.node(x.id).needs_grad;
    at += n;
  }
  int id = t.emit(std::move(out), ng,
                  ng ? std::function<void(Tape&, int)>([ids, offs, lens](Tape& tt, int self) {
                        const Mat& g = tt.node(self).grad;
                        for (size_t i = 0; i < ids.size(); ++i)
                          tt.accumulate(ids[i], g.middleRows(offs[i], lens[i]));
                      })
                     : nullptr);
  return {&t, id};
}

Val concat_cols(const std::vector<Val>& xs) {
  require(!xs.empty(), "concat_cols: empty");
  Tape& t = *xs[0].tape;
  Eigen::Index cols = 0, rows = t.value(xs[0]).rows();
  for (const Val& x : xs) {
    require(x.tape == &t, "concat_cols: cross-tape");
    require(t.value(x).rows() == rows, "concat_cols: row mismatch");
    cols += t.value(x).cols();
  }
  Mat out(rows, cols);
  Eigen::Index at = 0;
  bool ng = false;
  std::vector<int> ids;
  std::vector<Eigen::Index> offs, lens;
  for (const Val& x : xs) {
    Eigen::Index n = t.value(x).cols();
    out.middleCols(at, n) = t.value(x);
    ids.push_back(x.id);
    offs.push_back(at);
    lens.push_back(n);
    ng = ng || t.node(x.id).needs_grad;
    at += n;
  }
  int id = t.emit(std::move(out), ng,
                  ng ? std::function<void(Tape&, int)>([ids, offs, lens](Tape& tt, int self) {
                        const Mat& g = tt.node(self).grad;
                        for (size_t i = 0; i < ids.size(); ++i)
                          tt.accumulate(ids[i], g.middleCols(offs[i], lens[i]));
                      })
                     : nullptr);
  return {&t, id};
}

Val softmax_rows(Val x) {
  Tape& t = *x.tape;
  const Mat& v = t.value(x);
  Mat y(v.rows(), v.cols());
  for (Eigen::Index i = 0; i < v.rows(); ++i) {
    double m = v.row(i).maxCoeff();
    RowArr e = (v.row(i).array() - m).exp();
    // Normalizer folds its addends in value-sorted order, so the softmax is
    // bit-identical however the surrounding graph permuted these logits.
    std::vector<double> es(e.data(), e.data() + e.size());
    std::sort(es.begin(), es.end());
    double z = 0.0;
    for (double q : es) z += q;
    y.row(i) = (e / z).matrix();
  }
  return unary(x, std::move(y), [](Tape& tt, int self, int px) {
    const Mat& y = tt.node(self).value;
    const Mat& g = tt.node(self).grad;
    Mat gx(y.rows(), y.cols());
    for (Eigen::Index i = 0; i < y.rows(); ++i) {
      double dot = g.row(i).dot(y.row(i));
      gx.row(i) = (y.row(i).array() * (g.row(i).array() - dot)).matrix();
    }
    tt.accumulate(px, gx);
  });
}

Val layernorm_rows(Val x, Val gain, Val bias, double eps) {
  Tape& t = *x.tape;
  const Mat& v = t.value(x);
  const Mat& g = t.value(gain);
  const Mat& b = t.value(bias);
  require(g.rows() == 1 && g.cols() == v.cols(), "layernorm: gain must be 1xD");
  require(b.rows() == 1 && b.cols() == v.cols(), "layernorm: bias must be 1xD");
  Eigen::Index n = v.cols();
  Mat xhat(v.rows(), n);
  Vec inv_std(v.rows());
  for (Eigen::Index i = 0; i < v.rows(); ++i) {
    double mu = v.row(i).mean();
    double var = (v.row(i).array() - mu).square().sum() / static_cast<double>(n);
    double is = 1.0 / std::sqrt(var + eps);
    inv_std(i) = is;
    xhat.row(i) = ((v.row(i).array() - mu) * is).matrix();
  }
  Mat out = xhat;
  for (Eigen::Index i = 0; i < out.rows(); ++i)
    out.row(i) = (out.row(i).array() * g.row(0).array() + b.row(0).array()).matrix();

  bool ng = t.node(x.id).needs_grad || t.node(gain.id).needs_grad ||
            t.node(bias.id).needs_grad;
  int px = x.id, pg = gain.id, pb = bias.id;
  int id = t.emit(
      std::move(out), ng,
      ng ? std::function<void(Tape&, int)>([px, pg, pb, xhat, inv_std, n](Tape& tt, int self) {
            const Mat& gy = tt.node(self).grad;
            const Mat& gv = tt.node(pg).value;
            tt.accumulate(pg, gy.cwiseProduct(xhat).colwise().sum());
            tt.accumulate(pb, gy.colwise().sum());
            Mat dxhat(gy.rows(), n);
            for (Eigen::Index i = 0; i < gy.rows(); ++i)
              dxhat.row(i) = (gy.row(i).array() * gv.row(0).array()).matrix();
            Mat gx(xhat.rows(), n);
            for (Eigen::Index i = 0; i < xhat.rows(); ++i) {
              double m1 = dxhat.row(i).mean();
              double m2 = dxhat.row(i).cwiseProduct(xhat.row(i)).mean();
              gx.row(i) = (inv_std(i) *
                           (dxhat.row(i).array() - m1 - xhat.row(i).array() * m2))
                              .matrix();
            }
            tt.accumulate(px, gx);
          })
         : nullptr);
  return {&t, id};
}

Val nll_diagonal(Val s) {
  Tape& t = *s.tape;
  const Mat& v = t.value(s);
  require(v.rows() == v.cols(), "nll_diagonal: square matrix expected");
  Eigen::Index n = v.rows();
  Mat soft(n, n);
  double total = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    double m = v.row(i).maxCoeff();
    RowArr e = (v.row(i).array() - m).exp();
    double z = e.sum();
    soft.row(i) = (e / z).matrix();
    total += (std::log(z) + m) - v(i, i);
  }
  Mat out(1, 1);
  out(0, 0) = total / static_cast<double>(n);
  return unary(s, std::move(out), [soft, n](Tape& tt, int self, int ps) {
    double g = tt.node(self).grad(0, 0) / static_cast<double>(n);
    Mat d = soft;
    for (Eigen::Index i = 0; i < n; ++i) d(i, i) -= 1.0;
    tt.accumulate(ps, g * d);
  });
}

Val bce_sum(Val p, const Mat& truth, double clamp_eps) {
  Tape& t = *p.tape;
  const Mat& v = t.value(p);
  require(same_shape(v, truth), "bce_sum: shape mismatch");
  double lo = clamp_eps, hi = 1.0 - clamp_eps;
  Mat pc = v.cwiseMax(lo).cwiseMin(hi);
  double total = -(truth.array() * pc.array().log() +
                   (1.0 - truth.array()) * (1.0 - pc.array()).log())
                      .sum();
  Mat out(1, 1);
  out(0, 0) = total;
  Mat tr = truth;
  return unary(p, std::move(out), [tr, pc, lo, hi](Tape& tt, int self, int pp) {
    double g = tt.node(self).grad(0, 0);
    const Mat& v = tt.node(pp).value;
    Mat d = ((v.array() >= lo && v.array() <= hi).cast<Scalar>() *
             (-tr.array() / pc.array() + (1.0 - tr.array()) / (1.0 - pc.array())))
                .matrix();
    tt.accumulate(pp, g * d);
  });
}

Val hinge_sum(Val p, const Mat& truth) {
  Tape& t = *p.tape;
  const Mat& v = t.value(p);
  require(same_shape(v, truth), "hinge_sum: shape mismatch");
  Eigen::Index cols = v.cols();
  std::vector<Eigen::Index> pos, negs;
  for (Eigen::Index i = 0; i < v.size(); ++i) {
    if (truth(i / cols, i % cols) > 0.5)
      pos.push_back(i);
    else
      negs.push_back(i);
  }
  double inv = 1.0 / static_cast<double>(v.size());
  double total = 0.0;
  Mat d = Mat::Zero(v.rows(), v.cols());
  for (Eigen::Index i : pos) {
    double pi = v(i / cols, i % cols);
    for (Eigen::Index j : negs) {
      double h = 1.0 - (pi - v(j / cols, j % cols));
      if (h > 0.0) {
        total += h * inv;
        d(i / cols, i % cols) -= inv;
        d(j / cols, j % cols) += inv;
      }
    }
  }
  Mat out(1, 1);
  out(0, 0) = total;
  return unary(p, std::move(out), [d](Tape& tt, int self, int pp) {
    double g = tt.node(self).grad(0, 0);
    tt.accumulate(pp, g * d);
  });
}

void AdamW::step(const std::vector<Param*>& params) {
  ++t_;
  double bc1 = 1.0 - std::pow(b1_, static_cast<double>(t_));
  double bc2 = 1.0 - std::pow(b2_, static_cast<double>(t_));
  for (Param* p : params) {
    if (p->grad.size() == 0) p->zero_grad();
    if (p->adam_m.size() == 0) {
      p->adam_m = Mat::Zero(p->value.rows(), p->value.cols());
      p->adam_v = Mat::Zero(p->value.rows(), p->value.cols());
    }
    p->adam_m = b1_ * p->adam_m + (1.0 - b1_) * p->grad;
    p->adam_v = (b2_ * p->adam_v.array() + (1.0 - b2_) * p->grad.array().square()).matrix();
    Mat mhat = p->adam_m / bc1;
    Mat vhat = p->adam_v / bc2;
    if (wd_ != 0.0) p->value -= lr_ * wd_ * p->value;
    p->value -= (lr_ * mhat.array() / (vhat.array().sqrt() + eps_)).matrix();
  }
}

}  // namespace ad
}  // namespace mkmed
