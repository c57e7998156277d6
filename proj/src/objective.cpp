#include "mkmed/objective.hpp"

#include <algorithm>

namespace mkmed {

using namespace ad;

namespace {

void check_row_shapes(Tape& t, Val scores, const Mat& truth, const char* who) {
  const Mat& s = t.value(scores);
  if (s.rows() != 1 || truth.rows() != 1 || s.cols() != truth.cols())
    throw ShapeMismatch(std::string(who) + ": scores vs truth");
}

}  // namespace

Val bce_loss(Tape& t, Val scores, const Mat& truth) {
  check_row_shapes(t, scores, truth, "bce_loss");
  return bce_sum(scores, truth);
}

Val hinge_loss(Tape& t, Val scores, const Mat& truth) {
  check_row_shapes(t, scores, truth, "hinge_loss");
  return hinge_sum(scores, truth);
}

Val ddi_loss(Tape& t, Val scores, const Mat& ddi) {
  const Mat& s = t.value(scores);
  if (s.rows() != 1 || ddi.rows() != ddi.cols() || ddi.rows() != s.cols())
    throw ShapeMismatch("ddi_loss: scores vs interaction matrix");
  return matmul(matmul(scores, t.constant(ddi)), transpose(scores));
}

Val combined_loss(Tape& t, Val scores, const Mat& truth, const Mat& ddi,
                  const LossWeights& w) {
  Val label = cmul(bce_loss(t, scores, truth), w.beta * w.gamma);
  Val margin = cmul(hinge_loss(t, scores, truth), w.beta * (1.0 - w.gamma));
  Val interact = cmul(ddi_loss(t, scores, ddi), 1.0 - w.beta);
  return add(add(label, margin), interact);
}

double beta_controller(double epoch_ddi_rate, const LossWeights& w) {
  if (!w.controller) return w.beta;
  const double kappa = 0.05;
  if (epoch_ddi_rate <= w.ddi_target) return 1.0;
  return std::max(0.0, 1.0 - (epoch_ddi_rate - w.ddi_target) / kappa);
}

}  // namespace mkmed
