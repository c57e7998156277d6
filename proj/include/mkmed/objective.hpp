#pragma once

// Training losses over a 1 x |M| score row and their weighted combination:
// label cross-entropy (summed), positive/negative margin ranking, and the
// interaction penalty score' * DDI * score. beta_controller optionally
// retunes beta from the observed interaction rate between epochs.

#include "mkmed/ad.hpp"

namespace mkmed {

using ad::Tape;
using ad::Val;

struct LossWeights {
  double beta = 0.95;
  double gamma = 0.95;
  double ddi_target = 0.06;
  bool controller = false;
};

Val bce_loss(Tape& t, Val scores, const Mat& truth);
Val hinge_loss(Tape& t, Val scores, const Mat& truth);
Val ddi_loss(Tape& t, Val scores, const Mat& ddi);
Val combined_loss(Tape& t, Val scores, const Mat& truth, const Mat& ddi,
                  const LossWeights& w);

// Next-epoch beta. Disabled controller keeps the configured constant.
double beta_controller(double epoch_ddi_rate, const LossWeights& w);

}  // namespace mkmed
