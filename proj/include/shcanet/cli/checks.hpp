#pragma once

// Self-contained verification routines shared by `shcanet selfcheck` and the
// acceptance binary. Each returns pass/fail with a one-line detail instead of
// throwing.

#include <string>
#include <vector>

#include "shcanet/cli/config.hpp"
#include "shcanet/train/trainer.hpp"

namespace shcanet::checks {

struct Outcome {
  std::string name;
  bool pass = false;
  std::string detail;
};

// Central differences in double precision against reverse mode for every
// differentiable op and for CBS, both shuffle units, coordinate attention,
// one neck repeat, the box loss and the total loss. Bound 1e-4 each.
std::vector<Outcome> gradient_suite();

// alpha = 1 vs CIoU on 1000 pairs, identical boxes, the concentric 0.75 / 0.984375 case.
Outcome loss_oracles();
// 500 integer-cornered pairs against pixel counting.
Outcome iou_oracle();
// 5/6 AP walk, AP monotonicity on 1000 flag sequences, identity-oracle mAP.
Outcome metric_oracles();
// Greedy NMS vs the quadratic reference on 1000 random instances of <= 20 boxes.
Outcome nms_equivalence();
// Nine planted clusters, 1% jitter: centroids within 2%, repeatable.
Outcome anchor_recovery();
// Attention off == identity gates bit for bit; parameter delta == coordinate attention total.
Outcome structural_parity();
// 10000 letterbox round trips within 0.5 px; mosaic boxes in bounds, classes kept.
Outcome letterbox_mosaic();
// Randomly initialized desk model on a blank gray image scores below 0.99.
Outcome random_init_scores();

// Everything above; no training.
std::vector<Outcome> selfcheck();

// Overfit setup on the 8-image rectangle set for one ablation row.
struct OverfitReport {
  std::string row;
  double best_map = 0;
  int first_perfect_epoch = -1;
  double step10_loss = 0;
  double final_loss = 0;
  std::size_t steps = 0;
  double seconds = 0;
};
cli::RunConfig overfit_config(const cli::AblationRow& row);
OverfitReport overfit(const cli::AblationRow& row);

}  // namespace shcanet::checks
