#include "tscn/pseudo.hpp"

namespace tscn {

void FusionConfig::validate() const {
  if (!(beta >= 0.0 && beta <= 1.0)) throw ValidationError("fusion beta must lie in [0, 1]");
  if (!(theta > 0.0 && theta < 1.0)) throw ValidationError("pseudo ground truth theta must lie in (0, 1)");
}

PseudoGT make_pseudo_gt(const Eigen::VectorXd& a_fuse, double theta, int source_iteration) {
  PseudoGT out;
  out.g = (a_fuse.array() > theta).cast<double>().matrix();
  out.source_iteration = source_iteration;
  return out;
}

}  // namespace tscn
