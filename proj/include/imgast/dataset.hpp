// Synthetic supervised dataset for the controller: rendered, preprocessed
// views labelled with the (d, theta) they were rendered at.
#pragma once

#include "imgast/imaging.hpp"
#include "imgast/train.hpp"

#include <vector>

namespace imgast {

struct DatasetGrid {
  double d_min = -10.0;
  double d_max = 10.0;
  int d_steps = 41;
  double theta_min = -30.0;
  double theta_max = 30.0;
  int theta_steps = 41;
  int phase_samples = 5;  // evenly spaced over one dash period
};

/// Full grid product; targets are (d meters, theta degrees).
std::vector<TrainingSample> make_dataset(const SceneConfig& scene, const DatasetGrid& grid);

}  // namespace imgast
