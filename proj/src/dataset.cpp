#include "imgast/dataset.hpp"

namespace imgast {

namespace {

double lerp_step(double lo, double hi, int steps, int i) {
  return steps <= 1 ? lo : lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(steps - 1);
}

}  // namespace

std::vector<TrainingSample> make_dataset(const SceneConfig& scene, const DatasetGrid& grid) {
  std::vector<TrainingSample> out;
  const double period = scene.dash_period();
  for (int p = 0; p < grid.phase_samples; ++p) {
    const double downtrack = period * static_cast<double>(p) / static_cast<double>(grid.phase_samples);
    for (int i = 0; i < grid.d_steps; ++i) {
      const double d = lerp_step(grid.d_min, grid.d_max, grid.d_steps, i);
      for (int j = 0; j < grid.theta_steps; ++j) {
        const double th = lerp_step(grid.theta_min, grid.theta_max, grid.theta_steps, j);
        const Image8x16 x = preprocess(render(d, th, downtrack, scene));
        out.push_back({std::vector<double>(x.px.begin(), x.px.end()), {d, th}});
      }
    }
  }
  return out;
}

}  // namespace imgast
