#include "imgast/imaging.hpp"

#include "imgast/sim.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <functional>
#include <numbers>
#include <numeric>

namespace imgast {

double Image8x16::mean() const {
  return std::accumulate(px.begin(), px.end(), 0.0) / static_cast<double>(kSize);
}

double Image8x16::max_abs() const {
  double m = 0.0;
  for (double v : px) m = std::max(m, std::abs(v));
  return m;
}

Image8x16 operator+(const Image8x16& a, const Image8x16& b) {
  Image8x16 out = a;
  for (std::size_t i = 0; i < out.px.size(); ++i) out.px[i] += b.px[i];
  return out;
}

Image8x16 operator-(const Image8x16& a, const Image8x16& b) {
  Image8x16 out = a;
  for (std::size_t i = 0; i < out.px.size(); ++i) out.px[i] -= b.px[i];
  out.mean_biased = false;
  return out;
}

void SceneConfig::validate() const {
  if (!(half_width > 0 && dash_length > 0 && gap_length > 0 && edge_line_width > 0 && center_line_width > 0)) {
    throw RenderError("scene geometry must be positive");
  }
  if (draw_lines && !(line_gray > surface_gray && surface_gray > off_taxiway_gray)) {
    throw RenderError("scene grays must satisfy line > surface > off-taxiway");
  }
  for (double g : {line_gray, surface_gray, off_taxiway_gray, sky_gray}) {
    if (!(g >= 0.0 && g <= 1.0)) throw RenderError("scene gray levels must lie in [0, 1]");
  }
  if (!(camera.height > 0 && camera.hfov_deg > 0 && camera.hfov_deg < 180)) throw RenderError("invalid camera");
}

double dash_phase(double downtrack, const SceneConfig& scene) {
  const double period = scene.dash_period();
  double p = std::fmod(downtrack + scene.centerline_offset, period);
  if (p < 0) p += period;
  return p;
}

namespace {

// `x_rel` is downtrack measured from a point whose dash phase is `phase0`.
double ground_gray(double x_rel, double phase0, double y, const SceneConfig& s) {
  const double ay = std::abs(y);
  if (ay > s.half_width) return s.off_taxiway_gray;
  if (!s.draw_lines) return s.surface_gray;
  if (std::abs(ay - s.edge_line_offset) <= 0.5 * s.edge_line_width) return s.line_gray;
  if (ay <= 0.5 * s.center_line_width) {
    const double period = s.dash_period();
    double ph = std::fmod(phase0 + x_rel, period);
    if (ph < 0) ph += period;
    if (ph < s.dash_length) return s.line_gray;
  }
  return s.surface_gray;
}

}  // namespace

Frame128 render(double d, double theta_deg, double downtrack, const SceneConfig& scene) {
  if (!std::isfinite(d) || !std::isfinite(theta_deg) || !std::isfinite(downtrack)) {
    throw RenderError("non-finite state");
  }
  if (std::abs(theta_deg) >= 90.0) throw RenderError("heading out of range: camera does not face down the taxiway");
  const double deg = std::numbers::pi / 180.0;
  const double th = theta_deg * deg;
  const double p = scene.camera.pitch_deg * deg;
  const double ct = std::cos(th);
  const double st = std::sin(th);
  // Camera position and basis; y is positive to the left of the taxiway heading.
  // Downtrack enters only through its dash phase, so shifting it by whole
  // dash periods reproduces the frame exactly.
  const double phase0 = dash_phase(downtrack, scene);
  const double cx = scene.camera.lateral_offset * st;
  const double cy = d - scene.camera.lateral_offset * ct;
  const double h = scene.camera.height;
  const std::array<double, 3> f{ct * std::cos(p), st * std::cos(p), -std::sin(p)};
  const std::array<double, 3> r{st, -ct, 0.0};
  const std::array<double, 3> u{r[1] * f[2] - r[2] * f[1], r[2] * f[0] - r[0] * f[2], r[0] * f[1] - r[1] * f[0]};
  const double half_cols = Frame128::kCols / 2.0;
  const double tan_half = std::tan(0.5 * scene.camera.hfov_deg * deg);

  const int ss = std::max(1, scene.supersample);
  const double weight = 1.0 / (ss * ss);
  Frame128 frame;
  for (int i = 0; i < Frame128::kRows; ++i) {
    for (int j = 0; j < Frame128::kCols; ++j) {
      double acc = 0.0;
      for (int si = 0; si < ss; ++si) {
        const double vn = (Frame128::kRows / 2.0 - (i + (si + 0.5) / ss)) / half_cols * tan_half;
        for (int sj = 0; sj < ss; ++sj) {
          const double un = ((j + (sj + 0.5) / ss) - half_cols) / half_cols * tan_half;
          const double rz = f[2] + un * r[2] + vn * u[2];
          if (rz >= -1e-9) {
            acc += scene.sky_gray;
            continue;
          }
          const double t = h / -rz;
          const double gx = cx + t * (f[0] + un * r[0] + vn * u[0]);
          const double gy = cy + t * (f[1] + un * r[1] + vn * u[1]);
          acc += ground_gray(gx, phase0, gy, scene);
        }
      }
      frame.at(i, j) = ss == 1 ? acc : acc * weight;
    }
  }
  return frame;
}

Frame128 render(const SimState& state, const SceneConfig& scene) {
  return render(state.d, state.theta_deg, state.downtrack, scene);
}

Image8x16 downsample(const Frame128& frame) {
  constexpr int kBox = 16;
  constexpr int kTop = 16;
  Image8x16 out;
  std::array<double, kBox * kBox> box{};
  for (int br = 0; br < Image8x16::kRows; ++br) {
    for (int bc = 0; bc < Image8x16::kCols; ++bc) {
      std::size_t n = 0;
      for (int r = 0; r < kBox; ++r) {
        for (int c = 0; c < kBox; ++c) box[n++] = frame.at(br * kBox + r, bc * kBox + c);
      }
      std::partial_sort(box.begin(), box.begin() + kTop, box.end(), std::greater<>());
      double sum = 0.0;
      for (int k = 0; k < kTop; ++k) sum += box[static_cast<std::size_t>(k)];
      out.at(br, bc) = sum / kTop;
    }
  }
  return out;
}

Image8x16 mean_bias(const Image8x16& img) {
  Image8x16 out = img;
  const double shift = 0.5 - img.mean();
  for (double& v : out.px) v += shift;
  out.mean_biased = true;
  return out;
}

Image8x16 preprocess(const Frame128& frame) { return mean_bias(downsample(frame)); }

Frame128 reconstruct(const Frame128& frame, const Image8x16& x, const Image8x16& x_pert) {
  Frame128 out = frame;
  for (int r = 0; r < Frame128::kRows; ++r) {
    for (int c = 0; c < Frame128::kCols; ++c) {
      const double shift = x_pert.at(r / 16, c / 16) - x.at(r / 16, c / 16);
      out.at(r, c) = std::clamp(frame.at(r, c) + shift, 0.0, 1.0);
    }
  }
  return out;
}

void write_pgm(const std::filesystem::path& path, std::span<const double> px, int rows, int cols) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << "P2\n" << cols << ' ' << rows << "\n255\n";
  for (int r = 0; r < rows; ++r) {
    for (int c = 0; c < cols; ++c) {
      const double v = std::clamp(px[static_cast<std::size_t>(r * cols + c)], 0.0, 1.0);
      out << static_cast<int>(std::floor(v * 255.0 + 0.5)) << (c + 1 == cols ? '\n' : ' ');
    }
  }
}

void write_pgm(const std::filesystem::path& path, const Frame128& frame) {
  write_pgm(path, frame.pixels(), Frame128::kRows, Frame128::kCols);
}

void write_pgm(const std::filesystem::path& path, const Image8x16& img) {
  write_pgm(path, img.values(), Image8x16::kRows, Image8x16::kCols);
}

}  // namespace imgast
