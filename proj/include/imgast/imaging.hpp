// Synthetic taxiway camera, brightest-16 downsampling, mean bias and the
// box-wise reconstruction used for report figures.
#pragma once

#include <array>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <vector>

namespace imgast {

class RenderError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

/// 128 x 256 grayscale camera frame, row-major.
class Frame128 {
public:
  static constexpr int kRows = 128;
  static constexpr int kCols = 256;

  Frame128() : px_(kRows * kCols, 0.0) {}
  explicit Frame128(double fill) : px_(kRows * kCols, fill) {}

  double& at(int r, int c) { return px_[static_cast<std::size_t>(r * kCols + c)]; }
  double at(int r, int c) const { return px_[static_cast<std::size_t>(r * kCols + c)]; }
  std::span<const double> pixels() const { return px_; }
  std::span<double> pixels() { return px_; }

  bool operator==(const Frame128&) const = default;

private:
  std::vector<double> px_;
};

/// 8 x 16 controller observation (or a disturbance of the same shape).
struct Image8x16 {
  static constexpr int kRows = 8;
  static constexpr int kCols = 16;
  static constexpr int kSize = kRows * kCols;

  std::array<double, kSize> px{};
  bool mean_biased = false;

  double& at(int r, int c) { return px[static_cast<std::size_t>(r * kCols + c)]; }
  double at(int r, int c) const { return px[static_cast<std::size_t>(r * kCols + c)]; }
  std::span<const double> values() const { return px; }
  double mean() const;
  double max_abs() const;

  bool operator==(const Image8x16&) const = default;
};

Image8x16 operator+(const Image8x16& a, const Image8x16& b);
Image8x16 operator-(const Image8x16& a, const Image8x16& b);

struct CameraConfig {
  double lateral_offset = 3.0;  // meters to the right of the aircraft centerline
  double height = 4.0;          // meters above ground
  double pitch_deg = 15.0;      // downward
  double hfov_deg = 60.0;       // vertical FOV follows from the 1:2 frame aspect
};

struct SceneConfig {
  double half_width = 10.0;
  double edge_line_offset = 9.6;  // line center, meters from taxiway center
  double edge_line_width = 0.5;
  double center_line_width = 0.5;
  double dash_length = 9.0;
  double gap_length = 6.0;
  /// Shifts the dash pattern downtrack; the dash phase of a state is
  /// (downtrack + centerline_offset) mod (dash + gap).
  double centerline_offset = 0.0;
  double line_gray = 0.9;
  double surface_gray = 0.4;
  double off_taxiway_gray = 0.15;
  double sky_gray = 0.7;
  bool draw_lines = true;
  int supersample = 2;  // samples per pixel edge
  CameraConfig camera;

  double dash_period() const { return dash_length + gap_length; }
  /// Throws RenderError on non-positive geometry or an unordered gray ramp.
  void validate() const;
};

struct SimState;

double dash_phase(double downtrack, const SceneConfig& scene);

/// Perspective view of the flat taxiway from the wing camera.
Frame128 render(double d, double theta_deg, double downtrack, const SceneConfig& scene);
Frame128 render(const SimState& state, const SceneConfig& scene);

/// Each output pixel is the mean of the 16 brightest pixels of its 16x16 box.
Image8x16 downsample(const Frame128& frame);

/// Uniform shift so the mean pixel value is exactly 0.5. No clamping.
Image8x16 mean_bias(const Image8x16& img);

/// downsample followed by mean_bias.
Image8x16 preprocess(const Frame128& frame);

/// Shift each 16x16 box of `frame` by (x_pert - x) at that box, clamped to [0, 1].
Frame128 reconstruct(const Frame128& frame, const Image8x16& x, const Image8x16& x_pert);

/// Plain PGM (P2), values scaled to 0..255 with round-half-up after clamping to [0, 1].
void write_pgm(const std::filesystem::path& path, std::span<const double> px, int rows, int cols);
void write_pgm(const std::filesystem::path& path, const Frame128& frame);
void write_pgm(const std::filesystem::path& path, const Image8x16& img);

}  // namespace imgast
