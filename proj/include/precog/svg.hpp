#pragma once

#include <Eigen/Core>

#include <filesystem>
#include <sstream>
#include <string>
#include <vector>

#include "precog/scene.hpp"

namespace precog {

// Minimal SVG writer. Drawing calls take data coordinates, mapped onto the
// canvas through the view box given at construction (y up).
class SvgCanvas {
 public:
  SvgCanvas(double width, double height, Eigen::Vector2d data_min,
            Eigen::Vector2d data_max, double margin = 40.0);

  Eigen::Vector2d map(const Eigen::Vector2d& p) const;

  void polyline(const std::vector<Eigen::Vector2d>& points,
                const std::string& color, double stroke_width = 1.5,
                double opacity = 1.0);
  void circle(const Eigen::Vector2d& c, double radius_px,
              const std::string& color, double opacity = 1.0);
  // Axis-aligned rectangle in data coordinates.
  void rect(const Eigen::Vector2d& lo, const Eigen::Vector2d& hi,
            const std::string& fill, double opacity = 1.0);
  // Text anchored at a data position.
  void text(const Eigen::Vector2d& at, const std::string& label,
            double size = 12.0, const std::string& anchor = "start");
  // Text at pixel coordinates.
  void text_px(double x, double y, const std::string& label,
               double size = 12.0, const std::string& anchor = "start");
  void axes(int ticks = 5);

  std::string str() const;
  void save(const std::filesystem::path& path) const;

 private:
  double width_;
  double height_;
  Eigen::Vector2d min_;
  Eigen::Vector2d max_;
  double margin_;
  std::ostringstream body_;
};

// Blue-to-red colour for t in [0, 1].
std::string heat_color(double t);
std::string agent_color(Index agent);

// Context grid (first channel shaded), past, expert future and samples.
std::string render_forecast(const Scene& scene,
                            const std::vector<Positions>& samples,
                            const std::string& title);

struct Series {
  std::string label;
  std::vector<double> x;
  std::vector<double> y;
};

std::string render_line_chart(const std::vector<Series>& series,
                              const std::string& title,
                              const std::string& x_label,
                              const std::string& y_label);

// Cells given by centre and value; missing values are drawn grey.
std::string render_heatmap(const std::vector<Eigen::Vector2d>& centres,
                           const std::vector<double>& values,
                           const std::vector<bool>& present, double cell,
                           const std::string& title);

}  // namespace precog
