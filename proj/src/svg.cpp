#include "precog/svg.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <limits>
#include <stdexcept>

namespace precog {

namespace {

std::string escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '&': out += "&amp;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.2f", v);
  return buf;
}

std::string tick_label(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.3g", v);
  return buf;
}

}  // namespace

SvgCanvas::SvgCanvas(double width, double height, Eigen::Vector2d data_min,
                     Eigen::Vector2d data_max, double margin)
    : width_(width),
      height_(height),
      min_(data_min),
      max_(data_max),
      margin_(margin) {
  for (int i = 0; i < 2; ++i) {
    if (!(max_[i] > min_[i])) {
      min_[i] -= 0.5;
      max_[i] += 0.5;
    }
  }
}

Eigen::Vector2d SvgCanvas::map(const Eigen::Vector2d& p) const {
  const double w = width_ - 2.0 * margin_;
  const double h = height_ - 2.0 * margin_;
  return {margin_ + (p.x() - min_.x()) / (max_.x() - min_.x()) * w,
          height_ - margin_ - (p.y() - min_.y()) / (max_.y() - min_.y()) * h};
}

void SvgCanvas::polyline(const std::vector<Eigen::Vector2d>& points,
                         const std::string& color, double stroke_width,
                         double opacity) {
  if (points.empty()) return;
  body_ << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\""
        << fmt(stroke_width) << "\" stroke-opacity=\"" << fmt(opacity)
        << "\" points=\"";
  for (std::size_t i = 0; i < points.size(); ++i) {
    const Eigen::Vector2d q = map(points[i]);
    body_ << (i ? " " : "") << fmt(q.x()) << ',' << fmt(q.y());
  }
  body_ << "\"/>\n";
}

void SvgCanvas::circle(const Eigen::Vector2d& c, double radius_px,
                       const std::string& color, double opacity) {
  const Eigen::Vector2d q = map(c);
  body_ << "<circle cx=\"" << fmt(q.x()) << "\" cy=\"" << fmt(q.y())
        << "\" r=\"" << fmt(radius_px) << "\" fill=\"" << color
        << "\" fill-opacity=\"" << fmt(opacity) << "\"/>\n";
}

void SvgCanvas::rect(const Eigen::Vector2d& lo, const Eigen::Vector2d& hi,
                     const std::string& fill, double opacity) {
  const Eigen::Vector2d a = map(lo);
  const Eigen::Vector2d b = map(hi);
  body_ << "<rect x=\"" << fmt(std::min(a.x(), b.x())) << "\" y=\""
        << fmt(std::min(a.y(), b.y())) << "\" width=\""
        << fmt(std::abs(b.x() - a.x())) << "\" height=\""
        << fmt(std::abs(b.y() - a.y())) << "\" fill=\"" << fill
        << "\" fill-opacity=\"" << fmt(opacity) << "\"/>\n";
}

void SvgCanvas::text(const Eigen::Vector2d& at, const std::string& label,
                     double size, const std::string& anchor) {
  const Eigen::Vector2d q = map(at);
  text_px(q.x(), q.y(), label, size, anchor);
}

void SvgCanvas::text_px(double x, double y, const std::string& label,
                        double size, const std::string& anchor) {
  body_ << "<text x=\"" << fmt(x) << "\" y=\"" << fmt(y) << "\" font-size=\""
        << fmt(size) << "\" font-family=\"sans-serif\" text-anchor=\""
        << anchor << "\">" << escape(label) << "</text>\n";
}

void SvgCanvas::axes(int ticks) {
  polyline({{min_.x(), min_.y()}, {max_.x(), min_.y()}}, "#333", 1.0);
  polyline({{min_.x(), min_.y()}, {min_.x(), max_.y()}}, "#333", 1.0);
  for (int i = 0; i <= ticks; ++i) {
    const double f = static_cast<double>(i) / ticks;
    const double x = min_.x() + f * (max_.x() - min_.x());
    const double y = min_.y() + f * (max_.y() - min_.y());
    const Eigen::Vector2d px = map({x, min_.y()});
    const Eigen::Vector2d py = map({min_.x(), y});
    text_px(px.x(), px.y() + 14.0, tick_label(x), 10.0, "middle");
    text_px(py.x() - 4.0, py.y() + 3.0, tick_label(y), 10.0, "end");
  }
}

std::string SvgCanvas::str() const {
  std::ostringstream os;
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << fmt(width_)
     << "\" height=\"" << fmt(height_) << "\" viewBox=\"0 0 " << fmt(width_)
     << ' ' << fmt(height_) << "\">\n"
     << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
     << body_.str() << "</svg>\n";
  return os.str();
}

void SvgCanvas::save(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << str();
}

std::string heat_color(double t) {
  t = std::clamp(std::isfinite(t) ? t : 0.0, 0.0, 1.0);
  const int r = static_cast<int>(std::lround(255.0 * t));
  const int g = static_cast<int>(std::lround(255.0 * (1.0 - std::abs(2.0 * t - 1.0)) * 0.8));
  const int b = static_cast<int>(std::lround(255.0 * (1.0 - t)));
  char buf[8];
  std::snprintf(buf, sizeof(buf), "#%02x%02x%02x", r, g, b);
  return buf;
}

std::string agent_color(Index agent) {
  static const char* kColors[] = {"#1f77b4", "#ff7f0e", "#2ca02c",
                                  "#d62728", "#9467bd", "#8c564b"};
  return kColors[agent % 6];
}

namespace {

std::vector<Eigen::Vector2d> track(const Positions& x, Index a) {
  std::vector<Eigen::Vector2d> out;
  for (Index t = 0; t < x.rows(); ++t) out.push_back(position(x, t, a));
  return out;
}

}  // namespace

std::string render_forecast(const Scene& scene,
                            const std::vector<Positions>& samples,
                            const std::string& title) {
  Eigen::Vector2d lo = Eigen::Vector2d::Constant(std::numeric_limits<double>::infinity());
  Eigen::Vector2d hi = -lo;
  auto grow = [&](const Positions& x) {
    for (Index t = 0; t < x.rows(); ++t) {
      for (Index a = 0; a < scene.num_agents; ++a) {
        if (!scene.agent_mask[a]) continue;
        lo = lo.cwiseMin(position(x, t, a));
        hi = hi.cwiseMax(position(x, t, a));
      }
    }
  };
  grow(scene.past);
  grow(scene.future);
  for (const Positions& s : samples) grow(s);
  lo -= Eigen::Vector2d::Constant(2.0);
  hi += Eigen::Vector2d::Constant(2.0);
  const double span = std::max(hi.x() - lo.x(), hi.y() - lo.y());
  hi = lo + Eigen::Vector2d::Constant(span);

  SvgCanvas canvas(600, 600, lo, hi);
  const ContextGrid& g = scene.grid;
  if (g.channels > 0 && g.yaw == 0.0) {
    for (Index r = 0; r < g.height; ++r) {
      for (Index c = 0; c < g.width; ++c) {
        double v = 0.0;
        for (Index ch = 0; ch < g.channels; ++ch) v = std::max(v, g.at(r, c, ch));
        if (v <= 0.0) continue;
        const Eigen::Vector2d centre = g.to_world(Eigen::Vector2d(c, r));
        const Eigen::Vector2d half = Eigen::Vector2d::Constant(0.5 * g.resolution);
        if ((centre + half).x() < lo.x() || (centre - half).x() > hi.x() ||
            (centre + half).y() < lo.y() || (centre - half).y() > hi.y()) {
          continue;
        }
        canvas.rect((centre - half).cwiseMax(lo), (centre + half).cwiseMin(hi),
                    "#bbbbbb", 0.3 * std::min(v, 1.0));
      }
    }
  }
  for (const Positions& s : samples) {
    for (Index a = 0; a < scene.num_agents; ++a) {
      if (scene.agent_mask[a]) canvas.polyline(track(s, a), agent_color(a), 1.0, 0.35);
    }
  }
  for (Index a = 0; a < scene.num_agents; ++a) {
    if (!scene.agent_mask[a]) continue;
    canvas.polyline(track(scene.past, a), "#000000", 2.5);
    canvas.polyline(track(scene.future, a), agent_color(a), 2.5);
    canvas.circle(position(scene.past, scene.past_steps() - 1, a), 4.0,
                  agent_color(a));
  }
  canvas.text_px(300, 24, title, 14.0, "middle");
  return canvas.str();
}

std::string render_line_chart(const std::vector<Series>& series,
                              const std::string& title,
                              const std::string& x_label,
                              const std::string& y_label) {
  Eigen::Vector2d lo = Eigen::Vector2d::Constant(std::numeric_limits<double>::infinity());
  Eigen::Vector2d hi = -lo;
  for (const Series& s : series) {
    for (std::size_t i = 0; i < s.x.size(); ++i) {
      lo = lo.cwiseMin(Eigen::Vector2d(s.x[i], s.y[i]));
      hi = hi.cwiseMax(Eigen::Vector2d(s.x[i], s.y[i]));
    }
  }
  if (!lo.allFinite()) {
    lo.setZero();
    hi.setOnes();
  }
  lo.y() = std::min(lo.y(), 0.0);
  SvgCanvas canvas(640, 420, lo, hi, 60.0);
  canvas.axes();
  for (std::size_t k = 0; k < series.size(); ++k) {
    const Series& s = series[k];
    std::vector<Eigen::Vector2d> pts;
    for (std::size_t i = 0; i < s.x.size(); ++i) pts.emplace_back(s.x[i], s.y[i]);
    canvas.polyline(pts, agent_color(static_cast<Index>(k)), 2.0);
    for (const auto& p : pts) canvas.circle(p, 3.0, agent_color(static_cast<Index>(k)));
    canvas.text_px(640 - 70, 60 + 16.0 * static_cast<double>(k), s.label, 12.0, "end");
  }
  canvas.text_px(320, 24, title, 14.0, "middle");
  canvas.text_px(320, 410, x_label, 12.0, "middle");
  canvas.text_px(14, 210, y_label, 12.0, "start");
  return canvas.str();
}

std::string render_heatmap(const std::vector<Eigen::Vector2d>& centres,
                           const std::vector<double>& values,
                           const std::vector<bool>& present, double cell,
                           const std::string& title) {
  if (centres.size() != values.size() || centres.size() != present.size()) {
    throw std::invalid_argument("render_heatmap: size mismatch");
  }
  Eigen::Vector2d lo = Eigen::Vector2d::Constant(std::numeric_limits<double>::infinity());
  Eigen::Vector2d hi = -lo;
  double vmin = std::numeric_limits<double>::infinity();
  double vmax = -vmin;
  for (std::size_t i = 0; i < centres.size(); ++i) {
    lo = lo.cwiseMin(centres[i]);
    hi = hi.cwiseMax(centres[i]);
    if (present[i]) {
      vmin = std::min(vmin, values[i]);
      vmax = std::max(vmax, values[i]);
    }
  }
  const Eigen::Vector2d half = Eigen::Vector2d::Constant(0.5 * cell);
  SvgCanvas canvas(600, 600, lo - half, hi + half, 60.0);
  for (std::size_t i = 0; i < centres.size(); ++i) {
    const double t = vmax > vmin ? (values[i] - vmin) / (vmax - vmin) : 1.0;
    canvas.rect(centres[i] - half, centres[i] + half,
                present[i] ? heat_color(t) : "#888888");
  }
  canvas.axes();
  canvas.text_px(300, 24, title, 14.0, "middle");
  canvas.text_px(300, 590,
                 "min " + tick_label(vmin) + "  max " + tick_label(vmax), 11.0,
                 "middle");
  return canvas.str();
}

}  // namespace precog
