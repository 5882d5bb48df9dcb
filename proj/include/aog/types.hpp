#pragma once

#include <Eigen/Core>
#include <Eigen/SparseCore>
#include <algorithm>
#include <stdexcept>
#include <string>

namespace aog {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;
using RowMat =
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vec4 = Eigen::Vector4d;
using Vec6 = Eigen::Matrix<double, 6, 1>;
using SparseVec = Eigen::SparseVector<double>;

// ------------------------- errors -------------------------

struct IoError : std::runtime_error {
  explicit IoError(const std::string& msg) : std::runtime_error(msg) {}
};
struct FormatError : std::runtime_error {
  explicit FormatError(const std::string& msg) : std::runtime_error(msg) {}
};
struct ImageTooSmall : std::runtime_error {
  explicit ImageTooSmall(const std::string& msg) : std::runtime_error(msg) {}
};
struct OutOfBounds : std::runtime_error {
  explicit OutOfBounds(const std::string& msg) : std::runtime_error(msg) {}
};
struct LevelMismatch : std::runtime_error {
  explicit LevelMismatch(const std::string& msg) : std::runtime_error(msg) {}
};
struct InvalidAssignment : std::runtime_error {
  explicit InvalidAssignment(const std::string& msg) : std::runtime_error(msg) {}
};
struct DimensionMismatch : std::runtime_error {
  explicit DimensionMismatch(const std::string& msg) : std::runtime_error(msg) {}
};
struct VersionError : std::runtime_error {
  explicit VersionError(const std::string& msg) : std::runtime_error(msg) {}
};
struct CorruptModel : std::runtime_error {
  explicit CorruptModel(const std::string& msg) : std::runtime_error(msg) {}
};
struct InsufficientData : std::runtime_error {
  explicit InsufficientData(const std::string& msg) : std::runtime_error(msg) {}
};
struct LabelCollision : std::runtime_error {
  explicit LabelCollision(const std::string& msg) : std::runtime_error(msg) {}
};

// ------------------------- geometry -------------------------

// Position of a window inside one pyramid level, in cell units of whichever
// grid (full or half resolution) the consumer reads.
struct Placement {
  int level = 0;
  int row = 0;
  int col = 0;

  friend bool operator==(const Placement& a, const Placement& b) {
    return a.level == b.level && a.row == b.row && a.col == b.col;
  }
};

// Extent of a filter window in cells.
struct PartShape {
  int rows = 0;
  int cols = 0;

  friend bool operator==(const PartShape& a, const PartShape& b) {
    return a.rows == b.rows && a.cols == b.cols;
  }
  friend bool operator<(const PartShape& a, const PartShape& b) {
    return a.rows != b.rows ? a.rows < b.rows : a.cols < b.cols;
  }
};

// Axis-aligned box in image pixels, [x0, x1) x [y0, y1).
struct Rect {
  double x0 = 0, y0 = 0, x1 = 0, y1 = 0;

  double width() const { return x1 - x0; }
  double height() const { return y1 - y0; }
  double area() const { return std::max(0.0, width()) * std::max(0.0, height()); }
  double cx() const { return 0.5 * (x0 + x1); }
  double cy() const { return 0.5 * (y0 + y1); }
  bool contains(double x, double y) const {
    return x >= x0 && x < x1 && y >= y0 && y < y1;
  }

  friend bool operator==(const Rect& a, const Rect& b) {
    return a.x0 == b.x0 && a.y0 == b.y0 && a.x1 == b.x1 && a.y1 == b.y1;
  }
};

inline double iou(const Rect& a, const Rect& b) {
  const double ix = std::max(0.0, std::min(a.x1, b.x1) - std::max(a.x0, b.x0));
  const double iy = std::max(0.0, std::min(a.y1, b.y1) - std::max(a.y0, b.y0));
  const double inter = ix * iy;
  const double uni = a.area() + b.area() - inter;
  return uni > 0 ? inter / uni : 0.0;
}

}  // namespace aog
