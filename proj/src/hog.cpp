#include "aog/hog.hpp"

#include <cmath>
#include <numbers>

namespace aog {

namespace {

// Per-channel double-precision planes of one (possibly rescaled) image.
struct Planes {
  int width = 0;
  int height = 0;
  std::vector<Mat> ch;  // each height x width
};

Planes to_planes(const Image& img) {
  Planes p;
  p.width = img.width;
  p.height = img.height;
  p.ch.resize(img.channels);
  for (int c = 0; c < img.channels; ++c) {
    p.ch[c].resize(img.height, img.width);
    for (int y = 0; y < img.height; ++y)
      for (int x = 0; x < img.width; ++x)
        p.ch[c](y, x) = static_cast<double>(img.at(x, y, c));
  }
  return p;
}

Planes resize_bilinear(const Planes& src, int w, int h) {
  Planes dst;
  dst.width = w;
  dst.height = h;
  dst.ch.resize(src.ch.size());
  const double sx = static_cast<double>(src.width) / w;
  const double sy = static_cast<double>(src.height) / h;
  for (std::size_t c = 0; c < src.ch.size(); ++c) {
    dst.ch[c].resize(h, w);
    for (int y = 0; y < h; ++y) {
      double fy = (y + 0.5) * sy - 0.5;
      fy = std::clamp(fy, 0.0, static_cast<double>(src.height - 1));
      const int y0 = static_cast<int>(fy);
      const int y1 = std::min(y0 + 1, src.height - 1);
      const double wy = fy - y0;
      for (int x = 0; x < w; ++x) {
        double fx = (x + 0.5) * sx - 0.5;
        fx = std::clamp(fx, 0.0, static_cast<double>(src.width - 1));
        const int x0 = static_cast<int>(fx);
        const int x1 = std::min(x0 + 1, src.width - 1);
        const double wx = fx - x0;
        dst.ch[c](y, x) = (1 - wy) * ((1 - wx) * src.ch[c](y0, x0) +
                                      wx * src.ch[c](y0, x1)) +
                          wy * ((1 - wx) * src.ch[c](y1, x0) +
                                wx * src.ch[c](y1, x1));
      }
    }
  }
  return dst;
}

// Orientation histograms per cell followed by 4-way block normalization.
// Gradients are centered differences with clamped indexing; for color input
// the channel with the largest magnitude wins per pixel; each pixel votes
// into its containing cell with linear orientation interpolation.
FeatureGrid compute_grid(const Planes& p, int cell, const HogConfig& cfg) {
  FeatureGrid grid;
  const int cells_y = p.height / cell;
  const int cells_x = p.width / cell;
  if (cells_y < 1 || cells_x < 1) return grid;

  const int bins = cfg.orientation_bins;
  Mat hist = Mat::Zero(cells_y * cells_x, bins);
  for (int y = 0; y < cells_y * cell; ++y) {
    const int cy = y / cell;
    for (int x = 0; x < cells_x * cell; ++x) {
      double dx = 0, dy = 0, best = -1;
      for (const Mat& chan : p.ch) {
        const double gx = chan(y, std::min(x + 1, p.width - 1)) -
                          chan(y, std::max(x - 1, 0));
        const double gy = chan(std::min(y + 1, p.height - 1), x) -
                          chan(std::max(y - 1, 0), x);
        const double mag2 = gx * gx + gy * gy;
        if (mag2 > best) {
          best = mag2;
          dx = gx;
          dy = gy;
        }
      }
      const double mag = std::sqrt(best);
      if (mag <= 0) continue;
      double theta = std::atan2(dy, dx);
      if (theta < 0) theta += std::numbers::pi;
      if (theta >= std::numbers::pi) theta -= std::numbers::pi;
      const double bpos = theta / std::numbers::pi * bins;
      const int b0 = std::min(static_cast<int>(bpos), bins - 1);
      const double frac = bpos - b0;
      const int row = cy * cells_x + x / cell;
      hist(row, b0) += mag * (1 - frac);
      hist(row, (b0 + 1) % bins) += mag * frac;
    }
  }

  Vec energy = hist.rowwise().squaredNorm();
  auto block_energy = [&](int cy, int cx) {
    // 2x2 block of cells with top-left (cy,cx), indices clamped into range.
    double e = 0;
    for (int i = 0; i < 2; ++i)
      for (int j = 0; j < 2; ++j) {
        const int r = std::clamp(cy + i, 0, cells_y - 1);
        const int c = std::clamp(cx + j, 0, cells_x - 1);
        e += energy(r * cells_x + c);
      }
    return e;
  };

  grid.rows = cells_y;
  grid.cols = cells_x;
  grid.cell_dims = bins * 4;
  grid.data.resize(cells_y * cells_x, grid.cell_dims);
  for (int cy = 0; cy < cells_y; ++cy)
    for (int cx = 0; cx < cells_x; ++cx) {
      const int row = cy * cells_x + cx;
      int out = 0;
      for (const auto [by, bx] : {std::pair{-1, -1}, std::pair{-1, 0},
                                  std::pair{0, -1}, std::pair{0, 0}}) {
        const double norm =
            1.0 / std::sqrt(block_energy(cy + by, cx + bx) +
                            cfg.block_norm_epsilon);
        for (int b = 0; b < bins; ++b)
          grid.data(row, out++) = std::min(hist(row, b) * norm, 0.2);
      }
    }
  return grid;
}

void check_config(const HogConfig& c) {
  if (c.cell_size < 2 || c.orientation_bins < 2 || c.levels_per_octave < 1 ||
      c.min_level_cells < 1 || c.block_norm_epsilon <= 0)
    throw std::invalid_argument("bad HogConfig");
}

const FeatureGrid& grid_at(const HogPyramid& pyr, const Placement& p,
                           bool half) {
  if (p.level < 0 || p.level >= static_cast<int>(pyr.levels.size()))
    throw OutOfBounds("pyramid level " + std::to_string(p.level));
  return half ? pyr.levels[p.level].half : pyr.levels[p.level].full;
}

Vec extract_window(const FeatureGrid& g, const Placement& p,
                   const PartShape& shape) {
  if (shape.rows < 1 || shape.cols < 1 || p.row < 0 || p.col < 0 ||
      p.row + shape.rows > g.rows || p.col + shape.cols > g.cols)
    throw OutOfBounds("feature window outside grid");
  Vec out(static_cast<Eigen::Index>(shape.rows) * shape.cols * g.cell_dims);
  Eigen::Index off = 0;
  for (int r = 0; r < shape.rows; ++r)
    for (int c = 0; c < shape.cols; ++c) {
      out.segment(off, g.cell_dims) = g.cell(p.row + r, p.col + c).transpose();
      off += g.cell_dims;
    }
  return out;
}

}  // namespace

HogPyramid build_hog_pyramid(const Image& image, const HogConfig& config) {
  check_config(config);
  if (image.width < 1 || image.height < 1 ||
      (image.channels != 1 && image.channels != 3) ||
      image.data.size() != std::size_t(image.width) * image.height *
                               image.channels)
    throw std::invalid_argument("malformed image");

  HogPyramid pyr;
  pyr.config = config;
  const Planes base = to_planes(image);
  for (int k = 0;; ++k) {
    const double scale = std::pow(2.0, -static_cast<double>(k) /
                                           config.levels_per_octave);
    const int w = static_cast<int>(std::lround(image.width * scale));
    const int h = static_cast<int>(std::lround(image.height * scale));
    if (w / config.cell_size < config.min_level_cells ||
        h / config.cell_size < config.min_level_cells)
      break;
    const Planes scaled =
        k == 0 ? to_planes(image) : resize_bilinear(base, w, h);
    HogPyramid::Level level;
    level.scale = scale;
    level.full = compute_grid(scaled, config.cell_size, config);
    level.half = compute_grid(scaled, config.cell_size * 2, config);
    pyr.levels.push_back(std::move(level));
  }
  if (pyr.levels.empty())
    throw ImageTooSmall("image admits no pyramid level with " +
                        std::to_string(config.min_level_cells) +
                        " cells per side");
  return pyr;
}

Vec extract_part_feature(const HogPyramid& pyramid, const Placement& p,
                         const PartShape& shape) {
  return extract_window(grid_at(pyramid, p, false), p, shape);
}

Vec extract_root_feature(const HogPyramid& pyramid, const Placement& p,
                         const PartShape& shape) {
  return extract_window(grid_at(pyramid, p, true), p, shape);
}

Vec4 deformation_feature(const Placement& anchor, const Placement& p) {
  if (anchor.level != p.level)
    throw LevelMismatch("deformation across pyramid levels");
  const double dx = p.col - anchor.col;
  const double dy = p.row - anchor.row;
  return Vec4(dx, dy, dx * dx, dy * dy);
}

Vec4 leaf_pair_feature(const Placement& p_i, const PartShape& shape_i,
                       const Placement& p_ip, const PartShape& shape_ip,
                       const CellPoint& anchor_i, const CellPoint& anchor_ip) {
  if (p_i.level != p_ip.level)
    throw LevelMismatch("leaf pair across pyramid levels");
  Vec4 psi = Vec4::Zero();

  const double ci_row = p_i.row + shape_i.rows / 2.0;
  const double ci_col = p_i.col + shape_i.cols / 2.0;
  const double cp_row = p_ip.row + shape_ip.rows / 2.0;
  const double cp_col = p_ip.col + shape_ip.cols / 2.0;

  // Rotation: sign of the cross product between the anchor-to-anchor segment
  // and the deformed center-to-center segment; ties (parallel) to clockwise.
  const double ax = anchor_ip.col - anchor_i.col;
  const double ay = anchor_ip.row - anchor_i.row;
  const double dx = cp_col - ci_col;
  const double dy = cp_row - ci_row;
  const double cross = ax * dy - ay * dx;
  psi[cross <= 0 ? 0 : 1] = 1;

  // Distance: window of L_i dilated by its own extent on each side.
  const double w = shape_i.cols, h = shape_i.rows;
  const bool near = cp_col >= p_i.col - w && cp_col < p_i.col + 2 * w &&
                    cp_row >= p_i.row - h && cp_row < p_i.row + 2 * h;
  psi[near ? 2 : 3] = 1;
  return psi;
}

Vec6 and_pair_feature(const Rect& box_r, const Rect& box_rp) {
  Vec6 psi = Vec6::Zero();
  const double cx = box_rp.cx(), cy = box_rp.cy();
  const double w = box_r.width(), h = box_r.height();
  int bin;
  if (box_r.contains(cx, cy)) {
    bin = 3;  // overlap
  } else if (cx >= box_r.x0 && cx < box_r.x1 && cy >= box_r.y0 - h &&
             cy < box_r.y0) {
    bin = 0;  // above
  } else if (cx >= box_r.x0 && cx < box_r.x1 && cy >= box_r.y1 &&
             cy <= box_r.y1 + h) {
    bin = 1;  // below
  } else if (cy >= box_r.y0 && cy < box_r.y1 &&
             ((cx >= box_r.x0 - w && cx < box_r.x0) ||
              (cx >= box_r.x1 && cx <= box_r.x1 + w))) {
    bin = 2;  // beside
  } else if (cx >= box_r.x0 - w / 2 && cx < box_r.x1 + w / 2 &&
             cy >= box_r.y0 - h / 2 && cy < box_r.y1 + h / 2) {
    bin = 4;  // near (2x dilated box)
  } else {
    bin = 5;  // far
  }
  psi[bin] = 1;
  return psi;
}

Vec resample_cell_grid(const Vec& descriptor, const PartShape& from,
                       const PartShape& to, int cell_dims) {
  if (descriptor.size() !=
      static_cast<Eigen::Index>(from.rows) * from.cols * cell_dims)
    throw DimensionMismatch("descriptor does not match source shape");
  if (from == to) return descriptor;
  Vec out(static_cast<Eigen::Index>(to.rows) * to.cols * cell_dims);
  for (int r = 0; r < to.rows; ++r) {
    double fr = (r + 0.5) * from.rows / to.rows - 0.5;
    fr = std::clamp(fr, 0.0, static_cast<double>(from.rows - 1));
    const int r0 = static_cast<int>(fr);
    const int r1 = std::min(r0 + 1, from.rows - 1);
    const double wr = fr - r0;
    for (int c = 0; c < to.cols; ++c) {
      double fc = (c + 0.5) * from.cols / to.cols - 0.5;
      fc = std::clamp(fc, 0.0, static_cast<double>(from.cols - 1));
      const int c0 = static_cast<int>(fc);
      const int c1 = std::min(c0 + 1, from.cols - 1);
      const double wc = fc - c0;
      auto cell = [&](int rr, int cc) {
        return descriptor.segment((rr * from.cols + cc) * cell_dims,
                                  cell_dims);
      };
      out.segment((r * to.cols + c) * cell_dims, cell_dims) =
          (1 - wr) * ((1 - wc) * cell(r0, c0) + wc * cell(r0, c1)) +
          wr * ((1 - wc) * cell(r1, c0) + wc * cell(r1, c1));
    }
  }
  return out;
}

}  // namespace aog
