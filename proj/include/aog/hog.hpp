#pragma once

#include <vector>

#include "aog/image.hpp"
#include "aog/types.hpp"

namespace aog {

struct HogConfig {
  int cell_size = 8;
  int orientation_bins = 9;  // unsigned gradients over [0, pi)
  int levels_per_octave = 5;
  int min_level_cells = 5;
  double block_norm_epsilon = 1e-4;
};

// Grid of block-normalized cell descriptors. Each cell carries
// orientation_bins * 4 values (one copy per 2x2 normalization block).
struct FeatureGrid {
  int rows = 0;
  int cols = 0;
  int cell_dims = 0;
  // (rows*cols) x cell_dims, row-major so each cell descriptor is contiguous;
  // cell (r,c) lives at row r*cols + c.
  RowMat data;

  Eigen::Ref<const Eigen::RowVectorXd> cell(int r, int c) const {
    return data.row(r * cols + c);
  }
  bool empty() const { return rows == 0 || cols == 0; }
};

struct HogPyramid {
  struct Level {
    double scale = 1.0;  // level pixels = original pixels * scale
    FeatureGrid full;    // cells of config.cell_size pixels
    FeatureGrid half;    // same rescaled image at cell_size * 2
  };
  std::vector<Level> levels;
  HogConfig config;
};

// Levels run finest to coarsest with ratio 2^(1/levels_per_octave); a level is
// kept while its full-resolution grid has at least min_level_cells cells per
// side. Throws ImageTooSmall when not even the finest level qualifies.
HogPyramid build_hog_pyramid(const Image& image, const HogConfig& config = {});

// Concatenated cell descriptors of a shape-sized window read from the
// full-resolution (part) or half-resolution (root) grid; row-major cells.
Vec extract_part_feature(const HogPyramid& pyramid, const Placement& p,
                         const PartShape& shape);
Vec extract_root_feature(const HogPyramid& pyramid, const Placement& p,
                         const PartShape& shape);

// (dx, dy, dx^2, dy^2) of p relative to anchor, in cell units.
Vec4 deformation_feature(const Placement& anchor, const Placement& p);

// A point in full-resolution cell coordinates (fractional allowed).
struct CellPoint {
  double row = 0;
  double col = 0;
};

// Binary geometric relation between two placed leaf windows:
// [clockwise, anti-clockwise, near, far]. One rotation bin and one
// distance bin are always set. Rotation compares the anchor-to-anchor
// segment with the deformed center-to-center segment (zero deviation ties
// to clockwise); "near" means the second window's center falls inside the
// first window dilated by its own width/height on each side.
Vec4 leaf_pair_feature(const Placement& p_i, const PartShape& shape_i,
                       const Placement& p_ip, const PartShape& shape_ip,
                       const CellPoint& anchor_i, const CellPoint& anchor_ip);

// Binary relation between two object windows:
// [above, below, beside, overlap, near, far]; exactly one bin set, decided
// by where box_rp's center falls (flanking bands one box-dimension deep,
// "near" inside the 2x dilated box).
Vec6 and_pair_feature(const Rect& box_r, const Rect& box_rp);

// Bilinear resampling of a row-major cell grid descriptor to a new shape;
// identity when shapes match.
Vec resample_cell_grid(const Vec& descriptor, const PartShape& from,
                       const PartShape& to, int cell_dims);

}  // namespace aog
