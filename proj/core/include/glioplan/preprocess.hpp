#pragma once

#include "glioplan/volume.hpp"

namespace glioplan {

// 2D axial slice, same channel-major / X-fastest layout as Volume.
struct Slice {
    int channels = 0, x = 0, y = 0;
    std::vector<double> data;

    double& at(int c, int i, int j) { return data[(static_cast<std::size_t>(c) * y + j) * x + i]; }
    double at(int c, int i, int j) const { return data[(static_cast<std::size_t>(c) * y + j) * x + i]; }
};

// Per-channel min-max map to [0,1]; a constant channel maps to all zeros.
// Rejects non-finite input.
Volume normalize_intensity(const Volume& v);

// Trilinear resample to target dims. Identical target dims return a bitwise
// copy; constant volumes are preserved exactly (nested-lerp evaluation).
Volume resample(const Volume& v, int tx, int ty, int tz);

// Separable discrete Gaussian, kernel truncated at 3*sigma and renormalized
// to sum 1. sigma = 0 is the identity. Zero padding at borders.
Volume gaussian_smooth(const Volume& v, double sigma);

// Z slices in index order, values unchanged.
std::vector<Slice> extract_axial_slices(const Volume& v);

// Inverse of extract_axial_slices (used by round-trip checks).
Volume assemble_axial_slices(const std::vector<Slice>& slices);

} // namespace glioplan
