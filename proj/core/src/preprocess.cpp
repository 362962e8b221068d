#include "glioplan/preprocess.hpp"

#include <algorithm>
#include <cmath>

namespace glioplan {

Volume normalize_intensity(const Volume& v) {
    if (!v.all_finite()) throw VolumeError("normalize_intensity: non-finite input");
    Volume out = v;
    std::size_t n = v.voxels_per_channel();
    for (int c = 0; c < v.channels(); ++c) {
        const double* src = v.data().data() + c * n;
        double* dst = out.data().data() + c * n;
        double lo = src[0], hi = src[0];
        for (std::size_t i = 1; i < n; ++i) {
            lo = std::min(lo, src[i]);
            hi = std::max(hi, src[i]);
        }
        double range = hi - lo;
        if (range == 0.0) {
            std::fill(dst, dst + n, 0.0);
        } else {
            for (std::size_t i = 0; i < n; ++i) dst[i] = (src[i] - lo) / range;
        }
    }
    return out;
}

namespace {
inline double lerp(double a, double b, double t) { return a + t * (b - a); }
} // namespace

Volume resample(const Volume& v, int tx, int ty, int tz) {
    if (tx < 1 || ty < 1 || tz < 1) throw VolumeError("resample: target dims must be >= 1");
    if (tx == v.xdim() && ty == v.ydim() && tz == v.zdim()) return v;

    Volume out(v.channels(), tx, ty, tz);
    const int X = v.xdim(), Y = v.ydim(), Z = v.zdim();
    auto src_coord = [](int i, int n_out, int n_in) {
        double c = (i + 0.5) * static_cast<double>(n_in) / n_out - 0.5;
        return std::clamp(c, 0.0, static_cast<double>(n_in - 1));
    };
    for (int c = 0; c < v.channels(); ++c) {
        for (int z = 0; z < tz; ++z) {
            double fz = src_coord(z, tz, Z);
            int z0 = static_cast<int>(fz), z1 = std::min(z0 + 1, Z - 1);
            double wz = fz - z0;
            for (int y = 0; y < ty; ++y) {
                double fy = src_coord(y, ty, Y);
                int y0 = static_cast<int>(fy), y1 = std::min(y0 + 1, Y - 1);
                double wy = fy - y0;
                for (int x = 0; x < tx; ++x) {
                    double fx = src_coord(x, tx, X);
                    int x0 = static_cast<int>(fx), x1 = std::min(x0 + 1, X - 1);
                    double wx = fx - x0;
                    double c00 = lerp(v.at(c, x0, y0, z0), v.at(c, x1, y0, z0), wx);
                    double c10 = lerp(v.at(c, x0, y1, z0), v.at(c, x1, y1, z0), wx);
                    double c01 = lerp(v.at(c, x0, y0, z1), v.at(c, x1, y0, z1), wx);
                    double c11 = lerp(v.at(c, x0, y1, z1), v.at(c, x1, y1, z1), wx);
                    out.at(c, x, y, z) = lerp(lerp(c00, c10, wy), lerp(c01, c11, wy), wz);
                }
            }
        }
    }
    return out;
}

namespace {

std::vector<double> gaussian_kernel(double sigma) {
    int radius = static_cast<int>(std::floor(3.0 * sigma));
    std::vector<double> k(2 * radius + 1);
    double sum = 0.0;
    for (int i = -radius; i <= radius; ++i) {
        double w = std::exp(-0.5 * (i * i) / (sigma * sigma));
        k[i + radius] = w;
        sum += w;
    }
    for (double& w : k) w /= sum;
    return k;
}

// Convolve along one axis with zero padding. axis: 0=x, 1=y, 2=z.
void convolve_axis(const Volume& in, Volume& out, const std::vector<double>& k, int axis) {
    int radius = (static_cast<int>(k.size()) - 1) / 2;
    const int X = in.xdim(), Y = in.ydim(), Z = in.zdim();
    int extent = axis == 0 ? X : (axis == 1 ? Y : Z);
    for (int c = 0; c < in.channels(); ++c)
        for (int z = 0; z < Z; ++z)
            for (int y = 0; y < Y; ++y)
                for (int x = 0; x < X; ++x) {
                    int pos = axis == 0 ? x : (axis == 1 ? y : z);
                    double acc = 0.0;
                    int lo = std::max(-radius, -pos);
                    int hi = std::min(radius, extent - 1 - pos);
                    for (int t = lo; t <= hi; ++t) {
                        double val = axis == 0   ? in.at(c, x + t, y, z)
                                     : axis == 1 ? in.at(c, x, y + t, z)
                                                 : in.at(c, x, y, z + t);
                        acc += k[t + radius] * val;
                    }
                    out.at(c, x, y, z) = acc;
                }
}

} // namespace

Volume gaussian_smooth(const Volume& v, double sigma) {
    if (sigma < 0.0) throw VolumeError("gaussian_smooth: sigma must be >= 0");
    if (sigma == 0.0) return v;
    std::vector<double> k = gaussian_kernel(sigma);
    if (k.size() == 1) return v;
    Volume a(v.channels(), v.xdim(), v.ydim(), v.zdim());
    Volume b(v.channels(), v.xdim(), v.ydim(), v.zdim());
    convolve_axis(v, a, k, 0);
    convolve_axis(a, b, k, 1);
    convolve_axis(b, a, k, 2);
    return a;
}

std::vector<Slice> extract_axial_slices(const Volume& v) {
    std::vector<Slice> out(v.zdim());
    for (int z = 0; z < v.zdim(); ++z) {
        Slice& s = out[z];
        s.channels = v.channels();
        s.x = v.xdim();
        s.y = v.ydim();
        s.data.resize(static_cast<std::size_t>(s.channels) * s.x * s.y);
        for (int c = 0; c < v.channels(); ++c)
            for (int j = 0; j < v.ydim(); ++j)
                for (int i = 0; i < v.xdim(); ++i)
                    s.at(c, i, j) = v.at(c, i, j, z);
    }
    return out;
}

Volume assemble_axial_slices(const std::vector<Slice>& slices) {
    if (slices.empty()) throw VolumeError("assemble_axial_slices: empty input");
    const Slice& s0 = slices[0];
    Volume v(s0.channels, s0.x, s0.y, static_cast<int>(slices.size()));
    for (int z = 0; z < v.zdim(); ++z) {
        const Slice& s = slices[z];
        if (s.channels != s0.channels || s.x != s0.x || s.y != s0.y)
            throw VolumeError("assemble_axial_slices: inconsistent slice dims");
        for (int c = 0; c < v.channels(); ++c)
            for (int j = 0; j < v.ydim(); ++j)
                for (int i = 0; i < v.xdim(); ++i)
                    v.at(c, i, j, z) = s.at(c, i, j);
    }
    return v;
}

} // namespace glioplan
