#pragma once

#include "psfv/preprocess.hpp"

#include <Eigen/Core>

#include <array>
#include <cstdint>
#include <optional>
#include <string_view>

namespace psfv {

/// Truncated (level 2) signature of one straight segment, ordered
/// (1; dx, dy; dx*dx, dx*dy, dy*dx, dy*dy). The temporal variant scales
/// level k by tau^k with tau = ln(t + 1).
using SegmentFeature = Eigen::Matrix<double, 7, 1>;

enum class FeatureVariant : std::uint8_t { original = 0, temporal = 1, stacked = 2 };

std::string_view to_string(FeatureVariant v);
std::optional<FeatureVariant> parse_variant(std::string_view s);
int channel_count(FeatureVariant v);

inline constexpr int kRows = 128;

class FeatureError : public std::invalid_argument
{
public:
    using std::invalid_argument::invalid_argument;
};

/// C x 128 x W raster of segment features, stored channel-major then
/// row-major, matching the on-disk layout.
struct FeatureTensor
{
    using Storage = Eigen::Array<float, Eigen::Dynamic, 1>;

    int channels = 0;
    int height = kRows;
    int width = 0;
    FeatureVariant variant = FeatureVariant::original;
    Storage data;

    FeatureTensor() = default;
    FeatureTensor(int c, int h, int w, FeatureVariant v)
        : channels(c), height(h), width(w), variant(v), data(Storage::Zero(Eigen::Index(c) * h * w))
    {}

    float& operator()(int c, int r, int col) { return data[(Eigen::Index(c) * height + r) * width + col]; }
    float operator()(int c, int r, int col) const { return data[(Eigen::Index(c) * height + r) * width + col]; }

    /// One channel as a height x width row-major map.
    auto channel(int c)
    {
        return Eigen::Map<Eigen::Array<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(
            data.data() + Eigen::Index(c) * height * width, height, width);
    }
    auto channel(int c) const
    {
        return Eigen::Map<const Eigen::Array<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(
            data.data() + Eigen::Index(c) * height * width, height, width);
    }
};

/// ln(t + 1); throws FeatureError for negative t.
double temporal_coefficient(double elapsed_ms);

SegmentFeature segment_psf(const Eigen::Vector2d& a, const Eigen::Vector2d& b);

SegmentFeature segment_psf_temporal(const Eigen::Vector2d& a, double elapsed_ms, const Eigen::Vector2d& b);

/// Same as segment_psf_temporal with the coefficient supplied directly.
SegmentFeature segment_psf_scaled(const Eigen::Vector2d& a, const Eigen::Vector2d& b, double tau);

struct PixelCoord
{
    int col = 0;
    int row = 0;
    friend bool operator==(const PixelCoord&, const PixelCoord&) = default;
};

/// Rounds a normalized point onto the raster grid. Rows are clamped to
/// 0..127 since the normalized vertical extent is closed at 128.
PixelCoord to_pixel(double x, double y);

/// Raster width for a signature whose largest rounded column is `max_col`:
/// max_col + 1 rounded up to a multiple of 16, at least 16.
int raster_width(int max_col);

/// Integer midpoint line walk from `a` to `b`, inclusive of both ends.
/// Minor-axis offsets round half away from the start point.
template <class Visit>
void walk_line(PixelCoord a, PixelCoord b, Visit&& visit)
{
    const int dx = b.col - a.col;
    const int dy = b.row - a.row;
    const int adx = dx < 0 ? -dx : dx;
    const int ady = dy < 0 ? -dy : dy;
    const int sx = dx < 0 ? -1 : 1;
    const int sy = dy < 0 ? -1 : 1;
    if (adx >= ady) {
        // err tracks 2*i*ady + adx - 2*adx*offset
        int err = adx;
        int row = a.row;
        for (int i = 0; i <= adx; ++i) {
            visit(PixelCoord{a.col + sx * i, row});
            err += 2 * ady;
            if (err >= 2 * adx && adx > 0) {
                err -= 2 * adx;
                row += sy;
            }
        }
    } else {
        int err = ady;
        int col = a.col;
        for (int i = 0; i <= ady; ++i) {
            visit(PixelCoord{col, a.row + sy * i});
            err += 2 * adx;
            if (err >= 2 * ady) {
                err -= 2 * ady;
                col += sx;
            }
        }
    }
}

FeatureTensor rasterize(const NormalizedSignature& sig, FeatureVariant variant);

/// Resamples every channel along the width axis to 128 columns with linear
/// interpolation at pixel centres (edge-clamped).
FeatureTensor scale_to_square(const FeatureTensor& t);

} // namespace psfv
