#include "psfv/psf.hpp"

#include <algorithm>
#include <cmath>

namespace psfv {

std::string_view to_string(FeatureVariant v)
{
    switch (v) {
    case FeatureVariant::original: return "original";
    case FeatureVariant::temporal: return "temporal";
    case FeatureVariant::stacked: return "stacked";
    }
    return "unknown";
}

std::optional<FeatureVariant> parse_variant(std::string_view s)
{
    if (s == "original") return FeatureVariant::original;
    if (s == "temporal") return FeatureVariant::temporal;
    if (s == "stacked") return FeatureVariant::stacked;
    return std::nullopt;
}

int channel_count(FeatureVariant v)
{
    return v == FeatureVariant::stacked ? 14 : 7;
}

double temporal_coefficient(double elapsed_ms)
{
    if (!(elapsed_ms >= 0.0)) throw FeatureError("negative elapsed time");
    return std::log(elapsed_ms + 1.0);
}

SegmentFeature segment_psf(const Eigen::Vector2d& a, const Eigen::Vector2d& b)
{
    const Eigen::Vector2d d = b - a;
    SegmentFeature v;
    v << 1.0, d.x(), d.y(), d.x() * d.x(), d.x() * d.y(), d.y() * d.x(), d.y() * d.y();
    return v;
}

SegmentFeature segment_psf_scaled(const Eigen::Vector2d& a, const Eigen::Vector2d& b, double tau)
{
    SegmentFeature v = segment_psf(a, b);
    v[0] *= tau;
    v.segment<2>(1) *= tau;
    v.tail<4>() *= tau * tau;
    return v;
}

SegmentFeature segment_psf_temporal(const Eigen::Vector2d& a, double elapsed_ms, const Eigen::Vector2d& b)
{
    return segment_psf_scaled(a, b, temporal_coefficient(elapsed_ms));
}

PixelCoord to_pixel(double x, double y)
{
    const int col = static_cast<int>(std::lround(std::max(x, 0.0)));
    const int row = std::clamp(static_cast<int>(std::lround(y)), 0, kRows - 1);
    return {col, row};
}

int raster_width(int max_col)
{
    const int w = std::max(max_col + 1, 1);
    return std::max(16, (w + 15) / 16 * 16);
}

FeatureTensor rasterize(const NormalizedSignature& sig, FeatureVariant variant)
{
    if (sig.point_count() == 0) throw FeatureError("empty signature");

    int max_col = 0;
    for (const auto& s : sig.strokes) {
        for (const auto& p : s.points) max_col = std::max(max_col, to_pixel(p.x, p.y).col);
    }
    FeatureTensor out(channel_count(variant), kRows, raster_width(max_col), variant);

    Eigen::Matrix<float, 14, 1> values;
    for (const auto& s : sig.strokes) {
        for (std::size_t i = 0; i + 1 < s.points.size(); ++i) {
            const auto& p = s.points[i];
            const auto& q = s.points[i + 1];
            const Eigen::Vector2d a(p.x, p.y);
            const Eigen::Vector2d b(q.x, q.y);
            switch (variant) {
            case FeatureVariant::original:
                values.head<7>() = segment_psf(a, b).cast<float>();
                break;
            case FeatureVariant::temporal:
                values.head<7>() = segment_psf_temporal(a, p.t, b).cast<float>();
                break;
            case FeatureVariant::stacked:
                values.head<7>() = segment_psf(a, b).cast<float>();
                values.tail<7>() = segment_psf_temporal(a, p.t, b).cast<float>();
                break;
            }
            walk_line(to_pixel(p.x, p.y), to_pixel(q.x, q.y), [&](PixelCoord px) {
                for (int c = 0; c < out.channels; ++c) out(c, px.row, px.col) = values[c];
            });
        }
    }
    return out;
}

FeatureTensor scale_to_square(const FeatureTensor& t)
{
    constexpr int target = kRows;
    FeatureTensor out(t.channels, t.height, target, t.variant);
    if (t.width == target) {
        out.data = t.data;
        return out;
    }

    // Column j of the output samples the source at (j + 0.5) * W / 128 - 0.5.
    std::vector<int> lo(target), hi(target);
    std::vector<float> frac(target);
    const double ratio = static_cast<double>(t.width) / target;
    for (int j = 0; j < target; ++j) {
        const double src = std::clamp((j + 0.5) * ratio - 0.5, 0.0, static_cast<double>(t.width - 1));
        lo[j] = static_cast<int>(std::floor(src));
        hi[j] = std::min(lo[j] + 1, t.width - 1);
        frac[j] = static_cast<float>(src - lo[j]);
    }
    for (int c = 0; c < t.channels; ++c) {
        auto src = t.channel(c);
        auto dst = out.channel(c);
        for (int j = 0; j < target; ++j) {
            dst.col(j) = src.col(lo[j]) + frac[j] * (src.col(hi[j]) - src.col(lo[j]));
        }
    }
    return out;
}

} // namespace psfv
