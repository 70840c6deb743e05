#pragma once

#include "psfv/ink.hpp"

#include <vector>

namespace psfv {

inline constexpr double kRasterHeight = 128.0;
inline constexpr int kDefaultResampleCount = 128;

struct NormalizedPoint
{
    double x = 0.0;
    double y = 0.0;
    /// Elapsed milliseconds since the first point of the signature.
    double t = 0.0;
    PenState pen = PenState::down;
};

struct NormalizedStroke
{
    std::vector<NormalizedPoint> points;
};

/// Geometry translated to the origin and scaled uniformly so the vertical
/// extent is 128 units; time measured from the first sample.
struct NormalizedSignature
{
    std::vector<NormalizedStroke> strokes;
    double scale = 1.0;

    std::size_t point_count() const;
};

struct ResampledSequence
{
    /// Rows of (x, y, t, pen) with pen = 1 for down, 0 for up.
    std::vector<std::array<double, 4>> points;
};

class PreprocessError : public std::invalid_argument
{
public:
    using std::invalid_argument::invalid_argument;
};

NormalizedSignature normalize(const SignatureInstance& instance);

/// Renormalizes an already-normalized signature. Used to check idempotence
/// and to bring synthetic data into the canonical frame.
NormalizedSignature normalize(const NormalizedSignature& sig);

/// Splits `n` slots across strokes proportionally to `weights`, largest
/// remainder first, ties to the earlier stroke. Every stroke receives at least
/// one slot when `n` allows it.
std::vector<int> allocate_points(const std::vector<double>& weights, int n);

/// Resamples to exactly `n` points placed at equal arc-length spacing within
/// each stroke, with the point budget shared across strokes by arc length.
ResampledSequence resample_uniform(const NormalizedSignature& sig, int n = kDefaultResampleCount);

} // namespace psfv
