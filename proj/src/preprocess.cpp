#include "psfv/preprocess.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace psfv {

namespace {

void normalize_in_place(std::vector<NormalizedStroke>& strokes, double& scale_out)
{
    double min_x = std::numeric_limits<double>::infinity();
    double min_y = min_x;
    double max_x = -min_x;
    double max_y = -min_x;
    double t0 = 0.0;
    bool first = true;
    for (const auto& s : strokes) {
        for (const auto& p : s.points) {
            if (first) {
                t0 = p.t;
                first = false;
            }
            min_x = std::min(min_x, p.x);
            max_x = std::max(max_x, p.x);
            min_y = std::min(min_y, p.y);
            max_y = std::max(max_y, p.y);
        }
    }
    if (first) throw PreprocessError("empty signature");

    const double dy = max_y - min_y;
    const double dx = max_x - min_x;
    double scale = 1.0;
    if (dy > 0.0)
        scale = kRasterHeight / dy;
    else if (dx > 0.0)
        scale = kRasterHeight / dx;

    for (auto& s : strokes) {
        for (auto& p : s.points) {
            p.x = (p.x - min_x) * scale;
            p.y = (p.y - min_y) * scale;
            p.t -= t0;
        }
    }
    scale_out = scale;
}

} // namespace

std::size_t NormalizedSignature::point_count() const
{
    std::size_t n = 0;
    for (const auto& s : strokes) n += s.points.size();
    return n;
}

NormalizedSignature normalize(const SignatureInstance& instance)
{
    NormalizedSignature out;
    out.strokes.reserve(instance.strokes.size());
    for (const auto& s : instance.strokes) {
        NormalizedStroke ns;
        ns.points.reserve(s.points.size());
        for (const auto& p : s.points) {
            ns.points.push_back({static_cast<double>(p.x), static_cast<double>(p.y), static_cast<double>(p.t), p.pen});
        }
        out.strokes.push_back(std::move(ns));
    }
    normalize_in_place(out.strokes, out.scale);
    return out;
}

NormalizedSignature normalize(const NormalizedSignature& sig)
{
    NormalizedSignature out = sig;
    normalize_in_place(out.strokes, out.scale);
    return out;
}

std::vector<int> allocate_points(const std::vector<double>& weights, int n)
{
    const auto k = static_cast<int>(weights.size());
    std::vector<int> alloc(weights.size(), 0);
    if (k == 0 || n <= 0) return alloc;

    if (n < k) {
        std::vector<int> order(weights.size());
        std::iota(order.begin(), order.end(), 0);
        std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return weights[a] > weights[b]; });
        for (int i = 0; i < n; ++i) alloc[order[i]] = 1;
        return alloc;
    }

    double total = std::accumulate(weights.begin(), weights.end(), 0.0);
    std::vector<double> w = weights;
    if (!(total > 0.0)) {
        std::fill(w.begin(), w.end(), 1.0);
        total = static_cast<double>(k);
    }

    // Remainders are compared on a 1e-9 grid so near-ties resolve by index.
    std::vector<std::pair<long long, int>> remainders;
    int assigned = 0;
    for (int i = 0; i < k; ++i) {
        const double quota = n * w[i] / total;
        const double fl = std::floor(quota);
        alloc[i] = static_cast<int>(fl);
        assigned += alloc[i];
        remainders.emplace_back(std::llround((quota - fl) * 1e9), i);
    }
    std::stable_sort(remainders.begin(), remainders.end(),
                     [](const auto& a, const auto& b) { return a.first > b.first; });
    for (int i = 0; assigned < n; ++i, ++assigned) alloc[remainders[i].second] += 1;

    for (int i = 0; i < k; ++i) {
        if (alloc[i] > 0) continue;
        auto donor = std::max_element(alloc.begin(), alloc.end());
        *donor -= 1;
        alloc[i] = 1;
    }
    return alloc;
}

namespace {

double stroke_length(const NormalizedStroke& s)
{
    double len = 0.0;
    for (std::size_t i = 1; i < s.points.size(); ++i) {
        len += std::hypot(s.points[i].x - s.points[i - 1].x, s.points[i].y - s.points[i - 1].y);
    }
    return len;
}

} // namespace

ResampledSequence resample_uniform(const NormalizedSignature& sig, int n)
{
    if (n < 2) throw PreprocessError("resample count must be at least 2");
    if (sig.point_count() == 0) throw PreprocessError("empty signature");

    std::vector<const NormalizedStroke*> strokes;
    std::vector<double> lengths;
    for (const auto& s : sig.strokes) {
        if (s.points.empty()) continue;
        strokes.push_back(&s);
        lengths.push_back(stroke_length(s));
    }
    const auto alloc = allocate_points(lengths, n);

    ResampledSequence out;
    out.points.reserve(static_cast<std::size_t>(n));
    for (std::size_t si = 0; si < strokes.size(); ++si) {
        const auto& pts = strokes[si]->points;
        const int m = alloc[si];
        if (m == 0) continue;
        if (m == 1) {
            const bool last_stroke = si + 1 == strokes.size();
            const auto& p = last_stroke ? pts.back() : pts.front();
            out.points.push_back({p.x, p.y, p.t, 0.0});
            continue;
        }

        // Cumulative arc length at each original vertex.
        std::vector<double> cum(pts.size(), 0.0);
        for (std::size_t i = 1; i < pts.size(); ++i) {
            cum[i] = cum[i - 1] + std::hypot(pts[i].x - pts[i - 1].x, pts[i].y - pts[i - 1].y);
        }
        const double total = cum.back();
        std::size_t seg = 0;
        for (int k = 0; k < m; ++k) {
            std::array<double, 4> row{};
            if (k == m - 1) {
                row = {pts.back().x, pts.back().y, pts.back().t, 0.0};
            } else if (total <= 0.0) {
                row = {pts.front().x, pts.front().y, pts.front().t, 1.0};
            } else {
                const double target = total * k / (m - 1);
                while (seg + 2 < pts.size() && cum[seg + 1] < target) ++seg;
                const double span = cum[seg + 1] - cum[seg];
                const double u = span > 0.0 ? std::clamp((target - cum[seg]) / span, 0.0, 1.0) : 0.0;
                const auto& a = pts[seg];
                const auto& b = pts[seg + 1];
                row = {a.x + u * (b.x - a.x), a.y + u * (b.y - a.y), a.t + u * (b.t - a.t), 1.0};
            }
            out.points.push_back(row);
        }
    }
    return out;
}

} // namespace psfv
