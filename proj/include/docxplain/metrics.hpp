#pragma once

// Faithfulness and interpretability metrics for attribution maps:
// AOPC (MoRF/LeRF) by 8x8 pixel flipping, ABPC, max-Sensitivity,
// Infidelity and Continuity.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "docxplain/attribution.hpp"
#include "docxplain/error.hpp"
#include "docxplain/imaging.hpp"
#include "docxplain/model.hpp"
#include "docxplain/random.hpp"

namespace docxplain {

enum class Direction { morf, lerf };

inline std::string to_string(Direction d) { return d == Direction::morf ? "morf" : "lerf"; }

/// Confidence drop f(x0)[t] - f(xk)[t] after removing a growing fraction of
/// patches. Step 0 is always (0, 0).
struct PerturbationCurve {
    Direction direction = Direction::morf;
    std::vector<double> fractions;
    std::vector<double> drops;

    /// Mean over all steps including step 0.
    [[nodiscard]] double aopc() const {
        if (drops.empty()) return 0.0;
        return std::accumulate(drops.begin(), drops.end(), 0.0) / static_cast<double>(drops.size());
    }
};

/// Neumaier-compensated mean.
inline double compensated_mean(std::span<const double> xs) {
    if (xs.empty()) return 0.0;
    double sum = 0.0, comp = 0.0;
    for (double x : xs) {
        const double t = sum + x;
        comp += std::abs(sum) >= std::abs(x) ? (sum - t) + x : (x - t) + sum;
        sum = t;
    }
    return (sum + comp) / static_cast<double>(xs.size());
}

struct AopcParams {
    int patch = 8;
    int steps = 20;

    void validate() const {
        if (patch < 1) throw ArgumentError("aopc: patch must be >= 1");
        if (steps < 1) throw ArgumentError("aopc: steps must be >= 1");
    }
};

namespace detail {

struct Patch {
    int x, y, w, h;
};

inline std::vector<Patch> tile_patches(int width, int height, int size) {
    std::vector<Patch> tiles;
    for (int y = 0; y < height; y += size)
        for (int x = 0; x < width; x += size) tiles.push_back({x, y, std::min(size, width - x), std::min(size, height - y)});
    return tiles;
}

inline void check_same_size(const RasterImage& img, const AttributionMap& attr) {
    if (img.width != attr.width || img.height != attr.height)
        throw ShapeError("metric: image " + std::to_string(img.width) + "x" + std::to_string(img.height) +
                         " and attribution " + std::to_string(attr.width) + "x" + std::to_string(attr.height) +
                         " differ in resolution");
}

} // namespace detail

/// Patch removal order: descending mean attribution for MoRF, ascending for
/// LeRF, ties broken by raster index in both directions.
inline std::vector<std::size_t> rank_patches(const AttributionMap& attr, int patch, Direction dir) {
    const auto tiles = detail::tile_patches(attr.width, attr.height, patch);
    std::vector<double> mean(tiles.size());
    for (std::size_t i = 0; i < tiles.size(); ++i) {
        double s = 0.0;
        for (int y = tiles[i].y; y < tiles[i].y + tiles[i].h; ++y)
            for (int x = tiles[i].x; x < tiles[i].x + tiles[i].w; ++x) s += attr.at(x, y);
        mean[i] = s / static_cast<double>(tiles[i].w * tiles[i].h);
    }
    std::vector<std::size_t> order(tiles.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        return dir == Direction::morf ? mean[a] > mean[b] : mean[a] < mean[b];
    });
    return order;
}

/// Pixel-flipping perturbation curve. Removing a patch flips its pixels in
/// the Otsu-binarized view of the input (white -> black, black -> white)
/// and writes the flipped binary value into every channel.
inline PerturbationCurve aopc(Classifier& f, const RasterImage& img, const AttributionMap& attr, std::uint32_t target,
                              Direction dir, const AopcParams& params = {}) {
    params.validate();
    detail::check_same_size(img, attr);
    const auto tiles = detail::tile_patches(img.width, img.height, params.patch);
    const auto order = rank_patches(attr, params.patch, dir);
    const auto binary = otsu_binarize(to_grayscale(img)).image;

    std::vector<RasterImage> images;
    images.reserve(static_cast<std::size_t>(params.steps) + 1);
    images.push_back(img);
    RasterImage current = img;
    std::size_t flipped = 0;
    const std::size_t total = tiles.size();
    for (int k = 1; k <= params.steps; ++k) {
        const std::size_t upto = total * static_cast<std::size_t>(k) / static_cast<std::size_t>(params.steps);
        for (; flipped < upto; ++flipped) {
            const auto& t = tiles[order[flipped]];
            for (int y = t.y; y < t.y + t.h; ++y)
                for (int x = t.x; x < t.x + t.w; ++x) {
                    const float v = binary.at(x, y) == kForeground ? 1.0f : 0.0f;
                    for (int c = 0; c < img.channels; ++c) current.at(x, y, c) = v;
                }
        }
        images.push_back(current);
    }
    const auto scores = score_all(f, images);
    PerturbationCurve curve;
    curve.direction = dir;
    const double base = scores.front().at(target);
    for (int k = 0; k <= params.steps; ++k) {
        curve.fractions.push_back(static_cast<double>(k) / params.steps);
        curve.drops.push_back(k == 0 ? 0.0 : base - scores[static_cast<std::size_t>(k)].at(target));
    }
    return curve;
}

/// Pointwise mean of curves sharing one step grid.
inline PerturbationCurve mean_curve(std::span<const PerturbationCurve> curves) {
    if (curves.empty()) throw ArgumentError("mean_curve: no curves");
    PerturbationCurve out;
    out.direction = curves.front().direction;
    out.fractions = curves.front().fractions;
    out.drops.assign(out.fractions.size(), 0.0);
    std::vector<double> column(curves.size());
    for (std::size_t k = 0; k < out.fractions.size(); ++k) {
        for (std::size_t i = 0; i < curves.size(); ++i) {
            if (curves[i].fractions != out.fractions) throw ArgumentError("mean_curve: step grids differ");
            column[i] = curves[i].drops[k];
        }
        out.drops[k] = compensated_mean(column);
    }
    return out;
}

/// Area between the MoRF and LeRF curves: AOPC(MoRF) - AOPC(LeRF).
inline double abpc(const PerturbationCurve& morf, const PerturbationCurve& lerf) {
    if (morf.fractions != lerf.fractions) throw ArgumentError("abpc: curves use different step grids");
    return morf.aopc() - lerf.aopc();
}

// ---------------------------------------------------------------------------

/// An attribution procedure re-runnable on perturbed inputs.
using AttributionMethod = std::function<AttributionMap(Classifier&, const RasterImage&, std::uint32_t target)>;

struct SensitivityParams {
    double radius = 0.02;
    int n_samples = 10;
    std::uint64_t seed = 0;

    void validate() const {
        if (!(radius > 0.0)) throw ArgumentError("sensitivity: radius must be > 0");
        if (n_samples < 1) throw ArgumentError("sensitivity: n_samples must be >= 1");
    }
};

struct SensitivityResult {
    double value = 0.0;
    /// The unperturbed attribution had zero norm; value is the unnormalized
    /// maximum difference norm.
    bool zero_denominator = false;
};

inline double frobenius_distance(const AttributionMap& a, const AttributionMap& b) {
    if (a.values.size() != b.values.size()) throw ShapeError("attribution sizes differ");
    double s = 0.0;
    for (std::size_t i = 0; i < a.values.size(); ++i) s += (a.values[i] - b.values[i]) * (a.values[i] - b.values[i]);
    return std::sqrt(s);
}

inline double frobenius_norm(const AttributionMap& a) {
    double s = 0.0;
    for (double v : a.values) s += v * v;
    return std::sqrt(s);
}

/// Max over uniform L-infinity perturbations of the relative change of the
/// attribution. Each pixel gets one offset shared by all of its channels;
/// perturbed values are clamped to [0,1].
inline SensitivityResult max_sensitivity(const AttributionMethod& method, Classifier& f, const RasterImage& img,
                                         std::uint32_t target, const SensitivityParams& params = {}) {
    params.validate();
    const auto reference = method(f, img, target);
    const double denom = frobenius_norm(reference);
    SplitMix64 rng(params.seed);
    double worst = 0.0;
    for (int s = 0; s < params.n_samples; ++s) {
        RasterImage perturbed = img;
        for (std::size_t p = 0; p < img.pixel_count(); ++p) {
            const double delta = rng.uniform(-params.radius, params.radius);
            for (int c = 0; c < img.channels; ++c) {
                float& v = perturbed.data[p * img.channels + c];
                v = static_cast<float>(std::clamp(static_cast<double>(v) + delta, 0.0, 1.0));
            }
        }
        worst = std::max(worst, frobenius_distance(method(f, perturbed, target), reference));
    }
    if (denom == 0.0) return {worst, true};
    return {worst / denom, false};
}

struct InfidelityParams {
    int patch = 8;
    int n_samples = 128;
    std::uint64_t seed = 0;

    void validate() const {
        if (patch < 1) throw ArgumentError("infidelity: patch must be >= 1");
        if (n_samples < 1) throw ArgumentError("infidelity: n_samples must be >= 1");
    }
};

/// Mean squared mismatch between the attribution-weighted perturbation and
/// the actual score change, for perturbations that zero a random patch.
inline double infidelity(Classifier& f, const RasterImage& img, const AttributionMap& attr, std::uint32_t target,
                         const InfidelityParams& params = {}) {
    params.validate();
    detail::check_same_size(img, attr);
    if (params.patch > img.width || params.patch > img.height) throw ArgumentError("infidelity: patch larger than image");
    const RasterImage gray = to_grayscale(img);
    SplitMix64 rng(params.seed);
    std::vector<RasterImage> images;
    std::vector<double> dots;
    images.reserve(static_cast<std::size_t>(params.n_samples));
    for (int s = 0; s < params.n_samples; ++s) {
        const int px = static_cast<int>(rng.below(static_cast<std::uint64_t>(img.width - params.patch + 1)));
        const int py = static_cast<int>(rng.below(static_cast<std::uint64_t>(img.height - params.patch + 1)));
        RasterImage removed = img;
        double dot = 0.0;
        for (int y = py; y < py + params.patch; ++y)
            for (int x = px; x < px + params.patch; ++x) {
                dot += static_cast<double>(gray.at(x, y)) * attr.at(x, y);
                for (int c = 0; c < img.channels; ++c) removed.at(x, y, c) = 0.0f;
            }
        images.push_back(std::move(removed));
        dots.push_back(dot);
    }
    const double base = f.score(img).at(target);
    const auto scores = score_all(f, images);
    std::vector<double> sq(dots.size());
    for (std::size_t i = 0; i < dots.size(); ++i) {
        const double diff = dots[i] - (base - scores[i].at(target));
        sq[i] = diff * diff;
    }
    return compensated_mean(sq);
}

/// Average of the mean absolute horizontal and mean absolute vertical
/// neighbor differences.
inline double continuity(const AttributionMap& attr) {
    if (attr.width < 2 || attr.height < 2) throw ArgumentError("continuity: map must be at least 2x2");
    double h = 0.0, v = 0.0;
    for (int y = 0; y < attr.height; ++y)
        for (int x = 0; x + 1 < attr.width; ++x) h += std::abs(attr.at(x + 1, y) - attr.at(x, y));
    for (int y = 0; y + 1 < attr.height; ++y)
        for (int x = 0; x < attr.width; ++x) v += std::abs(attr.at(x, y + 1) - attr.at(x, y));
    h /= static_cast<double>((attr.width - 1) * attr.height);
    v /= static_cast<double>(attr.width * (attr.height - 1));
    return 0.5 * (h + v);
}

// ---------------------------------------------------------------------------

struct MetricReport {
    double aopc_morf = 0.0;
    double aopc_lerf = 0.0;
    double abpc = 0.0;
    double sensitivity = 0.0;
    bool sensitivity_zero_denominator = false;
    double infidelity = 0.0;
    double continuity = 0.0;
    std::size_t n_samples = 1;
};

/// Aggregate of per-sample reports (compensated means). abpc stays equal to
/// aopc_morf - aopc_lerf up to rounding.
inline MetricReport aggregate(std::span<const MetricReport> rows) {
    MetricReport out;
    out.n_samples = rows.size();
    if (rows.empty()) return out;
    auto mean_of = [&](double MetricReport::*field) {
        std::vector<double> xs;
        xs.reserve(rows.size());
        for (const auto& r : rows) xs.push_back(r.*field);
        return compensated_mean(xs);
    };
    out.aopc_morf = mean_of(&MetricReport::aopc_morf);
    out.aopc_lerf = mean_of(&MetricReport::aopc_lerf);
    out.abpc = out.aopc_morf - out.aopc_lerf;
    out.sensitivity = mean_of(&MetricReport::sensitivity);
    out.infidelity = mean_of(&MetricReport::infidelity);
    out.continuity = mean_of(&MetricReport::continuity);
    out.sensitivity_zero_denominator =
        std::any_of(rows.begin(), rows.end(), [](const MetricReport& r) { return r.sensitivity_zero_denominator; });
    return out;
}

} // namespace docxplain
