#pragma once

// SLIC superpixels restricted to an arbitrary pixel region of a grayscale
// plane. Used to split large foreground components (tables, figures) into
// compact sub-features.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <span>
#include <vector>

#include "docxplain/error.hpp"

namespace docxplain {

struct SlicParams {
    int n_segments = 50;
    double compactness = 10.0;
    /// A foreground component is split when its area is at least this
    /// fraction of the model-resolution image.
    double area_fraction_trigger = 0.05;
    int iterations = 10;

    void validate() const {
        if (n_segments < 1) throw ArgumentError("SLIC: n_segments must be >= 1");
        if (!(compactness > 0.0)) throw ArgumentError("SLIC: compactness must be > 0");
        if (!(area_fraction_trigger > 0.0 && area_fraction_trigger <= 1.0))
            throw ArgumentError("SLIC: area_fraction_trigger must lie in (0,1]");
        if (iterations < 1) throw ArgumentError("SLIC: iterations must be >= 1");
    }
};

/// Clusters the pixels listed in `region` (row-major indices into a w x h
/// plane). `gray` is either empty (purely spatial clustering) or holds w*h
/// intensities in [0,1]. Returns one cluster id per region pixel, in the
/// same order as `region`; ids are contiguous from 0 and every cluster is
/// 4-connected.
inline std::vector<std::uint32_t> slic_region(std::span<const std::size_t> region, int w, int h,
                                              std::span<const float> gray, const SlicParams& params) {
    params.validate();
    if (region.empty()) return {};
    if (!gray.empty() && gray.size() != static_cast<std::size_t>(w) * h)
        throw ShapeError("slic_region: intensity plane does not match dimensions");

    const std::size_t n_pix = static_cast<std::size_t>(w) * h;
    constexpr std::int32_t kOutside = -1;
    // Position of each plane pixel inside `region`, or kOutside.
    std::vector<std::int32_t> slot(n_pix, kOutside);
    int x0 = w, y0 = h, x1 = -1, y1 = -1;
    for (std::size_t k = 0; k < region.size(); ++k) {
        const auto p = region[k];
        slot[p] = static_cast<std::int32_t>(k);
        const int x = static_cast<int>(p % w), y = static_cast<int>(p / w);
        x0 = std::min(x0, x), y0 = std::min(y0, y), x1 = std::max(x1, x), y1 = std::max(y1, y);
    }
    auto intensity = [&](std::size_t p) { return gray.empty() ? 0.0 : 100.0 * gray[p]; };

    const double area = static_cast<double>(region.size());
    const int step = std::max(1, static_cast<int>(std::lround(std::sqrt(area / params.n_segments))));

    struct Center {
        double x, y, v;
    };
    std::vector<Center> centers;
    // One seed per grid cell over the bounding box: the region pixel closest
    // to the cell center (raster order breaks ties).
    for (int cy = y0; cy <= y1; cy += step) {
        for (int cx = x0; cx <= x1; cx += step) {
            const double mx = cx + (step - 1) / 2.0, my = cy + (step - 1) / 2.0;
            double best = std::numeric_limits<double>::infinity();
            std::size_t best_p = 0;
            for (int y = cy; y < std::min(cy + step, y1 + 1); ++y)
                for (int x = cx; x < std::min(cx + step, x1 + 1); ++x) {
                    const std::size_t p = static_cast<std::size_t>(y) * w + x;
                    if (slot[p] == kOutside) continue;
                    const double d = (x - mx) * (x - mx) + (y - my) * (y - my);
                    if (d < best) best = d, best_p = p;
                }
            if (std::isfinite(best))
                centers.push_back({static_cast<double>(best_p % w), static_cast<double>(best_p / w), intensity(best_p)});
        }
    }

    const double spatial_weight = (params.compactness / step) * (params.compactness / step);
    std::vector<std::int32_t> assign(region.size(), -1);
    std::vector<double> dist(region.size());
    for (int iter = 0; iter < params.iterations; ++iter) {
        std::fill(dist.begin(), dist.end(), std::numeric_limits<double>::infinity());
        for (std::size_t c = 0; c < centers.size(); ++c) {
            const auto& ctr = centers[c];
            const int lx = std::max(x0, static_cast<int>(std::floor(ctr.x)) - step);
            const int hx = std::min(x1, static_cast<int>(std::floor(ctr.x)) + step);
            const int ly = std::max(y0, static_cast<int>(std::floor(ctr.y)) - step);
            const int hy = std::min(y1, static_cast<int>(std::floor(ctr.y)) + step);
            for (int y = ly; y <= hy; ++y)
                for (int x = lx; x <= hx; ++x) {
                    const std::size_t p = static_cast<std::size_t>(y) * w + x;
                    const auto k = slot[p];
                    if (k == kOutside) continue;
                    const double dv = intensity(p) - ctr.v;
                    const double ds = (x - ctr.x) * (x - ctr.x) + (y - ctr.y) * (y - ctr.y);
                    const double d = dv * dv + ds * spatial_weight;
                    if (d < dist[k]) dist[k] = d, assign[k] = static_cast<std::int32_t>(c);
                }
        }
        // Pixels outside every search window fall back to the globally nearest center.
        for (std::size_t k = 0; k < region.size(); ++k) {
            if (std::isfinite(dist[k])) continue;
            const std::size_t p = region[k];
            const double x = static_cast<double>(p % w), y = static_cast<double>(p / w);
            for (std::size_t c = 0; c < centers.size(); ++c) {
                const double dv = intensity(p) - centers[c].v;
                const double d = dv * dv + ((x - centers[c].x) * (x - centers[c].x) +
                                            (y - centers[c].y) * (y - centers[c].y)) * spatial_weight;
                if (d < dist[k]) dist[k] = d, assign[k] = static_cast<std::int32_t>(c);
            }
        }
        std::vector<Center> sums(centers.size(), Center{0, 0, 0});
        std::vector<std::size_t> counts(centers.size(), 0);
        for (std::size_t k = 0; k < region.size(); ++k) {
            const auto c = static_cast<std::size_t>(assign[k]);
            const std::size_t p = region[k];
            sums[c].x += static_cast<double>(p % w);
            sums[c].y += static_cast<double>(p / w);
            sums[c].v += intensity(p);
            ++counts[c];
        }
        for (std::size_t c = 0; c < centers.size(); ++c)
            if (counts[c] > 0) {
                const double n = static_cast<double>(counts[c]);
                centers[c] = {sums[c].x / n, sums[c].y / n, sums[c].v / n};
            }
    }

    // Connectivity enforcement: split clusters into 4-connected pieces and
    // fold pieces that are too small into an already-labelled neighbor.
    const std::size_t min_piece = std::max<std::size_t>(1, region.size() / (4 * std::max<std::size_t>(1, centers.size())));
    std::vector<std::int32_t> final_label(region.size(), -1);
    std::int32_t next = 0;
    std::vector<std::size_t> piece;
    const int dx[4] = {-1, 1, 0, 0};
    const int dy[4] = {0, 0, -1, 1};
    std::vector<std::size_t> order(region.begin(), region.end());
    std::sort(order.begin(), order.end());
    for (std::size_t start : order) {
        const auto ks = static_cast<std::size_t>(slot[start]);
        if (final_label[ks] != -1) continue;
        piece.clear();
        piece.push_back(start);
        final_label[ks] = next;
        for (std::size_t head = 0; head < piece.size(); ++head) {
            const std::size_t p = piece[head];
            const int x = static_cast<int>(p % w), y = static_cast<int>(p / w);
            for (int d = 0; d < 4; ++d) {
                const int nx = x + dx[d], ny = y + dy[d];
                if (nx < 0 || ny < 0 || nx >= w || ny >= h) continue;
                const std::size_t q = static_cast<std::size_t>(ny) * w + nx;
                const auto kq = slot[q];
                if (kq == kOutside || final_label[kq] != -1 || assign[kq] != assign[ks]) continue;
                final_label[kq] = next;
                piece.push_back(q);
            }
        }
        std::int32_t adjacent = -1;
        if (piece.size() < min_piece) {
            for (std::size_t p : piece) {
                const int x = static_cast<int>(p % w), y = static_cast<int>(p / w);
                for (int d = 0; d < 4 && adjacent == -1; ++d) {
                    const int nx = x + dx[d], ny = y + dy[d];
                    if (nx < 0 || ny < 0 || nx >= w || ny >= h) continue;
                    const auto kq = slot[static_cast<std::size_t>(ny) * w + nx];
                    if (kq != kOutside && final_label[kq] != -1 && final_label[kq] != next) adjacent = final_label[kq];
                }
                if (adjacent != -1) break;
            }
        }
        if (adjacent != -1) {
            for (std::size_t p : piece) final_label[static_cast<std::size_t>(slot[p])] = adjacent;
        } else {
            ++next;
        }
    }
    return {final_label.begin(), final_label.end()};
}

} // namespace docxplain
