#pragma once

// Seeded generators and independent reference implementations shared by the
// unit and acceptance tests. The references favour the most literal reading
// of each definition over speed.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <deque>
#include <map>
#include <numeric>
#include <set>
#include <span>
#include <vector>

#include "docxplain/docxplain.hpp"

namespace dxtest {

using namespace docxplain;

__extension__ typedef __int128 i128;

// ---------------------------------------------------------------------------
// Generators

inline BinaryImage random_binary(SplitMix64& rng, int w, int h, double p_fg) {
    BinaryImage img(w, h);
    for (auto& v : img.data) v = rng.uniform() < p_fg ? kForeground : kBackground;
    return img;
}

/// Sparse rectangles of ink, closer to document content than salt noise.
inline BinaryImage random_blocks(SplitMix64& rng, int w, int h, int count, int max_side) {
    BinaryImage img(w, h);
    for (int i = 0; i < count; ++i) {
        const int bw = 1 + static_cast<int>(rng.below(static_cast<std::uint64_t>(max_side)));
        const int bh = 1 + static_cast<int>(rng.below(static_cast<std::uint64_t>(max_side)));
        const int x0 = static_cast<int>(rng.below(static_cast<std::uint64_t>(w)));
        const int y0 = static_cast<int>(rng.below(static_cast<std::uint64_t>(h)));
        for (int y = y0; y < std::min(h, y0 + bh); ++y)
            for (int x = x0; x < std::min(w, x0 + bw); ++x) img.at(x, y) = kForeground;
    }
    return img;
}

inline RasterImage random_raster(SplitMix64& rng, int w, int h, int c) {
    RasterImage img(w, h, c);
    for (auto& v : img.data) v = static_cast<float>(rng.uniform());
    return img;
}

inline RasterImage binary_raster(SplitMix64& rng, int w, int h, double p_black) {
    RasterImage img(w, h, 1, 1.0f);
    for (auto& v : img.data) v = rng.uniform() < p_black ? 0.0f : 1.0f;
    return img;
}

inline StructuringElement random_se(SplitMix64& rng, int max_half) {
    return {1 + 2 * static_cast<int>(rng.below(static_cast<std::uint64_t>(max_half + 1))),
            1 + 2 * static_cast<int>(rng.below(static_cast<std::uint64_t>(max_half + 1)))};
}

/// A valid mask with `groups` labels: labels 1..n_bg on a coarse grid, then
/// random rectangles painted with foreground labels.
inline SegmentationMask random_mask(SplitMix64& rng, int w, int h, Label max_groups) {
    SegmentationMask m;
    m.width = w;
    m.height = h;
    const int cells_x = 1 + static_cast<int>(rng.below(3)), cells_y = 1 + static_cast<int>(rng.below(3));
    m.n_bg = static_cast<Label>(cells_x * cells_y);
    m.labels.resize(static_cast<std::size_t>(w) * h);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            m.labels[static_cast<std::size_t>(y) * w + x] =
                static_cast<Label>((y * cells_y / h) * cells_x + (x * cells_x / w) + 1);
    const Label fg_budget = max_groups > m.n_bg ? max_groups - m.n_bg : 0;
    const Label fg = fg_budget ? static_cast<Label>(rng.below(fg_budget + 1)) : 0;
    Label next = m.n_bg;
    for (Label i = 0; i < fg; ++i) {
        const int rw = 1 + static_cast<int>(rng.below(static_cast<std::uint64_t>(w / 2)));
        const int rh = 1 + static_cast<int>(rng.below(static_cast<std::uint64_t>(h / 2)));
        const int x0 = static_cast<int>(rng.below(static_cast<std::uint64_t>(w - rw + 1)));
        const int y0 = static_cast<int>(rng.below(static_cast<std::uint64_t>(h - rh + 1)));
        ++next;
        for (int y = y0; y < y0 + rh; ++y)
            for (int x = x0; x < x0 + rw; ++x) m.labels[static_cast<std::size_t>(y) * w + x] = next;
    }
    // Later rectangles may hide earlier ones completely; renumber survivors.
    std::set<Label> alive;
    for (Label l : m.labels)
        if (l > m.n_bg) alive.insert(l);
    std::map<Label, Label> remap;
    Label id = m.n_bg;
    for (Label l : alive) remap[l] = ++id;
    for (Label& l : m.labels)
        if (l > m.n_bg) l = remap[l];
    m.n_fg = static_cast<Label>(alive.size());
    return m;
}

// ---------------------------------------------------------------------------
// Reference implementations

/// Exhaustive Otsu in exact integer arithmetic. Returns -1 for fewer than
/// two populated bins.
inline int otsu_threshold_oracle(const RasterImage& img) {
    std::vector<std::int64_t> bins(img.data.size());
    for (std::size_t i = 0; i < bins.size(); ++i)
        bins[i] = std::clamp<std::int64_t>(static_cast<std::int64_t>(std::floor(double(img.data[i]) * 256.0)), 0, 255);
    const auto n = static_cast<std::int64_t>(bins.size());
    const std::int64_t s_all = std::accumulate(bins.begin(), bins.end(), std::int64_t{0});
    int best_t = -1;
    // between-class variance * n^2 = (n*s0 - w0*s_all)^2 / (w0*w1); compare as fractions
    i128 best_num = -1, best_den = 1;
    for (int t = 0; t < 256; ++t) {
        std::int64_t w0 = 0, s0 = 0;
        for (auto b : bins)
            if (b <= t) ++w0, s0 += b;
        const std::int64_t w1 = n - w0;
        if (w0 == 0 || w1 == 0) continue;
        const i128 d = static_cast<i128>(n) * s0 - static_cast<i128>(w0) * s_all;
        const i128 num = d * d, den = static_cast<i128>(w0) * w1;
        if (best_t < 0 || num * best_den > best_num * den) {
            best_t = t;
            best_num = num;
            best_den = den;
        }
    }
    return best_t;
}

inline bool fg(const BinaryImage& img, int x, int y) {
    return x >= 0 && y >= 0 && x < img.width && y < img.height && img.at(x, y) == kForeground;
}

/// { p : some foreground pixel lies within the footprint centered at p }
inline BinaryImage dilate_oracle(const BinaryImage& img, StructuringElement se) {
    BinaryImage out(img.width, img.height);
    for (int y = 0; y < img.height; ++y)
        for (int x = 0; x < img.width; ++x)
            for (int dy = -se.radius_y(); dy <= se.radius_y(); ++dy)
                for (int dx = -se.radius_x(); dx <= se.radius_x(); ++dx)
                    if (fg(img, x + dx, y + dy)) out.at(x, y) = kForeground;
    return out;
}

/// { p : the whole footprint centered at p is foreground (outside = background) }
inline BinaryImage erode_oracle(const BinaryImage& img, StructuringElement se) {
    BinaryImage out(img.width, img.height);
    for (int y = 0; y < img.height; ++y)
        for (int x = 0; x < img.width; ++x) {
            bool all = true;
            for (int dy = -se.radius_y(); dy <= se.radius_y() && all; ++dy)
                for (int dx = -se.radius_x(); dx <= se.radius_x() && all; ++dx) all = fg(img, x + dx, y + dy);
            if (all) out.at(x, y) = kForeground;
        }
    return out;
}

/// Breadth-first 8-connected flood fill, components numbered in raster
/// order of their first pixel.
inline ForegroundLabels components_oracle(const BinaryImage& img) {
    ForegroundLabels out{img.width, img.height, std::vector<Label>(img.data.size(), 0), 0};
    for (int y0 = 0; y0 < img.height; ++y0)
        for (int x0 = 0; x0 < img.width; ++x0) {
            if (!fg(img, x0, y0) || out.labels[static_cast<std::size_t>(y0) * img.width + x0]) continue;
            const Label id = ++out.count;
            std::deque<std::pair<int, int>> q{{x0, y0}};
            out.labels[static_cast<std::size_t>(y0) * img.width + x0] = id;
            while (!q.empty()) {
                const auto [x, y] = q.front();
                q.pop_front();
                for (int dy = -1; dy <= 1; ++dy)
                    for (int dx = -1; dx <= 1; ++dx) {
                        const int nx = x + dx, ny = y + dy;
                        if (!fg(img, nx, ny)) continue;
                        auto& l = out.labels[static_cast<std::size_t>(ny) * img.width + nx];
                        if (!l) {
                            l = id;
                            q.emplace_back(nx, ny);
                        }
                    }
            }
        }
    return out;
}

/// One 3x3 growth step at a time; a background-labelled pixel adjacent to
/// foreground labels takes the smallest of them.
inline SegmentationMask expand_oracle(const SegmentationMask& m, int steps) {
    SegmentationMask cur = m;
    for (int s = 0; s < steps; ++s) {
        SegmentationMask next = cur;
        for (int y = 0; y < m.height; ++y)
            for (int x = 0; x < m.width; ++x) {
                if (cur.at(x, y) > m.n_bg) continue;
                Label best = 0;
                for (int dy = -1; dy <= 1; ++dy)
                    for (int dx = -1; dx <= 1; ++dx) {
                        const int nx = x + dx, ny = y + dy;
                        if (nx < 0 || ny < 0 || nx >= m.width || ny >= m.height) continue;
                        const Label l = cur.at(nx, ny);
                        if (l > m.n_bg && (best == 0 || l < best)) best = l;
                    }
                if (best) next.labels[static_cast<std::size_t>(y) * m.width + x] = best;
            }
        cur = std::move(next);
    }
    return cur;
}

/// Rebuilds every ablated image from scratch, pixel by pixel.
inline std::vector<double> ablation_oracle(Classifier& f, const RasterImage& img, const SegmentationMask& m,
                                           std::uint32_t target, bool foreground_only) {
    const double base = f.score(img)[target];
    std::vector<double> out(img.pixel_count(), 0.0);
    for (Label l = foreground_only ? m.n_bg + 1 : 1; l <= m.group_count(); ++l) {
        RasterImage ablated(img.width, img.height, img.channels);
        std::size_t area = 0;
        for (int y = 0; y < img.height; ++y)
            for (int x = 0; x < img.width; ++x)
                for (int c = 0; c < img.channels; ++c) {
                    const bool in_group = m.at(x, y) == l;
                    const float baseline = l > m.n_bg ? 1.0f : 0.0f;
                    ablated.at(x, y, c) = in_group ? baseline : img.at(x, y, c);
                }
        for (Label v : m.labels) area += v == l;
        if (area == 0) continue;
        const double s = base - f.score(ablated)[target];
        for (std::size_t p = 0; p < out.size(); ++p)
            if (m.labels[p] == l) out[p] = s / static_cast<double>(area);
    }
    return out;
}

inline double pearson(const std::vector<double>& a, const std::vector<double>& b) {
    const double n = static_cast<double>(a.size());
    const double ma = std::accumulate(a.begin(), a.end(), 0.0) / n;
    const double mb = std::accumulate(b.begin(), b.end(), 0.0) / n;
    double sab = 0, saa = 0, sbb = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        sab += (a[i] - ma) * (b[i] - mb);
        saa += (a[i] - ma) * (a[i] - ma);
        sbb += (b[i] - mb) * (b[i] - mb);
    }
    return saa > 0 && sbb > 0 ? sab / std::sqrt(saa * sbb) : 0.0;
}

/// Per-pixel score drop of a region-linear model when that single pixel is
/// flipped (x -> 1 - x), the same removal operator the perturbation curves use:
/// weight * (1 - 2x) / |R| inside each region, 0 elsewhere.
inline std::vector<double> flip_contribution_field(const RasterImage& img, const std::vector<WeightedRegion>& regions) {
    std::vector<double> out(img.pixel_count(), 0.0);
    for (const auto& r : regions)
        for (int y = r.rect.y; y < r.rect.y + r.rect.h; ++y)
            for (int x = r.rect.x; x < r.rect.x + r.rect.w; ++x) {
                double v = 0.0;
                for (int c = 0; c < img.channels; ++c) v += 1.0 - 2.0 * img.at(x, y, c);
                out[static_cast<std::size_t>(y) * img.width + x] =
                    r.weight * v / img.channels / static_cast<double>(r.rect.area());
            }
    return out;
}

/// Score drop of a region-density model when one pixel turns from its
/// value to white: weight * (1 - x) / |R| inside each region.
inline std::vector<double> darkness_contribution_field(const RasterImage& img,
                                                       const std::vector<WeightedRegion>& regions) {
    std::vector<double> out(img.pixel_count(), 0.0);
    for (const auto& r : regions)
        for (int y = r.rect.y; y < r.rect.y + r.rect.h; ++y)
            for (int x = r.rect.x; x < r.rect.x + r.rect.w; ++x) {
                double v = 0.0;
                for (int c = 0; c < img.channels; ++c) v += 1.0 - img.at(x, y, c);
                out[static_cast<std::size_t>(y) * img.width + x] +=
                    r.weight * v / img.channels / static_cast<double>(r.rect.area());
            }
    return out;
}

/// Score drop of a region-linear model when one pixel alone is replaced by
/// the ablation baseline of the group it belongs to (white for foreground
/// groups, black for background), summed over `masks`:
/// weight * (baseline - x) / |R| inside each region.
inline std::vector<double> baseline_contribution_field(const RasterImage& img,
                                                       const std::vector<WeightedRegion>& regions,
                                                       std::span<const SegmentationMask> masks) {
    std::vector<double> out(img.pixel_count(), 0.0);
    for (const auto& m : masks)
        for (const auto& r : regions)
            for (int y = r.rect.y; y < r.rect.y + r.rect.h; ++y)
                for (int x = r.rect.x; x < r.rect.x + r.rect.w; ++x) {
                    const std::size_t p = static_cast<std::size_t>(y) * img.width + x;
                    const double b = m.labels[p] > m.n_bg ? 1.0 : 0.0;
                    double v = 0.0;
                    for (int c = 0; c < img.channels; ++c) v += b - img.at(x, y, c);
                    out[p] += r.weight * v / img.channels / static_cast<double>(r.rect.area());
                }
    return out;
}

} // namespace dxtest
