#pragma once

// Seeded synthetic document pages (paragraphs of word blocks, optional
// figure) and synthetic classifier layouts for testing and demos.

#include <algorithm>
#include <cstdint>
#include <vector>

#include "docxplain/imaging.hpp"
#include "docxplain/model.hpp"
#include "docxplain/random.hpp"

namespace docxplain {

struct SyntheticPageParams {
    int width = 224;
    int height = 224;
    int margin = 12;
    /// Word blocks are this many pixels tall; lines are separated by `line_gap`.
    int glyph_height = 3;
    int line_gap = 2;
    int word_gap = 2;
    int min_word = 5;
    int max_word = 24;
    double figure_probability = 0.5;
};

inline void fill_rect(RasterImage& img, const Rect& r, float value) {
    for (int y = std::max(0, r.y); y < std::min(img.height, r.y + r.h); ++y)
        for (int x = std::max(0, r.x); x < std::min(img.width, r.x + r.w); ++x)
            for (int c = 0; c < img.channels; ++c) img.at(x, y, c) = value;
}

/// Binary-valued single-channel page: a title, several paragraphs of word
/// blocks and, with some probability, a solid figure.
inline RasterImage synthetic_page(std::uint64_t seed, const SyntheticPageParams& p = {}) {
    SplitMix64 rng(seed);
    RasterImage page(p.width, p.height, 1, 1.0f);
    const int left = p.margin, right = p.width - p.margin;
    int y = p.margin;

    // Title.
    {
        const int w = static_cast<int>((right - left) * rng.uniform(0.3, 0.6));
        fill_rect(page, {left + (right - left - w) / 2, y, w, p.glyph_height + 2}, 0.0f);
        y += p.glyph_height + 2 + 2 * p.line_gap;
    }

    Rect figure{};
    const bool has_figure = rng.uniform() < p.figure_probability;
    if (has_figure) {
        const int fw = static_cast<int>((right - left) * rng.uniform(0.3, 0.5));
        const int fh = static_cast<int>((p.height - 2 * p.margin) * rng.uniform(0.15, 0.25));
        const int fx = rng.uniform() < 0.5 ? left : right - fw;
        const int fy = y + static_cast<int>(rng.uniform(0.0, 0.5) * (p.height - p.margin - y - fh));
        figure = {fx, fy, fw, fh};
        fill_rect(page, figure, 0.0f);
    }

    while (y + p.glyph_height < p.height - p.margin) {
        const int lines = 2 + static_cast<int>(rng.below(4));
        for (int l = 0; l < lines && y + p.glyph_height < p.height - p.margin; ++l) {
            int x = left + (l == 0 ? 8 : 0);
            const int line_end = l == lines - 1 ? left + static_cast<int>((right - left) * rng.uniform(0.3, 0.9)) : right;
            while (x < line_end) {
                const int w = p.min_word + static_cast<int>(rng.below(static_cast<std::uint64_t>(p.max_word - p.min_word + 1)));
                const Rect word{x, y, std::min(w, line_end - x), p.glyph_height};
                const bool clashes = has_figure && Rect{word.x - 3, word.y - 3, word.w + 6, word.h + 6}.overlaps(figure);
                if (!clashes && word.w >= 2) fill_rect(page, word, 0.0f);
                x += w + p.word_gap;
            }
            y += p.glyph_height + p.line_gap;
        }
        y += p.line_gap + 2;
    }
    return page;
}

/// Disjoint rectangles with positive weights summing to at most 1, each
/// covering a sizeable part of the page.
inline std::vector<WeightedRegion> synthetic_regions(std::uint64_t seed, int width, int height, int count = 3) {
    SplitMix64 rng(seed);
    std::vector<WeightedRegion> regions;
    double remaining = 1.0;
    int attempts = 0;
    while (static_cast<int>(regions.size()) < count && attempts++ < 1000) {
        const int w = static_cast<int>(width * rng.uniform(0.2, 0.45));
        const int h = static_cast<int>(height * rng.uniform(0.15, 0.35));
        const Rect r{static_cast<int>(rng.below(static_cast<std::uint64_t>(width - w + 1))),
                     static_cast<int>(rng.below(static_cast<std::uint64_t>(height - h + 1))), w, h};
        if (std::any_of(regions.begin(), regions.end(), [&](const WeightedRegion& o) { return o.rect.overlaps(r); }))
            continue;
        const double weight = regions.size() + 1 == static_cast<std::size_t>(count) ? remaining
                                                                                   : remaining * rng.uniform(0.3, 0.7);
        remaining -= weight;
        regions.push_back({r, weight});
    }
    return regions;
}

} // namespace docxplain
