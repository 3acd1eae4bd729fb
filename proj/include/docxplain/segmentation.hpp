#pragma once

// Structure-aware segmentation of a document page into background grid cells
// and foreground blobs, at several dilation-kernel granularities.
//
// Labels of a SegmentationMask: 1..n_bg are background grid cells,
// n_bg+1..n_bg+n_fg are foreground groups.

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <numeric>
#include <string>
#include <vector>

#include "docxplain/binary_io.hpp"
#include "docxplain/error.hpp"
#include "docxplain/image_io.hpp"
#include "docxplain/imaging.hpp"
#include "docxplain/slic.hpp"

namespace docxplain {

using Label = std::uint32_t;

struct SegmentationMask {
    int width = 0;
    int height = 0;
    std::vector<Label> labels;
    Label n_bg = 0;
    Label n_fg = 0;

    [[nodiscard]] Label group_count() const noexcept { return n_bg + n_fg; }
    [[nodiscard]] bool is_foreground_label(Label l) const noexcept { return l > n_bg; }
    [[nodiscard]] Label at(int x, int y) const { return labels[static_cast<std::size_t>(y) * width + x]; }

    /// Pixel count per label; index 0 is unused.
    [[nodiscard]] std::vector<std::size_t> areas() const {
        std::vector<std::size_t> a(static_cast<std::size_t>(group_count()) + 1, 0);
        for (Label l : labels)
            if (l < a.size()) ++a[l];
        return a;
    }

    /// Checks the partition invariants: every label in 1..n_bg+n_fg and every
    /// foreground label owning at least one pixel.
    void validate() const {
        if (labels.size() != static_cast<std::size_t>(width) * height)
            throw ShapeError("SegmentationMask: label count does not match dimensions");
        const auto a = areas();
        for (Label l : labels)
            if (l < 1 || l > group_count()) throw ShapeError("SegmentationMask: label out of range: " + std::to_string(l));
        for (Label l = n_bg + 1; l <= group_count(); ++l)
            if (a[l] == 0) throw ShapeError("SegmentationMask: empty foreground group " + std::to_string(l));
    }

    friend bool operator==(const SegmentationMask&, const SegmentationMask&) = default;
};

/// Connected-component labels of the foreground: 0 = background, 1..count.
struct ForegroundLabels {
    int width = 0;
    int height = 0;
    std::vector<Label> labels;
    Label count = 0;
};

struct KernelConfig {
    StructuringElement fg_kernel{5, 5};
    int patch_x = 64;
    int patch_y = 64;
    /// Label expansion in working-resolution pixels.
    int expansion = 2;
    /// Foreground groups smaller than this (model-resolution pixels) are
    /// absorbed by the background.
    int min_area = 4;
    SlicParams slic;

    void validate() const {
        fg_kernel.validate();
        if (patch_x < 1 || patch_y < 1) throw ArgumentError("KernelConfig: background patch must be positive");
        if (expansion < 0) throw ArgumentError("KernelConfig: expansion must be >= 0");
        if (min_area < 0) throw ArgumentError("KernelConfig: min_area must be >= 0");
        slic.validate();
    }
};

/// The three granularities used by default: glyph-level 5x5, column/block
/// 3x15 (kx x ky) and text-line 15x3, all over a shared 64x64 background grid.
inline std::vector<KernelConfig> default_kernels() {
    std::vector<KernelConfig> k(3);
    k[0].fg_kernel = {5, 5};
    k[1].fg_kernel = {3, 15};
    k[2].fg_kernel = {15, 3};
    return k;
}

struct SegmentationConfig {
    int working_size = 1024;
    StructuringElement open_kernel{5, 5};
    std::vector<KernelConfig> kernels = default_kernels();

    void validate() const {
        if (working_size < 1) throw ArgumentError("SegmentationConfig: working_size must be positive");
        open_kernel.validate();
        if (kernels.empty()) throw ArgumentError("SegmentationConfig: at least one kernel is required");
        for (const auto& k : kernels) {
            k.validate();
            if (working_size % k.patch_x != 0 || working_size % k.patch_y != 0)
                throw ArgumentError("SegmentationConfig: background patch must divide the working size");
        }
    }
};

// ---------------------------------------------------------------------------

/// Row-major grid of (width/patch_x) x (height/patch_y) cells labelled from 1.
inline SegmentationMask segment_background(int width, int height, int patch_x, int patch_y) {
    if (patch_x < 1 || patch_y < 1) throw ArgumentError("segment_background: patch must be positive");
    if (patch_x > width || patch_y > height) throw ArgumentError("segment_background: patch larger than image");
    if (width % patch_x != 0 || height % patch_y != 0)
        throw ArgumentError("segment_background: patch must divide the image dimensions");
    SegmentationMask m;
    m.width = width;
    m.height = height;
    const int cols = width / patch_x;
    m.n_bg = static_cast<Label>(cols * (height / patch_y));
    m.labels.resize(static_cast<std::size_t>(width) * height);
    std::vector<Label> row(static_cast<std::size_t>(width));
    for (int y = 0; y < height; ++y) {
        if (y % patch_y == 0)
            for (int x = 0; x < width; ++x) row[x] = static_cast<Label>((y / patch_y) * cols + x / patch_x + 1);
        std::copy(row.begin(), row.end(), m.labels.begin() + static_cast<std::ptrdiff_t>(y) * width);
    }
    return m;
}

inline SegmentationMask segment_background(const BinaryImage& img, int patch_x, int patch_y) {
    return segment_background(img.width, img.height, patch_x, patch_y);
}

/// 8-connected components of the foreground, numbered in raster-scan
/// discovery order.
inline ForegroundLabels connected_components(const BinaryImage& img) {
    // Run-length union-find; ids are then handed out in order of each
    // component's first run, which is raster discovery order.
    const int w = img.width, h = img.height;
    struct Run {
        int y, x0, x1;  // [x0, x1)
    };
    std::vector<Run> runs;
    std::vector<std::size_t> row_start(static_cast<std::size_t>(h) + 1, 0);
    for (int y = 0; y < h; ++y) {
        row_start[y] = runs.size();
        const std::uint8_t* row = img.data.data() + static_cast<std::size_t>(y) * w;
        for (int x = 0; x < w;) {
            if (row[x] != kForeground) {
                ++x;
                continue;
            }
            const int x0 = x;
            while (x < w && row[x] == kForeground) ++x;
            runs.push_back({y, x0, x});
        }
    }
    row_start[h] = runs.size();

    std::vector<std::size_t> parent(runs.size());
    for (std::size_t i = 0; i < parent.size(); ++i) parent[i] = i;
    auto find = [&](std::size_t a) {
        while (parent[a] != a) a = parent[a] = parent[parent[a]];
        return a;
    };
    for (int y = 1; y < h; ++y) {
        std::size_t j = row_start[y - 1];
        const std::size_t j_end = row_start[y];
        for (std::size_t i = row_start[y]; i < row_start[y + 1]; ++i) {
            // 8-connectivity: runs touch when they overlap after widening by one.
            while (j < j_end && runs[j].x1 < runs[i].x0) ++j;
            for (std::size_t k = j; k < j_end && runs[k].x0 <= runs[i].x1; ++k) {
                const std::size_t a = find(i), b = find(k);
                if (a != b) parent[std::max(a, b)] = std::min(a, b);
            }
        }
    }

    ForegroundLabels out{w, h, std::vector<Label>(img.data.size(), 0), 0};
    std::vector<Label> id(runs.size(), 0);
    for (std::size_t i = 0; i < runs.size(); ++i) {
        const std::size_t r = find(i);
        if (id[r] == 0) id[r] = ++out.count;
        Label* dst = out.labels.data() + static_cast<std::size_t>(runs[i].y) * w;
        std::fill(dst + runs[i].x0, dst + runs[i].x1, id[r]);
    }
    return out;
}

/// Dilates the ink by `fg_kernel` and labels the connected blobs. Labels
/// cover the dilated footprint.
inline ForegroundLabels segment_foreground(const BinaryImage& img, const StructuringElement& fg_kernel) {
    return connected_components(morph_dilate(img, fg_kernel));
}

/// Foreground labels offset by n_bg; everywhere else the grid label.
inline SegmentationMask combine_masks(const SegmentationMask& bg, const ForegroundLabels& fg) {
    if (bg.width != fg.width || bg.height != fg.height) throw ShapeError("combine_masks: dimension mismatch");
    SegmentationMask m = bg;
    m.n_fg = fg.count;
    for (std::size_t i = 0; i < m.labels.size(); ++i)
        if (fg.labels[i] != 0) m.labels[i] = fg.labels[i] + bg.n_bg;
    return m;
}

inline SegmentationMask resize_nearest(const SegmentationMask& mask, int out_w, int out_h) {
    SegmentationMask out;
    out.labels = resize_nearest_plane<Label>(mask.labels, mask.width, mask.height, 1, out_w, out_h);
    out.width = out_w;
    out.height = out_h;
    out.n_bg = mask.n_bg;
    out.n_fg = mask.n_fg;
    return out;
}

/// Grows every foreground region by `pixels` steps of 3x3 dilation, claiming
/// background-labelled pixels only. When regions compete for a pixel the
/// lower label wins.
inline SegmentationMask expand_labels(const SegmentationMask& mask, int pixels) {
    SegmentationMask cur = mask;
    const int w = mask.width, h = mask.height;
    std::vector<std::uint8_t> ind(cur.labels.size());
    std::vector<std::pair<std::size_t, Label>> claims;
    for (int step = 0; step < pixels; ++step) {
        for (std::size_t i = 0; i < ind.size(); ++i) ind[i] = cur.labels[i] > mask.n_bg ? 1 : 0;
        // Ring of background pixels touching a foreground label.
        const auto near = detail::window_filter(detail::window_filter(ind, w, h, 1, true, 1), w, h, 1, false, 1);
        claims.clear();
        for (int y = 0; y < h; ++y) {
            const std::size_t rowp = static_cast<std::size_t>(y) * w;
            for (int x = 0; x < w; ++x) {
                const std::size_t p = rowp + x;
                if (!near[p] || ind[p]) continue;
                Label best = 0;
                for (int ny = std::max(0, y - 1); ny <= std::min(h - 1, y + 1); ++ny)
                    for (int nx = std::max(0, x - 1); nx <= std::min(w - 1, x + 1); ++nx) {
                        const Label l = cur.labels[static_cast<std::size_t>(ny) * w + nx];
                        if (l > mask.n_bg && (best == 0 || l < best)) best = l;
                    }
                claims.emplace_back(p, best);
            }
        }
        if (claims.empty()) break;
        for (const auto& [p, l] : claims) cur.labels[p] = l;
    }
    return cur;
}

/// Same result as resize_nearest(expand_labels(mask, pixels), out_w, out_h),
/// evaluated only at the sampled pixels. After k steps of lower-label-wins
/// growth, a background pixel at Chebyshev distance d <= k from the
/// foreground carries the smallest label among foreground pixels at exactly
/// distance d, so each sample only inspects rings of growing radius.
inline SegmentationMask expand_and_resize(const SegmentationMask& mask, int pixels, int out_w, int out_h) {
    if (out_w < 1 || out_h < 1) throw ArgumentError("expand_and_resize: target dimensions must be >= 1");
    SegmentationMask out;
    out.width = out_w;
    out.height = out_h;
    out.n_bg = mask.n_bg;
    out.n_fg = mask.n_fg;
    out.labels.resize(static_cast<std::size_t>(out_w) * out_h);
    const int w = mask.width, h = mask.height;
    for (int y = 0; y < out_h; ++y) {
        const int sy = static_cast<int>(static_cast<std::int64_t>(y) * h / out_h);
        for (int x = 0; x < out_w; ++x) {
            const int sx = static_cast<int>(static_cast<std::int64_t>(x) * w / out_w);
            Label l = mask.at(sx, sy);
            for (int d = 1; d <= pixels && l <= mask.n_bg; ++d) {
                Label best = 0;
                for (int ny = sy - d; ny <= sy + d; ++ny) {
                    if (ny < 0 || ny >= h) continue;
                    const bool edge_row = ny == sy - d || ny == sy + d;
                    for (int nx = sx - d; nx <= sx + d; nx += edge_row ? 1 : 2 * d) {
                        if (nx < 0 || nx >= w) continue;
                        const Label c = mask.at(nx, ny);
                        if (c > mask.n_bg && (best == 0 || c < best)) best = c;
                    }
                }
                if (best != 0) l = best;
            }
            out.labels[static_cast<std::size_t>(y) * out_w + x] = l;
        }
    }
    return out;
}

namespace detail {

/// Grid label a model-resolution pixel would carry on a pure background mask.
struct GridLookup {
    int src_w, src_h, dst_w, dst_h, patch_x, patch_y;
    [[nodiscard]] Label operator()(int x, int y) const {
        const int sx = static_cast<int>(static_cast<std::int64_t>(x) * src_w / dst_w);
        const int sy = static_cast<int>(static_cast<std::int64_t>(y) * src_h / dst_h);
        return static_cast<Label>((sy / patch_y) * (src_w / patch_x) + sx / patch_x + 1);
    }
};

inline std::vector<std::vector<std::size_t>> pixels_by_label(const SegmentationMask& m) {
    std::vector<std::vector<std::size_t>> groups(static_cast<std::size_t>(m.group_count()) + 1);
    for (std::size_t i = 0; i < m.labels.size(); ++i)
        if (m.labels[i] < groups.size()) groups[m.labels[i]].push_back(i);
    return groups;
}

/// Renumbers surviving foreground labels (ascending) right after n_bg.
inline void compact_foreground(SegmentationMask& m, Label max_label) {
    std::vector<std::size_t> area(static_cast<std::size_t>(max_label) + 1, 0);
    for (Label l : m.labels) ++area[l];
    std::vector<Label> remap(area.size(), 0);
    Label next = m.n_bg;
    for (Label l = m.n_bg + 1; l <= max_label; ++l)
        if (area[l] > 0) remap[l] = ++next;
    for (Label& l : m.labels)
        if (l > m.n_bg) l = remap[l];
    m.n_fg = next - m.n_bg;
}

} // namespace detail

/// Post-processing of a working-resolution combined mask: label expansion,
/// resize to the model grid, SLIC splitting of large foreground groups,
/// removal of tiny groups and label re-compaction. `gray` (optional, model
/// resolution, single channel) drives the SLIC intensity term.
inline SegmentationMask postprocess(const SegmentationMask& mask, const KernelConfig& cfg, int model_w, int model_h,
                                    const RasterImage* gray = nullptr) {
    cfg.validate();
    if (gray && (gray->width != model_w || gray->height != model_h || gray->channels != 1))
        throw ShapeError("postprocess: intensity image must be single-channel at model resolution");

    SegmentationMask m = expand_and_resize(mask, cfg.expansion, model_w, model_h);
    Label max_label = m.group_count();

    // SLIC splitting of large groups.
    {
        const auto groups = detail::pixels_by_label(m);
        const double trigger = cfg.slic.area_fraction_trigger * static_cast<double>(model_w) * model_h;
        std::span<const float> plane;
        if (gray) plane = gray->data;
        for (Label l = m.n_bg + 1; l <= m.group_count(); ++l) {
            const auto& px = groups[l];
            if (px.empty() || static_cast<double>(px.size()) < trigger) continue;
            const auto clusters = slic_region(px, model_w, model_h, plane, cfg.slic);
            const Label first = max_label + 1;
            Label top = 0;
            for (std::size_t k = 0; k < px.size(); ++k) {
                m.labels[px[k]] = first + clusters[k];
                top = std::max(top, clusters[k]);
            }
            max_label = first + top;
        }
    }

    // Tiny foreground groups fall back to the dominant adjacent background label.
    {
        std::vector<std::vector<std::size_t>> groups(static_cast<std::size_t>(max_label) + 1);
        for (std::size_t i = 0; i < m.labels.size(); ++i) groups[m.labels[i]].push_back(i);
        const detail::GridLookup grid{mask.width, mask.height, model_w, model_h, cfg.patch_x, cfg.patch_y};
        for (Label l = m.n_bg + 1; l <= max_label; ++l) {
            const auto& px = groups[l];
            if (px.empty() || px.size() >= static_cast<std::size_t>(cfg.min_area)) continue;
            std::map<Label, std::size_t> votes;
            for (std::size_t p : px) {
                const int x = static_cast<int>(p % model_w), y = static_cast<int>(p / model_w);
                for (int ny = std::max(0, y - 1); ny <= std::min(model_h - 1, y + 1); ++ny)
                    for (int nx = std::max(0, x - 1); nx <= std::min(model_w - 1, x + 1); ++nx) {
                        const Label n = m.labels[static_cast<std::size_t>(ny) * model_w + nx];
                        if (n <= m.n_bg) ++votes[n];
                    }
            }
            Label winner = 0;
            std::size_t best = 0;
            for (const auto& [lab, count] : votes)
                if (count > best) best = count, winner = lab;
            for (std::size_t p : px) {
                const int x = static_cast<int>(p % model_w), y = static_cast<int>(p / model_w);
                m.labels[p] = winner != 0 ? winner : grid(x, y);
            }
        }
    }

    detail::compact_foreground(m, max_label);
    return m;
}

struct PreparedPage {
    /// Opened binary page at working resolution.
    BinaryImage working;
    /// Single-channel page on the model grid (padded to square, resized).
    RasterImage model_gray;
    bool empty_foreground = false;
};

/// Shared preprocessing: grayscale, Otsu, pad to square, resize to the
/// working resolution, opening.
inline PreparedPage prepare_page(const RasterImage& page, const SegmentationConfig& cfg, int model_w, int model_h) {
    cfg.validate();
    const RasterImage gray = to_grayscale(page);
    auto otsu = otsu_binarize(gray);
    PreparedPage out;
    out.empty_foreground = otsu.empty_foreground;
    out.working = morph_open(resize_nearest(pad_to_square(otsu.image), cfg.working_size, cfg.working_size),
                             cfg.open_kernel);
    out.model_gray = resize_nearest(pad_to_square(gray), model_w, model_h);
    return out;
}

inline SegmentationMask build_mask(const PreparedPage& page, const KernelConfig& kernel, int model_w, int model_h) {
    const auto fg = segment_foreground(page.working, kernel.fg_kernel);
    const auto bg = segment_background(page.working, kernel.patch_x, kernel.patch_y);
    return postprocess(combine_masks(bg, fg), kernel, model_w, model_h, &page.model_gray);
}

/// One mask per configured kernel, at model resolution.
inline std::vector<SegmentationMask> build_masks(const RasterImage& page, const SegmentationConfig& cfg, int model_w,
                                                 int model_h) {
    const auto prepared = prepare_page(page, cfg, model_w, model_h);
    std::vector<SegmentationMask> masks;
    masks.reserve(cfg.kernels.size());
    for (const auto& k : cfg.kernels) masks.push_back(build_mask(prepared, k, model_w, model_h));
    return masks;
}

// ---------------------------------------------------------------------------
// DXSM: "DXSM", u32 width, height, n_bg, n_fg, then width*height u32 labels.

inline std::vector<std::uint8_t> encode_mask(const SegmentationMask& m) {
    std::vector<std::uint8_t> out;
    out.reserve(20 + 4 * m.labels.size());
    binio::put_magic(out, "DXSM");
    binio::put_u32(out, static_cast<std::uint32_t>(m.width));
    binio::put_u32(out, static_cast<std::uint32_t>(m.height));
    binio::put_u32(out, m.n_bg);
    binio::put_u32(out, m.n_fg);
    for (Label l : m.labels) binio::put_u32(out, l);
    return out;
}

inline SegmentationMask decode_mask(const std::vector<std::uint8_t>& bytes) {
    binio::Reader r(bytes);
    r.expect_magic("DXSM");
    SegmentationMask m;
    m.width = static_cast<int>(r.u32());
    m.height = static_cast<int>(r.u32());
    m.n_bg = r.u32();
    m.n_fg = r.u32();
    const std::size_t n = static_cast<std::size_t>(m.width) * m.height;
    if (r.remaining() != 4 * n) throw FormatError("DXSM: payload size does not match header");
    m.labels.resize(n);
    for (auto& l : m.labels) l = r.u32();
    return m;
}

inline void save_mask(const std::filesystem::path& path, const SegmentationMask& m) {
    binio::write_file_atomic(path, encode_mask(m));
}

inline SegmentationMask load_mask(const std::filesystem::path& path) { return decode_mask(binio::read_file(path)); }

/// Inspection rendering: background cells in alternating light grays,
/// foreground groups in saturated pseudo-random colors.
inline Image8 render_mask(const SegmentationMask& m) {
    Image8 img{m.width, m.height, 3, std::vector<std::uint8_t>(static_cast<std::size_t>(m.width) * m.height * 3)};
    for (std::size_t i = 0; i < m.labels.size(); ++i) {
        const Label l = m.labels[i];
        std::uint8_t rgb[3];
        if (l <= m.n_bg) {
            const std::uint8_t g = (l % 2 == 0) ? 235 : 250;
            rgb[0] = rgb[1] = rgb[2] = g;
        } else {
            std::uint32_t hsh = l * 2654435761u;
            hsh ^= hsh >> 15;
            for (int c = 0; c < 3; ++c) rgb[c] = static_cast<std::uint8_t>(40 + ((hsh >> (8 * c)) & 0xFF) * 180 / 255);
        }
        std::copy_n(rgb, 3, img.data.begin() + static_cast<std::ptrdiff_t>(3 * i));
    }
    return img;
}

} // namespace docxplain
