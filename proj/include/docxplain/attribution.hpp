#pragma once

// Feature-ablation attribution over segmentation masks, plus the Occlusion
// and random reference methods.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "docxplain/binary_io.hpp"
#include "docxplain/error.hpp"
#include "docxplain/image_io.hpp"
#include "docxplain/imaging.hpp"
#include "docxplain/model.hpp"
#include "docxplain/random.hpp"
#include "docxplain/segmentation.hpp"

namespace docxplain {

/// On-disk mode codes of the DXAM format.
enum class AttributionMode : std::uint8_t {
    foreground = 0,
    foreground_background = 1,
    occlusion = 2,
    random = 3,
};

inline std::string to_string(AttributionMode m) {
    switch (m) {
    case AttributionMode::foreground: return "fg";
    case AttributionMode::foreground_background: return "fgbg";
    case AttributionMode::occlusion: return "occlusion";
    case AttributionMode::random: return "random";
    }
    return "unknown";
}

struct AttributionMap {
    int width = 0;
    int height = 0;
    std::vector<double> values;
    AttributionMode mode = AttributionMode::foreground_background;
    std::uint32_t target_class = 0;

    AttributionMap() = default;
    AttributionMap(int w, int h, AttributionMode m, std::uint32_t target)
        : width(w), height(h), values(static_cast<std::size_t>(w) * h, 0.0), mode(m), target_class(target) {}

    [[nodiscard]] double at(int x, int y) const { return values[static_cast<std::size_t>(y) * width + x]; }

    friend bool operator==(const AttributionMap&, const AttributionMap&) = default;
};

/// Per-pixel replacement value: 0 (black) on background groups, 1 (white)
/// on foreground groups.
struct BaselineMatrix {
    int width = 0;
    int height = 0;
    std::vector<std::uint8_t> values;
};

struct GroupScore {
    Label label = 0;
    /// f(I)[t] - f(I with the group replaced by its baseline)[t].
    double score = 0.0;
    std::size_t area = 0;
};

inline BaselineMatrix baseline_for(const SegmentationMask& mask) {
    BaselineMatrix b{mask.width, mask.height, std::vector<std::uint8_t>(mask.labels.size())};
    for (std::size_t i = 0; i < mask.labels.size(); ++i) b.values[i] = mask.labels[i] > mask.n_bg ? 1 : 0;
    return b;
}

/// Target class to explain: the override when given, otherwise the argmax
/// of f on the unablated image.
inline std::uint32_t resolve_target(Classifier& f, const RasterImage& img, std::optional<std::uint32_t> requested) {
    if (requested) {
        if (*requested >= f.n_classes())
            throw ArgumentError("target class " + std::to_string(*requested) + " out of range (n_classes " +
                                std::to_string(f.n_classes()) + ")");
        return *requested;
    }
    return static_cast<std::uint32_t>(argmax(f.score(img)));
}

namespace detail {

inline void check_mask_matches(const RasterImage& img, const SegmentationMask& mask) {
    if (img.width != mask.width || img.height != mask.height)
        throw ShapeError("attribution: image " + std::to_string(img.width) + "x" + std::to_string(img.height) +
                         " does not match mask " + std::to_string(mask.width) + "x" + std::to_string(mask.height));
}

// Perturbed copies are built in reusable buffers; keeping the working set
// small (a few MB) matters more than filling the model's largest batch.
inline constexpr std::size_t kMaxAblationBatch = 32;

inline std::size_t ablation_batch(const Classifier& f) {
    return std::clamp<std::size_t>(f.max_batch(), 1, kMaxAblationBatch);
}

inline void apply_baseline(RasterImage& img, std::span<const std::size_t> pixels, float value) {
    const int c = img.channels;
    for (std::size_t p : pixels)
        for (int k = 0; k < c; ++k) img.data[p * c + k] = value;
}

/// Raw scores of the listed groups, evaluated in max_batch chunks.
inline std::vector<GroupScore> score_groups(Classifier& f, const RasterImage& img, const SegmentationMask& mask,
                                            std::span<const Label> labels, std::uint32_t target) {
    const auto groups = pixels_by_label(mask);
    const double base = f.score(img).at(target);
    std::vector<GroupScore> out;
    out.reserve(labels.size());
    std::vector<std::size_t> pending;
    for (Label l : labels) {
        if (l < 1 || l > mask.group_count()) throw ArgumentError("ablate: label out of range");
        if (groups[l].empty()) {
            out.push_back({l, 0.0, 0});
        } else {
            out.push_back({l, 0.0, groups[l].size()});
            pending.push_back(out.size() - 1);
        }
    }
    const std::size_t batch = detail::ablation_batch(f);
    // Buffers are reused across batches; fresh large allocations dominate otherwise.
    std::vector<RasterImage> images(std::min(batch, pending.size()), img);
    for (std::size_t start = 0; start < pending.size(); start += batch) {
        const std::size_t end = std::min(pending.size(), start + batch);
        for (std::size_t j = start; j < end; ++j) {
            const Label l = out[pending[j]].label;
            RasterImage& ablated = images[j - start];
            std::copy(img.data.begin(), img.data.end(), ablated.data.begin());
            apply_baseline(ablated, groups[l], l > mask.n_bg ? 1.0f : 0.0f);
        }
        const auto scores = f.score_batch(std::span<const RasterImage>(images.data(), end - start));
        for (std::size_t j = start; j < end; ++j) out[pending[j]].score = base - scores[j - start].at(target);
    }
    return out;
}

} // namespace detail

inline GroupScore ablate_group(Classifier& f, const RasterImage& img, const SegmentationMask& mask, Label label,
                               std::uint32_t target) {
    detail::check_mask_matches(img, mask);
    const Label one[1] = {label};
    return detail::score_groups(f, img, mask, one, target).front();
}

struct MaskAttribution {
    AttributionMap map;
    std::vector<GroupScore> groups;
};

/// Area-normalized ablation map for one mask. Foreground mode scores only
/// foreground groups and leaves background pixels at 0.
inline MaskAttribution attribute_mask_detailed(Classifier& f, const RasterImage& img, const SegmentationMask& mask,
                                               std::uint32_t target, AttributionMode mode) {
    if (mode != AttributionMode::foreground && mode != AttributionMode::foreground_background)
        throw ArgumentError("attribute_mask: mode must be fg or fgbg");
    detail::check_mask_matches(img, mask);
    std::vector<Label> labels;
    const Label first = mode == AttributionMode::foreground ? mask.n_bg + 1 : 1;
    for (Label l = first; l <= mask.group_count(); ++l) labels.push_back(l);

    MaskAttribution out{AttributionMap(img.width, img.height, mode, target),
                        detail::score_groups(f, img, mask, labels, target)};
    std::vector<double> per_pixel(static_cast<std::size_t>(mask.group_count()) + 1, 0.0);
    for (const auto& g : out.groups)
        if (g.area > 0) per_pixel[g.label] = g.score / static_cast<double>(g.area);
    for (std::size_t i = 0; i < mask.labels.size(); ++i) out.map.values[i] = per_pixel[mask.labels[i]];
    return out;
}

inline AttributionMap attribute_mask(Classifier& f, const RasterImage& img, const SegmentationMask& mask,
                                     std::uint32_t target, AttributionMode mode) {
    return attribute_mask_detailed(f, img, mask, target, mode).map;
}

/// Sum of the per-mask normalized maps, accumulated in mask order.
inline AttributionMap attribute(Classifier& f, const RasterImage& img, std::span<const SegmentationMask> masks,
                                std::uint32_t target, AttributionMode mode) {
    if (masks.empty()) throw ArgumentError("attribute: at least one mask is required");
    AttributionMap total(img.width, img.height, mode, target);
    for (const auto& m : masks) {
        const auto part = attribute_mask(f, img, m, target, mode);
        for (std::size_t i = 0; i < total.values.size(); ++i) total.values[i] += part.values[i];
    }
    return total;
}

/// Full pipeline on a page of any size: masks are built from the page, the
/// classifier sees the page mapped onto its input grid.
inline AttributionMap attribute(Classifier& f, const RasterImage& page, const SegmentationConfig& cfg,
                                std::optional<std::uint32_t> target, AttributionMode mode) {
    const auto shape = f.input_shape();
    const auto img = prepare_model_input(page, shape.width, shape.height, shape.channels);
    const auto masks = build_masks(page, cfg, shape.width, shape.height);
    return attribute(f, img, masks, resolve_target(f, img, target), mode);
}

// ---------------------------------------------------------------------------

struct OcclusionParams {
    int patch = 16;
    int stride = 8;
    float fill = 0.5f;

    void validate() const {
        if (stride < 1 || patch < stride) throw ArgumentError("occlusion: need patch >= stride >= 1");
        if (!(fill >= 0.0f && fill <= 1.0f)) throw ArgumentError("occlusion: fill must lie in [0,1]");
    }
};

/// Window origins along one axis; a final window flush with the far edge is
/// added when the stride grid leaves pixels uncovered.
inline std::vector<int> window_origins(int extent, int patch, int stride) {
    std::vector<int> o;
    for (int v = 0; v + patch <= extent; v += stride) o.push_back(v);
    if (o.empty() || o.back() + patch < extent) o.push_back(extent - patch);
    return o;
}

/// Sliding-window occlusion: every window is filled with `fill`, its score
/// drop is spread over the window, and each pixel averages the drops of the
/// windows covering it.
inline AttributionMap occlusion(Classifier& f, const RasterImage& img, std::uint32_t target,
                                const OcclusionParams& params = {}) {
    params.validate();
    if (params.patch > img.width || params.patch > img.height) throw ArgumentError("occlusion: patch larger than image");
    const double base = f.score(img).at(target);
    const auto xs = window_origins(img.width, params.patch, params.stride);
    const auto ys = window_origins(img.height, params.patch, params.stride);

    std::vector<double> sum(img.pixel_count(), 0.0);
    std::vector<int> coverage(img.pixel_count(), 0);
    std::vector<std::pair<int, int>> windows;
    for (int y : ys)
        for (int x : xs) windows.emplace_back(x, y);

    const std::size_t batch = detail::ablation_batch(f);
    std::vector<RasterImage> images(std::min(batch, windows.size()), img);
    for (std::size_t start = 0; start < windows.size(); start += batch) {
        const std::size_t end = std::min(windows.size(), start + batch);
        for (std::size_t j = start; j < end; ++j) {
            RasterImage& occ = images[j - start];
            std::copy(img.data.begin(), img.data.end(), occ.data.begin());
            const auto [wx, wy] = windows[j];
            for (int y = wy; y < wy + params.patch; ++y)
                for (int x = wx; x < wx + params.patch; ++x)
                    for (int c = 0; c < img.channels; ++c) occ.at(x, y, c) = params.fill;
        }
        const auto scores = f.score_batch(std::span<const RasterImage>(images.data(), end - start));
        for (std::size_t j = start; j < end; ++j) {
            const double drop = base - scores[j - start].at(target);
            const auto [wx, wy] = windows[j];
            for (int y = wy; y < wy + params.patch; ++y)
                for (int x = wx; x < wx + params.patch; ++x) {
                    const std::size_t p = static_cast<std::size_t>(y) * img.width + x;
                    sum[p] += drop;
                    ++coverage[p];
                }
        }
    }
    AttributionMap out(img.width, img.height, AttributionMode::occlusion, target);
    for (std::size_t p = 0; p < sum.size(); ++p) out.values[p] = coverage[p] ? sum[p] / coverage[p] : 0.0;
    return out;
}

/// I.i.d. uniform [0,1) values from a seeded generator.
inline AttributionMap random_baseline(int width, int height, std::uint64_t seed, std::uint32_t target = 0) {
    if (width < 1 || height < 1) throw ArgumentError("random_baseline: dimensions must be positive");
    AttributionMap out(width, height, AttributionMode::random, target);
    SplitMix64 rng(seed);
    for (double& v : out.values) v = rng.uniform();
    return out;
}

// ---------------------------------------------------------------------------
// DXAM: "DXAM", u32 w, u32 h, u8 mode, u32 target, then w*h f32.

inline std::vector<std::uint8_t> encode_attribution(const AttributionMap& a) {
    std::vector<std::uint8_t> out;
    out.reserve(17 + 4 * a.values.size());
    binio::put_magic(out, "DXAM");
    binio::put_u32(out, static_cast<std::uint32_t>(a.width));
    binio::put_u32(out, static_cast<std::uint32_t>(a.height));
    out.push_back(static_cast<std::uint8_t>(a.mode));
    binio::put_u32(out, a.target_class);
    for (double v : a.values) binio::put_f32(out, static_cast<float>(v));
    return out;
}

inline AttributionMap decode_attribution(const std::vector<std::uint8_t>& bytes) {
    binio::Reader r(bytes);
    r.expect_magic("DXAM");
    AttributionMap a;
    a.width = static_cast<int>(r.u32());
    a.height = static_cast<int>(r.u32());
    const auto mode = r.u8();
    if (mode > 3) throw FormatError("DXAM: unknown mode code " + std::to_string(mode));
    a.mode = static_cast<AttributionMode>(mode);
    a.target_class = r.u32();
    const std::size_t n = static_cast<std::size_t>(a.width) * a.height;
    if (r.remaining() != 4 * n) throw FormatError("DXAM: payload size does not match header");
    a.values.resize(n);
    for (double& v : a.values) v = r.f32();
    return a;
}

inline void save_attribution(const std::filesystem::path& path, const AttributionMap& a) {
    binio::write_file_atomic(path, encode_attribution(a));
}

inline AttributionMap load_attribution(const std::filesystem::path& path) {
    return decode_attribution(binio::read_file(path));
}

/// Diverging blue-white-red colormap scaled by max |value| and alpha-blended
/// at 0.6 over the grayscale document. An all-zero map renders neutral.
inline Image8 render_heatmap(const AttributionMap& a, const RasterImage& document) {
    const RasterImage doc = to_grayscale(document);
    if (doc.width != a.width || doc.height != a.height) throw ShapeError("render_heatmap: size mismatch");
    double scale = 0.0;
    for (double v : a.values) scale = std::max(scale, std::abs(v));
    constexpr double alpha = 0.6;
    Image8 out{a.width, a.height, 3, std::vector<std::uint8_t>(a.values.size() * 3)};
    for (std::size_t i = 0; i < a.values.size(); ++i) {
        const double t = scale > 0.0 ? a.values[i] / scale : 0.0;
        double rgb[3] = {1.0, 1.0, 1.0};
        if (t > 0) rgb[1] = rgb[2] = 1.0 - t;
        if (t < 0) rgb[0] = rgb[1] = 1.0 + t;
        for (int c = 0; c < 3; ++c) out.data[3 * i + c] = to_byte(alpha * rgb[c] + (1.0 - alpha) * doc.data[i]);
    }
    return out;
}

} // namespace docxplain
