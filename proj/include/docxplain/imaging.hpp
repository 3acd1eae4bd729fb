#pragma once

// Deterministic raster primitives: grayscale conversion, Otsu binarization,
// rectangular morphology and non-interpolating resize.
//
// Polarity convention used everywhere in the library: in a BinaryImage the
// value 0 is black foreground (ink) and 1 is white background (paper).

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "docxplain/error.hpp"

namespace docxplain {

inline constexpr std::uint8_t kForeground = 0;
inline constexpr std::uint8_t kBackground = 1;

/// Row-major raster with interleaved channels (HWC), intensities in [0,1].
struct RasterImage {
    int width = 0;
    int height = 0;
    int channels = 1;
    std::vector<float> data;

    RasterImage() = default;
    RasterImage(int w, int h, int c, float fill = 1.0f)
        : width(w), height(h), channels(c),
          data(static_cast<std::size_t>(w) * static_cast<std::size_t>(h) * static_cast<std::size_t>(c), fill) {
        if (w < 1 || h < 1) throw ShapeError("RasterImage: dimensions must be positive");
        if (c != 1 && c != 3) throw ShapeError("RasterImage: channels must be 1 or 3");
    }

    [[nodiscard]] std::size_t pixel_count() const noexcept {
        return static_cast<std::size_t>(width) * static_cast<std::size_t>(height);
    }
    [[nodiscard]] float& at(int x, int y, int c = 0) {
        return data[(static_cast<std::size_t>(y) * width + x) * channels + c];
    }
    [[nodiscard]] float at(int x, int y, int c = 0) const {
        return data[(static_cast<std::size_t>(y) * width + x) * channels + c];
    }

    /// Throws ShapeError when the buffer or the value range is inconsistent.
    void validate() const {
        if (width < 1 || height < 1) throw ShapeError("RasterImage: dimensions must be positive");
        if (channels != 1 && channels != 3) throw ShapeError("RasterImage: channels must be 1 or 3");
        if (data.size() != pixel_count() * static_cast<std::size_t>(channels))
            throw ShapeError("RasterImage: data length does not match width*height*channels");
        for (float v : data)
            if (!(v >= 0.0f && v <= 1.0f)) throw ShapeError("RasterImage: value outside [0,1]");
    }

    friend bool operator==(const RasterImage&, const RasterImage&) = default;
};

/// Single-channel binary raster, values exactly kForeground (0) or kBackground (1).
struct BinaryImage {
    int width = 0;
    int height = 0;
    std::vector<std::uint8_t> data;

    BinaryImage() = default;
    BinaryImage(int w, int h, std::uint8_t fill = kBackground)
        : width(w), height(h), data(static_cast<std::size_t>(w) * static_cast<std::size_t>(h), fill) {
        if (w < 1 || h < 1) throw ShapeError("BinaryImage: dimensions must be positive");
    }

    [[nodiscard]] std::size_t pixel_count() const noexcept { return data.size(); }
    [[nodiscard]] std::uint8_t& at(int x, int y) { return data[static_cast<std::size_t>(y) * width + x]; }
    [[nodiscard]] std::uint8_t at(int x, int y) const { return data[static_cast<std::size_t>(y) * width + x]; }
    [[nodiscard]] bool is_foreground(int x, int y) const { return at(x, y) == kForeground; }

    [[nodiscard]] std::size_t foreground_count() const noexcept {
        return static_cast<std::size_t>(std::count(data.begin(), data.end(), kForeground));
    }

    friend bool operator==(const BinaryImage&, const BinaryImage&) = default;
};

/// Full rectangle of kx columns by ky rows, both odd, anchored at its center.
struct StructuringElement {
    int kx = 1;
    int ky = 1;

    void validate() const {
        if (kx < 1 || ky < 1 || kx % 2 == 0 || ky % 2 == 0)
            throw ArgumentError("StructuringElement: sizes must be odd positive integers, got " +
                                std::to_string(kx) + "x" + std::to_string(ky));
    }
    [[nodiscard]] int radius_x() const noexcept { return kx / 2; }
    [[nodiscard]] int radius_y() const noexcept { return ky / 2; }

    friend bool operator==(const StructuringElement&, const StructuringElement&) = default;
};

// ---------------------------------------------------------------------------
// Grayscale

inline RasterImage to_grayscale(const RasterImage& img) {
    if (img.channels == 1) return img;
    if (img.channels != 3) throw ShapeError("to_grayscale: unsupported channel count " + std::to_string(img.channels));
    RasterImage out(img.width, img.height, 1);
    for (std::size_t i = 0; i < img.pixel_count(); ++i) {
        const double r = img.data[3 * i];
        const double g = img.data[3 * i + 1];
        const double b = img.data[3 * i + 2];
        const double y = 0.299 * r + 0.587 * g + 0.114 * b;
        out.data[i] = static_cast<float>(std::clamp(y, 0.0, 1.0));
    }
    return out;
}

/// Replicates a single-channel image into `channels` channels (1 or 3).
inline RasterImage with_channels(const RasterImage& gray, int channels) {
    if (gray.channels == channels) return gray;
    if (gray.channels == 3 && channels == 1) return to_grayscale(gray);
    if (gray.channels != 1 || channels != 3) throw ShapeError("with_channels: unsupported conversion");
    RasterImage out(gray.width, gray.height, 3);
    for (std::size_t i = 0; i < gray.pixel_count(); ++i)
        out.data[3 * i] = out.data[3 * i + 1] = out.data[3 * i + 2] = gray.data[i];
    return out;
}

// ---------------------------------------------------------------------------
// Otsu

struct OtsuResult {
    BinaryImage image;
    /// Histogram bin of the chosen threshold; -1 when the input was degenerate.
    int threshold_bin = -1;
    /// Set when the input had fewer than two populated histogram bins.
    bool empty_foreground = false;
};

inline constexpr int kOtsuBins = 256;

/// 256 uniform bins over [0,1].
inline int otsu_bin(float v) noexcept {
    const int b = static_cast<int>(static_cast<double>(v) * kOtsuBins);
    return std::clamp(b, 0, kOtsuBins - 1);
}

/// Picks the bin maximizing between-class variance; the smallest bin wins
/// ties. Pixels whose bin is <= the threshold become foreground.
inline OtsuResult otsu_binarize(const RasterImage& img) {
    if (img.channels != 1) throw ShapeError("otsu_binarize: expects a single-channel image");
    std::array<std::uint64_t, kOtsuBins> hist{};
    for (float v : img.data) ++hist[static_cast<std::size_t>(otsu_bin(v))];

    OtsuResult result;
    result.image = BinaryImage(img.width, img.height, kBackground);
    const auto populated = std::count_if(hist.begin(), hist.end(), [](std::uint64_t n) { return n > 0; });
    if (populated < 2) {
        result.empty_foreground = true;
        return result;
    }

    const double total = static_cast<double>(img.pixel_count());
    double sum_all = 0.0;
    for (int b = 0; b < kOtsuBins; ++b) sum_all += static_cast<double>(b) * static_cast<double>(hist[b]);

    double w0 = 0.0;
    double sum0 = 0.0;
    double best = -1.0;
    int best_t = 0;
    for (int t = 0; t < kOtsuBins - 1; ++t) {
        w0 += static_cast<double>(hist[t]);
        sum0 += static_cast<double>(t) * static_cast<double>(hist[t]);
        const double w1 = total - w0;
        if (w0 == 0.0 || w1 == 0.0) continue;
        const double mu0 = sum0 / w0;
        const double mu1 = (sum_all - sum0) / w1;
        const double between = w0 * w1 * (mu0 - mu1) * (mu0 - mu1);
        if (between > best) {
            best = between;
            best_t = t;
        }
    }
    result.threshold_bin = best_t;
    for (std::size_t i = 0; i < img.data.size(); ++i)
        result.image.data[i] = otsu_bin(img.data[i]) <= best_t ? kForeground : kBackground;
    return result;
}

// ---------------------------------------------------------------------------
// Morphology on the foreground set. Pixels outside the image count as background.

namespace detail {

// Sliding-window filter over a 0/1 plane: output is 1 where the centered
// window of half-width `r` (along rows or columns) holds at least `min_count`
// set entries. Out-of-image positions count as unset. `flip_in` / `flip_out`
// (0 or 1) are XORed into every input / output value, which lets callers work
// directly on the background-is-1 polarity.
inline std::vector<std::uint8_t> window_filter(const std::vector<std::uint8_t>& in, int w, int h, int r,
                                               bool horizontal, int min_count, std::uint8_t flip_in = 0,
                                               std::uint8_t flip_out = 0) {
    std::vector<std::uint8_t> out(in.size());
    if (horizontal) {
        for (int y = 0; y < h; ++y) {
            const std::uint8_t* row = in.data() + static_cast<std::size_t>(y) * w;
            std::uint8_t* dst = out.data() + static_cast<std::size_t>(y) * w;
            auto v = [&](int x) { return static_cast<int>(row[x] ^ flip_in); };
            int count = 0;
            for (int x = 0; x < std::min(r, w); ++x) count += v(x);
            int x = 0;
            for (; x < w && (x - r - 1 < 0 || x + r >= w); ++x) {
                if (x + r < w) count += v(x + r);
                if (x - r - 1 >= 0) count -= v(x - r - 1);
                dst[x] = static_cast<std::uint8_t>((count >= min_count) ^ flip_out);
            }
            for (; x + r < w; ++x) {
                count += v(x + r) - v(x - r - 1);
                dst[x] = static_cast<std::uint8_t>((count >= min_count) ^ flip_out);
            }
            for (; x < w; ++x) {
                count -= v(x - r - 1);
                dst[x] = static_cast<std::uint8_t>((count >= min_count) ^ flip_out);
            }
        }
        return out;
    }
    // Column windows as running row sums so every access stays row-contiguous.
    // With flip_in the accumulator counts unset entries instead.
    std::vector<std::uint16_t> acc(static_cast<std::size_t>(w), 0);
    auto row = [&](int y) { return in.data() + static_cast<std::size_t>(y) * w; };
    for (int y = 0; y < std::min(r, h); ++y)
        for (int x = 0; x < w; ++x) acc[x] = static_cast<std::uint16_t>(acc[x] + row(y)[x]);
    for (int y = 0; y < h; ++y) {
        if (y + r < h) {
            const std::uint8_t* add = row(y + r);
            for (int x = 0; x < w; ++x) acc[x] = static_cast<std::uint16_t>(acc[x] + add[x]);
        }
        if (y - r - 1 >= 0) {
            const std::uint8_t* sub = row(y - r - 1);
            for (int x = 0; x < w; ++x) acc[x] = static_cast<std::uint16_t>(acc[x] - sub[x]);
        }
        const int inside = std::min(h - 1, y + r) - std::max(0, y - r) + 1;
        std::uint8_t* dst = out.data() + static_cast<std::size_t>(y) * w;
        if (flip_in) {
            // set = inside - raw; set >= min_count  <=>  raw <= inside - min_count
            const int limit = inside - min_count;
            if (limit < 0) {
                std::fill(dst, dst + w, static_cast<std::uint8_t>(flip_out));
            } else {
                const auto lim = static_cast<std::uint16_t>(limit);
                for (int x = 0; x < w; ++x) dst[x] = static_cast<std::uint8_t>((acc[x] <= lim) ^ flip_out);
            }
        } else {
            const auto threshold = static_cast<std::uint16_t>(min_count);
            for (int x = 0; x < w; ++x) dst[x] = static_cast<std::uint8_t>((acc[x] >= threshold) ^ flip_out);
        }
    }
    return out;
}

/// 1 where the image is foreground.
inline std::vector<std::uint8_t> foreground_indicator(const BinaryImage& img) {
    std::vector<std::uint8_t> ind(img.data.size());
    for (std::size_t i = 0; i < ind.size(); ++i) ind[i] = img.data[i] ^ 1u;
    return ind;
}

inline BinaryImage wrap_binary(int w, int h, std::vector<std::uint8_t> data) {
    BinaryImage out;
    out.width = w;
    out.height = h;
    out.data = std::move(data);
    return out;
}

inline BinaryImage from_indicator(const std::vector<std::uint8_t>& ind, int w, int h) {
    BinaryImage out;
    out.width = w;
    out.height = h;
    out.data.resize(ind.size());
    for (std::size_t i = 0; i < ind.size(); ++i) out.data[i] = ind[i] ^ 1u;
    return out;
}

} // namespace detail

/// Grows the foreground by the rectangle footprint.
inline BinaryImage morph_dilate(const BinaryImage& img, const StructuringElement& se) {
    se.validate();
    const auto rows = detail::window_filter(img.data, img.width, img.height, se.radius_x(), true, 1, 1, 0);
    return detail::wrap_binary(img.width, img.height,
                               detail::window_filter(rows, img.width, img.height, se.radius_y(), false, 1, 0, 1));
}

/// Keeps a foreground pixel only if the whole footprint around it is foreground.
inline BinaryImage morph_erode(const BinaryImage& img, const StructuringElement& se) {
    se.validate();
    const auto rows = detail::window_filter(img.data, img.width, img.height, se.radius_x(), true, se.kx, 1, 0);
    return detail::wrap_binary(img.width, img.height,
                               detail::window_filter(rows, img.width, img.height, se.radius_y(), false, se.ky, 0, 1));
}

/// Opening of the foreground set: erosion then dilation. Removes ink specks
/// that cannot contain the structuring element.
inline BinaryImage morph_open(const BinaryImage& img, const StructuringElement& se) {
    return morph_dilate(morph_erode(img, se), se);
}

// ---------------------------------------------------------------------------
// Resize / padding

/// Nearest-neighbor resampling of an interleaved plane: output pixel (x, y)
/// reads source pixel (floor(x*w/out_w), floor(y*h/out_h)).
template <typename T>
std::vector<T> resize_nearest_plane(std::span<const T> src, int w, int h, int channels, int out_w, int out_h) {
    if (out_w < 1 || out_h < 1) throw ArgumentError("resize_nearest: target dimensions must be >= 1");
    std::vector<int> xs(static_cast<std::size_t>(out_w));
    for (int x = 0; x < out_w; ++x)
        xs[x] = static_cast<int>(static_cast<std::int64_t>(x) * w / out_w);
    std::vector<T> out(static_cast<std::size_t>(out_w) * out_h * channels);
    for (int y = 0; y < out_h; ++y) {
        const auto sy = static_cast<std::size_t>(static_cast<std::int64_t>(y) * h / out_h);
        for (int x = 0; x < out_w; ++x) {
            const std::size_t s = (sy * w + xs[x]) * channels;
            const std::size_t d = (static_cast<std::size_t>(y) * out_w + x) * channels;
            for (int c = 0; c < channels; ++c) out[d + c] = src[s + c];
        }
    }
    return out;
}

inline BinaryImage resize_nearest(const BinaryImage& img, int out_w, int out_h) {
    BinaryImage out;
    out.data = resize_nearest_plane<std::uint8_t>(img.data, img.width, img.height, 1, out_w, out_h);
    out.width = out_w;
    out.height = out_h;
    return out;
}

inline RasterImage resize_nearest(const RasterImage& img, int out_w, int out_h) {
    RasterImage out;
    out.data = resize_nearest_plane<float>(img.data, img.width, img.height, img.channels, out_w, out_h);
    out.width = out_w;
    out.height = out_h;
    out.channels = img.channels;
    return out;
}

/// Pads on the right/bottom with background so the image becomes square.
inline BinaryImage pad_to_square(const BinaryImage& img) {
    const int side = std::max(img.width, img.height);
    if (img.width == side && img.height == side) return img;
    BinaryImage out(side, side, kBackground);
    for (int y = 0; y < img.height; ++y)
        std::copy_n(img.data.begin() + static_cast<std::ptrdiff_t>(y) * img.width, img.width,
                    out.data.begin() + static_cast<std::ptrdiff_t>(y) * side);
    return out;
}

/// Pads on the right/bottom with white paper (1.0) so the image becomes square.
inline RasterImage pad_to_square(const RasterImage& img) {
    const int side = std::max(img.width, img.height);
    if (img.width == side && img.height == side) return img;
    RasterImage out(side, side, img.channels, 1.0f);
    const std::size_t row = static_cast<std::size_t>(img.width) * img.channels;
    for (int y = 0; y < img.height; ++y)
        std::copy_n(img.data.begin() + static_cast<std::ptrdiff_t>(y * row), row,
                    out.data.begin() + static_cast<std::ptrdiff_t>(static_cast<std::size_t>(y) * side * img.channels));
    return out;
}

/// Maps a page of any size onto the classifier input grid: pad to square,
/// nearest resize, then match the channel count.
inline RasterImage prepare_model_input(const RasterImage& page, int width, int height, int channels) {
    return with_channels(resize_nearest(pad_to_square(page), width, height), channels);
}

/// Binary image viewed as intensities (0 -> 0.0, 1 -> 1.0).
inline RasterImage to_raster(const BinaryImage& img) {
    RasterImage out(img.width, img.height, 1);
    for (std::size_t i = 0; i < img.data.size(); ++i) out.data[i] = img.data[i] == kForeground ? 0.0f : 1.0f;
    return out;
}

} // namespace docxplain
