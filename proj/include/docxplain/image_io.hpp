#pragma once

// Image ingestion and export: binary PGM/PPM (P5/P6) and PNG via libpng.
// Loaded pages are converted to single-channel grayscale.

#include <png.h>

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <istream>
#include <iterator>
#include <string>
#include <vector>

#include "docxplain/binary_io.hpp"
#include "docxplain/error.hpp"
#include "docxplain/imaging.hpp"

namespace docxplain {

/// 8-bit interleaved raster used for export (1 = gray, 3 = RGB).
struct Image8 {
    int width = 0;
    int height = 0;
    int channels = 1;
    std::vector<std::uint8_t> data;
};

inline std::uint8_t to_byte(double v) {
    return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
}

namespace detail {

inline void skip_pnm_space(std::istream& in) {
    for (;;) {
        const int c = in.peek();
        if (c == '#') {
            std::string line;
            std::getline(in, line);
        } else if (c != EOF && std::isspace(c)) {
            in.get();
        } else {
            return;
        }
    }
}

inline int read_pnm_int(std::istream& in, const std::string& path) {
    skip_pnm_space(in);
    int v = -1;
    if (!(in >> v) || v < 0) throw FormatError("malformed PNM header: " + path);
    return v;
}

inline RasterImage read_pnm(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError("cannot open " + path.string());
    char magic[2] = {};
    in.read(magic, 2);
    if (!in || magic[0] != 'P' || (magic[1] != '5' && magic[1] != '6'))
        throw FormatError("not a binary PGM/PPM (P5/P6): " + path.string());
    const int channels = magic[1] == '5' ? 1 : 3;
    const int w = read_pnm_int(in, path.string());
    const int h = read_pnm_int(in, path.string());
    const int maxval = read_pnm_int(in, path.string());
    if (w < 1 || h < 1 || maxval < 1 || maxval > 65535) throw FormatError("bad PNM dimensions: " + path.string());
    in.get(); // single whitespace before raster
    const std::size_t n = static_cast<std::size_t>(w) * h * channels;
    const int bytes = maxval > 255 ? 2 : 1;
    std::vector<unsigned char> raw(n * bytes);
    in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
    if (in.gcount() != static_cast<std::streamsize>(raw.size())) throw FormatError("truncated PNM raster: " + path.string());
    RasterImage img(w, h, channels);
    for (std::size_t i = 0; i < n; ++i) {
        const unsigned v = bytes == 1 ? raw[i] : (static_cast<unsigned>(raw[2 * i]) << 8) | raw[2 * i + 1];
        img.data[i] = static_cast<float>(std::min(1.0, static_cast<double>(v) / maxval));
    }
    return img;
}

inline RasterImage read_png(const std::filesystem::path& path) {
    png_image image{};
    image.version = PNG_IMAGE_VERSION;
    if (!png_image_begin_read_from_file(&image, path.string().c_str()))
        throw FormatError("cannot read PNG " + path.string() + ": " + image.message);
    image.format = PNG_FORMAT_GRAY;
    std::vector<png_byte> buffer(PNG_IMAGE_SIZE(image));
    if (!png_image_finish_read(&image, nullptr, buffer.data(), 0, nullptr)) {
        const std::string msg = image.message;
        png_image_free(&image);
        throw FormatError("cannot decode PNG " + path.string() + ": " + msg);
    }
    RasterImage img(static_cast<int>(image.width), static_cast<int>(image.height), 1);
    for (std::size_t i = 0; i < img.data.size(); ++i) img.data[i] = static_cast<float>(buffer[i] / 255.0);
    return img;
}

} // namespace detail

/// Loads a PNG or binary PGM/PPM page as a single-channel grayscale image.
inline RasterImage load_page(const std::filesystem::path& path) {
    std::ifstream probe(path, std::ios::binary);
    if (!probe) throw FormatError("cannot open " + path.string());
    unsigned char sig[8] = {};
    probe.read(reinterpret_cast<char*>(sig), 8);
    if (probe.gcount() == 8 && png_sig_cmp(sig, 0, 8) == 0) return detail::read_png(path);
    if (probe.gcount() >= 2 && sig[0] == 'P') return to_grayscale(detail::read_pnm(path));
    throw FormatError("unsupported image format: " + path.string());
}

/// Writes a binary PGM (1 channel) or PPM (3 channels) at 8 bits.
inline void write_pnm(const std::filesystem::path& path, const RasterImage& img) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw FormatError("cannot write " + path.string());
    out << (img.channels == 1 ? "P5" : "P6") << '\n' << img.width << ' ' << img.height << "\n255\n";
    std::vector<char> bytes(img.data.size());
    std::transform(img.data.begin(), img.data.end(), bytes.begin(),
                   [](float v) { return static_cast<char>(to_byte(v)); });
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw FormatError("failed writing " + path.string());
}

inline std::vector<std::uint8_t> encode_png(const Image8& img) {
    if (img.channels != 1 && img.channels != 3) throw ArgumentError("encode_png: channels must be 1 or 3");
    png_image image{};
    image.version = PNG_IMAGE_VERSION;
    image.width = static_cast<png_uint_32>(img.width);
    image.height = static_cast<png_uint_32>(img.height);
    image.format = img.channels == 3 ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
    png_alloc_size_t size = 0;
    if (!png_image_write_to_memory(&image, nullptr, &size, 0, img.data.data(), 0, nullptr))
        throw FormatError(std::string("cannot encode PNG: ") + image.message);
    std::vector<std::uint8_t> out(size);
    if (!png_image_write_to_memory(&image, out.data(), &size, 0, img.data.data(), 0, nullptr))
        throw FormatError(std::string("cannot encode PNG: ") + image.message);
    out.resize(size);
    return out;
}

/// Encodes in memory, then writes atomically.
inline void write_png(const std::filesystem::path& path, const Image8& img) {
    binio::write_file_atomic(path, encode_png(img));
}

inline void write_png(const std::filesystem::path& path, const RasterImage& img) {
    Image8 out{img.width, img.height, img.channels, std::vector<std::uint8_t>(img.data.size())};
    std::transform(img.data.begin(), img.data.end(), out.data.begin(), [](float v) { return to_byte(v); });
    write_png(path, out);
}

} // namespace docxplain
