// Reference model for the DXP1/DXR1 subprocess protocol. Reads requests on
// stdin until EOF. Class 0 scores the mean darkness (1 - mean intensity) of
// each image, class 1 its complement; further classes, if requested, score
// the darkness of horizontal bands. Fault flags exist for protocol tests.

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "docxplain/binary_io.hpp"

namespace {

bool read_exact(void* dst, std::size_t n) { return n == 0 || std::fread(dst, 1, n, stdin) == n; }

void write_all(const std::vector<std::uint8_t>& bytes) {
    std::fwrite(bytes.data(), 1, bytes.size(), stdout);
    std::fflush(stdout);
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"echo model for the DXP1/DXR1 protocol"};
    std::uint32_t classes = 2;
    bool corrupt_magic = false;
    bool truncate = false;
    bool emit_nan = false;
    long die_after = -1;
    app.add_option("--classes", classes, "number of classes (>= 2)")->check(CLI::Range(2u, 4096u));
    app.add_flag("--corrupt-magic", corrupt_magic, "reply with a wrong magic");
    app.add_flag("--truncate", truncate, "send only half of the reply payload, then exit");
    app.add_flag("--nan", emit_nan, "reply with NaN scores");
    app.add_option("--die-after", die_after, "exit without replying after this many requests");
    CLI11_PARSE(app, argc, argv);

    std::vector<std::uint8_t> header(20), payload;
    for (long served = 0;; ++served) {
        if (!read_exact(header.data(), header.size())) return 0;  // EOF: normal shutdown
        if (std::string(header.begin(), header.begin() + 4) != "DXP1") {
            std::fprintf(stderr, "echo_model: bad request magic\n");
            return 2;
        }
        const std::uint32_t batch = docxplain::binio::get_u32(header.data() + 4);
        const std::uint32_t h = docxplain::binio::get_u32(header.data() + 8);
        const std::uint32_t w = docxplain::binio::get_u32(header.data() + 12);
        const std::uint32_t c = docxplain::binio::get_u32(header.data() + 16);
        const std::size_t per_image = static_cast<std::size_t>(h) * w * c;
        payload.resize(static_cast<std::size_t>(batch) * per_image * 4);
        if (!read_exact(payload.data(), payload.size())) return 2;
        if (die_after >= 0 && served >= die_after) return 3;

        std::vector<std::uint8_t> reply;
        docxplain::binio::put_magic(reply, corrupt_magic ? "DXRX" : "DXR1");
        docxplain::binio::put_u32(reply, batch);
        docxplain::binio::put_u32(reply, classes);
        const std::size_t bands = classes - 2;
        for (std::uint32_t i = 0; i < batch; ++i) {
            const std::uint8_t* img = payload.data() + static_cast<std::size_t>(i) * per_image * 4;
            double total = 0.0;
            std::vector<double> band_sum(bands, 0.0);
            std::vector<std::size_t> band_n(bands, 0);
            for (std::uint32_t y = 0; y < h; ++y)
                for (std::size_t k = 0; k < static_cast<std::size_t>(w) * c; ++k) {
                    const double v = docxplain::binio::get_f32(img + 4 * (static_cast<std::size_t>(y) * w * c + k));
                    total += v;
                    if (bands) {
                        const std::size_t b = static_cast<std::size_t>(y) * bands / h;
                        band_sum[b] += v;
                        ++band_n[b];
                    }
                }
            const double dark = per_image ? 1.0 - total / static_cast<double>(per_image) : 0.0;
            auto put = [&](double v) { docxplain::binio::put_f32(reply, emit_nan ? NAN : static_cast<float>(v)); };
            put(dark);
            put(1.0 - dark);
            for (std::size_t b = 0; b < bands; ++b) put(band_n[b] ? 1.0 - band_sum[b] / band_n[b] : 0.0);
        }
        if (truncate) {
            reply.resize(12 + (reply.size() - 12) / 2);
            write_all(reply);
            return 0;
        }
        write_all(reply);
    }
}
