#pragma once

// Black-box classifier abstraction. The engine only ever calls forward
// scoring; nothing here exposes gradients or model internals.

#include <fcntl.h>
#include <signal.h>
#include <sys/types.h>
#include <sys/wait.h>
#include <unistd.h>

#include <bit>
#include <cerrno>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <memory>
#include <mutex>
#include <span>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include "docxplain/binary_io.hpp"
#include "docxplain/error.hpp"
#include "docxplain/imaging.hpp"

namespace docxplain {

struct InputShape {
    int width = 224;
    int height = 224;
    int channels = 1;

    friend bool operator==(const InputShape&, const InputShape&) = default;
};

using ScoreVector = std::vector<double>;

class Classifier {
public:
    virtual ~Classifier() = default;

    [[nodiscard]] virtual InputShape input_shape() const = 0;
    [[nodiscard]] virtual std::size_t n_classes() const = 0;
    [[nodiscard]] virtual std::size_t max_batch() const { return 64; }
    /// Stable identifier, used as part of score cache keys.
    [[nodiscard]] virtual std::string id() const = 0;

    /// One score vector per image, in order. The batch may not exceed max_batch().
    std::vector<ScoreVector> score_batch(std::span<const RasterImage> images) {
        if (images.size() > max_batch())
            throw ArgumentError("score_batch: batch of " + std::to_string(images.size()) + " exceeds max_batch " +
                                std::to_string(max_batch()));
        const auto shape = input_shape();
        for (const auto& img : images)
            if (img.width != shape.width || img.height != shape.height || img.channels != shape.channels ||
                img.data.size() != img.pixel_count() * static_cast<std::size_t>(img.channels))
                throw ShapeError("score_batch: image " + std::to_string(img.width) + "x" + std::to_string(img.height) +
                                 "x" + std::to_string(img.channels) + " does not match classifier input " +
                                 std::to_string(shape.width) + "x" + std::to_string(shape.height) + "x" +
                                 std::to_string(shape.channels));
        if (images.empty()) return {};
        auto out = do_score(images);
        if (out.size() != images.size()) throw BackendError("classifier returned a wrong number of score vectors");
        return out;
    }

    ScoreVector score(const RasterImage& img) { return score_batch(std::span<const RasterImage>(&img, 1)).front(); }

protected:
    virtual std::vector<ScoreVector> do_score(std::span<const RasterImage> images) = 0;
};

/// Scores an arbitrarily long list of images in max_batch() chunks.
inline std::vector<ScoreVector> score_all(Classifier& f, std::span<const RasterImage> images) {
    std::vector<ScoreVector> out;
    out.reserve(images.size());
    const std::size_t b = std::max<std::size_t>(1, f.max_batch());
    for (std::size_t i = 0; i < images.size(); i += b) {
        auto part = f.score_batch(images.subspan(i, std::min(b, images.size() - i)));
        for (auto& s : part) out.push_back(std::move(s));
    }
    return out;
}

inline std::size_t argmax(const ScoreVector& s) {
    return static_cast<std::size_t>(std::max_element(s.begin(), s.end()) - s.begin());
}

// ---------------------------------------------------------------------------
// Synthetic classifiers with closed-form ablation behavior. "Darkness" of a
// pixel is 1 - (mean over channels of its intensity), so on binary pages a
// region's darkness density is its black-pixel fraction.

struct Rect {
    int x = 0;
    int y = 0;
    int w = 0;
    int h = 0;

    [[nodiscard]] std::size_t area() const { return static_cast<std::size_t>(w) * static_cast<std::size_t>(h); }
    [[nodiscard]] bool contains(int px, int py) const { return px >= x && py >= y && px < x + w && py < y + h; }
    [[nodiscard]] bool overlaps(const Rect& o) const {
        return x < o.x + o.w && o.x < x + w && y < o.y + o.h && o.y < y + h;
    }
    friend bool operator==(const Rect&, const Rect&) = default;
};

inline double darkness_density(const RasterImage& img, const Rect& r) {
    double sum = 0.0;
    const int c = img.channels;
    for (int y = r.y; y < r.y + r.h; ++y) {
        const float* row = img.data.data() + (static_cast<std::size_t>(y) * img.width + r.x) * c;
        for (int i = 0; i < r.w * c; ++i) sum += row[i];
    }
    const double n = static_cast<double>(r.area());
    return 1.0 - sum / (n * c);
}

/// Always returns the same score vector.
class ConstantClassifier final : public Classifier {
public:
    ConstantClassifier(InputShape shape, ScoreVector scores) : shape_(shape), scores_(std::move(scores)) {
        if (scores_.size() < 2) throw ArgumentError("ConstantClassifier: need at least two classes");
        for (double s : scores_)
            if (!std::isfinite(s)) throw ArgumentError("ConstantClassifier: scores must be finite");
    }
    /// Two classes: (p, 1 - p).
    ConstantClassifier(InputShape shape, double p) : ConstantClassifier(shape, ScoreVector{p, 1.0 - p}) {}

    [[nodiscard]] InputShape input_shape() const override { return shape_; }
    [[nodiscard]] std::size_t n_classes() const override { return scores_.size(); }
    [[nodiscard]] std::string id() const override {
        std::ostringstream os;
        os.precision(17);
        os << "constant";
        for (double s : scores_) os << ':' << s;
        return os.str();
    }

protected:
    std::vector<ScoreVector> do_score(std::span<const RasterImage> images) override {
        return std::vector<ScoreVector>(images.size(), scores_);
    }

private:
    InputShape shape_;
    ScoreVector scores_;
};

struct WeightedRegion {
    Rect rect;
    double weight = 1.0;
};

/// Class 0 scores sum_r weight_r * darkness_density(r) over disjoint
/// rectangles (optionally clamped to [0,1]); class 1 is its complement.
/// A single region of weight 1 is the region-density classifier.
class RegionLinearClassifier final : public Classifier {
public:
    RegionLinearClassifier(InputShape shape, std::vector<WeightedRegion> regions, bool clamp = true)
        : shape_(shape), regions_(std::move(regions)), clamp_(clamp) {
        if (regions_.empty()) throw ArgumentError("RegionLinearClassifier: need at least one region");
        for (std::size_t i = 0; i < regions_.size(); ++i) {
            const auto& r = regions_[i].rect;
            if (r.w < 1 || r.h < 1 || r.x < 0 || r.y < 0 || r.x + r.w > shape.width || r.y + r.h > shape.height)
                throw ArgumentError("RegionLinearClassifier: region outside the input image");
            if (!std::isfinite(regions_[i].weight)) throw ArgumentError("RegionLinearClassifier: weights must be finite");
            for (std::size_t j = 0; j < i; ++j)
                if (r.overlaps(regions_[j].rect)) throw ArgumentError("RegionLinearClassifier: regions must be disjoint");
        }
    }

    [[nodiscard]] InputShape input_shape() const override { return shape_; }
    [[nodiscard]] std::size_t n_classes() const override { return 2; }
    [[nodiscard]] std::size_t max_batch() const override { return 256; }
    [[nodiscard]] const std::vector<WeightedRegion>& regions() const { return regions_; }
    [[nodiscard]] bool clamped() const { return clamp_; }
    [[nodiscard]] std::string id() const override {
        std::ostringstream os;
        os.precision(17);
        os << "region_linear";
        for (const auto& r : regions_) os << ':' << r.rect.x << ',' << r.rect.y << ',' << r.rect.w << ',' << r.rect.h << ',' << r.weight;
        os << (clamp_ ? ":clamped" : ":unclamped");
        return os.str();
    }

    [[nodiscard]] double target_score(const RasterImage& img) const {
        double s = 0.0;
        for (const auto& r : regions_) s += r.weight * darkness_density(img, r.rect);
        return clamp_ ? std::clamp(s, 0.0, 1.0) : s;
    }

protected:
    std::vector<ScoreVector> do_score(std::span<const RasterImage> images) override {
        std::vector<ScoreVector> out;
        out.reserve(images.size());
        for (const auto& img : images) {
            const double s = target_score(img);
            out.push_back({s, 1.0 - s});
        }
        return out;
    }

private:
    InputShape shape_;
    std::vector<WeightedRegion> regions_;
    bool clamp_;
};

inline std::unique_ptr<RegionLinearClassifier> make_region_density(InputShape shape, Rect region) {
    return std::make_unique<RegionLinearClassifier>(shape, std::vector<WeightedRegion>{{region, 1.0}});
}

// ---------------------------------------------------------------------------
// Subprocess wire protocol.
//   request:  "DXP1" u32 batch, u32 h, u32 w, u32 c, batch*h*w*c f32 (HWC per image)
//   reply:    "DXR1" u32 batch, u32 n_classes, batch*n_classes f32
// All integers and floats little-endian.

namespace protocol {

inline constexpr std::size_t kRequestHeader = 20;
inline constexpr std::size_t kReplyHeader = 12;

inline std::vector<std::uint8_t> encode_request(std::span<const RasterImage> images) {
    if (images.empty()) throw ArgumentError("encode_request: empty batch");
    const auto& first = images.front();
    std::vector<std::uint8_t> out;
    out.reserve(kRequestHeader + images.size() * first.data.size() * 4);
    binio::put_magic(out, "DXP1");
    binio::put_u32(out, static_cast<std::uint32_t>(images.size()));
    binio::put_u32(out, static_cast<std::uint32_t>(first.height));
    binio::put_u32(out, static_cast<std::uint32_t>(first.width));
    binio::put_u32(out, static_cast<std::uint32_t>(first.channels));
    for (const auto& img : images) {
        if (img.width != first.width || img.height != first.height || img.channels != first.channels)
            throw ShapeError("encode_request: images in a batch must share one shape");
        for (float v : img.data) binio::put_f32(out, v);
    }
    return out;
}

struct RequestHeader {
    std::uint32_t batch, height, width, channels;
};

inline RequestHeader decode_request_header(const std::uint8_t* p) {
    if (std::memcmp(p, "DXP1", 4) != 0) throw ProtocolError("bad request magic", 0);
    return {binio::get_u32(p + 4), binio::get_u32(p + 8), binio::get_u32(p + 12), binio::get_u32(p + 16)};
}

inline std::vector<std::uint8_t> encode_reply(const std::vector<std::vector<float>>& scores) {
    std::vector<std::uint8_t> out;
    binio::put_magic(out, "DXR1");
    binio::put_u32(out, static_cast<std::uint32_t>(scores.size()));
    binio::put_u32(out, static_cast<std::uint32_t>(scores.empty() ? 0 : scores.front().size()));
    for (const auto& row : scores)
        for (float v : row) binio::put_f32(out, v);
    return out;
}

/// Validates a reply header; `expected_classes` of 0 accepts any count >= 2.
inline std::uint32_t check_reply_header(const std::uint8_t* p, std::uint32_t expected_batch,
                                        std::uint32_t expected_classes) {
    if (std::memcmp(p, "DXR1", 4) != 0) throw ProtocolError("bad reply magic", 0);
    if (binio::get_u32(p + 4) != expected_batch)
        throw ProtocolError("reply batch " + std::to_string(binio::get_u32(p + 4)) + " != request batch " +
                                std::to_string(expected_batch),
                            4);
    const std::uint32_t n = binio::get_u32(p + 8);
    if (n < 2) throw ProtocolError("reply declares fewer than two classes", 8);
    if (expected_classes != 0 && n != expected_classes)
        throw ProtocolError("reply class count " + std::to_string(n) + " != " + std::to_string(expected_classes), 8);
    return n;
}

} // namespace protocol

/// Talks to a child process over the DXP1/DXR1 protocol. The child is started
/// with `/bin/sh -c command`, receives requests on stdin, answers on stdout
/// and exits on EOF. Calls are serialized; one request is in flight at a time.
/// Constructing the first instance sets SIGPIPE to ignored.
class SubprocessClassifier final : public Classifier {
public:
    SubprocessClassifier(std::string command, InputShape shape, std::size_t n_classes = 0, std::size_t max_batch = 32)
        : command_(std::move(command)), shape_(shape), max_batch_(std::max<std::size_t>(1, max_batch)) {
        ::signal(SIGPIPE, SIG_IGN);
        int to_child[2], from_child[2];
        if (::pipe(to_child) != 0 || ::pipe(from_child) != 0) throw BackendError("pipe() failed");
        pid_ = ::fork();
        if (pid_ < 0) throw BackendError("fork() failed");
        if (pid_ == 0) {
            ::dup2(to_child[0], STDIN_FILENO);
            ::dup2(from_child[1], STDOUT_FILENO);
            ::close(to_child[0]), ::close(to_child[1]), ::close(from_child[0]), ::close(from_child[1]);
            ::execl("/bin/sh", "sh", "-c", command_.c_str(), static_cast<char*>(nullptr));
            ::_exit(127);
        }
        ::close(to_child[0]);
        ::close(from_child[1]);
        in_fd_ = to_child[1];
        out_fd_ = from_child[0];
        ::fcntl(in_fd_, F_SETFD, FD_CLOEXEC);
        ::fcntl(out_fd_, F_SETFD, FD_CLOEXEC);
        n_classes_ = n_classes;
        if (n_classes_ == 0) {
            // Probe with a blank page to learn the class count.
            RasterImage blank(shape_.width, shape_.height, shape_.channels, 1.0f);
            n_classes_ = score(blank).size();
        }
    }

    SubprocessClassifier(const SubprocessClassifier&) = delete;
    SubprocessClassifier& operator=(const SubprocessClassifier&) = delete;

    ~SubprocessClassifier() override {
        if (in_fd_ >= 0) ::close(in_fd_);
        if (out_fd_ >= 0) ::close(out_fd_);
        if (pid_ > 0) {
            int status = 0;
            ::waitpid(pid_, &status, 0);
        }
    }

    [[nodiscard]] InputShape input_shape() const override { return shape_; }
    [[nodiscard]] std::size_t n_classes() const override { return n_classes_; }
    [[nodiscard]] std::size_t max_batch() const override { return max_batch_; }
    [[nodiscard]] std::string id() const override { return "subprocess:" + command_; }

protected:
    std::vector<ScoreVector> do_score(std::span<const RasterImage> images) override {
        std::lock_guard lock(mutex_);
        const auto request = protocol::encode_request(images);
        write_all(request.data(), request.size());

        std::uint8_t header[protocol::kReplyHeader];
        read_exact(header, sizeof header, 0);
        const auto batch = static_cast<std::uint32_t>(images.size());
        const auto n = protocol::check_reply_header(header, batch, static_cast<std::uint32_t>(n_classes_));
        std::vector<std::uint8_t> payload(static_cast<std::size_t>(batch) * n * 4);
        read_exact(payload.data(), payload.size(), protocol::kReplyHeader);

        std::vector<ScoreVector> out(batch, ScoreVector(n));
        for (std::size_t i = 0; i < batch; ++i)
            for (std::size_t k = 0; k < n; ++k) {
                const std::size_t off = 4 * (i * n + k);
                const float v = binio::get_f32(payload.data() + off);
                if (!std::isfinite(v)) throw ProtocolError("non-finite score", protocol::kReplyHeader + off);
                out[i][k] = v;
            }
        return out;
    }

private:
    void write_all(const std::uint8_t* p, std::size_t n) {
        while (n > 0) {
            const ssize_t k = ::write(in_fd_, p, n);
            if (k < 0 && errno == EINTR) continue;
            if (k <= 0) throw BackendError("model process closed its input (" + command_ + ")");
            p += k;
            n -= static_cast<std::size_t>(k);
        }
    }

    void read_exact(std::uint8_t* p, std::size_t n, std::size_t base_offset) {
        std::size_t got = 0;
        while (got < n) {
            const ssize_t k = ::read(out_fd_, p + got, n - got);
            if (k < 0 && errno == EINTR) continue;
            if (k <= 0) throw ProtocolError("unexpected end of reply stream", base_offset + got);
            got += static_cast<std::size_t>(k);
        }
    }

    std::string command_;
    InputShape shape_;
    std::size_t n_classes_ = 0;
    std::size_t max_batch_;
    pid_t pid_ = -1;
    int in_fd_ = -1;
    int out_fd_ = -1;
    std::mutex mutex_;
};

// ---------------------------------------------------------------------------

/// 64-bit FNV-1a over the image shape and raw float bytes.
inline std::uint64_t content_hash(const RasterImage& img) {
    std::uint64_t h = 1469598103934665603ull;
    auto mix = [&h](const void* data, std::size_t n) {
        const auto* b = static_cast<const unsigned char*>(data);
        for (std::size_t i = 0; i < n; ++i) h = (h ^ b[i]) * 1099511628211ull;
    };
    const int dims[3] = {img.width, img.height, img.channels};
    mix(dims, sizeof dims);
    mix(img.data.data(), img.data.size() * sizeof(float));
    return h;
}

/// Memoizes another classifier's scores by image content hash. Only valid
/// for deterministic backends.
class CachingClassifier final : public Classifier {
public:
    explicit CachingClassifier(std::shared_ptr<Classifier> inner) : inner_(std::move(inner)) {}

    [[nodiscard]] InputShape input_shape() const override { return inner_->input_shape(); }
    [[nodiscard]] std::size_t n_classes() const override { return inner_->n_classes(); }
    [[nodiscard]] std::size_t max_batch() const override { return inner_->max_batch(); }
    [[nodiscard]] std::string id() const override { return inner_->id(); }
    [[nodiscard]] std::size_t hits() const {
        std::lock_guard lock(mutex_);
        return hits_;
    }

protected:
    std::vector<ScoreVector> do_score(std::span<const RasterImage> images) override {
        std::vector<ScoreVector> out(images.size());
        std::vector<RasterImage> misses;
        std::vector<std::size_t> miss_index;
        std::vector<std::uint64_t> keys(images.size());
        {
            std::lock_guard lock(mutex_);
            for (std::size_t i = 0; i < images.size(); ++i) {
                keys[i] = content_hash(images[i]);
                if (auto it = cache_.find(keys[i]); it != cache_.end()) {
                    out[i] = it->second;
                    ++hits_;
                } else {
                    misses.push_back(images[i]);
                    miss_index.push_back(i);
                }
            }
        }
        if (!misses.empty()) {
            auto scored = inner_->score_batch(misses);
            std::lock_guard lock(mutex_);
            for (std::size_t j = 0; j < misses.size(); ++j) {
                out[miss_index[j]] = scored[j];
                cache_.emplace(keys[miss_index[j]], std::move(scored[j]));
            }
        }
        return out;
    }

private:
    std::shared_ptr<Classifier> inner_;
    mutable std::mutex mutex_;
    std::unordered_map<std::uint64_t, ScoreVector> cache_;
    std::size_t hits_ = 0;
};

} // namespace docxplain
