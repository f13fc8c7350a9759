#pragma once

// Box-prompt segmentation backends. A backend maps (image, box) to a mask of
// the image's dimensions; it is class-agnostic.
//
//   OracleBackend  - ground truth restricted to the box, with optional
//                    seeded boundary noise (closed-loop testing).
//   RemoteBackend  - HTTP/JSON client for a segmentation service:
//                      POST /v1/segment, GET /v1/health

#include "pssam/error.hpp"
#include "pssam/geometry.hpp"
#include "pssam/metrics.hpp"
#include "pssam/random.hpp"

#include <httplib.h>
#include <nlohmann/json.hpp>

#include <chrono>
#include <cstdint>
#include <cstring>
#include <memory>
#include <string>
#include <string_view>
#include <thread>

namespace pssam {

struct SegmentRequest {
    Image2D image;
    BBox box;
};

struct SegmentResponse {
    Mask2D mask;
    double confidence = 1.0;
};

class SegmenterBackend {
public:
    virtual ~SegmenterBackend() = default;
    virtual SegmentResponse run(const SegmentRequest& req) = 0;
    virtual std::string name() const = 0;
};

/// Validates the request, dispatches, and checks the returned mask shape.
inline SegmentResponse segment(SegmenterBackend& backend, const SegmentRequest& req) {
    if (req.box.empty() || !image_box(req.image).contains(req.box))
        throw DimensionMismatch("segment request box lies outside the image");
    SegmentResponse r = backend.run(req);
    if (!r.mask.same_shape(req.image) ||
        r.mask.bits.size() != static_cast<std::size_t>(req.image.width) * static_cast<std::size_t>(req.image.height))
        throw DimensionMismatch(backend.name() + " returned a " + std::to_string(r.mask.width) + "x" +
                                std::to_string(r.mask.height) + " mask for a " + std::to_string(req.image.width) +
                                "x" + std::to_string(req.image.height) + " image");
    return r;
}

// ---------------------------------------------------------------------------
// Oracle
// ---------------------------------------------------------------------------

struct OracleConfig {
    int perturb_radius = 1;
    double perturb_rate = 0.0;
    std::uint64_t rng_seed = 7;
};

/// Pixels whose 4-neighbourhood (inside the image) contains the opposite value.
inline Mask2D boundary_pixels(const Mask2D& m) {
    Mask2D out(m.width, m.height);
    for (int y = 0; y < m.height; ++y)
        for (int x = 0; x < m.width; ++x) {
            const bool v = m.at(x, y);
            const bool edge = (x > 0 && m.at(x - 1, y) != v) || (x + 1 < m.width && m.at(x + 1, y) != v) ||
                              (y > 0 && m.at(x, y - 1) != v) || (y + 1 < m.height && m.at(x, y + 1) != v);
            out.set(x, y, edge);
        }
    return out;
}

/// gt restricted to the box; with a non-zero rate, each boundary pixel of
/// that base mask triggers (with probability rate) a flip of one pixel drawn
/// uniformly from its (2r+1)^2 Chebyshev neighbourhood. The noisy mask is
/// re-restricted to the box. The noise stream is keyed by (seed, box).
inline SegmentResponse oracle_segment(const OracleConfig& cfg, const Mask2D& gt, const SegmentRequest& req) {
    if (!gt.same_shape(req.image))
        throw DimensionMismatch("oracle ground truth does not match the request image");
    const Mask2D base = mask_intersect_box(gt, req.box);
    if (cfg.perturb_rate <= 0.0)
        return {base, 1.0};

    const BBox& b = req.box;
    const std::uint64_t key = (static_cast<std::uint64_t>(b.x0) & 0xffff) | (static_cast<std::uint64_t>(b.y0 & 0xffff) << 16) |
                              (static_cast<std::uint64_t>(b.x1 & 0xffff) << 32) |
                              (static_cast<std::uint64_t>(b.y1 & 0xffff) << 48);
    Rng rng(mix_seed(cfg.rng_seed, key));
    const Mask2D edge = boundary_pixels(base);
    Mask2D noisy = base;
    const int r = std::max(0, cfg.perturb_radius);
    for (int y = 0; y < base.height; ++y)
        for (int x = 0; x < base.width; ++x) {
            if (!edge.at(x, y) || uniform01(rng) >= cfg.perturb_rate)
                continue;
            const int fx = x + uniform_int(rng, -r, r);
            const int fy = y + uniform_int(rng, -r, r);
            if (fx >= 0 && fy >= 0 && fx < base.width && fy < base.height)
                noisy.set(fx, fy, !noisy.at(fx, fy));
        }
    Mask2D out = mask_intersect_box(noisy, req.box);
    const double conf = dice(base, out);
    return {std::move(out), conf};
}

class OracleBackend : public SegmenterBackend {
public:
    OracleBackend(OracleConfig cfg, Mask2D gt) : cfg_(cfg), gt_(std::move(gt)) {}
    SegmentResponse run(const SegmentRequest& req) override { return oracle_segment(cfg_, gt_, req); }
    std::string name() const override { return "oracle"; }

private:
    OracleConfig cfg_;
    Mask2D gt_;
};

// ---------------------------------------------------------------------------
// Wire format helpers
// ---------------------------------------------------------------------------

inline std::string base64_encode(std::string_view in) {
    static constexpr char tbl[] = "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";
    std::string out;
    out.reserve((in.size() + 2) / 3 * 4);
    std::size_t i = 0;
    for (; i + 2 < in.size(); i += 3) {
        const std::uint32_t v = (static_cast<unsigned char>(in[i]) << 16) | (static_cast<unsigned char>(in[i + 1]) << 8) |
                                static_cast<unsigned char>(in[i + 2]);
        out += tbl[(v >> 18) & 63];
        out += tbl[(v >> 12) & 63];
        out += tbl[(v >> 6) & 63];
        out += tbl[v & 63];
    }
    if (i < in.size()) {
        std::uint32_t v = static_cast<unsigned char>(in[i]) << 16;
        if (i + 1 < in.size())
            v |= static_cast<unsigned char>(in[i + 1]) << 8;
        out += tbl[(v >> 18) & 63];
        out += tbl[(v >> 12) & 63];
        out += i + 1 < in.size() ? tbl[(v >> 6) & 63] : '=';
        out += '=';
    }
    return out;
}

inline std::string base64_decode(std::string_view in) {
    auto val = [](char c) -> int {
        if (c >= 'A' && c <= 'Z')
            return c - 'A';
        if (c >= 'a' && c <= 'z')
            return c - 'a' + 26;
        if (c >= '0' && c <= '9')
            return c - '0' + 52;
        if (c == '+')
            return 62;
        if (c == '/')
            return 63;
        return -1;
    };
    if (in.size() % 4 != 0)
        throw BackendError(BackendCategory::Protocol, "base64 payload length is not a multiple of 4");
    std::string out;
    out.reserve(in.size() / 4 * 3);
    for (std::size_t i = 0; i < in.size(); i += 4) {
        int v[4];
        int pad = 0;
        for (int k = 0; k < 4; ++k) {
            const char c = in[i + k];
            if (c == '=' && i + 4 == in.size() && k >= 2) {
                v[k] = 0;
                ++pad;
            } else {
                v[k] = val(c);
                if (v[k] < 0 || pad)
                    throw BackendError(BackendCategory::Protocol, "invalid base64 payload");
            }
        }
        const std::uint32_t w = (v[0] << 18) | (v[1] << 12) | (v[2] << 6) | v[3];
        out += static_cast<char>((w >> 16) & 0xff);
        if (pad < 2)
            out += static_cast<char>((w >> 8) & 0xff);
        if (pad < 1)
            out += static_cast<char>(w & 0xff);
    }
    return out;
}

/// Little-endian float32 row-major pixels.
inline std::string encode_pixels_f32le(const Image2D& img) {
    std::string out(img.pixels.size() * 4, '\0');
    for (std::size_t i = 0; i < img.pixels.size(); ++i) {
        const float f = static_cast<float>(img.pixels[i]);
        std::uint32_t u;
        std::memcpy(&u, &f, 4);
        for (int k = 0; k < 4; ++k)
            out[4 * i + k] = static_cast<char>((u >> (8 * k)) & 0xff);
    }
    return out;
}

inline std::vector<float> decode_pixels_f32le(std::string_view bytes) {
    std::vector<float> out(bytes.size() / 4);
    for (std::size_t i = 0; i < out.size(); ++i) {
        std::uint32_t u = 0;
        for (int k = 0; k < 4; ++k)
            u |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes[4 * i + k])) << (8 * k);
        std::memcpy(&out[i], &u, 4);
    }
    return out;
}

inline std::string encode_segment_request(const SegmentRequest& req) {
    nlohmann::ordered_json j;
    j["width"] = req.image.width;
    j["height"] = req.image.height;
    j["pixels_b64"] = base64_encode(encode_pixels_f32le(req.image));
    j["box"] = {req.box.x0, req.box.y0, req.box.x1, req.box.y1};
    return j.dump();
}

inline SegmentResponse decode_segment_response(std::string_view body, int width, int height) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(body);
    } catch (const nlohmann::json::parse_error& e) {
        throw BackendError(BackendCategory::Protocol, std::string("response is not valid JSON: ") + e.what());
    }
    if (!j.is_object() || !j.contains("mask_b64") || !j["mask_b64"].is_string())
        throw BackendError(BackendCategory::Protocol, "response lacks a string 'mask_b64'");
    const std::string raw = base64_decode(j["mask_b64"].get<std::string>());
    const std::size_t n = static_cast<std::size_t>(width) * static_cast<std::size_t>(height);
    if (raw.size() != n)
        throw BackendError(BackendCategory::Protocol, "mask holds " + std::to_string(raw.size()) + " bytes, expected " +
                                                          std::to_string(n));
    SegmentResponse r;
    r.mask = Mask2D(width, height);
    for (std::size_t i = 0; i < n; ++i)
        r.mask.bits[i] = raw[i] != 0 ? 1 : 0;
    if (j.contains("confidence")) {
        if (!j["confidence"].is_number())
            throw BackendError(BackendCategory::Protocol, "'confidence' is not a number");
        r.confidence = std::clamp(j["confidence"].get<double>(), 0.0, 1.0);
    }
    return r;
}

// ---------------------------------------------------------------------------
// Remote
// ---------------------------------------------------------------------------

struct RemoteConfig {
    std::string endpoint = "http://127.0.0.1:8080"; // scheme://host:port
    int retries = 2;                                // extra attempts after the first
    int backoff_ms = 100;                           // doubled per retry
    int connect_timeout_ms = 2000;
    int read_timeout_ms = 30000;
};

class RemoteBackend : public SegmenterBackend {
public:
    explicit RemoteBackend(RemoteConfig cfg) : cfg_(std::move(cfg)) {}

    SegmentResponse run(const SegmentRequest& req) override {
        const std::string body = encode_segment_request(req);
        const std::string reply = post_with_retry("/v1/segment", body);
        return decode_segment_response(reply, req.image.width, req.image.height);
    }

    std::string name() const override { return "remote(" + cfg_.endpoint + ")"; }

    /// Returns the model name reported by GET /v1/health.
    std::string health() {
        auto cli = client();
        auto res = cli.Get("/v1/health");
        if (!res)
            throw transport_error(res.error());
        if (res->status != 200)
            throw BackendError(BackendCategory::Server, "health returned HTTP " + std::to_string(res->status));
        try {
            const auto j = nlohmann::json::parse(res->body);
            if (j.value("status", "") != "ok")
                throw BackendError(BackendCategory::Protocol, "health status is not ok");
            return j.value("model", "");
        } catch (const nlohmann::json::exception& e) {
            throw BackendError(BackendCategory::Protocol, std::string("health body: ") + e.what());
        }
    }

private:
    httplib::Client client() const {
        httplib::Client cli(cfg_.endpoint);
        cli.set_connection_timeout(std::chrono::milliseconds(cfg_.connect_timeout_ms));
        cli.set_read_timeout(std::chrono::milliseconds(cfg_.read_timeout_ms));
        cli.set_write_timeout(std::chrono::milliseconds(cfg_.read_timeout_ms));
        return cli;
    }

    static BackendError transport_error(httplib::Error e) {
        switch (e) {
        case httplib::Error::Connection:
        case httplib::Error::BindIPAddress:
        case httplib::Error::ProxyConnection:
            return {BackendCategory::Connect, httplib::to_string(e)};
        case httplib::Error::ConnectionTimeout:
        case httplib::Error::Read:
        case httplib::Error::Write:
            return {BackendCategory::Timeout, httplib::to_string(e)};
        default:
            return {BackendCategory::Protocol, httplib::to_string(e)};
        }
    }

    static std::string error_text(const std::string& body) {
        try {
            const auto j = nlohmann::json::parse(body);
            if (j.is_object() && j.contains("error") && j["error"].is_string())
                return j["error"].get<std::string>();
        } catch (const nlohmann::json::exception&) {
        }
        return body.substr(0, 200);
    }

    // The same body is sent on every attempt; protocol errors are not retried.
    std::string post_with_retry(const std::string& path, const std::string& body) const {
        int delay = cfg_.backoff_ms;
        for (int attempt = 0;; ++attempt) {
            auto cli = client();
            auto res = cli.Post(path, body, "application/json");
            std::optional<BackendError> err;
            if (!res) {
                err = transport_error(res.error());
            } else if (res->status >= 500) {
                err = BackendError(BackendCategory::Server,
                                   "HTTP " + std::to_string(res->status) + ": " + error_text(res->body));
            } else if (res->status != 200) {
                throw BackendError(BackendCategory::Protocol,
                                   "HTTP " + std::to_string(res->status) + ": " + error_text(res->body));
            } else {
                return res->body;
            }
            if (err->category() == BackendCategory::Protocol || attempt >= cfg_.retries)
                throw *err;
            std::this_thread::sleep_for(std::chrono::milliseconds(delay));
            delay *= 2;
        }
    }

    RemoteConfig cfg_;
};

} // namespace pssam
