#pragma once

// Binary trainer checkpoint. All integers and doubles are little-endian;
// doubles are stored bit-exact so save -> load -> save reproduces the bytes.
//
//   magic "PSSAMCKP", u32 version
//   i32 grid, hidden, embed, num_classes, max_batches
//   u64 seed, epochs_done, batches_seen
//   params: w1 b1 w2 b2 (f64, column-major)
//   u8 velocity_initialized, velocity blocks when set
//   u32 batch count; per batch, per class: u32 n, then n entries of
//     embed f64 feature, u32 stem length, stem f64s
//   u64 FNV-1a of everything above

#include "pssam/data.hpp"
#include "pssam/train.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <string>
#include <string_view>

namespace pssam {

inline constexpr char kCheckpointMagic[8] = {'P', 'S', 'S', 'A', 'M', 'C', 'K', 'P'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

namespace detail {

inline std::uint64_t fnv1a(std::string_view s) {
    std::uint64_t h = 1469598103934665603ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    return h;
}

class ByteWriter {
public:
    void u8(std::uint8_t v) { out_.push_back(static_cast<char>(v)); }
    void u32(std::uint32_t v) {
        for (int k = 0; k < 4; ++k)
            out_.push_back(static_cast<char>((v >> (8 * k)) & 0xff));
    }
    void u64(std::uint64_t v) {
        for (int k = 0; k < 8; ++k)
            out_.push_back(static_cast<char>((v >> (8 * k)) & 0xff));
    }
    void i32(std::int32_t v) { u32(static_cast<std::uint32_t>(v)); }
    void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
    void f64s(const double* p, Eigen::Index n) {
        for (Eigen::Index i = 0; i < n; ++i)
            f64(p[i]);
    }
    void raw(std::string_view s) { out_.append(s); }
    std::string& str() { return out_; }

private:
    std::string out_;
};

class ByteReader {
public:
    explicit ByteReader(std::string_view s) : s_(s) {}

    std::uint8_t u8() { return static_cast<std::uint8_t>(take(1)[0]); }
    std::uint32_t u32() {
        const std::string_view b = take(4);
        std::uint32_t v = 0;
        for (int k = 0; k < 4; ++k)
            v |= static_cast<std::uint32_t>(static_cast<unsigned char>(b[k])) << (8 * k);
        return v;
    }
    std::uint64_t u64() {
        const std::string_view b = take(8);
        std::uint64_t v = 0;
        for (int k = 0; k < 8; ++k)
            v |= static_cast<std::uint64_t>(static_cast<unsigned char>(b[k])) << (8 * k);
        return v;
    }
    std::int32_t i32() { return static_cast<std::int32_t>(u32()); }
    double f64() { return std::bit_cast<double>(u64()); }
    void f64s(double* p, Eigen::Index n) {
        if (remaining() / 8 < static_cast<std::size_t>(n))
            throw FormatError(FormatKind::Truncated, "checkpoint ends inside a weight block");
        for (Eigen::Index i = 0; i < n; ++i)
            p[i] = f64();
    }
    std::string_view take(std::size_t n) {
        if (remaining() < n)
            throw FormatError(FormatKind::Truncated, "checkpoint is truncated");
        const std::string_view v = s_.substr(pos_, n);
        pos_ += n;
        return v;
    }
    std::size_t remaining() const { return s_.size() - pos_; }
    std::size_t pos() const { return pos_; }

private:
    std::string_view s_;
    std::size_t pos_ = 0;
};

} // namespace detail

inline std::string serialize_checkpoint(const TrainerState& st) {
    const RefinerDims& d = st.params.dims;
    const PrototypeBuffer& buf = st.buffer;
    detail::ByteWriter w;
    w.raw({kCheckpointMagic, sizeof kCheckpointMagic});
    w.u32(kCheckpointVersion);
    w.i32(d.grid);
    w.i32(d.hidden);
    w.i32(d.embed);
    w.i32(buf.num_classes());
    w.i32(buf.max_batches());
    w.u64(st.seed);
    w.u64(st.epochs_done);
    w.u64(buf.batches_seen());
    st.params.for_each_block([&](const double* p, Eigen::Index n) { w.f64s(p, n); });
    w.u8(st.sgd.initialized ? 1 : 0);
    if (st.sgd.initialized)
        st.sgd.velocity.for_each_block([&](const double* p, Eigen::Index n) { w.f64s(p, n); });
    w.u32(static_cast<std::uint32_t>(buf.batches().size()));
    for (const PrototypeBuffer::Batch& b : buf.batches())
        for (const auto& cls : b) {
            w.u32(static_cast<std::uint32_t>(cls.size()));
            for (const PrototypeBuffer::Entry& e : cls) {
                w.f64s(e.feature.data(), e.feature.size());
                w.u32(static_cast<std::uint32_t>(e.stem.size()));
                w.f64s(e.stem.data(), e.stem.size());
            }
        }
    const std::uint64_t sum = detail::fnv1a(w.str());
    w.u64(sum);
    return std::move(w.str());
}

inline TrainerState deserialize_checkpoint(std::string_view bytes) {
    detail::ByteReader r(bytes);
    if (bytes.size() < sizeof kCheckpointMagic ||
        std::memcmp(bytes.data(), kCheckpointMagic, sizeof kCheckpointMagic) != 0)
        throw FormatError(FormatKind::Magic, "not a refiner checkpoint");
    r.take(sizeof kCheckpointMagic);
    const std::uint32_t version = r.u32();
    if (version != kCheckpointVersion)
        throw FormatError(FormatKind::Header, "unsupported checkpoint version " + std::to_string(version));
    if (bytes.size() < 8 + sizeof kCheckpointMagic)
        throw FormatError(FormatKind::Truncated, "checkpoint is truncated");
    const std::string_view body = bytes.substr(0, bytes.size() - 8);
    detail::ByteReader tail(bytes.substr(bytes.size() - 8));
    if (tail.u64() != detail::fnv1a(body))
        throw FormatError(FormatKind::Truncated, "checkpoint checksum mismatch");

    RefinerDims d;
    d.grid = r.i32();
    d.hidden = r.i32();
    d.embed = r.i32();
    const int classes = r.i32();
    const int max_batches = r.i32();
    if (d.grid < 1 || d.hidden < 1 || d.embed < 1 || d.grid > 4096 || d.hidden > (1 << 20) || d.embed > (1 << 20))
        throw FormatError(FormatKind::Header, "checkpoint dimensions are out of range");
    if (classes < 2 || max_batches < 1)
        throw FormatError(FormatKind::Header, "checkpoint buffer header is invalid");

    TrainerState st;
    st.seed = r.u64();
    st.epochs_done = r.u64();
    const std::uint64_t seen = r.u64();
    if (r.remaining() / 8 < static_cast<std::size_t>(d.hidden) * (d.input() + d.embed + 1))
        throw FormatError(FormatKind::Truncated, "checkpoint ends inside the weights");
    st.params = RefinerParams::zeros(d);
    st.params.for_each_block([&](double* p, Eigen::Index n) { r.f64s(p, n); });
    const std::uint8_t has_velocity = r.u8();
    if (has_velocity > 1)
        throw FormatError(FormatKind::Header, "checkpoint velocity flag is invalid");
    st.sgd.initialized = has_velocity == 1;
    if (st.sgd.initialized) {
        st.sgd.velocity = RefinerParams::zeros(d);
        st.sgd.velocity.for_each_block([&](double* p, Eigen::Index n) { r.f64s(p, n); });
    }

    st.buffer = PrototypeBuffer(classes, d.embed, max_batches);
    const std::uint32_t nb = r.u32();
    if (nb > static_cast<std::uint32_t>(max_batches))
        throw FormatError(FormatKind::Header, "checkpoint holds more batches than its memory");
    std::deque<PrototypeBuffer::Batch> batches;
    for (std::uint32_t b = 0; b < nb; ++b) {
        PrototypeBuffer::Batch batch(static_cast<std::size_t>(classes));
        for (auto& cls : batch) {
            const std::uint32_t n = r.u32();
            if (n > r.remaining() / (8 * static_cast<std::size_t>(d.embed)))
                throw FormatError(FormatKind::Truncated, "checkpoint ends inside the prototype buffer");
            cls.resize(n);
            for (PrototypeBuffer::Entry& e : cls) {
                e.feature = FeatureVector(d.embed);
                r.f64s(e.feature.data(), d.embed);
                const std::uint32_t stem = r.u32();
                if (stem != 0 && stem != static_cast<std::uint32_t>(d.input()))
                    throw FormatError(FormatKind::Header, "buffered stem has the wrong length");
                e.stem = Eigen::VectorXd(stem);
                r.f64s(e.stem.data(), stem);
            }
        }
        batches.push_back(std::move(batch));
    }
    if (r.remaining() != 8)
        throw FormatError(FormatKind::Header, "checkpoint has trailing bytes");
    st.buffer.restore(std::move(batches), seen);
    return st;
}

inline void save_checkpoint(const TrainerState& st, const fs::path& path) {
    write_file(path, serialize_checkpoint(st));
}

inline TrainerState load_checkpoint(const fs::path& path) { return deserialize_checkpoint(read_file(path)); }

} // namespace pssam
