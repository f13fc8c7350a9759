#pragma once

#include <stdexcept>
#include <string>

namespace pssam {

// All library failures derive from Error so callers (the CLI in particular)
// can map them onto exit codes by kind.
enum class ErrorKind {
    PointOutOfBounds,
    DegenerateBox,
    NonFiniteUpdate,
    DimensionMismatch,
    EmptyMask,
    EmptyPrototype,
    Backend,
    Format,
    MissingFile,
    Io,
    Config,
};

inline const char* to_string(ErrorKind k) {
    switch (k) {
    case ErrorKind::PointOutOfBounds: return "point_out_of_bounds";
    case ErrorKind::DegenerateBox: return "degenerate_box";
    case ErrorKind::NonFiniteUpdate: return "non_finite_update";
    case ErrorKind::DimensionMismatch: return "dimension_mismatch";
    case ErrorKind::EmptyMask: return "empty_mask";
    case ErrorKind::EmptyPrototype: return "empty_prototype";
    case ErrorKind::Backend: return "backend";
    case ErrorKind::Format: return "format";
    case ErrorKind::MissingFile: return "missing_file";
    case ErrorKind::Io: return "io";
    case ErrorKind::Config: return "config";
    }
    return "unknown";
}

class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
    ErrorKind kind() const noexcept { return kind_; }

private:
    ErrorKind kind_;
};

class PointOutOfBounds : public Error {
public:
    explicit PointOutOfBounds(const std::string& w) : Error(ErrorKind::PointOutOfBounds, w) {}
};

class DegenerateBox : public Error {
public:
    explicit DegenerateBox(const std::string& w) : Error(ErrorKind::DegenerateBox, w) {}
};

class NonFiniteUpdate : public Error {
public:
    explicit NonFiniteUpdate(const std::string& w) : Error(ErrorKind::NonFiniteUpdate, w) {}
};

class DimensionMismatch : public Error {
public:
    explicit DimensionMismatch(const std::string& w) : Error(ErrorKind::DimensionMismatch, w) {}
};

class EmptyMask : public Error {
public:
    explicit EmptyMask(const std::string& w) : Error(ErrorKind::EmptyMask, w) {}
};

class EmptyPrototype : public Error {
public:
    explicit EmptyPrototype(const std::string& w) : Error(ErrorKind::EmptyPrototype, w) {}
};

enum class BackendCategory { Connect, Timeout, Protocol, Server };

inline const char* to_string(BackendCategory c) {
    switch (c) {
    case BackendCategory::Connect: return "connect";
    case BackendCategory::Timeout: return "timeout";
    case BackendCategory::Protocol: return "protocol";
    case BackendCategory::Server: return "server";
    }
    return "unknown";
}

class BackendError : public Error {
public:
    BackendError(BackendCategory category, const std::string& w)
        : Error(ErrorKind::Backend, std::string(to_string(category)) + ": " + w), category_(category) {}
    BackendCategory category() const noexcept { return category_; }

private:
    BackendCategory category_;
};

enum class FormatKind { Magic, Header, Truncated, Schema };

inline const char* to_string(FormatKind k) {
    switch (k) {
    case FormatKind::Magic: return "magic";
    case FormatKind::Header: return "header";
    case FormatKind::Truncated: return "truncated";
    case FormatKind::Schema: return "schema";
    }
    return "unknown";
}

class FormatError : public Error {
public:
    FormatError(FormatKind fk, const std::string& w)
        : Error(ErrorKind::Format, std::string(to_string(fk)) + ": " + w), format_kind_(fk) {}
    FormatKind format_kind() const noexcept { return format_kind_; }

private:
    FormatKind format_kind_;
};

class MissingFile : public Error {
public:
    explicit MissingFile(const std::string& path) : Error(ErrorKind::MissingFile, "missing file: " + path) {}
};

class IoError : public Error {
public:
    explicit IoError(const std::string& w) : Error(ErrorKind::Io, w) {}
};

class ConfigError : public Error {
public:
    explicit ConfigError(const std::string& w) : Error(ErrorKind::Config, w) {}
};

} // namespace pssam
