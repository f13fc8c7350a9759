#pragma once

#include "pssam/geometry.hpp"
#include "pssam/random.hpp"

#include <arpa/inet.h>
#include <netinet/in.h>
#include <sys/socket.h>
#include <unistd.h>

#include <filesystem>
#include <string>

namespace pssam::test {

inline Mask2D random_mask(Rng& rng, int w, int h, double density) {
    Mask2D m(w, h);
    for (auto& b : m.bits)
        b = uniform01(rng) < density ? 1 : 0;
    return m;
}

inline Image2D random_image(Rng& rng, int w, int h) {
    Image2D img(w, h);
    for (double& v : img.pixels)
        v = uniform01(rng);
    return img;
}

inline BBox random_box(Rng& rng, int w, int h) {
    const int x0 = uniform_int(rng, 0, w - 1), y0 = uniform_int(rng, 0, h - 1);
    return {x0, y0, uniform_int(rng, x0 + 1, w), uniform_int(rng, y0 + 1, h)};
}

inline Mask2D filled_box(const BBox& b, int w, int h) { return box_mask(b, w, h); }

/// Fresh empty directory under the system temp dir.
inline std::filesystem::path temp_dir(const std::string& name) {
    const auto p = std::filesystem::temp_directory_path() / ("pssam_test_" + name);
    std::filesystem::remove_all(p);
    std::filesystem::create_directories(p);
    return p;
}

/// A loopback port with nothing listening on it (bound, read back, released).
inline int closed_port() {
    const int fd = ::socket(AF_INET, SOCK_STREAM, 0);
    sockaddr_in addr{};
    addr.sin_family = AF_INET;
    addr.sin_addr.s_addr = htonl(INADDR_LOOPBACK);
    ::bind(fd, reinterpret_cast<sockaddr*>(&addr), sizeof addr);
    socklen_t len = sizeof addr;
    ::getsockname(fd, reinterpret_cast<sockaddr*>(&addr), &len);
    ::close(fd);
    return ntohs(addr.sin_port);
}

} // namespace pssam::test
