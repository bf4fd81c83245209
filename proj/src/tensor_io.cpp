#include "qpose/tensor_io.hpp"

#include <array>
#include <bit>
#include <cstring>
#include <fstream>
#include <istream>
#include <limits>
#include <ostream>

#include "qpose/error.hpp"

namespace qpose {
namespace io {

void write_u32(std::ostream& os, std::uint32_t v) {
    std::array<char, 4> b{};
    for (int i = 0; i < 4; ++i) b[static_cast<std::size_t>(i)] = static_cast<char>((v >> (8 * i)) & 0xFFu);
    os.write(b.data(), 4);
}

std::uint32_t read_u32(std::istream& is) {
    std::array<unsigned char, 4> b{};
    if (!is.read(reinterpret_cast<char*>(b.data()), 4)) throw FormatError("unexpected end of file reading u32");
    std::uint32_t v = 0;
    for (int i = 3; i >= 0; --i) v = (v << 8) | b[static_cast<std::size_t>(i)];
    return v;
}

void write_f64(std::ostream& os, double v) {
    const auto bits = std::bit_cast<std::uint64_t>(v);
    std::array<char, 8> b{};
    for (int i = 0; i < 8; ++i) b[static_cast<std::size_t>(i)] = static_cast<char>((bits >> (8 * i)) & 0xFFu);
    os.write(b.data(), 8);
}

double read_f64(std::istream& is) {
    std::array<unsigned char, 8> b{};
    if (!is.read(reinterpret_cast<char*>(b.data()), 8)) throw FormatError("unexpected end of file reading f64");
    std::uint64_t bits = 0;
    for (int i = 7; i >= 0; --i) bits = (bits << 8) | b[static_cast<std::size_t>(i)];
    return std::bit_cast<double>(bits);
}

void write_magic(std::ostream& os, const char (&magic)[5]) { os.write(magic, 4); }

void expect_magic(std::istream& is, const char (&magic)[5]) {
    std::array<char, 4> b{};
    if (!is.read(b.data(), 4) || std::memcmp(b.data(), magic, 4) != 0) {
        throw FormatError(std::string("bad magic, expected ") + magic);
    }
}

}  // namespace io

void write_qpt(std::ostream& os, const Tensor& t) {
    io::write_magic(os, "QPT1");
    for (std::size_t e : t.dims().as_array()) {
        if (e > std::numeric_limits<std::uint32_t>::max()) throw FormatError("QPT1: extent exceeds u32");
        io::write_u32(os, static_cast<std::uint32_t>(e));
    }
    for (double v : t.data()) io::write_f64(os, v);
}

Tensor read_qpt(std::istream& is) {
    io::expect_magic(is, "QPT1");
    Dims d;
    d.n = io::read_u32(is);
    d.c = io::read_u32(is);
    d.h = io::read_u32(is);
    d.w = io::read_u32(is);
    std::vector<double> data(d.numel());
    for (double& v : data) v = io::read_f64(is);
    try {
        return Tensor(d, std::move(data));
    } catch (const NumericError& e) {
        throw FormatError(std::string("QPT1: ") + e.what());
    }
}

void save_qpt(const std::filesystem::path& path, const Tensor& t) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw FormatError("cannot open " + path.string() + " for writing");
    write_qpt(os, t);
    if (!os) throw FormatError("write failed: " + path.string());
}

Tensor load_qpt(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw FormatError("cannot open " + path.string());
    return read_qpt(is);
}

}  // namespace qpose
