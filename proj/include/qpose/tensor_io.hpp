#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>

#include "qpose/tensor.hpp"

namespace qpose {

// QPT1: magic "QPT1", four little-endian u32 extents (n, c, h, w), then the
// elements as little-endian IEEE-754 binary64.

void write_qpt(std::ostream& os, const Tensor& t);
Tensor read_qpt(std::istream& is);

void save_qpt(const std::filesystem::path& path, const Tensor& t);
Tensor load_qpt(const std::filesystem::path& path);

namespace io {

void write_u32(std::ostream& os, std::uint32_t v);
std::uint32_t read_u32(std::istream& is);
void write_f64(std::ostream& os, double v);
double read_f64(std::istream& is);
void write_magic(std::ostream& os, const char (&magic)[5]);
void expect_magic(std::istream& is, const char (&magic)[5]);

}  // namespace io

}  // namespace qpose
