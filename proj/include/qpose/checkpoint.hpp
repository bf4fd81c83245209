#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>

#include "qpose/ca_model.hpp"

namespace qpose {

// QPC1: magic "QPC1", u32 length, a text block describing the model
// dimensions and every sub-graph (layers, edges, extents, quantizers with
// hex-float scales, taps), then one record per parameter tensor in layer
// order. Weights of quantized convs are QPW1 records, everything else QPT1.

std::string describe_topology(const CaModel& m);

void write_checkpoint(std::ostream& os, const CaModel& m);
CaModel read_checkpoint(std::istream& is);

void save_checkpoint(const std::filesystem::path& path, const CaModel& m);
CaModel load_checkpoint(const std::filesystem::path& path);

}  // namespace qpose
