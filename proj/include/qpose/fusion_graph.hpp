#pragma once

#include "qpose/graph.hpp"

namespace qpose {

/// Replaces every quantized conv [-> bn [-> relu]] chain with a single fused
/// layer and lets a fused layer requantize its output directly into the next
/// layer's activation codes when all of its consumers are fused layers sharing
/// one input quantizer. Float layers are left untouched.
///
/// Throws GraphError for a batchnorm that does not directly follow a conv, or
/// one that follows a quantized conv it cannot be folded into.
NetGraph fuse_graph(const NetGraph& g);

}  // namespace qpose
