#pragma once

#include <span>

#include "qpnet/net.hpp"

namespace qpnet::reference {

// Straight-line, single-threaded forward pass written directly from the
// layer equations, one sample and one output channel at a time. Shares no
// code with the row kernels; kept as an oracle for tests and as the serial
// baseline in the benchmarks.
template <typename T>
Tensor<T> forward(const ModelParams<T>& p, std::span<const T> input, const Tensor<T>& cond, const DilationPlan& plan);

}  // namespace qpnet::reference
