#pragma once

#include <span>
#include <vector>

#include "ctap/core.hpp"
#include "ctap/data_io.hpp"
#include "ctap/error.hpp"
#include "ctap/nn.hpp"

namespace ctap {

/// Rows [start, start + count) as an f64 matrix.
inline nn::Matrix slice_rows(const FeatureSequence& seq, std::size_t start, std::size_t count) {
  if (start + count > seq.n_units) throw Error(ErrorKind::InvalidArgument, "row slice out of range");
  nn::Matrix out(count, seq.d_f);
  for (std::size_t r = 0; r < count; ++r) {
    const auto src = seq.row(start + r);
    auto dst = out.row(r);
    for (std::size_t c = 0; c < seq.d_f; ++c) dst[c] = src[c];
  }
  return out;
}

inline nn::Matrix gather_rows(const FeatureSequence& seq, std::span<const std::size_t> units) {
  nn::Matrix out(units.size(), seq.d_f);
  for (std::size_t r = 0; r < units.size(); ++r) {
    if (units[r] >= seq.n_units) throw Error(ErrorKind::InvalidArgument, "unit index out of range");
    const auto src = seq.row(units[r]);
    auto dst = out.row(r);
    for (std::size_t c = 0; c < seq.d_f; ++c) dst[c] = src[c];
  }
  return out;
}

/// Arithmetic mean of the unit features covered by `interval`.
inline std::vector<double> mean_pool_feature(const FeatureSequence& seq, const Interval& interval) {
  if (static_cast<std::size_t>(interval.end()) > seq.n_units) {
    throw Error(ErrorKind::InvalidArgument, "interval beyond end of " + seq.video_id);
  }
  std::vector<double> sum(seq.d_f, 0.0);
  for (auto u = interval.start(); u < interval.end(); ++u) {
    const auto row = seq.row(static_cast<std::size_t>(u));
    for (std::size_t c = 0; c < seq.d_f; ++c) sum[c] += row[c];
  }
  const auto n = static_cast<double>(interval.length());
  for (auto& v : sum) v /= n;
  return sum;
}

}  // namespace ctap
