#pragma once

#include <span>

namespace nnprobe::stats {

/// Population moments in double precision. Variance divides by N; skew is
/// the Fisher-Pearson coefficient g1 = m3 / m2^(3/2), defined as 0 when the
/// data is constant.
struct Moments {
  double count = 0;
  double mean = 0;
  double variance = 0;
  double skew = 0;
  double min = 0;
  double max = 0;
  double sum = 0;
};

/// Throws InvalidArgument on empty input.
Moments moments(std::span<const double> values);

double mean(std::span<const double> values);
double variance(std::span<const double> values);
double skew(std::span<const double> values);

}  // namespace nnprobe::stats
