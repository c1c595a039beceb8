#include "nnprobe/stats.hpp"

#include <algorithm>
#include <cmath>

#include "nnprobe/error.hpp"

namespace nnprobe::stats {

Moments moments(std::span<const double> values) {
  if (values.empty()) throw InvalidArgument("empty input");
  Moments m;
  m.count = static_cast<double>(values.size());
  auto [lo, hi] = std::minmax_element(values.begin(), values.end());
  m.min = *lo;
  m.max = *hi;
  for (double v : values) m.sum += v;
  m.mean = m.sum / m.count;
  if (m.min == m.max) {
    // Constant data: exact zero spread, independent of rounding in the mean.
    m.mean = m.min;
    return m;
  }
  // Two-pass central moments.
  double m2 = 0, m3 = 0;
  for (double v : values) {
    const double d = v - m.mean;
    m2 += d * d;
    m3 += d * d * d;
  }
  m2 /= m.count;
  m3 /= m.count;
  m.variance = m2;
  m.skew = m2 > 0 ? m3 / std::pow(m2, 1.5) : 0.0;
  return m;
}

double mean(std::span<const double> values) { return moments(values).mean; }
double variance(std::span<const double> values) { return moments(values).variance; }
double skew(std::span<const double> values) { return moments(values).skew; }

}  // namespace nnprobe::stats
