#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <numbers>
#include <set>

#include "nnprobe/error.hpp"
#include "nnprobe/fixture.hpp"
#include "nnprobe/interest.hpp"
#include "nnprobe/rng.hpp"
#include "oracles.hpp"
#include "support.hpp"

using namespace nnprobe;
using namespace nnprobe::interest;

namespace {

double brute_skew(const std::vector<double>& v) {
  long double mean = 0;
  for (double x : v) mean += x;
  mean /= static_cast<long double>(v.size());
  long double m2 = 0, m3 = 0;
  for (double x : v) {
    m2 += (x - mean) * (x - mean);
    m3 += (x - mean) * (x - mean) * (x - mean);
  }
  m2 /= static_cast<long double>(v.size());
  m3 /= static_cast<long double>(v.size());
  return static_cast<double>(m3 / std::pow(m2, 1.5L));
}

// Jensen-Shannon divergence between 64-bin histograms over the combined range.
double oracle_js(const std::vector<double>& t, const std::vector<double>& b, int bins = 64) {
  double lo = INFINITY, hi = -INFINITY;
  for (double x : t) lo = std::min(lo, x), hi = std::max(hi, x);
  for (double x : b) lo = std::min(lo, x), hi = std::max(hi, x);
  if (lo == hi) {
    lo -= 0.5;
    hi += 0.5;
  }
  auto hist = [&](const std::vector<double>& v) {
    std::vector<double> h(static_cast<std::size_t>(bins), 0.0);
    for (double x : v) {
      auto i = static_cast<int>(std::floor((x - lo) / (hi - lo) * bins));
      h[static_cast<std::size_t>(std::clamp(i, 0, bins - 1))] += 1.0 / static_cast<double>(v.size());
    }
    return h;
  };
  const auto p = hist(t), q = hist(b);
  double js = 0;
  for (int i = 0; i < bins; ++i) {
    const double m = 0.5 * (p[static_cast<std::size_t>(i)] + q[static_cast<std::size_t>(i)]);
    if (p[static_cast<std::size_t>(i)] > 0) js += 0.5 * p[static_cast<std::size_t>(i)] * std::log(p[static_cast<std::size_t>(i)] / m);
    if (q[static_cast<std::size_t>(i)] > 0) js += 0.5 * q[static_cast<std::size_t>(i)] * std::log(q[static_cast<std::size_t>(i)] / m);
  }
  return js;
}

std::string oracle_color(double s) {
  s = std::clamp(s, 0.0, 1.0);
  const int lo[3] = {0x3B, 0x4C, 0xC0}, hi[3] = {0xB4, 0x04, 0x26};
  char buf[8];
  int c[3];
  for (int i = 0; i < 3; ++i) c[i] = static_cast<int>(std::floor(lo[i] + (hi[i] - lo[i]) * s + 0.5));
  std::snprintf(buf, sizeof buf, "#%02X%02X%02X", c[0], c[1], c[2]);
  return buf;
}

// Two values +-s per sample row give population variance s^2.
std::vector<double> with_variance(double v, int rows) {
  std::vector<double> out;
  for (int r = 0; r < rows; ++r) out.push_back((r % 2 ? 1 : -1) * std::sqrt(v));
  return out;
}

testing::LogWriter variance_log(const std::vector<std::pair<std::string, std::vector<std::pair<std::string, double>>>>& models) {
  testing::LogWriter w;
  for (const auto& [id, layers] : models) {
    auto& m = w.add(id, w.models.empty() ? std::vector<std::string>{} : std::vector<std::string>{w.models.front().record.header.id});
    for (const auto& [name, var] : layers) {
      m.graph.layers.push_back(testing::layer(name, "Dense", {1}));
      m.checkpoints[0].emplace(store::paths::activations(name), testing::f32({4, 1}, with_variance(var, 4)));
    }
  }
  return w;
}

}  // namespace

TEST_CASE("descriptors of a symmetric sequence") {
  const std::vector<double> v{1, 2, 3, 4};
  const auto d = compute_descriptors(v);
  CHECK(d.variance == 1.25);
  CHECK(d.min == 1);
  CHECK(d.max == 4);
  CHECK(d.skew == 0);
}

TEST_CASE("descriptors of constant data") {
  const std::vector<double> v{5, 5, 5};
  const auto d = compute_descriptors(v);
  CHECK(d.variance == 0);
  CHECK(d.skew == 0);
}

TEST_CASE("descriptors reject empty input") {
  CHECK_THROWS_AS(compute_descriptors(std::span<const double>()), InvalidArgument);
  CHECK_THROWS_AS(divergence_from_baseline(std::span<const double>(), {}), InvalidArgument);
}

TEST_CASE("rectified normal draws are strongly skewed") {
  Rng rng(42);
  std::vector<double> v(10000);
  for (auto& x : v) x = std::max(0.0, rng.normal());
  const double want = brute_skew(v);
  CHECK(want > 0.9);
  CHECK(compute_descriptors(v).skew == doctest::Approx(want).epsilon(1e-12));
}

TEST_CASE("divergence against its own draws is near zero") {
  const auto draws = baseline_draws({BaselineKind::standard_normal, {}}, std::vector<double>{0.0});
  REQUIRE(draws.size() == kBaselineDraws);
  const double d = divergence_from_baseline(draws, {BaselineKind::standard_normal, {}});
  CHECK(d < 0.01);
  CHECK(d >= 0);
}

TEST_CASE("divergence of a shifted normal is large") {
  Rng rng(9);
  std::vector<double> t(10000);
  for (auto& x : t) x = rng.normal() + 10;
  const auto baseline = baseline_draws({BaselineKind::standard_normal, {}}, t);
  const double want = oracle_js(t, baseline);
  CHECK(want > 0.6);
  const double got = divergence_from_baseline(t, {BaselineKind::standard_normal, {}});
  CHECK(got == doctest::Approx(want).epsilon(1e-9));
  CHECK(got > 0.6);
  CHECK(got <= std::numbers::ln2 + 1e-15);
}

TEST_CASE("divergence stays within [0, ln 2] and matches the histogram oracle") {
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    Rng rng(seed);
    std::vector<double> t(static_cast<std::size_t>(1 + seed * 37 % 500)), u(static_cast<std::size_t>(1 + seed * 53 % 700));
    for (auto& x : t) x = rng.normal(rng.uniform(-3, 3), rng.uniform(0.1, 3));
    for (auto& x : u) x = rng.uniform(-4, 4);
    for (auto kind : {BaselineKind::standard_normal, BaselineKind::fitted_normal, BaselineKind::uniform}) {
      const double d = divergence_from_baseline(t, {kind, {}});
      CHECK(d >= 0);
      CHECK(d <= std::numbers::ln2);
    }
    const double custom = divergence_from_baseline(t, {BaselineKind::custom_samples, u});
    CHECK(custom == doctest::Approx(oracle_js(t, u)).epsilon(1e-9));
    // symmetry
    const double back = divergence_from_baseline(u, {BaselineKind::custom_samples, t});
    CHECK(std::abs(custom - back) <= 1e-9);
  }
}

TEST_CASE("custom baseline must be non-empty") {
  const std::vector<double> t{1, 2};
  CHECK_THROWS_AS(divergence_from_baseline(t, {BaselineKind::custom_samples, {}}), InvalidArgument);
}

TEST_CASE("colorize endpoints and midpoint") {
  CHECK(colorize(0) == "#3B4CC0");
  CHECK(colorize(1) == "#B40426");
  CHECK(colorize(0.5) == oracle_color(0.5));
  CHECK(colorize(0.5) == "#782873");
  CHECK(colorize(-2) == "#3B4CC0");
  CHECK(colorize(7) == "#B40426");
  for (int i = 0; i <= 100; ++i) CHECK(colorize(i / 100.0) == oracle_color(i / 100.0));
}

TEST_CASE("latent variances normalize to {0, 1}") {
  testing::TempDir dir;
  const auto cat = store::generate_fixture(store::parse_fixture_spec("uc2"), 7, dir.path());
  ScoreOptions opt;
  opt.measure = {MeasureKind::variance, std::nullopt};
  opt.scope = {UoaPath::parse("model:vae1/layer:z"), UoaPath::parse("model:vae2/layer:z")};
  const auto r = score_and_propagate(*cat, opt);
  REQUIRE(r.groups.size() == 1);
  const auto& g = r.groups.front();
  CHECK(g.variable_type == VariableType::activations);
  CHECK(g.raw.at("model:vae1/layer:z/variable:activations") == doctest::Approx(2.02).epsilon(1e-6 / 2.02));
  CHECK(std::abs(g.raw.at("model:vae1/layer:z/variable:activations") - 2.02) <= 1e-6);
  CHECK(std::abs(g.raw.at("model:vae2/layer:z/variable:activations") - 12.38) <= 1e-6);
  CHECK(g.normalized.at("model:vae1/layer:z/variable:activations") == 0.0);
  CHECK(g.normalized.at("model:vae2/layer:z/variable:activations") == 1.0);
}

TEST_CASE("single UoA in a group normalizes to 0") {
  testing::TempDir dir;
  const auto cat = variance_log({{"M", {{"a", 3.0}}}}).load(dir.path());
  ScoreOptions opt;
  const auto r = score_and_propagate(*cat, opt);
  CHECK(r.groups.front().normalized.at("model:M/layer:a/variable:activations") == 0.0);
  CHECK(r.score_of("model:M") == 0.0);
}

TEST_CASE("parents take the max of their children") {
  testing::TempDir dir;
  const auto cat =
      variance_log({{"M", {{"a", 0.0}, {"b", 0.2}, {"c", 0.9}}}, {"N", {{"d", 1.0}}}}).load(dir.path());
  const auto r = score_and_propagate(*cat, {});
  CHECK(*r.score_of("model:M/layer:b/variable:activations") == doctest::Approx(0.2).epsilon(1e-6));
  CHECK(*r.score_of("model:M") == doctest::Approx(0.9).epsilon(1e-6));
  CHECK(*r.score_of("model:M") == *r.score_of("model:M/layer:c"));
  CHECK(*r.score_of("model:N") == 1.0);
  CHECK(*r.score_of("experiment:M") == 1.0);
}

TEST_CASE("skew localizes the rectified latent layer") {
  testing::TempDir dir;
  const auto cat = store::generate_fixture(store::parse_fixture_spec("uc3"), 7, dir.path());
  ScoreOptions opt;
  opt.measure = {MeasureKind::skew, std::nullopt};
  opt.variable_type = VariableType::activations;
  const auto r = score_and_propagate(*cat, opt);
  REQUIRE(r.groups.size() == 1);
  std::string best;
  double best_score = -1;
  for (const auto& [uoa, s] : r.groups.front().normalized)
    if (s > best_score) best = uoa, best_score = s;
  CHECK(best == "model:vae1/layer:z_log_var/variable:activations");
  CHECK(best_score == 1.0);
  CHECK(*r.score_of("model:vae1") == 1.0);
  CHECK(*r.score_of("experiment:vae1") == 1.0);
  const auto j = to_json(r);
  CHECK(j["colors"]["model:vae1"] == "#B40426");
}

TEST_CASE("scoring errors") {
  testing::TempDir dir;
  const auto cat = store::generate_fixture(store::parse_fixture_spec("uc2"), 7, dir.path());
  ScoreOptions opt;
  opt.variable_type = VariableType::conv_kernel;
  CHECK_THROWS_WITH_AS(score_and_propagate(*cat, opt), "no data-bearing UoAs in scope", InvalidArgument);
  ScoreOptions late;
  late.epoch = 99;
  CHECK_THROWS_AS(score_and_propagate(*cat, late), NotFoundError);
  ScoreOptions bad;
  bad.scope = {UoaPath::parse("model:nope")};
  CHECK_THROWS_AS(score_and_propagate(*cat, bad), NotFoundError);
}

TEST_CASE("variable types split kernels and biases") {
  testing::TempDir dir;
  const auto cat = store::generate_fixture(store::parse_fixture_spec("uc1"), 7, dir.path());
  const auto r = score_and_propagate(*cat, {});
  std::set<VariableType> types;
  for (const auto& g : r.groups) types.insert(g.variable_type);
  CHECK(types == std::set<VariableType>{VariableType::activations, VariableType::dense_kernel, VariableType::dense_bias,
                                        VariableType::conv_kernel, VariableType::conv_bias});
  for (const auto& g : r.groups) {
    for (const auto& [uoa, s] : g.normalized) {
      CHECK(s >= 0);
      CHECK(s <= 1);
    }
  }
}

TEST_CASE("measure documents") {
  const auto m = parse_measure(nlohmann::json{{"kind", "baseline_divergence"}, {"baseline", {{"kind", "uniform"}}}});
  CHECK(m.kind == MeasureKind::baseline_divergence);
  CHECK(m.baseline->kind == BaselineKind::uniform);
  CHECK(parse_measure(to_json(m)).baseline->kind == BaselineKind::uniform);
  CHECK_THROWS_AS(parse_measure(nlohmann::json{{"kind", "kurtosis"}}), InvalidArgument);
  CHECK(parse_variable_type("dense-kernel") == VariableType::dense_kernel);
  CHECK(to_string(VariableType::conv_bias) == "conv-bias");
}

TEST_CASE("descriptors match brute force") {
  const auto r = oracles::descriptor_suite(150);
  INFO(r.first_failure);
  CHECK(r.failures == 0);
}
