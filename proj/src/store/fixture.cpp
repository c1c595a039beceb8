#include "nnprobe/fixture.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>

#include "nnprobe/error.hpp"
#include "nnprobe/rng.hpp"

namespace nnprobe::store {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::vector<int> parse_int_list(const std::string& s) {
  std::vector<int> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, '-')) out.push_back(std::stoi(item));
  return out;
}

std::vector<double> parse_double_list(const std::string& s) {
  std::vector<double> out;
  std::stringstream ss(s);
  std::string item;
  // '-' separates entries, so negative variances are not expressible (and not meaningful).
  while (std::getline(ss, item, '-')) out.push_back(std::stod(item));
  return out;
}

// Row-major matrix helper used by the forward passes.
struct Matrix {
  std::int64_t rows = 0, cols = 0;
  std::vector<double> v;
  Matrix() = default;
  Matrix(std::int64_t r, std::int64_t c) : rows(r), cols(c), v(static_cast<std::size_t>(r * c), 0.0) {}
  double& operator()(std::int64_t r, std::int64_t c) { return v[static_cast<std::size_t>(r * cols + c)]; }
  double operator()(std::int64_t r, std::int64_t c) const { return v[static_cast<std::size_t>(r * cols + c)]; }
};

Matrix affine(const Matrix& in, const Matrix& w, const std::vector<double>& b) {
  Matrix out(in.rows, w.cols);
  for (std::int64_t i = 0; i < in.rows; ++i)
    for (std::int64_t j = 0; j < w.cols; ++j) {
      double acc = b[static_cast<std::size_t>(j)];
      for (std::int64_t k = 0; k < in.cols; ++k) acc += in(i, k) * w(k, j);
      out(i, j) = acc;
    }
  return out;
}

double apply_activation(const std::string& fn, double x) {
  if (fn == "relu") return std::max(0.0, x);
  if (fn == "tanh") return std::tanh(x);
  if (fn == "sigmoid") return 1.0 / (1.0 + std::exp(-x));
  return x;  // linear
}

void activate(Matrix& m, const std::string& fn) {
  if (fn == "softmax") {
    for (std::int64_t i = 0; i < m.rows; ++i) {
      double mx = m(i, 0);
      for (std::int64_t j = 1; j < m.cols; ++j) mx = std::max(mx, m(i, j));
      double sum = 0;
      for (std::int64_t j = 0; j < m.cols; ++j) sum += (m(i, j) = std::exp(m(i, j) - mx));
      for (std::int64_t j = 0; j < m.cols; ++j) m(i, j) /= sum;
    }
    return;
  }
  for (auto& x : m.v) x = apply_activation(fn, x);
}

double round_f32(double x) { return static_cast<double>(static_cast<float>(x)); }

double population_variance(const std::vector<double>& v) {
  double mean = 0;
  for (double x : v) mean += x;
  mean /= static_cast<double>(v.size());
  double m2 = 0;
  for (double x : v) m2 += (x - mean) * (x - mean);
  return m2 / static_cast<double>(v.size());
}

// Rescales `values` about their mean to the target population variance,
// measured after f32 rounding (the stored representation).
void force_variance(std::vector<double>& values, double target) {
  for (int iter = 0; iter < 4; ++iter) {
    double mean = 0;
    for (double x : values) mean += x;
    mean /= static_cast<double>(values.size());
    const double var = population_variance(values);
    if (var <= 0) return;
    const double scale = std::sqrt(target / var);
    for (double& x : values) x = round_f32(mean + (x - mean) * scale);
    if (std::abs(population_variance(values) - target) < 1e-9 * target) return;
  }
}

std::string timestamp(int hours_after_base) {
  char buf[32];
  const int day = 1 + hours_after_base / 24;
  const int hour = hours_after_base % 24;
  std::snprintf(buf, sizeof buf, "2024-03-%02dT%02d:00:00Z", day, hour);
  return buf;
}

struct Dense {
  Matrix kernel;
  std::vector<double> bias;
};

Dense init_dense(Rng& rng, std::int64_t in, std::int64_t out, double bias_shift = 0.0) {
  Dense d{Matrix(in, out), std::vector<double>(static_cast<std::size_t>(out))};
  const double scale = 1.0 / std::sqrt(static_cast<double>(in));
  for (auto& x : d.kernel.v) x = rng.normal(0.0, scale);
  for (auto& x : d.bias) x = bias_shift + rng.normal(0.0, 0.05);
  return d;
}

// Weights at `epoch`: kernels grow in magnitude over training, plus drift.
Dense at_epoch(const Dense& d0, int epoch, Rng& drift) {
  Dense d = d0;
  const double growth = 1.0 + 0.35 * epoch;
  for (auto& x : d.kernel.v) x = round_f32(x * growth + (epoch ? drift.normal(0.0, 0.02) : 0.0));
  for (auto& x : d.bias) x = round_f32(x + 0.01 * epoch);
  return d;
}

// Everything needed to emit one layer of one checkpoint.
struct LayerData {
  std::string name;
  Shape act_shape;  // without batch
  std::vector<double> activations;
  std::optional<Tensor> kernel;
  std::optional<Tensor> bias;
};

Tensor make_tensor(DType dtype, Shape shape, std::vector<double> values) {
  for (auto& x : values)
    if (dtype == DType::f32) x = round_f32(x);
  return Tensor{dtype, std::move(shape), std::move(values)};
}

Tensor dense_kernel_tensor(const Dense& d) { return make_tensor(DType::f32, {d.kernel.rows, d.kernel.cols}, d.kernel.v); }
Tensor dense_bias_tensor(const Dense& d) {
  return make_tensor(DType::f32, {static_cast<std::int64_t>(d.bias.size())}, d.bias);
}

std::vector<double> class_means(const std::vector<double>& act, std::int64_t per_sample,
                                const std::vector<std::int64_t>& labels, int num_classes) {
  std::vector<double> sums(static_cast<std::size_t>(num_classes * per_sample), 0.0);
  std::vector<std::int64_t> counts(static_cast<std::size_t>(num_classes), 0);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const auto c = labels[i];
    ++counts[static_cast<std::size_t>(c)];
    for (std::int64_t j = 0; j < per_sample; ++j)
      sums[static_cast<std::size_t>(c * per_sample + j)] +=
          round_f32(act[static_cast<std::size_t>(static_cast<std::int64_t>(i) * per_sample + j)]);
  }
  for (int c = 0; c < num_classes; ++c)
    for (std::int64_t j = 0; j < per_sample; ++j)
      if (counts[static_cast<std::size_t>(c)])
        sums[static_cast<std::size_t>(c * per_sample + j)] /= static_cast<double>(counts[static_cast<std::size_t>(c)]);
  return sums;
}

LayerDesc input_layer(const Shape& shape) { return LayerDesc{"input", "input", "InputLayer", shape, {}, {}}; }

LayerDesc dense_layer(const std::string& name, std::int64_t in, std::int64_t out, const std::string& act) {
  LayerDesc l{name, name, "Dense", {out}, {}, {}};
  l.inner_ops = {
      {"kernel", OpKind::variable_kernel, {{"shape", Shape{in, out}}, {"initializer", "glorot_normal"}}},
      {"bias", OpKind::variable_bias, {{"shape", Shape{out}}, {"initializer", "zeros"}}},
      {"matmul", OpKind::matmul, {{"input_shape", Shape{in}}, {"output_shape", Shape{out}}}},
      {"add", OpKind::add, json::object()},
      {"activation", OpKind::activation, {{"activation", act}}},
  };
  l.inner_edges = {{"kernel", "matmul"}, {"matmul", "add"}, {"bias", "add"}, {"add", "activation"}};
  return l;
}

LayerDesc conv_layer(const std::string& name, std::int64_t side, std::int64_t channels) {
  LayerDesc l{name, name, "Conv2D", {side, side, channels}, {}, {}};
  l.inner_ops = {
      {"kernel", OpKind::variable_kernel, {{"shape", Shape{3, 3, 1, channels}}, {"initializer", "glorot_normal"}}},
      {"bias", OpKind::variable_bias, {{"shape", Shape{channels}}, {"initializer", "zeros"}}},
      {"conv", OpKind::conv, {{"filter_shape", Shape{3, 3}}, {"strides", Shape{1, 1}}, {"padding", "valid"}}},
      {"add", OpKind::add, json::object()},
      {"activation", OpKind::activation, {{"activation", "relu"}}},
  };
  l.inner_edges = {{"kernel", "conv"}, {"conv", "add"}, {"bias", "add"}, {"add", "activation"}};
  return l;
}

struct Sample {
  Shape x_shape;  // without batch
  std::vector<double> x;
  std::vector<std::int64_t> labels;
};

Sample make_samples(const FixtureSpec& spec, std::int64_t input_width, bool image, std::uint64_t seed) {
  Rng rng(seed ^ 0x5A5A5A5A5A5A5A5AULL);
  Sample s;
  s.labels.resize(static_cast<std::size_t>(spec.num_samples));
  const std::int64_t width = image ? 36 : input_width;
  s.x_shape = image ? Shape{6, 6, 1} : Shape{input_width};
  std::vector<double> centers(static_cast<std::size_t>(spec.num_classes * width));
  for (auto& c : centers) c = rng.normal(0.0, 1.5);
  s.x.resize(static_cast<std::size_t>(spec.num_samples * width));
  for (int i = 0; i < spec.num_samples; ++i) {
    const int c = i % spec.num_classes;
    s.labels[static_cast<std::size_t>(i)] = c;
    for (std::int64_t d = 0; d < width; ++d) {
      double v = centers[static_cast<std::size_t>(c * width + d)] + rng.normal();
      if (spec.kind == FixtureKind::vae) v = 1.0 / (1.0 + std::exp(-v));
      s.x[static_cast<std::size_t>(i * width + d)] = round_f32(v);
    }
  }
  return s;
}

Matrix as_matrix(const std::vector<double>& v, std::int64_t rows) {
  Matrix m(rows, static_cast<std::int64_t>(v.size()) / rows);
  m.v = v;
  return m;
}

// One model's static description plus its per-epoch forward pass.
struct ModelBuild {
  ArchitectureGraph graph;
  std::vector<std::vector<LayerData>> epochs;  // per checkpoint
  std::vector<std::vector<double>> predictions;
  Shape prediction_shape;
  std::uint64_t params = 0;
};

ModelBuild build_classifier(const FixtureSpec& spec, int model_index, const Sample& samples, std::uint64_t seed) {
  Rng init(seed);
  Rng drift(seed ^ 0xD1F7ULL);
  ModelBuild mb;
  const std::int64_t n = spec.num_samples;
  const bool conv = spec.conv_channels > 0;

  std::vector<std::int64_t> widths;
  for (std::size_t i = 1; i < spec.layer_sizes.size(); ++i) {
    std::int64_t w = spec.layer_sizes[i];
    const bool is_output = i + 1 == spec.layer_sizes.size();
    if (!is_output) w += 2 * model_index;  // later models widen their hidden layers
    widths.push_back(w);
  }
  if (widths.empty() || widths.back() != spec.num_classes)
    throw InvalidArgument("classifier fixture: last layer size must equal the class count");

  mb.graph.layers.push_back(input_layer(samples.x_shape));
  std::string prev = "input";
  std::optional<Dense> conv_w;
  std::int64_t flat_width = samples.x_shape.back();
  const std::int64_t ch = spec.conv_channels;
  if (conv) {
    Dense c{Matrix(9, ch), std::vector<double>(static_cast<std::size_t>(ch))};
    for (auto& x : c.kernel.v) x = init.normal(0.0, 1.0 / 3.0);
    for (auto& x : c.bias) x = init.normal(0.0, 0.05);
    conv_w = c;
    mb.graph.layers.push_back(conv_layer("conv_1", 4, ch));
    mb.graph.edges.emplace_back(prev, "conv_1");
    LayerDesc flatten{"flatten", "flatten", "Flatten", {16 * ch}, {{"reshape", OpKind::reshape, {{"target_shape", Shape{16 * ch}}}}}, {}};
    mb.graph.layers.push_back(flatten);
    mb.graph.edges.emplace_back("conv_1", "flatten");
    prev = "flatten";
    flat_width = 16 * ch;
    mb.params += static_cast<std::uint64_t>(9 * ch + ch);
  }

  std::vector<Dense> dense;
  std::int64_t in = flat_width;
  for (std::size_t i = 0; i < widths.size(); ++i) {
    const auto name = "dense_" + std::to_string(i + 1);
    const bool is_output = i + 1 == widths.size();
    dense.push_back(init_dense(init, in, widths[i]));
    mb.graph.layers.push_back(dense_layer(name, in, widths[i], is_output ? "softmax" : "relu"));
    mb.graph.edges.emplace_back(prev, name);
    mb.params += static_cast<std::uint64_t>(in * widths[i] + widths[i]);
    prev = name;
    in = widths[i];
  }

  for (int e = 0; e < spec.num_checkpoints; ++e) {
    std::vector<LayerData> layers;
    Matrix h;
    if (conv) {
      Dense c = at_epoch(*conv_w, e, drift);
      std::vector<double> out(static_cast<std::size_t>(n * 16 * ch));
      for (std::int64_t s = 0; s < n; ++s)
        for (int r = 0; r < 4; ++r)
          for (int q = 0; q < 4; ++q)
            for (std::int64_t k = 0; k < ch; ++k) {
              double acc = c.bias[static_cast<std::size_t>(k)];
              for (int dr = 0; dr < 3; ++dr)
                for (int dq = 0; dq < 3; ++dq)
                  acc += samples.x[static_cast<std::size_t>(s * 36 + (r + dr) * 6 + (q + dq))] * c.kernel(dr * 3 + dq, k);
              out[static_cast<std::size_t>(((s * 4 + r) * 4 + q) * ch + k)] = std::max(0.0, acc);
            }
      LayerData cl{"conv_1", {4, 4, ch}, out, make_tensor(DType::f32, {3, 3, 1, ch}, c.kernel.v), dense_bias_tensor(c)};
      layers.push_back(cl);
      layers.push_back(LayerData{"flatten", {16 * ch}, out, std::nullopt, std::nullopt});
      h = as_matrix(out, n);
    } else {
      h = as_matrix(samples.x, n);
    }
    for (std::size_t i = 0; i < dense.size(); ++i) {
      Dense d = at_epoch(dense[i], e, drift);
      const bool is_output = i + 1 == dense.size();
      h = affine(h, d.kernel, d.bias);
      activate(h, is_output ? "softmax" : "relu");
      layers.push_back(LayerData{"dense_" + std::to_string(i + 1), {h.cols}, h.v, dense_kernel_tensor(d), dense_bias_tensor(d)});
    }
    mb.predictions.push_back(h.v);
    mb.prediction_shape = {n, h.cols};
    mb.epochs.push_back(std::move(layers));
  }
  return mb;
}

ModelBuild build_vae(const FixtureSpec& spec, int model_index, const Sample& samples, std::uint64_t seed) {
  if (spec.layer_sizes.size() < 2) throw InvalidArgument("vae fixture needs layer sizes <input>-<hidden>");
  Rng init(seed);
  Rng drift(seed ^ 0xD1F7ULL);
  Rng noise(seed ^ 0xE95ULL);
  ModelBuild mb;
  const std::int64_t n = spec.num_samples;
  const std::int64_t in = spec.layer_sizes[0];
  const std::int64_t hidden = spec.layer_sizes[1] + 2 * model_index;
  const std::int64_t latent = spec.latent_dim;
  const bool defect = spec.defect_layer && model_index == 0;
  const auto act_of = [&](const std::string& layer, const std::string& normal) {
    return defect && *spec.defect_layer == layer ? std::string("relu") : normal;
  };

  Dense enc = init_dense(init, in, hidden);
  Dense zm = init_dense(init, hidden, latent);
  Dense zv = init_dense(init, hidden, latent, -1.0);
  Dense dec = init_dense(init, latent, hidden);
  Dense out = init_dense(init, hidden, in);
  std::vector<double> eps(static_cast<std::size_t>(n * latent));
  for (auto& x : eps) x = noise.normal();

  auto& g = mb.graph;
  g.layers.push_back(input_layer({in}));
  g.layers.push_back(dense_layer("enc_1", in, hidden, act_of("enc_1", "tanh")));
  g.layers.push_back(dense_layer("z_mean", hidden, latent, act_of("z_mean", "linear")));
  g.layers.push_back(dense_layer("z_log_var", hidden, latent, act_of("z_log_var", "linear")));
  LayerDesc z{"z", "z", "Sampling", {latent}, {}, {}};
  z.inner_ops = {{"mean_in", OpKind::custom, {{"role", "z_mean"}}},
                 {"log_var_in", OpKind::custom, {{"role", "z_log_var"}}},
                 {"sample", OpKind::custom, {{"formula", "z_mean + exp(0.5 * z_log_var) * eps"}}}};
  z.inner_edges = {{"mean_in", "sample"}, {"log_var_in", "sample"}};
  g.layers.push_back(z);
  g.layers.push_back(dense_layer("dec_1", latent, hidden, act_of("dec_1", "tanh")));
  g.layers.push_back(dense_layer("dec_out", hidden, in, act_of("dec_out", "sigmoid")));
  g.edges = {{"input", "enc_1"}, {"enc_1", "z_mean"}, {"enc_1", "z_log_var"}, {"z_mean", "z"},
             {"z_log_var", "z"}, {"z", "dec_1"},      {"dec_1", "dec_out"}};
  mb.params = static_cast<std::uint64_t>((in * hidden + hidden) + 2 * (hidden * latent + latent) +
                                         (latent * hidden + hidden) + (hidden * in + in));

  for (int e = 0; e < spec.num_checkpoints; ++e) {
    std::vector<LayerData> layers;
    Dense enc_e = at_epoch(enc, e, drift), zm_e = at_epoch(zm, e, drift), zv_e = at_epoch(zv, e, drift),
          dec_e = at_epoch(dec, e, drift), out_e = at_epoch(out, e, drift);
    Matrix h = affine(as_matrix(samples.x, n), enc_e.kernel, enc_e.bias);
    activate(h, act_of("enc_1", "tanh"));
    layers.push_back({"enc_1", {hidden}, h.v, dense_kernel_tensor(enc_e), dense_bias_tensor(enc_e)});
    Matrix mean = affine(h, zm_e.kernel, zm_e.bias);
    activate(mean, act_of("z_mean", "linear"));
    layers.push_back({"z_mean", {latent}, mean.v, dense_kernel_tensor(zm_e), dense_bias_tensor(zm_e)});
    Matrix logv = affine(h, zv_e.kernel, zv_e.bias);
    activate(logv, act_of("z_log_var", "linear"));
    layers.push_back({"z_log_var", {latent}, logv.v, dense_kernel_tensor(zv_e), dense_bias_tensor(zv_e)});
    Matrix zz(n, latent);
    for (std::size_t i = 0; i < zz.v.size(); ++i) zz.v[i] = mean.v[i] + std::exp(0.5 * logv.v[i]) * eps[i];
    if (static_cast<std::size_t>(model_index) < spec.latent_variances.size())
      force_variance(zz.v, spec.latent_variances[static_cast<std::size_t>(model_index)]);
    layers.push_back({"z", {latent}, zz.v, std::nullopt, std::nullopt});
    Matrix d = affine(zz, dec_e.kernel, dec_e.bias);
    activate(d, act_of("dec_1", "tanh"));
    layers.push_back({"dec_1", {hidden}, d.v, dense_kernel_tensor(dec_e), dense_bias_tensor(dec_e)});
    Matrix o = affine(d, out_e.kernel, out_e.bias);
    activate(o, act_of("dec_out", "sigmoid"));
    layers.push_back({"dec_out", {in}, o.v, dense_kernel_tensor(out_e), dense_bias_tensor(out_e)});
    mb.predictions.push_back(o.v);
    mb.prediction_shape = {n, in};
    mb.epochs.push_back(std::move(layers));
  }
  return mb;
}

std::string blob_name(const std::string& logical_path) {
  std::string s = logical_path;
  std::replace(s.begin(), s.end(), '/', '.');
  return "tensors/" + s + ".bin";
}

void emit_tensor(CheckpointBundle& bundle, const fs::path& dir, const std::string& logical, const Tensor& t) {
  const auto blob = dir / blob_name(logical);
  write_tensor(t, blob);
  bundle.tensors.emplace(logical, TensorRef{t.dtype, t.shape, blob});
}

}  // namespace

FixtureSpec parse_fixture_spec(const std::string& text) {
  FixtureSpec s;
  if (text == "uc1") {
    s.kind = FixtureKind::classifier;
    s.num_models = 3;
    s.layer_sizes = {36, 16, 8, 3};
    s.conv_channels = 4;
    s.num_checkpoints = 4;
    s.num_samples = 60;
    s.num_classes = 3;
    s.id_prefix = "clf";
    return s;
  }
  if (text == "uc2" || text == "uc3") {
    s.kind = FixtureKind::vae;
    s.layer_sizes = {16, 8};
    s.latent_dim = 4;
    s.num_checkpoints = 3;
    s.num_samples = 60;
    s.num_classes = 3;
    s.id_prefix = "vae";
    if (text == "uc2") {
      s.num_models = 2;
      s.latent_variances = {2.02, 12.38};
    } else {
      s.num_models = 3;
      s.defect_layer = "z_log_var";
    }
    return s;
  }
  auto colon = text.find(':');
  const auto kind = text.substr(0, colon);
  if (kind == "classifier") {
    s.kind = FixtureKind::classifier;
  } else if (kind == "vae") {
    s.kind = FixtureKind::vae;
    s.layer_sizes = {16, 8};
  } else {
    throw InvalidArgument("unknown fixture kind: " + kind);
  }
  if (colon == std::string::npos) return s;
  std::stringstream ss(text.substr(colon + 1));
  std::string kv;
  try {
    while (std::getline(ss, kv, ',')) {
      auto eq = kv.find('=');
      if (eq == std::string::npos) throw InvalidArgument("fixture option without value: " + kv);
      const auto key = kv.substr(0, eq), value = kv.substr(eq + 1);
      if (key == "models") s.num_models = std::stoi(value);
      else if (key == "layers") s.layer_sizes = parse_int_list(value);
      else if (key == "checkpoints") s.num_checkpoints = std::stoi(value);
      else if (key == "samples") s.num_samples = std::stoi(value);
      else if (key == "classes") s.num_classes = std::stoi(value);
      else if (key == "conv") s.conv_channels = std::stoi(value);
      else if (key == "latent") s.latent_dim = std::stoi(value);
      else if (key == "defect") s.defect_layer = value;
      else if (key == "variances") s.latent_variances = parse_double_list(value);
      else if (key == "prefix") s.id_prefix = value;
      else throw InvalidArgument("unknown fixture option: " + key);
    }
  } catch (const std::logic_error& e) {
    if (dynamic_cast<const InvalidArgument*>(&e) == nullptr)
      throw InvalidArgument("bad fixture spec '" + text + "': " + e.what());
    throw;
  }
  return s;
}

CatalogPtr generate_fixture(const FixtureSpec& spec, std::uint64_t seed, const fs::path& out) {
  if (spec.num_models < 0 || spec.num_checkpoints < 1 || spec.num_samples < 1 || spec.num_classes < 1)
    throw InvalidArgument("fixture spec: counts must be positive");
  std::error_code ec;
  fs::create_directories(out, ec);
  if (ec || !fs::is_directory(out)) throw Error("fixture output directory not writable: " + out.string());

  std::vector<std::string> class_labels;
  for (int c = 0; c < spec.num_classes; ++c) class_labels.push_back("class_" + std::to_string(c));

  const bool image = spec.kind == FixtureKind::classifier && spec.conv_channels > 0;
  const std::int64_t input_width = spec.layer_sizes.empty() ? 1 : spec.layer_sizes.front();
  const Sample samples = make_samples(spec, input_width, image, seed);
  const std::string prefix = spec.id_prefix.empty() ? (spec.kind == FixtureKind::vae ? "vae" : "m") : spec.id_prefix;

  std::vector<ModelRecord> records;
  for (int mi = 0; mi < spec.num_models; ++mi) {
    const std::uint64_t model_seed = seed * 0x9E3779B97F4A7C15ULL + static_cast<std::uint64_t>(mi + 1);
    ModelBuild mb = spec.kind == FixtureKind::classifier ? build_classifier(spec, mi, samples, model_seed)
                                                         : build_vae(spec, mi, samples, model_seed);
    ModelRecord rec;
    rec.header.id = prefix + std::to_string(mi + 1);
    rec.header.name = (spec.kind == FixtureKind::vae ? "vae " : "classifier ") + std::to_string(mi + 1);
    if (mi >= 1) rec.header.parents.push_back(prefix + std::to_string(mi));
    if (mi >= 2) rec.header.parents.push_back(prefix + std::to_string(mi - 1));
    rec.header.created_at = timestamp(mi);
    rec.num_trainable_params = mb.params;
    rec.save_size_bytes = mb.params * 4;
    rec.runtime_ms_per_sample = std::round((0.02 + 1e-5 * static_cast<double>(mb.params)) * 1e6) / 1e6;

    const fs::path model_dir = out / rec.header.id;
    fs::remove_all(model_dir);
    write_document(model_dir / kGraphFile, json(mb.graph));

    const int trained = spec.num_checkpoints - 1;
    for (int e = 1; e <= trained; ++e) {
      const double t = static_cast<double>(e);
      const double rate = 0.3 + 0.05 * mi;
      if (spec.kind == FixtureKind::vae) {
        rec.metrics["reconstruction_loss"].push_back(round_f32(0.7 * std::exp(-rate * t) + 0.15));
        rec.metrics["kl_loss"].push_back(round_f32(0.1 + 0.2 * (1.0 - std::exp(-rate * t))));
        rec.metrics["loss"].push_back(rec.metrics["reconstruction_loss"].back() + rec.metrics["kl_loss"].back());
      } else {
        rec.metrics["loss"].push_back(round_f32(1.2 * std::exp(-rate * t) + 0.1));
        rec.metrics["accuracy"].push_back(round_f32(1.0 - 0.6 * std::exp(-rate * t)));
        rec.metrics["val_loss"].push_back(round_f32(1.3 * std::exp(-rate * t) + 0.15));
      }
    }

    for (int e = 0; e < spec.num_checkpoints; ++e) {
      const std::string rel = "checkpoints/" + std::to_string(e);
      const fs::path dir = model_dir / rel;
      CheckpointBundle bundle;
      bundle.epoch = e;
      const std::int64_t n = spec.num_samples;
      Shape x_shape{n};
      x_shape.insert(x_shape.end(), samples.x_shape.begin(), samples.x_shape.end());
      emit_tensor(bundle, dir, paths::kSamplesX, make_tensor(DType::f32, x_shape, samples.x));
      std::vector<double> labels(samples.labels.begin(), samples.labels.end());
      emit_tensor(bundle, dir, paths::kSamplesLabel, make_tensor(DType::i64, {n}, labels));
      emit_tensor(bundle, dir, paths::kSamplesPrediction,
                  make_tensor(DType::f32, mb.prediction_shape, mb.predictions[static_cast<std::size_t>(e)]));
      for (const auto& layer : mb.epochs[static_cast<std::size_t>(e)]) {
        Shape act_shape{n};
        act_shape.insert(act_shape.end(), layer.act_shape.begin(), layer.act_shape.end());
        emit_tensor(bundle, dir, paths::activations(layer.name), make_tensor(DType::f32, act_shape, layer.activations));
        const auto per_sample = element_count(layer.act_shape);
        Shape mca_shape{spec.num_classes};
        mca_shape.insert(mca_shape.end(), layer.act_shape.begin(), layer.act_shape.end());
        emit_tensor(bundle, dir, paths::mean_class_activations(layer.name),
                    make_tensor(DType::f32, mca_shape,
                                class_means(layer.activations, per_sample, samples.labels, spec.num_classes)));
        if (layer.kernel) emit_tensor(bundle, dir, paths::kernel(layer.name), *layer.kernel);
        if (layer.bias) emit_tensor(bundle, dir, paths::bias(layer.name), *layer.bias);
      }
      write_document(dir / kManifestFile, manifest_document(bundle, dir));
      rec.checkpoints.push_back({e, rel});
    }
    records.push_back(std::move(rec));
  }
  write_document(out / kDatabaseFile, database_document(class_labels, records));
  return load_catalog(out);
}

}  // namespace nnprobe::store
