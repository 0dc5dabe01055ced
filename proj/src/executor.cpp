#include "infershare/executor.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>
#include <set>
#include <sstream>

#include "infershare/kernels.hpp"

namespace infershare {

Tensor Tensor::zeros(TensorShape s) {
  Tensor t;
  t.shape = std::move(s);
  t.values.assign(static_cast<size_t>(t.shape.fixed_element_count()), 0.0);
  return t;
}

uint64_t fnv1a64(const std::string& s) {
  uint64_t h = 1469598103934665603ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

uint64_t mix64(uint64_t a, uint64_t b) {
  // splitmix64 finalizer over the pair
  uint64_t z = a + 0x9e3779b97f4a7c15ull + b;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

namespace {

double next_uniform_centered(std::mt19937_64& rng) {
  // 53-bit mantissa in [0,1), shifted to [-0.5, 0.5)
  return static_cast<double>(rng() >> 11) * (1.0 / 9007199254740992.0) - 0.5;
}

Tensor random_tensor(TensorShape shape, std::mt19937_64& rng) {
  Tensor t = Tensor::zeros(std::move(shape));
  for (auto& v : t.values) v = next_uniform_centered(rng);
  return t;
}

}  // namespace

int64_t WeightStore::total_bytes() const {
  int64_t bytes = 0;
  for (const auto& [name, ts] : tensors)
    for (const auto& t : ts) bytes += 4 * t.size();
  return bytes;
}

WeightStore generate_weights(const ModelManifest& m) {
  WeightStore store;
  store.generated_from = m.weight_seed;
  for (const auto& layer : m.layers) {
    if (layer.kind == LayerKind::Dense) {
      std::mt19937_64 rng(mix64(m.weight_seed, fnv1a64(layer.name)));
      std::vector<Tensor> ts;
      ts.push_back(random_tensor(TensorShape{{layer.param("out"), layer.param("in")}}, rng));
      ts.push_back(random_tensor(TensorShape{{layer.param("out")}}, rng));
      store.tensors[layer.name] = std::move(ts);
    } else if (layer.kind == LayerKind::Conv2d) {
      std::mt19937_64 rng(mix64(m.weight_seed, fnv1a64(layer.name)));
      std::vector<Tensor> ts;
      ts.push_back(random_tensor(
          TensorShape{{layer.param("cout"), layer.param("cin"), layer.param("kh"), layer.param("kw")}},
          rng));
      ts.push_back(random_tensor(TensorShape{{layer.param("cout")}}, rng));
      store.tensors[layer.name] = std::move(ts);
    }
  }
  return store;
}

namespace {

void check_input_shapes(const LayerSpec& layer, const std::vector<Tensor>& inputs) {
  std::vector<TensorShape> shapes;
  shapes.reserve(inputs.size());
  for (const auto& t : inputs) {
    if (t.shape.batch_variable())
      throw Error(Errc::ShapeMismatch, "tensor fed to '" + layer.name + "' has unresolved batch");
    if (t.size() != t.shape.fixed_element_count())
      throw Error(Errc::ShapeMismatch, "tensor value count does not match its shape");
    shapes.push_back(t.shape);
  }
  // Raises ShapeMismatch when the inputs violate the kind's rule.
  infer_output_shape(layer, shapes);
}

const std::vector<Tensor>& layer_weights(const LayerSpec& layer, const WeightStore& weights) {
  auto it = weights.tensors.find(layer.name);
  if (it == weights.tensors.end() || it->second.size() != 2)
    throw Error(Errc::ShapeMismatch, "no weights for layer '" + layer.name + "'");
  return it->second;
}

void check_finite(const LayerSpec& layer, const Tensor& t) {
  for (double v : t.values)
    if (!std::isfinite(v))
      throw Error(Errc::NonFiniteOutput, "layer '" + layer.name + "' produced a non-finite value");
  if (layer.kind == LayerKind::Softmax) {
    for (double v : t.values)
      if (v < 0.0 || v > 1.0)
        throw Error(Errc::NonFiniteOutput, "softmax output outside [0,1]");
  }
}

}  // namespace

Tensor execute_layer(const LayerSpec& layer, const std::vector<Tensor>& inputs,
                     const WeightStore& weights, const ExecOptions& opts) {
  check_input_shapes(layer, inputs);
  const Tensor& x = inputs[0];
  int64_t batch = x.shape.dims[0];
  std::vector<TensorShape> in_shapes;
  for (const auto& t : inputs) in_shapes.push_back(t.shape);
  Tensor out = Tensor::zeros(infer_output_shape(layer, in_shapes));

  const bool serial = opts.mode == KernelMode::Serial;
  uint64_t* ops = serial ? opts.op_counter : nullptr;

  switch (layer.kind) {
    case LayerKind::Dense: {
      const auto& wt = layer_weights(layer, weights);
      int64_t in_dim = layer.param("in"), out_dim = layer.param("out");
      if (serial)
        kernels::dense_serial(x.values.data(), wt[0].values.data(), wt[1].values.data(),
                              out.values.data(), batch, in_dim, out_dim, ops);
      else
        kernels::dense_parallel(x.values.data(), wt[0].values.data(), wt[1].values.data(),
                                out.values.data(), batch, in_dim, out_dim);
      break;
    }
    case LayerKind::Conv2d: {
      const auto& wt = layer_weights(layer, weights);
      const auto& d = x.shape.dims;
      const auto& od = out.shape.dims;
      int64_t stride = layer.param_or("stride", 1), pad = layer.param_or("pad", 0);
      if (serial)
        kernels::conv2d_serial(x.values.data(), wt[0].values.data(), wt[1].values.data(),
                               out.values.data(), batch, d[1], d[2], d[3], od[1], layer.param("kh"),
                               layer.param("kw"), stride, pad, od[2], od[3], ops);
      else
        kernels::conv2d_parallel(x.values.data(), wt[0].values.data(), wt[1].values.data(),
                                 out.values.data(), batch, d[1], d[2], d[3], od[1],
                                 layer.param("kh"), layer.param("kw"), stride, pad, od[2], od[3]);
      break;
    }
    case LayerKind::Relu:
      if (serial)
        kernels::relu_serial(x.values.data(), out.values.data(), x.size(), ops);
      else
        kernels::relu_parallel(x.values.data(), out.values.data(), x.size());
      break;
    case LayerKind::Add:
      if (serial)
        kernels::add_serial(x.values.data(), inputs[1].values.data(), out.values.data(), x.size(),
                            ops);
      else
        kernels::add_parallel(x.values.data(), inputs[1].values.data(), out.values.data(),
                              x.size());
      break;
    case LayerKind::Maxpool2d: {
      const auto& d = x.shape.dims;
      const auto& od = out.shape.dims;
      int64_t stride = layer.param_or("stride", 1), pad = layer.param_or("pad", 0);
      if (serial)
        kernels::maxpool2d_serial(x.values.data(), out.values.data(), batch, d[1], d[2], d[3],
                                  layer.param("kh"), layer.param("kw"), stride, pad, od[2], od[3],
                                  ops);
      else
        kernels::maxpool2d_parallel(x.values.data(), out.values.data(), batch, d[1], d[2], d[3],
                                    layer.param("kh"), layer.param("kw"), stride, pad, od[2],
                                    od[3]);
      break;
    }
    case LayerKind::GlobalAvgPool: {
      const auto& d = x.shape.dims;
      if (serial)
        kernels::gap_serial(x.values.data(), out.values.data(), batch, d[1], d[2], d[3], ops);
      else
        kernels::gap_parallel(x.values.data(), out.values.data(), batch, d[1], d[2], d[3]);
      break;
    }
    case LayerKind::Flatten:
      out.values = x.values;  // reshape only
      break;
    case LayerKind::Softmax: {
      int64_t d = x.shape.dims[1];
      if (serial)
        kernels::softmax_serial(x.values.data(), out.values.data(), batch, d, ops);
      else
        kernels::softmax_parallel(x.values.data(), out.values.data(), batch, d);
      break;
    }
  }
  check_finite(layer, out);
  return out;
}

Tensor execute_model(const ModelManifest& m, const WeightStore& weights, const Tensor& input,
                     const ExecOptions& opts) {
  // Input must match the declared shape, with a concrete batch.
  if (input.shape.rank() != m.input_shape.rank())
    throw Error(Errc::ShapeMismatch, "input rank " + std::to_string(input.shape.rank()) +
                                         " != declared " + std::to_string(m.input_shape.rank()));
  for (int i = 1; i < input.shape.rank(); ++i)
    if (input.shape.dims[i] != m.input_shape.dims[i])
      throw Error(Errc::ShapeMismatch, "input " + input.shape.to_string() + " != declared " +
                                           m.input_shape.to_string());
  if (!m.input_shape.batch_variable() && input.shape.dims[0] != m.input_shape.dims[0])
    throw Error(Errc::ShapeMismatch, "fixed batch mismatch");
  if (m.layers.empty())
    return input;

  std::map<std::string, Tensor> produced;
  const LayerSpec* sink = &m.layers.back();
  std::set<std::string> referenced;
  for (const auto& layer : m.layers)
    for (const auto& ref : layer.input_refs) referenced.insert(ref);
  for (const auto& layer : m.layers)
    if (!referenced.count(layer.name)) sink = &layer;

  Tensor result;
  for (const auto& layer : m.layers) {
    std::vector<Tensor> inputs;
    for (const auto& ref : layer.input_refs) {
      if (ref == kModelInputRef)
        inputs.push_back(input);
      else
        inputs.push_back(produced.at(ref));
    }
    Tensor out = execute_layer(layer, inputs, weights, opts);
    if (&layer == sink) result = out;
    produced[layer.name] = std::move(out);
  }
  return result;
}

Tensor read_tensor_csv(const std::string& path, const TensorShape& per_batch_shape) {
  std::ifstream in(path);
  if (!in) throw Error(Errc::IoError, "cannot open " + path);
  std::vector<std::vector<double>> rows;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<double> row;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) row.push_back(std::stod(cell));
    rows.push_back(std::move(row));
  }
  if (rows.empty()) throw Error(Errc::IoError, "no rows in " + path);
  int64_t per_row = per_batch_shape.per_batch_elements();
  Tensor t = Tensor::zeros(per_batch_shape.with_batch(static_cast<int64_t>(rows.size())));
  for (size_t r = 0; r < rows.size(); ++r) {
    if (static_cast<int64_t>(rows[r].size()) != per_row)
      throw Error(Errc::ShapeMismatch, "csv row " + std::to_string(r) + " has " +
                                           std::to_string(rows[r].size()) + " values, expected " +
                                           std::to_string(per_row));
    std::copy(rows[r].begin(), rows[r].end(), t.values.begin() + r * per_row);
  }
  return t;
}

void write_tensor_csv(const std::string& path, const Tensor& t) {
  std::ofstream out(path);
  if (!out) throw Error(Errc::IoError, "cannot open " + path + " for writing");
  int64_t per_row = t.shape.per_batch_elements();
  out.precision(17);
  for (int64_t b = 0; b < t.shape.dims[0]; ++b) {
    for (int64_t i = 0; i < per_row; ++i) {
      if (i) out << ',';
      out << t.values[b * per_row + i];
    }
    out << '\n';
  }
}

}  // namespace infershare
