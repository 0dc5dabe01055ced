#pragma once

// CPU interpreter for the layer catalogue. Correct and slow on purpose: this
// is the functional oracle behind the cpu-reference device kind and the
// instrumentation path that ties flop accounting to real arithmetic.

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "infershare/manifest.hpp"

namespace infershare {

struct Tensor {
  TensorShape shape;           // fully fixed, batch resolved
  std::vector<double> values;  // row-major

  static Tensor zeros(TensorShape s);
  int64_t size() const { return static_cast<int64_t>(values.size()); }
  double& at(int64_t i) { return values[i]; }
  double at(int64_t i) const { return values[i]; }
};

// Weights are never shipped; they are regenerated from the manifest's
// weight_seed. Each parameter is a pure function of (seed, layer name,
// parameter index): stream = mt19937_64(mix64(seed, fnv1a64(name))), value =
// 53-bit uniform in [0,1) minus 0.5. Iteration-order independent and
// bit-identical across platforms.
struct WeightStore {
  uint64_t generated_from = 0;
  // dense: {W[out][in], bias[out]}; conv2d: {W[cout][cin][kh][kw], bias[cout]}
  std::map<std::string, std::vector<Tensor>> tensors;

  int64_t total_bytes() const;  // 4-byte/element accounting
  bool has(const std::string& layer) const { return tensors.count(layer) > 0; }
};

WeightStore generate_weights(const ModelManifest& m);

uint64_t fnv1a64(const std::string& s);
uint64_t mix64(uint64_t a, uint64_t b);

enum class KernelMode { Serial, Parallel };

struct ExecOptions {
  KernelMode mode = KernelMode::Parallel;
  // When set, accumulates the costed arithmetic op count (Serial mode only).
  uint64_t* op_counter = nullptr;
};

// Applies one layer. Output shape equals layer.output_shape with the batch
// resolved from the inputs. Throws ShapeMismatch on bad inputs and
// NonFiniteOutput if any produced value is not finite.
Tensor execute_layer(const LayerSpec& layer, const std::vector<Tensor>& inputs,
                     const WeightStore& weights, const ExecOptions& opts = {});

// Topological execution of the whole DAG; returns the sink layer's tensor.
Tensor execute_model(const ModelManifest& m, const WeightStore& weights, const Tensor& input,
                     const ExecOptions& opts = {});

// CSV tensor io for desk testing: one row per batch element.
Tensor read_tensor_csv(const std::string& path, const TensorShape& per_batch_shape);
void write_tensor_csv(const std::string& path, const Tensor& t);

}  // namespace infershare
