#pragma once

// Restricted model-description format: a fixed catalogue of layer kinds, no
// user code, no control flow. Costs (flops, weight bytes) are derived from
// the manifest alone, which is what makes latency prediction possible.

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "infershare/errors.hpp"

namespace infershare {

struct TensorShape {
  // dims[0] is the batch axis; kVariableBatch marks it variable ("*").
  // All other axes are fixed and >= 1.
  static constexpr int64_t kVariableBatch = -1;

  std::vector<int64_t> dims;

  bool batch_variable() const { return !dims.empty() && dims[0] == kVariableBatch; }
  int rank() const { return static_cast<int>(dims.size()); }

  // Elements per batch row (product of non-batch dims).
  int64_t per_batch_elements() const;
  // Total elements with the batch axis resolved to `batch`.
  int64_t element_count(int64_t batch) const;
  // Total elements; requires a fully fixed shape.
  int64_t fixed_element_count() const;

  // Returns a copy with the batch axis set to `batch`.
  TensorShape with_batch(int64_t batch) const;

  std::string to_string() const;  // e.g. "*x3x224x224" or "1x1000"
  static TensorShape parse(const std::string& text);

  bool operator==(const TensorShape&) const = default;
};

enum class LayerKind {
  Dense,
  Conv2d,
  Relu,
  Maxpool2d,
  GlobalAvgPool,
  Flatten,
  Add,
  Softmax,
};

// Throws UnknownLayerKind for anything outside the catalogue.
LayerKind parse_layer_kind(const std::string& name);
const char* layer_kind_name(LayerKind kind);

// Sentinel input_ref naming the model input.
inline constexpr const char* kModelInputRef = "@input";

struct LayerSpec {
  std::string name;
  LayerKind kind = LayerKind::Relu;
  std::map<std::string, int64_t> params;
  std::vector<std::string> input_refs;  // layer names or kModelInputRef
  TensorShape output_shape;
  int64_t weight_bytes = 0;

  int64_t param(const std::string& key) const;
  int64_t param_or(const std::string& key, int64_t dflt) const;
};

struct ModelManifest {
  std::string model_name;
  int version = 1;
  TensorShape input_shape;
  std::vector<LayerSpec> layers;  // topologically ordered, single sink
  int64_t total_weight_bytes = 0;
  int64_t declared_footprint_bytes = 0;
  uint64_t weight_seed = 0;

  const LayerSpec* find_layer(const std::string& name) const;
  // Input shapes feeding `layer`, with the declared (possibly variable) batch.
  std::vector<TensorShape> input_shapes_of(const LayerSpec& layer) const;
};

// ---------------------------------------------------------------------------
// Parsing / serialization. The grammar is documented in docs/manifest-format.md
// and round-trips exactly: parse(serialize(m)) == m for every valid m.
// ---------------------------------------------------------------------------

ModelManifest parse_manifest(const std::string& text);
ModelManifest load_manifest_file(const std::string& path);
std::string serialize_manifest(const ModelManifest& m);

// ---------------------------------------------------------------------------
// Validation: re-derives shapes and byte counts and reports inconsistencies
// as findings (data, not failures).
// ---------------------------------------------------------------------------

struct Finding {
  Errc code;
  std::string layer;  // empty for manifest-level findings
  std::string detail;
};

struct ValidationReport {
  std::vector<Finding> findings;
  bool ok() const { return findings.empty(); }
  std::string to_string() const;
};

ValidationReport validate_manifest(const ModelManifest& m);

// ---------------------------------------------------------------------------
// Shape and cost rules.
// ---------------------------------------------------------------------------

// Output shape of `layer` applied to `inputs` (batch axis carried through).
// Throws ShapeMismatch when inputs are inconsistent with the kind's rule.
TensorShape infer_output_shape(const LayerSpec& layer, const std::vector<TensorShape>& inputs);

// Parameter bytes implied by params, 4 bytes per fp32 parameter.
int64_t layer_weight_bytes(const LayerSpec& layer);

// Deterministic flop count at the given batch. Multiply-accumulate counts as
// 2 flops; elementwise kinds cost one per element; pooling costs one per
// window element; flatten is free.
int64_t layer_flops(const LayerSpec& layer, const std::vector<TensorShape>& input_shapes,
                    int64_t batch);

// Sum of layer_flops over the whole manifest; strictly linear in batch.
int64_t model_flops(const ModelManifest& m, int64_t batch);

}  // namespace infershare
