#include "infershare/manifest.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <set>
#include <sstream>

namespace infershare {

namespace {

std::string trim(const std::string& s) {
  size_t a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return "";
  size_t b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : s) {
    if (c == sep) {
      out.push_back(cur);
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  out.push_back(cur);
  return out;
}

int64_t parse_int(const std::string& tok, const std::string& ctx) {
  int64_t v = 0;
  auto [p, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
  if (ec != std::errc() || p != tok.data() + tok.size())
    throw Error(Errc::MalformedDocument, "bad integer '" + tok + "' in " + ctx);
  return v;
}

uint64_t parse_u64(const std::string& tok, const std::string& ctx) {
  uint64_t v = 0;
  auto [p, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
  if (ec != std::errc() || p != tok.data() + tok.size())
    throw Error(Errc::MalformedDocument, "bad unsigned integer '" + tok + "' in " + ctx);
  return v;
}

}  // namespace

// ---------------------------------------------------------------------------
// TensorShape
// ---------------------------------------------------------------------------

int64_t TensorShape::per_batch_elements() const {
  int64_t n = 1;
  for (size_t i = 1; i < dims.size(); ++i) n *= dims[i];
  return dims.empty() ? 0 : n;
}

int64_t TensorShape::element_count(int64_t batch) const {
  if (dims.empty()) return 0;
  int64_t b = batch_variable() ? batch : dims[0];
  return b * per_batch_elements();
}

int64_t TensorShape::fixed_element_count() const {
  if (batch_variable())
    throw Error(Errc::ShapeMismatch, "shape " + to_string() + " has an unresolved batch axis");
  return element_count(dims.empty() ? 0 : dims[0]);
}

TensorShape TensorShape::with_batch(int64_t batch) const {
  TensorShape s = *this;
  if (!s.dims.empty()) s.dims[0] = batch;
  return s;
}

std::string TensorShape::to_string() const {
  std::string out;
  for (size_t i = 0; i < dims.size(); ++i) {
    if (i) out += 'x';
    out += (i == 0 && dims[i] == kVariableBatch) ? "*" : std::to_string(dims[i]);
  }
  return out;
}

TensorShape TensorShape::parse(const std::string& text) {
  TensorShape s;
  if (trim(text).empty()) throw Error(Errc::MalformedDocument, "empty shape");
  for (const std::string& tok : split(trim(text), 'x')) {
    if (tok == "*") {
      if (!s.dims.empty())
        throw Error(Errc::MalformedDocument, "variable axis only allowed at axis 0 in shape '" + text + "'");
      s.dims.push_back(kVariableBatch);
      continue;
    }
    int64_t d = parse_int(tok, "shape '" + text + "'");
    if (d < 1) throw Error(Errc::MalformedDocument, "non-positive dim in shape '" + text + "'");
    s.dims.push_back(d);
  }
  return s;
}

// ---------------------------------------------------------------------------
// Layer kinds
// ---------------------------------------------------------------------------

namespace {
constexpr std::pair<const char*, LayerKind> kKindTable[] = {
    {"dense", LayerKind::Dense},
    {"conv2d", LayerKind::Conv2d},
    {"relu", LayerKind::Relu},
    {"maxpool2d", LayerKind::Maxpool2d},
    {"globalavgpool", LayerKind::GlobalAvgPool},
    {"flatten", LayerKind::Flatten},
    {"add", LayerKind::Add},
    {"softmax", LayerKind::Softmax},
};
}

LayerKind parse_layer_kind(const std::string& name) {
  for (auto& [n, k] : kKindTable)
    if (name == n) return k;
  throw Error(Errc::UnknownLayerKind, "'" + name + "' is not in the supported layer catalogue");
}

const char* layer_kind_name(LayerKind kind) {
  for (auto& [n, k] : kKindTable)
    if (k == kind) return n;
  return "?";
}

int64_t LayerSpec::param(const std::string& key) const {
  auto it = params.find(key);
  if (it == params.end())
    throw Error(Errc::MalformedDocument, "layer '" + name + "' missing param '" + key + "'");
  return it->second;
}

int64_t LayerSpec::param_or(const std::string& key, int64_t dflt) const {
  auto it = params.find(key);
  return it == params.end() ? dflt : it->second;
}

const LayerSpec* ModelManifest::find_layer(const std::string& name) const {
  for (const auto& l : layers)
    if (l.name == name) return &l;
  return nullptr;
}

std::vector<TensorShape> ModelManifest::input_shapes_of(const LayerSpec& layer) const {
  std::vector<TensorShape> shapes;
  for (const auto& ref : layer.input_refs) {
    if (ref == kModelInputRef) {
      shapes.push_back(input_shape);
    } else if (const LayerSpec* src = find_layer(ref)) {
      shapes.push_back(src->output_shape);
    } else {
      throw Error(Errc::MalformedDocument, "layer '" + layer.name + "' references unknown '" + ref + "'");
    }
  }
  return shapes;
}

// ---------------------------------------------------------------------------
// Shape rules
// ---------------------------------------------------------------------------

namespace {

void require_inputs(const LayerSpec& layer, size_t n, const std::vector<TensorShape>& in) {
  if (in.size() != n)
    throw Error(Errc::ShapeMismatch, "layer '" + layer.name + "' (" + layer_kind_name(layer.kind) +
                                         ") expects " + std::to_string(n) + " input(s), got " +
                                         std::to_string(in.size()));
}

void require_rank(const LayerSpec& layer, const TensorShape& s, int rank) {
  if (s.rank() != rank)
    throw Error(Errc::ShapeMismatch, "layer '" + layer.name + "' expects rank-" + std::to_string(rank) +
                                         " input, got " + s.to_string());
}

// Conv/pool spatial output size, zero padding, floor division.
int64_t out_dim(const LayerSpec& layer, int64_t in, int64_t k, int64_t stride, int64_t pad) {
  int64_t span = in + 2 * pad - k;
  if (span < 0 || stride < 1)
    throw Error(Errc::ShapeMismatch,
                "layer '" + layer.name + "': window " + std::to_string(k) + " does not fit input " +
                    std::to_string(in) + " with pad " + std::to_string(pad));
  return span / stride + 1;
}

}  // namespace

TensorShape infer_output_shape(const LayerSpec& layer, const std::vector<TensorShape>& inputs) {
  switch (layer.kind) {
    case LayerKind::Dense: {
      require_inputs(layer, 1, inputs);
      require_rank(layer, inputs[0], 2);
      if (inputs[0].dims[1] != layer.param("in"))
        throw Error(Errc::ShapeMismatch, "layer '" + layer.name + "': input width " +
                                             std::to_string(inputs[0].dims[1]) + " != in=" +
                                             std::to_string(layer.param("in")));
      return TensorShape{{inputs[0].dims[0], layer.param("out")}};
    }
    case LayerKind::Conv2d: {
      require_inputs(layer, 1, inputs);
      require_rank(layer, inputs[0], 4);
      const auto& d = inputs[0].dims;
      if (d[1] != layer.param("cin"))
        throw Error(Errc::ShapeMismatch, "layer '" + layer.name + "': input channels " +
                                             std::to_string(d[1]) + " != cin=" +
                                             std::to_string(layer.param("cin")));
      int64_t stride = layer.param_or("stride", 1), pad = layer.param_or("pad", 0);
      return TensorShape{{d[0], layer.param("cout"),
                          out_dim(layer, d[2], layer.param("kh"), stride, pad),
                          out_dim(layer, d[3], layer.param("kw"), stride, pad)}};
    }
    case LayerKind::Relu:
      require_inputs(layer, 1, inputs);
      return inputs[0];
    case LayerKind::Maxpool2d: {
      require_inputs(layer, 1, inputs);
      require_rank(layer, inputs[0], 4);
      const auto& d = inputs[0].dims;
      int64_t stride = layer.param_or("stride", 1), pad = layer.param_or("pad", 0);
      // pad > k/2 would create windows made entirely of padding
      if (pad > layer.param("kh") / 2 || pad > layer.param("kw") / 2)
        throw Error(Errc::ShapeMismatch,
                    "layer '" + layer.name + "': maxpool pad must be <= half the window");
      return TensorShape{{d[0], d[1], out_dim(layer, d[2], layer.param("kh"), stride, pad),
                          out_dim(layer, d[3], layer.param("kw"), stride, pad)}};
    }
    case LayerKind::GlobalAvgPool: {
      require_inputs(layer, 1, inputs);
      require_rank(layer, inputs[0], 4);
      return TensorShape{{inputs[0].dims[0], inputs[0].dims[1]}};
    }
    case LayerKind::Flatten: {
      require_inputs(layer, 1, inputs);
      if (inputs[0].rank() < 2)
        throw Error(Errc::ShapeMismatch, "layer '" + layer.name + "': flatten needs rank >= 2");
      return TensorShape{{inputs[0].dims[0], inputs[0].per_batch_elements()}};
    }
    case LayerKind::Add: {
      require_inputs(layer, 2, inputs);
      if (!(inputs[0] == inputs[1]))
        throw Error(Errc::ShapeMismatch, "layer '" + layer.name + "': add inputs differ: " +
                                             inputs[0].to_string() + " vs " + inputs[1].to_string());
      return inputs[0];
    }
    case LayerKind::Softmax:
      require_inputs(layer, 1, inputs);
      require_rank(layer, inputs[0], 2);
      return inputs[0];
  }
  throw Error(Errc::UnknownLayerKind, "unhandled kind");
}

int64_t layer_weight_bytes(const LayerSpec& layer) {
  switch (layer.kind) {
    case LayerKind::Dense:
      return 4 * (layer.param("in") * layer.param("out") + layer.param("out"));
    case LayerKind::Conv2d:
      return 4 * (layer.param("cout") * layer.param("cin") * layer.param("kh") * layer.param("kw") +
                  layer.param("cout"));
    default:
      return 0;
  }
}

int64_t layer_flops(const LayerSpec& layer, const std::vector<TensorShape>& input_shapes,
                    int64_t batch) {
  if (batch < 1) throw Error(Errc::ShapeMismatch, "batch must be positive");
  TensorShape out = infer_output_shape(layer, input_shapes);
  switch (layer.kind) {
    case LayerKind::Dense:
      return 2 * layer.param("in") * layer.param("out") * batch;
    case LayerKind::Conv2d:
      return 2 * layer.param("kh") * layer.param("kw") * layer.param("cin") * out.dims[2] *
             out.dims[3] * layer.param("cout") * batch;
    case LayerKind::Relu:
    case LayerKind::Add:
    case LayerKind::Softmax:
      return out.element_count(batch);
    case LayerKind::Maxpool2d:
      return layer.param("kh") * layer.param("kw") * out.element_count(batch);
    case LayerKind::GlobalAvgPool:
      // one accumulation per input element
      return input_shapes[0].dims[2] * input_shapes[0].dims[3] * out.element_count(batch);
    case LayerKind::Flatten:
      return 0;
  }
  return 0;
}

int64_t model_flops(const ModelManifest& m, int64_t batch) {
  int64_t total = 0;
  for (const auto& layer : m.layers) total += layer_flops(layer, m.input_shapes_of(layer), batch);
  return total;
}

// ---------------------------------------------------------------------------
// Validation
// ---------------------------------------------------------------------------

std::string ValidationReport::to_string() const {
  std::ostringstream os;
  for (const auto& f : findings) {
    os << errc_name(f.code);
    if (!f.layer.empty()) os << " [" << f.layer << "]";
    os << ": " << f.detail << "\n";
  }
  return os.str();
}

ValidationReport validate_manifest(const ModelManifest& m) {
  ValidationReport rep;
  auto add = [&rep](Errc c, const std::string& layer, const std::string& detail) {
    rep.findings.push_back({c, layer, detail});
  };

  if (m.input_shape.dims.empty()) add(Errc::MalformedDocument, "", "missing input shape");
  for (size_t i = 1; i < m.input_shape.dims.size(); ++i)
    if (m.input_shape.dims[i] < 1)
      add(Errc::MalformedDocument, "", "non-positive input dim");

  std::map<std::string, size_t> index;
  for (size_t i = 0; i < m.layers.size(); ++i) {
    if (index.count(m.layers[i].name))
      add(Errc::MalformedDocument, m.layers[i].name, "duplicate layer name");
    index[m.layers[i].name] = i;
  }

  int64_t total_bytes = 0;
  std::set<std::string> referenced;
  for (size_t i = 0; i < m.layers.size(); ++i) {
    const LayerSpec& layer = m.layers[i];
    size_t expect_inputs = layer.kind == LayerKind::Add ? 2 : 1;
    if (layer.input_refs.size() != expect_inputs)
      add(Errc::ShapeMismatch, layer.name,
          "expects " + std::to_string(expect_inputs) + " input(s), has " +
              std::to_string(layer.input_refs.size()));

    // Refs must resolve to the model input or an earlier layer: a ref to this
    // or a later layer would make the graph cyclic under list order.
    bool refs_ok = layer.input_refs.size() == expect_inputs;
    for (const auto& ref : layer.input_refs) {
      if (ref == kModelInputRef) continue;
      referenced.insert(ref);
      auto it = index.find(ref);
      if (it == index.end()) {
        add(Errc::MalformedDocument, layer.name, "unknown input '" + ref + "'");
        refs_ok = false;
      } else if (it->second >= i) {
        add(Errc::CyclicGraph, layer.name, "input '" + ref + "' does not precede this layer");
        refs_ok = false;
      }
    }

    if (refs_ok) {
      try {
        TensorShape derived = infer_output_shape(layer, m.input_shapes_of(layer));
        if (!(derived == layer.output_shape))
          add(Errc::ShapeMismatch, layer.name,
              "declared out " + layer.output_shape.to_string() + ", derived " + derived.to_string());
      } catch (const Error& e) {
        add(e.code(), layer.name, e.what());
      }
    }

    try {
      int64_t expect_bytes = layer_weight_bytes(layer);
      if (layer.weight_bytes != expect_bytes)
        add(Errc::WeightByteMismatch, layer.name,
            "declared " + std::to_string(layer.weight_bytes) + " bytes, derived " +
                std::to_string(expect_bytes));
      total_bytes += expect_bytes;
    } catch (const Error& e) {
      add(e.code(), layer.name, e.what());
    }
  }

  if (m.total_weight_bytes != total_bytes)
    add(Errc::WeightByteMismatch, "",
        "manifest total_weight_bytes " + std::to_string(m.total_weight_bytes) + ", derived " +
            std::to_string(total_bytes));
  if (m.declared_footprint_bytes < total_bytes)
    add(Errc::FootprintTooSmall, "",
        "footprint " + std::to_string(m.declared_footprint_bytes) + " < weight bytes " +
            std::to_string(total_bytes));

  // Single sink: exactly one layer feeds nothing else.
  if (!m.layers.empty()) {
    std::vector<std::string> sinks;
    for (const auto& layer : m.layers)
      if (!referenced.count(layer.name)) sinks.push_back(layer.name);
    if (sinks.size() != 1)
      add(Errc::MalformedDocument, "",
          "model must have exactly one output layer, found " + std::to_string(sinks.size()));
  }
  return rep;
}

// ---------------------------------------------------------------------------
// Document parsing
// ---------------------------------------------------------------------------

namespace {

constexpr const char* kHeader = "infershare-manifest";

LayerSpec parse_layer_line(const std::string& line, const std::string& prev_layer) {
  std::istringstream is(line);
  std::string tok, name, kind;
  is >> tok >> name >> kind;
  if (name.empty() || kind.empty())
    throw Error(Errc::MalformedDocument, "layer line needs '<name> <kind>': " + line);
  if (name == kModelInputRef)
    throw Error(Errc::MalformedDocument, "layer may not be named " + std::string(kModelInputRef));

  LayerSpec layer;
  layer.name = name;
  layer.kind = parse_layer_kind(kind);

  bool have_out = false, have_weight_bytes = false, have_inputs = false;
  while (is >> tok) {
    size_t eq = tok.find('=');
    if (eq == std::string::npos)
      throw Error(Errc::MalformedDocument, "expected key=value, got '" + tok + "' in layer " + name);
    std::string key = tok.substr(0, eq), value = tok.substr(eq + 1);
    if (key == "inputs") {
      have_inputs = true;
      if (!value.empty())
        for (const auto& ref : split(value, ','))
          layer.input_refs.push_back(ref);
    } else if (key == "params") {
      if (!value.empty()) {
        for (const auto& kv : split(value, ',')) {
          size_t e2 = kv.find('=');
          if (e2 == std::string::npos)
            throw Error(Errc::MalformedDocument, "bad param '" + kv + "' in layer " + name);
          layer.params[kv.substr(0, e2)] = parse_int(kv.substr(e2 + 1), "layer " + name);
        }
      }
    } else if (key == "out") {
      layer.output_shape = TensorShape::parse(value);
      have_out = true;
    } else if (key == "weight_bytes") {
      layer.weight_bytes = parse_int(value, "layer " + name);
      have_weight_bytes = true;
    } else {
      throw Error(Errc::MalformedDocument, "unknown layer field '" + key + "' in layer " + name);
    }
  }
  if (!have_out) throw Error(Errc::MalformedDocument, "layer " + name + " missing out=");
  if (!have_inputs) {
    // Default: previous layer in the list, or the model input for the first.
    layer.input_refs.push_back(prev_layer.empty() ? kModelInputRef : prev_layer);
  }
  if (!have_weight_bytes) layer.weight_bytes = layer_weight_bytes(layer);
  return layer;
}

}  // namespace

ModelManifest parse_manifest(const std::string& text) {
  ModelManifest m;
  bool header_seen = false, have_input = false, have_total = false;
  std::istringstream is(text);
  std::string raw;
  while (std::getline(is, raw)) {
    std::string line = trim(raw);
    if (line.empty() || line[0] == '#') continue;
    if (!header_seen) {
      std::istringstream hs(line);
      std::string word, ver;
      hs >> word >> ver;
      if (word != kHeader || ver.size() < 2 || ver[0] != 'v')
        throw Error(Errc::MalformedDocument, "expected '" + std::string(kHeader) + " v1' header");
      int64_t v = parse_int(ver.substr(1), "format header");
      if (v != 1)
        throw Error(Errc::UnsupportedVersion, "manifest format v" + std::to_string(v));
      header_seen = true;
      continue;
    }
    std::istringstream ls(line);
    std::string key;
    ls >> key;
    std::string rest = trim(line.substr(key.size()));
    if (key == "layer") {
      m.layers.push_back(parse_layer_line(line, m.layers.empty() ? "" : m.layers.back().name));
    } else if (key == "model") {
      m.model_name = rest;
    } else if (key == "version") {
      m.version = static_cast<int>(parse_int(rest, "version"));
    } else if (key == "input") {
      m.input_shape = TensorShape::parse(rest);
      have_input = true;
    } else if (key == "weight_seed") {
      m.weight_seed = parse_u64(rest, "weight_seed");
    } else if (key == "total_weight_bytes") {
      m.total_weight_bytes = parse_int(rest, "total_weight_bytes");
      have_total = true;
    } else if (key == "footprint_bytes") {
      m.declared_footprint_bytes = parse_int(rest, "footprint_bytes");
    } else {
      throw Error(Errc::MalformedDocument, "unknown manifest key '" + key + "'");
    }
  }
  if (!header_seen) throw Error(Errc::MalformedDocument, "empty document");
  if (m.model_name.empty()) throw Error(Errc::MalformedDocument, "missing 'model' line");
  if (!have_input) throw Error(Errc::MalformedDocument, "missing 'input' line");

  if (!have_total) {
    for (const auto& layer : m.layers) m.total_weight_bytes += layer.weight_bytes;
  }
  if (m.declared_footprint_bytes == 0) m.declared_footprint_bytes = m.total_weight_bytes;

  ValidationReport rep = validate_manifest(m);
  if (!rep.ok()) {
    const Finding& f = rep.findings.front();
    throw Error(f.code, (f.layer.empty() ? "" : "layer '" + f.layer + "': ") + f.detail);
  }
  return m;
}

ModelManifest load_manifest_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(Errc::IoError, "cannot open " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_manifest(buf.str());
}

std::string serialize_manifest(const ModelManifest& m) {
  std::ostringstream os;
  os << kHeader << " v1\n";
  os << "model " << m.model_name << "\n";
  os << "version " << m.version << "\n";
  os << "input " << m.input_shape.to_string() << "\n";
  os << "weight_seed " << m.weight_seed << "\n";
  os << "total_weight_bytes " << m.total_weight_bytes << "\n";
  os << "footprint_bytes " << m.declared_footprint_bytes << "\n";
  for (const auto& layer : m.layers) {
    os << "layer " << layer.name << " " << layer_kind_name(layer.kind) << " inputs=";
    for (size_t i = 0; i < layer.input_refs.size(); ++i)
      os << (i ? "," : "") << layer.input_refs[i];
    os << " params=";
    size_t i = 0;
    for (const auto& [k, v] : layer.params) os << (i++ ? "," : "") << k << "=" << v;
    os << " out=" << layer.output_shape.to_string();
    os << " weight_bytes=" << layer.weight_bytes << "\n";
  }
  return os.str();
}

const char* errc_name(Errc c) {
  switch (c) {
    case Errc::UnknownLayerKind: return "UnknownLayerKind";
    case Errc::ShapeMismatch: return "ShapeMismatch";
    case Errc::CyclicGraph: return "CyclicGraph";
    case Errc::MalformedDocument: return "MalformedDocument";
    case Errc::WeightByteMismatch: return "WeightByteMismatch";
    case Errc::FootprintTooSmall: return "FootprintTooSmall";
    case Errc::NonFiniteOutput: return "NonFiniteOutput";
    case Errc::BatchTooLarge: return "BatchTooLarge";
    case Errc::UnknownModel: return "UnknownModel";
    case Errc::Overloaded: return "Overloaded";
    case Errc::WouldMissDeadline: return "WouldMissDeadline";
    case Errc::ModelTooLarge: return "ModelTooLarge";
    case Errc::CacheThrash: return "CacheThrash";
    case Errc::Cancelled: return "Cancelled";
    case Errc::DeviceFault: return "DeviceFault";
    case Errc::InsufficientCapacity: return "InsufficientCapacity";
    case Errc::QuotaExceeded: return "QuotaExceeded";
    case Errc::ValidationFailed: return "ValidationFailed";
    case Errc::ModelUnavailable: return "ModelUnavailable";
    case Errc::Unauthorized: return "Unauthorized";
    case Errc::FrameTooLarge: return "FrameTooLarge";
    case Errc::UnknownKind: return "UnknownKind";
    case Errc::MalformedPayload: return "MalformedPayload";
    case Errc::UnsupportedVersion: return "UnsupportedVersion";
    case Errc::TraceParseError: return "TraceParseError";
    case Errc::ConfigInvalid: return "ConfigInvalid";
    case Errc::IoError: return "IoError";
  }
  return "Error";
}

}  // namespace infershare
