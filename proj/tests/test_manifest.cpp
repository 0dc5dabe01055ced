#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <random>

#include "infershare/manifest.hpp"
#include "test_util.hpp"

using namespace infershare;
using infershare::testutil::data_path;

namespace {

std::string dense_doc(const std::string& out_shape = "*x1000") {
  return "infershare-manifest v1\n"
         "model m\n"
         "input *x1000\n"
         "layer fc dense inputs=@input params=in=1000,out=1000 out=" +
         out_shape + "\n";
}

}  // namespace

TEST_CASE("single dense layer: parameter bytes include the bias") {
  ModelManifest m = parse_manifest(dense_doc());
  REQUIRE(m.layers.size() == 1);
  // (1000*1000 + 1000) * 4
  CHECK(m.total_weight_bytes == 4'004'000);
  CHECK(m.declared_footprint_bytes == 4'004'000);
  CHECK(m.layers[0].kind == LayerKind::Dense);
}

TEST_CASE("kinds outside the catalogue are rejected") {
  std::string doc =
      "infershare-manifest v1\nmodel m\ninput *x8\n"
      "layer x custom_op inputs=@input out=*x8\n";
  CHECK_THROWS_WITH_AS(parse_manifest(doc), doctest::Contains("custom_op"), Error);
  try {
    parse_manifest(doc);
  } catch (const Error& e) {
    CHECK(e.code() == Errc::UnknownLayerKind);
  }

  // every mutated kind string outside the catalogue must be rejected
  const char* catalogue[] = {"dense",         "conv2d",  "relu", "maxpool2d",
                             "globalavgpool", "flatten", "add",  "softmax"};
  std::mt19937_64 rng(5);
  for (int i = 0; i < 200; ++i) {
    std::string kind = catalogue[rng() % 8];
    // mutate one character so it falls outside the catalogue
    kind[rng() % kind.size()] = static_cast<char>('a' + rng() % 26);
    bool in_catalogue = false;
    for (const char* k : catalogue) in_catalogue = in_catalogue || kind == k;
    if (in_catalogue) continue;
    std::string doc2 = "infershare-manifest v1\nmodel m\ninput *x8\nlayer x " + kind +
                       " inputs=@input out=*x8\n";
    CHECK_THROWS_AS(parse_manifest(doc2), Error);
  }
}

TEST_CASE("bundled resnet18-style manifest parses with ~2e9 flops at batch 1") {
  ModelManifest m = load_manifest_file(data_path("models/resnet18.manifest"));
  CHECK(m.model_name == "resnet18");
  CHECK(m.total_weight_bytes == 21'811'360);
  CHECK(m.declared_footprint_bytes == 78'000'000);
  int64_t flops = model_flops(m, 1);
  CHECK(flops >= 1'800'000'000);
  CHECK(flops <= 2'200'000'000);
  // frozen golden value, hand-summed from the per-layer formulas
  CHECK(flops == 2'013'634'536);
  CHECK(validate_manifest(m).ok());
}

TEST_CASE("layer_flops formulas") {
  LayerSpec dense;
  dense.name = "fc";
  dense.kind = LayerKind::Dense;
  dense.params = {{"in", 1000}, {"out", 1000}};
  CHECK(layer_flops(dense, {TensorShape{{1, 1000}}}, 1) == 2'000'000);

  LayerSpec relu;
  relu.name = "r";
  relu.kind = LayerKind::Relu;
  CHECK(layer_flops(relu, {TensorShape{{1, 1000}}}, 1) == 1000);

  // hand multiplication: 2*3*3*64*56*56*64 = 231,211,008
  LayerSpec conv;
  conv.name = "c";
  conv.kind = LayerKind::Conv2d;
  conv.params = {{"cin", 64}, {"cout", 64}, {"kh", 3}, {"kw", 3}, {"pad", 1}, {"stride", 1}};
  CHECK(layer_flops(conv, {TensorShape{{1, 64, 56, 56}}}, 1) == 231'211'008);
}

TEST_CASE("model_flops is linear in batch") {
  SUBCASE("degenerate empty manifest") {
    ModelManifest m = parse_manifest("infershare-manifest v1\nmodel empty\ninput *x4\n");
    CHECK(model_flops(m, 1) == 0);
  }
  ModelManifest m = load_manifest_file(data_path("models/resnet18.manifest"));
  int64_t base = model_flops(m, 1);
  for (int64_t b : {2, 8, 17, 64}) CHECK(model_flops(m, b) == b * base);
}

TEST_CASE("validate_manifest findings") {
  SUBCASE("consistent manifest has no findings") {
    CHECK(validate_manifest(parse_manifest(dense_doc())).ok());
  }
  SUBCASE("inconsistent declared shape") {
    ModelManifest m = parse_manifest(dense_doc());
    m.layers[0].output_shape = TensorShape{{1, 999}};
    ValidationReport rep = validate_manifest(m);
    REQUIRE_FALSE(rep.ok());
    CHECK(rep.findings[0].code == Errc::ShapeMismatch);
  }
  SUBCASE("total weight bytes off by four") {
    ModelManifest m = parse_manifest(dense_doc());
    m.total_weight_bytes += 4;
    ValidationReport rep = validate_manifest(m);
    REQUIRE_FALSE(rep.ok());
    CHECK(rep.findings[0].code == Errc::WeightByteMismatch);
  }
  SUBCASE("footprint below weight bytes") {
    ModelManifest m = parse_manifest(dense_doc());
    m.declared_footprint_bytes = 16;
    CHECK_FALSE(validate_manifest(m).ok());
  }
}

TEST_CASE("parse rejects structural errors") {
  SUBCASE("reference to a later layer is cyclic") {
    std::string doc =
        "infershare-manifest v1\nmodel m\ninput *x8\n"
        "layer a relu inputs=b out=*x8\n"
        "layer b relu inputs=a out=*x8\n";
    try {
      parse_manifest(doc);
      FAIL("expected CyclicGraph");
    } catch (const Error& e) {
      CHECK(e.code() == Errc::CyclicGraph);
    }
  }
  SUBCASE("self reference is cyclic") {
    std::string doc =
        "infershare-manifest v1\nmodel m\ninput *x8\nlayer a relu inputs=a out=*x8\n";
    try {
      parse_manifest(doc);
      FAIL("expected CyclicGraph");
    } catch (const Error& e) {
      CHECK(e.code() == Errc::CyclicGraph);
    }
  }
  SUBCASE("unknown reference") {
    std::string doc =
        "infershare-manifest v1\nmodel m\ninput *x8\nlayer a relu inputs=zz out=*x8\n";
    CHECK_THROWS_AS(parse_manifest(doc), Error);
  }
  SUBCASE("missing header") { CHECK_THROWS_AS(parse_manifest("model m\n"), Error); }
  SUBCASE("newer format version") {
    try {
      parse_manifest("infershare-manifest v2\nmodel m\ninput *x8\n");
      FAIL("expected UnsupportedVersion");
    } catch (const Error& e) {
      CHECK(e.code() == Errc::UnsupportedVersion);
    }
  }
  SUBCASE("two sinks") {
    std::string doc =
        "infershare-manifest v1\nmodel m\ninput *x8\n"
        "layer a relu inputs=@input out=*x8\n"
        "layer b relu inputs=@input out=*x8\n";
    CHECK_THROWS_AS(parse_manifest(doc), Error);
  }
  SUBCASE("add needs two inputs") {
    std::string doc =
        "infershare-manifest v1\nmodel m\ninput *x8\n"
        "layer a add inputs=@input out=*x8\n";
    CHECK_THROWS_AS(parse_manifest(doc), Error);
  }
}

// property: parse(serialize(m)) is field-equal to m for generated manifests
TEST_CASE("serialization round-trips generated manifests") {
  std::mt19937_64 rng(99);
  auto rand_int = [&](int64_t lo, int64_t hi) {
    return lo + static_cast<int64_t>(rng() % static_cast<uint64_t>(hi - lo + 1));
  };

  for (int iter = 0; iter < 100; ++iter) {
    // random chain: conv/pool/relu block stack on NCHW, then flatten/dense head
    int64_t c = rand_int(1, 4), h = rand_int(6, 20), w = rand_int(6, 20);
    std::ostringstream doc;
    doc << "infershare-manifest v1\nmodel gen" << iter << "\nversion " << rand_int(1, 5) << "\n";
    doc << "input *x" << c << "x" << h << "x" << w << "\n";
    doc << "weight_seed " << rng() << "\n";
    int layers = static_cast<int>(rand_int(1, 5));
    std::string prev = "@input";
    int64_t cc = c, hh = h, ww = w;
    for (int i = 0; i < layers; ++i) {
      int pick = static_cast<int>(rand_int(0, 2));
      std::string name = "L" + std::to_string(i);
      if (pick == 0 && hh >= 3 && ww >= 3) {
        int64_t cout = rand_int(1, 6);
        doc << "layer " << name << " conv2d inputs=" << prev << " params=cin=" << cc
            << ",cout=" << cout << ",kh=3,kw=3,pad=1,stride=1 out=*x" << cout << "x" << hh << "x"
            << ww << "\n";
        cc = cout;
      } else if (pick == 1 && hh >= 2 && ww >= 2) {
        int64_t oh = (hh - 2) / 2 + 1, ow = (ww - 2) / 2 + 1;
        doc << "layer " << name << " maxpool2d inputs=" << prev
            << " params=kh=2,kw=2,stride=2 out=*x" << cc << "x" << oh << "x" << ow << "\n";
        hh = oh;
        ww = ow;
      } else {
        doc << "layer " << name << " relu inputs=" << prev << " out=*x" << cc << "x" << hh << "x"
            << ww << "\n";
      }
      prev = name;
    }
    doc << "layer flat flatten inputs=" << prev << " out=*x" << cc * hh * ww << "\n";
    int64_t od = rand_int(2, 16);
    doc << "layer head dense inputs=flat params=in=" << cc * hh * ww << ",out=" << od << " out=*x"
        << od << "\n";

    ModelManifest m = parse_manifest(doc.str());
    ModelManifest again = parse_manifest(serialize_manifest(m));
    CHECK(again.model_name == m.model_name);
    CHECK(again.version == m.version);
    CHECK(again.input_shape == m.input_shape);
    CHECK(again.weight_seed == m.weight_seed);
    CHECK(again.total_weight_bytes == m.total_weight_bytes);
    CHECK(again.declared_footprint_bytes == m.declared_footprint_bytes);
    REQUIRE(again.layers.size() == m.layers.size());
    for (size_t i = 0; i < m.layers.size(); ++i) {
      CHECK(again.layers[i].name == m.layers[i].name);
      CHECK(again.layers[i].kind == m.layers[i].kind);
      CHECK(again.layers[i].params == m.layers[i].params);
      CHECK(again.layers[i].input_refs == m.layers[i].input_refs);
      CHECK(again.layers[i].output_shape == m.layers[i].output_shape);
      CHECK(again.layers[i].weight_bytes == m.layers[i].weight_bytes);
    }
  }
}

TEST_CASE("defaults: inputs fall back to the previous layer, weight bytes computed") {
  std::string doc =
      "infershare-manifest v1\nmodel m\ninput *x16\n"
      "layer a dense params=in=16,out=8 out=*x8\n"
      "layer b relu out=*x8\n";
  ModelManifest m = parse_manifest(doc);
  CHECK(m.layers[0].input_refs == std::vector<std::string>{"@input"});
  CHECK(m.layers[1].input_refs == std::vector<std::string>{"a"});
  CHECK(m.layers[0].weight_bytes == 4 * (16 * 8 + 8));
}

TEST_CASE("variable batch shapes") {
  TensorShape s = TensorShape::parse("*x3x224x224");
  CHECK(s.batch_variable());
  CHECK(s.element_count(2) == 2 * 3 * 224 * 224);
  CHECK(s.to_string() == "*x3x224x224");
  CHECK_THROWS_AS(TensorShape::parse("3x*x4"), Error);
  CHECK_THROWS_AS(TensorShape::parse("0x4"), Error);
  CHECK_THROWS_AS(s.fixed_element_count(), Error);
}
