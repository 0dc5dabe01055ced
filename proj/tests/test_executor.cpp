#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>

#include "infershare/executor.hpp"
#include "test_util.hpp"

using namespace infershare;
using infershare::testutil::data_path;

namespace {

Tensor make_tensor(TensorShape shape, std::vector<double> values) {
  Tensor t;
  t.shape = std::move(shape);
  t.values = std::move(values);
  return t;
}

Tensor random_tensor(TensorShape shape, uint64_t seed) {
  Tensor t = Tensor::zeros(std::move(shape));
  std::mt19937_64 rng(seed);
  for (auto& v : t.values)
    v = static_cast<double>(rng() >> 11) * (1.0 / 9007199254740992.0) - 0.5;
  return t;
}

// random single layer with shapes <= 32 per axis, plus matching input tensors
struct RandomLayer {
  LayerSpec layer;
  std::vector<Tensor> inputs;
};

RandomLayer random_layer(std::mt19937_64& rng) {
  auto ri = [&](int64_t lo, int64_t hi) {
    return lo + static_cast<int64_t>(rng() % static_cast<uint64_t>(hi - lo + 1));
  };
  RandomLayer out;
  LayerSpec& l = out.layer;
  l.name = "L";
  int64_t b = ri(1, 3);
  switch (rng() % 8) {
    case 0: {
      l.kind = LayerKind::Dense;
      int64_t in = ri(1, 32), od = ri(1, 32);
      l.params = {{"in", in}, {"out", od}};
      l.input_refs = {"@input"};
      out.inputs.push_back(random_tensor(TensorShape{{b, in}}, rng()));
      break;
    }
    case 1: {
      l.kind = LayerKind::Conv2d;
      int64_t cin = ri(1, 4), cout = ri(1, 4), k = ri(1, 3), pad = ri(0, 1), stride = ri(1, 2);
      int64_t h = ri(k, 12), w = ri(k, 12);
      l.params = {{"cin", cin}, {"cout", cout}, {"kh", k},
                  {"kw", k},    {"pad", pad},   {"stride", stride}};
      l.input_refs = {"@input"};
      out.inputs.push_back(random_tensor(TensorShape{{b, cin, h, w}}, rng()));
      break;
    }
    case 2: {
      l.kind = LayerKind::Relu;
      l.input_refs = {"@input"};
      out.inputs.push_back(random_tensor(TensorShape{{b, ri(1, 32)}}, rng()));
      break;
    }
    case 3: {
      l.kind = LayerKind::Maxpool2d;
      int64_t c = ri(1, 4), k = ri(1, 3), stride = ri(1, 2), pad = ri(0, k / 2);
      int64_t h = ri(k, 12), w = ri(k, 12);
      l.params = {{"kh", k}, {"kw", k}, {"stride", stride}, {"pad", pad}};
      l.input_refs = {"@input"};
      out.inputs.push_back(random_tensor(TensorShape{{b, c, h, w}}, rng()));
      break;
    }
    case 4: {
      l.kind = LayerKind::GlobalAvgPool;
      l.input_refs = {"@input"};
      out.inputs.push_back(random_tensor(TensorShape{{b, ri(1, 4), ri(1, 8), ri(1, 8)}}, rng()));
      break;
    }
    case 5: {
      l.kind = LayerKind::Flatten;
      l.input_refs = {"@input"};
      out.inputs.push_back(random_tensor(TensorShape{{b, ri(1, 4), ri(1, 6)}}, rng()));
      break;
    }
    case 6: {
      l.kind = LayerKind::Add;
      TensorShape s{{b, ri(1, 32)}};
      l.input_refs = {"@input", "@input"};
      out.inputs.push_back(random_tensor(s, rng()));
      out.inputs.push_back(random_tensor(s, rng()));
      break;
    }
    default: {
      l.kind = LayerKind::Softmax;
      l.input_refs = {"@input"};
      out.inputs.push_back(random_tensor(TensorShape{{b, ri(1, 32)}}, rng()));
      break;
    }
  }
  std::vector<TensorShape> shapes;
  for (const auto& t : out.inputs) shapes.push_back(t.shape);
  l.output_shape = infer_output_shape(l, shapes);
  l.weight_bytes = layer_weight_bytes(l);
  return out;
}

WeightStore weights_for(const LayerSpec& l, uint64_t seed) {
  ModelManifest m;
  m.model_name = "tmp";
  m.weight_seed = seed;
  m.layers.push_back(l);
  m.input_shape = TensorShape{{TensorShape::kVariableBatch, 1}};
  return generate_weights(m);
}

}  // namespace

TEST_CASE("weight generation is deterministic and seed-sensitive") {
  ModelManifest m = load_manifest_file(data_path("models/resnet18.manifest"));
  WeightStore a = generate_weights(m);
  WeightStore b = generate_weights(m);
  REQUIRE(a.tensors.size() == b.tensors.size());
  for (const auto& [name, ts] : a.tensors) {
    for (size_t i = 0; i < ts.size(); ++i) CHECK(ts[i].values == b.tensors.at(name)[i].values);
  }
  // stored bytes at 4 bytes/element match the manifest accounting
  CHECK(a.total_bytes() == m.total_weight_bytes);

  ModelManifest m2 = m;
  m2.weight_seed++;
  WeightStore c = generate_weights(m2);
  bool any_diff = false;
  for (const auto& [name, ts] : a.tensors)
    for (size_t i = 0; i < ts.size(); ++i) any_diff = any_diff || ts[i].values != c.tensors.at(name)[i].values;
  CHECK(any_diff);

  // values stay in [-0.5, 0.5]
  for (const auto& [name, ts] : a.tensors)
    for (const auto& t : ts)
      for (double v : t.values) {
        CHECK(v >= -0.5);
        CHECK(v < 0.5);
      }

  SUBCASE("weightless model yields an empty store") {
    ModelManifest r = parse_manifest(
        "infershare-manifest v1\nmodel r\ninput *x8\nlayer a relu inputs=@input out=*x8\n");
    CHECK(generate_weights(r).tensors.empty());
  }
}

TEST_CASE("dense with identity weights is the identity map") {
  LayerSpec l;
  l.name = "fc";
  l.kind = LayerKind::Dense;
  l.params = {{"in", 4}, {"out", 4}};
  l.input_refs = {"@input"};
  l.output_shape = TensorShape{{TensorShape::kVariableBatch, 4}};
  WeightStore ws;
  Tensor w = Tensor::zeros(TensorShape{{4, 4}});
  for (int i = 0; i < 4; ++i) w.values[i * 4 + i] = 1.0;
  ws.tensors["fc"] = {w, Tensor::zeros(TensorShape{{4}})};

  Tensor in = make_tensor(TensorShape{{1, 4}}, {1.5, -2.0, 0.0, 7.25});
  Tensor out = execute_layer(l, {in}, ws);
  CHECK(out.values == in.values);
}

TEST_CASE("softmax of a constant row is uniform") {
  LayerSpec l;
  l.name = "sm";
  l.kind = LayerKind::Softmax;
  l.input_refs = {"@input"};
  l.output_shape = TensorShape{{TensorShape::kVariableBatch, 4}};
  Tensor in = make_tensor(TensorShape{{1, 4}}, {0, 0, 0, 0});
  Tensor out = execute_layer(l, {in}, WeightStore{});
  for (double v : out.values) CHECK(v == doctest::Approx(0.25).epsilon(1e-12));
}

TEST_CASE("conv2d hand-computed window sum") {
  // 2x2 kernel of ones, stride 1, no padding, input [[1,2],[3,4]] -> [[10]]
  LayerSpec l;
  l.name = "cv";
  l.kind = LayerKind::Conv2d;
  l.params = {{"cin", 1}, {"cout", 1}, {"kh", 2}, {"kw", 2}};
  l.input_refs = {"@input"};
  l.output_shape = TensorShape{{TensorShape::kVariableBatch, 1, 1, 1}};
  WeightStore ws;
  Tensor w = Tensor::zeros(TensorShape{{1, 1, 2, 2}});
  w.values = {1, 1, 1, 1};
  ws.tensors["cv"] = {w, Tensor::zeros(TensorShape{{1}})};
  Tensor in = make_tensor(TensorShape{{1, 1, 2, 2}}, {1, 2, 3, 4});
  Tensor out = execute_layer(l, {in}, ws);
  REQUIRE(out.values.size() == 1);
  CHECK(out.values[0] == doctest::Approx(10.0).epsilon(1e-15));
}

TEST_CASE("model execution composes and normalizes") {
  SUBCASE("identity dense then relu passes non-negative inputs through") {
    std::string doc =
        "infershare-manifest v1\nmodel m\ninput *x4\n"
        "layer fc dense inputs=@input params=in=4,out=4 out=*x4\n"
        "layer act relu inputs=fc out=*x4\n";
    ModelManifest m = parse_manifest(doc);
    WeightStore ws;
    Tensor w = Tensor::zeros(TensorShape{{4, 4}});
    for (int i = 0; i < 4; ++i) w.values[i * 4 + i] = 1.0;
    ws.tensors["fc"] = {w, Tensor::zeros(TensorShape{{4}})};
    Tensor in = make_tensor(TensorShape{{2, 4}}, {0, 1, 2, 3, 4, 5, 6, 7});
    Tensor out = execute_model(m, ws, in);
    CHECK(out.values == in.values);
  }
  SUBCASE("resnet18-style softmax head row-sums to one") {
    ModelManifest m = load_manifest_file(data_path("models/resnet18.manifest"));
    WeightStore ws = generate_weights(m);
    Tensor in = random_tensor(m.input_shape.with_batch(1), 3);
    Tensor out = execute_model(m, ws, in);
    REQUIRE(out.shape.dims == std::vector<int64_t>{1, 1000});
    double sum = 0.0;
    for (double v : out.values) {
      sum += v;
      CHECK(v >= 0.0);
      CHECK(v <= 1.0);
    }
    CHECK(std::abs(sum - 1.0) <= 1e-9);
  }
}

TEST_CASE("batch independence: batched execution equals stacked single rows") {
  std::mt19937_64 rng(11);
  std::string doc =
      "infershare-manifest v1\nmodel m\ninput *x2x8x8\n"
      "layer c1 conv2d inputs=@input params=cin=2,cout=3,kh=3,kw=3,pad=1,stride=1 out=*x3x8x8\n"
      "layer r1 relu inputs=c1 out=*x3x8x8\n"
      "layer p1 maxpool2d inputs=r1 params=kh=2,kw=2,stride=2 out=*x3x4x4\n"
      "layer g globalavgpool inputs=p1 out=*x3\n"
      "layer fc dense inputs=g params=in=3,out=5 out=*x5\n"
      "layer sm softmax inputs=fc out=*x5\n";
  ModelManifest m = parse_manifest(doc);
  WeightStore ws = generate_weights(m);

  for (int iter = 0; iter < 5; ++iter) {
    int64_t batch = 2 + static_cast<int64_t>(rng() % 3);
    Tensor in = random_tensor(m.input_shape.with_batch(batch), rng());
    Tensor batched = execute_model(m, ws, in);
    int64_t per = in.shape.per_batch_elements();
    int64_t out_per = batched.shape.per_batch_elements();
    for (int64_t b = 0; b < batch; ++b) {
      Tensor row = Tensor::zeros(m.input_shape.with_batch(1));
      std::copy(in.values.begin() + b * per, in.values.begin() + (b + 1) * per,
                row.values.begin());
      Tensor single = execute_model(m, ws, row);
      for (int64_t i = 0; i < out_per; ++i)
        CHECK(single.values[i] == batched.values[b * out_per + i]);  // exact
    }
  }
}

TEST_CASE("parallel kernels are bit-identical to the serial reference") {
  std::mt19937_64 rng(21);
  for (int iter = 0; iter < 60; ++iter) {
    RandomLayer rl = random_layer(rng);
    WeightStore ws = weights_for(rl.layer, rng());
    ExecOptions serial{KernelMode::Serial, nullptr};
    ExecOptions parallel{KernelMode::Parallel, nullptr};
    Tensor a = execute_layer(rl.layer, rl.inputs, ws, serial);
    Tensor b = execute_layer(rl.layer, rl.inputs, ws, parallel);
    REQUIRE(a.values.size() == b.values.size());
    CHECK(a.values == b.values);  // bit-identical, not approximately equal
  }
}

TEST_CASE("repeated execution is bit-identical") {
  ModelManifest m = load_manifest_file(data_path("models/tiny.manifest"));
  WeightStore ws = generate_weights(m);
  Tensor in = random_tensor(m.input_shape.with_batch(3), 7);
  Tensor a = execute_model(m, ws, in);
  Tensor b = execute_model(m, ws, in);
  CHECK(a.values == b.values);
}

TEST_CASE("instrumented op counts equal layer_flops on 100 random shapes") {
  std::mt19937_64 rng(31);
  for (int iter = 0; iter < 100; ++iter) {
    RandomLayer rl = random_layer(rng);
    WeightStore ws = weights_for(rl.layer, rng());
    uint64_t ops = 0;
    ExecOptions opts{KernelMode::Serial, &ops};
    execute_layer(rl.layer, rl.inputs, ws, opts);
    std::vector<TensorShape> shapes;
    for (const auto& t : rl.inputs) shapes.push_back(t.shape);
    int64_t batch = rl.inputs[0].shape.dims[0];
    CHECK(ops == static_cast<uint64_t>(layer_flops(rl.layer, shapes, batch)));
  }
}

TEST_CASE("shape errors and non-finite detection") {
  LayerSpec l;
  l.name = "fc";
  l.kind = LayerKind::Dense;
  l.params = {{"in", 4}, {"out", 2}};
  l.input_refs = {"@input"};
  l.output_shape = TensorShape{{TensorShape::kVariableBatch, 2}};
  WeightStore ws;
  ws.tensors["fc"] = {Tensor::zeros(TensorShape{{2, 4}}), Tensor::zeros(TensorShape{{2}})};

  SUBCASE("wrong input width") {
    Tensor in = make_tensor(TensorShape{{1, 3}}, {1, 2, 3});
    CHECK_THROWS_AS(execute_layer(l, {in}, ws), Error);
  }
  SUBCASE("overflowing weights produce NonFiniteOutput") {
    WeightStore bad = ws;
    bad.tensors["fc"][0].values.assign(8, 1e308);
    Tensor in = make_tensor(TensorShape{{1, 4}}, {1e308, 1e308, 1e308, 1e308});
    try {
      execute_layer(l, {in}, bad);
      FAIL("expected NonFiniteOutput");
    } catch (const Error& e) {
      CHECK(e.code() == Errc::NonFiniteOutput);
    }
  }
}

TEST_CASE("csv tensor round trip") {
  Tensor t = make_tensor(TensorShape{{2, 3}}, {1.5, 2, 3, -4, 5.25, 6});
  std::string path = "/tmp/infershare_test_tensor.csv";
  write_tensor_csv(path, t);
  Tensor back = read_tensor_csv(path, TensorShape{{TensorShape::kVariableBatch, 3}});
  CHECK(back.shape.dims == t.shape.dims);
  CHECK(back.values == t.values);
}
