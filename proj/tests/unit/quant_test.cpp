#include <cstring>

#include "core/quant.hpp"
#include "helpers.hpp"

using namespace semcomm;
using semcomm::test::error_of;

namespace {

std::vector<double> random_block(RngStream& rng) {
  const double scale = std::exp(4.0 * (rng.uniform() - 0.5));
  std::vector<double> w(kQuantBlockSize);
  for (auto& x : w) x = scale * rng.gaussian();
  return w;
}

Matrix random_matrix(std::size_t r, std::size_t c, RngStream& rng) {
  Matrix m(r, c);
  for (auto& x : m.data()) x = rng.gaussian();
  return m;
}

}  // namespace

TEST_SUITE("quantization_lora") {

TEST_CASE("quantize_block examples") {
  SUBCASE("zero block") {
    const auto q = quantize_block(std::vector<double>(64, 0.0));
    CHECK(q.absmax == 0.0f);
    for (auto c : q.codes) CHECK(c == 0);
    for (double v : dequantize_block(q)) CHECK(v == 0.0);
  }
  SUBCASE("round-half-even on the lattice") {
    std::vector<double> w(64, 0.0);
    w[0] = 7.0;
    w[1] = -7.0;
    w[2] = 3.5;
    w[3] = 2.5;
    w[4] = -0.5;
    const auto q = quantize_block(w);
    CHECK(q.absmax == 7.0f);
    CHECK(q.codes[0] == 7);
    CHECK(q.codes[1] == -7);
    CHECK(q.codes[2] == 4);
    CHECK(q.codes[3] == 2);
    CHECK(q.codes[4] == 0);
    CHECK(q.codes[5] == 0);
    CHECK(dequantize_block(q)[0] == 7.0);
  }
  SUBCASE("invalid inputs") {
    std::vector<double> w(64, 1.0);
    w[9] = INFINITY;
    CHECK(error_of([&] { quantize_block(w); }) == "invalid-input");
    CHECK(error_of([] { quantize_block(std::vector<double>(63, 1.0)); }) == "invalid-input");
  }
}

TEST_CASE("round-trip error bound and lattice idempotence on random blocks") {
  RngStream rng(1, 1);
  for (int i = 0; i < 10000; ++i) {
    const auto w = random_block(rng);
    const auto q = quantize_block(w);
    const auto d = dequantize_block(q);
    double err = 0.0;
    for (std::size_t j = 0; j < 64; ++j) err = std::max(err, std::abs(d[j] - w[j]));
    CHECK(err <= q.absmax / 14.0 + 1e-9);
    for (auto c : q.codes) CHECK(std::abs(c) <= kQuantMaxCode);
    CHECK(quantize_block(d) == q);
  }
}

TEST_CASE("codes are invariant to positive scaling") {
  RngStream rng(2, 2);
  int same = 0;
  for (int i = 0; i < 1000; ++i) {
    const auto w = random_block(rng);
    const double c = std::exp2(std::floor(8.0 * (rng.uniform() - 0.5)));  // exact binary scale
    auto scaled = w;
    for (auto& x : scaled) x *= c;
    if (quantize_block(scaled).codes == quantize_block(w).codes) ++same;
  }
  CHECK(same == 1000);
}

TEST_CASE("tensor quantization pads the last block") {
  RngStream rng(3, 3);
  const auto w = random_matrix(3, 30, rng);
  const auto q = quantize_tensor("layer.w", w);
  CHECK(q.blocks.size() == 2);
  const auto d = q.dequantize();
  REQUIRE(d.rows() == 3);
  REQUIRE(d.cols() == 30);
  for (std::size_t i = 0; i < w.size(); ++i) {
    const auto& blk = q.blocks[i / kQuantBlockSize];
    CHECK(std::abs(d.data()[i] - w.data()[i]) <= blk.absmax / 14.0 + 1e-9);
  }
}

TEST_CASE("QNT1 serialization") {
  RngStream rng(4, 4);
  std::vector<QuantizedTensor> ts{quantize_tensor("a", random_matrix(5, 13, rng)),
                                  quantize_tensor("b.weight", random_matrix(64, 2, rng))};
  const auto bytes = serialize_quantized(ts);
  CHECK(std::memcmp(bytes.data(), "QNT1", 4) == 0);
  const auto back = deserialize_quantized(bytes);
  CHECK(back == ts);
  CHECK(serialize_quantized(back) == bytes);

  SUBCASE("nibble packing: element 2i in the low nibble") {
    std::vector<double> w(64, 0.0);
    w[0] = 7.0;
    w[1] = -7.0;
    const QuantizedTensor t = quantize_tensor("n", Matrix(1, 64, w));
    const auto b = serialize_quantized(std::vector<QuantizedTensor>{t});
    // magic, count, name length, name, rows, cols, block count
    const std::size_t codes_at = 4 + 4 + 4 + 1 + 4 + 4 + 4;
    CHECK(b[codes_at] == 0x97);  // low nibble 7, high nibble -7 = 0b1001
    float absmax = 0.0f;
    std::memcpy(&absmax, &b[codes_at + 32], 4);
    CHECK(absmax == 7.0f);
  }
  SUBCASE("malformed checkpoints") {
    auto bad = bytes;
    bad[1] = 'X';
    CHECK(error_of([&] { deserialize_quantized(bad); }) == "invalid-input");
    auto trailing = bytes;
    trailing.push_back(0);
    CHECK(error_of([&] { deserialize_quantized(trailing); }) == "invalid-input");
    const std::vector<std::uint8_t> cut(bytes.begin(), bytes.end() - 3);
    CHECK(error_of([&] { deserialize_quantized(cut); }) == "invalid-input");
  }
}

TEST_CASE("glob matching") {
  CHECK(glob_match("*", "anything"));
  CHECK(glob_match("*", ""));
  CHECK(glob_match("text_encoder.*", "text_encoder.layer1"));
  CHECK_FALSE(glob_match("text_encoder.*", "vision.text_encoder.layer1"));
  CHECK(glob_match("*.bias", "l1.bias"));
  CHECK(glob_match("l?.w", "l2.w"));
  CHECK_FALSE(glob_match("l?.w", "l12.w"));
  CHECK(glob_match("a*b*c", "aXXbYYc"));
  CHECK_FALSE(glob_match("a*b*c", "aXXbYY"));
}

TEST_CASE("partition_weights examples") {
  const std::vector<std::string> names{"text_encoder.w", "vision.w", "head.w"};
  auto p = partition_weights(names, {});
  CHECK(p.critical.empty());
  CHECK(p.quantizable.size() == 3);
  const std::vector<std::string> all{"*"};
  p = partition_weights(names, all);
  CHECK(p.critical.size() == 3);
  CHECK(p.quantizable.empty());
  const std::vector<std::string> te{"text_encoder.*", "missing.*"};
  p = partition_weights(names, te);
  CHECK(p.critical == std::vector<std::string>{"text_encoder.w"});
  CHECK(p.quantizable.size() == 2);
  CHECK(p.unmatched_patterns == std::vector<std::string>{"missing.*"});
}

TEST_CASE("lora_init examples") {
  RngStream rng(5, 5);
  const auto a = lora_init(8, 8, 2, rng);
  CHECK(a.trainable_parameters() == 32);
  CHECK(a.rank() == 2);
  CHECK(a.scale() == 8.0);
  for (double v : a.b.data()) CHECK(v == 0.0);
  CHECK(a.b.matmul(a.a) == Matrix(8, 8, 0.0));
  double sq = 0.0;
  for (double v : a.a.data()) sq += v * v;
  CHECK(std::sqrt(sq / a.a.size()) == doctest::Approx(0.02).epsilon(0.5));
  CHECK(lora_init(4, 6, 4, rng).rank() == 4);
  CHECK(error_of([&] { lora_init(4, 6, 5, rng); }) == "invalid-rank");
  CHECK(error_of([&] { lora_init(4, 6, 0, rng); }) == "invalid-rank");
}

TEST_CASE("lora_forward examples") {
  RngStream rng(6, 6);
  const auto base = quantize_tensor("w", random_matrix(6, 5, rng));
  auto adapter = lora_init(6, 5, 2, rng);
  const auto x = gaussian_sample(rng, 5, 0.0, 1.0);
  CHECK(lora_forward(x, base, adapter) == base.dequantize().matvec(x));

  SUBCASE("zero base, hand computation at d=k=2, r=1") {
    LoraAdapter h{Matrix(1, 2, std::vector<double>{1.0, 2.0}), Matrix(2, 1, std::vector<double>{3.0, 4.0}), 16.0};
    const auto zero = quantize_tensor("z", Matrix(2, 2, 0.0));
    CHECK(lora_forward(std::vector<double>{1.0, 1.0}, zero, h) == std::vector<double>{144.0, 192.0});
  }
  SUBCASE("linearity") {
    for (auto& v : adapter.b.data()) v = rng.gaussian();
    const auto x2 = gaussian_sample(rng, 5, 0.0, 1.0);
    std::vector<double> sum(5);
    for (std::size_t i = 0; i < 5; ++i) sum[i] = x[i] + x2[i];
    const auto y1 = lora_forward(x, base, adapter), y2 = lora_forward(x2, base, adapter);
    const auto ys = lora_forward(sum, base, adapter);
    for (std::size_t i = 0; i < 6; ++i) CHECK(std::abs(ys[i] - y1[i] - y2[i]) <= 1e-9);
  }
  SUBCASE("shape mismatch") {
    CHECK(error_of([&] { lora_forward(std::vector<double>(4, 0.0), base, adapter); }) == "invalid-input");
  }
}

TEST_CASE("lora_merge examples") {
  RngStream rng(7, 7);
  const auto base = quantize_tensor("w", random_matrix(16, 12, rng));
  auto adapter = lora_init(16, 12, 3, rng);
  CHECK(lora_merge(base, adapter) == base.dequantize());
  for (auto& v : adapter.b.data()) v = 0.1 * rng.gaussian();
  const Matrix merged = lora_merge(base, adapter);
  for (int i = 0; i < 100; ++i) {
    const auto x = gaussian_sample(rng, 12, 0.0, 1.0);
    const auto a = merged.matvec(x), b = lora_forward(x, base, adapter);
    for (std::size_t j = 0; j < a.size(); ++j) CHECK(std::abs(a[j] - b[j]) <= 1e-9 * std::max(1.0, std::abs(b[j])));
  }
  // Re-quantizing the merged weights moves each weight by at most half a lattice step.
  const auto requant = quantize_tensor("m", merged);
  const Matrix back = requant.dequantize();
  for (std::size_t i = 0; i < merged.size(); ++i)
    CHECK(std::abs(back.data()[i] - merged.data()[i]) <= requant.blocks[i / 64].absmax / 14.0 + 1e-9);
}

TEST_CASE("memory accounting reproduces the reference table") {
  const std::vector<ModelSpecEntry> blip{{"blip", 247.41e6, Precision::Fp32}};
  const auto r1 = account_memory(blip);
  CHECK(r1.memory_gib_2dp() == "0.92");
  CHECK(r1.total_params_millions == doctest::Approx(247.41));
  const std::vector<ModelSpecEntry> monkey{{"monkey", 9708.05e6, Precision::Fp16}};
  const auto r2 = account_memory(monkey);
  CHECK((r2.memory_gib_2dp() == "18.08" || r2.memory_gib_2dp() == "18.09"));

  const double f = solve_int4_fraction(204.95e6, 0.35);
  CHECK(f == doctest::Approx(0.619).epsilon(0.002));
  const std::vector<ModelSpecEntry> mixed{{"q", f * 204.95e6, Precision::Int4}, {"c", (1 - f) * 204.95e6, Precision::Fp32}};
  const auto r3 = account_memory(mixed);
  CHECK(r3.memory_gib_2dp() == "0.35");
  CHECK(r3.int4_scale_overhead_gib > 0.0);
  const double cut1 = 1.0 - 0.35 / 0.92, cut2 = 1.0 - 0.35 / 18.09;
  CHECK(cut1 >= 0.61);
  CHECK(cut1 <= 0.63);
  CHECK(cut2 >= 0.98);
  CHECK(cut2 <= 0.985);
}

TEST_CASE("model spec parsing") {
  const auto spec = parse_model_spec("# comment\nvision 100 fp32\n\ntext 50 fp16  # trailing\nhead 64 int4\n");
  REQUIRE(spec.size() == 3);
  CHECK(spec[1].name == "text");
  CHECK(spec[1].count == 50.0);
  CHECK(spec[2].precision == Precision::Int4);
  const auto r = account_memory(spec);
  CHECK(r.memory_gib * std::exp2(30) == doctest::Approx(100 * 4 + 50 * 2 + 64 * 0.5));
  CHECK(error_of([] { parse_model_spec("a 10 bf16\n"); }) == "invalid-spec");
  CHECK(error_of([] { parse_model_spec("a ten fp32\n"); }) == "invalid-spec");
  CHECK(error_of([] { parse_model_spec("a 10\n"); }) == "invalid-spec");
  CHECK(error_of([] { parse_precision("int8"); }) == "invalid-spec");
  CHECK(precision_bytes(Precision::Int4) == 0.5);
}

}  // TEST_SUITE
