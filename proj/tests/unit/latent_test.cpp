#include "core/latent.hpp"
#include "core/prompt.hpp"
#include "helpers.hpp"

using namespace semcomm;
using semcomm::test::error_of;
using semcomm::test::max_abs_diff;
using semcomm::test::random_descriptor;

namespace {

const std::vector<std::string> kLabels{"cat", "dog", "tree"};

std::vector<double> random_vector(RngStream& rng, std::size_t n) {
  std::vector<double> v(n);
  for (auto& x : v) x = rng.uniform();
  return v;
}

double max_identity_error(const Matrix& m) {
  double e = 0.0;
  for (std::size_t r = 0; r < m.rows(); ++r)
    for (std::size_t c = 0; c < m.cols(); ++c) e = std::max(e, std::abs(m(r, c) - (r == c ? 1.0 : 0.0)));
  return e;
}

}  // namespace

TEST_SUITE("latent_codec") {

TEST_CASE("square projection is orthogonal") {
  const auto p = ProjectionPair::build(8, 8, 3);
  const Matrix f = p.forward_matrix();
  CHECK(max_identity_error(f.matmul(f.transpose())) <= 1e-9);
  CHECK(max_identity_error(p.backward_matrix().matmul(f)) <= 1e-9);
  RngStream rng(1, 1);
  const auto x = random_vector(rng, 8);
  CHECK(max_abs_diff(p.backward(p.forward(x)), x) <= 1e-9);
}

TEST_CASE("wide projection has orthonormal rows") {
  for (auto [m, k1] : std::vector<std::pair<std::size_t, std::size_t>>{{12, 4}, {200, 150}, {300, 7}}) {
    const auto p = ProjectionPair::build(m, k1, 11);
    const Matrix f = p.forward_matrix();
    CHECK(f.rows() == k1);
    CHECK(f.cols() == m);
    CHECK(max_identity_error(f.matmul(f.transpose())) <= 1e-9);
  }
}

TEST_CASE("projection is deterministic per seed") {
  CHECK(ProjectionPair::build(70, 30, 5) == ProjectionPair::build(70, 30, 5));
  CHECK_FALSE(ProjectionPair::build(70, 30, 5) == ProjectionPair::build(70, 30, 6));
  CHECK(error_of([] { ProjectionPair::build(4, 5, 1); }) == "invalid-config");
}

TEST_CASE("backward after forward is a contracting orthogonal projector") {
  const auto p = ProjectionPair::build(96, 40, 8);
  const Matrix f = p.forward_matrix();
  const Matrix proj = f.transpose().matmul(f);
  const Matrix sq = proj.matmul(proj);
  double err = 0.0;
  for (std::size_t i = 0; i < proj.size(); ++i) err = std::max(err, std::abs(sq.data()[i] - proj.data()[i]));
  CHECK(err <= 1e-9);
  RngStream rng(2, 2);
  for (int i = 0; i < 1000; ++i) {
    const auto x = gaussian_sample(rng, 96, 0.0, 1.0);
    CHECK(l2_norm(p.backward(p.forward(x))) <= l2_norm(x) + 1e-9);
  }
}

TEST_CASE("power_normalize examples") {
  CHECK(power_normalize(std::vector<double>{2, 0, 0, 0}) == std::vector<double>{2, 0, 0, 0});
  CHECK(power_normalize(std::vector<double>{1, 1, 1, 1}) == std::vector<double>{1, 1, 1, 1});
  RngStream rng(4, 4);
  for (int i = 0; i < 100; ++i) {
    const auto v = power_normalize(gaussian_sample(rng, 1 + rng.next_u64() % 500, 0.3, 2.0));
    CHECK(std::abs(mean_square(v) - 1.0) <= 1e-12);
  }
  CHECK(error_of([] { power_normalize(std::vector<double>{0, 0, 0}); }) == "degenerate-input");
  CHECK(error_of([] { power_normalize(std::vector<double>{}); }) == "degenerate-input");
}

TEST_CASE("hash embedding of three tokens, evaluated by hand") {
  const std::vector<std::uint32_t> ids{3, 17, 1234};
  const auto e = hash_embed(ids, 8);
  std::vector<double> expected(8, 0.0);
  for (auto id : ids) {
    const auto coord = (static_cast<std::uint64_t>(id) * 2654435761ULL) % 8;
    const double sign = (mix64(id ^ 0x5EED5EED5EED5EEDULL) >> 63) ? -1.0 : 1.0;
    expected[coord] += sign / std::sqrt(3.0);
  }
  CHECK(e == expected);
}

TEST_CASE("hash coordinates are injective once k2 covers the vocabulary") {
  const auto vocab = Vocabulary::standard(kLabels);
  for (std::size_t k2 : {vocab.size(), vocab.size() + 1, 2 * vocab.size() + 3}) {
    std::vector<int> used(k2, 0);
    for (std::uint32_t id = 0; id < vocab.size(); ++id) ++used[hash_coordinate(id, k2)];
    CHECK(*std::max_element(used.begin(), used.end()) == 1);
  }
}

TEST_CASE("analog encode: orthogonal image part and independent text energy") {
  const auto vocab = Vocabulary::standard(kLabels);
  RngStream rng(6, 6);
  const auto key = random_vector(rng, 24);
  const auto prompt = serialize_prompt(random_descriptor(rng, kLabels));
  const CodecConfig cfg{24, 24, 64, 9, TextMode::Analog};
  const auto proj = ProjectionPair::build(24, 24, 9);
  const auto lat = encode(key, prompt, cfg, vocab, proj);
  REQUIRE(lat.values.size() == cfg.k());
  CHECK(std::abs(lat.power() - 1.0) <= 1e-9);

  std::vector<double> image(lat.values.begin(), lat.values.begin() + 24);
  for (auto& x : image) x /= lat.scale;
  CHECK(max_abs_diff(proj.backward(image), key) <= 1e-9);

  std::vector<double> text(lat.values.begin() + 24, lat.values.end());
  for (auto& x : text) x /= lat.scale;
  CHECK(max_abs_diff(text, hash_embed(tokenize(prompt, vocab), 64)) <= 1e-12);
}

TEST_CASE("zero key features give a zero image part") {
  const auto vocab = Vocabulary::standard(kLabels);
  const CodecConfig cfg{12, 6, 32, 1, TextMode::Analog};
  const auto lat = encode(std::vector<double>(12, 0.0), serialize_prompt(TextDescriptor{}), cfg, vocab,
                          ProjectionPair::build(12, 6, 1));
  for (std::size_t i = 0; i < 6; ++i) CHECK(lat.values[i] == 0.0);
  CHECK(std::abs(lat.power() - 1.0) <= 1e-9);

  const CodecConfig digital{12, 6, 0, 1, TextMode::Digital};
  const auto silent = encode(std::vector<double>(12, 0.0), serialize_prompt(TextDescriptor{}), digital, vocab,
                             ProjectionPair::build(12, 6, 1));
  CHECK(silent.scale == 0.0);
  CHECK(silent.values == std::vector<double>(6, 0.0));
}

TEST_CASE("noiseless round trip recovers features and descriptor") {
  const auto vocab = Vocabulary::standard(kLabels);
  RngStream rng(8, 8);
  for (auto mode : {TextMode::Analog, TextMode::Digital}) {
    for (int i = 0; i < 20; ++i) {
      const auto key = random_vector(rng, 30);
      const auto d = random_descriptor(rng, kLabels);
      const auto prompt = serialize_prompt(d);
      // Analog text is exact only when no two vocabulary tokens share a coordinate.
      const CodecConfig cfg{30, 30, mode == TextMode::Analog ? vocab.size() : 0, 2, mode};
      const auto proj = ProjectionPair::build(30, 30, 2);
      const auto lat = encode(key, prompt, cfg, vocab, proj);
      const auto out = split_and_decode(lat.values, lat.scale, cfg, vocab, proj,
                                        mode == TextMode::Digital ? std::optional<std::string_view>(prompt.text)
                                                                  : std::nullopt);
      CHECK(max_abs_diff(out.key_features, key) <= 1e-9);
      CHECK(out.descriptor == quantize_descriptor(d));
    }
  }
}

TEST_CASE("k1 < m recovers the orthogonal projection of the features") {
  const auto vocab = Vocabulary::standard(kLabels);
  RngStream rng(9, 9);
  const auto key = random_vector(rng, 40);
  const auto prompt = serialize_prompt(TextDescriptor{});
  const CodecConfig cfg{40, 16, 0, 3, TextMode::Digital};
  const auto proj = ProjectionPair::build(40, 16, 3);
  const auto lat = encode(key, prompt, cfg, vocab, proj);
  const auto out = split_and_decode(lat.values, lat.scale, cfg, vocab, proj, prompt.text);
  const Matrix f = proj.forward_matrix();
  CHECK(max_abs_diff(out.key_features, f.transpose().matmul(f).matvec(key)) <= 1e-9);
}

TEST_CASE("analog text decoding is total under heavy noise") {
  const auto vocab = Vocabulary::standard(kLabels);
  RngStream rng(10, 10);
  const CodecConfig cfg{12, 12, 128, 4, TextMode::Analog};
  const auto proj = ProjectionPair::build(12, 12, 4);
  for (int i = 0; i < 20; ++i) {
    const auto lat = encode(random_vector(rng, 12), serialize_prompt(random_descriptor(rng, kLabels)), cfg, vocab, proj);
    auto noisy = lat.values;
    for (auto& x : noisy) x += 10.0 * rng.gaussian();  // -20 dB
    const auto out = split_and_decode(noisy, lat.scale, cfg, vocab, proj);
    const auto text = serialize_prompt(out.descriptor);
    CHECK(parse_prompt(text.text).descriptor == out.descriptor);
  }
}

TEST_CASE("codec input validation") {
  const auto vocab = Vocabulary::standard(kLabels);
  const CodecConfig cfg{10, 5, 8, 1, TextMode::Analog};
  const auto proj = ProjectionPair::build(10, 5, 1);
  const auto prompt = serialize_prompt(TextDescriptor{});
  CHECK(error_of([&] { encode(std::vector<double>(9, 0.5), prompt, cfg, vocab, proj); }) == "invalid-input");
  CHECK(error_of([&] { split_and_decode(std::vector<double>(12, 0.0), 1.0, cfg, vocab, proj); }) == "invalid-input");
  CHECK(error_of([] { CodecConfig{10, 11, 8, 1, TextMode::Analog}.validate(); }) == "invalid-config");
  CHECK(error_of([] { CodecConfig{10, 5, 0, 1, TextMode::Analog}.validate(); }) == "invalid-config");
  const CodecConfig digital{10, 5, 0, 1, TextMode::Digital};
  CHECK(error_of([&] { split_and_decode(std::vector<double>(5, 0.0), 1.0, digital, vocab, proj); }) ==
        "invalid-input");
}

TEST_CASE("key feature noise variance formula") {
  CHECK(key_feature_noise_variance(0.5, 2.0, 4.0, 10, 20) == doctest::Approx(0.25 / 64.0 * 0.5));
  CHECK(key_feature_noise_variance(0.0, 1.0, 1.0, 10, 10) == 0.0);
  CHECK(key_feature_noise_variance(1.0, 1.0, 0.0, 10, 10) == 0.0);
}

}  // TEST_SUITE
