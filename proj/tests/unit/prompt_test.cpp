#include <filesystem>
#include <set>

#include "core/prompt.hpp"
#include "helpers.hpp"

using namespace semcomm;
using semcomm::test::error_of;
using semcomm::test::random_descriptor;

namespace {
const std::vector<std::string> kLabels{"cat", "dog", "tree", "sky", "person"};
const std::string kZeroPrompt = "scene mean=0,0,0 lum=0 tex=0.0 colors= boxes= labels=";
}  // namespace

TEST_SUITE("prompt_codec") {

TEST_CASE("zero descriptor serializes to the empty-field prompt") {
  const auto p = serialize_prompt(TextDescriptor{});
  CHECK(p.text == kZeroPrompt);
  CHECK(p.token_count == prompt_token_count(TextDescriptor{}));
}

TEST_CASE("uniform gray descriptor") {
  TextDescriptor d;
  d.mean_rgb = {128, 128, 128};
  d.luminance_mean = 128;
  d.dominant_colors = {{128, 128, 128}};
  const auto text = serialize_prompt(d).text;
  CHECK(text.rfind("scene mean=128,128,128 lum=128 tex=0.0 ", 0) == 0);
  CHECK(text.find("colors=128,128,128") != std::string::npos);
}

TEST_CASE("parsing the zero prompt gives the zero descriptor") {
  const auto parsed = parse_prompt(kZeroPrompt);
  CHECK(parsed.descriptor == quantize_descriptor(TextDescriptor{}));
  CHECK_FALSE(parsed.ignored_unknown_fields);
}

TEST_CASE("truncated triple is a parse error at its offset") {
  try {
    parse_prompt("scene mean=1,2");
    FAIL("expected a parse error");
  } catch (const ParseError& e) {
    CHECK(e.code() == ErrorCode::ParseError);
    CHECK(e.offset() == 14);
    CHECK(e.expected() == "','");
  }
}

TEST_CASE("labels with reserved characters are rejected") {
  for (const std::string bad : {"a b", "a=b", "a,b", "a;b", "a\tb", ""}) {
    TextDescriptor d;
    d.labels = {bad};
    CHECK_MESSAGE(error_of([&] { serialize_prompt(d); }) == "invalid-label", bad);
  }
}

TEST_CASE("unknown fields are ignored and reported") {
  const auto parsed = parse_prompt(kZeroPrompt + " mood=calm");
  CHECK(parsed.ignored_unknown_fields);
  CHECK(parsed.descriptor == quantize_descriptor(TextDescriptor{}));
}

TEST_CASE("round trip and idempotent canonicalization on random descriptors") {
  RngStream rng(17, 0);
  for (int i = 0; i < 2000; ++i) {
    const auto d = random_descriptor(rng, kLabels);
    const auto s1 = serialize_prompt(d);
    const auto parsed = parse_prompt(s1.text).descriptor;
    CHECK(parsed == quantize_descriptor(d));
    const auto s2 = serialize_prompt(parsed);
    CHECK(s2.text == s1.text);
    CHECK(s2.token_count == s1.token_count);
    CHECK(parsed.dim_n == s1.token_count);
  }
}

TEST_CASE("texture uses one decimal with round-half-even") {
  TextDescriptor d;
  d.texture_energy = 1.25;
  CHECK(serialize_prompt(d).text.find("tex=1.2 ") != std::string::npos);
  d.texture_energy = 1.35;  // not exactly representable; nearest is above 1.35
  CHECK(serialize_prompt(d).text.find("tex=1.4 ") != std::string::npos);
}

TEST_CASE("token stream of the zero prompt") {
  const std::vector<std::string> expected{
      "mean=",      "mean.r.2:0", "mean.r.1:0", "mean.r.0:0", "mean.g.2:0", "mean.g.1:0", "mean.g.0:0",
      "mean.b.2:0", "mean.b.1:0", "mean.b.0:0", "lum=",       "lum.2:0",    "lum.1:0",    "lum.0:0",
      "tex=",       "tex.3:0",    "tex.2:0",    "tex.1:0",    "tex.0:0",    "tex.f.0:0",  "colors=",
      "colors.n:0", "boxes=",     "boxes.n:0",  "labels=",    "labels.n:0"};
  CHECK(prompt_tokens(quantize_descriptor(TextDescriptor{})) == expected);

  const auto vocab = Vocabulary::standard(kLabels);
  const auto ids = tokenize(serialize_prompt(TextDescriptor{}), vocab);
  REQUIRE(ids.size() == expected.size());
  for (std::size_t i = 0; i < ids.size(); ++i) CHECK(vocab.token(ids[i]) == expected[i]);
  // The six field keywords appear in grammar order.
  std::vector<std::string> keywords;
  for (auto id : ids)
    if (vocab.token(id).back() == '=') keywords.push_back(vocab.token(id));
  CHECK(keywords == std::vector<std::string>{"mean=", "lum=", "tex=", "colors=", "boxes=", "labels="});
}

TEST_CASE("tokenize and detokenize are inverse") {
  const auto vocab = Vocabulary::standard(kLabels);
  RngStream rng(5, 5);
  for (int i = 0; i < 300; ++i) {
    const auto p = serialize_prompt(random_descriptor(rng, kLabels));
    const auto ids = tokenize(p, vocab);
    CHECK(ids.size() == p.token_count);
    const auto back = detokenize(ids, vocab);
    CHECK(back.text == p.text);
    CHECK(tokenize(back, vocab) == ids);
  }
}

TEST_CASE("vocabulary invariants and file round trip") {
  const auto vocab = Vocabulary::standard(kLabels);
  std::set<std::string> unique(vocab.tokens().begin(), vocab.tokens().end());
  CHECK(unique.size() == vocab.size());
  for (std::uint32_t i = 0; i < vocab.size(); ++i) CHECK(vocab.find(vocab.token(i)) == i);
  CHECK_FALSE(vocab.find("no-such-token").has_value());
  CHECK(vocab.slot_candidates("mean.r.2").size() == 10);  // every digit slot offers 0..9
  CHECK(vocab.slot_candidates("not-a-slot").empty());

  const auto path = std::filesystem::temp_directory_path() / "semcomm_vocab_test.txt";
  vocab.save(path);
  const auto loaded = Vocabulary::load(path);
  std::filesystem::remove(path);
  CHECK(loaded.tokens() == vocab.tokens());
}

TEST_CASE("out-of-vocabulary tokens are named") {
  TextDescriptor d;
  d.labels = {"zebra"};
  const auto vocab = Vocabulary::standard(kLabels);
  try {
    tokenize(serialize_prompt(d), vocab);
    FAIL("expected an oov error");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::OovError);
    CHECK(std::string(e.what()).find("zebra") != std::string::npos);
  }
}

TEST_CASE("malformed token sequences are rejected by detokenize") {
  const auto vocab = Vocabulary::standard(kLabels);
  const auto ids = tokenize(serialize_prompt(TextDescriptor{}), vocab);
  std::vector<std::uint32_t> shuffled(ids.rbegin(), ids.rend());
  CHECK(error_of([&] { detokenize(shuffled, vocab); }) == "invalid-input");
  std::vector<std::uint32_t> cut(ids.begin(), ids.begin() + 5);
  CHECK(error_of([&] { detokenize(cut, vocab); }) == "invalid-input");
}

TEST_CASE("parser totality on mutated and random inputs") {
  RngStream rng(77, 1);
  const std::string alphabet = "scenemaluxtbolrsbyp=,;.0123456789 -\t\n\xff";
  const auto base = serialize_prompt(random_descriptor(rng, kLabels)).text;
  for (int i = 0; i < 20000; ++i) {
    std::string s = base;
    if (i % 2 == 0) {
      const auto edits = 1 + rng.next_u64() % 4;
      for (std::uint64_t e = 0; e < edits && !s.empty(); ++e) {
        const auto pos = rng.next_u64() % s.size();
        if (rng.next_u64() % 2) s[pos] = alphabet[rng.next_u64() % alphabet.size()];
        else s.erase(pos, 1 + rng.next_u64() % 3);
      }
    } else {
      s.resize(rng.next_u64() % 80);
      for (auto& c : s) c = static_cast<char>(rng.next_u64() & 0xFF);
    }
    try {
      parse_prompt(s);
    } catch (const ParseError& e) {
      CHECK(e.offset() <= s.size());
    } catch (const Error& e) {
      FAIL("unexpected error kind: " << error_code_name(e.code()));
    }
  }
}

}  // TEST_SUITE
