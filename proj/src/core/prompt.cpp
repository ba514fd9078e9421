#include "core/prompt.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <fstream>

#include "core/errors.hpp"

namespace semcomm {

namespace {

constexpr std::uint32_t kMaxBoxCoord = 65535;
constexpr double kMaxTexture = 9999.9;
constexpr std::array<std::string_view, 6> kKeywords = {"mean=", "lum=", "tex=", "colors=", "boxes=", "labels="};
constexpr std::array<char, 3> kChannelNames = {'r', 'g', 'b'};
constexpr std::array<char, 4> kBoxFields = {'x', 'y', 'w', 'h'};

bool is_reserved(char c) {
  return c == '=' || c == ',' || c == ';' || c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\v' ||
         c == '\f';
}

void validate_label(const std::string& label) {
  if (label.empty()) throw Error(ErrorCode::InvalidLabel, "label must not be empty");
  for (char c : label) {
    if (is_reserved(c)) {
      throw Error(ErrorCode::InvalidLabel, "label '" + label + "' contains a reserved character");
    }
  }
}

std::uint8_t clamp_u8(double v) { return static_cast<std::uint8_t>(std::clamp(std::nearbyint(v), 0.0, 255.0)); }

// Texture in integer tenths.
std::uint32_t texture_tenths(double tex) {
  return static_cast<std::uint32_t>(std::nearbyint(std::clamp(tex, 0.0, kMaxTexture) * 10.0));
}

std::string slot_name(std::string_view prefix, int position) {
  return std::string(prefix) + "." + std::to_string(position);
}

std::string indexed(std::string_view field, std::size_t i) {
  return std::string(field) + "[" + std::to_string(i) + "]";
}

// Emits fixed-width digit tokens for `value`.
void emit_digits(std::vector<std::string>& out, std::string_view prefix, std::uint32_t value, int width) {
  std::uint32_t scale = 1;
  for (int p = 1; p < width; ++p) scale *= 10;
  for (int p = width - 1; p >= 0; --p) {
    out.push_back(slot_name(prefix, p) + ":" + std::to_string((value / scale) % 10));
    scale /= 10;
  }
}

std::uint32_t read_digits(SlotSource& src, std::string_view prefix, int width) {
  std::uint32_t v = 0;
  for (int p = width - 1; p >= 0; --p) {
    const std::string s = src.value(slot_name(prefix, p));
    if (s.size() != 1 || s[0] < '0' || s[0] > '9') {
      throw Error(ErrorCode::InvalidInput, "slot " + slot_name(prefix, p) + " expects a digit, got '" + s + "'");
    }
    v = v * 10 + static_cast<std::uint32_t>(s[0] - '0');
  }
  return v;
}

std::size_t read_count(SlotSource& src, const std::string& slot, std::size_t max) {
  const std::string s = src.value(slot);
  std::size_t v = 0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size()) {
    throw Error(ErrorCode::InvalidInput, "slot " + slot + " expects a count, got '" + s + "'");
  }
  return std::min(v, max);
}

// Cursor-based recursive-descent parser for one prompt line.
class PromptParser {
 public:
  explicit PromptParser(std::string_view text) : s_(text) {}

  ParsedPrompt parse() {
    ParsedPrompt out;
    TextDescriptor& d = out.descriptor;
    literal("scene", "keyword 'scene'");
    separator();
    literal("mean=", "field 'mean='");
    for (std::size_t c = 0; c < 3; ++c) {
      if (c) literal(",", "','");
      d.mean_rgb[c] = static_cast<double>(uint_value(255));
    }
    separator();
    literal("lum=", "field 'lum='");
    d.luminance_mean = static_cast<double>(uint_value(255));
    separator();
    literal("tex=", "field 'tex='");
    d.texture_energy = tex_value();
    separator();
    literal("colors=", "field 'colors='");
    list([&] {
      Rgb rgb;
      rgb.r = static_cast<std::uint8_t>(uint_value(255));
      literal(",", "','");
      rgb.g = static_cast<std::uint8_t>(uint_value(255));
      literal(",", "','");
      rgb.b = static_cast<std::uint8_t>(uint_value(255));
      d.dominant_colors.push_back(rgb);
    });
    separator();
    literal("boxes=", "field 'boxes='");
    list([&] {
      Box b;
      b.x = uint_value(kMaxBoxCoord);
      literal(",", "','");
      b.y = uint_value(kMaxBoxCoord);
      literal(",", "','");
      b.w = uint_value(kMaxBoxCoord);
      literal(",", "','");
      b.h = uint_value(kMaxBoxCoord);
      d.region_boxes.push_back(b);
    });
    separator();
    literal("labels=", "field 'labels='");
    list([&] { d.labels.push_back(label()); });

    while (true) {
      const std::size_t before = pos_;
      skip_blank();
      skip_line_end();
      if (pos_ == s_.size()) break;
      if (pos_ == before) fail("whitespace");
      unknown_field();
      out.ignored_unknown_fields = true;
    }
    d.dim_n = prompt_token_count(d);
    return out;
  }

 private:
  [[noreturn]] void fail(const std::string& expected) const {
    throw ParseError(pos_, expected, "prompt parse error at byte " + std::to_string(pos_) + ": expected " + expected);
  }

  bool at_end() const { return pos_ >= s_.size(); }
  bool at_blank() const { return !at_end() && (s_[pos_] == ' ' || s_[pos_] == '\t'); }
  bool at_field_end() const { return at_end() || at_blank() || s_[pos_] == '\r' || s_[pos_] == '\n'; }

  void literal(std::string_view lit, const char* expected) {
    if (s_.substr(pos_, lit.size()) != lit) fail(expected);
    pos_ += lit.size();
  }

  void separator() {
    if (!at_blank()) fail("whitespace");
    skip_blank();
  }

  void skip_blank() {
    while (at_blank()) ++pos_;
  }

  void skip_line_end() {
    while (!at_end() && (s_[pos_] == '\r' || s_[pos_] == '\n' || s_[pos_] == ' ' || s_[pos_] == '\t')) ++pos_;
  }

  std::uint32_t uint_value(std::uint32_t max) {
    const std::size_t start = pos_;
    std::uint64_t v = 0;
    while (!at_end() && s_[pos_] >= '0' && s_[pos_] <= '9') {
      v = v * 10 + static_cast<std::uint64_t>(s_[pos_] - '0');
      if (v > max) {
        pos_ = start;
        fail("integer in [0," + std::to_string(max) + "]");
      }
      ++pos_;
    }
    if (pos_ == start) fail("integer");
    return static_cast<std::uint32_t>(v);
  }

  double tex_value() {
    const std::uint32_t whole = uint_value(9999);
    literal(".", "'.'");
    if (at_end() || s_[pos_] < '0' || s_[pos_] > '9') fail("decimal digit");
    const std::uint32_t tenth = static_cast<std::uint32_t>(s_[pos_++] - '0');
    return static_cast<double>(whole * 10 + tenth) / 10.0;
  }

  std::string label() {
    const std::size_t start = pos_;
    while (!at_end() && !is_reserved(s_[pos_])) ++pos_;
    if (pos_ == start) fail("label");
    return std::string(s_.substr(start, pos_ - start));
  }

  template <typename Item>
  void list(Item item) {
    if (at_field_end()) return;
    while (true) {
      item();
      if (at_field_end()) return;
      literal(";", "';' or whitespace");
    }
  }

  void unknown_field() {
    const std::size_t start = pos_;
    while (!at_end() && (std::isalnum(static_cast<unsigned char>(s_[pos_])) || s_[pos_] == '_' ||
                         s_[pos_] == '.' || s_[pos_] == '-'))
      ++pos_;
    if (pos_ == start) fail("field name");
    literal("=", "'='");
    while (!at_field_end()) ++pos_;
  }

  std::string_view s_;
  std::size_t pos_ = 0;
};

class TokenSource : public SlotSource {
 public:
  TokenSource(std::span<const std::uint32_t> ids, const Vocabulary& vocab) : ids_(ids), vocab_(vocab) {}

  void keyword(std::string_view kw) override {
    if (next() != kw) throw Error(ErrorCode::InvalidInput, "token stream: expected keyword " + std::string(kw));
  }

  std::string value(const std::string& slot) override {
    const std::string& tok = next();
    if (tok.size() <= slot.size() || tok.compare(0, slot.size(), slot) != 0 || tok[slot.size()] != ':') {
      throw Error(ErrorCode::InvalidInput, "token stream: expected slot " + slot + ", got " + tok);
    }
    return tok.substr(slot.size() + 1);
  }

  bool exhausted() const { return pos_ == ids_.size(); }

 private:
  const std::string& next() {
    if (pos_ >= ids_.size()) throw Error(ErrorCode::InvalidInput, "token stream ended early");
    const auto id = ids_[pos_++];
    if (id >= vocab_.size()) throw Error(ErrorCode::InvalidInput, "token id " + std::to_string(id) + " out of range");
    return vocab_.token(id);
  }

  std::span<const std::uint32_t> ids_;
  const Vocabulary& vocab_;
  std::size_t pos_ = 0;
};

}  // namespace

TextDescriptor quantize_descriptor(const TextDescriptor& d) {
  TextDescriptor q = d;
  for (auto& v : q.mean_rgb) v = clamp_u8(v);
  q.luminance_mean = clamp_u8(d.luminance_mean);
  q.texture_energy = static_cast<double>(texture_tenths(d.texture_energy)) / 10.0;
  q.dim_n = prompt_token_count(q);
  return q;
}

PromptString serialize_prompt(const TextDescriptor& d) {
  for (const auto& l : d.labels) validate_label(l);
  const TextDescriptor q = quantize_descriptor(d);
  std::string s = "scene mean=";
  for (std::size_t c = 0; c < 3; ++c) {
    if (c) s += ',';
    s += std::to_string(static_cast<int>(q.mean_rgb[c]));
  }
  s += " lum=" + std::to_string(static_cast<int>(q.luminance_mean));
  const auto tenths = texture_tenths(q.texture_energy);
  s += " tex=" + std::to_string(tenths / 10) + "." + std::to_string(tenths % 10);
  s += " colors=";
  for (std::size_t i = 0; i < q.dominant_colors.size(); ++i) {
    const auto& c = q.dominant_colors[i];
    if (i) s += ';';
    s += std::to_string(c.r) + "," + std::to_string(c.g) + "," + std::to_string(c.b);
  }
  s += " boxes=";
  for (std::size_t i = 0; i < q.region_boxes.size(); ++i) {
    const auto& b = q.region_boxes[i];
    if (i) s += ';';
    s += std::to_string(b.x) + "," + std::to_string(b.y) + "," + std::to_string(b.w) + "," + std::to_string(b.h);
  }
  s += " labels=";
  for (std::size_t i = 0; i < q.labels.size(); ++i) {
    if (i) s += ';';
    s += q.labels[i];
  }
  return PromptString{std::move(s), q.dim_n};
}

ParsedPrompt parse_prompt(std::string_view text) { return PromptParser(text).parse(); }

std::size_t prompt_token_count(const TextDescriptor& d) {
  return kKeywords.size() + 9 + 3 + 5 + (1 + 9 * d.dominant_colors.size()) + (1 + 20 * d.region_boxes.size()) +
         (1 + d.labels.size());
}

std::vector<std::string> prompt_tokens(const TextDescriptor& q) {
  std::vector<std::string> out;
  out.reserve(prompt_token_count(q));
  out.emplace_back(kKeywords[0]);
  for (std::size_t c = 0; c < 3; ++c)
    emit_digits(out, std::string("mean.") + kChannelNames[c], clamp_u8(q.mean_rgb[c]), 3);
  out.emplace_back(kKeywords[1]);
  emit_digits(out, "lum", clamp_u8(q.luminance_mean), 3);
  out.emplace_back(kKeywords[2]);
  const auto tenths = texture_tenths(q.texture_energy);
  emit_digits(out, "tex", tenths / 10, 4);
  emit_digits(out, "tex.f", tenths % 10, 1);

  out.emplace_back(kKeywords[3]);
  out.push_back("colors.n:" + std::to_string(q.dominant_colors.size()));
  for (std::size_t i = 0; i < q.dominant_colors.size(); ++i) {
    const auto& c = q.dominant_colors[i];
    const std::array<std::uint32_t, 3> v = {c.r, c.g, c.b};
    for (std::size_t ch = 0; ch < 3; ++ch) emit_digits(out, indexed("colors", i) + "." + kChannelNames[ch], v[ch], 3);
  }
  out.emplace_back(kKeywords[4]);
  out.push_back("boxes.n:" + std::to_string(q.region_boxes.size()));
  for (std::size_t i = 0; i < q.region_boxes.size(); ++i) {
    const auto& b = q.region_boxes[i];
    const std::array<std::uint32_t, 4> v = {b.x, b.y, b.w, b.h};
    for (std::size_t f = 0; f < 4; ++f) emit_digits(out, indexed("boxes", i) + "." + kBoxFields[f], v[f], 5);
  }
  out.emplace_back(kKeywords[5]);
  out.push_back("labels.n:" + std::to_string(q.labels.size()));
  for (std::size_t i = 0; i < q.labels.size(); ++i) out.push_back(indexed("labels", i) + ":" + q.labels[i]);
  return out;
}

TextDescriptor assemble_descriptor(SlotSource& src) {
  TextDescriptor d;
  src.keyword(kKeywords[0]);
  for (std::size_t c = 0; c < 3; ++c)
    d.mean_rgb[c] = std::min<std::uint32_t>(255, read_digits(src, std::string("mean.") + kChannelNames[c], 3));
  src.keyword(kKeywords[1]);
  d.luminance_mean = std::min<std::uint32_t>(255, read_digits(src, "lum", 3));
  src.keyword(kKeywords[2]);
  const std::uint32_t whole = read_digits(src, "tex", 4);
  const std::uint32_t tenth = read_digits(src, "tex.f", 1);
  d.texture_energy = static_cast<double>(whole * 10 + tenth) / 10.0;

  src.keyword(kKeywords[3]);
  const std::size_t nc = read_count(src, "colors.n", kMaxDominantColors);
  for (std::size_t i = 0; i < nc; ++i) {
    std::array<std::uint8_t, 3> v{};
    for (std::size_t ch = 0; ch < 3; ++ch)
      v[ch] = static_cast<std::uint8_t>(
          std::min<std::uint32_t>(255, read_digits(src, indexed("colors", i) + "." + kChannelNames[ch], 3)));
    d.dominant_colors.push_back(Rgb{v[0], v[1], v[2]});
  }
  src.keyword(kKeywords[4]);
  const std::size_t nb = read_count(src, "boxes.n", kMaxRegionBoxes);
  for (std::size_t i = 0; i < nb; ++i) {
    std::array<std::uint32_t, 4> v{};
    for (std::size_t f = 0; f < 4; ++f)
      v[f] = std::min(kMaxBoxCoord, read_digits(src, indexed("boxes", i) + "." + kBoxFields[f], 5));
    d.region_boxes.push_back(Box{v[0], v[1], v[2], v[3]});
  }
  src.keyword(kKeywords[5]);
  const std::size_t nl = read_count(src, "labels.n", kMaxLabels);
  for (std::size_t i = 0; i < nl; ++i) d.labels.push_back(src.value(indexed("labels", i)));
  d.dim_n = prompt_token_count(d);
  return d;
}

Vocabulary Vocabulary::standard(const std::vector<std::string>& labels) {
  std::vector<std::string> toks(kKeywords.begin(), kKeywords.end());
  auto digit_slots = [&](const std::string& prefix, int width) {
    for (int p = width - 1; p >= 0; --p)
      for (int d = 0; d < 10; ++d) toks.push_back(slot_name(prefix, p) + ":" + std::to_string(d));
  };
  auto count_slot = [&](const std::string& slot, std::size_t max) {
    for (std::size_t v = 0; v <= max; ++v) toks.push_back(slot + ":" + std::to_string(v));
  };
  for (char ch : kChannelNames) digit_slots(std::string("mean.") + ch, 3);
  digit_slots("lum", 3);
  digit_slots("tex", 4);
  digit_slots("tex.f", 1);
  count_slot("colors.n", kMaxDominantColors);
  for (std::size_t i = 0; i < kMaxDominantColors; ++i)
    for (char ch : kChannelNames) digit_slots(indexed("colors", i) + "." + ch, 3);
  count_slot("boxes.n", kMaxRegionBoxes);
  for (std::size_t i = 0; i < kMaxRegionBoxes; ++i)
    for (char f : kBoxFields) digit_slots(indexed("boxes", i) + "." + f, 5);
  count_slot("labels.n", kMaxLabels);
  for (std::size_t i = 0; i < kMaxLabels; ++i) {
    for (const auto& l : labels) {
      validate_label(l);
      toks.push_back(indexed("labels", i) + ":" + l);
    }
  }
  return from_tokens(std::move(toks));
}

Vocabulary Vocabulary::from_tokens(std::vector<std::string> tokens) {
  Vocabulary v;
  v.tokens_ = std::move(tokens);
  for (std::uint32_t id = 0; id < v.tokens_.size(); ++id) {
    const auto& t = v.tokens_[id];
    if (t.empty()) throw Error(ErrorCode::InvalidInput, "vocabulary: empty token at index " + std::to_string(id));
    if (!v.index_.emplace(t, id).second) {
      throw Error(ErrorCode::InvalidInput, "vocabulary: duplicate token '" + t + "'");
    }
    const auto colon = t.find(':');
    if (colon != std::string::npos && colon > 0) v.slots_[t.substr(0, colon)].push_back(id);
  }
  return v;
}

Vocabulary Vocabulary::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::IoError, "cannot open vocabulary " + path.string());
  std::vector<std::string> toks;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    toks.push_back(line);
  }
  return from_tokens(std::move(toks));
}

void Vocabulary::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::IoError, "cannot create " + path.string());
  for (const auto& t : tokens_) out << t << '\n';
}

std::optional<std::uint32_t> Vocabulary::find(std::string_view token) const {
  const auto it = index_.find(std::string(token));
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

std::span<const std::uint32_t> Vocabulary::slot_candidates(const std::string& slot) const {
  const auto it = slots_.find(slot);
  if (it == slots_.end()) return {};
  return it->second;
}

std::vector<std::uint32_t> tokenize(const PromptString& prompt, const Vocabulary& vocab) {
  const auto parsed = parse_prompt(prompt.text);
  const auto toks = prompt_tokens(parsed.descriptor);
  std::vector<std::uint32_t> ids;
  ids.reserve(toks.size());
  for (const auto& t : toks) {
    const auto id = vocab.find(t);
    if (!id) throw Error(ErrorCode::OovError, "token '" + t + "' is not in the vocabulary");
    ids.push_back(*id);
  }
  return ids;
}

PromptString detokenize(std::span<const std::uint32_t> ids, const Vocabulary& vocab) {
  TokenSource src(ids, vocab);
  const TextDescriptor d = assemble_descriptor(src);
  if (!src.exhausted()) throw Error(ErrorCode::InvalidInput, "token stream has trailing tokens");
  return serialize_prompt(d);
}

}  // namespace semcomm
