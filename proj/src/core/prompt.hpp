#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "core/descriptor.hpp"

namespace semcomm {

// Canonical prompt line:
//
//   scene mean=R,G,B lum=L tex=T.t colors=r,g,b;... boxes=x,y,w,h;... labels=a;b;...
//
// mean, lum and colors are integers in [0,255], tex has one decimal, box
// coordinates are integers in [0,65535]. Labels may not contain '=', ',', ';'
// or whitespace.
struct PromptString {
  std::string text;
  std::size_t token_count = 0;
};

// Applies the grammar's fixed-point steps (and recomputes dim_n).
TextDescriptor quantize_descriptor(const TextDescriptor& d);

PromptString serialize_prompt(const TextDescriptor& d);

struct ParsedPrompt {
  TextDescriptor descriptor;
  bool ignored_unknown_fields = false;
};

// Throws ParseError with the byte offset and the expected token class.
ParsedPrompt parse_prompt(std::string_view text);

// Number of tokens in the lexical token stream of `d` (what tokenize returns).
std::size_t prompt_token_count(const TextDescriptor& d);

// Token stream: six field keywords interleaved with slot-qualified value
// tokens. Numbers are split into fixed-width decimal digits ("mean.r.2:1"
// is the hundreds digit of the red mean), list fields carry a count slot
// ("colors.n:2"), labels are "labels[i]:<name>".
std::vector<std::string> prompt_tokens(const TextDescriptor& quantized);

/// Ordered token list with stable indices.
///
/// Every value token belongs to a slot (the part before the first ':');
/// keyword tokens ("mean=", ...) have no slot. Slot candidate lists are what
/// the analog text decoder searches.
class Vocabulary {
 public:
  // Keywords, every digit/count slot up to the grammar caps, and one
  // "labels[i]:<label>" token per (position, label).
  static Vocabulary standard(const std::vector<std::string>& labels);
  static Vocabulary from_tokens(std::vector<std::string> tokens);

  // UTF-8, one token per line, index = line number.
  static Vocabulary load(const std::filesystem::path& path);
  void save(const std::filesystem::path& path) const;

  std::size_t size() const noexcept { return tokens_.size(); }
  const std::string& token(std::uint32_t id) const { return tokens_.at(id); }
  std::optional<std::uint32_t> find(std::string_view token) const;
  // Candidate ids of a slot in ascending id order; empty when unknown.
  std::span<const std::uint32_t> slot_candidates(const std::string& slot) const;
  const std::vector<std::string>& tokens() const noexcept { return tokens_; }

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, std::uint32_t> index_;
  std::unordered_map<std::string, std::vector<std::uint32_t>> slots_;
};

// Throws OovError naming the first token missing from `vocab`.
std::vector<std::uint32_t> tokenize(const PromptString& prompt, const Vocabulary& vocab);

// Rebuilds the canonical prompt from a token id sequence; throws InvalidInput
// when the sequence is not a well-formed token stream.
PromptString detokenize(std::span<const std::uint32_t> ids, const Vocabulary& vocab);

// Source of slot values for assemble_descriptor.
class SlotSource {
 public:
  virtual ~SlotSource() = default;
  virtual void keyword(std::string_view keyword) = 0;
  // Returns the value part of the chosen token for `slot`.
  virtual std::string value(const std::string& slot) = 0;
};

// Walks the canonical slot sequence, building a quantized descriptor from the
// values `src` supplies. Numeric values are clamped to the grammar's ranges.
TextDescriptor assemble_descriptor(SlotSource& src);

}  // namespace semcomm
