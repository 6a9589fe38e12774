#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace kgsynth {

using TokenId = std::int32_t;

// Vocabulary boundary for constrained decoding. decode(encode(s)) == s for
// every encodable s, and the end-of-sequence id never appears in encode().
class Tokenizer {
 public:
  virtual ~Tokenizer() = default;

  // Includes the end-of-sequence token.
  virtual std::size_t vocab_size() const = 0;
  virtual TokenId eos() const = 0;
  // nullopt when `text` needs symbols outside the vocabulary.
  virtual std::optional<std::vector<TokenId>> encode(
      std::string_view text) const = 0;
  // End-of-sequence ids are skipped.
  virtual std::string decode(std::span<const TokenId> tokens) const = 0;
};

// One token per byte; everything is encodable.
class ByteTokenizer final : public Tokenizer {
 public:
  std::size_t vocab_size() const override { return 257; }
  TokenId eos() const override { return 256; }
  std::optional<std::vector<TokenId>> encode(
      std::string_view text) const override;
  std::string decode(std::span<const TokenId> tokens) const override;
};

// Fixed list of string pieces. encode() picks the segmentation with the
// fewest pieces (longer first piece on ties), so it fails only when no
// segmentation exists.
class PieceTokenizer final : public Tokenizer {
 public:
  explicit PieceTokenizer(std::vector<std::string> pieces);
  // One piece per line, taken verbatim (only a trailing '\r' is removed).
  static PieceTokenizer from_file(const std::filesystem::path& path);

  std::size_t vocab_size() const override { return pieces_.size() + 1; }
  TokenId eos() const override { return static_cast<TokenId>(pieces_.size()); }
  std::optional<std::vector<TokenId>> encode(
      std::string_view text) const override;
  std::string decode(std::span<const TokenId> tokens) const override;

  const std::string& piece(TokenId id) const { return pieces_.at(id); }

 private:
  std::vector<std::string> pieces_;
  std::unordered_map<std::string, TokenId> ids_;
  std::size_t max_piece_len_ = 0;
};

struct DroppedEntry {
  std::string label;
  std::string reason;
};

struct TokenizableFilter {
  std::vector<std::string> kept;
  std::vector<DroppedEntry> dropped;
};

TokenizableFilter filter_tokenizable(std::span<const std::string> catalog,
                                     const Tokenizer& tokenizer);

}  // namespace kgsynth
