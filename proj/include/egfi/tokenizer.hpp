// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

namespace egfi {

class TokenizerError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr std::string_view kPadToken = "[PAD]";
inline constexpr std::string_view kUnkToken = "[UNK]";
inline constexpr std::string_view kClsToken = "[CLS]";
inline constexpr std::string_view kSepToken = "[SEP]";
inline constexpr std::string_view kDefaultEndToken = "<endofxt>";
inline constexpr std::string_view kContinuationPrefix = "##";
inline constexpr std::size_t kDefaultMaxLen = 300;

/// Subword vocabulary. Ids 0..4 are PAD, UNK, CLS, SEP and the end-of-text
/// token; the sixteen entity markers follow; ordinary pieces come last.
/// Word-internal pieces carry the "##" prefix.
class Vocab {
 public:
  Vocab() = default;
  explicit Vocab(std::vector<std::string> pieces, std::string end_token = std::string(kDefaultEndToken));

  int size() const { return static_cast<int>(pieces_.size()); }
  /// -1 when absent.
  int id(std::string_view piece) const;
  const std::string& piece(int id) const { return pieces_.at(static_cast<std::size_t>(id)); }
  const std::vector<std::string>& pieces() const { return pieces_; }

  int pad_id() const { return 0; }
  int unk_id() const { return 1; }
  int cls_id() const { return 2; }
  int sep_id() const { return 3; }
  int end_id() const { return 4; }
  const std::string& end_token() const { return pieces_.at(4); }

  int special_count() const { return kSpecialCount; }
  bool is_special(int id) const { return id >= 0 && id < kSpecialCount; }
  bool is_marker(int id) const { return id >= 5 && id < kSpecialCount; }
  /// Marker decode: entity (1|2), type index 0..3, opening or closing.
  struct MarkerInfo {
    int entity;
    int type_index;
    bool open;
  };
  MarkerInfo marker_info(int id) const;
  bool is_special_surface(std::string_view s) const;

  /// Hex digest of the piece list; equal fingerprints mean equal vocabularies.
  std::string fingerprint() const;

  void save(const std::filesystem::path& path) const;
  static Vocab load(const std::filesystem::path& path);

  static constexpr int kSpecialCount = 21;

 private:
  std::vector<std::string> pieces_;
  std::unordered_map<std::string, int> index_;
};

/// The special surfaces in id order (PAD, UNK, CLS, SEP, end token, markers).
std::vector<std::string> special_tokens(std::string_view end_token = kDefaultEndToken);

/// Trains a vocabulary by greedy frequency-based pair merging. Deterministic
/// in the order and content of `texts`.
Vocab build_vocab(const std::vector<std::string>& texts, int target_size,
                  std::string_view end_token = kDefaultEndToken);

/// Splits text into special tokens and whitespace-delimited words. Specials
/// are recognised even when glued to neighbouring characters.
std::vector<std::string> pre_tokenize(std::string_view text, const Vocab& vocab);

/// Greedy longest-match segmentation of a single word into piece ids.
std::vector<int> encode_word(std::string_view word, const Vocab& vocab);
/// Pieces for a whole text, specials mapped to their single ids.
std::vector<int> encode(std::string_view text, const Vocab& vocab);

struct TokenSpan {
  int begin = 0;  // first token index
  int end = 0;    // one past last

  int size() const { return end - begin; }
  bool operator==(const TokenSpan&) const = default;
};

struct TokenizedInput {
  std::vector<int> ids;
  std::vector<int> attention_mask;
  TokenSpan e1_span;
  TokenSpan e2_span;
  int length = 0;

  /// The first `length` ids, i.e. the input with padding removed.
  std::vector<int> real_ids() const { return {ids.begin(), ids.begin() + length}; }
};

/// [CLS] pieces [SEP], padded to `max_len`. Entity spans cover the pieces
/// strictly between each entity's open and close markers.
TokenizedInput tokenize(std::string_view enriched_text, const Vocab& vocab, std::size_t max_len = kDefaultMaxLen);

std::string detokenize(const std::vector<int>& ids, const Vocab& vocab);
/// The form `detokenize(tokenize(t))` reproduces: specials space-separated,
/// whitespace runs collapsed, ends trimmed.
std::string normalize_whitespace(std::string_view text, const Vocab& vocab);

}  // namespace egfi
