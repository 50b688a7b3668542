// SPDX-License-Identifier: Apache-2.0
#include "egfi/tokenizer.hpp"

#include "egfi/corpus.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

namespace egfi {

namespace {

constexpr std::string_view kVocabHeader = "# egfi vocab v1";

bool is_space(char c) { return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v'; }

std::vector<std::string> code_points(std::string_view word) {
  const auto offs = code_point_offsets(word);
  std::vector<std::string> out;
  for (std::size_t i = 0; i + 1 < offs.size(); ++i) out.emplace_back(word.substr(offs[i], offs[i + 1] - offs[i]));
  return out;
}

}  // namespace

std::vector<std::string> special_tokens(std::string_view end_token) {
  std::vector<std::string> s = {std::string(kPadToken), std::string(kUnkToken), std::string(kClsToken),
                                std::string(kSepToken), std::string(end_token)};
  for (auto& m : all_marker_tokens()) s.push_back(std::move(m));
  return s;
}

Vocab::Vocab(std::vector<std::string> pieces, std::string end_token) : pieces_(std::move(pieces)) {
  const auto specials = special_tokens(end_token);
  if (pieces_.size() < specials.size() || !std::equal(specials.begin(), specials.end(), pieces_.begin()))
    throw TokenizerError("vocabulary does not start with the special token block");
  for (std::size_t i = 0; i < pieces_.size(); ++i) {
    if (!index_.emplace(pieces_[i], static_cast<int>(i)).second)
      throw TokenizerError("duplicate vocabulary piece '" + pieces_[i] + "'");
  }
}

int Vocab::id(std::string_view piece) const {
  auto it = index_.find(std::string(piece));
  return it == index_.end() ? -1 : it->second;
}

Vocab::MarkerInfo Vocab::marker_info(int id) const {
  if (!is_marker(id)) throw TokenizerError("id " + std::to_string(id) + " is not a marker");
  const std::string& p = piece(id);
  const bool open = p[1] != '/';
  const std::size_t at = open ? 2 : 3;
  return {p[at] - '0', p[at + 1] - '0', open};
}

bool Vocab::is_special_surface(std::string_view s) const {
  const int i = id(s);
  return i >= 0 && is_special(i);
}

std::string Vocab::fingerprint() const {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (const auto& p : pieces_) {
    for (unsigned char c : p) {
      h ^= c;
      h *= 0x100000001b3ull;
    }
    h ^= 0xff;
    h *= 0x100000001b3ull;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

void Vocab::save(const std::filesystem::path& path) const {
  std::ostringstream os;
  os << kVocabHeader << "\n[specials]\n";
  for (int i = 0; i < kSpecialCount; ++i) os << pieces_[static_cast<std::size_t>(i)] << "\n";
  os << "[pieces]\n";
  for (std::size_t i = kSpecialCount; i < pieces_.size(); ++i) os << pieces_[i] << "\n";
  write_file_atomic(path, os.str());
}

Vocab Vocab::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw TokenizerError(path.string() + ": cannot open vocabulary");
  std::string line;
  if (!std::getline(in, line) || line != kVocabHeader) throw TokenizerError(path.string() + ": bad vocabulary header");
  if (!std::getline(in, line) || line != "[specials]") throw TokenizerError(path.string() + ": missing [specials]");
  std::vector<std::string> pieces;
  bool in_pieces = false;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (!in_pieces && line == "[pieces]") {
      if (pieces.size() != kSpecialCount) throw TokenizerError(path.string() + ": special block has wrong size");
      in_pieces = true;
      continue;
    }
    if (line.empty()) throw TokenizerError(path.string() + ": empty vocabulary line");
    pieces.push_back(line);
  }
  if (!in_pieces) throw TokenizerError(path.string() + ": missing [pieces]");
  const std::string end = pieces.at(4);
  return Vocab(std::move(pieces), end);
}

// ---- training --------------------------------------------------------------

namespace {

/// Pre-tokenization used while training, before a Vocab exists.
std::vector<std::string> split_words(std::string_view text, const std::vector<std::string>& specials) {
  std::vector<std::string> out;
  std::string cur;
  auto flush = [&] {
    if (!cur.empty()) out.push_back(std::move(cur));
    cur.clear();
  };
  for (std::size_t i = 0; i < text.size();) {
    const char c = text[i];
    if (c == '<' || c == '[') {
      const auto hit = std::find_if(specials.begin(), specials.end(),
                                    [&](const std::string& s) { return text.substr(i, s.size()) == s; });
      if (hit != specials.end()) {
        flush();
        out.push_back(*hit);
        i += hit->size();
        continue;
      }
    }
    if (is_space(c)) {
      flush();
    } else {
      cur += c;
    }
    ++i;
  }
  flush();
  return out;
}

}  // namespace

Vocab build_vocab(const std::vector<std::string>& texts, int target_size, std::string_view end_token) {
  const auto specials = special_tokens(end_token);
  const int floor_size = static_cast<int>(specials.size()) + 26;
  if (target_size < floor_size)
    throw TokenizerError("target vocabulary size " + std::to_string(target_size) + " is below the minimum " +
                         std::to_string(floor_size));
  if (texts.empty()) throw TokenizerError("cannot build a vocabulary from an empty corpus");

  std::map<std::string, long> word_freq;
  for (const auto& t : texts)
    for (auto& w : split_words(t, specials))
      if (std::find(specials.begin(), specials.end(), w) == specials.end()) ++word_freq[w];

  // Each word becomes a symbol sequence: first code point bare, the rest "##"-prefixed.
  struct Word {
    std::vector<std::string> symbols;
    long freq;
  };
  std::vector<Word> words;
  std::map<std::string, long> alphabet;
  for (const auto& [w, f] : word_freq) {
    Word word{{}, f};
    const auto cps = code_points(w);
    for (std::size_t i = 0; i < cps.size(); ++i) {
      word.symbols.push_back(i == 0 ? cps[i] : std::string(kContinuationPrefix) + cps[i]);
      alphabet[word.symbols.back()] += f;
    }
    words.push_back(std::move(word));
  }

  std::vector<std::string> pieces = specials;
  std::set<std::string> present(pieces.begin(), pieces.end());
  std::vector<std::pair<std::string, long>> alpha(alphabet.begin(), alphabet.end());
  std::stable_sort(alpha.begin(), alpha.end(), [](const auto& a, const auto& b) { return a.second > b.second; });
  for (const auto& [sym, f] : alpha) {
    if (static_cast<int>(pieces.size()) >= target_size) break;
    if (present.insert(sym).second) pieces.push_back(sym);
  }

  auto merged_symbol = [](const std::string& l, const std::string& r) {
    return l + r.substr(kContinuationPrefix.size());
  };
  while (static_cast<int>(pieces.size()) < target_size) {
    std::map<std::pair<std::string, std::string>, long> pair_freq;
    for (const auto& w : words)
      for (std::size_t i = 0; i + 1 < w.symbols.size(); ++i) pair_freq[{w.symbols[i], w.symbols[i + 1]}] += w.freq;
    if (pair_freq.empty()) break;
    // Highest count wins; std::map order makes the lexicographically smallest pair win ties.
    auto best = pair_freq.begin();
    for (auto it = pair_freq.begin(); it != pair_freq.end(); ++it)
      if (it->second > best->second) best = it;
    const auto [left, right] = best->first;
    const std::string joined = merged_symbol(left, right);
    for (auto& w : words) {
      std::vector<std::string> next;
      next.reserve(w.symbols.size());
      for (std::size_t i = 0; i < w.symbols.size(); ++i) {
        if (i + 1 < w.symbols.size() && w.symbols[i] == left && w.symbols[i + 1] == right) {
          next.push_back(joined);
          ++i;
        } else {
          next.push_back(w.symbols[i]);
        }
      }
      w.symbols = std::move(next);
    }
    if (present.insert(joined).second) pieces.push_back(joined);
  }
  return Vocab(std::move(pieces), std::string(end_token));
}

// ---- encoding --------------------------------------------------------------

std::vector<std::string> pre_tokenize(std::string_view text, const Vocab& vocab) {
  std::vector<std::string> specials(vocab.pieces().begin(), vocab.pieces().begin() + vocab.special_count());
  return split_words(text, specials);
}

std::vector<int> encode_word(std::string_view word, const Vocab& vocab) {
  const auto offs = code_point_offsets(word);
  const std::size_t n = offs.size() - 1;
  std::vector<int> out;
  std::size_t start = 0;
  while (start < n) {
    int found = -1;
    std::size_t stop = n;
    for (; stop > start; --stop) {
      std::string sub(word.substr(offs[start], offs[stop] - offs[start]));
      if (start > 0) sub.insert(0, kContinuationPrefix);
      const int id = vocab.id(sub);
      if (id >= vocab.special_count()) {
        found = id;
        break;
      }
    }
    if (found < 0) {
      out.push_back(vocab.unk_id());
      ++start;
    } else {
      out.push_back(found);
      start = stop;
    }
  }
  return out;
}

std::vector<int> encode(std::string_view text, const Vocab& vocab) {
  std::vector<int> out;
  for (const auto& w : pre_tokenize(text, vocab)) {
    const int sid = vocab.id(w);
    if (sid >= 0 && vocab.is_special(sid)) {
      out.push_back(sid);
    } else {
      const auto ids = encode_word(w, vocab);
      out.insert(out.end(), ids.begin(), ids.end());
    }
  }
  return out;
}

TokenizedInput tokenize(std::string_view enriched_text, const Vocab& vocab, std::size_t max_len) {
  if (max_len < 4) throw TokenizerError("max_len must be at least 4");
  std::vector<int> ids = {vocab.cls_id()};
  const auto body = encode(enriched_text, vocab);
  ids.insert(ids.end(), body.begin(), body.end());
  ids.push_back(vocab.sep_id());

  // Marker positions: [entity-1][open/close].
  int pos[2][2] = {{-1, -1}, {-1, -1}};
  for (int i = 0; i < static_cast<int>(ids.size()); ++i) {
    if (!vocab.is_marker(ids[static_cast<std::size_t>(i)])) continue;
    const auto info = vocab.marker_info(ids[static_cast<std::size_t>(i)]);
    int& slot = pos[info.entity - 1][info.open ? 0 : 1];
    if (slot >= 0)
      throw TokenizerError("duplicate " + std::string(info.open ? "open" : "close") + " marker for entity " +
                           std::to_string(info.entity));
    slot = i;
  }
  static const char* names[2][2] = {{"e1 open marker", "e1 close marker"}, {"e2 open marker", "e2 close marker"}};
  for (int e = 0; e < 2; ++e)
    for (int k = 0; k < 2; ++k)
      if (pos[e][k] < 0) throw TokenizerError(std::string("missing ") + names[e][k]);

  TokenizedInput out;
  out.e1_span = {pos[0][0] + 1, pos[0][1]};
  out.e2_span = {pos[1][0] + 1, pos[1][1]};
  if (out.e1_span.size() <= 0) throw TokenizerError("entity 1 has no tokens between its markers");
  if (out.e2_span.size() <= 0) throw TokenizerError("entity 2 has no tokens between its markers");

  if (ids.size() > max_len) {
    const int last_marker = std::max(pos[0][1], pos[1][1]);
    if (last_marker >= static_cast<int>(max_len) - 1)
      throw TokenizerError("entity span truncated away: sequence of " + std::to_string(ids.size()) +
                           " tokens exceeds max_len " + std::to_string(max_len));
    ids.resize(max_len - 1);
    ids.push_back(vocab.sep_id());
  }
  out.length = static_cast<int>(ids.size());
  out.ids = ids;
  out.ids.resize(max_len, vocab.pad_id());
  out.attention_mask.assign(max_len, 0);
  std::fill(out.attention_mask.begin(), out.attention_mask.begin() + out.length, 1);
  return out;
}

std::string detokenize(const std::vector<int>& ids, const Vocab& vocab) {
  std::string out;
  for (int id : ids) {
    if (id == vocab.pad_id() || id == vocab.cls_id() || id == vocab.sep_id()) continue;
    const std::string& p = vocab.piece(id);
    if (!vocab.is_special(id) && p.starts_with(kContinuationPrefix) && !out.empty()) {
      out += p.substr(kContinuationPrefix.size());
    } else {
      if (!out.empty()) out += ' ';
      out += p;
    }
  }
  return out;
}

std::string normalize_whitespace(std::string_view text, const Vocab& vocab) {
  std::string out;
  for (const auto& w : pre_tokenize(text, vocab)) {
    if (!out.empty()) out += ' ';
    out += w;
  }
  return out;
}

}  // namespace egfi
