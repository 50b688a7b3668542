// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace egfi {

enum class DrugType { drug = 0, brand = 1, group = 2, drug_n = 3 };
enum class RelationLabel { advise = 0, effect = 1, mechanism = 2, interaction = 3, negative = 4 };
enum class Partition { train = 0, dev = 1, test = 2 };

inline constexpr std::size_t kNumLabels = 5;
inline constexpr std::size_t kNumPositiveLabels = 4;
inline constexpr std::array<RelationLabel, kNumLabels> kAllLabels = {
    RelationLabel::advise, RelationLabel::effect, RelationLabel::mechanism, RelationLabel::interaction,
    RelationLabel::negative};

/// Marker suffix per drug type. The one place the type index scheme lives.
inline constexpr std::array<int, 4> kMarkerTypeIndex = {0, 1, 2, 3};

inline int marker_index(DrugType t) { return kMarkerTypeIndex[static_cast<std::size_t>(t)]; }
std::optional<DrugType> drug_type_from_marker_index(int index);

std::string_view to_string(DrugType t);
std::string_view to_string(RelationLabel l);
std::string_view to_string(Partition p);
DrugType parse_drug_type(std::string_view s);
RelationLabel parse_label(std::string_view s);
Partition parse_partition(std::string_view s);

inline bool is_positive(RelationLabel l) { return l != RelationLabel::negative; }
inline int label_index(RelationLabel l) { return static_cast<int>(l); }

/// Raised for schema and consistency violations in corpus input.
class CorpusError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Offsets are Unicode code points into the sentence text, half-open.
struct EntityMention {
  std::string id;
  std::string surface;
  DrugType type = DrugType::drug;
  std::size_t start = 0;
  std::size_t end = 0;

  bool operator==(const EntityMention&) const = default;
};

struct AnnotatedPair {
  std::string e1;
  std::string e2;
  RelationLabel label = RelationLabel::negative;

  bool operator==(const AnnotatedPair&) const = default;
};

struct SentenceRecord {
  std::string id;
  std::string text;
  std::vector<EntityMention> entities;
  std::vector<AnnotatedPair> pairs;

  const EntityMention* entity(std::string_view id) const;
  bool operator==(const SentenceRecord&) const = default;
};

struct PairInstance {
  std::string instance_id;
  std::string sentence_id;
  std::string text;
  std::string enriched_text;
  EntityMention e1;
  EntityMention e2;
  RelationLabel label = RelationLabel::negative;
  Partition partition = Partition::train;

  bool operator==(const PairInstance&) const = default;
};

struct CorpusStats {
  // counts[partition][label]
  std::array<std::array<std::size_t, kNumLabels>, 3> counts{};

  std::size_t total(Partition p) const;
  std::size_t positives(Partition p) const;
  std::size_t count(Partition p, RelationLabel l) const {
    return counts[static_cast<std::size_t>(p)][static_cast<std::size_t>(l)];
  }
};

// ---- UTF-8 helpers -------------------------------------------------------

/// Byte offset of every code point, plus a final entry equal to text.size().
std::vector<std::size_t> code_point_offsets(std::string_view text);
std::size_t code_point_length(std::string_view text);
/// Substring by code-point range [start, end).
std::string substr_code_points(std::string_view text, std::size_t start, std::size_t end);
std::string casefold(std::string_view s);

// ---- operations ----------------------------------------------------------

/// Parses one DDIExtraction-2013 XML file, or every *.xml below a directory
/// (sorted by path).
std::vector<SentenceRecord> parse_ddi_xml(const std::filesystem::path& path);
/// Parses XML already in memory; `origin` names the source in messages.
std::vector<SentenceRecord> parse_ddi_xml_string(const std::string& xml, const std::string& origin);

/// Checks spans, surfaces and pair references.
void validate(const SentenceRecord& record);

std::string marker_open(int entity, DrugType t);
std::string marker_close(int entity, DrugType t);
/// All sixteen marker tokens, in (entity, type, open/close) order.
std::vector<std::string> all_marker_tokens();

/// Replaces the two target mentions with "drug1"/"drug2" wrapped in their
/// typed markers. Other text, including other entity surfaces, is untouched.
std::string enrich(std::string_view text, const EntityMention& e1, const EntityMention& e2);
/// Same marker layout as `enrich` but keeps the original surfaces; this is the
/// shape the sentence generator is trained on.
std::string mark_entities(std::string_view text, const EntityMention& e1, const EntityMention& e2);

std::vector<PairInstance> make_pair_instances(const SentenceRecord& record, Partition partition);

enum class NegativeRule { identical_surface = 0, nested_surface = 1, coordinate_list = 2 };
std::string_view to_string(NegativeRule r);

struct NegativeFilterConfig {
  bool identical_surface = true;
  bool nested_surface = true;
  bool coordinate_list = true;
};

struct FilterRemoval {
  std::string instance_id;
  NegativeRule rule;
};

struct NegativeFilterResult {
  std::vector<PairInstance> kept;
  std::vector<FilterRemoval> removed;
};

NegativeFilterResult filter_negatives(const std::vector<PairInstance>& instances,
                                      const NegativeFilterConfig& config = {});

struct TrainDevSplit {
  std::vector<PairInstance> train;
  std::vector<PairInstance> dev;
};

/// Deterministic split; dev instances get partition=dev. Relative order of
/// the input is preserved inside each side.
TrainDevSplit split_train_dev(const std::vector<PairInstance>& instances, double fraction, std::uint64_t seed);

CorpusStats corpus_stats(const std::vector<PairInstance>& instances);
/// Renders the per-label by per-partition grid.
std::string format_stats(const CorpusStats& stats);

// ---- persistence ---------------------------------------------------------

std::string to_json_line(const PairInstance& instance);
PairInstance pair_instance_from_json_line(const std::string& line, std::size_t line_number);

void write_jsonl(const std::filesystem::path& path, const std::vector<PairInstance>& instances);
std::vector<PairInstance> read_jsonl(const std::filesystem::path& path);

void write_sentences_jsonl(const std::filesystem::path& path, const std::vector<SentenceRecord>& records);
std::vector<SentenceRecord> read_sentences_jsonl(const std::filesystem::path& path);

/// Writes `content` to a sibling temp file and renames it over `path`.
void write_file_atomic(const std::filesystem::path& path, const std::string& content);

}  // namespace egfi
