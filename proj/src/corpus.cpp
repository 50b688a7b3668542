// SPDX-License-Identifier: Apache-2.0
#include "egfi/corpus.hpp"

#include "egfi/random.hpp"

#include <boost/property_tree/ptree.hpp>
#include <boost/property_tree/xml_parser.hpp>
#include <nlohmann/json.hpp>
#include <spdlog/spdlog.h>

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

namespace egfi {

namespace fs = std::filesystem;
namespace pt = boost::property_tree;
using json = nlohmann::json;

// ---- enums ---------------------------------------------------------------

std::optional<DrugType> drug_type_from_marker_index(int index) {
  for (std::size_t i = 0; i < kMarkerTypeIndex.size(); ++i)
    if (kMarkerTypeIndex[i] == index) return static_cast<DrugType>(i);
  return std::nullopt;
}

std::string_view to_string(DrugType t) {
  switch (t) {
    case DrugType::drug: return "drug";
    case DrugType::brand: return "brand";
    case DrugType::group: return "group";
    case DrugType::drug_n: return "drug_n";
  }
  return "?";
}

std::string_view to_string(RelationLabel l) {
  switch (l) {
    case RelationLabel::advise: return "advise";
    case RelationLabel::effect: return "effect";
    case RelationLabel::mechanism: return "mechanism";
    case RelationLabel::interaction: return "int";
    case RelationLabel::negative: return "negative";
  }
  return "?";
}

std::string_view to_string(Partition p) {
  switch (p) {
    case Partition::train: return "train";
    case Partition::dev: return "dev";
    case Partition::test: return "test";
  }
  return "?";
}

DrugType parse_drug_type(std::string_view s) {
  const std::string f = casefold(s);
  if (f == "drug") return DrugType::drug;
  if (f == "brand") return DrugType::brand;
  if (f == "group") return DrugType::group;
  if (f == "drug_n" || f == "drug-n") return DrugType::drug_n;
  throw CorpusError("unknown drug type '" + std::string(s) + "'");
}

RelationLabel parse_label(std::string_view s) {
  const std::string f = casefold(s);
  if (f == "advise") return RelationLabel::advise;
  if (f == "effect") return RelationLabel::effect;
  if (f == "mechanism") return RelationLabel::mechanism;
  if (f == "int") return RelationLabel::interaction;
  if (f == "negative" || f == "false") return RelationLabel::negative;
  throw CorpusError("unknown relation label '" + std::string(s) + "'");
}

Partition parse_partition(std::string_view s) {
  if (s == "train") return Partition::train;
  if (s == "dev") return Partition::dev;
  if (s == "test") return Partition::test;
  throw CorpusError("unknown partition '" + std::string(s) + "'");
}

std::string_view to_string(NegativeRule r) {
  switch (r) {
    case NegativeRule::identical_surface: return "a";
    case NegativeRule::nested_surface: return "b";
    case NegativeRule::coordinate_list: return "c";
  }
  return "?";
}

// ---- records ---------------------------------------------------------------

const EntityMention* SentenceRecord::entity(std::string_view eid) const {
  for (const auto& e : entities)
    if (e.id == eid) return &e;
  return nullptr;
}

std::size_t CorpusStats::total(Partition p) const {
  std::size_t n = 0;
  for (auto c : counts[static_cast<std::size_t>(p)]) n += c;
  return n;
}

std::size_t CorpusStats::positives(Partition p) const {
  return total(p) - count(p, RelationLabel::negative);
}

// ---- UTF-8 ---------------------------------------------------------------

std::vector<std::size_t> code_point_offsets(std::string_view text) {
  std::vector<std::size_t> offsets;
  offsets.reserve(text.size() + 1);
  for (std::size_t i = 0; i < text.size(); ++i) {
    const auto c = static_cast<unsigned char>(text[i]);
    if ((c & 0xC0) != 0x80) offsets.push_back(i);
  }
  offsets.push_back(text.size());
  return offsets;
}

std::size_t code_point_length(std::string_view text) { return code_point_offsets(text).size() - 1; }

std::string substr_code_points(std::string_view text, std::size_t start, std::size_t end) {
  const auto offs = code_point_offsets(text);
  if (start > end || end >= offs.size()) throw std::out_of_range("code point range outside text");
  return std::string(text.substr(offs[start], offs[end] - offs[start]));
}

std::string casefold(std::string_view s) {
  std::string out(s);
  for (char& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

// ---- XML -----------------------------------------------------------------

namespace {

struct Offsets {
  std::size_t start;
  std::size_t end;
  bool discontinuous;
};

Offsets parse_char_offset(const std::string& raw, const std::string& entity_id) {
  const std::string first = raw.substr(0, raw.find(';'));
  const auto dash = first.find('-');
  if (dash == std::string::npos) throw CorpusError("entity " + entity_id + ": malformed charOffset '" + raw + "'");
  try {
    const std::size_t s = std::stoul(first.substr(0, dash));
    const std::size_t e = std::stoul(first.substr(dash + 1));
    if (e < s) throw CorpusError("entity " + entity_id + ": charOffset end before start '" + raw + "'");
    return {s, e + 1, raw.find(';') != std::string::npos};
  } catch (const std::logic_error&) {
    throw CorpusError("entity " + entity_id + ": malformed charOffset '" + raw + "'");
  }
}

std::string attr(const pt::ptree& node, const char* name, const std::string& where) {
  auto v = node.get_optional<std::string>(std::string("<xmlattr>.") + name);
  if (!v) throw CorpusError(where + ": missing attribute '" + name + "'");
  return *v;
}

void collect_sentences(const pt::ptree& node, const std::string& origin, std::vector<SentenceRecord>& out) {
  for (const auto& [tag, child] : node) {
    if (tag == "sentence") {
      SentenceRecord rec;
      rec.id = attr(child, "id", origin + ": sentence");
      rec.text = attr(child, "text", origin + ": sentence " + rec.id);
      const std::size_t text_len = code_point_length(rec.text);
      for (const auto& [ctag, el] : child) {
        if (ctag == "entity") {
          EntityMention m;
          m.id = attr(el, "id", origin + ": entity in " + rec.id);
          const Offsets off = parse_char_offset(attr(el, "charOffset", origin + ": entity " + m.id), m.id);
          m.type = parse_drug_type(attr(el, "type", origin + ": entity " + m.id));
          m.start = off.start;
          m.end = off.end;
          if (m.end > text_len)
            throw CorpusError(origin + ": entity " + m.id + " offset " + std::to_string(m.start) + "-" +
                              std::to_string(m.end) + " outside sentence text of length " + std::to_string(text_len));
          m.surface = substr_code_points(rec.text, m.start, m.end);
          if (off.discontinuous) spdlog::debug("{}: entity {} is discontinuous; using first segment", origin, m.id);
          if (auto declared = el.get_optional<std::string>("<xmlattr>.text");
              declared && !off.discontinuous && *declared != m.surface)
            spdlog::warn("{}: entity {} text '{}' differs from span '{}'", origin, m.id, *declared, m.surface);
          rec.entities.push_back(std::move(m));
        } else if (ctag == "pair") {
          AnnotatedPair p;
          const std::string pid = attr(el, "id", origin + ": pair in " + rec.id);
          p.e1 = attr(el, "e1", origin + ": pair " + pid);
          p.e2 = attr(el, "e2", origin + ": pair " + pid);
          const std::string ddi = casefold(attr(el, "ddi", origin + ": pair " + pid));
          if (ddi == "false") {
            p.label = RelationLabel::negative;
          } else if (ddi == "true") {
            p.label = parse_label(attr(el, "type", origin + ": pair " + pid));
          } else {
            throw CorpusError(origin + ": pair " + pid + ": ddi must be true or false, got '" + ddi + "'");
          }
          rec.pairs.push_back(std::move(p));
        }
      }
      try {
        validate(rec);
      } catch (const CorpusError& e) {
        throw CorpusError(origin + ": " + e.what());
      }
      out.push_back(std::move(rec));
    } else if (tag != "<xmlattr>") {
      collect_sentences(child, origin, out);
    }
  }
}

}  // namespace

void validate(const SentenceRecord& record) {
  const std::size_t len = code_point_length(record.text);
  std::set<std::string> ids;
  for (const auto& e : record.entities) {
    if (!(e.start < e.end && e.end <= len))
      throw CorpusError("entity " + e.id + " span [" + std::to_string(e.start) + "," + std::to_string(e.end) +
                        ") outside sentence text of length " + std::to_string(len));
    if (substr_code_points(record.text, e.start, e.end) != e.surface)
      throw CorpusError("entity " + e.id + " surface does not match its span");
    if (!ids.insert(e.id).second) throw CorpusError("duplicate entity id " + e.id);
  }
  for (std::size_t i = 0; i < record.entities.size(); ++i) {
    for (std::size_t j = i + 1; j < record.entities.size(); ++j) {
      const auto& a = record.entities[i];
      const auto& b = record.entities[j];
      const bool disjoint = a.end <= b.start || b.end <= a.start;
      const bool nested = (a.start <= b.start && b.end <= a.end) || (b.start <= a.start && a.end <= b.end);
      if (!disjoint && !nested) spdlog::warn("sentence {}: entities {} and {} partially overlap", record.id, a.id, b.id);
    }
  }
  for (const auto& p : record.pairs) {
    if (!ids.contains(p.e1)) throw CorpusError("pair references unknown entity id " + p.e1);
    if (!ids.contains(p.e2)) throw CorpusError("pair references unknown entity id " + p.e2);
  }
}

std::vector<SentenceRecord> parse_ddi_xml_string(const std::string& xml, const std::string& origin) {
  pt::ptree tree;
  std::istringstream in(xml);
  try {
    pt::read_xml(in, tree);
  } catch (const pt::xml_parser_error& e) {
    throw CorpusError(origin + ":" + std::to_string(e.line()) + ": malformed XML: " + e.message());
  }
  std::vector<SentenceRecord> out;
  collect_sentences(tree, origin, out);
  return out;
}

std::vector<SentenceRecord> parse_ddi_xml(const fs::path& path) {
  if (!fs::exists(path)) throw CorpusError(path.string() + ": no such file or directory");
  std::vector<fs::path> files;
  if (fs::is_directory(path)) {
    for (const auto& entry : fs::recursive_directory_iterator(path))
      if (entry.is_regular_file() && entry.path().extension() == ".xml") files.push_back(entry.path());
    std::sort(files.begin(), files.end());
    if (files.empty()) throw CorpusError(path.string() + ": no .xml files found");
  } else {
    files.push_back(path);
  }
  std::vector<SentenceRecord> out;
  for (const auto& f : files) {
    std::ifstream in(f, std::ios::binary);
    if (!in) throw CorpusError(f.string() + ": cannot open");
    std::stringstream buf;
    buf << in.rdbuf();
    auto recs = parse_ddi_xml_string(buf.str(), f.string());
    out.insert(out.end(), std::make_move_iterator(recs.begin()), std::make_move_iterator(recs.end()));
  }
  return out;
}

// ---- enrichment ----------------------------------------------------------

std::string marker_open(int entity, DrugType t) {
  return "<e" + std::to_string(entity) + std::to_string(marker_index(t)) + ">";
}

std::string marker_close(int entity, DrugType t) {
  return "</e" + std::to_string(entity) + std::to_string(marker_index(t)) + ">";
}

std::vector<std::string> all_marker_tokens() {
  std::vector<std::string> out;
  for (int e = 1; e <= 2; ++e)
    for (int t = 0; t < 4; ++t) {
      out.push_back(marker_open(e, static_cast<DrugType>(t)));
      out.push_back(marker_close(e, static_cast<DrugType>(t)));
    }
  return out;
}

namespace {

std::string replace_pair(std::string_view text, const EntityMention& e1, const EntityMention& e2,
                         const std::string& fill1, const std::string& fill2) {
  const bool disjoint = e1.end <= e2.start || e2.end <= e1.start;
  if (!disjoint) throw CorpusError("target entities " + e1.id + " and " + e2.id + " overlap");
  const auto offs = code_point_offsets(text);
  if (e1.end >= offs.size() || e2.end >= offs.size() || e1.start >= e1.end || e2.start >= e2.end)
    throw CorpusError("target entity span outside text");
  struct Edit {
    std::size_t begin, end;
    std::string with;
  };
  std::array<Edit, 2> edits = {Edit{offs[e1.start], offs[e1.end], marker_open(1, e1.type) + " " + fill1 + " " +
                                                                       marker_close(1, e1.type)},
                               Edit{offs[e2.start], offs[e2.end], marker_open(2, e2.type) + " " + fill2 + " " +
                                                                       marker_close(2, e2.type)}};
  // Right to left so the earlier offsets stay valid.
  if (edits[0].begin < edits[1].begin) std::swap(edits[0], edits[1]);
  std::string out(text);
  for (const auto& e : edits) out.replace(e.begin, e.end - e.begin, e.with);
  return out;
}

}  // namespace

std::string enrich(std::string_view text, const EntityMention& e1, const EntityMention& e2) {
  return replace_pair(text, e1, e2, "drug1", "drug2");
}

std::string mark_entities(std::string_view text, const EntityMention& e1, const EntityMention& e2) {
  return replace_pair(text, e1, e2, e1.surface, e2.surface);
}

std::vector<PairInstance> make_pair_instances(const SentenceRecord& record, Partition partition) {
  validate(record);
  std::vector<PairInstance> out;
  out.reserve(record.pairs.size());
  for (const auto& p : record.pairs) {
    PairInstance inst;
    inst.e1 = *record.entity(p.e1);
    inst.e2 = *record.entity(p.e2);
    inst.instance_id = record.id + "#" + p.e1 + "#" + p.e2;
    inst.sentence_id = record.id;
    inst.text = record.text;
    inst.enriched_text = enrich(record.text, inst.e1, inst.e2);
    inst.label = p.label;
    inst.partition = partition;
    out.push_back(std::move(inst));
  }
  return out;
}

// ---- negative filtering ----------------------------------------------------

namespace {

bool is_word_char(char c) { return std::isalnum(static_cast<unsigned char>(c)) != 0 || c == '_'; }

bool token_bounded_substring(const std::string& needle, const std::string& hay) {
  if (needle.empty() || needle.size() > hay.size()) return false;
  for (std::size_t pos = hay.find(needle); pos != std::string::npos; pos = hay.find(needle, pos + 1)) {
    const bool left = pos == 0 || !is_word_char(hay[pos - 1]);
    const std::size_t after = pos + needle.size();
    const bool right = after == hay.size() || !is_word_char(hay[after]);
    if (left && right) return true;
  }
  return false;
}

struct ByteSpan {
  std::size_t begin, end;
};

/// True if text[begin,end), once the given mention spans are blanked out,
/// holds only commas, whitespace, "and" and "or".
bool only_list_glue(const std::string& text, std::size_t begin, std::size_t end,
                    const std::vector<ByteSpan>& mentions) {
  if (begin > end) return false;
  std::string seg = text.substr(begin, end - begin);
  for (const auto& m : mentions) {
    const std::size_t b = std::max(m.begin, begin), e = std::min(m.end, end);
    if (b < e) std::fill(seg.begin() + static_cast<std::ptrdiff_t>(b - begin),
                         seg.begin() + static_cast<std::ptrdiff_t>(e - begin), ' ');
  }
  for (char& c : seg)
    if (c == ',') c = ' ';
  std::istringstream words(casefold(seg));
  std::string w;
  while (words >> w)
    if (w != "and" && w != "or") return false;
  return true;
}

bool in_coordinate_list(const std::string& text, ByteSpan first, ByteSpan second,
                        const std::vector<ByteSpan>& mentions) {
  if (!only_list_glue(text, first.end, second.begin, mentions)) return false;
  static const std::array<std::string, 4> triggers = {"such as", "including", "e.g.", "followed by"};
  const std::string lower = casefold(text.substr(0, first.begin));
  for (const auto& trig : triggers) {
    for (std::size_t pos = lower.rfind(trig); pos != std::string::npos;
         pos = pos == 0 ? std::string::npos : lower.rfind(trig, pos - 1)) {
      const bool left = pos == 0 || !is_word_char(lower[pos - 1]);
      if (left && only_list_glue(text, pos + trig.size(), first.begin, mentions)) return true;
    }
  }
  return false;
}

}  // namespace

NegativeFilterResult filter_negatives(const std::vector<PairInstance>& instances, const NegativeFilterConfig& config) {
  // Mentions known per sentence, used to skip over other list members.
  std::map<std::string, std::vector<EntityMention>> mentions_by_sentence;
  for (const auto& inst : instances) {
    auto& v = mentions_by_sentence[inst.sentence_id];
    for (const auto* m : {&inst.e1, &inst.e2})
      if (std::none_of(v.begin(), v.end(), [&](const EntityMention& x) { return x.id == m->id; })) v.push_back(*m);
  }

  NegativeFilterResult result;
  for (const auto& inst : instances) {
    std::optional<NegativeRule> hit;
    if (inst.label == RelationLabel::negative) {
      const std::string s1 = casefold(inst.e1.surface), s2 = casefold(inst.e2.surface);
      if (config.identical_surface && s1 == s2) {
        hit = NegativeRule::identical_surface;
      } else if (config.nested_surface && (token_bounded_substring(s1, s2) || token_bounded_substring(s2, s1))) {
        hit = NegativeRule::nested_surface;
      } else if (config.coordinate_list) {
        const auto offs = code_point_offsets(inst.text);
        auto to_bytes = [&](const EntityMention& m) { return ByteSpan{offs.at(m.start), offs.at(m.end)}; };
        std::vector<ByteSpan> spans;
        for (const auto& m : mentions_by_sentence[inst.sentence_id]) spans.push_back(to_bytes(m));
        ByteSpan a = to_bytes(inst.e1), b = to_bytes(inst.e2);
        if (b.begin < a.begin) std::swap(a, b);
        if (a.end <= b.begin && in_coordinate_list(inst.text, a, b, spans)) hit = NegativeRule::coordinate_list;
      }
    }
    if (hit) {
      spdlog::debug("filter_negatives: removed {} by rule {}", inst.instance_id, to_string(*hit));
      result.removed.push_back({inst.instance_id, *hit});
    } else {
      result.kept.push_back(inst);
    }
  }
  return result;
}

// ---- split / stats ---------------------------------------------------------

TrainDevSplit split_train_dev(const std::vector<PairInstance>& instances, double fraction, std::uint64_t seed) {
  if (!(fraction > 0.0 && fraction < 1.0))
    throw std::invalid_argument("split fraction must be in (0,1), got " + std::to_string(fraction));
  for (const auto& inst : instances)
    if (inst.partition != Partition::train)
      throw std::invalid_argument("split_train_dev: instance " + inst.instance_id + " is not in the train partition");
  const std::size_t n = instances.size();
  const auto dev_size = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(n)));
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  stable_shuffle(order, seed);
  std::vector<bool> is_dev(n, false);
  for (std::size_t i = 0; i < dev_size; ++i) is_dev[order[i]] = true;
  TrainDevSplit out;
  for (std::size_t i = 0; i < n; ++i) {
    if (is_dev[i]) {
      out.dev.push_back(instances[i]);
      out.dev.back().partition = Partition::dev;
    } else {
      out.train.push_back(instances[i]);
    }
  }
  return out;
}

CorpusStats corpus_stats(const std::vector<PairInstance>& instances) {
  CorpusStats s;
  for (const auto& inst : instances)
    ++s.counts[static_cast<std::size_t>(inst.partition)][static_cast<std::size_t>(inst.label)];
  return s;
}

std::string format_stats(const CorpusStats& stats) {
  std::ostringstream os;
  auto row = [&](const std::string& a, const std::string& b, std::size_t tr, std::size_t dv, std::size_t te) {
    char buf[160];
    std::snprintf(buf, sizeof buf, "%-10s %-10s %8zu %8zu %8zu\n", a.c_str(), b.c_str(), tr, dv, te);
    os << buf;
  };
  char head[160];
  std::snprintf(head, sizeof head, "%-10s %-10s %8s %8s %8s\n", "Instances", "Type", "Train", "Dev", "Test");
  os << head;
  bool first = true;
  for (RelationLabel l : kAllLabels) {
    if (!is_positive(l)) continue;
    row(first ? "Positive" : "", std::string(to_string(l)), stats.count(Partition::train, l),
        stats.count(Partition::dev, l), stats.count(Partition::test, l));
    first = false;
  }
  row("Negative", "", stats.count(Partition::train, RelationLabel::negative),
      stats.count(Partition::dev, RelationLabel::negative), stats.count(Partition::test, RelationLabel::negative));
  row("Total", "", stats.total(Partition::train), stats.total(Partition::dev), stats.total(Partition::test));
  return os.str();
}

// ---- JSONL -----------------------------------------------------------------

namespace {

json mention_json(const EntityMention& m) {
  return json{{"id", m.id}, {"surface", m.surface}, {"type", to_string(m.type)}, {"start", m.start}, {"end", m.end}};
}

EntityMention mention_from(const json& j) {
  EntityMention m;
  m.id = j.value("id", std::string());
  m.surface = j.at("surface").get<std::string>();
  m.type = parse_drug_type(j.at("type").get<std::string>());
  m.start = j.at("start").get<std::size_t>();
  m.end = j.at("end").get<std::size_t>();
  return m;
}

template <typename T, typename Parse>
std::vector<T> read_lines(const fs::path& path, Parse parse) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CorpusError(path.string() + ": cannot open");
  std::vector<T> out;
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    try {
      out.push_back(parse(line, n));
    } catch (const CorpusError& e) {
      throw CorpusError(path.string() + ":" + e.what());
    }
  }
  return out;
}

}  // namespace

std::string to_json_line(const PairInstance& inst) {
  json j{{"instance_id", inst.instance_id}, {"sentence_id", inst.sentence_id},
         {"text", inst.text},               {"enriched_text", inst.enriched_text},
         {"e1", mention_json(inst.e1)},     {"e2", mention_json(inst.e2)},
         {"label", to_string(inst.label)},  {"partition", to_string(inst.partition)}};
  return j.dump();
}

PairInstance pair_instance_from_json_line(const std::string& line, std::size_t line_number) {
  try {
    const json j = json::parse(line);
    PairInstance inst;
    inst.instance_id = j.at("instance_id").get<std::string>();
    inst.sentence_id = j.at("sentence_id").get<std::string>();
    inst.text = j.at("text").get<std::string>();
    inst.enriched_text = j.at("enriched_text").get<std::string>();
    inst.e1 = mention_from(j.at("e1"));
    inst.e2 = mention_from(j.at("e2"));
    inst.label = parse_label(j.at("label").get<std::string>());
    inst.partition = parse_partition(j.at("partition").get<std::string>());
    return inst;
  } catch (const json::exception& e) {
    throw CorpusError(std::to_string(line_number) + ": " + e.what());
  } catch (const CorpusError& e) {
    throw CorpusError(std::to_string(line_number) + ": " + e.what());
  }
}

void write_file_atomic(const fs::path& path, const std::string& content) {
  const fs::path dir = path.has_parent_path() ? path.parent_path() : fs::path(".");
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (!fs::is_directory(dir)) throw CorpusError(dir.string() + ": cannot create directory");
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw CorpusError(tmp.string() + ": cannot open for writing");
    out << content;
    if (!out) throw CorpusError(tmp.string() + ": write failed");
  }
  fs::rename(tmp, path);
}

void write_jsonl(const fs::path& path, const std::vector<PairInstance>& instances) {
  std::string content;
  for (const auto& inst : instances) content += to_json_line(inst) + "\n";
  write_file_atomic(path, content);
}

std::vector<PairInstance> read_jsonl(const fs::path& path) {
  return read_lines<PairInstance>(path, pair_instance_from_json_line);
}

void write_sentences_jsonl(const fs::path& path, const std::vector<SentenceRecord>& records) {
  std::string content;
  for (const auto& r : records) {
    json ents = json::array(), pairs = json::array();
    for (const auto& e : r.entities) ents.push_back(mention_json(e));
    for (const auto& p : r.pairs) pairs.push_back({{"e1", p.e1}, {"e2", p.e2}, {"label", to_string(p.label)}});
    content += json{{"id", r.id}, {"text", r.text}, {"entities", ents}, {"pairs", pairs}}.dump() + "\n";
  }
  write_file_atomic(path, content);
}

std::vector<SentenceRecord> read_sentences_jsonl(const fs::path& path) {
  return read_lines<SentenceRecord>(path, [](const std::string& line, std::size_t n) {
    try {
      const json j = json::parse(line);
      SentenceRecord r;
      r.id = j.at("id").get<std::string>();
      r.text = j.at("text").get<std::string>();
      for (const auto& e : j.at("entities")) r.entities.push_back(mention_from(e));
      for (const auto& p : j.at("pairs"))
        r.pairs.push_back({p.at("e1").get<std::string>(), p.at("e2").get<std::string>(),
                           parse_label(p.at("label").get<std::string>())});
      validate(r);
      return r;
    } catch (const json::exception& e) {
      throw CorpusError(std::to_string(n) + ": " + e.what());
    } catch (const CorpusError& e) {
      throw CorpusError(std::to_string(n) + ": " + e.what());
    }
  });
}

}  // namespace egfi
