#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <unordered_set>
#include <vector>

#include <nlohmann/json.hpp>

#include "prmcs/errors.hpp"
#include "prmcs/io.hpp"
#include "prmcs/textproc.hpp"

namespace prmcs {

/// One JSON object per line, keys in a fixed order.
inline std::string record_to_json_line(const CaptionRecord& r) {
  nlohmann::ordered_json j;
  j["id"] = r.id;
  j["lang"] = r.lang;
  j["caption"] = r.caption;
  j["critical_objects"] = r.critical_objects;
  j["image_id"] = r.image_id;
  if (r.provenance) {
    j["kind"] = kind_name(r.provenance->kind);
    j["seed"] = r.provenance->seed;
    j["p"] = r.provenance->p;
  }
  return j.dump();
}

inline CaptionRecord record_from_json(const nlohmann::json& j) {
  CaptionRecord r;
  r.id = j.at("id").get<std::string>();
  r.lang = j.at("lang").get<std::string>();
  r.caption = j.at("caption").get<std::string>();
  if (j.contains("critical_objects")) {
    r.critical_objects = j.at("critical_objects").get<std::vector<std::string>>();
  }
  r.image_id = j.at("image_id").get<std::string>();
  if (j.contains("kind")) {
    const auto name = j.at("kind").get<std::string>();
    if (name != "original") {
      const auto kind = parse_kind(name);
      if (!kind) throw InvalidRecord("unknown kind '" + name + "'");
      r.provenance = Provenance{*kind, j.value("seed", std::uint64_t{0}), j.value("p", 0.0)};
    }
  }
  return r;
}

/// Parses and validates JSONL records. Errors carry the 1-based line number.
/// With `unique_ids`, a repeated id is rejected.
inline std::vector<CaptionRecord> parse_records(std::string_view text, bool unique_ids = true) {
  std::vector<CaptionRecord> out;
  std::unordered_set<std::string> seen;
  std::size_t pos = 0;
  std::size_t line_no = 0;
  while (pos < text.size()) {
    std::size_t end = text.find('\n', pos);
    if (end == std::string_view::npos) end = text.size();
    const auto line = text.substr(pos, end - pos);
    pos = end + 1;
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string_view::npos) continue;
    const std::string where = "line " + std::to_string(line_no) + ": ";
    CaptionRecord rec;
    try {
      rec = record_from_json(nlohmann::json::parse(line));
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(where + e.what());
    } catch (const Error& e) {
      throw InvalidRecord(where + e.detail());
    }
    // Perturbed captions need not contain their critical objects any more.
    try {
      if (rec.provenance) {
        if (rec.id.empty()) throw InvalidRecord("record has an empty id");
      } else {
        validate_record(rec);
      }
    } catch (const Error& e) {
      throw InvalidRecord(where + e.detail());
    }
    if (unique_ids && !seen.insert(rec.id).second) {
      throw InvalidRecord(where + "duplicate id '" + rec.id + "'");
    }
    out.push_back(std::move(rec));
  }
  return out;
}

inline std::string records_to_jsonl(const std::vector<CaptionRecord>& records) {
  std::string out;
  for (const auto& r : records) {
    out += record_to_json_line(r);
    out += '\n';
  }
  return out;
}

inline std::vector<CaptionRecord> load_records(const std::filesystem::path& path,
                                               bool unique_ids = true) {
  return parse_records(io::read_file(path), unique_ids);
}

inline void save_records(const std::filesystem::path& path,
                         const std::vector<CaptionRecord>& records) {
  io::write_file_atomic(path, records_to_jsonl(records));
}

}  // namespace prmcs
