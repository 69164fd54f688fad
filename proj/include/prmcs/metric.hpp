#pragma once

#include <algorithm>
#include <cstdio>
#include <string>
#include <string_view>
#include <vector>

#include "prmcs/embedcore.hpp"
#include "prmcs/errors.hpp"
#include "prmcs/textproc.hpp"

namespace prmcs {

inline constexpr std::string_view kOriginalKind = "original";

struct MetricConfig {
  double w = 2.5;
};

/// w * max(0, cos(image, text)). With fine-tuned encoder weights producing
/// `text_vec` this is the perturbation-robust score.
inline double mcs(std::span<const double> image_vec, std::span<const double> text_vec,
                  const MetricConfig& cfg = {}) {
  if (!(cfg.w > 0.0)) throw ShapeMismatch("score weight must be > 0");
  return cfg.w * std::max(0.0, cosine(image_vec, text_vec));
}

struct ScoreRow {
  std::string id;
  std::string lang;
  std::string kind;  // "original" or a perturbation kind name
  double score = 0.0;

  bool operator==(const ScoreRow&) const = default;
};

inline std::string row_kind(const CaptionRecord& rec) {
  return rec.provenance ? std::string(kind_name(rec.provenance->kind))
                        : std::string(kOriginalKind);
}

/// One score per record, in input order.
inline std::vector<ScoreRow> score_dataset(const EmbeddingMatrix& images,
                                           const EncoderParams& params,
                                           const std::vector<CaptionRecord>& records,
                                           const MetricConfig& cfg = {}) {
  if (!records.empty() && images.dim() != params.shape.out_dim) {
    throw DimensionMismatch("image dim " + std::to_string(images.dim()) +
                            " differs from encoder out dim " + std::to_string(params.shape.out_dim));
  }
  std::vector<ScoreRow> rows;
  rows.reserve(records.size());
  for (const auto& rec : records) {
    const std::size_t r = images.find(rec.image_id);
    if (r == EmbeddingMatrix::npos) {
      throw UnknownImageId("record '" + rec.id + "' references unknown image '" + rec.image_id + "'");
    }
    const Vector text = encode_text(params, tokenize(rec.caption, rec.lang));
    rows.push_back({rec.id, rec.lang, row_kind(rec), mcs(images.row_vector(r), text, cfg)});
  }
  return rows;
}

/// CSV "id,lang,kind,score" with scores printed to 6 significant digits.
inline std::string scores_csv(const std::vector<ScoreRow>& rows) {
  std::string out = "id,lang,kind,score\n";
  char buf[32];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%.6g", r.score);
    out += r.id + ',' + r.lang + ',' + r.kind + ',' + buf + '\n';
  }
  return out;
}

inline std::vector<ScoreRow> parse_scores_csv(std::string_view text) {
  std::vector<ScoreRow> rows;
  std::size_t pos = 0;
  std::size_t line_no = 0;
  while (pos < text.size()) {
    std::size_t end = text.find('\n', pos);
    if (end == std::string_view::npos) end = text.size();
    std::string line(text.substr(pos, end - pos));
    pos = end + 1;
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || (line_no == 1 && line.rfind("id,", 0) == 0)) continue;
    std::vector<std::string> cols;
    std::size_t start = 0;
    for (std::size_t c; (c = line.find(',', start)) != std::string::npos; start = c + 1) {
      cols.push_back(line.substr(start, c - start));
    }
    cols.push_back(line.substr(start));
    if (cols.size() != 4) {
      throw ParseError("scores line " + std::to_string(line_no) + ": expected 4 columns");
    }
    try {
      std::size_t used = 0;
      const double score = std::stod(cols[3], &used);
      if (used != cols[3].size()) throw std::invalid_argument("trailing characters");
      rows.push_back({cols[0], cols[1], cols[2], score});
    } catch (const std::logic_error&) {
      throw ParseError("scores line " + std::to_string(line_no) + ": bad score '" + cols[3] + "'");
    }
  }
  return rows;
}

}  // namespace prmcs
