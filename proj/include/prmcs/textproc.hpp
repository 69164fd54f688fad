#pragma once

#include <algorithm>
#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "prmcs/errors.hpp"
#include "prmcs/rng.hpp"

namespace prmcs {

using TokenSequence = std::vector<std::string>;

inline constexpr std::string_view kMaskToken = "[MASK]";

enum class PerturbationKind { kRepetition, kRemoval, kMasking, kJumble, kSubstitution };

inline constexpr std::array<PerturbationKind, 5> kAllKinds = {
    PerturbationKind::kRepetition, PerturbationKind::kRemoval, PerturbationKind::kMasking,
    PerturbationKind::kJumble, PerturbationKind::kSubstitution};

inline std::string_view kind_name(PerturbationKind kind) {
  switch (kind) {
    case PerturbationKind::kRepetition: return "repetition";
    case PerturbationKind::kRemoval: return "removal";
    case PerturbationKind::kMasking: return "masking";
    case PerturbationKind::kJumble: return "jumble";
    case PerturbationKind::kSubstitution: return "substitution";
  }
  return "unknown";
}

inline std::optional<PerturbationKind> parse_kind(std::string_view name) {
  for (PerturbationKind k : kAllKinds) {
    if (kind_name(k) == name) return k;
  }
  return std::nullopt;
}

/// Provenance attached to a perturbed record.
struct Provenance {
  PerturbationKind kind;
  std::uint64_t seed = 0;
  double p = 0.0;
};

struct CaptionRecord {
  std::string id;
  std::string lang;
  std::string caption;
  std::vector<std::string> critical_objects;
  std::string image_id;
  std::optional<Provenance> provenance;

  bool operator==(const CaptionRecord&) const = default;
};

inline bool operator==(const Provenance& a, const Provenance& b) {
  return a.kind == b.kind && a.seed == b.seed && a.p == b.p;
}

namespace detail {

/// Decodes one UTF-8 codepoint starting at text[pos]; advances pos. Malformed
/// bytes decode as U+FFFD and consume a single byte.
inline char32_t next_codepoint(std::string_view text, std::size_t& pos) {
  const auto byte = [&](std::size_t i) { return static_cast<unsigned char>(text[i]); };
  const unsigned char lead = byte(pos);
  std::size_t len = 0;
  char32_t cp = 0;
  if (lead < 0x80) {
    ++pos;
    return lead;
  } else if ((lead & 0xE0) == 0xC0) {
    len = 2;
    cp = lead & 0x1F;
  } else if ((lead & 0xF0) == 0xE0) {
    len = 3;
    cp = lead & 0x0F;
  } else if ((lead & 0xF8) == 0xF0) {
    len = 4;
    cp = lead & 0x07;
  } else {
    ++pos;
    return 0xFFFD;
  }
  if (pos + len > text.size()) {
    ++pos;
    return 0xFFFD;
  }
  for (std::size_t i = 1; i < len; ++i) {
    if ((byte(pos + i) & 0xC0) != 0x80) {
      ++pos;
      return 0xFFFD;
    }
    cp = (cp << 6) | (byte(pos + i) & 0x3F);
  }
  pos += len;
  return cp;
}

inline bool is_space(char32_t cp) {
  switch (cp) {
    case 0x09: case 0x0A: case 0x0B: case 0x0C: case 0x0D: case 0x20:
    case 0x85: case 0xA0: case 0x1680: case 0x2028: case 0x2029:
    case 0x202F: case 0x205F: case 0x3000:
      return true;
    default:
      return cp >= 0x2000 && cp <= 0x200A;
  }
}

inline bool is_cjk(char32_t cp) {
  return (cp >= 0x3040 && cp <= 0x30FF) ||    // kana
         (cp >= 0x3400 && cp <= 0x4DBF) ||    // CJK ext. A
         (cp >= 0x4E00 && cp <= 0x9FFF) ||    // CJK unified
         (cp >= 0xF900 && cp <= 0xFAFF) ||    // compatibility ideographs
         (cp >= 0x3001 && cp <= 0x303F) ||    // CJK punctuation
         (cp >= 0xFF00 && cp <= 0xFFEF) ||    // half/full width forms
         (cp >= 0x20000 && cp <= 0x2FA1F);    // supplementary ideographs
}

struct Piece {
  char32_t cp;
  std::string_view bytes;
};

}  // namespace detail

/// Languages whose tokens are codepoints and whose text has no separators.
inline bool is_character_language(std::string_view lang) { return lang == "ja" || lang == "zh"; }

/// True when `text` should be split per codepoint: a character language, or
/// text with no internal whitespace that contains at least one CJK codepoint.
inline bool uses_character_tokens(std::string_view text, std::string_view lang) {
  if (is_character_language(lang)) return true;
  bool seen_content = false;
  bool pending_space = false;
  bool internal_space = false;
  bool cjk = false;
  for (std::size_t pos = 0; pos < text.size();) {
    const char32_t cp = detail::next_codepoint(text, pos);
    if (detail::is_space(cp)) {
      if (seen_content) pending_space = true;
      continue;
    }
    if (pending_space) internal_space = true;
    seen_content = true;
    cjk = cjk || detail::is_cjk(cp);
  }
  return cjk && !internal_space;
}

inline TokenSequence tokenize(std::string_view text, std::string_view lang) {
  TokenSequence tokens;
  if (uses_character_tokens(text, lang)) {
    std::vector<detail::Piece> pieces;
    for (std::size_t pos = 0; pos < text.size();) {
      const std::size_t start = pos;
      const char32_t cp = detail::next_codepoint(text, pos);
      if (!detail::is_space(cp)) pieces.push_back({cp, text.substr(start, pos - start)});
    }
    // "[MASK]" stays atomic so that masked captions survive a text round trip.
    for (std::size_t i = 0; i < pieces.size();) {
      if (i + kMaskToken.size() <= pieces.size()) {
        bool mask = true;
        for (std::size_t j = 0; j < kMaskToken.size() && mask; ++j) {
          mask = pieces[i + j].cp == static_cast<char32_t>(kMaskToken[j]);
        }
        if (mask) {
          tokens.emplace_back(kMaskToken);
          i += kMaskToken.size();
          continue;
        }
      }
      tokens.emplace_back(pieces[i].bytes);
      ++i;
    }
    return tokens;
  }

  std::string current;
  for (std::size_t pos = 0; pos < text.size();) {
    const std::size_t start = pos;
    const char32_t cp = detail::next_codepoint(text, pos);
    if (detail::is_space(cp)) {
      if (!current.empty()) tokens.push_back(std::move(current));
      current.clear();
    } else {
      current.append(text.substr(start, pos - start));
    }
  }
  if (!current.empty()) tokens.push_back(std::move(current));
  return tokens;
}

inline std::string detokenize(std::span<const std::string> tokens, std::string_view lang) {
  const std::string_view sep = is_character_language(lang) ? "" : " ";
  std::string out;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (i) out.append(sep);
    out.append(tokens[i]);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Token-level perturbations. Each consumes exactly one draw per input token
// (Jumble: one per swap), in input order.

inline TokenSequence perturb_repetition(std::span<const std::string> tokens, double p,
                                        RngStream& rng) {
  TokenSequence out;
  out.reserve(tokens.size() * 2);
  for (const auto& tok : tokens) {
    out.push_back(tok);
    if (rng.unit() < p) out.push_back(tok);
  }
  return out;
}

/// Each token is kept with probability `p_keep`.
inline TokenSequence perturb_removal(std::span<const std::string> tokens, double p_keep,
                                     RngStream& rng) {
  TokenSequence out;
  for (const auto& tok : tokens) {
    if (rng.unit() < p_keep) out.push_back(tok);
  }
  return out;
}

inline TokenSequence perturb_masking(std::span<const std::string> tokens, double p,
                                     RngStream& rng) {
  TokenSequence out;
  out.reserve(tokens.size());
  for (const auto& tok : tokens) {
    out.push_back(rng.unit() < p ? std::string(kMaskToken) : tok);
  }
  return out;
}

template <typename T>
void fisher_yates(std::vector<T>& items, RngStream& rng) {
  for (std::size_t i = items.size(); i-- > 1;) {
    const auto j = static_cast<std::size_t>(rng.unit() * static_cast<double>(i + 1));
    std::swap(items[i], items[j]);
  }
}

inline TokenSequence perturb_jumble(std::span<const std::string> tokens, RngStream& rng) {
  TokenSequence out(tokens.begin(), tokens.end());
  fisher_yates(out, rng);
  return out;
}

inline constexpr int kMaxSubstitutionShuffles = 64;

/// The object order applied by Substitution: Fisher-Yates reshuffles until the
/// order differs from the original, falling back to a rotation by one.
inline std::vector<std::string> substitution_order(const std::vector<std::string>& objects,
                                                   RngStream& rng) {
  std::vector<std::string> shuffled = objects;
  for (int attempt = 0; attempt < kMaxSubstitutionShuffles && shuffled == objects; ++attempt) {
    fisher_yates(shuffled, rng);
  }
  if (shuffled == objects) {
    std::rotate(shuffled.begin(), shuffled.begin() + 1, shuffled.end());
  }
  return shuffled;
}

/// Replaces the last occurrence of each original object (in list order) with
/// the object at the same index of `order`. Absent objects are skipped.
inline std::string apply_substitution(std::string caption, const std::vector<std::string>& objects,
                                      const std::vector<std::string>& order) {
  if (objects.size() != order.size()) {
    throw InvalidRecord("substitution order has " + std::to_string(order.size()) +
                        " objects, expected " + std::to_string(objects.size()));
  }
  for (std::size_t j = 0; j < objects.size(); ++j) {
    if (objects[j].empty()) continue;
    const std::size_t at = caption.rfind(objects[j]);
    if (at == std::string::npos) continue;
    caption.replace(at, objects[j].size(), order[j]);
  }
  return caption;
}

inline void check_critical_objects(std::string_view caption,
                                   const std::vector<std::string>& objects) {
  for (const auto& obj : objects) {
    if (obj.empty() || caption.find(obj) == std::string_view::npos) {
      throw InvalidRecord("critical object '" + obj + "' is not a substring of the caption");
    }
  }
}

/// `forced_order`, when given, replaces the random reshuffle (it must be a
/// reordering of `objects` of the same length).
inline std::string perturb_substitution(
    const std::string& caption, const std::vector<std::string>& objects, RngStream& rng,
    const std::optional<std::vector<std::string>>& forced_order = std::nullopt) {
  check_critical_objects(caption, objects);
  if (objects.size() < 2) return caption;
  const auto order = forced_order ? *forced_order : substitution_order(objects, rng);
  return apply_substitution(caption, objects, order);
}

inline void validate_record(const CaptionRecord& record) {
  if (record.id.empty()) throw InvalidRecord("record has an empty id");
  check_critical_objects(record.caption, record.critical_objects);
}

/// Applies one perturbation to a record. `p` is the event probability for
/// Repetition and Masking, the keep probability for Removal, and unused for
/// Jumble and Substitution.
inline CaptionRecord perturb_record(
    const CaptionRecord& record, PerturbationKind kind, double p, RngStream& rng,
    const std::optional<std::vector<std::string>>& forced_order = std::nullopt) {
  validate_record(record);
  CaptionRecord out = record;
  if (kind == PerturbationKind::kSubstitution) {
    out.caption = perturb_substitution(record.caption, record.critical_objects, rng, forced_order);
  } else {
    const TokenSequence tokens = tokenize(record.caption, record.lang);
    TokenSequence perturbed;
    switch (kind) {
      case PerturbationKind::kRepetition: perturbed = perturb_repetition(tokens, p, rng); break;
      case PerturbationKind::kRemoval: perturbed = perturb_removal(tokens, p, rng); break;
      case PerturbationKind::kMasking: perturbed = perturb_masking(tokens, p, rng); break;
      case PerturbationKind::kJumble: perturbed = perturb_jumble(tokens, rng); break;
      case PerturbationKind::kSubstitution: break;
    }
    out.caption = detokenize(perturbed, record.lang);
  }
  out.provenance = Provenance{kind, 0, p};
  return out;
}

}  // namespace prmcs
