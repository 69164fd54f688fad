#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <sstream>
#include <string>
#include <unordered_set>
#include <vector>

#include <nlohmann/json.hpp>

#include "prmcs/embedcore.hpp"
#include "prmcs/errors.hpp"
#include "prmcs/losses.hpp"
#include "prmcs/rng.hpp"
#include "prmcs/textproc.hpp"

namespace prmcs {

struct TrainConfig {
  double lr = 5e-5;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;
  std::size_t batch_size = 32;
  std::size_t steps = 0;
  std::uint64_t seed = 0;
  double p = 0.4;
  std::vector<PerturbationKind> kinds{kAllKinds.begin(), kAllKinds.end()};
  LossWeights weights;

  void validate() const {
    if (!(lr > 0.0)) throw ParseError("lr must be > 0");
    if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) {
      throw ParseError("betas must lie in [0, 1)");
    }
    if (batch_size < 1) throw ParseError("batch_size must be >= 1");
    if (!(p >= 0.0 && p <= 1.0)) throw ParseError("p must lie in [0, 1]");
    if (kinds.empty()) throw ParseError("at least one perturbation kind must be enabled");
    if (weights.l1 < 0.0 || weights.l2 < 0.0 || weights.l3 < 0.0) {
      throw ParseError("loss weights must be non-negative");
    }
  }
};

inline void to_json(nlohmann::json& j, const TrainConfig& c) {
  std::vector<std::string> kinds;
  for (auto k : c.kinds) kinds.emplace_back(kind_name(k));
  j = nlohmann::json{{"lr", c.lr},
                     {"beta1", c.beta1},
                     {"beta2", c.beta2},
                     {"eps", c.eps},
                     {"weight_decay", c.weight_decay},
                     {"batch_size", c.batch_size},
                     {"steps", c.steps},
                     {"seed", c.seed},
                     {"p", c.p},
                     {"kinds", kinds},
                     {"lambda1", c.weights.l1},
                     {"lambda2", c.weights.l2},
                     {"lambda3", c.weights.l3}};
}

/// Missing keys keep their defaults; unknown kinds are rejected.
inline void from_json(const nlohmann::json& j, TrainConfig& c) {
  c.lr = j.value("lr", c.lr);
  c.beta1 = j.value("beta1", c.beta1);
  c.beta2 = j.value("beta2", c.beta2);
  c.eps = j.value("eps", c.eps);
  c.weight_decay = j.value("weight_decay", c.weight_decay);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.steps = j.value("steps", c.steps);
  c.seed = j.value("seed", c.seed);
  c.p = j.value("p", c.p);
  c.weights.l1 = j.value("lambda1", c.weights.l1);
  c.weights.l2 = j.value("lambda2", c.weights.l2);
  c.weights.l3 = j.value("lambda3", c.weights.l3);
  if (j.contains("kinds")) {
    c.kinds.clear();
    for (const auto& name : j.at("kinds")) {
      auto k = parse_kind(name.get<std::string>());
      if (!k) throw ParseError("unknown perturbation kind '" + name.get<std::string>() + "'");
      c.kinds.push_back(*k);
    }
  }
}

// ---------------------------------------------------------------------------
// AdamW

struct OptimizerState {
  EncoderParams m;
  EncoderParams v;
  std::uint64_t t = 0;

  static OptimizerState for_params(const EncoderParams& p) {
    return {EncoderParams::zeros(p.shape, p.gate_gain), EncoderParams::zeros(p.shape, p.gate_gain),
            0};
  }
};

/// One decoupled-weight-decay Adam update over every trainable block, followed
/// by the temperature clamp exp(temp_logit) <= 100.
inline void adamw_step(EncoderParams& params, const EncoderParams& grads, OptimizerState& state,
                       const TrainConfig& cfg) {
  if (grads.shape != params.shape || state.m.shape != params.shape ||
      state.v.shape != params.shape) {
    throw ShapeMismatch("optimizer state, gradient and parameter shapes differ");
  }
  check_params(params);
  check_params(grads);
  ++state.t;
  const double t = static_cast<double>(state.t);
  const double bc1 = 1.0 - std::pow(cfg.beta1, t);
  const double bc2 = 1.0 - std::pow(cfg.beta2, t);

  std::vector<std::span<double>> theta, m, v;
  std::vector<std::span<const double>> g;
  for_each_block(params, [&](std::string_view, std::span<double> b) { theta.push_back(b); });
  for_each_block(state.m, [&](std::string_view, std::span<double> b) { m.push_back(b); });
  for_each_block(state.v, [&](std::string_view, std::span<double> b) { v.push_back(b); });
  for_each_block(const_cast<EncoderParams&>(grads),
                 [&](std::string_view, std::span<double> b) { g.emplace_back(b); });

  for (std::size_t b = 0; b < theta.size(); ++b) {
    for (std::size_t i = 0; i < theta[b].size(); ++i) {
      const double gi = g[b][i];
      m[b][i] = cfg.beta1 * m[b][i] + (1.0 - cfg.beta1) * gi;
      v[b][i] = cfg.beta2 * v[b][i] + (1.0 - cfg.beta2) * gi * gi;
      const double m_hat = m[b][i] / bc1;
      const double v_hat = v[b][i] / bc2;
      theta[b][i] -= cfg.lr * (m_hat / (std::sqrt(v_hat) + cfg.eps) + cfg.weight_decay * theta[b][i]);
    }
  }
  params.temp_logit = std::min(params.temp_logit, kMaxTempLogit);
}

// ---------------------------------------------------------------------------
// Synthetic data

struct SynthOptions {
  std::size_t n_pairs = 200;
  std::size_t vocab_words = 500;
  std::size_t dim = 32;
  double sigma = 0.1;
  std::uint64_t seed = 0;
  std::size_t min_words = 8;
  std::size_t max_words = 20;
};

struct SynthData {
  std::vector<std::string> lexicon;
  std::vector<Vector> word_vectors;
  EmbeddingMatrix images;   // keyed by image_id
  EmbeddingMatrix teacher;  // noise-free caption vectors keyed by record id
  std::vector<CaptionRecord> records;
};

inline Vector normalized(Vector v) {
  const double n = norm(v);
  if (n >= kNormFloor) {
    for (double& x : v) x /= n;
  }
  return v;
}

namespace detail {

inline constexpr std::string_view kConsonants = "bdfgklmnprstvz";
inline constexpr std::string_view kVowels = "aeiou";

/// Pseudo-words of three consonant-vowel syllables. All words have the same
/// length, so one word can only occur inside a caption as a whole token.
inline std::vector<std::string> make_lexicon(std::size_t n, RngStream& rng) {
  std::vector<std::string> words;
  std::unordered_set<std::string> seen;
  while (words.size() < n) {
    std::string w;
    for (int s = 0; s < 3; ++s) {
      w.push_back(kConsonants[rng.below(kConsonants.size())]);
      w.push_back(kVowels[rng.below(kVowels.size())]);
    }
    if (seen.insert(w).second) words.push_back(std::move(w));
  }
  return words;
}

inline std::string padded(std::size_t i, std::size_t width = 6) {
  std::string s = std::to_string(i);
  return std::string(width > s.size() ? width - s.size() : 0, '0') + s;
}

}  // namespace detail

inline constexpr std::array<std::string_view, 4> kSynthLanguages = {"en", "de", "fr", "es"};

/// Desk-scale image/caption pairs. Each caption is 8-20 lexicon words, the
/// j-th drawn from the words assigned to position j; its image is normalize(sum of word vectors + sigma * N(0, I)); 2-4
/// of its words are recorded as critical objects (in caption order).
inline SynthData synth_dataset(const SynthOptions& opt) {
  if (opt.n_pairs < 1) throw ShapeMismatch("synth_dataset needs n_pairs >= 1");
  if (opt.dim < 1) throw ShapeMismatch("synth_dataset needs dim >= 1");
  if (opt.vocab_words < opt.max_words) {
    throw ShapeMismatch("lexicon must hold at least max_words words");
  }
  RngStream rng(opt.seed);
  SynthData out;
  out.lexicon = detail::make_lexicon(opt.vocab_words, rng);
  out.word_vectors.reserve(opt.vocab_words);
  for (std::size_t w = 0; w < opt.vocab_words; ++w) {
    Vector v(opt.dim);
    for (double& x : v) x = rng.gaussian();
    out.word_vectors.push_back(normalized(std::move(v)));
  }

  // Word w may only appear at caption position w % max_words, so word order
  // carries information the image embedding can confirm.
  const std::size_t slots = opt.max_words;
  std::vector<std::size_t> chosen;
  for (std::size_t r = 0; r < opt.n_pairs; ++r) {
    const std::size_t n = opt.min_words + rng.below(opt.max_words - opt.min_words + 1);
    chosen.clear();
    for (std::size_t j = 0; j < n; ++j) {
      const std::size_t per_slot = (opt.vocab_words - j + slots - 1) / slots;
      chosen.push_back(j + slots * rng.below(per_slot));
    }
    Vector bag(opt.dim, 0.0);
    TokenSequence words;
    for (std::size_t w : chosen) {
      words.push_back(out.lexicon[w]);
      for (std::size_t k = 0; k < opt.dim; ++k) bag[k] += out.word_vectors[w][k];
    }
    Vector image = bag;
    for (double& x : image) x += opt.sigma * rng.gaussian();

    const std::size_t n_obj = 2 + rng.below(3);
    std::vector<std::size_t> positions(n);
    for (std::size_t i = 0; i < n; ++i) positions[i] = i;
    for (std::size_t i = 0; i < n_obj; ++i) {
      const std::size_t j = i + rng.below(n - i);
      std::swap(positions[i], positions[j]);
    }
    positions.resize(n_obj);
    std::sort(positions.begin(), positions.end());

    CaptionRecord rec;
    rec.id = "s" + detail::padded(r);
    rec.image_id = "img" + detail::padded(r);
    rec.lang = std::string(kSynthLanguages[r % kSynthLanguages.size()]);
    rec.caption = detokenize(words, rec.lang);
    for (std::size_t pos : positions) rec.critical_objects.push_back(words[pos]);

    out.images.append(rec.image_id, rec.lang, normalized(std::move(image)));
    out.teacher.append(rec.id, rec.lang, normalized(std::move(bag)));
    out.records.push_back(std::move(rec));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Training loops

struct TraceRow {
  std::size_t step = 0;
  LossBreakdown loss;
};

struct TrainResult {
  EncoderParams params;
  std::vector<TraceRow> trace;
};

/// CSV "step,total,l_clip,l1,l2,l3" with round-trippable doubles.
inline std::string trace_csv(const std::vector<TraceRow>& trace) {
  std::ostringstream out;
  out.precision(17);
  out << "step,total,l_clip,l1,l2,l3\n";
  for (const auto& r : trace) {
    out << r.step << ',' << r.loss.total << ',' << r.loss.clip << ',' << r.loss.l1 << ','
        << r.loss.l2 << ',' << r.loss.l3 << '\n';
  }
  return out.str();
}

/// Indices of one minibatch: the whole dataset in order when it fits,
/// otherwise `batch` distinct indices drawn with a partial Fisher-Yates.
inline std::vector<std::size_t> draw_batch(std::size_t n, std::size_t batch, RngStream& rng) {
  std::vector<std::size_t> idx(n);
  for (std::size_t i = 0; i < n; ++i) idx[i] = i;
  if (batch >= n) return idx;
  for (std::size_t i = 0; i < batch; ++i) {
    const std::size_t j = i + rng.below(n - i);
    std::swap(idx[i], idx[j]);
  }
  idx.resize(batch);
  return idx;
}

inline Vector lookup_row(const EmbeddingMatrix& m, const std::string& id, bool teacher) {
  const std::size_t row = m.find(id);
  if (row == EmbeddingMatrix::npos) {
    if (teacher) throw ManifestMismatch("no teacher row for caption id '" + id + "'");
    throw UnknownImageId("image id '" + id + "' is not in the manifest");
  }
  return m.row_vector(row);
}

/// Teacher learning: minimizes the batched MSE between teacher rows (matched
/// by caption id) and encoder outputs.
inline TrainResult train_distill(const EmbeddingMatrix& teacher,
                                 const std::vector<CaptionRecord>& captions, EncoderParams params,
                                 const TrainConfig& cfg) {
  cfg.validate();
  check_params(params);
  if (teacher.dim() != params.shape.out_dim) {
    throw ManifestMismatch("teacher dim " + std::to_string(teacher.dim()) +
                           " differs from encoder out dim " + std::to_string(params.shape.out_dim));
  }
  std::vector<Vector> targets;
  std::vector<TokenSequence> tokens;
  for (const auto& rec : captions) {
    targets.push_back(lookup_row(teacher, rec.id, true));
    tokens.push_back(tokenize(rec.caption, rec.lang));
  }
  TrainResult result;
  if (cfg.steps == 0) {
    result.params = std::move(params);
    return result;
  }
  if (captions.empty()) throw DatasetTooSmall("distillation needs at least one caption");

  RngStream rng(cfg.seed);
  OptimizerState state = OptimizerState::for_params(params);
  const double dim = static_cast<double>(params.shape.out_dim);
  for (std::size_t step = 0; step < cfg.steps; ++step) {
    const auto idx = draw_batch(captions.size(), cfg.batch_size, rng);
    const double inv_b = 1.0 / static_cast<double>(idx.size());
    EncoderParams grad = EncoderParams::zeros(params.shape, params.gate_gain);
    double loss = 0.0;
    for (std::size_t i : idx) {
      const auto trace = encode_trace(params, tokens[i]);
      loss += loss_distill_mse(targets[i], trace.output) * inv_b;
      Vector d_out(trace.output.size());
      for (std::size_t k = 0; k < d_out.size(); ++k) {
        d_out[k] = 2.0 * (trace.output[k] - targets[i][k]) / dim * inv_b;
      }
      backprop_encoder(params, trace, d_out, grad);
    }
    adamw_step(params, grad, state, cfg);
    TraceRow row;
    row.step = step;
    row.loss.total = loss;
    result.trace.push_back(row);
  }
  result.params = std::move(params);
  return result;
}

/// Assembles one triplet batch: every record perturbed with the same kind.
inline TripletBatch make_triplet_batch(const EmbeddingMatrix& images,
                                       const std::vector<CaptionRecord>& captions,
                                       std::span<const std::size_t> idx, PerturbationKind kind,
                                       double p, RngStream& rng) {
  TripletBatch batch;
  batch.kind = kind;
  for (std::size_t i : idx) {
    const auto& rec = captions[i];
    batch.images.push_back(lookup_row(images, rec.image_id, false));
    batch.originals.push_back(tokenize(rec.caption, rec.lang));
    const auto perturbed = perturb_record(rec, kind, p, rng);
    batch.perturbed.push_back(tokenize(perturbed.caption, perturbed.lang));
  }
  return batch;
}

/// Perturbation-robust fine-tuning. Each step samples a batch, one kind for
/// the whole batch, and fresh perturbations from the step's draws.
inline TrainResult train_pr(const EmbeddingMatrix& images, const std::vector<CaptionRecord>& captions,
                            EncoderParams params, const TrainConfig& cfg) {
  cfg.validate();
  check_params(params);
  if (images.dim() != params.shape.out_dim) {
    throw DimensionMismatch("image dim " + std::to_string(images.dim()) +
                            " differs from encoder out dim " + std::to_string(params.shape.out_dim));
  }
  for (const auto& rec : captions) {
    validate_record(rec);
    if (images.find(rec.image_id) == EmbeddingMatrix::npos) {
      throw UnknownImageId("image id '" + rec.image_id + "' of record '" + rec.id +
                           "' is not in the manifest");
    }
  }
  TrainResult result;
  if (cfg.steps > 0 && captions.empty()) throw DatasetTooSmall("fine-tuning needs at least one caption");

  RngStream rng(cfg.seed);
  OptimizerState state = OptimizerState::for_params(params);
  for (std::size_t step = 0; step < cfg.steps; ++step) {
    const auto idx = draw_batch(captions.size(), cfg.batch_size, rng);
    const PerturbationKind kind = cfg.kinds[rng.below(cfg.kinds.size())];
    const auto batch = make_triplet_batch(images, captions, idx, kind, cfg.p, rng);
    const auto g = grad_total(batch, params, cfg.weights);
    adamw_step(params, g.grad, state, cfg);
    result.trace.push_back({step, g.loss});
  }
  result.params = std::move(params);
  return result;
}

inline constexpr std::size_t kFewShotCap = 300;

struct FewShotSplit {
  std::vector<CaptionRecord> adaptation;
  std::vector<CaptionRecord> evaluation;
};

/// 1:9 split by ascending FNV-1a hash of the record id (ties broken by id);
/// the adaptation part is floor(n / 10) records, capped at 300.
inline FewShotSplit few_shot_split(const std::vector<CaptionRecord>& dataset) {
  if (dataset.size() < 10) {
    throw DatasetTooSmall("few-shot adaptation needs >= 10 records, got " +
                          std::to_string(dataset.size()));
  }
  std::vector<std::size_t> order(dataset.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    const auto ha = fnv1a64(dataset[a].id);
    const auto hb = fnv1a64(dataset[b].id);
    return ha != hb ? ha < hb : dataset[a].id < dataset[b].id;
  });
  const std::size_t k = std::min(dataset.size() / 10, kFewShotCap);
  FewShotSplit split;
  for (std::size_t i = 0; i < order.size(); ++i) {
    (i < k ? split.adaptation : split.evaluation).push_back(dataset[order[i]]);
  }
  return split;
}

struct FewShotResult {
  TrainResult training;
  FewShotSplit split;
};

inline FewShotResult train_few_shot(const EmbeddingMatrix& images,
                                    const std::vector<CaptionRecord>& dataset,
                                    EncoderParams params, const TrainConfig& cfg) {
  FewShotResult out;
  out.split = few_shot_split(dataset);
  out.training = train_pr(images, out.split.adaptation, std::move(params), cfg);
  return out;
}

}  // namespace prmcs
