#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <span>
#include <vector>

#include "prmcs/embedcore.hpp"
#include "prmcs/errors.hpp"
#include "prmcs/rng.hpp"
#include "prmcs/textproc.hpp"

namespace prmcs {

struct LossWeights {
  double l1 = 0.1;
  double l2 = 0.05;
  double l3 = 0.05;

  static LossWeights none() { return {0.0, 0.0, 0.0}; }
};

/// (image, original caption, perturbed caption) triplets sharing one
/// perturbation kind.
struct TripletBatch {
  std::vector<Vector> images;
  std::vector<TokenSequence> originals;
  std::vector<TokenSequence> perturbed;
  PerturbationKind kind = PerturbationKind::kRepetition;

  std::size_t size() const { return images.size(); }
};

inline void check_batch(const TripletBatch& b) {
  if (b.images.empty()) throw ShapeMismatch("triplet batch is empty");
  if (b.originals.size() != b.images.size() || b.perturbed.size() != b.images.size()) {
    throw ShapeMismatch("triplet batch lists have unequal lengths");
  }
}

// ---------------------------------------------------------------------------
// Individual terms

/// 1 - cos(image, original text).
inline double loss_l1(std::span<const double> image, std::span<const double> original) {
  return 1.0 - cosine(image, original);
}

/// max(0, cos(image, perturbed text)).
inline double loss_l2(std::span<const double> image, std::span<const double> perturbed) {
  return std::max(0.0, cosine(image, perturbed));
}

/// max(0, cos(original text, perturbed text)).
inline double loss_l3(std::span<const double> original, std::span<const double> perturbed) {
  return std::max(0.0, cosine(original, perturbed));
}

/// Mean squared difference over dimensions.
inline double loss_distill_mse(std::span<const double> teacher, std::span<const double> student) {
  if (teacher.size() != student.size()) {
    throw DimensionMismatch("teacher dim " + std::to_string(teacher.size()) + " vs student dim " +
                            std::to_string(student.size()));
  }
  if (teacher.empty()) return 0.0;
  double s = 0.0;
  for (std::size_t i = 0; i < teacher.size(); ++i) {
    const double diff = teacher[i] - student[i];
    s += diff * diff;
  }
  return s / static_cast<double>(teacher.size());
}

inline double loss_distill_mse(std::span<const Vector> teachers, std::span<const Vector> students) {
  if (teachers.size() != students.size() || teachers.empty()) {
    throw ShapeMismatch("distillation batch sizes differ or are empty");
  }
  double s = 0.0;
  for (std::size_t i = 0; i < teachers.size(); ++i) s += loss_distill_mse(teachers[i], students[i]);
  return s / static_cast<double>(teachers.size());
}

namespace detail {

inline double log_sum_exp(std::span<const double> xs) {
  const double m = *std::max_element(xs.begin(), xs.end());
  double s = 0.0;
  for (double x : xs) s += std::exp(x - m);
  return m + std::log(s);
}

struct ClipResult {
  double loss = 0.0;
  std::vector<Vector> d_texts;
  double d_temp_logit = 0.0;
};

/// Symmetric in-batch cross-entropy over S_ij = exp(temp_logit) cos(v_i, t_j),
/// optionally with gradients for the text side and the temperature.
inline ClipResult clip_forward(std::span<const Vector> images, std::span<const Vector> texts,
                               double temp_logit, bool want_grad) {
  const std::size_t B = images.size();
  if (B == 0 || texts.size() != B) throw ShapeMismatch("contrastive batch sizes differ or are empty");
  const double scale = std::exp(temp_logit);
  std::vector<double> cos(B * B), logits(B * B);
  for (std::size_t i = 0; i < B; ++i) {
    for (std::size_t j = 0; j < B; ++j) {
      cos[i * B + j] = cosine(images[i], texts[j]);
      logits[i * B + j] = scale * cos[i * B + j];
    }
  }
  std::vector<double> p_row(B * B), p_col(B * B);
  double row_loss = 0.0, col_loss = 0.0;
  std::vector<double> buf(B);
  for (std::size_t i = 0; i < B; ++i) {
    for (std::size_t j = 0; j < B; ++j) buf[j] = logits[i * B + j];
    const double lse = log_sum_exp(buf);
    row_loss += lse - logits[i * B + i];
    for (std::size_t j = 0; j < B; ++j) p_row[i * B + j] = std::exp(buf[j] - lse);
  }
  for (std::size_t j = 0; j < B; ++j) {
    for (std::size_t i = 0; i < B; ++i) buf[i] = logits[i * B + j];
    const double lse = log_sum_exp(buf);
    col_loss += lse - logits[j * B + j];
    for (std::size_t i = 0; i < B; ++i) p_col[i * B + j] = std::exp(buf[i] - lse);
  }
  ClipResult out;
  out.loss = 0.5 * (row_loss + col_loss) / static_cast<double>(B);
  if (!want_grad) return out;

  out.d_texts.assign(B, Vector(texts[0].size(), 0.0));
  const double inv = 0.5 / static_cast<double>(B);
  for (std::size_t i = 0; i < B; ++i) {
    for (std::size_t j = 0; j < B; ++j) {
      const double d_logit =
          inv * (p_row[i * B + j] + p_col[i * B + j] - (i == j ? 2.0 : 0.0));
      out.d_temp_logit += d_logit * logits[i * B + j];
      accumulate_cosine_grad(texts[j], images[i], d_logit * scale, out.d_texts[j]);
    }
  }
  return out;
}

}  // namespace detail

inline double loss_clip(std::span<const Vector> images, std::span<const Vector> texts,
                        double temp_logit) {
  return detail::clip_forward(images, texts, temp_logit, false).loss;
}

// ---------------------------------------------------------------------------
// Composite objective

/// Term values of one objective evaluation. l1/l2/l3 are batch means before
/// weighting; total = clip + w1*l1 + w2*l2 + w3*l3.
struct LossBreakdown {
  double total = 0.0;
  double clip = 0.0;
  double l1 = 0.0;
  double l2 = 0.0;
  double l3 = 0.0;
};

struct TotalGradient {
  LossBreakdown loss;
  EncoderParams grad;
  /// Signs of the clamped cosines (L2 then L3, per example). Two evaluations
  /// with equal patterns lie on the same smooth piece of the objective.
  std::vector<bool> kink_pattern;
};

namespace detail {

inline TotalGradient evaluate_total(const TripletBatch& batch, const EncoderParams& params,
                                    const LossWeights& w, bool want_grad) {
  check_batch(batch);
  const std::size_t B = batch.size();
  const std::size_t d = params.shape.out_dim;
  for (const auto& v : batch.images) {
    if (v.size() != d) {
      throw DimensionMismatch("image dim " + std::to_string(v.size()) + " vs encoder out dim " +
                              std::to_string(d));
    }
  }
  std::vector<EncodeTrace> orig(B), pert(B);
  std::vector<Vector> t_orig(B), t_pert(B);
  for (std::size_t i = 0; i < B; ++i) {
    orig[i] = encode_trace(params, batch.originals[i]);
    pert[i] = encode_trace(params, batch.perturbed[i]);
    t_orig[i] = orig[i].output;
    t_pert[i] = pert[i].output;
  }

  TotalGradient out;
  auto clip = clip_forward(batch.images, t_orig, params.temp_logit, want_grad);
  out.loss.clip = clip.loss;
  out.kink_pattern.reserve(2 * B);

  std::vector<Vector> d_orig, d_pert;
  if (want_grad) {
    d_orig = std::move(clip.d_texts);
    d_pert.assign(B, Vector(d, 0.0));
  }
  const double inv_b = 1.0 / static_cast<double>(B);
  for (std::size_t i = 0; i < B; ++i) {
    const double c1 = cosine(batch.images[i], t_orig[i]);
    const double c2 = cosine(batch.images[i], t_pert[i]);
    const double c3 = cosine(t_orig[i], t_pert[i]);
    out.loss.l1 += (1.0 - c1) * inv_b;
    out.loss.l2 += std::max(0.0, c2) * inv_b;
    out.loss.l3 += std::max(0.0, c3) * inv_b;
    out.kink_pattern.push_back(c2 > 0.0);
    out.kink_pattern.push_back(c3 > 0.0);
    if (!want_grad) continue;
    accumulate_cosine_grad(t_orig[i], batch.images[i], -w.l1 * inv_b, d_orig[i]);
    if (c2 > 0.0) accumulate_cosine_grad(t_pert[i], batch.images[i], w.l2 * inv_b, d_pert[i]);
    if (c3 > 0.0) {
      accumulate_cosine_grad(t_orig[i], t_pert[i], w.l3 * inv_b, d_orig[i]);
      accumulate_cosine_grad(t_pert[i], t_orig[i], w.l3 * inv_b, d_pert[i]);
    }
  }
  out.loss.total = out.loss.clip + w.l1 * out.loss.l1 + w.l2 * out.loss.l2 + w.l3 * out.loss.l3;
  if (!want_grad) return out;

  out.grad = EncoderParams::zeros(params.shape, params.gate_gain);
  for (std::size_t i = 0; i < B; ++i) {
    backprop_encoder(params, orig[i], d_orig[i], out.grad);
    backprop_encoder(params, pert[i], d_pert[i], out.grad);
  }
  out.grad.temp_logit = clip.d_temp_logit;
  return out;
}

}  // namespace detail

inline LossBreakdown loss_breakdown(const TripletBatch& batch, const EncoderParams& params,
                                    const LossWeights& weights) {
  return detail::evaluate_total(batch, params, weights, false).loss;
}

inline double loss_total(const TripletBatch& batch, const EncoderParams& params,
                         const LossWeights& weights) {
  return loss_breakdown(batch, params, weights).total;
}

/// Analytic gradient of loss_total with respect to every trainable block.
/// max(0, .) contributes subgradient 0 at and below its kink.
inline TotalGradient grad_total(const TripletBatch& batch, const EncoderParams& params,
                                const LossWeights& weights) {
  return detail::evaluate_total(batch, params, weights, true);
}

// ---------------------------------------------------------------------------
// Finite-difference verification

struct ParamRef {
  std::size_t block = 0;  // index into kBlockNames
  std::size_t index = 0;
};

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::size_t checked = 0;
  std::size_t skipped_kinks = 0;
  ParamRef worst;
};

inline double& param_at(EncoderParams& p, const ParamRef& ref) {
  double* out = nullptr;
  std::size_t b = 0;
  for_each_block(p, [&](std::string_view, std::span<double> block) {
    if (b++ == ref.block) out = &block[ref.index];
  });
  return *out;
}

inline double param_at(const EncoderParams& p, const ParamRef& ref) {
  return param_at(const_cast<EncoderParams&>(p), ref);
}

/// Deterministic sample of at least `min_count` parameters covering every
/// block. Embedding entries are drawn only from rows in `touched_rows` (other
/// rows have an identically zero gradient).
inline std::vector<ParamRef> sample_parameters(const EncoderParams& p,
                                               std::span<const std::size_t> touched_rows,
                                               std::size_t min_count, std::uint64_t seed) {
  RngStream rng(seed);
  std::vector<ParamRef> out;
  std::vector<std::size_t> sizes;
  for_each_block(const_cast<EncoderParams&>(p),
                 [&](std::string_view, std::span<double> block) { sizes.push_back(block.size()); });

  auto take = [&](std::size_t block, std::vector<std::size_t> pool, std::size_t count) {
    count = std::min(count, pool.size());
    for (std::size_t i = 0; i < count; ++i) {
      const std::size_t j = i + rng.below(pool.size() - i);
      std::swap(pool[i], pool[j]);
      out.push_back({block, pool[i]});
    }
  };
  auto range = [](std::size_t n) {
    std::vector<std::size_t> v(n);
    for (std::size_t i = 0; i < n; ++i) v[i] = i;
    return v;
  };

  const std::size_t per_block = std::max<std::size_t>(min_count / 5, 1);
  for (std::size_t b = 1; b < sizes.size(); ++b) take(b, range(sizes[b]), per_block);

  std::vector<std::size_t> e_pool;
  const std::size_t h = p.shape.hidden;
  std::vector<std::size_t> rows(touched_rows.begin(), touched_rows.end());
  std::sort(rows.begin(), rows.end());
  rows.erase(std::unique(rows.begin(), rows.end()), rows.end());
  for (std::size_t r : rows) {
    for (std::size_t k = 0; k < h; ++k) e_pool.push_back(r * h + k);
  }
  const std::size_t e_count = out.size() >= min_count ? per_block : min_count - out.size();
  take(0, std::move(e_pool), std::max(e_count, per_block));
  return out;
}

/// Objective used by the generic checker: value plus a kink pattern.
struct ObjectiveValue {
  double value = 0.0;
  std::vector<bool> kink_pattern;
};

/// Central-difference check of `analytic` against `objective` at the sampled
/// parameters. A parameter is skipped when the two probes land on different
/// sides of a max(0, .) kink.
inline GradCheckReport check_gradient(
    const EncoderParams& params, const EncoderParams& analytic, std::span<const ParamRef> sample,
    const std::function<ObjectiveValue(const EncoderParams&)>& objective, double h) {
  GradCheckReport report;
  EncoderParams probe = params;
  for (const ParamRef& ref : sample) {
    double& slot = param_at(probe, ref);
    const double saved = slot;
    slot = saved + h;
    const auto plus = objective(probe);
    slot = saved - h;
    const auto minus = objective(probe);
    slot = saved;
    if (plus.kink_pattern != minus.kink_pattern) {
      ++report.skipped_kinks;
      continue;
    }
    const double numeric = (plus.value - minus.value) / (2.0 * h);
    const double exact = param_at(analytic, ref);
    const double rel = std::abs(exact - numeric) / std::max(1e-8, std::abs(exact) + std::abs(numeric));
    ++report.checked;
    if (rel >= report.max_rel_error) {
      report.max_rel_error = rel;
      report.worst = ref;
    }
  }
  return report;
}

inline constexpr std::size_t kGradCheckSamples = 240;

inline std::vector<std::size_t> touched_rows(const TripletBatch& batch, const EncoderParams& p) {
  std::vector<std::size_t> rows;
  for (const auto* seqs : {&batch.originals, &batch.perturbed}) {
    for (const auto& seq : *seqs) {
      for (const auto& tok : seq) rows.push_back(hash_token(tok, p.shape.vocab));
    }
  }
  return rows;
}

/// Compares grad_total with central differences of loss_total over a
/// deterministic sample of parameters (>= 200 spanning every block).
inline GradCheckReport finite_diff_check(const TripletBatch& batch, const EncoderParams& params,
                                         const LossWeights& weights, double h,
                                         std::uint64_t sample_seed = 0) {
  if (!(h > 0.0)) throw ShapeMismatch("finite-difference step must be > 0");
  const auto analytic = grad_total(batch, params, weights);
  const auto rows = touched_rows(batch, params);
  const auto sample = sample_parameters(params, rows, kGradCheckSamples, sample_seed);
  return check_gradient(
      params, analytic.grad, sample,
      [&](const EncoderParams& p) {
        auto r = detail::evaluate_total(batch, p, weights, false);
        return ObjectiveValue{r.loss.total, std::move(r.kink_pattern)};
      },
      h);
}

}  // namespace prmcs
