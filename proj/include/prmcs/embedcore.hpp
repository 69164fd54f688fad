#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <nlohmann/json.hpp>

#include "prmcs/errors.hpp"
#include "prmcs/io.hpp"
#include "prmcs/rng.hpp"
#include "prmcs/textproc.hpp"

namespace prmcs {

using Vector = std::vector<double>;

// ---------------------------------------------------------------------------
// Hashing and geometry

inline constexpr std::uint64_t kFnvOffset = 0xcbf29ce484222325ULL;
inline constexpr std::uint64_t kFnvPrime = 0x100000001b3ULL;

inline std::uint64_t fnv1a64(std::string_view bytes) {
  std::uint64_t h = kFnvOffset;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= kFnvPrime;
  }
  return h;
}

inline std::size_t hash_token(std::string_view token, std::size_t vocab_size) {
  return static_cast<std::size_t>(fnv1a64(token) % vocab_size);
}

inline constexpr double kNormFloor = 1e-12;

inline double dot(std::span<const double> u, std::span<const double> v) {
  double s = 0.0;
  for (std::size_t i = 0; i < u.size(); ++i) s += u[i] * v[i];
  return s;
}

inline double norm(std::span<const double> u) { return std::sqrt(dot(u, u)); }

/// Cosine similarity; exactly 0 when either vector has norm below 1e-12.
inline double cosine(std::span<const double> u, std::span<const double> v) {
  if (u.size() != v.size()) {
    throw DimensionMismatch("cosine of " + std::to_string(u.size()) + "-d and " +
                            std::to_string(v.size()) + "-d vectors");
  }
  const double nu = norm(u);
  const double nv = norm(v);
  if (nu < kNormFloor || nv < kNormFloor) return 0.0;
  return std::clamp(dot(u, v) / (nu * nv), -1.0, 1.0);
}

/// Gradient of cosine(u, v) with respect to u, accumulated as `scale * d/du`
/// into `out`. Zero where the cosine is pinned to 0 by the norm floor.
inline void accumulate_cosine_grad(std::span<const double> u, std::span<const double> v,
                                   double scale, std::span<double> out) {
  const double nu = norm(u);
  const double nv = norm(v);
  if (nu < kNormFloor || nv < kNormFloor || scale == 0.0) return;
  const double c = dot(u, v) / (nu * nv);
  const double a = scale / (nu * nv);
  const double b = scale * c / (nu * nu);
  for (std::size_t i = 0; i < u.size(); ++i) out[i] += a * v[i] - b * u[i];
}

// ---------------------------------------------------------------------------
// Embedding matrices (PRMC container + JSONL manifest)

struct ManifestEntry {
  std::uint32_t row = 0;
  std::string id;
  std::string lang;

  bool operator==(const ManifestEntry&) const = default;
};

/// Row-major float32 matrix with a row -> id manifest.
class EmbeddingMatrix {
 public:
  EmbeddingMatrix() = default;

  EmbeddingMatrix(std::size_t dim, std::vector<ManifestEntry> manifest, std::vector<float> data)
      : dim_(dim), manifest_(std::move(manifest)), data_(std::move(data)) {
    validate();
  }

  std::size_t rows() const { return manifest_.size(); }
  std::size_t dim() const { return dim_; }
  const std::vector<ManifestEntry>& manifest() const { return manifest_; }
  const std::vector<float>& data() const { return data_; }

  std::span<const float> row(std::size_t r) const {
    return std::span<const float>(data_).subspan(r * dim_, dim_);
  }

  Vector row_vector(std::size_t r) const {
    auto src = row(r);
    return Vector(src.begin(), src.end());
  }

  /// Row index for an id, or npos.
  std::size_t find(std::string_view id) const {
    auto it = index_.find(std::string(id));
    return it == index_.end() ? npos : it->second;
  }

  static constexpr std::size_t npos = static_cast<std::size_t>(-1);

  bool operator==(const EmbeddingMatrix& other) const {
    return dim_ == other.dim_ && manifest_ == other.manifest_ && data_ == other.data_;
  }

  /// Builder used by generators: append one row.
  void append(std::string id, std::string lang, std::span<const double> values) {
    if (dim_ == 0) dim_ = values.size();
    if (values.size() != dim_) {
      throw DimensionMismatch("row of dim " + std::to_string(values.size()) +
                              " appended to matrix of dim " + std::to_string(dim_));
    }
    if (index_.count(id)) throw ManifestMismatch("duplicate id '" + id + "'");
    index_.emplace(id, manifest_.size());
    manifest_.push_back({static_cast<std::uint32_t>(manifest_.size()), std::move(id),
                         std::move(lang)});
    for (double v : values) data_.push_back(static_cast<float>(v));
  }

 private:
  void validate() {
    if (dim_ < 1) throw ShapeMismatch("embedding dim must be >= 1");
    if (data_.size() != manifest_.size() * dim_) {
      throw ManifestMismatch("manifest lists " + std::to_string(manifest_.size()) +
                             " rows but payload holds " + std::to_string(data_.size()) +
                             " floats of dim " + std::to_string(dim_));
    }
    index_.clear();
    for (std::size_t r = 0; r < manifest_.size(); ++r) {
      if (manifest_[r].row != r) {
        throw ManifestMismatch("manifest line " + std::to_string(r + 1) + " has row " +
                               std::to_string(manifest_[r].row));
      }
      if (!index_.emplace(manifest_[r].id, r).second) {
        throw ManifestMismatch("duplicate id '" + manifest_[r].id + "'");
      }
    }
  }

  std::size_t dim_ = 0;
  std::vector<ManifestEntry> manifest_;
  std::vector<float> data_;
  std::unordered_map<std::string, std::size_t> index_;
};

inline constexpr std::string_view kMatrixMagic = "PRMC";
inline constexpr std::string_view kParamsMagic = "PRMP";
inline constexpr std::uint16_t kFormatVersion = 1;

/// "images.prmc" -> "images.manifest.jsonl".
inline std::filesystem::path manifest_path(const std::filesystem::path& matrix_path) {
  auto p = matrix_path;
  p.replace_extension(".manifest.jsonl");
  return p;
}

inline std::string encode_matrix(const EmbeddingMatrix& m) {
  io::ByteWriter w;
  w.bytes(kMatrixMagic);
  w.scalar<std::uint16_t>(kFormatVersion);
  w.scalar<std::uint32_t>(static_cast<std::uint32_t>(m.rows()));
  w.scalar<std::uint32_t>(static_cast<std::uint32_t>(m.dim()));
  for (float f : m.data()) w.scalar<float>(f);
  return w.str();
}

inline std::string encode_manifest(const EmbeddingMatrix& m) {
  std::string out;
  for (const auto& e : m.manifest()) {
    nlohmann::ordered_json j;
    j["row"] = e.row;
    j["id"] = e.id;
    j["lang"] = e.lang;
    out += j.dump();
    out += '\n';
  }
  return out;
}

inline void check_header(io::ByteReader& r, std::string_view magic) {
  if (r.remaining() < magic.size() || r.bytes(magic.size()) != magic) {
    throw BadMagic("expected magic '" + std::string(magic) + "'");
  }
  const auto version = r.scalar<std::uint16_t>();
  if (version != kFormatVersion) {
    throw VersionMismatch("file version " + std::to_string(version) + ", reader supports " +
                          std::to_string(kFormatVersion));
  }
}

inline std::vector<ManifestEntry> decode_manifest(std::string_view text) {
  std::vector<ManifestEntry> out;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos < text.size()) {
    std::size_t end = text.find('\n', pos);
    if (end == std::string_view::npos) end = text.size();
    const auto line = text.substr(pos, end - pos);
    pos = end + 1;
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string_view::npos) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      out.push_back({j.at("row").get<std::uint32_t>(), j.at("id").get<std::string>(),
                     j.value("lang", std::string())});
    } catch (const nlohmann::json::exception& e) {
      throw ParseError("manifest line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return out;
}

inline EmbeddingMatrix decode_matrix(std::string_view bytes, std::string_view manifest_text) {
  io::ByteReader r(bytes);
  check_header(r, kMatrixMagic);
  const auto rows = r.scalar<std::uint32_t>();
  const auto dim = r.scalar<std::uint32_t>();
  const std::uint64_t count = static_cast<std::uint64_t>(rows) * dim;
  if (r.remaining() < count * sizeof(float)) {
    throw TruncatedFile("header declares " + std::to_string(rows) + "x" + std::to_string(dim) +
                        " floats but only " + std::to_string(r.remaining()) + " payload bytes");
  }
  if (r.remaining() > count * sizeof(float)) {
    throw ManifestMismatch(std::to_string(r.remaining() - count * sizeof(float)) +
                           " trailing bytes after payload");
  }
  std::vector<float> data(count);
  for (auto& f : data) f = r.scalar<float>();
  auto manifest = decode_manifest(manifest_text);
  if (manifest.size() != rows) {
    throw ManifestMismatch("header has " + std::to_string(rows) + " rows, manifest has " +
                           std::to_string(manifest.size()));
  }
  if (rows == 0 && dim == 0) throw ShapeMismatch("embedding dim must be >= 1");
  return EmbeddingMatrix(dim, std::move(manifest), std::move(data));
}

inline void save_matrix(const std::filesystem::path& path, const EmbeddingMatrix& m) {
  io::write_file_atomic(path, encode_matrix(m));
  io::write_file_atomic(manifest_path(path), encode_manifest(m));
}

inline EmbeddingMatrix load_matrix(const std::filesystem::path& path) {
  const auto mpath = manifest_path(path);
  if (!std::filesystem::exists(mpath)) {
    throw ManifestMismatch("missing manifest " + mpath.string());
  }
  return decode_matrix(io::read_file(path), io::read_file(mpath));
}

// ---------------------------------------------------------------------------
// Text encoder

struct EncoderShape {
  std::size_t vocab = 4096;
  std::size_t hidden = 64;
  std::size_t out_dim = 64;

  bool operator==(const EncoderShape&) const = default;
};

inline constexpr double kDefaultGateGain = 0.5;
inline constexpr double kInitScale = 0.05;
inline const double kMaxTempLogit = std::log(100.0);
inline const double kInitTempLogit = std::log(1.0 / 0.07);

/// Trainable weights of the bag-of-hashed-tokens encoder:
///   pooled = mean_i E[hash(tok_i)] * gate_i,  z = W2 tanh(W1 pooled + b1) + b2.
/// Matrices are row-major; W1 is hidden x hidden, W2 is out_dim x hidden.
struct EncoderParams {
  EncoderShape shape;
  std::vector<double> E;
  std::vector<double> W1;
  std::vector<double> b1;
  std::vector<double> W2;
  std::vector<double> b2;
  double gate_gain = kDefaultGateGain;
  double temp_logit = kInitTempLogit;

  /// All-zero parameters of the given shape (also used as a gradient buffer).
  static EncoderParams zeros(const EncoderShape& s, double gate_gain = kDefaultGateGain) {
    EncoderParams p;
    p.shape = s;
    p.E.assign(s.vocab * s.hidden, 0.0);
    p.W1.assign(s.hidden * s.hidden, 0.0);
    p.b1.assign(s.hidden, 0.0);
    p.W2.assign(s.out_dim * s.hidden, 0.0);
    p.b2.assign(s.out_dim, 0.0);
    p.gate_gain = gate_gain;
    p.temp_logit = 0.0;
    return p;
  }

  bool operator==(const EncoderParams&) const = default;
};

/// Names of the trainable blocks, in persisted order.
inline constexpr std::array<std::string_view, 6> kBlockNames = {"E", "W1", "b1", "W2", "b2",
                                                                "temp_logit"};

/// Visits every trainable block as a span (temp_logit is a 1-element block).
/// The gate gain is a fixed hyperparameter and is not visited.
template <typename Params, typename Fn>
void for_each_block(Params& p, Fn&& fn) {
  fn(kBlockNames[0], std::span(p.E));
  fn(kBlockNames[1], std::span(p.W1));
  fn(kBlockNames[2], std::span(p.b1));
  fn(kBlockNames[3], std::span(p.W2));
  fn(kBlockNames[4], std::span(p.b2));
  fn(kBlockNames[5], std::span(&p.temp_logit, 1));
}

/// Weights uniform(-0.05, 0.05) in declaration order (E, W1, W2), biases zero,
/// temperature logit ln(1/0.07).
inline EncoderParams init_params(const EncoderShape& shape, std::uint64_t seed,
                                 double gate_gain = kDefaultGateGain) {
  if (shape.vocab < 1 || shape.hidden < 1 || shape.out_dim < 1) {
    throw ShapeMismatch("encoder dimensions must be >= 1");
  }
  if (!(gate_gain >= 0.0)) throw ShapeMismatch("gate gain must be >= 0");
  EncoderParams p = EncoderParams::zeros(shape, gate_gain);
  RngStream rng(seed);
  for (auto* block : {&p.E, &p.W1, &p.W2}) {
    for (double& w : *block) w = rng.uniform(-kInitScale, kInitScale);
  }
  p.temp_logit = kInitTempLogit;
  return p;
}

inline void check_params(const EncoderParams& p) {
  const auto& s = p.shape;
  if (p.E.size() != s.vocab * s.hidden || p.W1.size() != s.hidden * s.hidden ||
      p.b1.size() != s.hidden || p.W2.size() != s.out_dim * s.hidden || p.b2.size() != s.out_dim) {
    throw ShapeMismatch("encoder blocks do not match declared shape");
  }
}

/// Frequencies of the positional gate, theta_k = 10000^(-k/h).
inline std::vector<double> gate_frequencies(std::size_t hidden) {
  std::vector<double> theta(hidden);
  for (std::size_t k = 0; k < hidden; ++k) {
    theta[k] = std::pow(10000.0, -static_cast<double>(k) / static_cast<double>(hidden));
  }
  return theta;
}

/// Intermediate values of one forward pass, kept for backpropagation.
struct EncodeTrace {
  std::vector<std::size_t> ids;
  std::vector<double> gates;   // n x hidden
  Vector pooled;               // hidden
  Vector activation;           // tanh(W1 pooled + b1)
  Vector output;               // out_dim
};

inline EncodeTrace encode_trace(const EncoderParams& p, std::span<const std::string> tokens) {
  const std::size_t h = p.shape.hidden;
  const std::size_t d = p.shape.out_dim;
  const std::size_t n = tokens.size();
  EncodeTrace t;
  t.ids.reserve(n);
  for (const auto& tok : tokens) t.ids.push_back(hash_token(tok, p.shape.vocab));

  t.pooled.assign(h, 0.0);
  t.gates.assign(n * h, 1.0);
  if (n > 0) {
    const auto theta = gate_frequencies(h);
    for (std::size_t i = 0; i < n; ++i) {
      const double* e = &p.E[t.ids[i] * h];
      double* g = &t.gates[i * h];
      for (std::size_t k = 0; k < h; ++k) {
        g[k] = 1.0 + p.gate_gain * std::sin(static_cast<double>(i + 1) * theta[k]);
        t.pooled[k] += e[k] * g[k];
      }
    }
    const double inv_n = 1.0 / static_cast<double>(n);
    for (double& v : t.pooled) v *= inv_n;
  }

  t.activation.assign(h, 0.0);
  for (std::size_t r = 0; r < h; ++r) {
    double a = p.b1[r];
    const double* w = &p.W1[r * h];
    for (std::size_t c = 0; c < h; ++c) a += w[c] * t.pooled[c];
    t.activation[r] = std::tanh(a);
  }
  t.output.assign(d, 0.0);
  for (std::size_t r = 0; r < d; ++r) {
    double z = p.b2[r];
    const double* w = &p.W2[r * h];
    for (std::size_t c = 0; c < h; ++c) z += w[c] * t.activation[c];
    t.output[r] = z;
  }
  return t;
}

inline Vector encode_text(const EncoderParams& p, std::span<const std::string> tokens) {
  return encode_trace(p, tokens).output;
}

/// Accumulates d(loss)/d(params) into `grad` given d(loss)/d(output).
inline void backprop_encoder(const EncoderParams& p, const EncodeTrace& t,
                             std::span<const double> d_output, EncoderParams& grad) {
  const std::size_t h = p.shape.hidden;
  const std::size_t d = p.shape.out_dim;
  Vector d_act(h, 0.0);
  for (std::size_t r = 0; r < d; ++r) {
    const double dz = d_output[r];
    if (dz == 0.0) continue;
    grad.b2[r] += dz;
    double* gw = &grad.W2[r * h];
    const double* w = &p.W2[r * h];
    for (std::size_t c = 0; c < h; ++c) {
      gw[c] += dz * t.activation[c];
      d_act[c] += dz * w[c];
    }
  }
  Vector d_pooled(h, 0.0);
  for (std::size_t r = 0; r < h; ++r) {
    const double da = d_act[r] * (1.0 - t.activation[r] * t.activation[r]);
    if (da == 0.0) continue;
    grad.b1[r] += da;
    double* gw = &grad.W1[r * h];
    const double* w = &p.W1[r * h];
    for (std::size_t c = 0; c < h; ++c) {
      gw[c] += da * t.pooled[c];
      d_pooled[c] += da * w[c];
    }
  }
  const std::size_t n = t.ids.size();
  if (n == 0) return;
  const double inv_n = 1.0 / static_cast<double>(n);
  for (std::size_t i = 0; i < n; ++i) {
    double* ge = &grad.E[t.ids[i] * h];
    const double* g = &t.gates[i * h];
    for (std::size_t k = 0; k < h; ++k) ge[k] += d_pooled[k] * g[k] * inv_n;
  }
}

// ---------------------------------------------------------------------------
// Parameter checkpoints (PRMP)

inline std::string encode_params(const EncoderParams& p) {
  check_params(p);
  io::ByteWriter w;
  w.bytes(kParamsMagic);
  w.scalar<std::uint16_t>(kFormatVersion);
  w.scalar<std::uint32_t>(static_cast<std::uint32_t>(p.shape.vocab));
  w.scalar<std::uint32_t>(static_cast<std::uint32_t>(p.shape.hidden));
  w.scalar<std::uint32_t>(static_cast<std::uint32_t>(p.shape.out_dim));
  w.scalar<double>(p.gate_gain);
  w.scalar<double>(p.temp_logit);
  for (const auto* block : {&p.E, &p.W1, &p.b1, &p.W2, &p.b2}) {
    for (double v : *block) w.scalar<double>(v);
  }
  return w.str();
}

inline EncoderParams decode_params(std::string_view bytes) {
  io::ByteReader r(bytes);
  check_header(r, kParamsMagic);
  EncoderShape s;
  s.vocab = r.scalar<std::uint32_t>();
  s.hidden = r.scalar<std::uint32_t>();
  s.out_dim = r.scalar<std::uint32_t>();
  if (s.vocab < 1 || s.hidden < 1 || s.out_dim < 1) {
    throw ShapeMismatch("encoder dimensions must be >= 1");
  }
  const double gate = r.scalar<double>();
  EncoderParams p = EncoderParams::zeros(s, gate);
  p.temp_logit = r.scalar<double>();
  const std::uint64_t expected =
      8ULL * (s.vocab * s.hidden + s.hidden * s.hidden + s.hidden + s.out_dim * s.hidden + s.out_dim);
  if (r.remaining() != expected) {
    if (r.remaining() < expected) {
      throw TruncatedFile("checkpoint payload has " + std::to_string(r.remaining()) +
                          " bytes, shape needs " + std::to_string(expected));
    }
    throw ShapeMismatch("checkpoint has trailing bytes");
  }
  for (auto* block : {&p.E, &p.W1, &p.b1, &p.W2, &p.b2}) {
    for (double& v : *block) v = r.scalar<double>();
  }
  return p;
}

inline void save_params(const std::filesystem::path& path, const EncoderParams& p) {
  io::write_file_atomic(path, encode_params(p));
}

inline EncoderParams load_params(const std::filesystem::path& path) {
  return decode_params(io::read_file(path));
}

}  // namespace prmcs
