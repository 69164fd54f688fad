#include <gtest/gtest.h>

#include <cmath>
#include <cstring>
#include <filesystem>
#include <string>
#include <vector>

#include "prmcs/embedcore.hpp"

using namespace prmcs;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / "prmcs_embedcore_test";
  fs::create_directories(dir);
  return dir / name;
}

EmbeddingMatrix small_matrix() {
  EmbeddingMatrix m;
  m.append("img-a", "en", std::vector<double>{1.0, -2.0, 0.5});
  m.append("img-b", "ja", std::vector<double>{0.25, 0.0, 3.0});
  return m;
}

// Straightforward re-statement of the encoder used as a test oracle.
Vector reference_encode(const EncoderParams& p, const std::vector<std::string>& tokens) {
  const std::size_t h = p.shape.hidden, d = p.shape.out_dim, n = tokens.size();
  Vector pooled(h, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t id = hash_token(tokens[i], p.shape.vocab);
    for (std::size_t k = 0; k < h; ++k) {
      const double theta = std::pow(10000.0, -double(k) / double(h));
      const double gate = 1.0 + p.gate_gain * std::sin(double(i + 1) * theta);
      pooled[k] += p.E[id * h + k] * gate / double(n);
    }
  }
  Vector z(d);
  for (std::size_t r = 0; r < d; ++r) {
    double acc = p.b2[r];
    for (std::size_t c = 0; c < h; ++c) {
      double pre = p.b1[c];
      for (std::size_t j = 0; j < h; ++j) pre += p.W1[c * h + j] * pooled[j];
      acc += p.W2[r * h + c] * std::tanh(pre);
    }
    z[r] = acc;
  }
  return z;
}

}  // namespace

TEST(HashToken, Examples) {
  EXPECT_EQ(fnv1a64(""), 0xcbf29ce484222325ULL);
  EXPECT_EQ(hash_token("", 4096), 0xcbf29ce484222325ULL % 4096);
  EXPECT_EQ(hash_token("a", 1), 0u);
  // Reference from a separate Python FNV-1a implementation.
  EXPECT_EQ(fnv1a64("golf"), 0x9cefca720ea68439ULL);
  EXPECT_EQ(hash_token("golf", 4096), 1081u);
}

TEST(Cosine, Examples) {
  const Vector x = {0.3, -1.2, 2.0};
  EXPECT_NEAR(cosine(x, x), 1.0, 1e-15);
  EXPECT_EQ(cosine(Vector{1, 0}, Vector{0, 1}), 0.0);
  EXPECT_EQ(cosine(Vector{0, 0}, Vector{1, 1}), 0.0);
  EXPECT_NEAR(cosine(Vector{1, 0}, Vector{1, 1}), std::sqrt(0.5), 1e-15);
  EXPECT_THROW(cosine(Vector{1, 0}, Vector{1, 0, 0}), DimensionMismatch);
}

TEST(Cosine, GradientMatchesFiniteDifference) {
  const Vector u = {0.4, -0.7, 1.1}, v = {-0.2, 0.9, 0.3};
  Vector g(3, 0.0);
  accumulate_cosine_grad(u, v, 1.0, g);
  for (std::size_t k = 0; k < 3; ++k) {
    Vector up = u, dn = u;
    up[k] += 1e-6;
    dn[k] -= 1e-6;
    EXPECT_NEAR(g[k], (cosine(up, v) - cosine(dn, v)) / 2e-6, 1e-8);
  }
}

TEST(Encoder, MatchesReferenceImplementation) {
  const auto p = init_params({97, 8, 5}, 4);
  const std::vector<std::string> toks = {"a", "man", "plays", "golf", "a"};
  const auto z = encode_text(p, toks);
  const auto ref = reference_encode(p, toks);
  ASSERT_EQ(z.size(), ref.size());
  for (std::size_t i = 0; i < z.size(); ++i) EXPECT_NEAR(z[i], ref[i], 1e-14);
}

TEST(Encoder, EmptySequenceUsesBiasesOnly) {
  auto p = init_params({31, 6, 4}, 2);
  for (std::size_t i = 0; i < p.b1.size(); ++i) p.b1[i] = 0.1 * double(i + 1);
  for (std::size_t i = 0; i < p.b2.size(); ++i) p.b2[i] = -0.05 * double(i);
  const auto z = encode_text(p, std::vector<std::string>{});
  for (std::size_t r = 0; r < 4; ++r) {
    double expect = p.b2[r];
    for (std::size_t c = 0; c < 6; ++c) expect += p.W2[r * 6 + c] * std::tanh(p.b1[c]);
    EXPECT_NEAR(z[r], expect, 1e-15);
  }
}

TEST(Encoder, ZeroGateGainIgnoresOrder) {
  const auto p = init_params({64, 8, 4}, 5, 0.0);
  const auto a = encode_text(p, std::vector<std::string>{"x", "y", "z"});
  const auto b = encode_text(p, std::vector<std::string>{"z", "x", "y"});
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_NEAR(a[i], b[i], 1e-15);
}

TEST(Encoder, GateMakesOrderMatter) {
  const auto p = init_params({}, 5);
  const auto a = encode_text(p, std::vector<std::string>{"a", "b"});
  const auto b = encode_text(p, std::vector<std::string>{"b", "a"});
  EXPECT_NE(a, b);
}

TEST(Encoder, InitIsDeterministicAndBounded) {
  const auto a = init_params({128, 8, 4}, 9);
  EXPECT_EQ(a, init_params({128, 8, 4}, 9));
  EXPECT_NE(a, init_params({128, 8, 4}, 10));
  for (double w : a.W1) EXPECT_LE(std::abs(w), kInitScale);
  EXPECT_DOUBLE_EQ(a.temp_logit, std::log(1.0 / 0.07));
  for (double b : a.b1) EXPECT_EQ(b, 0.0);
}

TEST(Encoder, BackpropMatchesFiniteDifference) {
  auto p = init_params({53, 6, 4}, 12);
  const std::vector<std::string> toks = {"red", "dog", "runs", "red"};
  const Vector w = {0.3, -1.0, 0.5, 2.0};  // loss = w . z
  const auto trace = encode_trace(p, toks);
  auto grad = EncoderParams::zeros(p.shape);
  backprop_encoder(p, trace, w, grad);
  auto loss = [&](const EncoderParams& q) { return dot(w, encode_text(q, toks)); };
  double worst = 0.0;
  for_each_block(p, [&](std::string_view name, std::span<double> block) {
    if (name == "temp_logit") return;
    std::span<double> g;
    for_each_block(grad, [&](std::string_view n2, std::span<double> b2) {
      if (n2 == name) g = b2;
    });
    for (std::size_t i = 0; i < block.size(); i += 3) {
      const double keep = block[i];
      block[i] = keep + 1e-6;
      const double up = loss(p);
      block[i] = keep - 1e-6;
      const double dn = loss(p);
      block[i] = keep;
      worst = std::max(worst, std::abs((up - dn) / 2e-6 - g[i]));
    }
  });
  EXPECT_LT(worst, 1e-8);
}

TEST(EmbeddingMatrix, RejectsInconsistentShapes) {
  EXPECT_THROW(EmbeddingMatrix(2, {{0, "a", "en"}}, {1.0f}), ManifestMismatch);
  EXPECT_THROW(EmbeddingMatrix(1, {{1, "a", "en"}}, {1.0f}), ManifestMismatch);
  EXPECT_THROW(EmbeddingMatrix(1, {{0, "a", "en"}, {1, "a", "en"}}, {1.0f, 2.0f}),
               ManifestMismatch);
  EXPECT_THROW(EmbeddingMatrix(0, {}, {}), ShapeMismatch);
}

TEST(Prmc, ByteLayout) {
  const auto m = small_matrix();
  const std::string bytes = encode_matrix(m);
  ASSERT_EQ(bytes.size(), 4u + 2 + 4 + 4 + 6 * 4);
  EXPECT_EQ(bytes.substr(0, 4), "PRMC");
  const unsigned char* b = reinterpret_cast<const unsigned char*>(bytes.data());
  EXPECT_EQ(b[4] | (b[5] << 8), 1);
  EXPECT_EQ(b[6] | (b[7] << 8) | (b[8] << 16) | (b[9] << 24), 2);
  EXPECT_EQ(b[10] | (b[11] << 8) | (b[12] << 16) | (b[13] << 24), 3);
  // -2.0f = 0xC0000000, second float of the payload, little-endian.
  EXPECT_EQ(b[18], 0x00);
  EXPECT_EQ(b[21], 0xC0);
  EXPECT_EQ(encode_manifest(m),
            "{\"row\":0,\"id\":\"img-a\",\"lang\":\"en\"}\n"
            "{\"row\":1,\"id\":\"img-b\",\"lang\":\"ja\"}\n");
}

TEST(Prmc, RoundTripThroughFiles) {
  const auto m = small_matrix();
  const auto path = scratch("round.prmc");
  save_matrix(path, m);
  EXPECT_TRUE(fs::exists(manifest_path(path)));
  EXPECT_EQ(manifest_path(path).filename(), "round.manifest.jsonl");
  const auto back = load_matrix(path);
  EXPECT_EQ(back, m);
  EXPECT_EQ(back.find("img-b"), 1u);
  EXPECT_EQ(back.find("nope"), EmbeddingMatrix::npos);
  EXPECT_EQ(encode_matrix(back), encode_matrix(m));
}

TEST(Prmc, DecodeErrors) {
  const auto m = small_matrix();
  const std::string bytes = encode_matrix(m);
  const std::string manifest = encode_manifest(m);

  std::string bad = bytes;
  bad[0] = 'X';
  EXPECT_THROW(decode_matrix(bad, manifest), BadMagic);

  bad = bytes;
  bad[4] = 2;
  EXPECT_THROW(decode_matrix(bad, manifest), VersionMismatch);

  EXPECT_THROW(decode_matrix(bytes.substr(0, bytes.size() - 1), manifest), TruncatedFile);
  EXPECT_THROW(decode_matrix(bytes.substr(0, 7), manifest), TruncatedFile);
  EXPECT_THROW(decode_matrix(bytes + "x", manifest), ManifestMismatch);

  const std::string one_line = manifest.substr(0, manifest.find('\n') + 1);
  EXPECT_THROW(decode_matrix(bytes, one_line), ManifestMismatch);
  EXPECT_THROW(decode_matrix(bytes, "not json\n"), ParseError);
}

TEST(Prmc, MissingManifestIsReported) {
  const auto path = scratch("orphan.prmc");
  save_matrix(path, small_matrix());
  fs::remove(manifest_path(path));
  EXPECT_THROW(load_matrix(path), ManifestMismatch);
}

TEST(Prmp, RoundTripIsBitExact) {
  auto p = init_params({50, 6, 4}, 21, 0.25);
  p.temp_logit = 3.25;
  p.b1[2] = -1.0 / 3.0;
  const auto path = scratch("params.prmp");
  save_params(path, p);
  const auto back = load_params(path);
  EXPECT_EQ(back, p);
  EXPECT_EQ(encode_params(back), encode_params(p));
  const std::string bytes = encode_params(p);
  EXPECT_EQ(bytes.substr(0, 4), "PRMP");
  EXPECT_THROW(decode_params(bytes.substr(0, bytes.size() - 8)), TruncatedFile);
  std::string bad = bytes;
  bad[1] = 'Q';
  EXPECT_THROW(decode_params(bad), BadMagic);
}
