#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "tdro/errors.hpp"

namespace tdro {

using Vec = std::vector<double>;

struct TokenizerConfig {
  std::uint32_t vocab_buckets = 32768;  // must be a power of two, >= 2
  bool lowercase = true;
};

// Splits on ASCII whitespace and punctuation (bytes >= 0x80 count as word
// characters, so UTF-8 sequences stay intact), lowercases, then hashes each
// token with 64-bit FNV-1a masked to the bucket count.
std::vector<std::uint32_t> tokenize(std::string_view text, const TokenizerConfig& cfg);

std::uint64_t fnv1a64(std::string_view s);

// All trainable state of the dual encoder: one embedding row per hash bucket.
struct EncoderParams {
  std::uint32_t format_version = 1;
  std::uint32_t vocab_buckets = 0;
  std::uint32_t dim = 0;
  std::uint64_t seed = 0;  // seed used for the initial draw
  std::uint64_t step = 0;  // training steps applied to this snapshot
  std::vector<double> embedding;  // row-major, vocab_buckets x dim

  std::span<const double> row(std::uint32_t bucket) const {
    return {embedding.data() + static_cast<std::size_t>(bucket) * dim, dim};
  }
  std::span<double> row(std::uint32_t bucket) {
    return {embedding.data() + static_cast<std::size_t>(bucket) * dim, dim};
  }
};

// Entries i.i.d. uniform in [-0.5/dim, 0.5/dim].
EncoderParams init_params(const TokenizerConfig& cfg, std::uint32_t dim, std::uint64_t seed);

// Sparse gradient accumulator keyed by touched bucket.
struct GradientSet {
  std::uint32_t dim = 0;
  std::unordered_map<std::uint32_t, Vec> rows;

  explicit GradientSet(std::uint32_t d = 0) : dim(d) {}

  void accumulate(std::uint32_t bucket, std::span<const double> g, double scale);
  std::size_t touched() const { return rows.size(); }
  std::vector<std::uint32_t> sorted_buckets() const;
  bool all_finite() const;
};

struct Encoded {
  Vec unit;         // L2-normalized output
  double raw_norm;  // norm of the mean-pooled vector before normalization
};

// Mean of token embeddings followed by L2 normalization.
// Throws EmptyInput for an empty sequence, DegenerateNorm below 1e-12.
Encoded encode_full(const EncoderParams& p, std::span<const std::uint32_t> tokens);
Vec encode(const EncoderParams& p, std::span<const std::uint32_t> tokens);

// Cosine of two unit vectors. Both must be unit-norm within 1e-9.
double similarity(const Vec& u, const Vec& v);

// Scatters d(loss)/d(unit output) back to the touched embedding rows.
// The cotangent first passes through the normalization Jacobian
// (I - u u^T)/raw_norm, then each token occurrence receives 1/n of the
// result (mean pooling).
void encode_backward(const EncoderParams& p, std::span<const std::uint32_t> tokens,
                     const Encoded& enc, std::span<const double> cotangent,
                     GradientSet& out);

// Checkpoint directory: manifest.json + raw little-endian float64 matrix.
void save_checkpoint(const std::filesystem::path& dir, const EncoderParams& p);
EncoderParams load_checkpoint(const std::filesystem::path& dir);

}  // namespace tdro
