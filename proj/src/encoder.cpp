#include "tdro/encoder.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>

#include <nlohmann/json.hpp>

#include "tdro/json_writer.hpp"
#include "tdro/rng.hpp"

namespace tdro {

std::uint64_t fnv1a64(std::string_view s) {
  std::uint64_t h = 14695981039346656037ULL;
  for (char c : s) {
    h ^= static_cast<unsigned char>(c);
    h *= 1099511628211ULL;
  }
  return h;
}

namespace {

bool is_word_byte(unsigned char c) {
  if (c >= 0x80) return true;  // keep UTF-8 sequences whole
  return !std::isspace(c) && !std::ispunct(c);
}

void check_tokenizer(const TokenizerConfig& cfg) {
  if (cfg.vocab_buckets < 2 || (cfg.vocab_buckets & (cfg.vocab_buckets - 1)) != 0)
    throw ConfigError("vocab_buckets must be a power of two >= 2");
}

}  // namespace

std::vector<std::uint32_t> tokenize(std::string_view text, const TokenizerConfig& cfg) {
  check_tokenizer(cfg);
  std::vector<std::uint32_t> ids;
  const std::uint64_t mask = cfg.vocab_buckets - 1;
  std::string token;
  auto flush = [&] {
    if (token.empty()) return;
    ids.push_back(static_cast<std::uint32_t>(fnv1a64(token) & mask));
    token.clear();
  };
  for (char c : text) {
    if (is_word_byte(static_cast<unsigned char>(c))) {
      token.push_back(cfg.lowercase ? static_cast<char>(std::tolower(
                                          static_cast<unsigned char>(c)))
                                    : c);
    } else {
      flush();
    }
  }
  flush();
  return ids;
}

EncoderParams init_params(const TokenizerConfig& cfg, std::uint32_t dim, std::uint64_t seed) {
  check_tokenizer(cfg);
  if (dim == 0) throw ConfigError("embedding dim must be positive");
  EncoderParams p;
  p.vocab_buckets = cfg.vocab_buckets;
  p.dim = dim;
  p.seed = seed;
  p.step = 0;
  p.embedding.resize(static_cast<std::size_t>(cfg.vocab_buckets) * dim);
  Rng rng(derive_seed(seed, "encoder-init"));
  const double half = 0.5 / dim;
  for (double& e : p.embedding) e = rng.uniform(-half, half);
  return p;
}

void GradientSet::accumulate(std::uint32_t bucket, std::span<const double> g, double scale) {
  auto& row = rows[bucket];
  if (row.empty()) row.assign(dim, 0.0);
  for (std::uint32_t i = 0; i < dim; ++i) row[i] += scale * g[i];
}

std::vector<std::uint32_t> GradientSet::sorted_buckets() const {
  std::vector<std::uint32_t> b;
  b.reserve(rows.size());
  for (const auto& [k, _] : rows) b.push_back(k);
  std::sort(b.begin(), b.end());
  return b;
}

bool GradientSet::all_finite() const {
  for (const auto& [_, row] : rows)
    for (double v : row)
      if (!std::isfinite(v)) return false;
  return true;
}

Encoded encode_full(const EncoderParams& p, std::span<const std::uint32_t> tokens) {
  if (tokens.empty()) throw EmptyInput();
  Vec mean(p.dim, 0.0);
  for (std::uint32_t t : tokens) {
    auto row = p.row(t);
    for (std::uint32_t i = 0; i < p.dim; ++i) mean[i] += row[i];
  }
  const double inv_n = 1.0 / static_cast<double>(tokens.size());
  double sq = 0.0;
  for (std::uint32_t i = 0; i < p.dim; ++i) {
    mean[i] *= inv_n;
    sq += mean[i] * mean[i];
  }
  const double norm = std::sqrt(sq);
  if (norm < 1e-12) throw DegenerateNorm();
  Encoded out;
  out.raw_norm = norm;
  out.unit.resize(p.dim);
  for (std::uint32_t i = 0; i < p.dim; ++i) out.unit[i] = mean[i] / norm;
  return out;
}

Vec encode(const EncoderParams& p, std::span<const std::uint32_t> tokens) {
  return encode_full(p, tokens).unit;
}

double similarity(const Vec& u, const Vec& v) {
  if (u.size() != v.size()) throw LengthMismatch("similarity operands differ in dim");
  double nu = 0.0, nv = 0.0, dot = 0.0;
  for (std::size_t i = 0; i < u.size(); ++i) {
    nu += u[i] * u[i];
    nv += v[i] * v[i];
    dot += u[i] * v[i];
  }
  if (std::abs(std::sqrt(nu) - 1.0) > 1e-9 || std::abs(std::sqrt(nv) - 1.0) > 1e-9)
    throw NotNormalized();
  return dot;
}

void encode_backward(const EncoderParams& p, std::span<const std::uint32_t> tokens,
                     const Encoded& enc, std::span<const double> cotangent,
                     GradientSet& out) {
  // d(unit)/d(mean) = (I - u u^T) / raw_norm
  double proj = 0.0;
  for (std::uint32_t i = 0; i < p.dim; ++i) proj += cotangent[i] * enc.unit[i];
  Vec dmean(p.dim);
  const double inv_norm = 1.0 / enc.raw_norm;
  for (std::uint32_t i = 0; i < p.dim; ++i)
    dmean[i] = (cotangent[i] - proj * enc.unit[i]) * inv_norm;

  // Each occurrence of a token contributes 1/n of dmean; coalesce repeats.
  const double inv_n = 1.0 / static_cast<double>(tokens.size());
  std::unordered_map<std::uint32_t, std::uint32_t> counts;
  std::vector<std::uint32_t> order;  // first-occurrence order keeps accumulation fixed
  counts.reserve(tokens.size());
  for (std::uint32_t t : tokens) {
    auto [it, inserted] = counts.try_emplace(t, 0u);
    if (inserted) order.push_back(t);
    ++it->second;
  }
  for (std::uint32_t t : order)
    out.accumulate(t, dmean, inv_n * counts[t]);
}

void save_checkpoint(const std::filesystem::path& dir, const EncoderParams& p) {
  std::filesystem::create_directories(dir);

  JsonValue manifest = JsonValue::object();
  manifest.set("format_version", static_cast<std::int64_t>(p.format_version));
  manifest.set("dim", static_cast<std::int64_t>(p.dim));
  manifest.set("vocab_buckets", static_cast<std::int64_t>(p.vocab_buckets));
  manifest.set("seed", static_cast<std::int64_t>(p.seed));
  manifest.set("step", static_cast<std::int64_t>(p.step));

  // Atomic: write temp files, then rename over the targets.
  const auto tmp_manifest = dir / "manifest.json.tmp";
  const auto tmp_matrix = dir / "embedding.f64le.tmp";
  {
    std::ofstream f(tmp_manifest, std::ios::binary);
    if (!f) throw IoError("cannot write " + tmp_manifest.string());
    f << manifest.dump(2);
  }
  {
    std::ofstream f(tmp_matrix, std::ios::binary);
    if (!f) throw IoError("cannot write " + tmp_matrix.string());
    static_assert(sizeof(double) == 8);
    // Raw IEEE-754 doubles; this build targets little-endian hosts.
    f.write(reinterpret_cast<const char*>(p.embedding.data()),
            static_cast<std::streamsize>(p.embedding.size() * sizeof(double)));
    if (!f) throw IoError("short write to " + tmp_matrix.string());
  }
  std::filesystem::rename(tmp_manifest, dir / "manifest.json");
  std::filesystem::rename(tmp_matrix, dir / "embedding.f64le");
}

EncoderParams load_checkpoint(const std::filesystem::path& dir) {
  std::ifstream mf(dir / "manifest.json");
  if (!mf) throw IoError("cannot read " + (dir / "manifest.json").string());
  nlohmann::json manifest;
  try {
    mf >> manifest;
  } catch (const nlohmann::json::exception& e) {
    throw IoError("bad checkpoint manifest: " + std::string(e.what()));
  }
  EncoderParams p;
  p.format_version = manifest.at("format_version").get<std::uint32_t>();
  if (p.format_version != 1)
    throw IoError("unsupported checkpoint format version in " + dir.string());
  p.dim = manifest.at("dim").get<std::uint32_t>();
  p.vocab_buckets = manifest.at("vocab_buckets").get<std::uint32_t>();
  p.seed = manifest.at("seed").get<std::uint64_t>();
  p.step = manifest.at("step").get<std::uint64_t>();
  const std::size_t n = static_cast<std::size_t>(p.dim) * p.vocab_buckets;
  p.embedding.resize(n);
  std::ifstream f(dir / "embedding.f64le", std::ios::binary);
  if (!f) throw IoError("cannot read " + (dir / "embedding.f64le").string());
  f.read(reinterpret_cast<char*>(p.embedding.data()),
         static_cast<std::streamsize>(n * sizeof(double)));
  if (f.gcount() != static_cast<std::streamsize>(n * sizeof(double)))
    throw IoError("embedding matrix truncated in " + dir.string());
  for (double v : p.embedding)
    if (!std::isfinite(v)) throw NonFinite("checkpoint embedding matrix");
  return p;
}

}  // namespace tdro
