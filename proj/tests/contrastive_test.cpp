#include <doctest.h>

#include <cmath>

#include "tdro/contrastive.hpp"
#include "tdro/rng.hpp"

using namespace tdro;

TEST_SUITE_BEGIN("contrastive");

namespace {

// Tiny params with hand-set rows for exact-score fixtures.
EncoderParams make_params(std::uint32_t buckets, std::uint32_t dim) {
  EncoderParams p;
  p.vocab_buckets = buckets;
  p.dim = dim;
  p.embedding.assign(static_cast<std::size_t>(buckets) * dim, 0.0);
  return p;
}

void set_row(EncoderParams& p, std::uint32_t bucket, std::initializer_list<double> values) {
  auto row = p.row(bucket);
  std::size_t i = 0;
  for (double v : values) row[i++] = v;
}

BatchItem item(std::vector<std::uint32_t> q, std::vector<std::uint32_t> pos,
               std::vector<std::vector<std::uint32_t>> negs, std::string task = "a") {
  return BatchItem{std::move(q), std::move(pos), std::move(negs), std::move(task)};
}

ShardedBatch single_shard(std::vector<BatchItem> items) {
  ShardedBatch b;
  b.shards.push_back(std::move(items));
  return b;
}

double scaled_total(const std::vector<double>& losses, std::span<const double> scales) {
  double sum = 0.0;
  for (std::size_t i = 0; i < losses.size(); ++i)
    sum += (scales.empty() ? 1.0 : scales[i]) * losses[i];
  return sum;
}

// Central finite differences against the analytic gradient on every touched
// entry. h = 1e-5 on 64-bit floats per the oracle definition.
void check_gradients(EncoderParams& p, const ShardedBatch& batch, const ContrastiveConfig& cfg,
                     std::span<const double> scales, bool full_regime) {
  const GradientSet grads =
      full_regime ? infonce_full(p, batch, cfg, scales).grads
                  : infonce_hard(p, batch, cfg, scales).grads;
  auto eval = [&]() {
    return full_regime ? scaled_total(infonce_full(p, batch, cfg).losses, scales)
                       : scaled_total(infonce_hard_losses(p, batch, cfg), scales);
  };
  double max_abs = 0.0;
  for (const auto& [bucket, row] : grads.rows)
    for (double g : row) max_abs = std::max(max_abs, std::abs(g));

  const double h = 1e-5;
  for (const std::uint32_t bucket : grads.sorted_buckets()) {
    const auto& row = grads.rows.at(bucket);
    for (std::uint32_t d = 0; d < p.dim; ++d) {
      double& entry = p.row(bucket)[d];
      const double saved = entry;
      entry = saved + h;
      const double up = eval();
      entry = saved - h;
      const double down = eval();
      entry = saved;
      const double numeric = (up - down) / (2.0 * h);
      const double analytic = row[d];
      const double denom = std::max(std::abs(analytic), std::abs(numeric));
      const bool ok = std::abs(analytic - numeric) <= 1e-4 * denom ||
                      std::abs(analytic - numeric) <= 1e-8 * std::max(1.0, max_abs);
      if (!ok) {
        CAPTURE(bucket);
        CAPTURE(d);
        CAPTURE(analytic);
        CAPTURE(numeric);
      }
      REQUIRE(ok);
    }
  }
}

ShardedBatch random_batch(Rng& rng, std::uint32_t buckets, std::size_t n_items,
                          std::size_t n_shards, const std::string& task) {
  auto text = [&](std::size_t max_len) {
    std::vector<std::uint32_t> t(1 + rng.uniform_int(max_len));
    for (auto& v : t) v = static_cast<std::uint32_t>(rng.uniform_int(buckets));
    return t;
  };
  ShardedBatch batch;
  batch.shards.resize(n_shards);
  for (std::size_t i = 0; i < n_items; ++i) {
    std::vector<std::vector<std::uint32_t>> negs(1 + rng.uniform_int(3));
    for (auto& n : negs) n = text(6);
    batch.shards[i % n_shards].push_back(
        BatchItem{text(6), text(6), std::move(negs), task});
  }
  return batch;
}

}  // namespace

TEST_CASE("equal positive and negative scores give ln 2 at any temperature") {
  auto p = make_params(8, 2);
  set_row(p, 0, {0.3, 0.0});
  set_row(p, 1, {0.7, 0.0});
  set_row(p, 2, {0.11, 0.0});
  const auto batch = single_shard({item({0}, {1}, {{2}})});
  for (double tau : {1.0, 0.05, 0.002}) {
    const auto losses = infonce_hard_losses(p, batch, ContrastiveConfig{tau});
    CHECK(losses[0] == doctest::Approx(std::log(2.0)).epsilon(1e-12));
  }
}

TEST_CASE("well-separated scores drive the loss to the exponential tail") {
  auto p = make_params(8, 2);
  set_row(p, 0, {0.5, 0.0});   // query -> (1,0)
  set_row(p, 1, {0.25, 0.0});  // positive -> (1,0), s+ = 1
  set_row(p, 2, {-0.4, 0.0});  // negative -> (-1,0), s- = -1
  const auto losses = infonce_hard_losses(p, single_shard({item({0}, {1}, {{2}})}),
                                          ContrastiveConfig{0.05});
  CHECK(losses[0] == doctest::Approx(4.248354255291589e-18));
  CHECK(losses[0] > 0.0);
}

TEST_CASE("empty negative list is rejected with the item index") {
  auto p = make_params(8, 2);
  set_row(p, 0, {1.0, 0.0});
  set_row(p, 1, {0.0, 1.0});
  auto batch = single_shard({item({0}, {1}, {{1}}), item({0}, {1}, {})});
  CHECK_THROWS_AS(infonce_hard_losses(p, batch, {}), NoNegatives);
  try {
    infonce_hard_losses(p, batch, {});
  } catch (const NoNegatives& e) {
    CHECK(e.item == 1);
  }
}

TEST_CASE("hard regime requires a single shard") {
  auto p = make_params(8, 2);
  set_row(p, 0, {1.0, 0.0});
  ShardedBatch two;
  two.shards.resize(2);
  two.shards[0].push_back(item({0}, {0}, {{0}}));
  two.shards[1].push_back(item({0}, {0}, {{0}}));
  CHECK_THROWS_AS(infonce_hard_losses(p, two, {}), LengthMismatch);
}

TEST_CASE("full regime with suppressed hard negative reduces to the in-batch pair") {
  auto p = make_params(8, 3);
  set_row(p, 0, {1.0, 0.0, 0.0});   // q1
  set_row(p, 1, {0.0, 1.0, 0.0});   // d1+, s(q1,d1+) = 0
  set_row(p, 2, {0.0, 0.0, 1.0});   // q2 = d2+, s(q1,d2+) = 0
  set_row(p, 3, {-1.0, 0.0, 0.0});  // hard negative at s = -1
  const auto batch =
      single_shard({item({0}, {1}, {{3}}), item({2}, {2}, {{3}})});
  const auto res = infonce_full(p, batch, ContrastiveConfig{0.01});
  CHECK(res.losses[0] == doctest::Approx(std::log(2.0)).epsilon(1e-9));
}

TEST_CASE("two identical one-item shards contribute one cross-batch negative each") {
  auto p = make_params(8, 2);
  set_row(p, 0, {1.0, 0.0});   // query and positive
  set_row(p, 1, {-1.0, 0.0});  // hard negative
  ShardedBatch batch;
  batch.shards.resize(2);
  batch.shards[0].push_back(item({0}, {0}, {{1}}));
  batch.shards[1].push_back(item({0}, {0}, {{1}}));
  const auto res = infonce_full(p, batch, ContrastiveConfig{1.0});
  // denominator: e^1 (pos) + e^-1 (hard) + e^1 (cross-batch positive)
  const double expected = std::log(2.0 + std::exp(-2.0));
  CHECK(res.losses[0] == doctest::Approx(expected).epsilon(1e-12));
  CHECK(res.losses[1] == doctest::Approx(expected).epsilon(1e-12));
}

TEST_CASE("mixed task labels are rejected in the full regime") {
  auto p = make_params(8, 2);
  set_row(p, 0, {1.0, 0.0});
  ShardedBatch batch;
  batch.shards.resize(2);
  batch.shards[0].push_back(item({0}, {0}, {{0}}, "a"));
  batch.shards[1].push_back(item({0}, {0}, {{0}}, "b"));
  CHECK_THROWS_AS(infonce_full(p, batch, {}), MixedTasks);
}

TEST_CASE("full regime with one item equals the hard regime") {
  Rng rng(31);
  auto p = init_params(TokenizerConfig{64, true}, 8, 3);
  const auto batch = random_batch(rng, 64, 1, 1, "a");
  const auto full = infonce_full(p, batch, ContrastiveConfig{0.2});
  const auto hard = infonce_hard(p, batch, ContrastiveConfig{0.2});
  REQUIRE(full.losses.size() == 1);
  CHECK(full.losses[0] == hard.losses[0]);
  REQUIRE(full.grads.touched() == hard.grads.touched());
  for (const auto& [bucket, row] : full.grads.rows) {
    const auto& other = hard.grads.rows.at(bucket);
    for (std::size_t d = 0; d < row.size(); ++d)
      CHECK(row[d] == doctest::Approx(other[d]).epsilon(1e-12));
  }
}

TEST_CASE("raising a negative similarity strictly increases the loss") {
  auto p = make_params(8, 2);
  set_row(p, 0, {1.0, 0.0});  // query
  set_row(p, 1, {0.8, 0.6});  // positive
  double prev = -1.0;
  for (double phi : {2.0, 1.2, 0.4}) {  // cos(phi) increases
    set_row(p, 2, {std::cos(phi), std::sin(phi)});
    const auto losses =
        infonce_hard_losses(p, single_shard({item({0}, {1}, {{2}})}), ContrastiveConfig{0.5});
    CHECK(losses[0] > prev);
    prev = losses[0];
  }
}

TEST_CASE("loss is non-negative") {
  Rng rng(77);
  auto p = init_params(TokenizerConfig{64, true}, 8, 5);
  for (int trial = 0; trial < 20; ++trial) {
    const auto batch = random_batch(rng, 64, 1 + rng.uniform_int(4), 1, "a");
    for (double l : infonce_hard_losses(p, batch, ContrastiveConfig{0.3})) CHECK(l >= 0.0);
  }
}

TEST_CASE("group means") {
  const std::vector<double> losses{1.0, 3.0};
  const std::vector<std::string> same{"a", "a"}, two{"a", "b"};
  auto m1 = group_mean_losses(losses, same);
  CHECK(m1.at("a") == doctest::Approx(2.0));
  auto m2 = group_mean_losses(losses, two);
  CHECK(m2.at("a") == doctest::Approx(1.0));
  CHECK(m2.at("b") == doctest::Approx(3.0));
  CHECK_THROWS_AS(group_mean_losses(std::vector<double>{}, std::vector<std::string>{}),
                  LengthMismatch);
  CHECK_THROWS_AS(group_mean_losses(losses, std::vector<std::string>{"a"}), LengthMismatch);
}

TEST_CASE("analytic gradients match finite differences: hard regime") {
  Rng rng(101);
  for (int trial = 0; trial < 30; ++trial) {
    const std::uint32_t dim = 2 + static_cast<std::uint32_t>(rng.uniform_int(7));
    auto p = init_params(TokenizerConfig{64, true}, dim, 1000 + trial);
    const auto batch = random_batch(rng, 64, 1 + rng.uniform_int(4), 1, "a");
    const double tau = trial % 3 == 0 ? 1.0 : (trial % 3 == 1 ? 0.2 : 0.05);
    std::vector<double> scales;
    if (trial % 2 == 0) {
      scales.resize(batch.item_count());
      for (auto& s : scales) s = 0.1 + rng.uniform01();
    }
    check_gradients(p, batch, ContrastiveConfig{tau}, scales, false);
  }
}

TEST_CASE("analytic gradients match finite differences: full regime") {
  Rng rng(202);
  for (int trial = 0; trial < 30; ++trial) {
    const std::uint32_t dim = 2 + static_cast<std::uint32_t>(rng.uniform_int(7));
    auto p = init_params(TokenizerConfig{64, true}, dim, 2000 + trial);
    const std::size_t shards = 1 + rng.uniform_int(2);
    const std::size_t items = shards + rng.uniform_int(3);
    const auto batch = random_batch(rng, 64, items, shards, "a");
    const double tau = trial % 3 == 0 ? 1.0 : (trial % 3 == 1 ? 0.2 : 0.05);
    std::vector<double> scales;
    if (trial % 2 == 1) {
      scales.resize(batch.item_count());
      for (auto& s : scales) s = 0.1 + rng.uniform01();
    }
    check_gradients(p, batch, ContrastiveConfig{tau}, scales, true);
  }
}

TEST_SUITE_END();
