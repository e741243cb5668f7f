#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <random>
#include <set>

#include "enclap/captioner.hpp"
#include "gradcheck.hpp"

using namespace enclap;
using captioner::CaptionerConfig;
using captioner::CaptionerModel;
using codec::CodeMatrix;

namespace {

CaptionerConfig tiny_config(std::size_t n = 2) {
  CaptionerConfig c;
  c.num_codebooks = n;
  c.codebook_size = 5;
  c.clap_dim = 4;
  c.model_dim = 8;
  c.heads = 2;
  c.encoder_layers = 1;
  c.decoder_layers = 1;
  c.ffn = 16;
  c.max_code_length = 16;
  c.max_caption_length = 8;
  return c;
}

text::Vocabulary tiny_vocab() { return text::Vocabulary::from_words({"a", "b", "c", "d"}); }

CodeMatrix random_codes(std::size_t n, std::size_t len, std::int64_t v, std::mt19937_64& rng) {
  CodeMatrix c;
  c.num_codebooks = n;
  c.length = len;
  std::uniform_int_distribution<std::int64_t> pick(0, v - 1);
  for (std::size_t i = 0; i < n * len; ++i) c.codes.push_back(pick(rng));
  return c;
}

std::vector<double> random_unit(std::size_t d, std::mt19937_64& rng) {
  std::normal_distribution<double> g;
  std::vector<double> v(d);
  double s = 0.0;
  for (auto& x : v) {
    x = g(rng);
    s += x * x;
  }
  for (auto& x : v) x /= std::sqrt(s);
  return v;
}

void fill(ad::Tensor t, double value) {
  for (auto& x : t.mutable_values()) x = value;
}

std::vector<std::vector<double>> snapshot(const nn::ParamStore& store) {
  std::vector<std::vector<double>> out;
  for (const auto& t : store.tensors()) out.emplace_back(t.values().begin(), t.values().end());
  return out;
}

}  // namespace

TEST_CASE("encoder input has L + 3 rows") {
  CaptionerModel model(tiny_config(), tiny_vocab(), 1);
  std::mt19937_64 rng(2);
  const auto clap = random_unit(4, rng);
  for (std::size_t len : {0u, 1u, 4u, 16u}) {
    const auto codes = random_codes(2, len, 5, rng);
    const auto input = captioner::build_encoder_input(captioner::embed_codes(codes, model), clap, model);
    CHECK(input.rows() == len + 3);
    CHECK(input.cols() == 8);
    CHECK(model.encode(input).rows() == len + 3);
  }
  auto big = tiny_config();
  big.max_code_length = 100;
  CaptionerModel wide(big, tiny_vocab(), 1);
  const auto codes = random_codes(2, 100, 5, rng);
  CHECK(captioner::build_encoder_input(captioner::embed_codes(codes, wide), clap, wide).rows() == 103);
  CHECK_THROWS_AS(captioner::build_encoder_input(captioner::embed_codes(random_codes(2, 17, 5, rng), model), clap, model),
                  std::length_error);
}

TEST_CASE("code embedding is the sum of per-codebook lookups") {
  std::mt19937_64 rng(3);
  {
    CaptionerModel one(tiny_config(1), tiny_vocab(), 4);
    const auto codes = random_codes(1, 6, 6, rng);
    const auto e = captioner::embed_codes(codes, one);
    for (std::size_t l = 0; l < 6; ++l)
      for (std::size_t j = 0; j < 8; ++j) CHECK(e.at(l, j) == one.code_table(0).at(codes.at(0, l), j));
  }
  {
    CaptionerModel three(tiny_config(3), tiny_vocab(), 5);
    const auto codes = random_codes(3, 9, 6, rng);  // includes the mask id 5
    const auto e = captioner::embed_codes(codes, three);
    for (std::size_t l = 0; l < 9; ++l) {
      for (std::size_t j = 0; j < 8; ++j) {
        long double expect = 0.0L;
        for (std::size_t n = 0; n < 3; ++n) expect += three.code_table(n).at(codes.at(n, l), j);
        CHECK(std::abs(e.at(l, j) - static_cast<double>(expect)) <= 1e-15);
      }
    }
    for (std::size_t n = 0; n < 3; ++n) fill(three.code_table(n), 0.0);
    const auto z = captioner::embed_codes(codes, three);
    for (double x : z.values()) CHECK(x == 0.0);
  }
  CaptionerModel model(tiny_config(), tiny_vocab(), 1);
  auto bad = random_codes(2, 3, 5, rng);
  bad.at(1, 2) = 6;
  CHECK_THROWS_AS(captioner::embed_codes(bad, model), std::out_of_range);
  bad.at(1, 2) = -1;
  CHECK_THROWS_AS(captioner::embed_codes(bad, model), std::out_of_range);
  CHECK_THROWS_AS(captioner::embed_codes(random_codes(3, 3, 5, rng), model), std::invalid_argument);
}

TEST_CASE("encoder input layout") {
  CaptionerModel model(tiny_config(), tiny_vocab(), 6);
  std::mt19937_64 rng(7);
  const auto clap = random_unit(4, rng);
  const auto codes = random_codes(2, 5, 5, rng);
  const auto emb = captioner::embed_codes(codes, model);
  const auto x = captioner::build_encoder_input(emb, clap, model);
  const auto& pos = model.positions();
  const auto& proj = model.clap_projection();
  for (std::size_t j = 0; j < 8; ++j) {
    double row0 = proj.bias.values()[j];
    for (std::size_t i = 0; i < 4; ++i) row0 += clap[i] * proj.weight.at(i, j);
    CHECK(std::abs(x.at(0, j) - row0) <= 1e-14);  // no position on the CLAP row
    CHECK(x.at(1, j) == model.bos_embedding().values()[j] + pos.at(0, j));
    for (std::size_t l = 0; l < 5; ++l) CHECK(x.at(l + 2, j) == emb.at(l, j) + pos.at(l + 1, j));
    CHECK(x.at(7, j) == model.eos_embedding().values()[j] + pos.at(6, j));
  }

  // Zero positions and projection leave the raw embeddings.
  fill(model.positions(), 0.0);
  fill(proj.weight, 0.0);
  fill(proj.bias, 0.0);
  const auto raw = captioner::build_encoder_input(emb, clap, model);
  for (std::size_t j = 0; j < 8; ++j) {
    CHECK(raw.at(0, j) == 0.0);
    CHECK(raw.at(1, j) == model.bos_embedding().values()[j]);
    for (std::size_t l = 0; l < 5; ++l) CHECK(raw.at(l + 2, j) == emb.at(l, j));
    CHECK(raw.at(7, j) == model.eos_embedding().values()[j]);
  }

  auto no_clap = tiny_config();
  no_clap.use_clap = false;
  CaptionerModel ablated(no_clap, tiny_vocab(), 6);
  const auto y = captioner::build_encoder_input(captioner::embed_codes(codes, ablated), clap, ablated);
  for (std::size_t j = 0; j < 8; ++j) CHECK(y.at(0, j) == 0.0);
  CHECK_THROWS_AS(captioner::build_encoder_input(emb, std::vector<double>(3, 0.0), model), ad::ShapeError);
}

TEST_CASE("span masking is exact") {
  for (std::size_t len : {5u, 64u, 100u, 1000u}) {
    for (std::uint64_t seed = 0; seed < 50; ++seed) {
      std::mt19937_64 rng(seed);
      const auto codes = random_codes(4, len, 64, rng);
      const auto m = captioner::span_mask(codes, 0.15, 10, 64, rng);
      const auto expect = static_cast<std::size_t>(std::floor(0.15 * static_cast<double>(len)));
      REQUIRE(m.plan.positions.size() == 4);
      CHECK(m.codes.length == len);
      for (std::size_t n = 0; n < 4; ++n) {
        const auto& p = m.plan.positions[n];
        CHECK(p.size() == expect);
        CHECK(std::is_sorted(p.begin(), p.end()));
        CHECK(std::set<std::size_t>(p.begin(), p.end()).size() == p.size());
        std::vector<bool> masked(len, false);
        for (auto l : p) {
          REQUIRE(l < len);
          masked[l] = true;
        }
        std::size_t runs = 0;
        for (std::size_t l = 0; l < len; ++l) {
          if (masked[l]) {
            CHECK(m.codes.at(n, l) == 64);
            if (l == 0 || !masked[l - 1]) ++runs;
          } else {
            CHECK(m.codes.at(n, l) == codes.at(n, l));
          }
        }
        // Spans can touch and merge, never split.
        CHECK(runs <= (expect + 9) / 10);
      }
    }
  }
  std::mt19937_64 rng(1);
  const auto codes = random_codes(4, 100, 64, rng);
  const auto none = captioner::span_mask(codes, 0.0, 10, 64, rng);
  CHECK(none.codes == codes);
  CHECK(none.plan.empty());
  const auto l100 = captioner::span_mask(codes, 0.15, 10, 64, rng);
  for (const auto& p : l100.plan.positions) CHECK(p.size() == 15);
  CHECK_THROWS_AS(captioner::span_mask(codes, 1.0, 10, 64, rng), std::invalid_argument);
  CHECK_THROWS_AS(captioner::span_mask(codes, 0.15, 0, 64, rng), std::invalid_argument);
}

TEST_CASE("span placement covers every position") {
  std::mt19937_64 rng(11);
  const auto codes = random_codes(1, 40, 8, rng);
  std::vector<std::size_t> hits(40, 0);
  for (int t = 0; t < 4000; ++t) {
    const auto m = captioner::span_mask(codes, 0.5, 10, 8, rng);
    for (auto l : m.plan.positions[0]) ++hits[l];
  }
  for (auto h : hits) CHECK(h > 0);
}

TEST_CASE("MCM weighting") {
  const std::vector<ad::Tensor> two{ad::Tensor::scalar(1.0), ad::Tensor::scalar(1.0)};
  CHECK(captioner::mcm_weighting(two).item() == 0.75);
  const std::vector<ad::Tensor> four{ad::Tensor::scalar(1.0), ad::Tensor::scalar(1.0), ad::Tensor::scalar(1.0),
                                     ad::Tensor::scalar(1.0)};
  CHECK(captioner::mcm_weighting(four).item() == 0.9375);

  // N = 1 with the right code certain.
  const std::vector<ad::Tensor> sure{ad::Tensor::from({2, 3}, {0, -1000, -1000, -1000, -1000, 0})};
  CHECK(captioner::mcm_loss_from_logits(sure, {{0, 2}}).item() == 0.0);

  // N = 3 against a scalar cross-entropy oracle.
  std::mt19937_64 rng(5);
  std::normal_distribution<double> g(0.0, 2.0);
  const std::vector<std::size_t> counts{3, 1, 2};
  std::vector<ad::Tensor> logits;
  std::vector<std::vector<std::int64_t>> targets;
  long double oracle = 0.0L;
  long double w = 1.0L;
  for (std::size_t i = 0; i < 3; ++i) {
    std::vector<double> v(counts[i] * 4);
    for (auto& x : v) x = g(rng);
    targets.emplace_back();
    long double li = 0.0L;
    for (std::size_t r = 0; r < counts[i]; ++r) {
      const auto t = static_cast<std::int64_t>((r + i) % 4);
      targets.back().push_back(t);
      long double z = 0.0L;
      for (std::size_t k = 0; k < 4; ++k) z += std::exp(static_cast<long double>(v[r * 4 + k]));
      li += std::log(z) - v[r * 4 + static_cast<std::size_t>(t)];
    }
    w /= 2.0L;
    oracle += w * li / static_cast<long double>(counts[i]);
    logits.push_back(ad::Tensor::from({counts[i], 4}, v));
  }
  CHECK(std::abs(captioner::mcm_loss_from_logits(logits, targets).item() - static_cast<double>(oracle)) <= 1e-12);
}

TEST_CASE("MCM loss reads rows l + 2 and is zero without masks") {
  CaptionerModel model(tiny_config(), tiny_vocab(), 8);
  std::mt19937_64 rng(9);
  const auto codes = random_codes(2, 10, 5, rng);
  const auto states = testing::random_tensor({13, 8}, rng, 1.0, false);
  captioner::MaskPlan empty;
  empty.positions.resize(2);
  const auto zero = captioner::mcm_loss(states, empty, codes, model);
  CHECK(zero.item() == 0.0);
  CHECK_FALSE(zero.requires_grad());

  captioner::MaskPlan plan;
  plan.positions = {{0, 1, 9}, {4, 5, 6}};
  std::vector<ad::Tensor> logits;
  std::vector<std::vector<std::int64_t>> targets(2);
  for (std::size_t n = 0; n < 2; ++n) {
    std::vector<std::int64_t> rows;
    for (auto l : plan.positions[n]) {
      rows.push_back(static_cast<std::int64_t>(l + 2));
      targets[n].push_back(codes.at(n, l));
    }
    logits.push_back(model.mcm_head(n)(ad::gather_rows(states, rows)));
  }
  CHECK(captioner::mcm_loss(states, plan, codes, model).item() == captioner::mcm_loss_from_logits(logits, targets).item());
  plan.positions[0].push_back(10);
  CHECK_THROWS_AS(captioner::mcm_loss(states, plan, codes, model), std::out_of_range);
}

TEST_CASE("caption loss") {
  text::Caption cap;
  cap.ids = {4, 7, 2};
  const auto uniform = ad::Tensor::zeros({3, 50});
  CHECK(std::abs(captioner::caption_loss(uniform, cap).item() - std::log(50.0)) <= 1e-12);
  CHECK(std::abs(captioner::caption_loss(uniform, cap, 0.0).item() - std::log(50.0)) <= 1e-12);

  std::vector<double> sure(3 * 50, -1000.0);
  for (std::size_t t = 0; t < 3; ++t) sure[t * 50 + static_cast<std::size_t>(cap.ids[t])] = 0.0;
  CHECK(captioner::caption_loss(ad::Tensor::from({3, 50}, sure), cap, 0.0).item() == 0.0);

  // Hand-set logits against a scalar label-smoothing oracle.
  const std::vector<double> v{1.0, 2.0, 0.5, -1.0, 0.0, 0.0, 3.0, 1.0, 2.0, -0.5, 0.5, 1.0, -2.0, 0.25, 4.0};
  text::Caption three;
  three.ids = {1, 2, 4};
  long double oracle = 0.0L;
  for (std::size_t t = 0; t < 3; ++t) {
    long double z = 0.0L, sum_lp = 0.0L;
    for (std::size_t k = 0; k < 5; ++k) z += std::exp(static_cast<long double>(v[t * 5 + k]));
    for (std::size_t k = 0; k < 5; ++k) sum_lp += v[t * 5 + k] - std::log(z);
    const long double lp_y = v[t * 5 + static_cast<std::size_t>(three.ids[t])] - std::log(z);
    oracle += -(0.8L * lp_y + 0.2L / 5.0L * sum_lp);
  }
  oracle /= 3.0L;
  CHECK(std::abs(captioner::caption_loss(ad::Tensor::from({3, 5}, v), three).item() - static_cast<double>(oracle)) <= 1e-12);

  text::Caption empty;
  CHECK_THROWS_AS(captioner::caption_loss(ad::Tensor::zeros({1, 5}), empty), std::invalid_argument);
  CHECK_THROWS_AS(captioner::caption_loss(ad::Tensor::zeros({2, 5}), three), ad::ShapeError);
}

TEST_CASE("total loss") {
  const auto cap = ad::Tensor::scalar(2.0), mcm = ad::Tensor::scalar(1.0);
  CHECK(captioner::total_loss(cap, mcm, 0.7).item() == 2.7);
  CHECK(captioner::total_loss(cap, mcm, 0.0).item() == 2.0);
  CHECK(captioner::total_loss(cap, ad::Tensor::scalar(0.0), 0.7).item() == 2.0);
  CHECK(captioner::total_loss(cap, mcm, 1.0).item() == 3.0);
  CHECK_THROWS_AS(captioner::total_loss(cap, mcm, -0.1), std::invalid_argument);
  CHECK_THROWS_AS(captioner::total_loss(cap, mcm, 1.5), std::invalid_argument);
}

namespace {

captioner::Example tiny_example(std::mt19937_64& rng, std::size_t len = 12) {
  captioner::Example ex;
  ex.codes = random_codes(2, len, 5, rng);
  ex.clap = random_unit(4, rng);
  ex.caption.ids = {4, 5, 7, 2};
  return ex;
}

}  // namespace

TEST_CASE("full captioner loss matches finite differences") {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    CAPTURE(seed);
    CaptionerModel model(tiny_config(), tiny_vocab(), 100 + seed);
    std::mt19937_64 rng(seed);
    const auto ex = tiny_example(rng);
    // The same mask on every evaluation.
    const std::mt19937_64 mask_rng(seed + 1000);
    auto loss = [&] {
      auto r = mask_rng;
      return captioner::example_loss(ex, model, 0.7, 0.25, 3, 0.2, r).total;
    };
    {
      auto r = mask_rng;
      REQUIRE(captioner::example_loss(ex, model, 0.7, 0.25, 3, 0.2, r).mcm.item() > 0.0);
    }
    // Some parameters have an exactly zero gradient (spare positions, the
    // unused vocabulary, key biases that softmax cancels). Central differences
    // there are pure rounding noise of about eps |loss| / h per entry, hence
    // the wider step and the 1e-6 floor.
    CHECK(testing::max_grad_rel_error(loss, model.params().tensors(), 1e-4, 1e-6) <= 1e-4);
  }
}

TEST_CASE("one backward of the total equals the sum of separate backwards") {
  CaptionerModel model(tiny_config(), tiny_vocab(), 21);
  std::mt19937_64 rng(22);
  const auto ex = tiny_example(rng);
  const std::mt19937_64 mask_rng(23);
  auto params = model.params().tensors();
  const double lambda = 0.7;

  auto r1 = mask_rng;
  ad::backward(captioner::example_loss(ex, model, lambda, 0.25, 3, 0.2, r1).total);
  std::vector<std::vector<double>> joint;
  for (auto& p : params) joint.emplace_back(p.grad().begin(), p.grad().end());
  ad::zero_grad(params);

  auto r2 = mask_rng;
  auto parts = captioner::example_loss(ex, model, lambda, 0.25, 3, 0.2, r2);
  ad::backward(parts.caption);
  std::vector<std::vector<double>> separate;
  for (auto& p : params) {
    separate.emplace_back(p.numel(), 0.0);
    if (p.has_grad()) std::copy(p.grad().begin(), p.grad().end(), separate.back().begin());
  }
  ad::zero_grad(params);
  auto r3 = mask_rng;
  ad::backward(ad::scale(captioner::example_loss(ex, model, lambda, 0.25, 3, 0.2, r3).mcm, lambda));
  double worst = 0.0;
  for (std::size_t i = 0; i < params.size(); ++i) {
    for (std::size_t k = 0; k < params[i].numel(); ++k) {
      const double g2 = params[i].has_grad() ? params[i].grad()[k] : 0.0;
      worst = std::max(worst, std::abs(joint[i][k] - (separate[i][k] + g2)));
    }
  }
  CHECK(worst <= 1e-10);
}

namespace {

// Each codebook row repeats one code, so masked codes can be read off
// their neighbours, and the caption follows codebook 0.
std::vector<captioner::Example> toy_dataset(std::size_t count, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::vector<captioner::Example> out;
  for (std::size_t i = 0; i < count; ++i) {
    auto ex = tiny_example(rng, 8);
    for (std::size_t n = 0; n < 2; ++n)
      for (std::size_t l = 1; l < 8; ++l) ex.codes.at(n, l) = ex.codes.at(n, 0);
    const auto c = ex.codes.at(0, 0);
    ex.caption.ids = {4 + c % 4, 4 + (c + 1) % 4, 2};
    out.push_back(ex);
  }
  return out;
}

captioner::CaptionerTrainConfig toy_training() {
  captioner::CaptionerTrainConfig t;
  t.epochs = 12;
  t.batch = 8;
  t.peak_lr = 1e-2;
  t.warmup_steps = 10;
  t.mask_ratio = 0.25;
  t.span_length = 2;
  return t;
}

}  // namespace

TEST_CASE("training lowers the loss and is deterministic") {
  const auto data = toy_dataset(48, 31);
  captioner::CaptionerTrainStats stats;
  const auto a = captioner::train_captioner(data, tiny_config(), tiny_vocab(), toy_training(), 5, &stats);
  REQUIRE(stats.loss_curve.size() == 72);
  double head = 0.0, tail = 0.0;
  for (std::size_t i = 0; i < 6; ++i) {
    head += stats.loss_curve[i];
    tail += stats.loss_curve[stats.loss_curve.size() - 1 - i];
  }
  CHECK(tail <= 0.5 * head);
  for (const auto& t : a.params().tensors()) CHECK_FALSE(t.requires_grad());

  const auto b = captioner::train_captioner(data, tiny_config(), tiny_vocab(), toy_training(), 5);
  CHECK(snapshot(a.params()) == snapshot(b.params()));
  const auto c = captioner::train_captioner(data, tiny_config(), tiny_vocab(), toy_training(), 6);
  CHECK(snapshot(a.params()) != snapshot(c.params()));
}

TEST_CASE("lambda = 0 leaves the MCM heads untouched") {
  const auto data = toy_dataset(16, 32);
  auto train = toy_training();
  train.epochs = 3;
  train.lambda = 0.0;
  CaptionerModel model(tiny_config(), tiny_vocab(), 7);
  CaptionerModel fresh(tiny_config(), tiny_vocab(), 7);
  captioner::CaptionerTrainer trainer(model, data, train, 7);
  while (!trainer.finished()) trainer.step();
  const auto heads = model.mcm_parameters();
  const auto before = fresh.mcm_parameters();
  for (std::size_t i = 0; i < heads.size(); ++i)
    CHECK(std::vector<double>(heads[i].values().begin(), heads[i].values().end()) ==
          std::vector<double>(before[i].values().begin(), before[i].values().end()));
  // Everything else moved.
  CHECK(std::vector<double>(model.bos_embedding().values().begin(), model.bos_embedding().values().end()) !=
        std::vector<double>(fresh.bos_embedding().values().begin(), fresh.bos_embedding().values().end()));
}

TEST_CASE("trainer state resumes bit-exactly") {
  const auto data = toy_dataset(20, 33);
  auto train = toy_training();
  train.epochs = 4;  // 12 steps, crossing epoch boundaries
  CaptionerModel straight(tiny_config(), tiny_vocab(), 9);
  captioner::CaptionerTrainer t1(straight, data, train, 9);
  while (!t1.finished()) t1.step();

  CaptionerModel first(tiny_config(), tiny_vocab(), 9);
  captioner::CaptionerTrainer t2(first, data, train, 9);
  for (int i = 0; i < 5; ++i) t2.step();
  const auto params = first.export_state();
  const auto state = t2.export_state();

  CaptionerModel second(tiny_config(), tiny_vocab(), 1234);
  second.import_state(params);
  captioner::CaptionerTrainer t3(second, data, train, 9);
  t3.import_state(state);
  while (!t3.finished()) t3.step();
  CHECK(snapshot(second.params()) == snapshot(straight.params()));
}

TEST_CASE("NaN aborts training with the step index") {
  auto data = toy_dataset(16, 34);
  data[5].clap[0] = std::nan("");
  auto train = toy_training();
  train.batch = 16;
  CaptionerModel model(tiny_config(), tiny_vocab(), 1);
  captioner::CaptionerTrainer trainer(model, data, train, 1);
  try {
    trainer.step();
    FAIL("expected NonFiniteError");
  } catch (const ad::NonFiniteError& e) {
    CHECK(std::string(e.what()).find("step 1") != std::string::npos);
  }
  CHECK_THROWS_AS(captioner::CaptionerTrainer(model, std::span<const captioner::Example>(), train, 1), std::invalid_argument);
}

TEST_CASE("decoding") {
  const auto data = toy_dataset(48, 35);
  auto train = toy_training();
  train.epochs = 4;
  const auto model = captioner::train_captioner(data, tiny_config(), tiny_vocab(), train, 3);
  for (std::size_t i = 0; i < 10; ++i) {
    const auto& ex = data[i];
    // Independent argmax rollout.
    std::vector<std::int64_t> ids;
    {
      ad::NoGradGuard ng;
      const auto mem = model.memory(model.encode(
          captioner::build_encoder_input(captioner::embed_codes(ex.codes, model), ex.clap, model)));
      while (ids.size() < 8) {
        const auto logits = model.decode(mem, ids);
        const std::size_t k = logits.cols(), last = logits.rows() - 1;
        std::int64_t best = 2;
        for (std::size_t j = 2; j < k; ++j)
          if (logits.at(last, j) > logits.at(last, static_cast<std::size_t>(best))) best = static_cast<std::int64_t>(j);
        ids.push_back(best);
        if (best == text::Vocabulary::kEos) break;
      }
    }
    const auto greedy = captioner::greedy_decode(ex.codes, ex.clap, model, 8);
    captioner::GenerateOptions one;
    one.beam_size = 1;
    one.max_length = 8;
    const auto beam1 = captioner::generate_from_codes(ex.codes, ex.clap, model, one);
    if (ids.back() == text::Vocabulary::kEos) CHECK(greedy.ids == ids);
    CHECK(beam1.ids == greedy.ids);

    captioner::GenerateOptions four;
    four.max_length = 8;
    const auto beam4 = captioner::generate_from_codes(ex.codes, ex.clap, model, four);
    CHECK(beam4.score >= greedy.score);
    CHECK(beam4.ids.back() == text::Vocabulary::kEos);
    CHECK(std::abs(beam4.score - captioner::sequence_score(ex.codes, ex.clap, model, beam4.ids)) <= 1e-12);
    CHECK(std::abs(greedy.score - captioner::sequence_score(ex.codes, ex.clap, model, greedy.ids)) <= 1e-12);

    // An all-empty mask plan changes nothing at inference.
    std::mt19937_64 r(1);
    const auto unmasked = captioner::span_mask(ex.codes, 0.0, 10, 5, r);
    CHECK(captioner::generate_from_codes(unmasked.codes, ex.clap, model, four).ids == beam4.ids);
  }
  // Length cap: eos forced at the last slot.
  captioner::GenerateOptions tight;
  tight.max_length = 2;
  const auto capped = captioner::generate_from_codes(data[0].codes, data[0].clap, model, tight);
  CHECK(capped.ids.size() <= 2);
  CHECK(capped.ids.back() == text::Vocabulary::kEos);
  // With eos never the argmax every hypothesis runs into the cap.
  auto bias = model.output_head().bias;
  bias.mutable_values()[text::Vocabulary::kEos] = -50.0;
  for (std::size_t beam : {1u, 4u}) {
    tight.beam_size = beam;
    const auto cut = captioner::generate_from_codes(data[0].codes, data[0].clap, model, tight);
    CHECK(cut.ids.size() == 2);
    CHECK(cut.ids.back() == text::Vocabulary::kEos);
    CHECK(cut.truncated);
  }
}
