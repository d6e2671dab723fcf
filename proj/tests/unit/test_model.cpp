#include <cmath>
#include <cstring>
#include <sstream>

#include "doctest.h"
#include "mmn/gradcheck.hpp"
#include "mmn/model.hpp"
#include "mmn/optim.hpp"
#include "test_util.hpp"

using namespace mmn;

namespace {

ModelConfig toy_config(std::size_t enc = 2, std::size_t dec = 2, std::vector<std::size_t> mem = {1, 2}) {
  ModelConfig c;
  c.d_emb = 4;
  c.vocab_size = 12;
  c.encoder_layers = enc;
  c.decoder_layers = dec;
  c.memory_layers = std::move(mem);
  c.label_smoothing = 0.1;
  return c;
}

std::vector<TokenId> random_ids(Rng& rng, std::size_t n, std::size_t vocab) {
  std::vector<TokenId> ids(n);
  for (auto& id : ids) id = static_cast<TokenId>(kReservedTokens + rng.below(vocab - kReservedTokens));
  return ids;
}

template <typename T>
bool bit_equal(const Tensor<T>& a, const Tensor<T>& b) {
  return a.shape() == b.shape() && std::memcmp(a.data().data(), b.data().data(), a.size() * sizeof(T)) == 0;
}

}  // namespace

TEST_CASE("receptive field formula") {
  ModelConfig plain = toy_config(6, 1, {6});
  plain.dilated = false;
  CHECK(receptive_field(plain, 6) == 13);

  ModelConfig dilated = toy_config(8, 1, {4, 8});
  CHECK(receptive_field(dilated, 4) == 31);
  CHECK(receptive_field(dilated, 8) == 511);
  for (std::size_t l = 1; l <= 8; ++l) CHECK(receptive_field(dilated, l) == (std::size_t{1} << (l + 1)) - 1);
  CHECK(dilated.dilation(1) == 1);
  CHECK(dilated.dilation(4) == 8);
  CHECK_THROWS_AS(receptive_field(dilated, 9), std::invalid_argument);
}

TEST_CASE("config validation and json round trip") {
  ModelConfig c = toy_config();
  CHECK(config_from_json(config_to_json(c)) == c);
  CHECK(config_from_json(R"({"d_emb": 8})", c).d_emb == 8);
  CHECK_THROWS_AS(config_from_json(R"({"bogus": 1})"), std::invalid_argument);

  auto bad = c;
  bad.memory_layers = {2, 1};
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
  bad.memory_layers = {3};
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
  bad = c;
  bad.kernel = 4;
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
  bad = c;
  bad.memory_layers = {};
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
  CHECK(ModelConfig{}.d_emb == 300);
}

TEST_CASE("encoder shapes and embedding lookup") {
  const Model<double> model(toy_config(), 1);
  Tape<double> tape(false);
  const std::vector<TokenId> doc = {5, 6, 5, 7, 8};
  const auto enc = model.encode(tape, doc);
  REQUIRE(enc.layers.size() == 3);
  for (const auto& layer : enc.layers) CHECK(layer.shape() == Shape{5, 4});
  CHECK(enc.whole.shape() == Shape{4});

  const auto& table = model.parameter("W_emb").value;
  for (std::size_t c = 0; c < 4; ++c) {
    CHECK(enc.layers[0].value().at(1, c) == table.at(6, c));
    CHECK(enc.layers[0].value().at(0, c) == enc.layers[0].value().at(2, c));
  }
  CHECK_THROWS_AS(model.encode(tape, std::vector<TokenId>{}), std::invalid_argument);
  CHECK_THROWS_AS(model.encode(tape, std::vector<TokenId>{99}), std::out_of_range);
  CHECK_THROWS_AS(model.encode(tape, std::vector<TokenId>(501, 5)), std::invalid_argument);
}

TEST_CASE("zero-weight encoder layers reduce to layer norm") {
  Model<double> model(toy_config(), 2);
  for (auto& p : model.parameters()) {
    if (p.name.rfind("enc.", 0) == 0 && (p.name.ends_with(".g") || p.name.ends_with(".b"))) p.value.fill(0.0);
  }
  Tape<double> tape(false);
  const std::vector<TokenId> doc = {4, 9, 6};
  const auto enc = model.encode(tape, doc);
  for (std::size_t l = 1; l < enc.layers.size(); ++l) {
    const auto& prev = enc.layers[l - 1].value();
    const auto& cur = enc.layers[l].value();
    // gate is sigmoid(0) = 1/2 and tanh(0) = 0, so the block is layer_norm(x).
    for (std::size_t r = 0; r < 3; ++r) {
      double mean = 0, var = 0;
      for (std::size_t c = 0; c < 4; ++c) mean += prev.at(r, c) / 4;
      for (std::size_t c = 0; c < 4; ++c) var += (prev.at(r, c) - mean) * (prev.at(r, c) - mean) / 4;
      for (std::size_t c = 0; c < 4; ++c) {
        CHECK(cur.at(r, c) == doctest::Approx((prev.at(r, c) - mean) / std::sqrt(var + kLayerNormEpsilon)));
      }
    }
  }
}

TEST_CASE("encoder locality matches the receptive field") {
  for (bool dilated : {true, false}) {
    ModelConfig c = toy_config(4, 1, {4});
    c.dilated = dilated;
    const Model<double> model(c, 3);
    Rng rng(4);
    const auto doc = random_ids(rng, 40, c.vocab_size);
    for (std::size_t l = 1; l <= 4; ++l) {
      const std::size_t radius = (receptive_field(c, l) - 1) / 2;
      for (std::size_t i : {std::size_t{0}, std::size_t{17}, std::size_t{39}}) {
        Tape<double> tape;
        const auto enc = model.encode(tape, doc);
        Tensor<double> seed(enc.layers[l].shape());
        for (std::size_t ch = 0; ch < 4; ++ch) seed.at(i, ch) = 1.0 + double(ch);
        tape.backward(enc.layers[l], seed);
        const auto& g = tape.grad(enc.layers[0]);
        for (std::size_t j = 0; j < doc.size(); ++j) {
          double mag = 0;
          for (std::size_t ch = 0; ch < 4; ++ch) mag += std::abs(g.at(j, ch));
          const std::size_t dist = i > j ? i - j : j - i;
          if (dist > radius) CHECK(mag == 0.0);
          if (dist == radius) CHECK(mag > 0.0);
        }
      }
    }
  }

  // Perturbing a token beyond the radius leaves the state bit-identical.
  const ModelConfig c = toy_config(4, 1, {4});
  const Model<double> model(c, 5);
  Rng rng(6);
  auto doc = random_ids(rng, 40, c.vocab_size);
  Tape<double> t1(false);
  const auto before = model.encode(t1, doc).layers[4].value();
  doc[36] = doc[36] == 4 ? 5 : 4;
  Tape<double> t2(false);
  const auto after = model.encode(t2, doc).layers[4].value();
  for (std::size_t ch = 0; ch < 4; ++ch) CHECK(before.at(20, ch) == after.at(20, ch));
}

TEST_CASE("memory skip connection") {
  const Model<double> model(toy_config(3, 1, {1, 3}), 7);
  Tape<double> tape(false);
  const std::vector<TokenId> doc = {4, 5, 6, 7, 8, 9};
  const auto enc = model.encode(tape, doc);
  const auto mem = model.memories(enc);
  REQUIRE(mem.size() == 2);
  const std::size_t levels[] = {1, 3};
  for (std::size_t s = 0; s < 2; ++s) {
    CHECK(bit_equal(mem[s].input.value(), enc.layers[levels[s]].value()));
    const auto& a = mem[s].input.value();
    const auto& c = mem[s].output.value();
    const auto& d0 = enc.layers[0].value();
    for (std::size_t i = 0; i < a.size(); ++i) {
      CHECK(c[i] == a[i] + d0[i]);
      CHECK(c[i] - a[i] == doctest::Approx(d0[i]).epsilon(1e-12));
    }
  }
}

TEST_CASE("memory attention") {
  Tape<double> tape(false);
  const double ln3 = std::log(3.0);
  const auto q = tape.constant(Tensor<double>({1, 4}, {2 * ln3, 0, 0, 0}));
  const auto ma = tape.constant(Tensor<double>({2, 4}, {0, 0, 0, 0, 1, 0, 0, 0}));
  const auto mc = tape.constant(Tensor<double>({2, 4}, {1, 2, 3, 4, 5, 6, 7, 8}));
  const auto out = attend(q, ma, mc).value();
  for (std::size_t c = 0; c < 4; ++c) CHECK(out[c] == doctest::Approx(0.25 * mc.value()[c] + 0.75 * mc.value()[4 + c]));

  const auto zero = tape.constant(Tensor<double>({1, 4}));
  const auto mean = attend(zero, ma, mc).value();
  for (std::size_t c = 0; c < 4; ++c) CHECK(mean[c] == doctest::Approx((mc.value()[c] + mc.value()[4 + c]) / 2));

  const auto single = attend(q, slice_rows(ma, 1, 1), slice_rows(mc, 1, 1)).value();
  for (std::size_t c = 0; c < 4; ++c) CHECK(single[c] == doctest::Approx(mc.value()[4 + c]));

  const bool mask[] = {false, true};
  const auto masked = attend(q, ma, mc, mask).value();
  for (std::size_t c = 0; c < 4; ++c) CHECK(masked[c] == doctest::Approx(mc.value()[c]));

  // Convex hull: random reads stay inside the per-column range of M_c.
  Rng rng(9);
  for (int trial = 0; trial < 50; ++trial) {
    Tape<double> t(false);
    const auto qs = t.constant(testing::random_tensor({3, 4}, rng, -3, 3));
    const auto keys = t.constant(testing::random_tensor({5, 4}, rng));
    const auto vals = t.constant(testing::random_tensor({5, 4}, rng));
    const auto r = attend(qs, keys, vals).value();
    for (std::size_t row = 0; row < 3; ++row) {
      for (std::size_t c = 0; c < 4; ++c) {
        double lo = 1e9, hi = -1e9;
        for (std::size_t n = 0; n < 5; ++n) lo = std::min(lo, vals.value().at(n, c)), hi = std::max(hi, vals.value().at(n, c));
        CHECK(r.at(row, c) >= lo - 1e-12);
        CHECK(r.at(row, c) <= hi + 1e-12);
      }
    }
  }
}

TEST_CASE("decoder causality") {
  Rng rng(10);
  for (int trial = 0; trial < 100; ++trial) {
    const ModelConfig c = toy_config(2, 1 + rng.below(3), {1, 2});
    const Model<float> model(c, 100 + trial);
    const auto doc = random_ids(rng, 3 + rng.below(8), c.vocab_size);
    auto summary = random_ids(rng, 2 + rng.below(8), c.vocab_size);
    const std::size_t t = rng.below(summary.size() - 1);
    Tape<float> t1(false);
    const auto base = model.forward(t1, doc, summary).value();
    // Input position p holds summary[p - 1]; changing summary[t'] for t' >= t
    // only reaches rows after t.
    for (std::size_t tp = t; tp < summary.size(); ++tp) summary[tp] = static_cast<TokenId>(kReservedTokens + rng.below(8));
    Tape<float> t2(false);
    const auto moved = model.forward(t2, doc, summary).value();
    for (std::size_t row = 0; row <= t; ++row) {
      for (std::size_t v = 0; v < c.vocab_size; ++v) CHECK(base.at(row, v) == moved.at(row, v));
    }
  }
}

TEST_CASE("full model passes the gradient check") {
  const ModelConfig c = toy_config(2, 2, {1, 2});
  Model<double> model(c, 11);
  Rng rng(12);
  const auto doc = random_ids(rng, 5, c.vocab_size);
  auto summary = random_ids(rng, 3, c.vocab_size);
  summary.push_back(kEosId);

  std::vector<Tensor<double>> inputs;
  for (const auto& p : model.parameters()) inputs.push_back(p.value);
  auto fn = [&](Tape<double>& tape, std::span<const Var<double>> vars) {
    for (std::size_t i = 0; i < vars.size(); ++i) tape.bind(model.parameters()[i], vars[i]);
    return model.loss(tape, doc, summary, c.label_smoothing);
  };
  const auto result = grad_check(fn, inputs);
  CHECK(result.elements_checked == model.parameter_count());
  CHECK(result.max_relative_error < 1e-4);
}

TEST_CASE("determinism and checkpoint round trip") {
  const ModelConfig c = toy_config();
  const Model<float> a(c, 21);
  const Model<float> b(c, 21);
  const std::vector<TokenId> doc = {4, 5, 6, 7};
  const std::vector<TokenId> summary = {8, 9, kEosId};
  Tape<float> ta(false), tb(false);
  CHECK(bit_equal(a.forward(ta, doc, summary).value(), b.forward(tb, doc, summary).value()));

  std::stringstream buf;
  a.save(buf);
  CHECK(buf.str().substr(0, 4) == "MMN1");
  const Model<float> back = Model<float>::load(buf);
  CHECK(back.config() == c);
  Tape<float> tc(false);
  CHECK(bit_equal(a.forward(ta, doc, summary).value(), back.forward(tc, doc, summary).value()));

  std::stringstream bad_magic("XXXX");
  CHECK_THROWS_AS(Model<float>::load(bad_magic), CheckpointError);
  std::stringstream truncated(buf.str().substr(0, buf.str().size() - 3));
  CHECK_THROWS_AS(Model<float>::load(truncated), CheckpointError);

  // Same tensors under a config with a wider embedding fail shape validation.
  std::string bytes = buf.str();
  const std::string from = "\"d_emb\":4";
  const auto at = bytes.find(from);
  REQUIRE(at != std::string::npos);
  bytes.replace(at, from.size(), "\"d_emb\":6");
  std::stringstream reshaped(bytes);
  CHECK_THROWS_AS(Model<float>::load(reshaped), CheckpointError);
}

TEST_CASE("greedy decoding") {
  Model<float> model(toy_config(), 31);
  const std::vector<TokenId> doc = {4, 5, 6};
  auto& bias = model.parameter("b_o").value;
  bias[kEosId] = 1e3f;
  CHECK(model.greedy_decode(doc, 10).empty());
  bias[kEosId] = 0.0f;
  bias[7] = 1e3f;
  const auto out = model.greedy_decode(doc, 6);
  CHECK(out == std::vector<TokenId>(6, 7));
  CHECK_THROWS_AS(model.greedy_decode(doc, 0), std::invalid_argument);

  Rng rng(2);
  const Model<float> random_model(toy_config(), 32);
  for (int trial = 0; trial < 20; ++trial) {
    const auto ids = random_model.greedy_decode(random_ids(rng, 6, 12), 1 + rng.below(8));
    for (auto id : ids) {
      CHECK(id != kBosId);
      CHECK(id != kEosId);
    }
  }
}

TEST_CASE("padding is zero-embedded and masked") {
  const Model<double> model(toy_config(), 41);
  Tape<double> tape(false);
  const std::vector<TokenId> doc = {4, 5, kPadId, kPadId};
  const auto enc = model.encode(tape, doc);
  for (std::size_t c = 0; c < 4; ++c) CHECK(enc.layers[0].value().at(2, c) == 0.0);
  CHECK(enc.pad_mask()[2]);
  CHECK_FALSE(enc.pad_mask()[1]);
  CHECK_THROWS_AS(model.encode(tape, std::vector<TokenId>{kPadId}), std::invalid_argument);
}

TEST_CASE("pretrained embeddings") {
  ModelConfig c = toy_config();
  c.vocab_size = 6;
  Model<float> model(c, 51);
  const std::vector<std::vector<std::string>> corpus = {{"cat", "dog"}};
  const Vocabulary vocab = Vocabulary::build(corpus);
  REQUIRE(vocab.size() == 6);
  const auto dog_before = model.parameter("W_emb").value.row(vocab.id("dog"));
  const std::vector<float> dog_copy(dog_before.begin(), dog_before.end());

  std::stringstream file("2 4\ncat 0.5 -1 2 3\nbird 1 1 1 1\n");
  CHECK(model.load_pretrained_embeddings(file, vocab) == 1);
  const auto& table = model.parameter("W_emb").value;
  CHECK(table.at(vocab.id("cat"), 0) == 0.5f);
  CHECK(table.at(vocab.id("cat"), 3) == 3.0f);
  for (std::size_t i = 0; i < 4; ++i) CHECK(table.at(vocab.id("dog"), i) == dog_copy[i]);

  std::stringstream wide("cat 1 2 3 4 5 6\n");
  CHECK_THROWS_AS(model.load_pretrained_embeddings(wide, vocab), std::invalid_argument);
}
