#include "mmn/verification.hpp"

#include <array>
#include <cmath>
#include <functional>
#include <sstream>

#include "mmn/gradcheck.hpp"
#include "mmn/model.hpp"
#include "mmn/ops.hpp"
#include "mmn/optim.hpp"

namespace mmn {

namespace {

using In = std::span<const Var<double>>;

Tensor<double> uniform(const Shape& shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Tensor<double> t(shape);
  for (auto& v : t.values()) v = rng.uniform(lo, hi);
  return t;
}

Tensor<double> positive(const Shape& shape, Rng& rng) { return uniform(shape, rng, 0.5, 1.5); }

struct OpCase {
  std::string name;
  std::vector<Tensor<double>> inputs;
  GradCheckFn fn;
};

std::vector<OpCase> op_cases(Rng& rng) {
  const std::size_t n = 5, d = 4, e = 3;
  const std::vector<std::uint32_t> ids = {1, 3, 0, 2, 1};
  const std::vector<std::uint32_t> targets = {0, 2, 1, 2, 0};
  static constexpr std::array<bool, 5> mask = {false, false, true, false, false};
  const Tensor<double> weights = uniform({n, d}, rng);

  std::vector<OpCase> c;
  c.push_back({"add", {uniform({n, d}, rng), uniform({n, d}, rng)}, [](Tape<double>&, In in) { return add(in[0], in[1]); }});
  c.push_back({"mul", {uniform({n, d}, rng), uniform({n, d}, rng)}, [](Tape<double>&, In in) { return mul(in[0], in[1]); }});
  c.push_back({"scale", {uniform({n, d}, rng)}, [](Tape<double>&, In in) { return scale(in[0], 0.7); }});
  c.push_back({"tanh", {uniform({n, d}, rng, -2, 2)}, [](Tape<double>&, In in) { return tanh(in[0]); }});
  c.push_back({"sigmoid", {uniform({n, d}, rng, -3, 3)}, [](Tape<double>&, In in) { return sigmoid(in[0]); }});
  c.push_back({"add_row", {uniform({n, d}, rng), uniform({d}, rng)}, [](Tape<double>&, In in) { return add_row(in[0], in[1]); }});
  c.push_back({"reshape", {uniform({n, d}, rng)}, [](Tape<double>&, In in) { return reshape(tanh(in[0]), {d, n}); }});
  c.push_back({"matmul", {uniform({n, d}, rng), uniform({d, e}, rng)}, [](Tape<double>&, In in) { return matmul(in[0], in[1]); }});
  c.push_back({"matmul_transposed", {uniform({n, d}, rng), uniform({e, d}, rng)},
               [](Tape<double>&, In in) { return matmul_transposed(in[0], in[1]); }});
  c.push_back({"slice_rows", {uniform({n, d}, rng)}, [](Tape<double>&, In in) { return slice_rows(in[0], 1, 3); }});
  c.push_back({"concat_columns", {uniform({n, d}, rng), uniform({n, e}, rng)},
               [](Tape<double>&, In in) { return concat_columns(In(in.data(), 2)); }});
  c.push_back({"sum", {uniform({n, d}, rng)}, [](Tape<double>&, In in) { return sum(tanh(in[0])); }});
  c.push_back({"weighted_sum", {uniform({n, d}, rng)},
               [weights](Tape<double>&, In in) { return weighted_sum(in[0], weights); }});
  c.push_back({"embedding", {uniform({d, e}, rng)}, [ids](Tape<double>&, In in) { return embedding(in[0], ids, 0); }});
  for (auto padding : {Padding::kSame, Padding::kCausal}) {
    c.push_back({padding == Padding::kSame ? "dilated_conv1d" : "causal_dilated_conv1d",
                 {uniform({n, d}, rng), uniform({3, d, e}, rng), uniform({e}, rng)},
                 [padding](Tape<double>&, In in) { return dilated_conv1d(in[0], in[1], in[2], 2, padding); }});
  }
  c.push_back({"layer_norm", {uniform({n, d}, rng, -2, 2), positive({d}, rng), uniform({d}, rng)},
               [](Tape<double>&, In in) { return layer_norm(in[0], in[1], in[2]); }});
  c.push_back({"weight_norm", {uniform({3, d, e}, rng), positive({e}, rng)},
               [](Tape<double>&, In in) { return weight_norm(in[0], in[1]); }});
  c.push_back({"softmax", {uniform({n, d}, rng, -2, 2)}, [](Tape<double>&, In in) { return softmax(in[0]); }});
  c.push_back({"softmax_masked", {uniform({d, n}, rng, -2, 2)},
               [](Tape<double>&, In in) { return softmax(in[0], std::span<const bool>(mask)); }});
  c.push_back({"maxpool_time", {uniform({n, d}, rng)}, [](Tape<double>&, In in) { return maxpool_time(in[0]); }});
  c.push_back({"attend", {uniform({e, d}, rng), uniform({n, d}, rng), uniform({n, d}, rng)},
               [](Tape<double>&, In in) { return attend(in[0], in[1], in[2], std::span<const bool>(mask)); }});
  for (auto padding : {Padding::kSame, Padding::kCausal}) {
    c.push_back({padding == Padding::kSame ? "ngtu_block" : "ngtu_block_causal",
                 {uniform({n, d}, rng), uniform({3, d, d}, rng), positive({d}, rng), uniform({d}, rng),
                  uniform({3, d, d}, rng), positive({d}, rng), uniform({d}, rng), positive({d}, rng), uniform({d}, rng)},
                 [padding](Tape<double>&, In in) {
                   return ngtu_block(in[0], {in[1], in[2], in[3]}, {in[4], in[5], in[6]}, {in[7], in[8]}, 2, padding);
                 }});
  }
  for (double eps : {0.0, 0.1}) {
    c.push_back({eps == 0.0 ? "cross_entropy" : "label_smoothed_loss", {uniform({n, e}, rng, -2, 2)},
                 [targets, eps](Tape<double>&, In in) { return label_smoothed_loss(in[0], targets, eps); }});
  }
  return c;
}

ModelConfig toy_config(std::size_t enc, std::size_t dec, std::vector<std::size_t> memory) {
  ModelConfig c;
  c.d_emb = 4;
  c.vocab_size = 12;
  c.encoder_layers = enc;
  c.decoder_layers = dec;
  c.memory_layers = std::move(memory);
  c.label_smoothing = 0.1;
  return c;
}

std::vector<TokenId> random_ids(Rng& rng, std::size_t n, std::size_t vocab) {
  std::vector<TokenId> ids(n);
  for (auto& id : ids) id = static_cast<TokenId>(kReservedTokens + rng.below(vocab - kReservedTokens));
  return ids;
}

std::string format_error(double v) {
  std::ostringstream s;
  s.precision(3);
  s << std::scientific << v;
  return s.str();
}

}  // namespace

std::vector<CheckOutcome> gradcheck_suite(std::uint64_t seed, double tolerance) {
  std::vector<CheckOutcome> out;
  Rng rng(seed);
  auto run = [&](const std::string& name, const GradCheckFn& fn, std::span<const Tensor<double>> inputs) {
    CheckOutcome o{name, false, 0.0, tolerance, ""};
    try {
      const auto r = grad_check(fn, inputs);
      o.value = r.max_relative_error;
      o.passed = r.max_relative_error < tolerance;
      o.detail = std::to_string(r.elements_checked) + " elements, max relative error " + format_error(o.value);
    } catch (const std::exception& e) {
      o.value = INFINITY;
      o.detail = e.what();
    }
    out.push_back(std::move(o));
  };
  for (auto& c : op_cases(rng)) run(c.name, c.fn, c.inputs);

  const ModelConfig config = toy_config(2, 2, {1, 2});
  const Model<double> model(config, seed);
  const auto document = random_ids(rng, 6, config.vocab_size);
  auto summary = random_ids(rng, 3, config.vocab_size);
  summary.push_back(kEosId);
  std::vector<Tensor<double>> inputs;
  for (const auto& p : model.parameters()) inputs.push_back(p.value);
  run("model_composite",
      [&](Tape<double>& tape, In vars) {
        for (std::size_t i = 0; i < vars.size(); ++i) tape.bind(model.parameters()[i], vars[i]);
        return model.loss(tape, document, summary, config.label_smoothing);
      },
      inputs);
  return out;
}

CheckOutcome causality_suite(std::size_t cases, std::uint64_t seed) {
  Rng rng(seed);
  std::size_t violations = 0;
  std::size_t compared = 0;
  for (std::size_t trial = 0; trial < cases; ++trial) {
    const ModelConfig c = toy_config(2, 1 + rng.below(3), {1, 2});
    const Model<float> model(c, seed * 1000 + trial);
    const auto doc = random_ids(rng, 3 + rng.below(8), c.vocab_size);
    auto summary = random_ids(rng, 2 + rng.below(8), c.vocab_size);
    const std::size_t t = rng.below(summary.size() - 1);
    Tape<float> before_tape(false);
    const Tensor<float> before = model.forward(before_tape, doc, summary).value();
    for (std::size_t tp = t; tp < summary.size(); ++tp) {
      summary[tp] = static_cast<TokenId>(kReservedTokens + rng.below(c.vocab_size - kReservedTokens));
    }
    Tape<float> after_tape(false);
    const Tensor<float> after = model.forward(after_tape, doc, summary).value();
    // Logit row r predicts summary[r] from inputs BOS, summary[0..r-1].
    for (std::size_t row = 0; row <= t; ++row) {
      for (std::size_t v = 0; v < c.vocab_size; ++v) {
        ++compared;
        if (before.at(row, v) != after.at(row, v)) ++violations;
      }
    }
  }
  CheckOutcome o{"decoder_causality", violations == 0, static_cast<double>(violations), 0.0, ""};
  o.detail = std::to_string(cases) + " cases, " + std::to_string(compared) + " logits compared, " +
             std::to_string(violations) + " changed";
  return o;
}

CheckOutcome locality_suite(std::uint64_t seed) {
  std::size_t violations = 0;
  std::size_t checked = 0;
  for (bool dilated : {true, false}) {
    ModelConfig c = toy_config(4, 1, {4});
    c.dilated = dilated;
    const Model<double> model(c, seed);
    Rng rng(seed + 1);
    const auto doc = random_ids(rng, 40, c.vocab_size);
    for (std::size_t l = 1; l <= c.encoder_layers; ++l) {
      const std::size_t radius = (receptive_field(c, l) - 1) / 2;
      for (std::size_t i : {std::size_t{0}, std::size_t{17}, std::size_t{39}}) {
        Tape<double> tape;
        const auto enc = model.encode(tape, doc);
        Tensor<double> seed_grad(enc.layers[l].shape());
        for (std::size_t ch = 0; ch < c.d_emb; ++ch) seed_grad.at(i, ch) = 1.0 + static_cast<double>(ch);
        tape.backward(enc.layers[l], seed_grad);
        const auto& g = tape.grad(enc.layers[0]);
        for (std::size_t j = 0; j < doc.size(); ++j) {
          double mag = 0.0;
          for (std::size_t ch = 0; ch < c.d_emb; ++ch) mag += std::abs(g.at(j, ch));
          const std::size_t dist = i > j ? i - j : j - i;
          ++checked;
          if (dist > radius && mag != 0.0) ++violations;
          if (dist == radius && mag == 0.0) ++violations;
        }
      }
    }
  }
  CheckOutcome o{"encoder_locality", violations == 0, static_cast<double>(violations), 0.0, ""};
  o.detail = std::to_string(checked) + " gradient rows checked against the receptive-field radius, " +
             std::to_string(violations) + " disagreements";
  return o;
}

}  // namespace mmn
