#include "mmn/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <ostream>

#include "json.hpp"
#include "mmn/analytics.hpp"
#include "mmn/optim.hpp"

namespace mmn {

using nlohmann::json;

void TrainConfig::validate() const {
  auto fail = [](const std::string& what) { throw std::invalid_argument("train config: " + what); };
  if (!(lr_init > 0.0)) fail("lr_init must be positive");
  if (!(lr_floor > 0.0) || lr_floor > lr_init) fail("lr_floor must lie in (0, lr_init]");
  if (lr_decay_every < 1) fail("lr_decay_every must be at least 1");
  if (!(lr_decay_factor >= 1.0)) fail("lr_decay_factor must be at least 1");
  if (!(grad_clip > 0.0)) fail("grad_clip must be positive");
  if (max_epochs < 1) fail("max_epochs must be at least 1");
  if (batch_size < 1) fail("batch_size must be at least 1");
}

std::string train_config_to_json(const TrainConfig& c) {
  return json{{"lr_init", c.lr_init},       {"lr_decay_every", c.lr_decay_every}, {"lr_decay_factor", c.lr_decay_factor},
              {"lr_floor", c.lr_floor},     {"grad_clip", c.grad_clip},           {"max_epochs", c.max_epochs},
              {"batch_size", c.batch_size}, {"seed", c.seed}}
      .dump();
}

TrainConfig train_config_from_json(std::string_view text, TrainConfig c) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw std::invalid_argument(std::string("train config is not valid JSON: ") + e.what());
  }
  if (!j.is_object()) throw std::invalid_argument("train config must be a JSON object");
  try {
    for (auto& [key, value] : j.items()) {
      if (key == "lr_init") c.lr_init = value.get<double>();
      else if (key == "lr_decay_every") c.lr_decay_every = value.get<std::size_t>();
      else if (key == "lr_decay_factor") c.lr_decay_factor = value.get<double>();
      else if (key == "lr_floor") c.lr_floor = value.get<double>();
      else if (key == "grad_clip") c.grad_clip = value.get<double>();
      else if (key == "max_epochs") c.max_epochs = value.get<std::size_t>();
      else if (key == "batch_size") c.batch_size = value.get<std::size_t>();
      else if (key == "seed") c.seed = value.get<std::uint64_t>();
      else throw std::invalid_argument("unknown train config key \"" + key + "\"");
    }
  } catch (const json::type_error& e) {
    throw std::invalid_argument(std::string("train config field has the wrong type: ") + e.what());
  }
  return c;
}

double lr_schedule(std::size_t epoch, const TrainConfig& config) {
  const double decays = static_cast<double>(epoch / config.lr_decay_every);
  return std::max(config.lr_init / std::pow(config.lr_decay_factor, decays), config.lr_floor);
}

const std::vector<std::string>& profile_names() {
  static const std::vector<std::string> names = {"tifu-short", "tifu-long", "newsroom-abs", "xsum"};
  return names;
}

Profile profile(std::string_view name) {
  Profile p;
  p.name = std::string(name);
  auto set = [&p](std::size_t enc, std::size_t dec, std::vector<std::size_t> mem, double eps, double clip,
                  std::size_t epochs, CorpusProfile corpus) {
    p.model.encoder_layers = enc;
    p.model.decoder_layers = dec;
    p.model.memory_layers = std::move(mem);
    p.model.label_smoothing = eps;
    p.train.grad_clip = clip;
    p.train.max_epochs = epochs;
    p.corpus = corpus;
  };
  if (name == "tifu-short") set(9, 3, {3, 6, 9}, 0.1, 0.3, 12, short_corpus_profile());
  else if (name == "tifu-long") set(8, 5, {4, 8}, 0.05, 0.3, 60, long_corpus_profile());
  else if (name == "newsroom-abs") set(10, 6, {3, 6, 10}, 0.05, 0.3, 12, long_corpus_profile());
  else if (name == "xsum") set(9, 6, {4, 7, 9}, 0.05, 0.8, 12, long_corpus_profile());
  else throw std::invalid_argument("unknown profile \"" + std::string(name) + "\"");
  return p;
}

TrainResult train(Model<float>& model, std::span<const Example> data, const TrainConfig& config,
                  const EpochCallback& on_epoch) {
  config.validate();
  if (data.empty()) throw std::invalid_argument("training set is empty");
  for (const auto& ex : data) {
    for (auto id : ex.document_ids) {
      if (id >= model.config().vocab_size) throw std::invalid_argument("example " + ex.id + " has an id outside the vocabulary");
    }
    for (auto id : ex.summary_ids) {
      if (id >= model.config().vocab_size) throw std::invalid_argument("example " + ex.id + " has an id outside the vocabulary");
    }
  }

  // The embedding table comes first, so the trainable set is always a suffix.
  std::span<Parameter<float>> trainable = model.parameters();
  if (!model.trainable(trainable.front())) trainable = trainable.subspan(1);
  AdamState<float> adam;
  Rng rng(config.seed);
  std::vector<std::size_t> order(data.size());
  TrainResult result;
  std::size_t step = 0;
  const double epsilon = model.config().label_smoothing;

  for (std::size_t epoch = 0; epoch < config.max_epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
    const double lr = lr_schedule(epoch, config);
    double epoch_sum = 0.0;
    std::size_t epoch_batches = 0;

    for (std::size_t begin = 0; begin < order.size(); begin += config.batch_size) {
      const std::size_t end = std::min(order.size(), begin + config.batch_size);
      const auto batch = static_cast<float>(end - begin);
      std::vector<Tensor<float>> grads;
      grads.reserve(trainable.size());
      for (const auto& p : trainable) grads.emplace_back(p.value.shape());
      double batch_loss = 0.0;
      for (std::size_t b = begin; b < end; ++b) {
        const Example& ex = data[order[b]];
        Tape<float> tape;
        try {
          const Var<float> loss = model.loss(tape, ex.document_ids, ex.summary_ids, epsilon);
          batch_loss += loss.value()[0];
          tape.backward(loss, Tensor<float>({1}, 1.0f / batch));
        } catch (const NumericError& e) {
          throw NumericError("training diverged at epoch " + std::to_string(epoch) + ", step " + std::to_string(step) +
                             " on example " + ex.id + ": " + e.what());
        }
        for (std::size_t i = 0; i < trainable.size(); ++i) {
          auto v = tape.find_param(trainable[i]);
          if (!v || !tape.has_grad(v->id())) continue;
          const auto& g = tape.grad(*v);
          for (std::size_t k = 0; k < g.size(); ++k) grads[i][k] += g[k];
        }
      }
      batch_loss /= static_cast<double>(end - begin);
      clip_gradients<float>(grads, config.grad_clip);

      adam_step<float>(trainable, grads, adam, lr);

      result.steps.push_back({epoch, step, lr, batch_loss});
      epoch_sum += batch_loss;
      ++epoch_batches;
      ++step;
    }
    result.epoch_loss.push_back(epoch_sum / static_cast<double>(epoch_batches));
    if (on_epoch && !on_epoch(epoch, result.epoch_loss.back())) break;
  }
  return result;
}

void write_loss_csv(std::ostream& out, const TrainResult& result) {
  out << "epoch,step,lr,loss\n";
  out.precision(9);
  for (const auto& s : result.steps) out << s.epoch << ',' << s.step << ',' << s.lr << ',' << s.loss << '\n';
}

namespace {

template <typename T>
void accumulate_nll(NllAccumulator& acc, const Tensor<T>& logits, std::span<const TokenId> targets) {
  if (logits.rank() != 2 || logits.dim(0) != targets.size()) throw ShapeError("logits rows must match targets");
  const std::size_t vocab = logits.dim(1);
  for (std::size_t t = 0; t < targets.size(); ++t) {
    if (targets[t] >= vocab) throw std::out_of_range("target id outside the vocabulary");
    double max = -INFINITY;
    for (std::size_t v = 0; v < vocab; ++v) max = std::max(max, double(logits.at(t, v)));
    double z = 0.0;
    for (std::size_t v = 0; v < vocab; ++v) z += std::exp(double(logits.at(t, v)) - max);
    acc.nll += std::log(z) + max - double(logits.at(t, targets[t]));
  }
  acc.tokens += targets.size();
}

}  // namespace

void NllAccumulator::add(const Tensor<float>& logits, std::span<const TokenId> targets) {
  accumulate_nll(*this, logits, targets);
}

void NllAccumulator::add(const Tensor<double>& logits, std::span<const TokenId> targets) {
  accumulate_nll(*this, logits, targets);
}

double NllAccumulator::perplexity() const {
  if (tokens == 0) throw std::invalid_argument("perplexity of an empty set");
  return std::exp(nll / static_cast<double>(tokens));
}

double perplexity(const Model<float>& model, std::span<const Example> data) {
  if (data.empty()) throw std::invalid_argument("perplexity of an empty set");
  NllAccumulator acc;
  for (const auto& ex : data) {
    Tape<float> tape(false);
    acc.add(model.forward(tape, ex.document_ids, ex.summary_ids).value(), ex.summary_ids);
  }
  return acc.perplexity();
}

double mean_smoothed_loss(const Model<float>& model, std::span<const Example> data) {
  if (data.empty()) throw std::invalid_argument("loss of an empty set");
  double total = 0.0;
  for (const auto& ex : data) {
    Tape<float> tape(false);
    total += model.loss(tape, ex.document_ids, ex.summary_ids, model.config().label_smoothing).value()[0];
  }
  return total / static_cast<double>(data.size());
}

double label_smoothing_floor(double epsilon, std::size_t vocab_size) {
  const auto q = smoothed_target(0, epsilon, vocab_size);
  const double z = std::accumulate(q.begin(), q.end(), 0.0);
  double floor = 0.0;
  for (double v : q) {
    if (v > 0.0) floor -= v * std::log(v / z);
  }
  return floor;
}

EvalReport evaluate(const Model<float>& model, std::span<const Example> data, std::size_t max_len) {
  if (data.empty()) throw std::invalid_argument("evaluation set is empty");
  auto as_tokens = [](std::span<const TokenId> ids) {
    TokenList out;
    for (auto id : ids) out.push_back(std::to_string(id));
    return out;
  };
  EvalReport report;
  report.examples = data.size();
  for (const auto& ex : data) {
    std::span<const TokenId> ref(ex.summary_ids);
    if (!ref.empty() && ref.back() == kEosId) ref = ref.first(ref.size() - 1);
    const auto hyp = model.greedy_decode(ex.document_ids, max_len);
    const auto h = as_tokens(hyp);
    const auto r = as_tokens(ref);
    report.rouge_1 += rouge_n(h, r, 1).f1;
    report.rouge_2 += rouge_n(h, r, 2).f1;
    report.rouge_l += rouge_l(h, r).f1;
    if (std::equal(hyp.begin(), hyp.end(), ref.begin(), ref.end())) ++report.exact_matches;
  }
  const double n = static_cast<double>(data.size());
  report.rouge_1 = 100.0 * report.rouge_1 / n;
  report.rouge_2 = 100.0 * report.rouge_2 / n;
  report.rouge_l = 100.0 * report.rouge_l / n;
  report.perplexity = perplexity(model, data);
  return report;
}

std::string eval_report_json(const EvalReport& r) {
  return json{{"examples", r.examples}, {"perplexity", r.perplexity}, {"rouge_1", r.rouge_1},
              {"rouge_2", r.rouge_2},   {"rouge_l", r.rouge_l},       {"exact_matches", r.exact_matches}}
      .dump(2);
}

std::vector<Example> smoke_fixture(const SmokeConfig& config) {
  if (config.vocab_size <= kReservedTokens + 1) throw std::invalid_argument("fixture vocabulary too small");
  Rng rng(config.seed);
  const std::size_t content = config.vocab_size - kReservedTokens;
  auto draw = [&](std::size_t n) {
    std::vector<TokenId> ids(n);
    for (auto& id : ids) id = static_cast<TokenId>(kReservedTokens + rng.below(content));
    return ids;
  };
  std::vector<Example> out;
  for (std::size_t i = 0; i < config.pairs; ++i) {
    Example ex;
    ex.id = "pair-" + std::to_string(i);
    ex.document_ids = draw(config.document_len);
    ex.summary_ids = draw(config.summary_len);
    ex.summary_ids.push_back(kEosId);
    out.push_back(std::move(ex));
  }
  if (config.shuffled_labels && out.size() > 1) {
    // Rotate summaries so each document gets another document's summary.
    std::vector<std::vector<TokenId>> summaries;
    for (const auto& ex : out) summaries.push_back(ex.summary_ids);
    for (std::size_t i = 0; i < out.size(); ++i) out[i].summary_ids = summaries[(i + 1) % out.size()];
  }
  return out;
}

ModelConfig smoke_model_config(const SmokeConfig& config) {
  ModelConfig m;
  m.d_emb = config.d_emb;
  m.vocab_size = config.vocab_size;
  m.encoder_layers = 3;
  m.decoder_layers = 2;
  m.memory_layers = {1, 3};
  m.label_smoothing = config.epsilon;
  m.max_document_len = std::max<std::size_t>(config.document_len, 1);
  return m;
}

SmokeResult overfit_smoke(const SmokeConfig& config) {
  const auto start = std::chrono::steady_clock::now();
  const auto data = smoke_fixture(config);
  Model<float> model(smoke_model_config(config), config.seed);

  TrainConfig tc;
  tc.lr_init = config.lr;
  tc.lr_floor = config.lr;
  tc.lr_decay_every = 1000000;
  tc.grad_clip = 1.0;
  tc.batch_size = 1;
  tc.max_epochs = config.max_epochs;
  tc.seed = config.seed;

  SmokeResult result;
  result.pairs = data.size();
  result.parameters = model.parameter_count();
  result.loss_floor = label_smoothing_floor(config.epsilon, config.vocab_size);
  result.loss_target = config.epsilon > 0.0 ? 1.05 * result.loss_floor : 0.05;
  const std::size_t needed = (15 * data.size() + 15) / 16;
  const std::size_t max_len = config.summary_len + 2;

  auto check = [&] {
    result.final_loss = mean_smoothed_loss(model, data);
    result.exact = 0;
    for (const auto& ex : data) {
      const auto out = model.greedy_decode(ex.document_ids, max_len);
      if (std::equal(out.begin(), out.end(), ex.summary_ids.begin(), ex.summary_ids.end() - 1)) ++result.exact;
    }
    result.passed = result.exact >= needed && result.final_loss <= result.loss_target;
    return result.passed;
  };

  const auto trained = train(model, data, tc, [&](std::size_t epoch, double) {
    result.epochs = epoch + 1;
    return (epoch + 1) % 5 != 0 || !check();
  });
  result.epoch_loss = trained.epoch_loss;
  check();
  result.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return result;
}

}  // namespace mmn
