#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "mmn/dataset.hpp"
#include "mmn/model.hpp"

namespace mmn {

struct TrainConfig {
  double lr_init = 1e-3;
  std::size_t lr_decay_every = 4;  // epochs
  double lr_decay_factor = 10.0;
  double lr_floor = 1e-4;
  double grad_clip = 0.3;
  std::size_t max_epochs = 12;
  std::size_t batch_size = 16;
  std::uint64_t seed = 13;

  void validate() const;  // throws std::invalid_argument
};

std::string train_config_to_json(const TrainConfig& config);
TrainConfig train_config_from_json(std::string_view text, TrainConfig base = {});

// max(lr_init / factor^floor(epoch / every), lr_floor)
double lr_schedule(std::size_t epoch, const TrainConfig& config);

// Named presets bundling corpus, model and optimizer settings.
struct Profile {
  std::string name;
  CorpusProfile corpus;
  ModelConfig model;
  TrainConfig train;
};

const std::vector<std::string>& profile_names();
Profile profile(std::string_view name);  // throws std::invalid_argument for unknown names

struct StepRecord {
  std::size_t epoch = 0;
  std::size_t step = 0;
  double lr = 0.0;
  double loss = 0.0;
};

struct TrainResult {
  std::vector<StepRecord> steps;
  std::vector<double> epoch_loss;  // mean smoothed loss per epoch
};

// Called after each epoch with its index and mean loss; return false to stop.
using EpochCallback = std::function<bool(std::size_t epoch, double mean_loss)>;

// Teacher-forced training with label smoothing, global-norm clipping and Adam.
// Each batch averages per-example gradients. Throws NumericError on divergence.
TrainResult train(Model<float>& model, std::span<const Example> data, const TrainConfig& config,
                  const EpochCallback& on_epoch = {});

void write_loss_csv(std::ostream& out, const TrainResult& result);

// Accumulates true (unsmoothed) negative log-likelihood over target tokens.
struct NllAccumulator {
  double nll = 0.0;
  std::size_t tokens = 0;
  void add(const Tensor<float>& logits, std::span<const TokenId> targets);
  void add(const Tensor<double>& logits, std::span<const TokenId> targets);
  double perplexity() const;  // throws when no tokens were added
};

double perplexity(const Model<float>& model, std::span<const Example> data);

// Mean smoothed loss under teacher forcing at the model's epsilon.
double mean_smoothed_loss(const Model<float>& model, std::span<const Example> data);

// -sum_y q(y) log(q(y) / Z): the smallest achievable smoothed loss per token,
// reached when p = q / Z with Z = 1 - eps / V.
double label_smoothing_floor(double epsilon, std::size_t vocab_size);

struct EvalReport {
  std::size_t examples = 0;
  double perplexity = 0.0;
  double rouge_1 = 0.0;  // 0-100
  double rouge_2 = 0.0;
  double rouge_l = 0.0;
  std::size_t exact_matches = 0;
};

// Greedy-decodes each document and scores it against the summary without EOS.
EvalReport evaluate(const Model<float>& model, std::span<const Example> data, std::size_t max_len);
std::string eval_report_json(const EvalReport& report);

struct SmokeConfig {
  std::size_t pairs = 16;
  std::size_t vocab_size = 64;
  std::size_t document_len = 12;
  std::size_t summary_len = 4;
  std::size_t d_emb = 32;
  double epsilon = 0.1;
  bool shuffled_labels = false;
  std::size_t max_epochs = 150;
  double lr = 3e-3;
  std::uint64_t seed = 13;
};

struct SmokeResult {
  bool passed = false;
  std::size_t exact = 0;
  std::size_t pairs = 0;
  double final_loss = 0.0;
  double loss_floor = 0.0;
  double loss_target = 0.0;
  std::size_t epochs = 0;
  std::size_t parameters = 0;
  double seconds = 0.0;
  std::vector<double> epoch_loss;
};

std::vector<Example> smoke_fixture(const SmokeConfig& config);
ModelConfig smoke_model_config(const SmokeConfig& config);
// Trains on the fixture until every criterion holds or the epoch budget runs
// out. Passing needs >= 15/16 exact greedy reproductions and a final smoothed
// loss <= 1.05 x floor (or < 0.05 when epsilon is 0).
SmokeResult overfit_smoke(const SmokeConfig& config);

}  // namespace mmn
