// Prints one line per acceptance criterion and exits nonzero if any fails.

#include <chrono>
#include <cmath>
#include <cstdlib>
#include <cstring>
#include <functional>
#include <iomanip>
#include <iostream>
#include <sstream>

#include "mmn/analytics.hpp"
#include "mmn/dataset.hpp"
#include "mmn/ops.hpp"
#include "mmn/training.hpp"
#include "mmn/verification.hpp"
#include "oracles.hpp"

using namespace mmn;

namespace {

enum class Status { kPass, kFail, kSkip };

struct Verdict {
  Status status;
  std::string detail;
};

std::string fmt(double v, int precision = 3) {
  std::ostringstream s;
  s << std::setprecision(precision) << v;
  return s.str();
}

Verdict gradient_correctness() {
  const auto start = std::chrono::steady_clock::now();
  const auto outcomes = gradcheck_suite();
  const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  double worst = 0.0;
  std::string worst_name, failed;
  for (const auto& o : outcomes) {
    if (o.value >= worst) worst = o.value, worst_name = o.name;
    if (!o.passed) failed += " " + o.name + " (" + o.detail + ")";
  }
  const bool ok = failed.empty() && seconds < 120.0;
  std::string detail = std::to_string(outcomes.size()) + " checks incl. model composite, max rel err " + fmt(worst) +
                       " (" + worst_name + "), " + fmt(seconds) + " s";
  if (!failed.empty()) detail += "; failed:" + failed;
  return {ok ? Status::kPass : Status::kFail, detail};
}

Verdict receptive_fields() {
  ModelConfig plain;
  plain.encoder_layers = 6;
  plain.memory_layers = {6};
  plain.dilated = false;
  ModelConfig dilated;
  dilated.encoder_layers = 8;
  dilated.memory_layers = {4, 8};
  const std::size_t a = receptive_field(plain, 6), b = receptive_field(dilated, 4), c = receptive_field(dilated, 8);
  const auto local = locality_suite();
  const bool ok = a == 13 && b == 31 && c == 511 && local.passed;
  return {ok ? Status::kPass : Status::kFail, "plain L6 = " + std::to_string(a) + ", dilated L4 = " + std::to_string(b) +
                                                  ", dilated L8 = " + std::to_string(c) + "; " + local.detail};
}

Verdict causality() {
  const auto o = causality_suite(100);
  return {o.passed ? Status::kPass : Status::kFail, o.detail};
}

Verdict overfit() {
  const auto r = overfit_smoke(SmokeConfig{});
  const bool ok = r.passed && r.parameters <= 500000 && r.seconds < 300.0;
  return {ok ? Status::kPass : Status::kFail,
          std::to_string(r.exact) + "/" + std::to_string(r.pairs) + " exact, loss " + fmt(r.final_loss, 4) + " <= " +
              fmt(r.loss_target, 4) + " (1.05 x floor " + fmt(r.loss_floor, 4) + "), " + std::to_string(r.parameters) +
              " params, " + std::to_string(r.epochs) + " epochs, " + fmt(r.seconds) + " s"};
}

Verdict metric_oracles() {
  Rng rng(2024);
  std::size_t rouge_bad = 0, oracle_bad = 0, novel_bad = 0, novel_cases = 0;
  for (int trial = 0; trial < 100; ++trial) {
    const auto c = oracle::random_tokens(rng, 12, 5);
    const auto r = oracle::random_tokens(rng, 12, 5);
    for (std::size_t n = 1; n <= 2; ++n) rouge_bad += rouge_n(c, r, n).f1 != oracle::rouge_n_f1(c, r, n);
    rouge_bad += rouge_l(c, r).f1 != oracle::rouge_l_f1(c, r);
  }
  for (std::size_t sentences = 1; sentences <= 10; ++sentences) {
    for (int trial = 0; trial < 30; ++trial) {
      std::vector<TokenList> doc(sentences);
      for (auto& s : doc) {
        s = oracle::random_tokens(rng, 7, 5);
        if (s.empty()) s.push_back("z");
      }
      const auto ref = oracle::random_tokens(rng, 8, 5);
      const auto got = ext_oracle(doc, ref, 1);
      const auto want = oracle::best_sentence(doc, ref);
      oracle_bad += got.score != want.score || got.selected != std::vector<std::size_t>{want.index};
    }
  }
  while (novel_cases < 100) {
    const auto doc = oracle::random_tokens(rng, 12, 6);
    const auto ref = oracle::random_tokens(rng, 10, 6);
    const std::size_t n = 1 + rng.below(4);
    if (ref.size() < n) continue;
    ++novel_cases;
    novel_bad += novel_ngram_ratio(doc, ref, n) != oracle::novel_ratio(doc, ref, n);
  }
  const bool ok = rouge_bad == 0 && oracle_bad == 0 && novel_bad == 0;
  return {ok ? Status::kPass : Status::kFail,
          "ROUGE mismatches " + std::to_string(rouge_bad) + "/300, Ext-Oracle mismatches " + std::to_string(oracle_bad) +
              "/300 (1-10 sentences), novel ratio mismatches " + std::to_string(novel_bad) + "/100"};
}

Verdict constants() {
  const TrainConfig t;
  bool lr_ok = true;
  for (std::size_t e = 0; e < 50; ++e) {
    const double want = e < 4 ? 1e-3 : 1e-4;
    lr_ok = lr_ok && std::abs(lr_schedule(e, t) - want) < 1e-15;
  }
  double worst_mass = 0.0;
  for (std::size_t v : {4u, 64u, 15004u}) {
    for (double eps : {0.05, 0.1}) {
      const auto q = smoothed_target(0, eps, v);
      double mass = 0.0;
      for (double x : q) mass += x;
      worst_mass = std::max(worst_mass, std::abs(mass - (1.0 - eps / double(v))));
    }
  }
  const bool presets = profile("tifu-short").model.label_smoothing == 0.1 &&
                       profile("tifu-long").model.label_smoothing == 0.05 &&
                       profile("tifu-short").train.grad_clip == 0.3 && profile("tifu-long").train.grad_clip == 0.3 &&
                       profile("xsum").train.grad_clip == 0.8;
  const bool ok = lr_ok && worst_mass < 1e-9 && presets;
  return {ok ? Status::kPass : Status::kFail, std::string("lr 1e-3 x4 then 1e-4: ") + (lr_ok ? "yes" : "no") +
                                                  ", max |mass - (1 - eps/V)| = " + fmt(worst_mass) +
                                                  ", eps 0.1/0.05 and clip 0.3/0.8 presets: " + (presets ? "yes" : "no")};
}

Verdict tifu_corpus() {
  const char* path = std::getenv("MMN_TIFU_CORPUS");
  if (!path || !*path) return {Status::kSkip, "set MMN_TIFU_CORPUS to a JSONL corpus to run"};
  const auto posts = read_corpus(std::filesystem::path(path));
  struct Target {
    const char* name;
    CorpusProfile profile;
    double lead_r1, novel1;
  };
  bool ok = true;
  std::string detail;
  for (const Target& t : {Target{"short", short_corpus_profile(), 3.4, 29.7}, Target{"long", long_corpus_profile(), 2.8, 27.4}}) {
    std::vector<SummaryPair> pairs;
    for (const auto& post : posts) {
      auto tok = preprocess_post(post, t.profile);
      if (tok && within_caps(*tok, t.profile)) pairs.push_back({tok->document, tok->summary});
    }
    if (pairs.empty()) {
      ok = false;
      detail += std::string(t.name) + ": no posts; ";
      continue;
    }
    const auto report = bias_report(pairs);
    const bool pass = std::abs(report.lead.r1 - t.lead_r1) <= 0.5 && std::abs(report.novel_ngram_percent[0] - t.novel1) <= 2.0;
    ok = ok && pass;
    detail += std::string(t.name) + " (" + std::to_string(pairs.size()) + " posts): Lead-1 R-1 " + fmt(report.lead.r1) +
              " vs " + fmt(t.lead_r1) + ", novel 1-gram " + fmt(report.novel_ngram_percent[0]) + " vs " + fmt(t.novel1) +
              "; ";
  }
  return {ok ? Status::kPass : Status::kFail, detail};
}

Verdict determinism() {
  SmokeConfig sc;
  const auto data = smoke_fixture(sc);
  TrainConfig tc;
  tc.lr_init = tc.lr_floor = 3e-3;
  tc.batch_size = 1;
  tc.grad_clip = 1.0;
  tc.max_epochs = 3;
  auto run = [&] {
    Model<float> m(smoke_model_config(sc), 99);
    const auto r = train(m, data, tc);
    std::ostringstream bytes;
    m.save(bytes);
    return std::make_pair(bytes.str(), r.epoch_loss);
  };
  const auto a = run();
  const auto b = run();
  const bool rerun = a.first == b.first && a.second.size() == b.second.size() &&
                     std::memcmp(a.second.data(), b.second.data(), a.second.size() * sizeof(double)) == 0;

  std::istringstream in(a.first);
  const Model<float> loaded = Model<float>::load(in);
  Model<float> original(smoke_model_config(sc), 99);
  train(original, data, tc);
  bool logits_same = true;
  for (const auto& ex : data) {
    Tape<float> t1(false), t2(false);
    const auto& x = original.forward(t1, ex.document_ids, ex.summary_ids).value();
    const auto& y = loaded.forward(t2, ex.document_ids, ex.summary_ids).value();
    logits_same = logits_same && x.shape() == y.shape() &&
                  std::memcmp(x.data().data(), y.data().data(), x.size() * sizeof(float)) == 0;
  }
  std::ostringstream again;
  loaded.save(again);
  const bool ok = rerun && logits_same && again.str() == a.first;
  return {ok ? Status::kPass : Status::kFail, std::string("seeded rerun checkpoints identical: ") + (rerun ? "yes" : "no") +
                                                  ", loaded logits bit-identical: " + (logits_same ? "yes" : "no") +
                                                  ", resaved bytes identical: " + (again.str() == a.first ? "yes" : "no")};
}

}  // namespace

int main() {
  struct Criterion {
    const char* name;
    std::function<Verdict()> run;
  };
  const std::vector<Criterion> criteria = {
      {"gradient_correctness", gradient_correctness},
      {"receptive_fields", receptive_fields},
      {"causality", causality},
      {"overfit_harness", overfit},
      {"metric_oracles", metric_oracles},
      {"schedule_loss_constants", constants},
      {"tifu_corpus_statistics", tifu_corpus},
      {"checkpoint_and_rerun_determinism", determinism},
  };
  int failures = 0;
  for (const auto& c : criteria) {
    Verdict v;
    try {
      v = c.run();
    } catch (const std::exception& e) {
      v = {Status::kFail, std::string("threw: ") + e.what()};
    }
    const char* tag = v.status == Status::kPass ? "PASS" : v.status == Status::kFail ? "FAIL" : "SKIP";
    failures += v.status == Status::kFail;
    std::cout << tag << ' ' << c.name << ": " << v.detail << std::endl;
  }
  std::cout << "EXCLUDED full_training_results: full-scale training tables are not reproduced at desk scale; "
               "the property criteria above stand in for them"
            << std::endl;
  return failures == 0 ? 0 : 1;
}
