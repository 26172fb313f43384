#include "cbert/bench.hpp"

#include <chrono>
#include <map>
#include <sstream>

#include "cbert/errors.hpp"

namespace cbert::bench {
namespace {

pretrain::SentencePair single(const Sentence& s) {
  pretrain::SentencePair p;
  p.words.emplace_back("[CLS]");
  p.words.insert(p.words.end(), s.begin(), s.end());
  p.words.emplace_back("[SEP]");
  p.segments.assign(p.words.size(), 0);
  p.is_next = true;
  return p;
}

double elapsed(std::chrono::steady_clock::time_point start) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

}  // namespace

std::string to_string(Phase phase) { return phase == Phase::kTrain ? "TRAIN" : "INFER"; }

LengthRow input_lengths(const Model<float>& model, const std::vector<Sentence>& sentences) {
  LengthRow row;
  row.mode = model.mode();
  double total = 0.0;
  for (const auto& s : sentences) {
    const auto p = single(s);
    const std::size_t n = model.prepare(p.words, p.segments).units.size();
    row.lengths.push_back(n);
    total += static_cast<double>(n);
  }
  row.mean = sentences.empty() ? 0.0 : total / static_cast<double>(sentences.size());
  return row;
}

BenchReport bench(const std::vector<const Model<float>*>& models,
                  const std::vector<Sentence>& sentences, const BenchOptions& options) {
  if (sentences.empty()) throw InputError("bench needs a non-empty workload");
  std::size_t words = 0;
  std::map<std::string, std::size_t> counts;
  for (const auto& s : sentences) {
    words += s.size();
    for (const auto& w : s) ++counts[w];
  }
  BenchReport report;
  for (const Model<float>* model : models) {
    const auto& config = model->config();
    if (!config.outputs.pretraining) throw ConfigError("bench models need pretraining heads");
    report.lengths.push_back(input_lengths(*model, sentences));

    const std::size_t k = model->mode() == FrontendMode::kCharacter ? config.mlm_vocab_size
                                                                    : counts.size();
    const auto targets = pretrain::MlmTargetVocab::from_counts(counts, k);
    Rng mask_rng(options.seed);
    std::vector<pretrain::PretrainInstance> instances;
    std::vector<ModelInput> inputs;
    for (const auto& s : sentences) {
      const auto p = single(s);
      instances.push_back(pretrain::apply_whole_word_masking(
          p, targets, options.masking, mask_rng, model->mode(), model->vocab().get()));
      inputs.push_back(model->prepare(p.words, p.segments));
    }
    std::size_t units = 0;
    for (const auto& in : inputs) units += in.units.size();

    // The model is only read; training gradients land in a private copy.
    Model<float> trainee = model->clone();
    Rng dropout_rng(options.seed + 1);
    for (Phase phase : {Phase::kTrain, Phase::kInfer}) {
      const auto start = std::chrono::steady_clock::now();
      for (std::size_t r = 0; r < options.repeats; ++r) {
        for (std::size_t i = 0; i < sentences.size(); ++i) {
          if (phase == Phase::kTrain) {
            pretrain::instance_loss(trainee, instances[i], ForwardMode{true, &dropout_rng})
                .backward();
            trainee.params().zero_grad();
          } else {
            model->forward(inputs[i]);
          }
        }
      }
      report.throughput.push_back({model->mode(), phase, sentences.size() * options.repeats,
                                   words * options.repeats, units * options.repeats,
                                   elapsed(start)});
    }
  }
  return report;
}

nlohmann::json BenchReport::to_json() const {
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& t : throughput) {
    rows.push_back({{"mode", cbert::to_string(t.mode)},
                    {"phase", to_string(t.phase)},
                    {"examples", t.examples},
                    {"words", t.words},
                    {"units", t.units},
                    {"seconds", t.seconds},
                    {"words_per_second", t.words_per_second()}});
  }
  nlohmann::json lens = nlohmann::json::array();
  for (const auto& l : lengths) {
    lens.push_back(
        {{"mode", cbert::to_string(l.mode)}, {"mean", l.mean}, {"lengths", l.lengths}});
  }
  return {{"throughput", rows}, {"input_lengths", lens}};
}

std::string BenchReport::to_tsv() const {
  std::ostringstream os;
  os.precision(6);
  os << "mode\tphase\texamples\twords\tunits\tseconds\twords_per_second\tmean_input_length\n";
  for (const auto& t : throughput) {
    double mean = 0.0;
    for (const auto& l : lengths) {
      if (l.mode == t.mode) mean = l.mean;
    }
    os << cbert::to_string(t.mode) << '\t' << to_string(t.phase) << '\t' << t.examples << '\t'
       << t.words << '\t' << t.units << '\t' << t.seconds << '\t' << t.words_per_second()
       << '\t' << mean << '\n';
  }
  return os.str();
}

}  // namespace cbert::bench
