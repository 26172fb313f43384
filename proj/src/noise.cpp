#include "cbert/noise.hpp"

#include <map>
#include <sstream>
#include <tuple>

#include "cbert/errors.hpp"
#include "cbert/text.hpp"

namespace cbert::noise {
namespace {

constexpr std::size_t kAlphabet = 26;

std::string join(const std::vector<std::string>& chars) {
  std::string out;
  for (const auto& c : chars) out += c;
  return out;
}

std::vector<std::string> perturb_words(const std::vector<std::string>& words, double level,
                                       Rng& rng, PerturbStats* stats) {
  std::vector<std::string> out;
  out.reserve(words.size());
  for (const auto& w : words) {
    const bool hit = rng.bernoulli(level) && !w.empty();
    out.push_back(hit ? perturb_token(w, rng) : w);
    if (stats) {
      ++stats->tokens;
      stats->perturbed += hit;
    }
  }
  return out;
}

finetune::Dataset noisy_splits(const finetune::Dataset& data, double level, Rng& rng,
                               bool all_splits) {
  finetune::Dataset out;
  if (all_splits) {
    out.train = perturb_examples(data.train, level, rng);
    out.validation = perturb_examples(data.validation, level, rng);
  }
  out.test = perturb_examples(data.test, level, rng);
  return out;
}

}  // namespace

std::string to_string(EditKind kind) {
  switch (kind) {
    case EditKind::kDelete: return "delete";
    case EditKind::kInsert: return "insert";
    case EditKind::kReplace: return "replace";
    case EditKind::kSwap: return "swap";
  }
  return "delete";
}

std::string apply_edit(const std::string& token, const Edit& edit) {
  auto chars = utf8_chars(token);
  const std::size_t n = chars.size();
  const std::size_t limit = edit.kind == EditKind::kInsert ? n + 1
                            : edit.kind == EditKind::kSwap ? (n < 2 ? 0 : n - 1)
                                                           : n;
  if (edit.position >= limit) {
    throw IndexError(to_string(edit.kind) + " at " + std::to_string(edit.position) +
                     " does not fit a token of " + std::to_string(n) + " characters");
  }
  const std::string letter(1, edit.letter);
  switch (edit.kind) {
    case EditKind::kDelete:
      chars.erase(chars.begin() + static_cast<long>(edit.position));
      break;
    case EditKind::kInsert:
      chars.insert(chars.begin() + static_cast<long>(edit.position), letter);
      break;
    case EditKind::kReplace:
      chars[edit.position] = letter;
      break;
    case EditKind::kSwap:
      std::swap(chars[edit.position], chars[edit.position + 1]);
      break;
  }
  return join(chars);
}

Edit sample_edit(const std::string& token, Rng& rng) {
  const auto chars = utf8_chars(token);
  const std::size_t n = chars.size();
  if (n == 0) throw InputError("cannot perturb an empty token");
  static const EditKind kAll[] = {EditKind::kDelete, EditKind::kInsert, EditKind::kReplace,
                                  EditKind::kSwap};
  static const EditKind kShort[] = {EditKind::kInsert, EditKind::kReplace};
  Edit e;
  e.kind = n == 1 ? kShort[rng.index(2)] : kAll[rng.index(4)];
  switch (e.kind) {
    case EditKind::kDelete:
    case EditKind::kReplace:
      e.position = rng.index(n);
      break;
    case EditKind::kInsert:
      e.position = rng.index(n + 1);
      break;
    case EditKind::kSwap:
      e.position = rng.index(n - 1);
      break;
  }
  if (e.kind == EditKind::kInsert) {
    e.letter = static_cast<char>('a' + rng.index(kAlphabet));
  } else if (e.kind == EditKind::kReplace) {
    const std::string& old = chars[e.position];
    const bool is_letter = old.size() == 1 && old[0] >= 'a' && old[0] <= 'z';
    if (is_letter) {
      // Draw from the 25 other letters.
      std::size_t k = rng.index(kAlphabet - 1);
      if (k >= static_cast<std::size_t>(old[0] - 'a')) ++k;
      e.letter = static_cast<char>('a' + k);
    } else {
      e.letter = static_cast<char>('a' + rng.index(kAlphabet));
    }
  }
  return e;
}

std::string perturb_token(const std::string& token, Rng& rng) {
  return apply_edit(token, sample_edit(token, rng));
}

std::string to_string(NoiseScope scope) {
  return scope == NoiseScope::kTestOnly ? "test_only" : "all_splits";
}

NoiseScope parse_noise_scope(const std::string& text) {
  if (text == "test_only" || text == "TEST_ONLY") return NoiseScope::kTestOnly;
  if (text == "all_splits" || text == "ALL_SPLITS") return NoiseScope::kAllSplits;
  throw ConfigError("unknown noise scope '" + text + "'");
}

void NoiseConfig::validate() const {
  if (!(level >= 0.0 && level <= 1.0)) {
    throw ConfigError("noise level " + std::to_string(level) + " is outside [0, 1]");
  }
}

std::vector<finetune::TaskExample> perturb_examples(
    const std::vector<finetune::TaskExample>& examples, double level, Rng& rng,
    PerturbStats* stats) {
  NoiseConfig{level}.validate();
  std::vector<finetune::TaskExample> out;
  out.reserve(examples.size());
  for (const auto& ex : examples) {
    finetune::TaskExample noisy = ex;
    noisy.tokens_a = perturb_words(ex.tokens_a, level, rng, stats);
    noisy.tokens_b = perturb_words(ex.tokens_b, level, rng, stats);
    out.push_back(std::move(noisy));
  }
  return out;
}

RobustnessReport robustness_curve(const std::vector<CurveModel>& models,
                                  const finetune::TaskSpec& task,
                                  const finetune::Dataset& data,
                                  const std::vector<double>& levels, NoiseScope scope,
                                  const std::vector<std::uint64_t>& seeds,
                                  std::uint64_t noise_seed) {
  for (double level : levels) NoiseConfig{level, scope, noise_seed}.validate();
  if (data.test.empty()) throw DataError("robustness curves need a test split");
  const auto gold = finetune::gold_predictions(task, data.test);
  RobustnessReport report;
  Rng noise_root(noise_seed);
  for (std::uint64_t seed : seeds) {
    Rng seed_rng = noise_root.split();
    std::vector<finetune::Dataset> noisy;
    for (double level : levels) {
      Rng level_rng = seed_rng.split();
      noisy.push_back(noisy_splits(data, level, level_rng, scope == NoiseScope::kAllSplits));
    }
    for (const auto& m : models) {
      const auto clean = m.train(data, seed);
      const double clean_score = finetune::compute_metric(
          task, finetune::predict(clean.model, task, data.test), gold);
      for (std::size_t i = 0; i < levels.size(); ++i) {
        double score = 0.0;
        if (scope == NoiseScope::kTestOnly) {
          score = finetune::compute_metric(
              task, finetune::predict(clean.model, task, noisy[i].test), gold);
        } else {
          const auto retrained = m.train(noisy[i], seed);
          score = finetune::compute_metric(
              task, finetune::predict(retrained.model, task, noisy[i].test), gold);
        }
        report.rows.push_back({m.name, scope, levels[i], seed, clean_score, score});
      }
    }
  }
  return report;
}

std::string RobustnessReport::rows_tsv() const {
  std::ostringstream os;
  os.precision(6);
  os << "model\tscope\tlevel\tseed\tclean_score\tscore\tdrop\n";
  for (const auto& r : rows) {
    os << r.model << '\t' << to_string(r.scope) << '\t' << r.level << '\t' << r.seed << '\t'
       << r.clean_score << '\t' << r.score << '\t' << r.drop() << '\n';
  }
  return os.str();
}

std::string RobustnessReport::summary_tsv() const {
  struct Acc {
    std::size_t n = 0;
    double score = 0.0;
    double drop = 0.0;
  };
  std::vector<std::tuple<std::string, NoiseScope, double>> order;
  std::map<std::tuple<std::string, NoiseScope, double>, Acc> acc;
  for (const auto& r : rows) {
    const auto key = std::make_tuple(r.model, r.scope, r.level);
    if (!acc.contains(key)) order.push_back(key);
    auto& a = acc[key];
    ++a.n;
    a.score += r.score;
    a.drop += r.drop();
  }
  std::ostringstream os;
  os.precision(6);
  os << "model\tscope\tlevel\tseeds\tmean_score\tmean_drop\n";
  for (const auto& key : order) {
    const auto& a = acc.at(key);
    os << std::get<0>(key) << '\t' << to_string(std::get<1>(key)) << '\t' << std::get<2>(key)
       << '\t' << a.n << '\t' << a.score / double(a.n) << '\t' << a.drop / double(a.n) << '\n';
  }
  return os.str();
}

nlohmann::json RobustnessReport::to_json() const {
  nlohmann::json out = nlohmann::json::array();
  for (const auto& r : rows) {
    out.push_back({{"model", r.model},
                   {"scope", to_string(r.scope)},
                   {"level", r.level},
                   {"seed", r.seed},
                   {"clean_score", r.clean_score},
                   {"score", r.score},
                   {"drop", r.drop()}});
  }
  return out;
}

}  // namespace cbert::noise
