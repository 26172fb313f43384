#include "cbert/finetune.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <set>
#include <sstream>

#include "cbert/chartok.hpp"
#include "cbert/errors.hpp"
#include "cbert/io.hpp"
#include "cbert/pretrain.hpp"
#include "cbert/text.hpp"

namespace cbert::finetune {
namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

std::vector<std::string> split_tabs(std::string_view line) {
  std::vector<std::string> out;
  std::size_t pos = 0;
  while (true) {
    const std::size_t tab = line.find('\t', pos);
    out.emplace_back(line.substr(pos, tab == std::string_view::npos ? tab : tab - pos));
    if (tab == std::string_view::npos) break;
    pos = tab + 1;
  }
  return out;
}

std::vector<std::string_view> lines_of(std::string_view text) {
  std::vector<std::string_view> lines;
  std::size_t pos = 0;
  while (pos < text.size()) {
    std::size_t end = text.find('\n', pos);
    if (end == std::string_view::npos) end = text.size();
    std::string_view line = text.substr(pos, end - pos);
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    lines.push_back(line);
    pos = end + 1;
  }
  return lines;
}

double f1(std::size_t tp, std::size_t predicted, std::size_t gold) {
  if (predicted == 0 && gold == 0) return 1.0;
  if (predicted == 0 || gold == 0 || tp == 0) return 0.0;
  const double p = static_cast<double>(tp) / static_cast<double>(predicted);
  const double r = static_cast<double>(tp) / static_cast<double>(gold);
  return 2.0 * p * r / (p + r);
}

std::vector<std::string> tag_names(const TaskSpec& task, const std::vector<std::size_t>& ids) {
  std::vector<std::string> out;
  out.reserve(ids.size());
  for (std::size_t id : ids) out.push_back(task.labels.at(id));
  return out;
}

template <typename T>
std::size_t argmax_row(const Tensor<T>& t, std::size_t r) {
  std::size_t best = 0;
  for (std::size_t c = 1; c < t.cols(); ++c) {
    if (t(r, c) > t(r, best)) best = c;
  }
  return best;
}

template <typename T>
ModelInput example_input(const Model<T>& model, const TaskSpec& task,
                         const TaskExample& ex) {
  if (task.kind == TaskKind::kTokenTag) {
    TaskExample single = ex;
    single.tokens_b.clear();
    auto [words, segments] = model_words(single, std::numeric_limits<std::size_t>::max());
    return model.prepare(words, segments);  // LengthError when too long
  }
  // Trim by words until the unit count fits.
  std::size_t max_words = model.config().max_positions;
  while (true) {
    auto [words, segments] = model_words(ex, max_words);
    try {
      return model.prepare(words, segments);
    } catch (const LengthError&) {
      if (words.size() <= 5) throw;
      max_words = words.size() - 1;
    }
  }
}

std::vector<std::size_t> word_rows(const TaskExample& ex) {
  std::vector<std::size_t> rows(ex.tokens_a.size());
  for (std::size_t i = 0; i < rows.size(); ++i) rows[i] = i + 1;  // skip [CLS]
  return rows;
}

template <typename T>
Var<T> task_output(const Model<T>& model, const TaskSpec& task, const TaskExample& ex,
                   const ModelInput& in, ForwardMode mode) {
  const Var<T> enc = model.forward(in, mode);
  switch (task.kind) {
    case TaskKind::kTokenTag:
      return model.head(enc, in, Head::kTokenTag, word_rows(ex), mode);
    case TaskKind::kPairClass:
      return model.head(enc, in, Head::kPairClass, {}, mode);
    case TaskKind::kPairScore:
      return model.head(enc, in, Head::kPairScore, {}, mode);
    case TaskKind::kNone:
      break;
  }
  throw ConfigError("task has no output kind");
}

struct TrainItem {
  ModelInput input;
  std::vector<std::size_t> targets;
  double score = 0.0;
};

double safe_metric(const TaskSpec& task, const Predictions& p, const Predictions& g) {
  try {
    return compute_metric(task, p, g);
  } catch (const NumericError&) {
    return kNaN;
  }
}

}  // namespace

std::string to_string(Metric metric) {
  switch (metric) {
    case Metric::kSpanF1: return "span_f1";
    case Metric::kAccuracy: return "accuracy";
    case Metric::kPositiveMicroF1: return "positive_micro_f1";
    case Metric::kPearson: return "pearson";
  }
  return "accuracy";
}

Metric parse_metric(const std::string& text) {
  for (Metric m : {Metric::kSpanF1, Metric::kAccuracy, Metric::kPositiveMicroF1,
                   Metric::kPearson}) {
    if (to_string(m) == text) return m;
  }
  throw ConfigError("unknown metric '" + text + "'");
}

void TaskSpec::validate() const {
  switch (kind) {
    case TaskKind::kTokenTag:
      if (metric != Metric::kSpanF1) throw ConfigError("token tagging uses span_f1");
      if (labels.empty()) throw ConfigError("token tagging needs its tag set");
      for (const auto& l : labels) {
        if (l != "O" && !(l.size() > 2 && (l[0] == 'B' || l[0] == 'I') && l[1] == '-')) {
          throw ConfigError("tag '" + l + "' is not a BIO tag");
        }
      }
      break;
    case TaskKind::kPairClass:
      if (metric != Metric::kAccuracy && metric != Metric::kPositiveMicroF1) {
        throw ConfigError("pair classification uses accuracy or positive_micro_f1");
      }
      if (labels.size() < 2) throw ConfigError("pair classification needs two labels");
      if (metric == Metric::kPositiveMicroF1 &&
          std::find(labels.begin(), labels.end(), negative_label) == labels.end()) {
        throw ConfigError("negative label '" + negative_label + "' is not declared");
      }
      break;
    case TaskKind::kPairScore:
      if (metric != Metric::kPearson) throw ConfigError("pair scoring uses pearson");
      if (!labels.empty()) throw ConfigError("pair scoring takes no labels");
      break;
    case TaskKind::kNone:
      throw ConfigError("task kind must be token_tag, pair_class or pair_score");
  }
  std::set<std::string> unique(labels.begin(), labels.end());
  if (unique.size() != labels.size()) throw ConfigError("duplicate labels");
}

std::size_t TaskSpec::label_id(const std::string& label) const {
  auto it = std::find(labels.begin(), labels.end(), label);
  if (it == labels.end()) {
    throw DataError("label '" + label + "' is not declared by task " + name);
  }
  return static_cast<std::size_t>(it - labels.begin());
}

std::size_t TaskSpec::num_outputs() const {
  return kind == TaskKind::kPairScore ? 1 : labels.size();
}

nlohmann::json TaskSpec::to_json() const {
  return {{"name", name},
          {"kind", cbert::to_string(kind)},
          {"labels", labels},
          {"metric", to_string(metric)},
          {"negative_label", negative_label}};
}

TaskSpec TaskSpec::from_json(const nlohmann::json& j) {
  TaskSpec t;
  try {
    t.name = j.value("name", "");
    t.kind = parse_task_kind(j.at("kind").get<std::string>());
    t.labels = j.value("labels", std::vector<std::string>{});
    if (j.contains("metric")) {
      t.metric = parse_metric(j.at("metric").get<std::string>());
    } else {
      t.metric = t.kind == TaskKind::kTokenTag   ? Metric::kSpanF1
                 : t.kind == TaskKind::kPairScore ? Metric::kPearson
                                                  : Metric::kAccuracy;
    }
    t.negative_label = j.value("negative_label", "");
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("task spec: ") + e.what());
  }
  t.validate();
  return t;
}

std::vector<TaskExample> parse_conll(const std::string& text) {
  std::vector<TaskExample> out;
  TaskExample current;
  std::size_t line_no = 0;
  for (std::string_view line : lines_of(text)) {
    ++line_no;
    if (strip(line).empty()) {
      if (!current.tokens_a.empty()) out.push_back(std::move(current));
      current = TaskExample{};
      continue;
    }
    const auto fields = split_tabs(line);
    if (fields.size() != 2 || strip(fields[0]).empty() || strip(fields[1]).empty()) {
      throw DataError("line " + std::to_string(line_no) + ": expected token<TAB>tag");
    }
    current.tokens_a.push_back(to_lower(strip(fields[0])));
    current.tags.emplace_back(strip(fields[1]));
  }
  if (!current.tokens_a.empty()) out.push_back(std::move(current));
  return out;
}

std::vector<TaskExample> parse_pair_tsv(const std::string& text, TaskKind kind) {
  if (kind != TaskKind::kPairClass && kind != TaskKind::kPairScore) {
    throw ConfigError("pair TSV holds pair_class or pair_score data");
  }
  std::vector<TaskExample> out;
  std::size_t line_no = 0;
  for (std::string_view line : lines_of(text)) {
    ++line_no;
    if (strip(line).empty()) continue;
    const auto fields = split_tabs(line);
    const std::string where = "line " + std::to_string(line_no) + ": ";
    if (fields.size() != 3) throw DataError(where + "expected text_a<TAB>text_b<TAB>label");
    TaskExample ex;
    ex.tokens_a = split_words(fields[0]);
    ex.tokens_b = split_words(fields[1]);
    if (ex.tokens_a.empty()) throw DataError(where + "empty text_a");
    const std::string last(strip(fields[2]));
    if (kind == TaskKind::kPairClass) {
      if (last.empty()) throw DataError(where + "empty label");
      ex.label = last;
    } else {
      std::size_t used = 0;
      try {
        ex.score = std::stod(last, &used);
      } catch (const std::exception&) {
        used = 0;
      }
      if (used == 0 || used != last.size() || !std::isfinite(ex.score)) {
        throw DataError(where + "score '" + last + "' is not a finite number");
      }
    }
    out.push_back(std::move(ex));
  }
  return out;
}

std::vector<TaskExample> read_examples(const std::filesystem::path& path, TaskKind kind) {
  const std::string text = read_file(path);
  return kind == TaskKind::kTokenTag ? parse_conll(text) : parse_pair_tsv(text, kind);
}

std::string format_conll(const std::vector<TaskExample>& examples) {
  std::ostringstream os;
  for (std::size_t i = 0; i < examples.size(); ++i) {
    if (i > 0) os << '\n';
    const auto& ex = examples[i];
    for (std::size_t t = 0; t < ex.tokens_a.size(); ++t) {
      os << ex.tokens_a[t] << '\t' << (t < ex.tags.size() ? ex.tags[t] : "O") << '\n';
    }
  }
  return os.str();
}

std::string format_pair_tsv(const std::vector<TaskExample>& examples, TaskKind kind) {
  auto join = [](const std::vector<std::string>& words) {
    std::string out;
    for (const auto& w : words) out += (out.empty() ? "" : " ") + w;
    return out;
  };
  std::ostringstream os;
  os.precision(17);
  for (const auto& ex : examples) {
    os << join(ex.tokens_a) << '\t' << join(ex.tokens_b) << '\t';
    if (kind == TaskKind::kPairScore) {
      os << ex.score;
    } else {
      os << ex.label;
    }
    os << '\n';
  }
  return os.str();
}

std::string format_examples(const std::vector<TaskExample>& examples, TaskKind kind) {
  return kind == TaskKind::kTokenTag ? format_conll(examples) : format_pair_tsv(examples, kind);
}

void validate_examples(const TaskSpec& task, const std::vector<TaskExample>& examples) {
  for (std::size_t i = 0; i < examples.size(); ++i) {
    const auto& ex = examples[i];
    if (ex.tokens_a.empty()) throw DataError("example " + std::to_string(i) + " is empty");
    if (task.kind == TaskKind::kTokenTag) {
      if (ex.tags.size() != ex.tokens_a.size()) {
        throw DataError("example " + std::to_string(i) + " has misaligned tags");
      }
      for (const auto& t : ex.tags) task.label_id(t);
    } else if (task.kind == TaskKind::kPairClass) {
      task.label_id(ex.label);
    } else if (!std::isfinite(ex.score)) {
      throw DataError("example " + std::to_string(i) + " has a non-finite score");
    }
  }
}

Predictions gold_predictions(const TaskSpec& task, const std::vector<TaskExample>& examples) {
  Predictions out;
  out.reserve(examples.size());
  for (const auto& ex : examples) {
    Prediction p;
    if (task.kind == TaskKind::kTokenTag) {
      for (const auto& t : ex.tags) p.labels.push_back(task.label_id(t));
    } else if (task.kind == TaskKind::kPairClass) {
      p.labels.push_back(task.label_id(ex.label));
    } else {
      p.score = ex.score;
    }
    out.push_back(std::move(p));
  }
  return out;
}

std::vector<Span> decode_bio(const std::vector<std::string>& tags) {
  std::vector<Span> spans;
  std::optional<Span> open;
  auto close = [&](std::size_t end) {
    if (open) {
      open->end = end;
      spans.push_back(*open);
      open.reset();
    }
  };
  for (std::size_t i = 0; i < tags.size(); ++i) {
    const std::string& tag = tags[i];
    if (tag == "O" || tag.size() < 3) {
      close(i);
      continue;
    }
    const std::string type = tag.substr(2);
    if (tag[0] == 'I' && open && open->type == type) continue;
    close(i);
    open = Span{type, i, 0};
  }
  close(tags.size());
  return spans;
}

double compute_metric(const TaskSpec& task, const Predictions& predicted,
                      const Predictions& gold) {
  if (predicted.size() != gold.size()) {
    throw InputError("predictions and gold differ in length");
  }
  if (gold.empty()) throw InputError("metric over an empty set");
  switch (task.metric) {
    case Metric::kSpanF1: {
      std::size_t tp = 0, np = 0, ng = 0;
      for (std::size_t i = 0; i < gold.size(); ++i) {
        if (predicted[i].labels.size() != gold[i].labels.size()) {
          throw InputError("tag sequence lengths differ at example " + std::to_string(i));
        }
        const auto p = decode_bio(tag_names(task, predicted[i].labels));
        const auto g = decode_bio(tag_names(task, gold[i].labels));
        const std::set<Span> gs(g.begin(), g.end());
        for (const auto& s : p) tp += gs.contains(s);
        np += p.size();
        ng += g.size();
      }
      return f1(tp, np, ng);
    }
    case Metric::kAccuracy:
    case Metric::kPositiveMicroF1: {
      const std::size_t negative = task.metric == Metric::kPositiveMicroF1
                                       ? task.label_id(task.negative_label)
                                       : std::numeric_limits<std::size_t>::max();
      std::size_t correct = 0, tp = 0, np = 0, ng = 0;
      for (std::size_t i = 0; i < gold.size(); ++i) {
        if (predicted[i].labels.size() != 1 || gold[i].labels.size() != 1) {
          throw InputError("classification needs one label per example");
        }
        const std::size_t p = predicted[i].labels[0], g = gold[i].labels[0];
        correct += p == g;
        np += p != negative;
        ng += g != negative;
        tp += p == g && g != negative;
      }
      if (task.metric == Metric::kAccuracy) {
        return static_cast<double>(correct) / static_cast<double>(gold.size());
      }
      return f1(tp, np, ng);
    }
    case Metric::kPearson: {
      const double n = static_cast<double>(gold.size());
      double mp = 0.0, mg = 0.0;
      for (std::size_t i = 0; i < gold.size(); ++i) {
        mp += predicted[i].score;
        mg += gold[i].score;
      }
      mp /= n;
      mg /= n;
      double sxy = 0.0, sxx = 0.0, syy = 0.0;
      for (std::size_t i = 0; i < gold.size(); ++i) {
        const double dp = predicted[i].score - mp, dg = gold[i].score - mg;
        sxy += dp * dg;
        sxx += dp * dp;
        syy += dg * dg;
      }
      if (sxx == 0.0 || syy == 0.0) {
        throw NumericError("Pearson correlation is undefined for constant scores");
      }
      return sxy / std::sqrt(sxx * syy);
    }
  }
  throw ConfigError("unknown metric");
}

std::pair<std::vector<std::string>, std::vector<int>> model_words(const TaskExample& example,
                                                                  std::size_t max_words) {
  std::vector<std::string> a = example.tokens_a, b = example.tokens_b;
  const std::size_t specials = b.empty() ? 2 : 3;
  if (max_words < specials + 1 + (b.empty() ? 0 : 1)) {
    throw LengthError("no room for the example's words");
  }
  if (max_words != std::numeric_limits<std::size_t>::max()) {
    while (a.size() + b.size() + specials > max_words) {
      auto& side = (a.size() >= b.size() && a.size() > 1) || b.size() <= 1 ? a : b;
      side.pop_back();
    }
  }
  std::vector<std::string> words{std::string(chartok::kClsToken)};
  words.insert(words.end(), a.begin(), a.end());
  words.emplace_back(chartok::kSepToken);
  std::vector<int> segments(words.size(), 0);
  if (!b.empty()) {
    words.insert(words.end(), b.begin(), b.end());
    words.emplace_back(chartok::kSepToken);
    segments.resize(words.size(), 1);
  }
  return {words, segments};
}

template <typename T>
Predictions predict(const Model<T>& model, const TaskSpec& task,
                    const std::vector<TaskExample>& examples) {
  Predictions out;
  out.reserve(examples.size());
  for (const auto& ex : examples) {
    const ModelInput in = example_input(model, task, ex);
    const Tensor<T> logits = task_output(model, task, ex, in, {}).value();
    Prediction p;
    if (task.kind == TaskKind::kPairScore) {
      p.score = static_cast<double>(logits[0]);
    } else {
      for (std::size_t r = 0; r < logits.rows(); ++r) p.labels.push_back(argmax_row(logits, r));
    }
    out.push_back(std::move(p));
  }
  return out;
}

nlohmann::json RunResult::to_json() const {
  nlohmann::json preds = nlohmann::json::array();
  for (const auto& p : test_predictions) {
    if (p.labels.empty()) {
      preds.push_back(p.score);
    } else {
      preds.push_back(p.labels);
    }
  }
  return {{"seed", seed},
          {"validation_scores", validation_scores},
          {"best_epoch", best_epoch},
          {"test_score", test_score},
          {"test_predictions", preds}};
}

std::pair<std::vector<TaskExample>, std::vector<TaskExample>> carve_validation(
    const std::vector<TaskExample>& train, double fraction, std::uint64_t carve_seed) {
  if (!(fraction > 0.0 && fraction < 1.0)) {
    throw ConfigError("validation fraction must lie in (0, 1)");
  }
  const std::size_t n_val =
      static_cast<std::size_t>(std::floor(fraction * static_cast<double>(train.size())));
  std::vector<std::size_t> order(train.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  Rng rng(carve_seed);
  shuffle(order, rng);
  std::vector<TaskExample> rest, val;
  std::vector<bool> in_val(train.size(), false);
  for (std::size_t i = 0; i < n_val; ++i) in_val[order[i]] = true;
  for (std::size_t i = 0; i < train.size(); ++i) {
    (in_val[i] ? val : rest).push_back(train[i]);
  }
  return {rest, val};
}

ModelConfig task_config(const ModelConfig& base, const TaskSpec& task) {
  ModelConfig c = base;
  c.outputs = {task.kind != TaskKind::kTokenTag, false, task.kind, task.num_outputs()};
  c.validate();
  return c;
}

FinetuneOutcome finetune_run(const TaskSpec& task, const Dataset& data,
                             const ModelConfig& base_config,
                             const ParameterStore<float>* pretrained,
                             std::shared_ptr<const wordpiece::Vocab> vocab,
                             std::uint64_t seed, const FinetuneOptions& options) {
  task.validate();
  if (options.epochs == 0 || options.batch == 0) {
    throw ConfigError("fine-tuning needs epochs and a batch size");
  }
  validate_examples(task, data.train);
  validate_examples(task, data.validation);
  validate_examples(task, data.test);
  std::vector<TaskExample> train = data.train, validation = data.validation;
  if (validation.empty()) {
    std::tie(train, validation) =
        carve_validation(data.train, options.validation_fraction, options.carve_seed);
  }
  if (train.empty() || validation.empty()) {
    throw DataError("fine-tuning needs non-empty training and validation sets");
  }

  const ModelConfig config = task_config(base_config, task);
  Rng root(seed);
  auto params = initialize_parameters<float>(config, root.next_u64());
  if (pretrained) params.copy_matching(*pretrained);
  Model<float> model(config, std::move(params), vocab);

  std::vector<TrainItem> items;
  items.reserve(train.size());
  for (const auto& ex : train) {
    TrainItem item{example_input(model, task, ex), {}, ex.score};
    if (task.kind == TaskKind::kTokenTag) {
      for (const auto& t : ex.tags) item.targets.push_back(task.label_id(t));
    } else if (task.kind == TaskKind::kPairClass) {
      item.targets.push_back(task.label_id(ex.label));
    }
    items.push_back(std::move(item));
  }

  const Predictions val_gold = gold_predictions(task, validation);
  const std::size_t per_epoch = (items.size() + options.batch - 1) / options.batch;
  const std::size_t total = per_epoch * options.epochs;
  const pretrain::AdamConfig adam{0.9, 0.999, 1e-6, options.weight_decay, false};
  pretrain::OptimizerState<float> state;
  Rng order_rng = root.split();
  Rng dropout_rng = root.split();
  std::vector<std::size_t> order(items.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

  RunResult result;
  result.seed = seed;
  ParameterStore<float> best = model.params().clone();
  double best_score = kNaN;
  std::size_t update = 0;
  for (std::size_t epoch = 1; epoch <= options.epochs; ++epoch) {
    shuffle(order, order_rng);
    for (std::size_t start = 0; start < order.size(); start += options.batch) {
      const std::size_t stop = std::min(order.size(), start + options.batch);
      const float inv = 1.0f / static_cast<float>(stop - start);
      for (std::size_t i = start; i < stop; ++i) {
        const TrainItem& item = items[order[i]];
        const TaskExample& ex = train[order[i]];
        const Var<float> out =
            task_output(model, task, ex, item.input, ForwardMode{true, &dropout_rng});
        Var<float> loss;
        if (task.kind == TaskKind::kPairScore) {
          loss = ops::mse(out, Tensor<float>({1, 1}, std::vector<float>{static_cast<float>(item.score)}));
        } else {
          loss = ops::cross_entropy(out, item.targets);
        }
        if (!std::isfinite(loss.value()[0])) {
          throw NumericError("fine-tuning loss diverged in epoch " + std::to_string(epoch));
        }
        ops::scale(loss, inv).backward();
      }
      ++update;
      pretrain::adam_step(model.params(), state,
                          pretrain::update_lr(update, total, options.lr,
                                              options.warmup_fraction),
                          adam);
      model.params().zero_grad();
    }
    const double score = safe_metric(task, predict(model, task, validation), val_gold);
    result.validation_scores.push_back(score);
    if (epoch == 1 ||
        (!std::isnan(score) && (std::isnan(best_score) || score > best_score))) {
      best_score = score;
      result.best_epoch = epoch;
      best = model.params().clone();
    }
  }

  Model<float> best_model(config, std::move(best), vocab);
  if (!data.test.empty()) {
    result.test_predictions = predict(best_model, task, data.test);
    result.test_score =
        safe_metric(task, result.test_predictions, gold_predictions(task, data.test));
  } else {
    result.test_score = kNaN;
  }
  return {std::move(result), std::move(best_model)};
}

Predictions ensemble_predict(const TaskSpec& task, const std::vector<Predictions>& members) {
  if (members.size() < 2) throw InputError("an ensemble needs at least two members");
  const std::size_t n = members[0].size();
  for (const auto& m : members) {
    if (m.size() != n) throw InputError("ensemble members cover different test sets");
  }
  Predictions out(n);
  for (std::size_t i = 0; i < n; ++i) {
    if (task.kind == TaskKind::kPairScore) {
      double total = 0.0;
      for (const auto& m : members) total += m[i].score;
      out[i].score = total / static_cast<double>(members.size());
      continue;
    }
    const std::size_t len = members[0][i].labels.size();
    for (const auto& m : members) {
      if (m[i].labels.size() != len) {
        throw InputError("ensemble members disagree on example " + std::to_string(i));
      }
    }
    for (std::size_t t = 0; t < len; ++t) {
      std::vector<std::size_t> votes(task.num_outputs(), 0);
      for (const auto& m : members) {
        const std::size_t label = m[i].labels[t];
        if (label >= votes.size()) throw InputError("ensemble label out of range");
        ++votes[label];
      }
      // max_element returns the first maximum: the earliest declared label.
      out[i].labels.push_back(
          static_cast<std::size_t>(std::max_element(votes.begin(), votes.end()) - votes.begin()));
    }
  }
  return out;
}

double mean(const std::vector<double>& xs) {
  if (xs.empty()) return kNaN;
  double total = 0.0;
  for (double x : xs) total += x;
  return total / static_cast<double>(xs.size());
}

double sample_variance(const std::vector<double>& xs) {
  if (xs.size() < 2) return 0.0;
  const double m = mean(xs);
  double ss = 0.0;
  for (double x : xs) ss += (x - m) * (x - m);
  return ss / static_cast<double>(xs.size() - 1);
}

EnsembleReport leave_one_out(const TaskSpec& task, const std::vector<Predictions>& members,
                             const Predictions& gold) {
  if (members.size() < 3) throw InputError("leave-one-out needs at least three members");
  EnsembleReport r;
  for (const auto& m : members) r.member_scores.push_back(compute_metric(task, m, gold));
  for (std::size_t out = 0; out < members.size(); ++out) {
    std::vector<Predictions> rest;
    for (std::size_t i = 0; i < members.size(); ++i) {
      if (i != out) rest.push_back(members[i]);
    }
    r.ensemble_scores.push_back(compute_metric(task, ensemble_predict(task, rest), gold));
  }
  r.member_mean = mean(r.member_scores);
  r.member_variance = sample_variance(r.member_scores);
  r.ensemble_mean = mean(r.ensemble_scores);
  r.ensemble_variance = sample_variance(r.ensemble_scores);
  return r;
}

nlohmann::json EnsembleReport::to_json() const {
  return {{"member_scores", member_scores},
          {"ensemble_scores", ensemble_scores},
          {"member_mean", member_mean},
          {"member_variance", member_variance},
          {"ensemble_mean", ensemble_mean},
          {"ensemble_variance", ensemble_variance}};
}

std::string aggregate_tsv(const std::string& task, const std::vector<RunResult>& runs) {
  std::vector<double> scores;
  for (const auto& r : runs) scores.push_back(r.test_score);
  std::ostringstream os;
  os.precision(6);
  os << "task\truns\tmean\tstd\n"
     << task << '\t' << runs.size() << '\t' << mean(scores) << '\t'
     << std::sqrt(sample_variance(scores)) << '\n';
  return os.str();
}

template Predictions predict<float>(const Model<float>&, const TaskSpec&,
                                    const std::vector<TaskExample>&);
template Predictions predict<double>(const Model<double>&, const TaskSpec&,
                                     const std::vector<TaskExample>&);

}  // namespace cbert::finetune
