#include "cbert/pretrain.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "cbert/checkpoint.hpp"
#include "cbert/chartok.hpp"
#include "cbert/errors.hpp"

namespace cbert::pretrain {
namespace {

bool is_special(const std::string& word) {
  return chartok::special_from_token(word).has_value();
}

std::size_t count_units(const std::vector<std::string>& words, const UnitCounter& units) {
  std::size_t n = 0;
  for (const auto& w : words) n += units ? units(w) : 1;
  return n;
}

// Trims the pair in place, dropping trailing words from the longer side.
void trim_pair(std::vector<std::string>& a, std::vector<std::string>& b,
               std::size_t budget, const UnitCounter& units) {
  std::size_t la = count_units(a, units), lb = count_units(b, units);
  while (la + lb > budget) {
    std::vector<std::string>* side = la >= lb ? &a : &b;
    if (side->size() == 1) side = side == &a ? &b : &a;
    if (side->size() == 1) {
      throw LengthError("sentence pair cannot fit " + std::to_string(budget) +
                        " units even after trimming");
    }
    const std::size_t removed = units ? units(side->back()) : 1;
    side->pop_back();
    (side == &a ? la : lb) -= removed;
  }
}

// Uniform non-special piece id: draw among the non-special ids and step
// over the special ids in ascending order.
std::size_t random_piece(const wordpiece::Vocab& vocab, Rng& rng) {
  std::vector<std::size_t> specials{vocab.pad_id(), vocab.unk_id(), vocab.cls_id(),
                                    vocab.sep_id(), vocab.mask_id()};
  std::sort(specials.begin(), specials.end());
  if (vocab.size() <= specials.size()) throw ConfigError("vocabulary has only specials");
  std::size_t id = rng.index(vocab.size() - specials.size());
  for (std::size_t s : specials) {
    if (id >= s) ++id;
  }
  return id;
}

template <typename T>
void check_finite_grads(const ParameterStore<T>& params) {
  for (const auto& [name, var] : params) {
    if (!var.has_grad()) continue;
    for (const T g : var.grad().data()) {
      if (!std::isfinite(static_cast<double>(g))) {
        throw NumericError("non-finite gradient in " + name + "; step rejected");
      }
    }
  }
}

template <typename T>
void ensure_moments(OptimizerState<T>& state, const std::string& name, const Shape& shape) {
  if (!state.m.contains(name)) {
    state.m.emplace(name, Tensor<T>(shape));
    state.v.emplace(name, Tensor<T>(shape));
  }
}

// Moment update and the decayed Adam direction u = m_hat/(sqrt(v_hat)+eps) + wd*w.
template <typename T>
std::vector<double> adam_direction(const Tensor<T>& w, const Tensor<T>* g, Tensor<T>& m,
                                   Tensor<T>& v, std::size_t step, const AdamConfig& c,
                                   double weight_decay) {
  if (step == 0) throw ConfigError("optimizer step counter must start at 1");
  if (m.size() != w.size() || v.size() != w.size() || (g && g->size() != w.size())) {
    throw ShapeError("optimizer state does not match parameter shape");
  }
  const double bc1 = 1.0 - std::pow(c.beta1, static_cast<double>(step));
  const double bc2 = 1.0 - std::pow(c.beta2, static_cast<double>(step));
  std::vector<double> u(w.size());
  for (std::size_t i = 0; i < w.size(); ++i) {
    const double gi = g ? static_cast<double>((*g)[i]) : 0.0;
    const double mi = c.beta1 * static_cast<double>(m[i]) + (1.0 - c.beta1) * gi;
    const double vi = c.beta2 * static_cast<double>(v[i]) + (1.0 - c.beta2) * gi * gi;
    m[i] = static_cast<T>(mi);
    v[i] = static_cast<T>(vi);
    u[i] = (mi / bc1) / (std::sqrt(vi / bc2) + c.eps) +
           weight_decay * static_cast<double>(w[i]);
  }
  return u;
}

template <typename T>
void apply_direction(Tensor<T>& w, const std::vector<double>& u, double rate) {
  for (std::size_t i = 0; i < w.size(); ++i) {
    w[i] = static_cast<T>(static_cast<double>(w[i]) - rate * u[i]);
  }
}

template <typename T>
double trust_ratio(const Tensor<T>& w, const std::vector<double>& u) {
  double wn = 0.0, un = 0.0;
  for (std::size_t i = 0; i < w.size(); ++i) {
    wn += static_cast<double>(w[i]) * static_cast<double>(w[i]);
    un += u[i] * u[i];
  }
  wn = std::sqrt(wn);
  un = std::sqrt(un);
  return wn > 0.0 && un > 0.0 ? wn / un : 1.0;
}

template <typename T>
void store_step(ParameterStore<T>& params, OptimizerState<T>& state, double lr,
                const AdamConfig& config, bool lamb, bool force_unit_trust) {
  check_finite_grads(params);
  ++state.step;
  for (auto& [name, var] : params) {
    ensure_moments(state, name, var.shape());
    const Tensor<T>* g = var.has_grad() ? &var.grad() : nullptr;
    const bool regular = decays(name, config);
    const double wd = regular ? config.weight_decay : 0.0;
    Tensor<T>& w = var.mutable_value();
    const auto u = adam_direction(w, g, state.m.at(name), state.v.at(name), state.step,
                                  config, wd);
    const double phi = lamb && regular && !force_unit_trust ? trust_ratio(w, u) : 1.0;
    apply_direction(w, u, lr * phi);
  }
}

}  // namespace

MlmTargetVocab::MlmTargetVocab(std::vector<std::string> words) : words_(std::move(words)) {
  for (std::size_t i = 0; i < words_.size(); ++i) {
    if (!index_.emplace(words_[i], i).second) {
      throw FormatError("duplicate target word '" + words_[i] + "'");
    }
  }
}

MlmTargetVocab MlmTargetVocab::from_counts(const std::map<std::string, std::size_t>& counts,
                                           std::size_t k) {
  std::vector<std::pair<std::string, std::size_t>> ranked(counts.begin(), counts.end());
  std::stable_sort(ranked.begin(), ranked.end(),
                   [](const auto& a, const auto& b) { return a.second > b.second; });
  std::vector<std::string> words;
  for (const auto& [word, n] : ranked) {
    if (words.size() == k) break;
    if (n > 0 && !is_special(word)) words.push_back(word);
  }
  return MlmTargetVocab(std::move(words));
}

MlmTargetVocab MlmTargetVocab::from_documents(const std::vector<Document>& docs,
                                              std::size_t k) {
  std::map<std::string, std::size_t> counts;
  for (const auto& doc : docs)
    for (const auto& sentence : doc)
      for (const auto& w : sentence) ++counts[w];
  return from_counts(counts, k);
}

std::optional<std::size_t> MlmTargetVocab::find(const std::string& word) const {
  auto it = index_.find(word);
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

std::string MlmTargetVocab::to_text() const {
  std::string out;
  for (const auto& w : words_) out += w + "\n";
  return out;
}

MlmTargetVocab MlmTargetVocab::from_text(const std::string& text) {
  std::vector<std::string> words;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty()) words.push_back(line);
  }
  return MlmTargetVocab(std::move(words));
}

std::vector<SentencePair> build_nsp_pairs(const std::vector<Document>& docs,
                                          std::size_t max_seq, Rng& rng,
                                          const UnitCounter& units) {
  if (docs.size() < 2) {
    throw ConfigError("next-sentence pairs need at least two documents");
  }
  if (max_seq < 5) throw ConfigError("max_seq must leave room for two words");
  for (const auto& doc : docs) {
    if (doc.empty()) throw InputError("empty document");
  }
  const std::size_t budget = max_seq - 3;
  std::vector<SentencePair> pairs;
  for (std::size_t d = 0; d < docs.size(); ++d) {
    const Document& doc = docs[d];
    for (std::size_t i = 0; i + 1 < doc.size(); ++i) {
      std::vector<std::string> a = doc[i];
      std::vector<std::string> b;
      const bool is_next = rng.uniform() < 0.5;
      if (is_next) {
        b = doc[i + 1];
      } else {
        std::size_t other = rng.index(docs.size() - 1);
        if (other >= d) ++other;
        b = docs[other][rng.index(docs[other].size())];
      }
      if (a.empty() || b.empty()) continue;
      trim_pair(a, b, budget, units);
      SentencePair p;
      p.is_next = is_next;
      p.words.emplace_back(chartok::kClsToken);
      p.words.insert(p.words.end(), a.begin(), a.end());
      p.words.emplace_back(chartok::kSepToken);
      p.segments.assign(p.words.size(), 0);
      p.words.insert(p.words.end(), b.begin(), b.end());
      p.words.emplace_back(chartok::kSepToken);
      p.segments.resize(p.words.size(), 1);
      pairs.push_back(std::move(p));
    }
  }
  return pairs;
}

PretrainInstance apply_whole_word_masking(const SentencePair& pair,
                                          const MlmTargetVocab& targets,
                                          const MaskingOptions& options, Rng& rng,
                                          FrontendMode mode,
                                          const wordpiece::Vocab* vocab) {
  if (targets.empty()) throw ConfigError("masking needs a non-empty target vocabulary");
  if (mode == FrontendMode::kWordpiece && !vocab) {
    throw ConfigError("wordpiece masking needs the piece vocabulary");
  }
  const auto in_unit = [](double p) { return p >= 0.0 && p <= 1.0; };
  if (!in_unit(options.mask_rate) || !in_unit(options.mask_prob) ||
      !in_unit(options.random_prob) || options.mask_prob + options.random_prob > 1.0) {
    throw ConfigError("masking probabilities must lie in [0, 1]");
  }
  if (pair.words.size() != pair.segments.size()) {
    throw InputError("pair words and segments differ in length");
  }
  PretrainInstance inst;
  inst.is_next = pair.is_next;
  inst.original_words = pair.words;
  auto& in = inst.input;
  for (std::size_t w = 0; w < pair.words.size(); ++w) {
    const std::string& word = pair.words[w];
    const bool special = is_special(word);
    std::vector<std::string> units;
    if (mode == FrontendMode::kCharacter || special) {
      units.push_back(word);
    } else {
      units = wordpiece::tokenize_word(*vocab, word);
    }
    const std::size_t begin = in.units.size();
    const auto target = special ? std::nullopt : targets.find(word);
    if (target && rng.uniform() < options.mask_rate) {
      const double b = rng.uniform();
      const MaskBranch branch = b < options.mask_prob ? MaskBranch::kMask
                                : b < options.mask_prob + options.random_prob
                                    ? MaskBranch::kRandom
                                    : MaskBranch::kKeep;
      inst.decisions.push_back({w, branch});
      for (std::size_t k = 0; k < units.size(); ++k) {
        inst.masked_positions.push_back(begin + k);
        if (mode == FrontendMode::kCharacter) {
          inst.masked_labels.push_back(*target);
        } else {
          inst.masked_labels.push_back(vocab->find(units[k]).value_or(vocab->unk_id()));
        }
        if (branch == MaskBranch::kMask) {
          units[k] = std::string(chartok::kMaskToken);
        } else if (branch == MaskBranch::kRandom) {
          units[k] = mode == FrontendMode::kCharacter
                         ? targets.word(rng.index(targets.size()))
                         : vocab->piece(random_piece(*vocab, rng));
        }
      }
    }
    for (auto& u : units) in.units.push_back(std::move(u));
    in.segments.resize(in.units.size(), pair.segments[w]);
    in.alignment.emplace_back(begin, in.units.size());
  }
  return inst;
}

bool decays(const std::string& name, const AdamConfig& config) {
  if (config.decay_all) return true;
  const auto ends = [&name](std::string_view s) {
    return name.size() >= s.size() && name.compare(name.size() - s.size(), s.size(), s) == 0;
  };
  return !(ends(".bias") || ends(".gamma") || ends(".beta"));
}

template <typename T>
void adam_update(Tensor<T>& w, const Tensor<T>& g, Tensor<T>& m, Tensor<T>& v,
                 std::size_t step, double lr, const AdamConfig& config,
                 double weight_decay) {
  for (const T x : g.data()) {
    if (!std::isfinite(static_cast<double>(x))) throw NumericError("non-finite gradient");
  }
  const auto u = adam_direction(w, &g, m, v, step, config, weight_decay);
  apply_direction(w, u, lr * 1.0);
}

template <typename T>
double lamb_update(Tensor<T>& w, const Tensor<T>& g, Tensor<T>& m, Tensor<T>& v,
                   std::size_t step, double lr, const AdamConfig& config,
                   double weight_decay, bool force_unit_trust) {
  for (const T x : g.data()) {
    if (!std::isfinite(static_cast<double>(x))) throw NumericError("non-finite gradient");
  }
  const auto u = adam_direction(w, &g, m, v, step, config, weight_decay);
  const double phi = force_unit_trust ? 1.0 : trust_ratio(w, u);
  apply_direction(w, u, lr * phi);
  return phi;
}

template <typename T>
void adam_step(ParameterStore<T>& params, OptimizerState<T>& state, double lr,
               const AdamConfig& config) {
  store_step(params, state, lr, config, false, false);
}

template <typename T>
void lamb_step(ParameterStore<T>& params, OptimizerState<T>& state, double lr,
               const AdamConfig& config, bool force_unit_trust) {
  store_step(params, state, lr, config, true, force_unit_trust);
}

double lr_schedule(std::size_t step, std::size_t total_steps, double peak_lr,
                   double warmup_fraction) {
  if (!(warmup_fraction >= 0.0 && warmup_fraction < 1.0)) {
    throw ConfigError("warmup fraction must lie in [0, 1)");
  }
  if (total_steps == 0) throw ConfigError("schedule needs at least one step");
  if (step > total_steps) throw InputError("step past the end of the schedule");
  const double s = static_cast<double>(step);
  const double total = static_cast<double>(total_steps);
  const double warm = warmup_fraction * total;
  if (s < warm) return peak_lr * s / warm;
  return peak_lr * (total - s) / (total - warm);
}

double update_lr(std::size_t k, std::size_t n, double peak_lr, double warmup_fraction) {
  if (k == 0 || k > n) throw InputError("update index outside the phase");
  return lr_schedule(k, n + 1, peak_lr, warmup_fraction);
}

std::vector<PretrainInstance> make_instances(const std::vector<Document>& docs,
                                             std::size_t seq_len,
                                             const MlmTargetVocab& targets,
                                             const MaskingOptions& masking,
                                             std::size_t dupe_factor, Rng& rng,
                                             FrontendMode mode,
                                             const wordpiece::Vocab* vocab) {
  UnitCounter units;
  if (mode == FrontendMode::kWordpiece) {
    if (!vocab) throw ConfigError("wordpiece instances need the piece vocabulary");
    units = [vocab](const std::string& w) {
      return is_special(w) ? std::size_t{1} : wordpiece::tokenize_word(*vocab, w).size();
    };
  }
  std::vector<PretrainInstance> out;
  for (std::size_t copy = 0; copy < dupe_factor; ++copy) {
    const auto pairs = build_nsp_pairs(docs, seq_len, rng, units);
    for (const auto& pair : pairs) {
      out.push_back(apply_whole_word_masking(pair, targets, masking, rng, mode, vocab));
    }
  }
  return out;
}

template <typename T>
Var<T> instance_loss(const Model<T>& model, const PretrainInstance& inst, ForwardMode mode,
                     Var<T>* mlm, Var<T>* nsp) {
  const Var<T> enc = model.forward(inst.input, mode);
  const Var<T> nsp_loss = ops::cross_entropy(
      model.head(enc, inst.input, Head::kNsp, {}, mode), {inst.is_next ? 0u : 1u});
  if (nsp) *nsp = nsp_loss;
  if (inst.masked_positions.empty()) {
    if (mlm) *mlm = Var<T>::constant(Tensor<T>({1}));
    return nsp_loss;
  }
  const Head which =
      model.mode() == FrontendMode::kCharacter ? Head::kMlmWords : Head::kMlmPieces;
  const Var<T> mlm_loss = ops::cross_entropy(
      model.head(enc, inst.input, which, inst.masked_positions, mode), inst.masked_labels);
  if (mlm) *mlm = mlm_loss;
  return ops::add(mlm_loss, nsp_loss);
}

template <typename T>
MlmEvaluation evaluate(const Model<T>& model, const std::vector<PretrainInstance>& instances) {
  MlmEvaluation e;
  std::size_t correct = 0, nsp_correct = 0;
  const Head which =
      model.mode() == FrontendMode::kCharacter ? Head::kMlmWords : Head::kMlmPieces;
  for (const auto& inst : instances) {
    const Var<T> enc = model.forward(inst.input);
    const Var<T> nsp_logits = model.head(enc, inst.input, Head::kNsp);
    const std::size_t nsp_label = inst.is_next ? 0 : 1;
    e.nsp_loss += static_cast<double>(
        ops::cross_entropy(nsp_logits, {nsp_label}).value()[0]);
    const auto& nl = nsp_logits.value();
    if ((nl(0, 1) > nl(0, 0) ? 1u : 0u) == nsp_label) ++nsp_correct;
    if (inst.masked_positions.empty()) continue;
    const Var<T> logits = model.head(enc, inst.input, which, inst.masked_positions);
    const std::size_t n = inst.masked_positions.size();
    e.mlm_loss += static_cast<double>(
                      ops::cross_entropy(logits, inst.masked_labels).value()[0]) *
                  static_cast<double>(n);
    const auto& lv = logits.value();
    for (std::size_t r = 0; r < n; ++r) {
      std::size_t best = 0;
      for (std::size_t c = 1; c < lv.cols(); ++c) {
        if (lv(r, c) > lv(r, best)) best = c;
      }
      if (best == inst.masked_labels[r]) ++correct;
    }
    e.masked += n;
  }
  if (!instances.empty()) {
    e.nsp_loss /= static_cast<double>(instances.size());
    e.nsp_accuracy = static_cast<double>(nsp_correct) / static_cast<double>(instances.size());
  }
  if (e.masked > 0) {
    e.mlm_loss /= static_cast<double>(e.masked);
    e.mlm_accuracy = static_cast<double>(correct) / static_cast<double>(e.masked);
  }
  return e;
}

std::string loss_log_tsv(const std::vector<LossRecord>& log) {
  std::ostringstream os;
  os.precision(9);
  os << "step\tlr\tmlm_loss\tnsp_loss\n";
  for (const auto& r : log) {
    os << r.step << '\t' << r.lr << '\t' << r.mlm_loss << '\t' << r.nsp_loss << '\n';
  }
  return os.str();
}

std::map<std::string, std::string> model_attachments(const wordpiece::Vocab* vocab,
                                                     const MlmTargetVocab* targets) {
  std::map<std::string, std::string> out;
  if (vocab) {
    std::ostringstream os;
    vocab->write(os);
    out["vocab.txt"] = os.str();
  }
  if (targets) out["mlm_vocab.txt"] = targets->to_text();
  return out;
}

PretrainResult run_pretraining(const std::vector<Document>& docs,
                               const PretrainOptions& options,
                               std::shared_ptr<const wordpiece::Vocab> vocab,
                               const std::optional<std::filesystem::path>& out_dir) {
  const ModelConfig& config = options.model;
  config.validate();
  if (!config.outputs.pretraining) throw ConfigError("pretraining needs MLM and NSP heads");
  if (options.phases.empty()) throw ConfigError("pretraining needs at least one phase");
  const bool chars = config.mode == FrontendMode::kCharacter;
  if (!chars && !vocab) throw ConfigError("wordpiece pretraining needs a vocabulary");

  Rng root(options.seed);
  const std::size_t k = chars ? config.mlm_vocab_size : options.target_vocab_size;
  PretrainResult result{Model<float>::initialize(config, root.next_u64(), vocab),
                        MlmTargetVocab::from_documents(docs, k),
                        {},
                        {},
                        0};
  Model<float>& model = result.model;
  Rng dropout_rng = root.split();
  OptimizerState<float> state;
  std::size_t global = 0;
  const auto attachments = model_attachments(vocab.get(), &result.targets);

  const auto write_log = [&] {
    if (out_dir) write_file_atomic(*out_dir / "loss.tsv", loss_log_tsv(result.log));
  };

  for (const auto& phase : options.phases) {
    if (phase.updates == 0 || phase.batch == 0) {
      throw ConfigError("each phase needs updates and a batch size");
    }
    if (phase.seq_len > config.max_positions) {
      throw LengthError("phase sequence length exceeds the model's positions");
    }
    Rng data_rng = root.split();
    auto instances = make_instances(docs, phase.seq_len, result.targets, options.masking,
                                    options.dupe_factor, data_rng, config.mode, vocab.get());
    if (instances.empty()) throw ConfigError("corpus produced no training instances");
    for (const auto& inst : instances) {
      for (const auto& d : inst.decisions) {
        if (!result.targets.contains(inst.original_words[d.word])) {
          ++result.labels_outside_targets;
        }
      }
    }
    std::vector<std::size_t> order(instances.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    Rng order_rng = root.split();
    shuffle(order, order_rng);
    std::size_t cursor = 0;

    for (std::size_t u = 1; u <= phase.updates; ++u) {
      const double lr = update_lr(u, phase.updates, phase.peak_lr, phase.warmup_fraction);
      double mlm_sum = 0.0, nsp_sum = 0.0;
      for (std::size_t b = 0; b < phase.batch; ++b) {
        if (cursor == order.size()) {
          shuffle(order, order_rng);
          cursor = 0;
        }
        const auto& inst = instances[order[cursor++]];
        Var<float> mlm, nsp;
        const Var<float> loss =
            instance_loss(model, inst, ForwardMode{true, &dropout_rng}, &mlm, &nsp);
        const double value = static_cast<double>(loss.value()[0]);
        if (!std::isfinite(value)) {
          write_log();
          throw NumericError("loss diverged at step " + std::to_string(global + 1));
        }
        mlm_sum += static_cast<double>(mlm.value()[0]);
        nsp_sum += static_cast<double>(nsp.value()[0]);
        ops::scale(loss, 1.0f / static_cast<float>(phase.batch)).backward();
      }
      if (options.optimizer == OptimizerKind::kLamb) {
        lamb_step(model.params(), state, lr, options.adam);
      } else {
        adam_step(model.params(), state, lr, options.adam);
      }
      model.params().zero_grad();
      ++global;
      if (u == 1 || global % std::max<std::size_t>(options.log_every, 1) == 0 ||
          u == phase.updates) {
        const double n = static_cast<double>(phase.batch);
        result.log.push_back({global, lr, mlm_sum / n, nsp_sum / n});
      }
      if (out_dir && options.checkpoint_every > 0 && global % options.checkpoint_every == 0) {
        save_checkpoint(*out_dir / "checkpoints" / ("step-" + std::to_string(global)),
                        model.params(), config, attachments);
        write_log();
      }
    }
    result.instances.push_back(std::move(instances));
  }
  if (out_dir) {
    write_log();
    save_checkpoint(*out_dir / "final", model.params(), config, attachments);
  }
  return result;
}

#define CBERT_INSTANTIATE(T)                                                        \
  template void adam_update<T>(Tensor<T>&, const Tensor<T>&, Tensor<T>&, Tensor<T>&, \
                               std::size_t, double, const AdamConfig&, double);     \
  template double lamb_update<T>(Tensor<T>&, const Tensor<T>&, Tensor<T>&,           \
                                 Tensor<T>&, std::size_t, double, const AdamConfig&, \
                                 double, bool);                                      \
  template void adam_step<T>(ParameterStore<T>&, OptimizerState<T>&, double,         \
                             const AdamConfig&);                                     \
  template void lamb_step<T>(ParameterStore<T>&, OptimizerState<T>&, double,         \
                             const AdamConfig&, bool);                               \
  template Var<T> instance_loss<T>(const Model<T>&, const PretrainInstance&,         \
                                   ForwardMode, Var<T>*, Var<T>*);                   \
  template MlmEvaluation evaluate<T>(const Model<T>&,                                \
                                     const std::vector<PretrainInstance>&);

CBERT_INSTANTIATE(float)
CBERT_INSTANTIATE(double)
#undef CBERT_INSTANTIATE

}  // namespace cbert::pretrain
