#include <gtest/gtest.h>

#include <cmath>
#include <set>

#include "cbert/checkpoint.hpp"
#include "cbert/errors.hpp"
#include "cbert/pretrain.hpp"
#include "test_util.hpp"

namespace cbert::pretrain {
namespace {

using Words = std::vector<std::string>;

std::vector<Document> synthetic_corpus(std::size_t docs, std::size_t sentences,
                                       std::uint64_t seed) {
  const Words lexicon{"the", "cat", "sat", "on", "a", "mat", "dog", "ran", "to",
                      "park", "big", "red", "ball", "fell", "down", "hill"};
  Rng rng(seed);
  std::vector<Document> out(docs);
  for (auto& doc : out) {
    for (std::size_t s = 0; s < sentences; ++s) {
      Sentence sentence;
      for (std::size_t w = 0; w < 3 + rng.index(5); ++w) {
        sentence.push_back(lexicon[rng.index(lexicon.size())]);
      }
      doc.push_back(sentence);
    }
  }
  return out;
}

ModelConfig tiny_char_config() {
  ModelConfig c;
  c.mode = FrontendMode::kCharacter;
  c.layers = 1;
  c.attention_heads = 2;
  c.hidden = 16;
  c.ffn = 32;
  c.max_positions = 32;
  c.dropout = 0.1;
  c.mlm_vocab_size = 20;
  c.charcnn = {4, {{1, 4}, {2, 4}, {3, 8}}, 1};
  return c;
}

TEST(MlmTargetVocab, TopKByFrequencyThenName) {
  const auto v = MlmTargetVocab::from_counts({{"b", 3}, {"a", 3}, {"c", 5}, {"d", 1}}, 3);
  EXPECT_EQ(v.words(), (Words{"c", "a", "b"}));
  EXPECT_EQ(v.find("a"), 1u);
  EXPECT_FALSE(v.contains("d"));
  EXPECT_EQ(MlmTargetVocab::from_text(v.to_text()).words(), v.words());
  EXPECT_THROW(MlmTargetVocab(Words{"x", "x"}), FormatError);
}

TEST(BuildNspPairs, SingleDocumentIsConfigError) {
  Rng rng(1);
  EXPECT_THROW(build_nsp_pairs(synthetic_corpus(1, 5, 1), 32, rng), ConfigError);
}

TEST(BuildNspPairs, LayoutAndSegments) {
  Rng rng(2);
  const auto docs = synthetic_corpus(3, 4, 2);
  for (const auto& p : build_nsp_pairs(docs, 64, rng)) {
    ASSERT_EQ(p.words.size(), p.segments.size());
    EXPECT_EQ(p.words.front(), "[CLS]");
    EXPECT_EQ(p.words.back(), "[SEP]");
    std::size_t seps = 0, first_sep = 0;
    for (std::size_t i = 0; i < p.words.size(); ++i) {
      if (p.words[i] == "[SEP]" && seps++ == 0) first_sep = i;
    }
    EXPECT_EQ(seps, 2u);
    for (std::size_t i = 0; i < p.words.size(); ++i) {
      EXPECT_EQ(p.segments[i], i <= first_sep ? 0 : 1);
    }
  }
}

TEST(BuildNspPairs, PositivesAreTrueContinuations) {
  // Sentences are unique so a pair identifies its source.
  std::vector<Document> docs(4);
  for (int d = 0; d < 4; ++d)
    for (int s = 0; s < 5; ++s) docs[d].push_back({"d" + std::to_string(d), "s" + std::to_string(s)});
  Rng rng(3);
  for (const auto& p : build_nsp_pairs(docs, 32, rng)) {
    const std::string& doc_a = p.words[1];
    const std::string& doc_b = p.words[4];
    if (p.is_next) {
      EXPECT_EQ(doc_a, doc_b);
      EXPECT_EQ(std::stoi(p.words[5].substr(1)), std::stoi(p.words[2].substr(1)) + 1);
    } else {
      EXPECT_NE(doc_a, doc_b);
    }
  }
}

TEST(BuildNspPairs, SingleSentenceDocumentHasNoPositive) {
  std::vector<Document> docs{{{"only", "one"}}, {{"x", "y"}, {"z", "w"}}};
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng(seed);
    const auto pairs = build_nsp_pairs(docs, 32, rng);
    ASSERT_EQ(pairs.size(), 1u);
    EXPECT_EQ(pairs[0].words[1], "x");
  }
}

TEST(BuildNspPairs, IsNextRateNearHalf) {
  const auto docs = synthetic_corpus(50, 11, 4);
  Rng rng(5);
  std::size_t positives = 0, total = 0;
  while (total < 10000) {
    for (const auto& p : build_nsp_pairs(docs, 32, rng)) {
      if (total == 10000) break;
      positives += p.is_next ? 1 : 0;
      ++total;
    }
  }
  EXPECT_NEAR(static_cast<double>(positives) / total, 0.5, 0.02);
}

TEST(BuildNspPairs, TruncatesLongestSideFirst) {
  std::vector<Document> docs{{Words(10, "a"), Words(4, "b")}, {Words(3, "c")}};
  UnitCounter two = [](const std::string&) { return std::size_t{2}; };
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    Rng rng(seed);
    const auto pairs = build_nsp_pairs(docs, 15, rng, two);
    ASSERT_EQ(pairs.size(), 1u);
    std::size_t units = 0;
    for (const auto& w : pairs[0].words) units += (w.front() == '[') ? 1 : 2;
    EXPECT_LE(units, 15u);
    // Budget 12 units = 6 words. A shrinks until it is no longer the longer
    // side, after which the sides alternate: 3 + 3 in both cases.
    std::size_t a = 0, b = 0;
    for (const auto& w : pairs[0].words) {
      a += w == "a";
      b += w == "b" || w == "c";
    }
    EXPECT_EQ(a, 3u);
    EXPECT_EQ(b, 3u);
  }
  Rng rng(0);
  EXPECT_THROW(build_nsp_pairs(docs, 4, rng), ConfigError);
}

SentencePair sentence_pair(const Words& a, const Words& b) {
  SentencePair p;
  p.words.push_back("[CLS]");
  p.words.insert(p.words.end(), a.begin(), a.end());
  p.words.push_back("[SEP]");
  p.segments.assign(p.words.size(), 0);
  p.words.insert(p.words.end(), b.begin(), b.end());
  p.words.push_back("[SEP]");
  p.segments.resize(p.words.size(), 1);
  p.is_next = true;
  return p;
}

TEST(Masking, RateZeroMasksNothing) {
  const MlmTargetVocab targets(Words{"the", "cat", "sat"});
  Rng rng(1);
  const auto inst = apply_whole_word_masking(sentence_pair({"the", "cat"}, {"sat"}), targets,
                                             {0.0, 0.8, 0.1}, rng, FrontendMode::kCharacter);
  EXPECT_TRUE(inst.masked_positions.empty());
  EXPECT_EQ(inst.input.units, (Words{"[CLS]", "the", "cat", "[SEP]", "sat", "[SEP]"}));
}

TEST(Masking, RateOneAllMaskBranch) {
  const MlmTargetVocab targets(Words{"the", "cat", "sat"});
  Rng rng(1);
  const auto pair = sentence_pair({"the", "cat", "zebra"}, {"sat", "the"});
  const auto inst =
      apply_whole_word_masking(pair, targets, {1.0, 1.0, 0.0}, rng, FrontendMode::kCharacter);
  EXPECT_EQ(inst.input.units,
            (Words{"[CLS]", "[MASK]", "[MASK]", "zebra", "[SEP]", "[MASK]", "[MASK]", "[SEP]"}));
  EXPECT_EQ(inst.masked_positions, (std::vector<std::size_t>{1, 2, 5, 6}));
  EXPECT_EQ(inst.masked_labels, (std::vector<std::size_t>{0, 1, 2, 0}));
}

TEST(Masking, EmptyTargetsIsConfigError) {
  Rng rng(1);
  EXPECT_THROW(apply_whole_word_masking(sentence_pair({"a"}, {"b"}), MlmTargetVocab(), {}, rng,
                                        FrontendMode::kCharacter),
               ConfigError);
}

TEST(Masking, MatchesSeededReplay) {
  const Words sentence{"the", "cat", "sat", "on", "the", "mat", "and", "ate", "a", "fish"};
  const MlmTargetVocab targets(Words{"the", "cat", "sat", "on", "mat", "a", "fish"});
  const MaskingOptions opts{0.4, 0.5, 0.3};
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    SentencePair pair{sentence, std::vector<int>(sentence.size(), 0), true};
    Rng rng(seed);
    const auto inst =
        apply_whole_word_masking(pair, targets, opts, rng, FrontendMode::kCharacter);

    // Replay: per eligible word, selection draw, branch draw, replacement draw.
    Rng replay(seed);
    Words units = sentence;
    std::vector<std::size_t> positions;
    for (std::size_t w = 0; w < sentence.size(); ++w) {
      if (!targets.contains(sentence[w])) continue;
      if (!(replay.uniform() < 0.4)) continue;
      positions.push_back(w);
      const double b = replay.uniform();
      if (b < 0.5) {
        units[w] = "[MASK]";
      } else if (b < 0.8) {
        units[w] = targets.word(replay.index(targets.size()));
      }
    }
    EXPECT_EQ(inst.masked_positions, positions) << "seed " << seed;
    EXPECT_EQ(inst.input.units, units) << "seed " << seed;
  }
}

TEST(Masking, WordpieceBranchCoversAllPieces) {
  auto vocab = wordpiece::Vocab::with_specials();
  for (const char* p : {"the", "app", "##le", "##s", "cat", "x", "##y"}) vocab.add(p);
  const MlmTargetVocab targets(Words{"apples", "the", "cat"});
  const auto pair = sentence_pair({"the", "apples", "xy"}, {"cat", "apples"});
  std::size_t random_seen = 0;
  for (std::uint64_t seed = 0; seed < 200; ++seed) {
    Rng rng(seed);
    const auto inst = apply_whole_word_masking(pair, targets, {0.5, 0.8, 0.1}, rng,
                                               FrontendMode::kWordpiece, &vocab);
    std::set<std::size_t> masked(inst.masked_positions.begin(), inst.masked_positions.end());
    std::set<std::size_t> decided;
    for (const auto& d : inst.decisions) {
      const auto [begin, end] = inst.input.alignment[d.word];
      for (std::size_t u = begin; u < end; ++u) {
        EXPECT_TRUE(masked.contains(u));
        const std::string& unit = inst.input.units[u];
        if (d.branch == MaskBranch::kMask) {
          EXPECT_EQ(unit, "[MASK]");
        }
        if (d.branch == MaskBranch::kRandom) {
          EXPECT_FALSE(vocab.is_special(vocab.id(unit)));
          ++random_seen;
        }
        decided.insert(u);
      }
      EXPECT_NE(pair.words[d.word], "xy");
    }
    EXPECT_EQ(decided, masked);
    for (std::size_t i = 0; i < inst.masked_positions.size(); ++i) {
      // Labels are the original piece ids.
      const std::size_t pos = inst.masked_positions[i];
      std::size_t word = 0;
      while (inst.input.alignment[word].second <= pos) ++word;
      const auto pieces = wordpiece::tokenize_word(vocab, pair.words[word]);
      EXPECT_EQ(inst.masked_labels[i],
                vocab.id(pieces[pos - inst.input.alignment[word].first]));
    }
  }
  EXPECT_GT(random_seen, 0u);
}

TEST(Adam, Examples) {
  const AdamConfig c;
  const double lr = 0.01;
  {
    Tensor<double> w({1}), g = Tensor<double>::vector({1.0}), m({1}), v({1});
    adam_update(w, g, m, v, 1, lr, c, 0.0);
    EXPECT_NEAR(w[0], -lr / (1.0 + 1e-6), 1e-15);
  }
  {
    Tensor<double> w = Tensor<double>::vector({0.7}), g({1}), m({1}), v({1});
    adam_update(w, g, m, v, 1, lr, c, 0.0);
    EXPECT_EQ(w[0], 0.7);
  }
  {
    Tensor<double> w = Tensor<double>::vector({2.0}), g = Tensor<double>::vector({1.0}), m({1}),
                   v({1});
    adam_update(w, g, m, v, 1, lr, c, 0.1);
    EXPECT_NEAR(w[0] - 2.0, -0.01 * (1.0 / (1.0 + 1e-6) + 0.2), 1e-15);
  }
  {
    Tensor<double> w({1}), g = Tensor<double>::vector({NAN}), m({1}), v({1});
    EXPECT_THROW(adam_update(w, g, m, v, 1, lr, c, 0.0), NumericError);
  }
}

TEST(Lamb, Examples) {
  const AdamConfig c;
  const double lr = 0.01;
  {
    Tensor<double> w({2}), g = Tensor<double>::vector({1.0, -1.0}), m({2}), v({2});
    EXPECT_EQ(lamb_update(w, g, m, v, 1, lr, c, 0.0), 1.0);
    EXPECT_NEAR(w[0], -lr, 1e-8);
  }
  {
    Tensor<double> w = Tensor<double>::vector({3.0, 4.0}), g = Tensor<double>::vector({1.0, 0.0}),
                   m({2}), v({2});
    const double phi = lamb_update(w, g, m, v, 1, lr, c, 0.0);
    EXPECT_NEAR(phi, 5.0 * (1.0 + 1e-6), 1e-12);
    EXPECT_NEAR(w[0] - 3.0, -lr * 5.0, 1e-12);
    EXPECT_EQ(w[1], 4.0);
  }
  {
    Tensor<double> w = Tensor<double>::vector({3.0, 4.0}), g({2}), m({2}), v({2});
    lamb_update(w, g, m, v, 1, lr, c, 0.0);
    EXPECT_EQ(w[0], 3.0);
    EXPECT_EQ(w[1], 4.0);
  }
}

TEST(Lamb, UnitTrustReproducesAdamExactly) {
  Rng rng(7);
  ParameterStore<float> a, b;
  a.add("layer.weight", test::random_tensor<float>({3, 4}, rng));
  a.add("layer.bias", test::random_tensor<float>({4}, rng));
  b = a.clone();
  OptimizerState<float> sa, sb;
  const AdamConfig c{0.9, 0.999, 1e-6, 0.1, false};
  for (int step = 0; step < 5; ++step) {
    for (const auto& name : a.names()) {
      const auto g = test::random_tensor<float>(a.get(name).shape(), rng);
      a.get(name).grad_buffer() = g;
      b.get(name).grad_buffer() = g;
    }
    adam_step(a, sa, 1e-2, c);
    lamb_step(b, sb, 1e-2, c, true);
    a.zero_grad();
    b.zero_grad();
  }
  for (const auto& name : a.names()) EXPECT_EQ(a.get(name).value(), b.get(name).value());
  EXPECT_EQ(sa.step, 5u);
}

TEST(Optimizer, NonFiniteGradientRejectsWholeStep) {
  ParameterStore<float> p;
  p.add("a.weight", Tensor<float>::vector({1.0f}));
  p.add("b.weight", Tensor<float>::vector({1.0f}));
  p.get("a.weight").grad_buffer()[0] = 1.0f;
  p.get("b.weight").grad_buffer()[0] = INFINITY;
  OptimizerState<float> s;
  EXPECT_THROW(lamb_step(p, s, 0.1, AdamConfig{}), NumericError);
  EXPECT_EQ(p.get("a.weight").value()[0], 1.0f);
  EXPECT_EQ(s.step, 0u);
}

TEST(Optimizer, DecayExemptions) {
  const AdamConfig c{0.9, 0.999, 1e-6, 0.1, false};
  EXPECT_TRUE(decays("encoder.layer0.ffn.output.weight", c));
  EXPECT_FALSE(decays("encoder.layer0.ffn.output.bias", c));
  EXPECT_FALSE(decays("frontend.layer_norm.gamma", c));
  EXPECT_TRUE(decays("frontend.layer_norm.gamma", {0.9, 0.999, 1e-6, 0.1, true}));
}

TEST(LrSchedule, Examples) {
  EXPECT_EQ(lr_schedule(0, 100, 1.0, 0.1), 0.0);
  EXPECT_DOUBLE_EQ(lr_schedule(10, 100, 1.0, 0.1), 1.0);
  EXPECT_DOUBLE_EQ(lr_schedule(55, 100, 1.0, 0.1), 0.5);
  EXPECT_DOUBLE_EQ(lr_schedule(5, 100, 1.0, 0.1), 0.5);
  EXPECT_EQ(lr_schedule(100, 100, 1.0, 0.1), 0.0);
  EXPECT_DOUBLE_EQ(lr_schedule(0, 100, 2.0, 0.0), 2.0);
  EXPECT_THROW(lr_schedule(0, 100, 1.0, 1.0), ConfigError);
  EXPECT_THROW(lr_schedule(0, 100, 1.0, -0.1), ConfigError);
  EXPECT_THROW(lr_schedule(101, 100, 1.0, 0.1), InputError);
  for (std::size_t k = 1; k <= 20; ++k) EXPECT_GT(update_lr(k, 20, 1.0, 0.1), 0.0);
}

PretrainOptions tiny_options(std::uint64_t seed) {
  PretrainOptions o;
  o.model = tiny_char_config();
  o.phases = {{6, 3, 16, 1e-2, 0.1}, {3, 2, 32, 5e-3, 0.1}};
  o.log_every = 2;
  o.checkpoint_every = 4;
  o.seed = seed;
  return o;
}

TEST(Pretrain, DeterministicCheckpoints) {
  const auto docs = synthetic_corpus(4, 5, 9);
  test::TempDir a("pretrain-a"), b("pretrain-b");
  const auto ra = run_pretraining(docs, tiny_options(3), nullptr, a.path());
  const auto rb = run_pretraining(docs, tiny_options(3), nullptr, b.path());
  for (const char* f : {"final/tensors.bin", "final/manifest.json", "final/mlm_vocab.txt",
                        "checkpoints/step-4/tensors.bin", "checkpoints/step-8/tensors.bin",
                        "loss.tsv"}) {
    EXPECT_EQ(read_file(a.path() / f), read_file(b.path() / f)) << f;
  }
  const auto other = run_pretraining(docs, tiny_options(4));
  EXPECT_NE(ra.model.params().get("heads.nsp.weight").value(),
            other.model.params().get("heads.nsp.weight").value());

  const auto tsv = read_file(a.path() / "loss.tsv");
  EXPECT_EQ(tsv.substr(0, tsv.find('\n')), "step\tlr\tmlm_loss\tnsp_loss");
  ASSERT_FALSE(ra.log.empty());
  EXPECT_EQ(ra.log.back().step, 9u);
  for (const auto& r : ra.log) {
    EXPECT_TRUE(std::isfinite(r.mlm_loss));
    EXPECT_TRUE(std::isfinite(r.nsp_loss));
  }
  EXPECT_EQ(ra.instances.size(), 2u);
  EXPECT_EQ(ra.labels_outside_targets, 0u);

  const auto ckpt = load_checkpoint(a.path() / "final", FrontendMode::kCharacter);
  for (const auto& [name, v] : ckpt.params) {
    EXPECT_EQ(v.value(), ra.model.params().get(name).value()) << name;
  }
}

TEST(Pretrain, WordpieceModeRuns) {
  const auto docs = synthetic_corpus(3, 4, 2);
  Words words;
  for (const auto& d : docs)
    for (const auto& s : d) words.insert(words.end(), s.begin(), s.end());
  auto vocab = std::make_shared<const wordpiece::Vocab>(wordpiece::learn_vocab(words, wordpiece::base_symbol_count(words) + 10, 1));
  PretrainOptions o = tiny_options(1);
  o.model.mode = FrontendMode::kWordpiece;
  o.model.vocab_size = vocab->size();
  o.target_vocab_size = 8;
  o.checkpoint_every = 0;
  const auto r = run_pretraining(docs, o, vocab);
  for (const auto& phase : r.instances) {
    for (const auto& inst : phase) {
      for (std::size_t label : inst.masked_labels) EXPECT_LT(label, vocab->size());
      for (const auto& d : inst.decisions) {
        EXPECT_TRUE(r.targets.contains(inst.original_words[d.word]));
      }
    }
  }
  EXPECT_EQ(r.targets.size(), 8u);
  EXPECT_THROW(run_pretraining(docs, o, nullptr), ConfigError);
}

TEST(Pretrain, LossDecreasesWithTraining) {
  const auto docs = synthetic_corpus(4, 6, 11);
  PretrainOptions o = tiny_options(5);
  o.model.dropout = 0.0;
  o.phases = {{60, 4, 24, 2e-2, 0.1}};
  o.checkpoint_every = 0;
  const auto r = run_pretraining(docs, o);
  auto fresh = Model<float>::initialize(o.model, Rng(5).next_u64());
  const auto before = evaluate(fresh, r.instances[0]);
  const auto after = evaluate(r.model, r.instances[0]);
  EXPECT_LT(after.mlm_loss, before.mlm_loss);
  EXPECT_LT(after.nsp_loss + after.mlm_loss, before.nsp_loss + before.mlm_loss);
}

}  // namespace
}  // namespace cbert::pretrain
