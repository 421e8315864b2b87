#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

#include "dpage/metrics.hpp"

using namespace dpage;
using namespace dpage::metrics;

namespace {

TextCorpus corpus(std::initializer_list<const char*> lines) {
  TextCorpus out;
  for (const char* l : lines) out.push_back(split_tokens(l));
  return out;
}

WordDistribution dist(std::initializer_list<std::pair<const char*, double>> items) {
  WordDistribution d;
  for (const auto& [w, p] : items) d[w] = p;
  return d;
}

}  // namespace

// ---------------------------------------------------------------------------
// BLEU

TEST(Bleu, SelfIdentityIsExactlyOne) {
  const TextCorpus c = corpus({"a b c d e", "f g h", "i j k l"});
  EXPECT_EQ(multi_ref_bleu(c, single_reference(c)), 1.0);
}

TEST(Bleu, DisjointTokensScoreNearZero) {
  EXPECT_LT(multi_ref_bleu(corpus({"x y z w"}), single_reference(corpus({"a b c d"}))), 0.05);
}

TEST(Bleu, HandCountedTwoLineCorpus) {
  // Unigrams: line 1 clips "the cat the cat" to 2 of 4, line 2 matches 2 of 2 -> 4/6.
  // Bigrams: line 1 keeps one "the cat" of 3, line 2 matches 1 of 1 -> 2/4.
  // Hypothesis length 6 equals reference length 6 -> no brevity penalty.
  const TextCorpus hyp = corpus({"the cat the cat", "a dog"});
  const TextCorpus ref = corpus({"the cat sat", "a dog barks"});
  const BleuStats st = bleu_stats(hyp, single_reference(ref), 2);
  EXPECT_EQ(st.matches, (std::vector<std::size_t>{4, 2}));
  EXPECT_EQ(st.totals, (std::vector<std::size_t>{6, 4}));
  EXPECT_NEAR(multi_ref_bleu(hyp, single_reference(ref), 2), std::sqrt(4.0 / 6.0 * 2.0 / 4.0), 1e-15);
}

TEST(Bleu, BrevityPenaltyAndClosestReference) {
  // Hypothesis of 2 tokens; references of 3 and 6 -> closest is 3.
  const TextCorpus hyp = corpus({"a b"});
  const MultiReferences refs = {{split_tokens("a b c"), split_tokens("a b c d e f")}};
  const BleuStats st = bleu_stats(hyp, refs, 2);
  EXPECT_EQ(st.ref_length, 3u);
  EXPECT_NEAR(multi_ref_bleu(hyp, refs, 2), std::exp(1.0 - 3.0 / 2.0), 1e-15);
}

TEST(Bleu, MultiReferenceClipsByMaximumCount) {
  const TextCorpus hyp = corpus({"a a a"});
  const MultiReferences refs = {{split_tokens("a b c"), split_tokens("a a d")}};
  EXPECT_EQ(bleu_stats(hyp, refs, 1).matches[0], 2u);
}

TEST(Bleu, MisalignedAndEmptyInputsThrow) {
  EXPECT_THROW(multi_ref_bleu(corpus({"a"}), MultiReferences{}), DataFormatError);
  EXPECT_THROW(multi_ref_bleu(TextCorpus{}, MultiReferences{}), DataFormatError);
  EXPECT_THROW(transpose_references({corpus({"a"}), corpus({"a", "b"})}), DataFormatError);
}

// ---------------------------------------------------------------------------
// SARI (oracle values from an independent Python implementation)

TEST(Sari, SmallCaseMatchesReferenceImplementation) {
  EXPECT_NEAR(sari(corpus({"a b"}), corpus({"a c"}), single_reference(corpus({"a c"}))), 1.0, 1e-12);
  const MultiReferences two = {{split_tokens("the cat is on the mat"), split_tokens("a cat sat on the mat")}};
  EXPECT_NEAR(sari(corpus({"the cat sat on the mat"}), corpus({"the cat sat on a mat"}), two), 0.2636832611832612,
              1e-12);
  const MultiReferences three = {{split_tokens("x q z"), split_tokens("y y w")}};
  EXPECT_NEAR(sari(corpus({"x y z w"}), corpus({"x y q"}), three), 0.675, 1e-12);
}

TEST(Sari, IdentityUsesVacuousConvention) {
  const TextCorpus s = corpus({"a b"});
  EXPECT_DOUBLE_EQ(sari(s, s, single_reference(s)), 1.0);
}

TEST(Sari, MisalignedListsThrow) {
  EXPECT_THROW(sari(corpus({"a", "b"}), corpus({"a"}), single_reference(corpus({"a"}))), DataFormatError);
}

// ---------------------------------------------------------------------------
// distinct-N

TEST(DistinctN, HandCounts) {
  EXPECT_DOUBLE_EQ(distinct_n(corpus({"a b a", "b c"}), 1), 0.6);
  EXPECT_DOUBLE_EQ(distinct_n(corpus({"x x x x"}), 1), 0.25);
  EXPECT_DOUBLE_EQ(distinct_n(corpus({"a", "b", "c"}), 1), 1.0);
  EXPECT_DOUBLE_EQ(distinct_n(corpus({"a b a b"}), 2), 2.0 / 3.0);
  EXPECT_THROW(distinct_n(corpus({"a"}), 2), DataFormatError);
}

// ---------------------------------------------------------------------------
// Word distributions, KL, JD

TEST(WordDistribution, FrequenciesAndScaleInvariance) {
  const auto d = word_distribution(corpus({"a a b"}));
  EXPECT_DOUBLE_EQ(d.at("a"), 2.0 / 3.0);
  EXPECT_DOUBLE_EQ(d.at("b"), 1.0 / 3.0);
  const TextCorpus c = corpus({"x y", "z x w"});
  TextCorpus twice = c;
  twice.insert(twice.end(), c.begin(), c.end());
  EXPECT_EQ(word_distribution(c), word_distribution(twice));
  double total = 0.0;
  for (const auto& [w, p] : word_distribution(c)) total += p;
  EXPECT_NEAR(total, 1.0, 1e-12);
}

TEST(Kl, HandCaseAndAsymmetry) {
  const auto p = dist({{"a", 0.5}, {"b", 0.5}});
  const auto q = dist({{"a", 0.25}, {"b", 0.75}});
  const double closed = 0.5 * std::log(2.0) + 0.5 * std::log(0.5 / 0.75);
  EXPECT_NEAR(kl_divergence(p, q), 0.1438, 1e-3);
  EXPECT_NEAR(kl_divergence(p, q), closed, 1e-6);
  EXPECT_NE(kl_divergence(p, q), kl_divergence(q, p));
  EXPECT_NEAR(kl_divergence(p, p), 0.0, 1e-9);
}

TEST(Kl, DisjointSupportsStayFinite) {
  const double v = kl_divergence(dist({{"a", 1.0}}), dist({{"b", 1.0}}));
  EXPECT_TRUE(std::isfinite(v));
  EXPECT_GT(v, 10.0);
}

TEST(Jd, ZeroForIdenticalAndPairwiseForTwo) {
  const auto p = dist({{"a", 0.5}, {"b", 0.5}});
  const auto q = dist({{"a", 0.25}, {"b", 0.75}});
  EXPECT_NEAR(jeffreys_divergence({p, p, p}), 0.0, 1e-9);
  EXPECT_NEAR(jeffreys_divergence({p, q}), (kl_divergence(p, q) + kl_divergence(q, p)) / 2.0, 1e-15);
  EXPECT_THROW(jeffreys_divergence({p}), ContractError);
}

TEST(Jd, PermutationInvariant) {
  const auto a = dist({{"a", 0.7}, {"b", 0.3}});
  const auto b = dist({{"b", 0.6}, {"c", 0.4}});
  const auto c = dist({{"a", 0.2}, {"c", 0.8}});
  EXPECT_NEAR(jeffreys_divergence({a, b, c}), jeffreys_divergence({c, a, b}), 1e-12);
}

TEST(JdWords, IdenticalDistributionsGiveZeroInLexicographicOrder) {
  const auto p = dist({{"b", 0.5}, {"a", 0.25}, {"c", 0.25}});
  const auto words = jd_word_contributions({p, p}, 10);
  ASSERT_EQ(words[0].size(), 3u);
  EXPECT_EQ(words[0][0].word, "a");
  EXPECT_EQ(words[0][1].word, "b");
  EXPECT_EQ(words[0][2].word, "c");
  for (const auto& w : words[1]) EXPECT_EQ(w.contribution, 0.0);
}

TEST(JdWords, ExclusiveWordRanksFirstAndSumsMatchKl) {
  const auto d0 = dist({{"a", 0.4}, {"b", 0.3}, {"only0", 0.3}});
  const auto d1 = dist({{"a", 0.5}, {"b", 0.5}});
  const auto d2 = dist({{"a", 0.3}, {"b", 0.7}});
  const auto words = jd_word_contributions({d0, d1, d2}, 10);
  EXPECT_EQ(words[0][0].word, "only0");
  for (std::size_t i = 0; i < 3; ++i) {
    const std::vector<WordDistribution> all = {d0, d1, d2};
    double total = 0.0, kl_sum = 0.0;
    for (const auto& w : words[i]) total += w.contribution;
    for (std::size_t j = 0; j < 3; ++j)
      if (j != i) kl_sum += kl_divergence(all[i], all[j]);
    EXPECT_NEAR(total, kl_sum, 1e-9);
  }
  EXPECT_EQ(jd_word_contributions({d0, d1}, 1)[0].size(), 1u);
}

// ---------------------------------------------------------------------------
// Confusion matrix and matching

TEST(Confusion, OutputsEqualToReferenceGiveOne) {
  const std::vector<TextCorpus> refs = {corpus({"a b c d", "e f g h"}), corpus({"p q r s", "t u v w"})};
  const std::vector<TextCorpus> outs = {refs[1], refs[0]};
  const auto m = confusion_matrix(outs, refs);
  EXPECT_EQ(m.at(0, 1), 1.0);
  EXPECT_EQ(m.at(1, 0), 1.0);
  EXPECT_LT(m.at(0, 0), 0.05);
  const auto best = best_assignment(m);
  EXPECT_EQ(best.reference_of, (std::vector<std::size_t>{1, 0}));
  EXPECT_EQ(best.mean_score, 1.0);
  EXPECT_EQ(matched_patterns(m, 0.95), 2u);
}

TEST(Confusion, MatchingNeedsDistinctColumns) {
  ConfusionMatrix m;
  m.values = {{0.99, 0.1, 0.0}, {0.98, 0.2, 0.0}, {0.97, 0.3, 0.96}};
  EXPECT_EQ(matched_patterns(m, 0.95), 2u);
  const auto best = best_assignment(m);
  EXPECT_NEAR(best.mean_score, (0.99 + 0.2 + 0.96) / 3.0, 1e-15);
}

TEST(Confusion, MisalignedCorporaThrow) {
  EXPECT_THROW(confusion_matrix({corpus({"a"})}, {corpus({"a", "b"})}), DataFormatError);
}

// ---------------------------------------------------------------------------
// Lengths

TEST(Lengths, DeltaIsMaxMinusMin) {
  const auto r = length_report(corpus({"a b"}), {corpus({"a b"}), corpus({"a b c"})});
  EXPECT_DOUBLE_EQ(r.source_avg, 2.0);
  EXPECT_EQ(r.decoder_avg, (std::vector<double>{2.0, 3.0}));
  EXPECT_DOUBLE_EQ(r.delta, 1.0);
  const auto same = length_report(corpus({"a b"}), {corpus({"x y z"}), corpus({"x y z"})});
  EXPECT_EQ(same.delta, 0.0);
}

TEST(Lengths, FractionalMeans) {
  // Decoder means 2.084 and 3.315 over 1000 lines.
  TextCorpus a, b;
  for (int i = 0; i < 1000; ++i) {
    a.push_back(Words(i < 84 ? 3 : 2, "w"));
    b.push_back(Words(i < 315 ? 4 : 3, "w"));
  }
  const auto r = length_report(a, {a, b});
  EXPECT_NEAR(r.decoder_avg[0], 2.084, 1e-12);
  EXPECT_NEAR(r.decoder_avg[1], 3.315, 1e-12);
  EXPECT_NEAR(r.delta, 1.231, 1e-12);
}

TEST(Jd, EmptyOutputsAreUniformAfterSmoothing) {
  const TextCorpus empty = {Words{}, Words{}};
  EXPECT_TRUE(word_distribution(empty).empty());
  const auto p = dist({{"a", 0.5}, {"b", 0.5}});
  EXPECT_NEAR(kl_divergence(word_distribution(empty), p), 0.0, 1e-9);
  EXPECT_NEAR(jeffreys_divergence({word_distribution(empty), word_distribution(empty)}), 0.0, 1e-12);
  EXPECT_TRUE(std::isfinite(jeffreys_divergence({word_distribution(empty), dist({{"a", 1.0}})})));
}
