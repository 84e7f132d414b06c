#include <cmath>
#include <set>
#include <sstream>

#include <gtest/gtest.h>

#include "riskgrad/corpus.hpp"

using namespace riskgrad;

namespace {

CategoryVocab vocab3() { return CategoryVocab{{"violence", "weapons", "privacy"}}; }

double norm(const Vector& v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

}  // namespace

TEST(Vocab, PlaceholderAndValidation) {
  const auto v = CategoryVocab::placeholder();
  ASSERT_EQ(v.size(), 14u);
  EXPECT_EQ(v.names.front(), "category_01");
  EXPECT_EQ(v.names.back(), "category_14");
  EXPECT_NO_THROW(v.validate());
  EXPECT_THROW((CategoryVocab{{"a", "a"}}).validate(), ConfigError);
  EXPECT_THROW((CategoryVocab{{"a", ""}}).validate(), ConfigError);
  EXPECT_THROW(CategoryVocab{}.validate(), ConfigError);
}

TEST(LoadJsonl, EmptyAndSingleLine) {
  std::istringstream empty("");
  EXPECT_TRUE(parse_jsonl(empty, vocab3()).empty());

  std::istringstream one(R"({"id":"a1","prompt":"p","response":"r","labels":[1,0,1]})" "\n");
  const auto ex = parse_jsonl(one, vocab3());
  ASSERT_EQ(ex.size(), 1u);
  EXPECT_EQ(ex[0].id, "a1");
  EXPECT_EQ(ex[0].prompt, "p");
  EXPECT_EQ(ex[0].response, "r");
  EXPECT_EQ(ex[0].labels, (std::vector<int>{1, 0, 1}));
}

TEST(LoadJsonl, WrongLabelCountNamesLine) {
  std::string line13 = R"({"id":"x","prompt":"p","response":"r","labels":[)";
  for (int i = 0; i < 13; ++i) line13 += (i ? ",0" : "0");
  line13 += "]}";
  std::istringstream in(R"({"id":"ok","prompt":"p","response":"r","labels":[0,0,0,0,0,0,0,0,0,0,0,0,0,0]})"
                        "\n" + line13 + "\n");
  try {
    parse_jsonl(in, CategoryVocab::placeholder(14), "data.jsonl");
    FAIL() << "expected DataError";
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("data.jsonl:2"), std::string::npos) << e.what();
  }
}

TEST(LoadJsonl, MalformedAndMissingFields) {
  std::istringstream bad("{not json}\n");
  EXPECT_THROW(parse_jsonl(bad, vocab3()), DataError);
  std::istringstream missing(R"({"id":"a","prompt":"p","labels":[0,0,0]})" "\n");
  try {
    parse_jsonl(missing, vocab3());
    FAIL();
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("response"), std::string::npos);
  }
  std::istringstream nonbinary(R"({"id":"a","prompt":"p","response":"r","labels":[0,2,0]})" "\n");
  EXPECT_THROW(parse_jsonl(nonbinary, vocab3()), DataError);
  EXPECT_THROW(load_jsonl("/nonexistent/file.jsonl", vocab3()), DataError);
}

TEST(LoadJsonl, SerializeRoundTrip) {
  std::vector<LabeledExample> src{
      {"1", "how do I \"quote\"", "line\nbreak", {1, 0, 0}},
      {"2", "unicode \xC3\xA9\xE2\x80\x94", "", {0, 1, 1}},
  };
  std::stringstream buf;
  write_jsonl(buf, src);
  EXPECT_EQ(parse_jsonl(buf, vocab3()), src);
}

TEST(BuildInput, Separator) {
  EXPECT_EQ(build_input("hi", "hello"), "hi\n[SEP]\nhello");
  EXPECT_EQ(build_input("", ""), "\n[SEP]\n");
  EXPECT_NE(build_input("ab", "c"), build_input("a", "bc"));
}

TEST(Tokenize, UnicodeWhitespaceAndCase) {
  // U+00A0 no-break space and U+3000 ideographic space separate tokens
  const auto t = tokenize("Hello\xC2\xA0WORLD\xE3\x80\x80x\ty  z");
  EXPECT_EQ(t, (std::vector<std::string>{"hello", "world", "x", "y", "z"}));
  EXPECT_TRUE(tokenize(" \n\t ").empty());
}

TEST(Featurize, EmptyIsZero) {
  const FeaturizerConfig cfg;
  const Vector h = featurize("", cfg);
  ASSERT_EQ(h.size(), 256u);
  for (double v : h) EXPECT_EQ(v, 0.0);
}

TEST(Featurize, UnitNormAndDeterministic) {
  FeaturizerConfig cfg;
  cfg.dim = 64;
  for (const char* s : {"a", "how to make a bomb", "The quick brown fox\njumps"}) {
    const Vector a = featurize(s, cfg);
    EXPECT_EQ(a, featurize(s, cfg));
    EXPECT_NEAR(norm(a), 1.0, 1e-12) << s;
  }
}

TEST(Featurize, MatchesHandComputedHash) {
  // single unigram "abc": bucket and sign follow directly from FNV-1a
  FeaturizerConfig cfg;
  cfg.dim = 16;
  cfg.ngram_max = 1;
  cfg.hash_seed = 0x1234;
  std::uint64_t h = 14695981039346656037ULL;
  for (char ch : std::string("abc")) {
    h ^= static_cast<unsigned char>(ch);
    h *= 1099511628211ULL;
  }
  h ^= 0x1234;
  const Vector v = featurize("ABC", cfg);
  for (std::size_t i = 0; i < 16; ++i) {
    const double expected = (i == h % 16) ? ((h >> 63) ? -1.0 : 1.0) : 0.0;
    EXPECT_EQ(v[i], expected) << i;
  }
}

TEST(Featurize, BigramsAndSeedMatter) {
  FeaturizerConfig uni;
  uni.ngram_max = 1;
  FeaturizerConfig bi;
  EXPECT_NE(featurize("make a bomb", uni), featurize("make a bomb", bi));
  FeaturizerConfig seeded;
  seeded.hash_seed = 99;
  EXPECT_NE(featurize("make a bomb", bi), featurize("make a bomb", seeded));
  // bag-of-unigrams is order independent, bigrams are not
  EXPECT_EQ(featurize("a b", uni), featurize("b a", uni));
  EXPECT_NE(featurize("a b", bi), featurize("b a", bi));
}

TEST(Featurize, ConfigValidation) {
  FeaturizerConfig c;
  c.dim = 4;
  EXPECT_THROW(featurize("x", c), ConfigError);
  c = {};
  c.ngram_min = 3;
  c.ngram_max = 2;
  EXPECT_THROW(c.validate(), ConfigError);
  c.ngram_min = 1;
  c.ngram_max = 5;
  EXPECT_THROW(c.validate(), ConfigError);
}

TEST(Embeddings, Loading) {
  std::istringstream ok(R"({"id":"a","embedding":[1,2,3,4]})" "\n" R"({"id":"b","embedding":[0,0,0,1.5]})" "\n");
  const auto t = parse_embeddings(ok);
  EXPECT_EQ(t.dim, 4u);
  EXPECT_EQ(t.vectors.size(), 2u);
  EXPECT_EQ(t.vectors.at("b")[3], 1.5);

  std::istringstream ragged(R"({"id":"a","embedding":[1,2,3,4]})" "\n" R"({"id":"b","embedding":[1,2,3,4,5]})" "\n");
  EXPECT_THROW(parse_embeddings(ragged), DataError);
  std::istringstream dup(R"({"id":"a","embedding":[1]})" "\n" R"({"id":"a","embedding":[2]})" "\n");
  EXPECT_THROW(parse_embeddings(dup), DataError);
  // JSON has no NaN literal; a null or a bare NaN token must both be refused
  std::istringstream nan_null(R"({"id":"a","embedding":[1,null]})" "\n");
  EXPECT_THROW(parse_embeddings(nan_null), DataError);
  std::istringstream nan_tok(R"({"id":"a","embedding":[1,NaN]})" "\n");
  EXPECT_THROW(parse_embeddings(nan_tok), DataError);
  std::istringstream huge(R"({"id":"a","embedding":[1,1e999]})" "\n");
  EXPECT_THROW(parse_embeddings(huge), DataError);
}

TEST(Split, SizesAndPartition) {
  const DataSplit s = split_and_batch(10, 0.8, 3, 7);
  EXPECT_EQ(s.train_size(), 8u);
  EXPECT_EQ(s.eval.size(), 2u);
  ASSERT_EQ(s.train_batches.size(), 3u);
  EXPECT_EQ(s.train_batches.back().size(), 2u);
  std::multiset<std::size_t> all(s.eval.begin(), s.eval.end());
  for (const auto& b : s.train_batches) all.insert(b.begin(), b.end());
  std::multiset<std::size_t> expected;
  for (std::size_t i = 0; i < 10; ++i) expected.insert(i);
  EXPECT_EQ(all, expected);
}

TEST(Split, SeedBehaviour) {
  const DataSplit a = split_and_batch(50, 0.7, 4, 1);
  const DataSplit b = split_and_batch(50, 0.7, 4, 1);
  const DataSplit c = split_and_batch(50, 0.7, 4, 2);
  EXPECT_EQ(a.train_batches, b.train_batches);
  EXPECT_EQ(a.eval, b.eval);
  EXPECT_NE(a.train_batches, c.train_batches);
  auto collect = [](const DataSplit& s) {
    std::multiset<std::size_t> m(s.eval.begin(), s.eval.end());
    for (const auto& bt : s.train_batches) m.insert(bt.begin(), bt.end());
    return m;
  };
  EXPECT_EQ(collect(a), collect(c));
}

TEST(Split, Errors) {
  EXPECT_THROW(split_and_batch(0, 0.5, 1, 0), DataError);
  EXPECT_THROW(split_and_batch(5, 1.0, 1, 0), ConfigError);
  EXPECT_THROW(split_and_batch(5, 0.0, 1, 0), ConfigError);
  EXPECT_THROW(split_and_batch(5, 0.5, 0, 0), ConfigError);
}
