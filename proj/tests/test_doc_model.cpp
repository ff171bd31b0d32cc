#include <algorithm>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "doctest.h"
#include "layoutlab/doc_model.hpp"
#include "layoutlab/rng.hpp"

using namespace layoutlab;

namespace {

// one-line document: every word in its own unit box on a single row
RawDocument line_doc(std::vector<std::string> words,
                     std::vector<std::vector<int>> segments = {}) {
  RawDocument doc;
  const int l = static_cast<int>(words.size());
  doc.words = std::move(words);
  doc.page_width = 1000;
  doc.page_height = 1000;
  for (int i = 0; i < l; ++i) {
    doc.global_positions.push_back(i + 1);
    doc.word_boxes.push_back(Box{i * 50, 10, i * 50 + 40, 24});
  }
  if (segments.empty()) {
    std::vector<int> all(static_cast<size_t>(l));
    for (int i = 0; i < l; ++i) {
      all[static_cast<size_t>(i)] = i;
    }
    doc.segments = {all};
  } else {
    doc.segments = std::move(segments);
  }
  return doc;
}

RawDocument repeat_word_doc(const std::string& word, int times) {
  std::vector<std::string> words(static_cast<size_t>(times), word);
  return line_doc(std::move(words));
}

}  // namespace

TEST_CASE("document validation rejects broken inputs") {
  SUBCASE("length mismatch") {
    RawDocument doc = line_doc({"a", "b"});
    doc.global_positions.pop_back();
    CHECK_THROWS_WITH_AS(validate(doc), doctest::Contains("equal length"),
                         std::invalid_argument);
  }
  SUBCASE("duplicate positions") {
    RawDocument doc = line_doc({"a", "b"});
    doc.global_positions = {3, 3};
    CHECK_THROWS_WITH_AS(validate(doc), doctest::Contains("duplicate global position"),
                         std::invalid_argument);
  }
  SUBCASE("box outside page") {
    RawDocument doc = line_doc({"a"});
    doc.word_boxes[0].x1 = 2000;
    CHECK_THROWS_WITH_AS(validate(doc), doctest::Contains("outside page"),
                         std::invalid_argument);
  }
  SUBCASE("word in two segments") {
    RawDocument doc = line_doc({"a", "b"}, {{0, 1}, {1}});
    CHECK_THROWS_WITH_AS(validate(doc), doctest::Contains("two segments"),
                         std::invalid_argument);
  }
  SUBCASE("uncovered word") {
    RawDocument doc = line_doc({"a", "b"}, {{0}});
    CHECK_THROWS_WITH_AS(validate(doc), doctest::Contains("belongs to no segment"),
                         std::invalid_argument);
  }
  SUBCASE("segment with a reading-order gap") {
    RawDocument doc = line_doc({"a", "b", "c"}, {{0, 2}, {1}});
    CHECK_THROWS_WITH_AS(validate(doc), doctest::Contains("not contiguous"),
                         std::invalid_argument);
  }
}

TEST_CASE("bpe: zero merges gives a pure byte tokenizer") {
  TokenizerModel tok = train_bpe({line_doc({"ab"})}, 0);
  CHECK(tok.vocab_size() == 256 + TokenizerModel::kNumSpecials);
  std::vector<int> ids = tok.encode_word("ab");
  REQUIRE(ids.size() == 2);
  CHECK(ids[0] == 'a');
  CHECK(ids[1] == 'b');
}

TEST_CASE("bpe: one merge learned from a repeated bigram") {
  TokenizerModel tok = train_bpe({repeat_word_doc("aa", 5)}, 1);
  REQUIRE(tok.merges.size() == 1);
  CHECK(tok.merges[0] == std::pair<std::string, std::string>{"a", "a"});
  std::vector<int> ids = tok.encode_word("aa");
  REQUIRE(ids.size() == 1);
  CHECK(ids[0] == TokenizerModel::kFirstMergeId);
  // an odd run merges left to right, leaving the trailing byte alone
  CHECK(tok.encode_word("aaa").size() == 2);
}

TEST_CASE("bpe: equal frequencies resolve to the smallest pair") {
  // "ab" and "ba" are equally frequent inside "abab": pairs (a,b)x2, (b,a)x1.
  // With "xyxy" mixed in, (x,y) also appears twice -> (a,b) < (x,y) wins first.
  TokenizerModel tok = train_bpe({line_doc({"abab", "xyxy"})}, 1);
  REQUIRE(tok.merges.size() == 1);
  CHECK(tok.merges[0] == std::pair<std::string, std::string>{"a", "b"});
}

TEST_CASE("bpe: training twice yields identical merge lists") {
  RawDocument doc = line_doc({"invoice", "total", "total", "amount", "invoice"});
  TokenizerModel a = train_bpe({doc}, 16);
  TokenizerModel b = train_bpe({doc}, 16);
  CHECK(a.merges == b.merges);
  CHECK(tokenizer_to_json(a).dump() == tokenizer_to_json(b).dump());
}

TEST_CASE("bpe: merge supply can run out early") {
  TokenizerModel tok = train_bpe({repeat_word_doc("ab", 3)}, 50);
  // "ab" supports exactly one merge; afterwards every word is a single symbol
  CHECK(tok.merges.size() == 1);
}

TEST_CASE("bpe: rejects an empty corpus") {
  CHECK_THROWS_WITH_AS((void)train_bpe({}, 4), doctest::Contains("empty corpus"),
                       std::invalid_argument);
}

TEST_CASE("bpe: json round trip preserves behaviour") {
  TokenizerModel tok = train_bpe({line_doc({"header", "header", "head"})}, 8);
  TokenizerModel back = tokenizer_from_json(tokenizer_to_json(tok));
  CHECK(back.merges == tok.merges);
  CHECK(back.encode_word("header") == tok.encode_word("header"));
  CHECK(back.content_hash() == tok.content_hash());
}

TEST_CASE("bpe: special ids are disjoint from byte and merge ids") {
  TokenizerModel tok = train_bpe({repeat_word_doc("aa", 2)}, 1);
  std::set<int> specials = {TokenizerModel::kMaskId, TokenizerModel::kPadId,
                            TokenizerModel::kClsId, TokenizerModel::kUnkId,
                            TokenizerModel::kSepId};
  CHECK(specials.size() == TokenizerModel::kNumSpecials);
  for (int s : specials) {
    CHECK(s >= 256);
    CHECK(s < TokenizerModel::kFirstMergeId);
  }
  CHECK(tok.token_text(TokenizerModel::kMaskId) == "[mask]");
  CHECK(tok.token_text(TokenizerModel::kFirstMergeId) == "aa");
}

TEST_CASE("tokenize: single-token words keep their positions") {
  // teach the tokenizer to fuse both words into single tokens
  RawDocument train = line_doc({"to", "to", "day", "day", "day"});
  TokenizerModel tok = train_bpe({train}, 3);
  REQUIRE(tok.encode_word("to").size() == 1);
  REQUIRE(tok.encode_word("day").size() == 1);

  TokenizedDocument t = tokenize(line_doc({"to", "day"}), tok);
  REQUIRE(t.tokens.size() == 2);
  CHECK(t.positions == std::vector<int>{1, 2});
  CHECK(t.word_of_token == std::vector<int>{0, 1});
}

TEST_CASE("tokenize: a split word shares one box across its tokens") {
  TokenizerModel tok = train_bpe({line_doc({"abc"})}, 0);
  TokenizedDocument t = tokenize(line_doc({"abc"}), tok);
  REQUIRE(t.tokens.size() == 3);
  CHECK(t.positions == std::vector<int>{1, 2, 3});
  CHECK(t.boxes[0] == t.boxes[1]);
  CHECK(t.boxes[1] == t.boxes[2]);
  CHECK(t.word_of_token == std::vector<int>{0, 0, 0});
  REQUIRE(t.segments.size() == 1);
  CHECK(t.segments[0] == std::vector<int>{0, 1, 2});
}

TEST_CASE("tokenize: segment remapping follows word splits") {
  // two segments of two words; the second word of each splits into two tokens
  RawDocument train = repeat_word_doc("aa", 6);
  TokenizerModel tok = train_bpe({train}, 1);
  REQUIRE(tok.encode_word("aa").size() == 1);
  REQUIRE(tok.encode_word("xy").size() == 2);

  RawDocument doc = line_doc({"aa", "xy", "aa", "xy"}, {{0, 1}, {2, 3}});
  TokenizedDocument t = tokenize(doc, tok);
  REQUIRE(t.segments.size() == 2);
  CHECK(t.segments[0].size() == 3);
  CHECK(t.segments[1].size() == 3);
  CHECK(t.segments[0] == std::vector<int>{0, 1, 2});
  CHECK(t.segments[1] == std::vector<int>{3, 4, 5});
  CHECK(t.tokens.size() == 6);
}

TEST_CASE("tokenize: reading order comes from global positions, not storage order") {
  RawDocument doc = line_doc({"b", "a"});
  doc.global_positions = {2, 1};  // "a" reads first
  TokenizerModel tok = train_bpe({doc}, 0);
  TokenizedDocument t = tokenize(doc, tok);
  REQUIRE(t.tokens.size() == 2);
  CHECK(t.tokens[0] == 'a');
  CHECK(t.tokens[1] == 'b');
  CHECK(t.word_of_token == std::vector<int>{1, 0});
}

TEST_CASE("tokenize: empty word reports empty tokenization") {
  RawDocument doc = line_doc({"a", ""});
  TokenizerModel tok = train_bpe({doc}, 0);
  CHECK_THROWS_WITH_AS((void)tokenize(doc, tok), doctest::Contains("empty tokenization"),
                       std::invalid_argument);
}

TEST_CASE("tokenize: truncation cuts at a segment boundary") {
  TokenizerModel tok = train_bpe({line_doc({"ab"})}, 0);
  RawDocument doc = line_doc({"ab", "cd", "ef"}, {{0}, {1}, {2}});
  TokenizedDocument t = tokenize(doc, tok, 5);
  CHECK(t.tokens.size() == 4);  // two 2-token segments fit, the third would overflow
  CHECK(t.segments.size() == 2);
  CHECK(t.positions == std::vector<int>{1, 2, 3, 4});
}

TEST_CASE("tokenize: an oversized first segment is hard-cut") {
  TokenizerModel tok = train_bpe({line_doc({"ab"})}, 0);
  TokenizedDocument t = tokenize(line_doc({"abcdefgh"}), tok, 3);
  CHECK(t.tokens.size() == 3);
  CHECK(t.segments.size() == 1);
}

TEST_CASE("tokenize: token boxes collapse to one box per word") {
  RawDocument doc = line_doc({"alpha", "beta", "gamma"});
  TokenizerModel tok = train_bpe({doc}, 4);
  TokenizedDocument t = tokenize(doc, tok);
  std::map<int, std::set<std::string>> per_word;
  for (size_t n = 0; n < t.tokens.size(); ++n) {
    const Box& b = t.boxes[n];
    per_word[t.word_of_token[n]].insert(std::to_string(b.x0) + "," + std::to_string(b.y0) +
                                        "," + std::to_string(b.x1) + "," +
                                        std::to_string(b.y1));
  }
  CHECK(per_word.size() == 3);
  for (const auto& [w, boxes] : per_word) {
    CHECK(boxes.size() == 1);
  }
}

TEST_CASE("normalize_box: fixed mappings") {
  CHECK(normalize_box(Box{0, 0, 640, 480}, 640, 480) == Box{0, 0, 1000, 1000});
  CHECK(normalize_box(Box{50, 50, 50, 50}, 100, 100) == Box{500, 500, 500, 500});
  CHECK(normalize_box(Box{33, 0, 66, 0}, 100, 10) == Box{330, 0, 660, 0});
  CHECK_THROWS_WITH_AS((void)normalize_box(Box{0, 0, 1, 1}, 0, 10),
                       doctest::Contains("zero page dimension"), std::invalid_argument);
}

TEST_CASE("normalize_box: monotone per coordinate and idempotent on the grid") {
  Rng rng(404);
  for (int t = 0; t < 200; ++t) {
    const int w = rng.uniform_int(1, 2000);
    const int h = rng.uniform_int(1, 2000);
    int xa = rng.uniform_int(0, w), xb = rng.uniform_int(0, w);
    if (xa > xb) {
      std::swap(xa, xb);
    }
    int ya = rng.uniform_int(0, h), yb = rng.uniform_int(0, h);
    if (ya > yb) {
      std::swap(ya, yb);
    }
    Box n = normalize_box(Box{xa, ya, xb, yb}, w, h);
    CHECK(n.x0 <= n.x1);
    CHECK(n.y0 <= n.y1);
    CHECK(n.x0 >= 0);
    CHECK(n.y1 <= 1000);
    // with a 1000x1000 page the grid maps onto itself
    CHECK(normalize_box(n, 1000, 1000) == n);
  }
}

TEST_CASE("merged_box: singleton, disjoint pair, and brute-force hull") {
  std::vector<Box> boxes = {Box{5, 6, 7, 8}, Box{0, 0, 10, 10}, Box{20, 0, 30, 10},
                            Box{3, 9, 12, 22}};
  CHECK(merged_box({0}, boxes) == Box{5, 6, 7, 8});
  CHECK(merged_box({1, 2}, boxes) == Box{0, 0, 30, 10});

  // oracle: plain min/max loop over members
  std::vector<int> members = {0, 1, 3};
  Box want{boxes[0].x0, boxes[0].y0, boxes[0].x1, boxes[0].y1};
  for (int i : members) {
    want.x0 = std::min(want.x0, boxes[static_cast<size_t>(i)].x0);
    want.y0 = std::min(want.y0, boxes[static_cast<size_t>(i)].y0);
    want.x1 = std::max(want.x1, boxes[static_cast<size_t>(i)].x1);
    want.y1 = std::max(want.y1, boxes[static_cast<size_t>(i)].y1);
  }
  CHECK(merged_box(members, boxes) == want);
  CHECK_THROWS_WITH_AS((void)merged_box({}, boxes), doctest::Contains("empty segment"),
                       std::invalid_argument);
}

TEST_CASE("segment_center_distance: fixed values and random-layout oracle") {
  std::vector<Box> boxes = {Box{0, 0, 0, 0}, Box{3, 4, 3, 4}};
  CHECK(segment_center_distance({0}, {0}, boxes) == doctest::Approx(0.0));
  CHECK(segment_center_distance({0}, {1}, boxes) == doctest::Approx(5.0));

  Rng rng(11);
  for (int t = 0; t < 50; ++t) {
    std::vector<Box> bs;
    std::vector<std::vector<int>> segs(5);
    for (int k = 0; k < 5; ++k) {
      const int n = rng.uniform_int(1, 4);
      for (int i = 0; i < n; ++i) {
        int x0 = rng.uniform_int(0, 900), y0 = rng.uniform_int(0, 900);
        segs[static_cast<size_t>(k)].push_back(static_cast<int>(bs.size()));
        bs.push_back(Box{x0, y0, x0 + rng.uniform_int(0, 90), y0 + rng.uniform_int(0, 90)});
      }
    }
    for (int a = 0; a < 5; ++a) {
      for (int b = 0; b < 5; ++b) {
        // oracle recomputes hulls and centers from raw member boxes
        auto hull = [&](const std::vector<int>& seg) {
          double x0 = 1e18, y0 = 1e18, x1 = -1e18, y1 = -1e18;
          for (int i : seg) {
            x0 = std::min(x0, static_cast<double>(bs[static_cast<size_t>(i)].x0));
            y0 = std::min(y0, static_cast<double>(bs[static_cast<size_t>(i)].y0));
            x1 = std::max(x1, static_cast<double>(bs[static_cast<size_t>(i)].x1));
            y1 = std::max(y1, static_cast<double>(bs[static_cast<size_t>(i)].y1));
          }
          return std::pair<double, double>{0.5 * (x0 + x1), 0.5 * (y0 + y1)};
        };
        auto [ax, ay] = hull(segs[static_cast<size_t>(a)]);
        auto [bx, by] = hull(segs[static_cast<size_t>(b)]);
        const double want = std::sqrt((ax - bx) * (ax - bx) + (ay - by) * (ay - by));
        CHECK(segment_center_distance(segs[static_cast<size_t>(a)],
                                      segs[static_cast<size_t>(b)],
                                      bs) == doctest::Approx(want));
      }
    }
  }
}

TEST_CASE("local_positions: restart at one per segment") {
  CHECK(local_positions({4, 5, 6}) == std::vector<int>{1, 2, 3});
  CHECK(local_positions({9}) == std::vector<int>{1});
  CHECK_THROWS_WITH_AS((void)local_positions({1, 3}), doctest::Contains("non-contiguous"),
                       std::invalid_argument);

  // segments sized [2,3,1] concatenate to [1,2,1,2,3,1]
  std::vector<std::vector<int>> segs = {{0, 1}, {2, 3, 4}, {5}};
  std::vector<int> all;
  for (const auto& s : segs) {
    for (int p : local_positions(s)) {
      all.push_back(p);
    }
  }
  CHECK(all == std::vector<int>{1, 2, 1, 2, 3, 1});
  CHECK(std::count(all.begin(), all.end(), 1) == static_cast<long>(segs.size()));
}

TEST_CASE("document json: round trip with and without truth") {
  RawDocument doc = line_doc({"total", "42"}, {{0}, {1}});
  GroundTruth truth;
  truth.semantic_groups = {{0, 1}};
  truth.entity_labels = {"question", "answer"};
  truth.qa = {QaExample{"what is the total?", 1, 1}};

  nlohmann::json j = document_to_json(doc, &truth);
  CHECK(has_truth(j));
  RawDocument doc2 = document_from_json(j);
  CHECK(doc2.words == doc.words);
  CHECK(doc2.global_positions == doc.global_positions);
  CHECK(doc2.word_boxes == doc.word_boxes);
  CHECK(doc2.segments == doc.segments);
  GroundTruth t2 = truth_from_json(j, doc2);
  CHECK(t2.semantic_groups == truth.semantic_groups);
  CHECK(t2.entity_labels == truth.entity_labels);
  REQUIRE(t2.qa.size() == 1);
  CHECK(t2.qa[0].question == truth.qa[0].question);
  CHECK(t2.qa[0].answer_begin == 1);

  nlohmann::json bare = document_to_json(doc);
  CHECK(!has_truth(bare));
  CHECK_THROWS_AS((void)truth_from_json(bare, doc), std::invalid_argument);

  nlohmann::json broken = j;
  broken.erase("boxes");
  CHECK_THROWS_WITH_AS((void)document_from_json(broken), doctest::Contains("boxes"),
                       std::invalid_argument);
}

TEST_CASE("tokenize twice produces byte-identical json") {
  RawDocument doc = line_doc({"name", "date", "amount", "due"}, {{0, 1}, {2, 3}});
  TokenizerModel tok = train_bpe({doc}, 6);
  TokenizedDocument a = tokenize(doc, tok);
  TokenizedDocument b = tokenize(doc, tok);
  CHECK(a.tokens == b.tokens);
  CHECK(a.positions == b.positions);
  CHECK(a.segments == b.segments);
  CHECK(a.word_of_token == b.word_of_token);
}
