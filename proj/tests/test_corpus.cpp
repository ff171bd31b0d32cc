#include <algorithm>
#include <filesystem>
#include <fstream>
#include <set>
#include <string>
#include <vector>

#include "doctest.h"
#include "layoutlab/corpus.hpp"
#include "layoutlab/doc_model.hpp"
#include "layoutlab/rng.hpp"

using namespace layoutlab;

namespace {

std::string corpus_fingerprint(const std::vector<GeneratedDocument>& docs) {
  std::string all;
  for (const auto& d : docs) {
    all += document_to_json(d.raw, &d.truth).dump();
    all += "\n";
  }
  return all;
}

// maps each word to its semantic group, -1 when unlabeled
std::vector<int> group_of_word(const GeneratedDocument& doc) {
  std::vector<int> owner(doc.raw.word_count(), -1);
  for (size_t g = 0; g < doc.truth.semantic_groups.size(); ++g) {
    for (int w : doc.truth.semantic_groups[g]) {
      owner[static_cast<size_t>(w)] = static_cast<int>(g);
    }
  }
  return owner;
}

std::string write_temp(const std::string& name, const std::string& content) {
  const std::string path = (std::filesystem::temp_directory_path() / name).string();
  std::ofstream f(path);
  f << content;
  return path;
}

}  // namespace

TEST_CASE("generator: same seed reproduces the corpus byte for byte") {
  CorpusConfig cfg;
  cfg.document_count = 4;
  cfg.rng_seed = 7;
  auto a = generate_corpus(cfg);
  auto b = generate_corpus(cfg);
  CHECK(corpus_fingerprint(a) == corpus_fingerprint(b));

  cfg.rng_seed = 8;
  auto c = generate_corpus(cfg);
  CHECK(corpus_fingerprint(a) != corpus_fingerprint(c));
}

TEST_CASE("generator: fixed word width and narrow lines give two segments per group") {
  CorpusConfig cfg;
  cfg.document_count = 3;
  cfg.vocab = {"abcd"};
  cfg.keyword_prob = 0.0;  // keep every word exactly 4 chars
  cfg.words_min = 4;
  cfg.words_max = 4;
  cfg.line_width_chars = 9;  // fits "abcd abcd", not a third word
  cfg.segment_split_prob = 0.0;
  for (const auto& doc : generate_corpus(cfg)) {
    CHECK(doc.raw.segments.size() == 2 * doc.truth.semantic_groups.size());
    for (const auto& seg : doc.raw.segments) {
      CHECK(seg.size() == 2);
    }
  }
}

TEST_CASE("generator: wide lines and no noise make segments equal groups") {
  CorpusConfig cfg;
  cfg.document_count = 3;
  cfg.words_min = 2;
  cfg.words_max = 3;
  cfg.line_width_chars = 40;  // any 3 default-vocab words fit one line
  cfg.segment_split_prob = 0.0;
  for (const auto& doc : generate_corpus(cfg)) {
    std::set<std::vector<int>> segs(doc.raw.segments.begin(), doc.raw.segments.end());
    std::set<std::vector<int>> groups;
    for (auto g : doc.truth.semantic_groups) {
      std::sort(g.begin(), g.end());
      groups.insert(g);
    }
    CHECK(segs == groups);
  }
}

TEST_CASE("generator: segments always refine semantic groups") {
  CorpusConfig cfg;
  cfg.document_count = 6;
  cfg.segment_split_prob = 0.35;
  cfg.rng_seed = 99;
  for (const auto& doc : generate_corpus(cfg)) {
    const std::vector<int> owner = group_of_word(doc);
    for (const auto& seg : doc.raw.segments) {
      std::set<int> owners;
      for (int w : seg) {
        owners.insert(owner[static_cast<size_t>(w)]);
      }
      CHECK(owners.size() == 1);
      CHECK(*owners.begin() != -1);
    }
  }
}

TEST_CASE("generator: storage order equals top-to-bottom left-to-right reading order") {
  CorpusConfig cfg;
  cfg.document_count = 4;
  cfg.rng_seed = 3;
  for (const auto& doc : generate_corpus(cfg)) {
    for (size_t i = 0; i < doc.raw.word_count(); ++i) {
      CHECK(doc.raw.global_positions[i] == static_cast<int>(i) + 1);
    }
    for (size_t i = 1; i < doc.raw.word_count(); ++i) {
      const Box& prev = doc.raw.word_boxes[i - 1];
      const Box& cur = doc.raw.word_boxes[i];
      CHECK((prev.y0 < cur.y0 || (prev.y0 == cur.y0 && prev.x0 < cur.x0)));
    }
  }
}

TEST_CASE("generator: keyword_prob=1 stamps each group's label on its first word") {
  CorpusConfig cfg;
  cfg.document_count = 4;
  cfg.keyword_prob = 1.0;
  cfg.rng_seed = 21;
  for (const auto& doc : generate_corpus(cfg)) {
    for (const auto& group : doc.truth.semantic_groups) {
      const int first = *std::min_element(group.begin(), group.end());
      CHECK(doc.raw.words[static_cast<size_t>(first)] ==
            doc.truth.entity_labels[static_cast<size_t>(first)]);
    }
  }
}

TEST_CASE("generator: qa answers are contiguous ranges tied to the question keyword") {
  CorpusConfig cfg;
  cfg.document_count = 4;
  cfg.qa_per_doc = 2;
  cfg.rng_seed = 31;
  for (const auto& doc : generate_corpus(cfg)) {
    CHECK(!doc.truth.qa.empty());
    for (const auto& qa : doc.truth.qa) {
      CHECK(qa.answer_begin <= qa.answer_end);
      CHECK(qa.answer_end < static_cast<int>(doc.raw.word_count()));
      CHECK(qa.question == "find " + doc.raw.words[static_cast<size_t>(qa.answer_begin)]);
    }
  }
}

TEST_CASE("generator: cross-group segments sit far apart, within-group lines close by") {
  CorpusConfig cfg;
  cfg.document_count = 6;
  cfg.segment_split_prob = 0.0;
  cfg.rng_seed = 12;
  for (const auto& doc : generate_corpus(cfg)) {
    const std::vector<int> owner = group_of_word(doc);
    // distances on the normalized grid, as the pairing logic will see them
    std::vector<Box> grid;
    for (const Box& b : doc.raw.word_boxes) {
      grid.push_back(normalize_box(b, doc.raw.page_width, doc.raw.page_height));
    }
    for (size_t a = 0; a < doc.raw.segments.size(); ++a) {
      for (size_t b = a + 1; b < doc.raw.segments.size(); ++b) {
        const double dist =
            segment_center_distance(doc.raw.segments[a], doc.raw.segments[b], grid);
        const bool same_group = owner[static_cast<size_t>(doc.raw.segments[a][0])] ==
                                owner[static_cast<size_t>(doc.raw.segments[b][0])];
        if (same_group) {
          CHECK(dist < 120.0);
        } else {
          CHECK(dist > 120.0);
        }
      }
    }
  }
}

TEST_CASE("generator: infeasible configs are rejected") {
  CorpusConfig cfg;
  cfg.vocab = {};
  cfg.document_count = 1;
  SUBCASE("empty vocab is only a default request") {
    cfg.vocab = {""};
    CHECK_THROWS_WITH_AS((void)generate_corpus(cfg), doctest::Contains("empty word"),
                         std::invalid_argument);
  }
  SUBCASE("word wider than a line") {
    cfg.vocab = {"averyveryverylongword"};
    cfg.line_width_chars = 10;
    CHECK_THROWS_WITH_AS((void)generate_corpus(cfg), doctest::Contains("does not fit"),
                         std::invalid_argument);
  }
  SUBCASE("page overflow") {
    cfg.groups_min = 40;
    cfg.groups_max = 40;
    CHECK_THROWS_WITH_AS((void)generate_corpus(cfg), doctest::Contains("overflow the page"),
                         std::invalid_argument);
  }
  SUBCASE("bad probability") {
    cfg.segment_split_prob = 1.5;
    CHECK_THROWS_WITH_AS((void)generate_corpus(cfg), doctest::Contains("segment_split_prob"),
                         std::invalid_argument);
  }
}

TEST_CASE("fragment_groups: split behaviour at the extremes") {
  Rng rng(5);
  SUBCASE("no noise keeps one segment per line") {
    auto segs = fragment_groups({{0, 1, 2}}, 0.0, rng);
    REQUIRE(segs.size() == 1);
    CHECK(segs[0] == std::vector<int>{0, 1, 2});
  }
  SUBCASE("full noise isolates every word") {
    auto segs = fragment_groups({{0, 1, 2}}, 1.0, rng);
    REQUIRE(segs.size() == 3);
    for (size_t i = 0; i < 3; ++i) {
      CHECK(segs[i] == std::vector<int>{static_cast<int>(i)});
    }
  }
  SUBCASE("line breaks always split") {
    auto segs = fragment_groups({{0, 1}, {2, 3}}, 0.0, rng);
    REQUIRE(segs.size() == 2);
    CHECK(segs[0] == std::vector<int>{0, 1});
    CHECK(segs[1] == std::vector<int>{2, 3});
  }
}

TEST_CASE("fragment_groups: split rate follows the probability") {
  Rng rng(17);
  int split = 0;
  const int n = 1000;
  for (int i = 0; i < n; ++i) {
    auto segs = fragment_groups({{0, 1}}, 0.5, rng);
    split += segs.size() == 2 ? 1 : 0;
  }
  const double rate = static_cast<double>(split) / n;
  CHECK(rate > 0.45);
  CHECK(rate < 0.55);
}

TEST_CASE("refragment: same content, strictly finer segmentation") {
  CorpusConfig cfg;
  cfg.document_count = 2;
  cfg.segment_split_prob = 0.0;
  cfg.words_min = 4;
  cfg.words_max = 6;
  cfg.rng_seed = 9;
  auto docs = generate_corpus(cfg);
  Rng rng(42);
  for (const auto& doc : docs) {
    GeneratedDocument frag = refragment(doc, 1.0, rng);
    CHECK(frag.raw.words == doc.raw.words);
    CHECK(frag.raw.word_boxes == doc.raw.word_boxes);
    CHECK(frag.raw.global_positions == doc.raw.global_positions);
    CHECK(frag.truth.entity_labels == doc.truth.entity_labels);
    CHECK(frag.truth.semantic_groups == doc.truth.semantic_groups);
    CHECK(frag.raw.segments.size() == doc.raw.word_count());  // all singletons
    GeneratedDocument same = refragment(doc, 0.0, rng);
    CHECK(same.raw.segments == doc.raw.segments);
  }
}

TEST_CASE("corpus io: save and load round trip with manifest") {
  CorpusConfig cfg;
  cfg.document_count = 3;
  cfg.rng_seed = 55;
  auto docs = generate_corpus(cfg);
  const std::string dir =
      (std::filesystem::temp_directory_path() / "layoutlab_corpus_test").string();
  std::filesystem::remove_all(dir);
  save_corpus(dir, docs, cfg);

  std::ifstream mf(dir + "/manifest.json");
  nlohmann::json manifest;
  mf >> manifest;
  CHECK(manifest["count"] == 3);
  CHECK(manifest["seed"] == 55);
  CHECK(manifest["config"]["rng_seed"] == 55);

  auto loaded = load_corpus(dir);
  REQUIRE(loaded.size() == docs.size());
  CHECK(corpus_fingerprint(loaded) == corpus_fingerprint(docs));
  std::filesystem::remove_all(dir);
}

TEST_CASE("corpus config: json round trip") {
  CorpusConfig cfg;
  cfg.document_count = 17;
  cfg.vocab = {"aa", "bb"};
  cfg.segment_split_prob = 0.25;
  cfg.rng_seed = 1234567;
  CorpusConfig back = corpus_config_from_json(corpus_config_to_json(cfg));
  CHECK(back.document_count == 17);
  CHECK(back.vocab == cfg.vocab);
  CHECK(back.segment_split_prob == 0.25);
  CHECK(back.rng_seed == 1234567);
  CHECK(corpus_config_to_json(back).dump() == corpus_config_to_json(cfg).dump());
}

TEST_CASE("funsd loader: minimal one-word fixture") {
  const std::string path = write_temp(
      "funsd_one.json",
      R"({"page":[800,600],"form":[{"label":"header","words":[{"text":"Report","box":[10,10,80,30]}]}]})");
  GeneratedDocument doc = load_funsd_json(path);
  CHECK(doc.raw.word_count() == 1);
  CHECK(doc.raw.words[0] == "Report");
  CHECK(doc.truth.entity_labels[0] == "header");
  CHECK(doc.raw.segments.size() == 1);
  CHECK(doc.truth.semantic_groups.size() == 1);
  std::filesystem::remove(path);
}

TEST_CASE("funsd loader: explicit lines make one group with two segments") {
  const std::string path = write_temp("funsd_lines.json", R"({
    "page":[800,600],
    "form":[{"label":"question",
             "words":[{"text":"Ship","box":[10,10,50,28]},
                      {"text":"to","box":[55,10,75,28]},
                      {"text":"address","box":[10,32,80,50]}],
             "lines":[[0,1],[2]]}]})");
  GeneratedDocument doc = load_funsd_json(path);
  CHECK(doc.raw.word_count() == 3);
  CHECK(doc.truth.semantic_groups.size() == 1);
  CHECK(doc.truth.semantic_groups[0].size() == 3);
  REQUIRE(doc.raw.segments.size() == 2);
  CHECK(doc.raw.segments[0].size() == 2);
  CHECK(doc.raw.segments[1].size() == 1);
  std::filesystem::remove(path);
}

TEST_CASE("funsd loader: missing lines fall back to y-overlap grouping") {
  const std::string path = write_temp("funsd_fallback.json", R"({
    "page":[800,600],
    "form":[{"label":"answer",
             "words":[{"text":"first","box":[10,100,60,120]},
                      {"text":"row","box":[70,102,110,118]},
                      {"text":"second","box":[10,140,70,160]}]}]})");
  GeneratedDocument doc = load_funsd_json(path);
  REQUIRE(doc.raw.segments.size() == 2);
  CHECK(doc.raw.segments[0].size() == 2);  // "first row" overlap in y
  CHECK(doc.raw.segments[1].size() == 1);
  CHECK(doc.raw.words[0] == "first");
  CHECK(doc.raw.words[1] == "row");
  CHECK(doc.raw.words[2] == "second");
  std::filesystem::remove(path);
}

TEST_CASE("funsd loader: error paths name the file") {
  const std::string bad = write_temp("funsd_bad.json", "{not json");
  CHECK_THROWS_WITH_AS((void)load_funsd_json(bad), doctest::Contains("funsd_bad.json"),
                       std::invalid_argument);
  std::filesystem::remove(bad);

  const std::string unknown = write_temp(
      "funsd_label.json",
      R"({"page":[10,10],"form":[{"label":"banana","words":[{"text":"x","box":[0,0,1,1]}]}]})");
  CHECK_THROWS_WITH_AS((void)load_funsd_json(unknown),
                       doctest::Contains("valid labels: question, answer, header, other"),
                       std::invalid_argument);
  std::filesystem::remove(unknown);
}
