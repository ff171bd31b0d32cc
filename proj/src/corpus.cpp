#include "layoutlab/corpus.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <sstream>

#include "layoutlab/util.hpp"

namespace layoutlab {

namespace {

// Layout geometry, in page pixels (pages default to 1000x1000, where one
// pixel equals one normalized grid unit). kRowGap keeps blocks in adjacent
// rows far enough apart that cross-block segment centers are always more than
// 120 grid units from each other, while lines inside one block stay well
// under that distance.
constexpr int kCharW = 6;
constexpr int kLineH = 18;
constexpr int kBoxH = 14;
constexpr int kPad = 12;
constexpr int kRowGap = 140;
constexpr int kColumns = 2;

int longest_word(const std::vector<std::string>& words) {
  size_t longest = 0;
  for (const auto& w : words) {
    longest = std::max(longest, w.size());
  }
  return static_cast<int>(longest);
}

void check_config(const CorpusConfig& cfg, const std::vector<std::string>& vocab) {
  require(cfg.document_count >= 0, "infeasible config: negative document_count");
  require(!vocab.empty(), "infeasible config: empty vocab");
  require(!cfg.label_set.empty(), "infeasible config: empty label_set");
  require(cfg.groups_min >= 1 && cfg.groups_min <= cfg.groups_max,
          "infeasible config: empty groups range");
  require(cfg.words_min >= 1 && cfg.words_min <= cfg.words_max,
          "infeasible config: empty words range");
  require(cfg.segment_split_prob >= 0.0 && cfg.segment_split_prob <= 1.0,
          "infeasible config: segment_split_prob outside [0,1]");
  require(cfg.keyword_prob >= 0.0 && cfg.keyword_prob <= 1.0,
          "infeasible config: keyword_prob outside [0,1]");
  require(cfg.qa_per_doc >= 0, "infeasible config: negative qa_per_doc");
  require(cfg.page_width > 0 && cfg.page_height > 0, "infeasible config: empty page");

  for (const auto& w : vocab) {
    require(!w.empty(), "infeasible config: empty word in vocab");
  }
  const int longest = std::max(longest_word(vocab), longest_word(cfg.label_set));
  require(longest <= cfg.line_width_chars,
          "infeasible config: a word of " + std::to_string(longest) +
              " chars does not fit line_width_chars=" + std::to_string(cfg.line_width_chars));
  const int column_width = cfg.page_width / kColumns;
  require(2 * kPad + cfg.line_width_chars * kCharW <= column_width,
          "infeasible config: line width does not fit the column; shrink line_width_chars "
          "or widen the page");
}

struct WordRec {
  std::string text;
  Box box;
  int group = 0;
};

GeneratedDocument generate_one(const CorpusConfig& cfg, const std::vector<std::string>& vocab,
                               uint64_t doc_index) {
  Rng rng(cfg.rng_seed, doc_index);

  const int group_count = rng.uniform_int(cfg.groups_min, cfg.groups_max);
  std::vector<int> group_label(static_cast<size_t>(group_count));
  std::vector<std::vector<std::string>> group_words(static_cast<size_t>(group_count));
  for (int g = 0; g < group_count; ++g) {
    group_label[static_cast<size_t>(g)] =
        static_cast<int>(rng.next_below(cfg.label_set.size()));
    const int count = rng.uniform_int(cfg.words_min, cfg.words_max);
    auto& words = group_words[static_cast<size_t>(g)];
    for (int i = 0; i < count; ++i) {
      if (i == 0 && rng.bernoulli(cfg.keyword_prob)) {
        words.push_back(cfg.label_set[static_cast<size_t>(group_label[static_cast<size_t>(g)])]);
      } else {
        words.push_back(vocab[rng.next_below(vocab.size())]);
      }
    }
  }

  // greedy line packing under the char budget (words joined by single spaces)
  std::vector<std::vector<std::vector<std::string>>> group_lines(
      static_cast<size_t>(group_count));
  for (int g = 0; g < group_count; ++g) {
    std::vector<std::vector<std::string>> lines;
    int used = 0;
    for (const auto& w : group_words[static_cast<size_t>(g)]) {
      const int len = static_cast<int>(w.size());
      if (lines.empty() || used + 1 + len > cfg.line_width_chars) {
        lines.push_back({w});
        used = len;
      } else {
        lines.back().push_back(w);
        used += 1 + len;
      }
    }
    group_lines[static_cast<size_t>(g)] = std::move(lines);
  }

  // block grid: group g sits at (row g/2, column g%2); rows are as tall as
  // their tallest block and separated by kRowGap
  const int rows = (group_count + kColumns - 1) / kColumns;
  std::vector<int> row_top(static_cast<size_t>(rows));
  {
    int cursor = kPad;
    for (int r = 0; r < rows; ++r) {
      row_top[static_cast<size_t>(r)] = cursor;
      int tallest = 0;
      for (int c = 0; c < kColumns; ++c) {
        const int g = r * kColumns + c;
        if (g < group_count) {
          tallest = std::max(tallest,
                             static_cast<int>(group_lines[static_cast<size_t>(g)].size()));
        }
      }
      cursor += tallest * kLineH + kRowGap;
    }
    const int bottom = cursor - kRowGap;
    require(bottom + kPad <= cfg.page_height,
            "infeasible config: groups overflow the page (need " + std::to_string(bottom + kPad) +
                "px of " + std::to_string(cfg.page_height) +
                "); reduce groups_per_doc/words_per_group or enlarge the page");
  }

  // render words into boxes; remember per-group lines as provisional ids
  std::vector<WordRec> recs;
  std::vector<std::vector<std::vector<int>>> group_line_ids(static_cast<size_t>(group_count));
  const int column_width = cfg.page_width / kColumns;
  for (int g = 0; g < group_count; ++g) {
    const int block_x = (g % kColumns) * column_width + kPad;
    const int block_y = row_top[static_cast<size_t>(g / kColumns)];
    auto& line_ids = group_line_ids[static_cast<size_t>(g)];
    for (size_t li = 0; li < group_lines[static_cast<size_t>(g)].size(); ++li) {
      const int y = block_y + static_cast<int>(li) * kLineH;
      int x = block_x;
      std::vector<int> ids;
      for (const auto& w : group_lines[static_cast<size_t>(g)][li]) {
        const int width = static_cast<int>(w.size()) * kCharW;
        ids.push_back(static_cast<int>(recs.size()));
        recs.push_back(WordRec{w, Box{x, y + 2, x + width, y + 2 + kBoxH}, g});
        x += width + kCharW;
      }
      line_ids.push_back(std::move(ids));
    }
  }

  // OCR-style segmentation: line breaks plus Bernoulli splits, per group
  std::vector<std::vector<int>> segments;
  for (int g = 0; g < group_count; ++g) {
    for (auto& seg :
         fragment_groups(group_line_ids[static_cast<size_t>(g)], cfg.segment_split_prob, rng)) {
      segments.push_back(std::move(seg));
    }
  }

  // reading order: top to bottom, left to right over word boxes
  std::vector<int> order(recs.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](int a, int b) {
    const Box& ba = recs[static_cast<size_t>(a)].box;
    const Box& bb = recs[static_cast<size_t>(b)].box;
    return std::tie(ba.y0, ba.x0, a) < std::tie(bb.y0, bb.x0, b);
  });
  std::vector<int> new_id(recs.size());
  for (size_t r = 0; r < order.size(); ++r) {
    new_id[static_cast<size_t>(order[r])] = static_cast<int>(r);
  }

  GeneratedDocument doc;
  doc.raw.page_width = cfg.page_width;
  doc.raw.page_height = cfg.page_height;
  doc.raw.words.resize(recs.size());
  doc.raw.word_boxes.resize(recs.size());
  doc.raw.global_positions.resize(recs.size());
  doc.truth.entity_labels.resize(recs.size());
  doc.truth.semantic_groups.assign(static_cast<size_t>(group_count), {});
  for (size_t i = 0; i < recs.size(); ++i) {
    const int n = new_id[i];
    doc.raw.words[static_cast<size_t>(n)] = recs[i].text;
    doc.raw.word_boxes[static_cast<size_t>(n)] = recs[i].box;
    doc.raw.global_positions[static_cast<size_t>(n)] = n + 1;
    doc.truth.entity_labels[static_cast<size_t>(n)] =
        cfg.label_set[static_cast<size_t>(group_label[static_cast<size_t>(recs[i].group)])];
    doc.truth.semantic_groups[static_cast<size_t>(recs[i].group)].push_back(n);
  }
  for (auto& g : doc.truth.semantic_groups) {
    std::sort(g.begin(), g.end());
  }
  for (auto& seg : segments) {
    for (int& w : seg) {
      w = new_id[static_cast<size_t>(w)];
    }
    std::sort(seg.begin(), seg.end());
  }
  doc.raw.segments = std::move(segments);

  // extractive QA: ask for a group's opening line by its first word
  if (cfg.qa_per_doc > 0) {
    std::vector<int> candidates(static_cast<size_t>(group_count));
    std::iota(candidates.begin(), candidates.end(), 0);
    for (size_t i = candidates.size(); i > 1; --i) {
      std::swap(candidates[i - 1], candidates[rng.next_below(i)]);
    }
    const int take = std::min<int>(cfg.qa_per_doc, group_count);
    for (int q = 0; q < take; ++q) {
      const int g = candidates[static_cast<size_t>(q)];
      const auto& first_line = group_line_ids[static_cast<size_t>(g)].front();
      int lo = new_id[static_cast<size_t>(first_line.front())];
      int hi = lo;
      for (int w : first_line) {
        lo = std::min(lo, new_id[static_cast<size_t>(w)]);
        hi = std::max(hi, new_id[static_cast<size_t>(w)]);
      }
      require(hi - lo + 1 == static_cast<int>(first_line.size()),
              "generator: a line was torn apart in reading order");
      doc.truth.qa.push_back(
          QaExample{"find " + doc.raw.words[static_cast<size_t>(lo)], lo, hi});
    }
  }

  validate(doc.raw);
  validate(doc.truth, doc.raw);
  return doc;
}

}  // namespace

std::vector<std::string> default_vocab() {
  return {"amount", "total",  "date",    "name",   "invoice", "tax",    "paid",   "due",
          "city",   "state",  "zip",     "phone",  "email",   "street", "company", "client",
          "vendor", "item",   "price",   "qty",    "unit",    "code",   "ref",    "account",
          "balance", "credit", "debit",  "terms",  "notes",   "status", "order",  "ship",
          "bill",   "contact", "fax",    "title",  "dept",    "manager", "branch", "region",
          "period", "year",   "month",   "day",    "rate",    "fee",    "sum",    "net"};
}

nlohmann::json corpus_config_to_json(const CorpusConfig& cfg) {
  return {{"document_count", cfg.document_count},
          {"vocab", cfg.vocab},
          {"groups_min", cfg.groups_min},
          {"groups_max", cfg.groups_max},
          {"words_min", cfg.words_min},
          {"words_max", cfg.words_max},
          {"line_width_chars", cfg.line_width_chars},
          {"label_set", cfg.label_set},
          {"segment_split_prob", cfg.segment_split_prob},
          {"keyword_prob", cfg.keyword_prob},
          {"page_width", cfg.page_width},
          {"page_height", cfg.page_height},
          {"qa_per_doc", cfg.qa_per_doc},
          {"rng_seed", cfg.rng_seed}};
}

CorpusConfig corpus_config_from_json(const nlohmann::json& j) {
  CorpusConfig d;
  CorpusConfig cfg;
  cfg.document_count = j.value("document_count", d.document_count);
  cfg.vocab = j.value("vocab", d.vocab);
  cfg.groups_min = j.value("groups_min", d.groups_min);
  cfg.groups_max = j.value("groups_max", d.groups_max);
  cfg.words_min = j.value("words_min", d.words_min);
  cfg.words_max = j.value("words_max", d.words_max);
  cfg.line_width_chars = j.value("line_width_chars", d.line_width_chars);
  cfg.label_set = j.value("label_set", d.label_set);
  cfg.segment_split_prob = j.value("segment_split_prob", d.segment_split_prob);
  cfg.keyword_prob = j.value("keyword_prob", d.keyword_prob);
  cfg.page_width = j.value("page_width", d.page_width);
  cfg.page_height = j.value("page_height", d.page_height);
  cfg.qa_per_doc = j.value("qa_per_doc", d.qa_per_doc);
  cfg.rng_seed = j.value("rng_seed", d.rng_seed);
  return cfg;
}

std::vector<GeneratedDocument> generate_corpus(const CorpusConfig& cfg) {
  const std::vector<std::string> vocab = cfg.vocab.empty() ? default_vocab() : cfg.vocab;
  check_config(cfg, vocab);
  std::vector<GeneratedDocument> docs;
  docs.reserve(static_cast<size_t>(cfg.document_count));
  for (int d = 0; d < cfg.document_count; ++d) {
    docs.push_back(generate_one(cfg, vocab, static_cast<uint64_t>(d)));
  }
  return docs;
}

std::vector<std::vector<int>> fragment_groups(const std::vector<std::vector<int>>& group_lines,
                                              double split_prob, Rng& rng) {
  std::vector<std::vector<int>> segments;
  for (const auto& line : group_lines) {
    if (line.empty()) {
      continue;
    }
    std::vector<int> cur = {line[0]};
    for (size_t i = 1; i < line.size(); ++i) {
      if (rng.bernoulli(split_prob)) {
        segments.push_back(std::move(cur));
        cur = {line[i]};
      } else {
        cur.push_back(line[i]);
      }
    }
    segments.push_back(std::move(cur));
  }
  return segments;
}

GeneratedDocument refragment(const GeneratedDocument& doc, double split_prob, Rng& rng) {
  GeneratedDocument out = doc;
  std::vector<std::vector<int>> segments;
  for (const auto& seg : doc.raw.segments) {
    std::vector<int> members = seg;
    std::sort(members.begin(), members.end(), [&](int a, int b) {
      return doc.raw.global_positions[static_cast<size_t>(a)] <
             doc.raw.global_positions[static_cast<size_t>(b)];
    });
    for (auto& piece : fragment_groups({members}, split_prob, rng)) {
      segments.push_back(std::move(piece));
    }
  }
  out.raw.segments = std::move(segments);
  validate(out.raw);
  return out;
}

void save_corpus(const std::string& dir, const std::vector<GeneratedDocument>& docs,
                 const CorpusConfig& cfg) {
  std::filesystem::create_directories(dir);
  nlohmann::json manifest = {{"count", docs.size()},
                             {"seed", cfg.rng_seed},
                             {"config", corpus_config_to_json(cfg)}};
  {
    std::ofstream f(dir + "/manifest.json");
    require(f.good(), "save_corpus: cannot write to " + dir);
    f << manifest.dump(2) << "\n";
  }
  for (size_t i = 0; i < docs.size(); ++i) {
    char name[32];
    std::snprintf(name, sizeof(name), "doc_%05zu.json", i);
    std::ofstream f(dir + "/" + name);
    require(f.good(), "save_corpus: cannot write " + (dir + "/" + name));
    f << document_to_json(docs[i].raw, &docs[i].truth).dump(2) << "\n";
  }
}

std::vector<GeneratedDocument> load_corpus(const std::string& dir) {
  std::ifstream mf(dir + "/manifest.json");
  require(mf.good(), "load_corpus: missing manifest in " + dir);
  nlohmann::json manifest;
  try {
    mf >> manifest;
  } catch (const nlohmann::json::exception& e) {
    fail("load_corpus: malformed manifest.json in " + dir + ": " + e.what());
  }
  const size_t count = manifest.value("count", size_t{0});
  std::vector<GeneratedDocument> docs;
  docs.reserve(count);
  for (size_t i = 0; i < count; ++i) {
    char name[32];
    std::snprintf(name, sizeof(name), "doc_%05zu.json", i);
    const std::string path = dir + "/" + name;
    std::ifstream f(path);
    require(f.good(), "load_corpus: missing " + path);
    nlohmann::json j;
    try {
      f >> j;
    } catch (const nlohmann::json::exception& e) {
      fail("load_corpus: malformed JSON in " + path + ": " + e.what());
    }
    GeneratedDocument doc;
    doc.raw = document_from_json(j);
    if (has_truth(j)) {
      doc.truth = truth_from_json(j, doc.raw);
    } else {
      doc.truth.entity_labels.assign(doc.raw.word_count(), "other");
    }
    docs.push_back(std::move(doc));
  }
  return docs;
}

GeneratedDocument load_funsd_json(const std::string& path,
                                  const std::vector<std::string>& label_set) {
  std::ifstream f(path);
  require(f.good(), "funsd: cannot open " + path);
  nlohmann::json j;
  try {
    f >> j;
  } catch (const nlohmann::json::exception& e) {
    fail("funsd: malformed JSON in " + path + ": " + e.what());
  }
  require(j.contains("page") && j["page"].is_array() && j["page"].size() == 2,
          "funsd: missing page [w,h] in " + path);
  require(j.contains("form") && j["form"].is_array(), "funsd: missing form array in " + path);
  const int page_w = j["page"][0].get<int>();
  const int page_h = j["page"][1].get<int>();
  require(page_w > 0 && page_h > 0, "funsd: empty page in " + path);

  struct BlockWord {
    std::string text;
    Box box;
  };

  GeneratedDocument doc;
  doc.raw.page_width = page_w;
  doc.raw.page_height = page_h;

  for (const auto& block : j["form"]) {
    const std::string label = block.value("label", std::string{});
    if (std::find(label_set.begin(), label_set.end(), label) == label_set.end()) {
      std::string valid;
      for (const auto& l : label_set) {
        valid += (valid.empty() ? "" : ", ") + l;
      }
      fail("funsd: unknown label \"" + label + "\" in " + path + "; valid labels: " + valid);
    }
    require(block.contains("words") && block["words"].is_array(),
            "funsd: block without words array in " + path);

    std::vector<BlockWord> words;
    for (const auto& w : block["words"]) {
      std::string text = w.value("text", std::string{});
      if (text.empty()) {
        continue;  // real OCR dumps occasionally carry empty word stubs
      }
      require(w.contains("box") && w["box"].is_array() && w["box"].size() == 4,
              "funsd: word without box [x0,y0,x1,y1] in " + path);
      Box b{w["box"][0].get<int>(), w["box"][1].get<int>(), w["box"][2].get<int>(),
            w["box"][3].get<int>()};
      require(b.x0 <= b.x1 && b.y0 <= b.y1, "funsd: degenerate box in " + path);
      b.x0 = std::clamp(b.x0, 0, page_w);
      b.x1 = std::clamp(b.x1, 0, page_w);
      b.y0 = std::clamp(b.y0, 0, page_h);
      b.y1 = std::clamp(b.y1, 0, page_h);
      words.push_back(BlockWord{std::move(text), b});
    }
    if (words.empty()) {
      continue;
    }

    // block-local lines: provided, or recovered by y-overlap grouping
    std::vector<std::vector<int>> lines;
    if (block.contains("lines")) {
      lines = block["lines"].get<std::vector<std::vector<int>>>();
      std::vector<char> used(words.size(), 0);
      for (const auto& line : lines) {
        require(!line.empty(), "funsd: empty line entry in " + path);
        for (int w : line) {
          require(w >= 0 && w < static_cast<int>(words.size()) && !used[static_cast<size_t>(w)],
                  "funsd: line indices must cover block words exactly once in " + path);
          used[static_cast<size_t>(w)] = 1;
        }
      }
      for (char u : used) {
        require(u == 1, "funsd: line indices must cover block words exactly once in " + path);
      }
    } else {
      std::vector<int> ids(words.size());
      std::iota(ids.begin(), ids.end(), 0);
      std::sort(ids.begin(), ids.end(), [&](int a, int b) {
        const Box& ba = words[static_cast<size_t>(a)].box;
        const Box& bb = words[static_cast<size_t>(b)].box;
        return std::tie(ba.y0, ba.x0) < std::tie(bb.y0, bb.x0);
      });
      int line_y0 = 0, line_y1 = -1;
      for (int id : ids) {
        const Box& b = words[static_cast<size_t>(id)].box;
        const int overlap = std::min(line_y1, b.y1) - std::max(line_y0, b.y0);
        const int need = std::min(line_y1 - line_y0, b.y1 - b.y0) / 2;
        if (!lines.empty() && overlap >= need && overlap > 0) {
          lines.back().push_back(id);
          line_y0 = std::min(line_y0, b.y0);
          line_y1 = std::max(line_y1, b.y1);
        } else {
          lines.push_back({id});
          line_y0 = b.y0;
          line_y1 = b.y1;
        }
      }
    }
    for (auto& line : lines) {
      std::sort(line.begin(), line.end(), [&](int a, int b) {
        const Box& ba = words[static_cast<size_t>(a)].box;
        const Box& bb = words[static_cast<size_t>(b)].box;
        return std::tie(ba.x0, ba.y0) < std::tie(bb.x0, bb.y0);
      });
    }

    // append in reading order: this block's lines, top to bottom
    std::vector<int> group;
    for (const auto& line : lines) {
      std::vector<int> segment;
      for (int w : line) {
        const int id = static_cast<int>(doc.raw.words.size());
        doc.raw.words.push_back(words[static_cast<size_t>(w)].text);
        doc.raw.word_boxes.push_back(words[static_cast<size_t>(w)].box);
        doc.raw.global_positions.push_back(id + 1);
        doc.truth.entity_labels.push_back(label);
        segment.push_back(id);
        group.push_back(id);
      }
      doc.raw.segments.push_back(std::move(segment));
    }
    doc.truth.semantic_groups.push_back(std::move(group));
  }

  require(!doc.raw.words.empty(), "funsd: no words in " + path);
  validate(doc.raw);
  validate(doc.truth, doc.raw);
  return doc;
}

}  // namespace layoutlab
