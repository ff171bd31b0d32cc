#include "layoutlab/doc_model.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <set>
#include <unordered_map>

#include "layoutlab/util.hpp"

namespace layoutlab {

namespace {

// word indices ordered so that walking the result is reading order
std::vector<int> reading_order(const RawDocument& doc) {
  std::vector<int> order(doc.word_count());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](int a, int b) {
    return doc.global_positions[static_cast<size_t>(a)] <
           doc.global_positions[static_cast<size_t>(b)];
  });
  return order;
}

}  // namespace

void validate(const RawDocument& doc) {
  const size_t l = doc.words.size();
  require(doc.global_positions.size() == l && doc.word_boxes.size() == l,
          "document: words, positions and boxes must have equal length");
  require(doc.page_width > 0 && doc.page_height > 0, "document: page dimensions must be positive");

  std::set<int> positions;
  for (int p : doc.global_positions) {
    require(p >= 0, "document: negative global position");
    require(positions.insert(p).second,
            "document: duplicate global position " + std::to_string(p));
  }

  for (size_t i = 0; i < l; ++i) {
    const Box& b = doc.word_boxes[i];
    require(b.x0 <= b.x1 && b.y0 <= b.y1,
            "document: degenerate box for word " + std::to_string(i));
    require(b.x0 >= 0 && b.y0 >= 0 && b.x1 <= doc.page_width && b.y1 <= doc.page_height,
            "document: box outside page for word " + std::to_string(i));
  }

  // segments: every word in exactly one segment
  std::vector<int> owner(l, -1);
  for (size_t k = 0; k < doc.segments.size(); ++k) {
    require(!doc.segments[k].empty(), "document: empty segment " + std::to_string(k));
    for (int w : doc.segments[k]) {
      require(w >= 0 && w < static_cast<int>(l),
              "document: segment refers to missing word " + std::to_string(w));
      require(owner[static_cast<size_t>(w)] == -1,
              "document: word " + std::to_string(w) + " appears in two segments");
      owner[static_cast<size_t>(w)] = static_cast<int>(k);
    }
  }
  for (size_t w = 0; w < l; ++w) {
    require(owner[w] != -1, "document: word " + std::to_string(w) + " belongs to no segment");
  }

  // contiguity: each segment's words occupy a consecutive rank interval
  std::vector<int> rank(l, 0);
  {
    std::vector<int> order = reading_order(doc);
    for (size_t r = 0; r < order.size(); ++r) {
      rank[static_cast<size_t>(order[r])] = static_cast<int>(r);
    }
  }
  for (size_t k = 0; k < doc.segments.size(); ++k) {
    std::vector<int> ranks;
    ranks.reserve(doc.segments[k].size());
    for (int w : doc.segments[k]) {
      ranks.push_back(rank[static_cast<size_t>(w)]);
    }
    std::sort(ranks.begin(), ranks.end());
    for (size_t i = 1; i < ranks.size(); ++i) {
      require(ranks[i] == ranks[i - 1] + 1,
              "document: segment " + std::to_string(k) + " not contiguous in reading order");
    }
  }
}

void validate(const GroundTruth& truth, const RawDocument& doc) {
  const int l = static_cast<int>(doc.word_count());
  require(static_cast<int>(truth.entity_labels.size()) == l,
          "truth: entity_labels length " + std::to_string(truth.entity_labels.size()) +
              " does not match word count " + std::to_string(l));
  std::vector<char> seen(static_cast<size_t>(l), 0);
  for (size_t g = 0; g < truth.semantic_groups.size(); ++g) {
    require(!truth.semantic_groups[g].empty(), "truth: empty group " + std::to_string(g));
    for (int w : truth.semantic_groups[g]) {
      require(w >= 0 && w < l, "truth: group refers to missing word " + std::to_string(w));
      require(!seen[static_cast<size_t>(w)],
              "truth: word " + std::to_string(w) + " appears in two groups");
      seen[static_cast<size_t>(w)] = 1;
    }
  }
  for (const auto& qa : truth.qa) {
    require(qa.answer_begin >= 0 && qa.answer_begin <= qa.answer_end && qa.answer_end < l,
            "truth: qa answer range [" + std::to_string(qa.answer_begin) + "," +
                std::to_string(qa.answer_end) + "] out of bounds");
  }
}

// ---- BPE ----

std::vector<int> TokenizerModel::encode_word(const std::string& word) const {
  std::vector<std::string> syms;
  std::vector<int> ids;
  syms.reserve(word.size());
  ids.reserve(word.size());
  for (unsigned char c : word) {
    syms.emplace_back(1, static_cast<char>(c));
    ids.push_back(static_cast<int>(c));
  }
  for (size_t m = 0; m < merges.size(); ++m) {
    const auto& [left, right] = merges[m];
    size_t w = 0;
    for (size_t r = 0; r < syms.size(); ++r) {
      if (w > 0 && syms[w - 1] == left && syms[r] == right) {
        syms[w - 1] += syms[r];
        ids[w - 1] = kFirstMergeId + static_cast<int>(m);
      } else {
        if (w != r) {
          syms[w] = std::move(syms[r]);
          ids[w] = ids[r];
        }
        ++w;
      }
    }
    syms.resize(w);
    ids.resize(w);
  }
  return ids;
}

std::string TokenizerModel::token_text(int id) const {
  require(id >= 0 && id < vocab_size(),
          "tokenizer: id " + std::to_string(id) + " out of range");
  if (id < 256) {
    return std::string(1, static_cast<char>(id));
  }
  switch (id) {
    case kMaskId: return "[mask]";
    case kPadId: return "[pad]";
    case kClsId: return "[cls]";
    case kUnkId: return "[unk]";
    case kSepId: return "[sep]";
    default: break;
  }
  const auto& [left, right] = merges[static_cast<size_t>(id - kFirstMergeId)];
  return left + right;
}

uint64_t TokenizerModel::content_hash() const {
  uint64_t h = fnv1a64("bpe-v1");
  for (const auto& [l, r] : merges) {
    h = fnv1a64(l, h);
    h = fnv1a64("\x1f", h);
    h = fnv1a64(r, h);
    h = fnv1a64("\x1e", h);
  }
  return h;
}

TokenizerModel train_bpe(const std::vector<RawDocument>& corpus, int merge_count) {
  require(!corpus.empty(), "empty corpus");
  require(merge_count >= 0, "train_bpe: negative merge_count");

  // collapse to unique words with multiplicities; counting then scales with
  // vocabulary size, not corpus size
  std::map<std::string, long> word_freq;
  for (const auto& doc : corpus) {
    for (const auto& w : doc.words) {
      ++word_freq[w];
    }
  }

  struct Entry {
    std::vector<std::string> syms;
    long freq;
  };
  std::vector<Entry> entries;
  entries.reserve(word_freq.size());
  for (const auto& [word, freq] : word_freq) {
    Entry e;
    e.freq = freq;
    for (unsigned char c : word) {
      e.syms.emplace_back(1, static_cast<char>(c));
    }
    entries.push_back(std::move(e));
  }

  TokenizerModel tok;
  for (int m = 0; m < merge_count; ++m) {
    std::map<std::pair<std::string, std::string>, long> pair_freq;
    for (const auto& e : entries) {
      for (size_t i = 0; i + 1 < e.syms.size(); ++i) {
        pair_freq[{e.syms[i], e.syms[i + 1]}] += e.freq;
      }
    }
    if (pair_freq.empty()) {
      break;  // nothing left to merge; vocab stays smaller than requested
    }
    // max frequency; the std::map iterates pairs in lexicographic order, so
    // on ties the first (smallest) pair wins
    auto best = pair_freq.begin();
    for (auto it = pair_freq.begin(); it != pair_freq.end(); ++it) {
      if (it->second > best->second) {
        best = it;
      }
    }
    const auto [left, right] = best->first;
    tok.merges.emplace_back(left, right);
    for (auto& e : entries) {
      size_t w = 0;
      for (size_t r = 0; r < e.syms.size(); ++r) {
        if (w > 0 && e.syms[w - 1] == left && e.syms[r] == right) {
          e.syms[w - 1] += e.syms[r];
        } else {
          if (w != r) {
            e.syms[w] = std::move(e.syms[r]);
          }
          ++w;
        }
      }
      e.syms.resize(w);
    }
  }
  return tok;
}

nlohmann::json tokenizer_to_json(const TokenizerModel& tok) {
  nlohmann::json merges = nlohmann::json::array();
  for (const auto& [l, r] : tok.merges) {
    merges.push_back({l, r});
  }
  return {{"merges", merges},
          {"specials",
           {{"mask", TokenizerModel::kMaskId},
            {"pad", TokenizerModel::kPadId},
            {"cls", TokenizerModel::kClsId},
            {"unk", TokenizerModel::kUnkId},
            {"sep", TokenizerModel::kSepId}}}};
}

TokenizerModel tokenizer_from_json(const nlohmann::json& j) {
  require(j.contains("merges") && j["merges"].is_array(), "tokenizer json: missing merges array");
  TokenizerModel tok;
  for (const auto& m : j["merges"]) {
    require(m.is_array() && m.size() == 2 && m[0].is_string() && m[1].is_string(),
            "tokenizer json: each merge must be a [left, right] string pair");
    tok.merges.emplace_back(m[0].get<std::string>(), m[1].get<std::string>());
  }
  if (j.contains("specials")) {
    const auto& s = j["specials"];
    require(s.value("mask", TokenizerModel::kMaskId) == TokenizerModel::kMaskId &&
                s.value("pad", TokenizerModel::kPadId) == TokenizerModel::kPadId &&
                s.value("cls", TokenizerModel::kClsId) == TokenizerModel::kClsId &&
                s.value("unk", TokenizerModel::kUnkId) == TokenizerModel::kUnkId &&
                s.value("sep", TokenizerModel::kSepId) == TokenizerModel::kSepId,
            "tokenizer json: special token ids do not match this build");
  }
  return tok;
}

// ---- tokenization ----

TokenizedDocument tokenize(const RawDocument& doc, const TokenizerModel& tok, int max_len) {
  validate(doc);
  require(max_len >= 1, "tokenize: max_len must be positive");

  const std::vector<int> order = reading_order(doc);
  std::vector<int> rank(doc.word_count(), 0);
  for (size_t r = 0; r < order.size(); ++r) {
    rank[static_cast<size_t>(order[r])] = static_cast<int>(r);
  }

  // segments sorted by the rank of their first word; members sorted by rank
  std::vector<std::vector<int>> segs = doc.segments;
  for (auto& s : segs) {
    std::sort(s.begin(), s.end(), [&](int a, int b) {
      return rank[static_cast<size_t>(a)] < rank[static_cast<size_t>(b)];
    });
  }
  std::sort(segs.begin(), segs.end(), [&](const auto& a, const auto& b) {
    return rank[static_cast<size_t>(a.front())] < rank[static_cast<size_t>(b.front())];
  });

  TokenizedDocument out;
  for (const auto& seg : segs) {
    std::vector<int> seg_tokens;
    std::vector<int> seg_words;
    for (int w : seg) {
      std::vector<int> ids = tok.encode_word(doc.words[static_cast<size_t>(w)]);
      require(!ids.empty(), "empty tokenization for word " + std::to_string(w));
      for (int id : ids) {
        seg_tokens.push_back(id);
        seg_words.push_back(w);
      }
    }
    size_t take = seg_tokens.size();
    if (out.tokens.size() + take > static_cast<size_t>(max_len)) {
      if (!out.tokens.empty()) {
        break;  // cut at the segment boundary
      }
      take = static_cast<size_t>(max_len);  // lone oversized first segment
    }
    std::vector<int> token_ids;
    token_ids.reserve(take);
    for (size_t i = 0; i < take; ++i) {
      token_ids.push_back(static_cast<int>(out.tokens.size()));
      out.tokens.push_back(seg_tokens[i]);
      out.word_of_token.push_back(seg_words[i]);
      out.boxes.push_back(normalize_box(doc.word_boxes[static_cast<size_t>(seg_words[i])],
                                        doc.page_width, doc.page_height));
    }
    out.segments.push_back(std::move(token_ids));
    if (out.tokens.size() == static_cast<size_t>(max_len)) {
      break;
    }
  }
  out.positions.resize(out.tokens.size());
  std::iota(out.positions.begin(), out.positions.end(), 1);
  return out;
}

Box normalize_box(const Box& b, int page_width, int page_height) {
  require(page_width > 0 && page_height > 0, "normalize_box: zero page dimension");
  auto norm = [](int c, int dim) {
    int v = static_cast<int>(std::floor(static_cast<double>(c) / dim * 1000.0));
    return std::clamp(v, 0, 1000);
  };
  return Box{norm(b.x0, page_width), norm(b.y0, page_height), norm(b.x1, page_width),
             norm(b.y1, page_height)};
}

Box merged_box(const std::vector<int>& members, const std::vector<Box>& boxes) {
  require(!members.empty(), "merged_box: empty segment");
  Box hull;
  bool first = true;
  for (int i : members) {
    require(i >= 0 && i < static_cast<int>(boxes.size()),
            "merged_box: member " + std::to_string(i) + " out of range");
    const Box& b = boxes[static_cast<size_t>(i)];
    if (first) {
      hull = b;
      first = false;
    } else {
      hull.x0 = std::min(hull.x0, b.x0);
      hull.y0 = std::min(hull.y0, b.y0);
      hull.x1 = std::max(hull.x1, b.x1);
      hull.y1 = std::max(hull.y1, b.y1);
    }
  }
  return hull;
}

double segment_center_distance(const std::vector<int>& seg_a, const std::vector<int>& seg_b,
                               const std::vector<Box>& boxes) {
  const Box a = merged_box(seg_a, boxes);
  const Box b = merged_box(seg_b, boxes);
  return std::hypot(a.cx() - b.cx(), a.cy() - b.cy());
}

std::vector<int> local_positions(const std::vector<int>& segment_tokens) {
  for (size_t i = 1; i < segment_tokens.size(); ++i) {
    require(segment_tokens[i] == segment_tokens[i - 1] + 1,
            "local_positions: non-contiguous segment");
  }
  std::vector<int> out(segment_tokens.size());
  std::iota(out.begin(), out.end(), 1);
  return out;
}

// ---- JSON ----

namespace {

nlohmann::json box_to_json(const Box& b) { return {b.x0, b.y0, b.x1, b.y1}; }

Box box_from_json(const nlohmann::json& j, const char* where) {
  require(j.is_array() && j.size() == 4, std::string(where) + ": box must be [x0,y0,x1,y1]");
  return Box{j[0].get<int>(), j[1].get<int>(), j[2].get<int>(), j[3].get<int>()};
}

}  // namespace

nlohmann::json document_to_json(const RawDocument& doc, const GroundTruth* truth) {
  nlohmann::json j;
  j["words"] = doc.words;
  j["positions"] = doc.global_positions;
  nlohmann::json boxes = nlohmann::json::array();
  for (const Box& b : doc.word_boxes) {
    boxes.push_back(box_to_json(b));
  }
  j["boxes"] = std::move(boxes);
  j["segments"] = doc.segments;
  j["page"] = {doc.page_width, doc.page_height};
  if (truth != nullptr) {
    nlohmann::json t;
    t["groups"] = truth->semantic_groups;
    t["labels"] = truth->entity_labels;
    nlohmann::json qa = nlohmann::json::array();
    for (const auto& q : truth->qa) {
      qa.push_back({{"question", q.question}, {"start", q.answer_begin}, {"end", q.answer_end}});
    }
    t["qa"] = std::move(qa);
    j["truth"] = std::move(t);
  }
  return j;
}

RawDocument document_from_json(const nlohmann::json& j) {
  for (const char* key : {"words", "positions", "boxes", "segments", "page"}) {
    require(j.contains(key), std::string("document json: missing key \"") + key + "\"");
  }
  RawDocument doc;
  doc.words = j["words"].get<std::vector<std::string>>();
  doc.global_positions = j["positions"].get<std::vector<int>>();
  for (const auto& b : j["boxes"]) {
    doc.word_boxes.push_back(box_from_json(b, "document json"));
  }
  doc.segments = j["segments"].get<std::vector<std::vector<int>>>();
  require(j["page"].is_array() && j["page"].size() == 2, "document json: page must be [w,h]");
  doc.page_width = j["page"][0].get<int>();
  doc.page_height = j["page"][1].get<int>();
  validate(doc);
  return doc;
}

bool has_truth(const nlohmann::json& j) { return j.contains("truth"); }

GroundTruth truth_from_json(const nlohmann::json& j, const RawDocument& doc) {
  require(j.contains("truth"), "document json: missing key \"truth\"");
  const auto& t = j["truth"];
  GroundTruth truth;
  truth.semantic_groups = t.value("groups", std::vector<std::vector<int>>{});
  truth.entity_labels = t.value("labels", std::vector<std::string>{});
  if (t.contains("qa")) {
    for (const auto& q : t["qa"]) {
      truth.qa.push_back(QaExample{q.value("question", std::string{}), q.value("start", 0),
                                   q.value("end", 0)});
    }
  }
  validate(truth, doc);
  return truth;
}

}  // namespace layoutlab
