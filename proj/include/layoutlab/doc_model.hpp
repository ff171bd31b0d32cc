#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"

namespace layoutlab {

// Axis-aligned box, (x0,y0) top-left inclusive, (x1,y1) bottom-right. Used
// both for page-pixel boxes and for boxes on the normalized 0-1000 grid.
struct Box {
  int x0 = 0, y0 = 0, x1 = 0, y1 = 0;
  bool operator==(const Box&) const = default;
  double cx() const { return 0.5 * (x0 + x1); }
  double cy() const { return 0.5 * (y0 + y1); }
};

// A document as OCR hands it over: words with reading-order positions, boxes,
// and line-level text segments. This is the only document view the model may
// consume.
struct RawDocument {
  std::vector<std::string> words;
  std::vector<int> global_positions;       // distinct; ascending order = reading order
  std::vector<Box> word_boxes;             // page pixel units
  std::vector<std::vector<int>> segments;  // partition of word indices, contiguous runs
  int page_width = 0;
  int page_height = 0;

  size_t word_count() const { return words.size(); }
};

// Throws std::invalid_argument when any RawDocument invariant is broken.
void validate(const RawDocument& doc);

// Extractive question with an inclusive answer range over word indices.
struct QaExample {
  std::string question;
  int answer_begin = 0;
  int answer_end = 0;
};

// Annotation-side truth: semantic groups, per-word entity labels, QA pairs.
// Evaluation-only; model-input builders must never accept this type.
struct GroundTruth {
  std::vector<std::vector<int>> semantic_groups;
  std::vector<std::string> entity_labels;
  std::vector<QaExample> qa;
};

void validate(const GroundTruth& truth, const RawDocument& doc);

// Byte-level BPE tokenizer. Ids 0-255 are raw bytes, the five specials sit
// right above them, and each learned merge mints the next id in order.
struct TokenizerModel {
  static constexpr int kMaskId = 256;
  static constexpr int kPadId = 257;
  static constexpr int kClsId = 258;
  static constexpr int kUnkId = 259;
  static constexpr int kSepId = 260;
  static constexpr int kNumSpecials = 5;
  static constexpr int kFirstMergeId = 256 + kNumSpecials;

  // Learned merges as (left symbol, right symbol) byte strings, in merge
  // order; merge i produces token id kFirstMergeId + i.
  std::vector<std::pair<std::string, std::string>> merges;

  int vocab_size() const { return kFirstMergeId + static_cast<int>(merges.size()); }

  // Splits a word into token ids by replaying the merges in learned order.
  // Never emits special ids; every byte is representable, so there is no unk
  // path for plain text.
  std::vector<int> encode_word(const std::string& word) const;

  // Byte string for a token id; specials render as their bracketed names.
  std::string token_text(int id) const;

  uint64_t content_hash() const;
};

// Learns merge_count merges by iterated most-frequent-pair counting over all
// corpus words. Equal frequencies break toward the lexicographically smallest
// (left, right) pair. Stops early if no adjacent pair remains.
TokenizerModel train_bpe(const std::vector<RawDocument>& corpus, int merge_count);

nlohmann::json tokenizer_to_json(const TokenizerModel& tok);
TokenizerModel tokenizer_from_json(const nlohmann::json& j);

// The model-facing view after tokenization: ids, sequential 1-based global
// positions, per-token normalized boxes, and segments remapped to token
// indices. Tokens of one word share its box and segment.
struct TokenizedDocument {
  std::vector<int> tokens;
  std::vector<int> positions;  // 1..N
  std::vector<Box> boxes;      // normalized grid
  std::vector<std::vector<int>> segments;
  std::vector<int> word_of_token;  // token index -> source word index

  size_t token_count() const { return tokens.size(); }
};

// Tokenizes in reading order, reassigns global positions to 1..N, copies each
// word's normalized box onto all its tokens, and remaps segments. Documents
// longer than max_len are cut at a segment boundary (a lone oversized first
// segment is hard-cut to max_len tokens).
TokenizedDocument tokenize(const RawDocument& doc, const TokenizerModel& tok,
                           int max_len = 512);

// floor(coord / page_dim * 1000), clamped to [0, 1000].
Box normalize_box(const Box& b, int page_width, int page_height);

// Coordinate-wise hull (min x0, min y0, max x1, max y1) over member boxes.
Box merged_box(const std::vector<int>& members, const std::vector<Box>& boxes);

// Euclidean distance between the centers of two segments' merged boxes.
double segment_center_distance(const std::vector<int>& seg_a, const std::vector<int>& seg_b,
                               const std::vector<Box>& boxes);

// [1, 2, ..., n] for a segment of n contiguous token indices; rejects gaps.
std::vector<int> local_positions(const std::vector<int>& segment_tokens);

// JSON round trip. A document serializes to {"words","positions","boxes",
// "segments","page"}, with annotations under a sibling "truth" key when
// provided.
nlohmann::json document_to_json(const RawDocument& doc, const GroundTruth* truth = nullptr);
RawDocument document_from_json(const nlohmann::json& j);
bool has_truth(const nlohmann::json& j);
GroundTruth truth_from_json(const nlohmann::json& j, const RawDocument& doc);

}  // namespace layoutlab
