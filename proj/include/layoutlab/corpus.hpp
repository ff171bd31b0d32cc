#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "json.hpp"

#include "layoutlab/doc_model.hpp"
#include "layoutlab/rng.hpp"

namespace layoutlab {

// Knobs for the synthetic form generator. Groups are laid out as blocks on a
// two-column grid; each group renders as one or more text lines, and lines
// (plus optional random splits) become the OCR-style segments.
struct CorpusConfig {
  int document_count = 8;
  std::vector<std::string> vocab;  // empty -> default_vocab()
  int groups_min = 4;
  int groups_max = 8;
  int words_min = 3;
  int words_max = 10;
  int line_width_chars = 24;
  std::vector<std::string> label_set = {"question", "answer", "header", "other"};
  double segment_split_prob = 0.15;
  // Probability that a group's first word spells out its label. This is the
  // content signal that makes entity labels learnable from text+layout.
  double keyword_prob = 1.0;
  int page_width = 1000;
  int page_height = 1000;
  int qa_per_doc = 2;
  uint64_t rng_seed = 1;
};

std::vector<std::string> default_vocab();

nlohmann::json corpus_config_to_json(const CorpusConfig& cfg);
CorpusConfig corpus_config_from_json(const nlohmann::json& j);

struct GeneratedDocument {
  RawDocument raw;
  GroundTruth truth;
};

// Deterministic under cfg.rng_seed; document d draws from stream (seed, d),
// so results do not depend on generation order or worker count.
std::vector<GeneratedDocument> generate_corpus(const CorpusConfig& cfg);

// Splits one group's laid-out lines into segments: always at line breaks,
// plus an extra split at each interior word boundary with probability
// split_prob. Word ids keep their order; contiguity is preserved.
std::vector<std::vector<int>> fragment_groups(const std::vector<std::vector<int>>& group_lines,
                                              double split_prob, Rng& rng);

// Same document and truth, but every segment additionally split at random
// word boundaries. Produces the "same content, worse segmentation" variant.
GeneratedDocument refragment(const GeneratedDocument& doc, double split_prob, Rng& rng);

// Directory layout: manifest.json {"count","seed","config"} plus one
// doc_NNNNN.json per document in the doc_model schema with a "truth" sibling.
void save_corpus(const std::string& dir, const std::vector<GeneratedDocument>& docs,
                 const CorpusConfig& cfg);
std::vector<GeneratedDocument> load_corpus(const std::string& dir);

// Reads one document in the FUNSD-style block schema:
//   {"page":[w,h],
//    "form":[{"label":"question",
//             "words":[{"text":"...","box":[x0,y0,x1,y1]},...],
//             "lines":[[0,1],[2,3]]        // optional, block-local indices
//            }, ...]}
// Each form entry becomes one semantic group; "lines" entries become text
// segments, or lines are recovered by y-overlap grouping when absent.
// Reading order: blocks in file order, lines top to bottom, words left to
// right within a line.
GeneratedDocument load_funsd_json(const std::string& path,
                                  const std::vector<std::string>& label_set = {
                                      "question", "answer", "header", "other"});

}  // namespace layoutlab
