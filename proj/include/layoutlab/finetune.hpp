#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "json.hpp"

#include "layoutlab/corpus.hpp"
#include "layoutlab/doc_model.hpp"
#include "layoutlab/encoder.hpp"

namespace layoutlab {

// words outside every entity group carry this label and map to tag 0
inline constexpr const char* kOutsideLabel = "other";

// BIO tag space over entity classes: tag 0 is O, class i owns tags
// B = 1+2i and I = 2+2i.
struct BioLabelSet {
  std::vector<std::string> classes;

  int tag_count() const { return 2 * static_cast<int>(classes.size()) + 1; }
  int b_tag(int class_index) const { return 1 + 2 * class_index; }
  int i_tag(int class_index) const { return 2 + 2 * class_index; }
  int find_class(const std::string& label) const;  // -1 when absent
  std::string tag_name(int tag) const;             // "O", "B-question", ...
};

// Builds the tag space from a corpus label set, dropping the outside label.
BioLabelSet make_bio_labels(const std::vector<std::string>& label_set);

// Per-word tags: the reading-order first word of each labeled group opens
// with B, the rest continue with I; outside-labeled groups stay O.
std::vector<int> bio_encode(const std::vector<std::string>& entity_labels,
                            const std::vector<std::vector<int>>& groups,
                            const BioLabelSet& labels);

struct EntitySpan {
  int begin = 0;  // word indices, end inclusive
  int end = 0;
  int class_index = 0;

  bool operator==(const EntitySpan& o) const {
    return begin == o.begin && end == o.end && class_index == o.class_index;
  }
};

// Decodes tag sequences into spans, tolerating ill-formed input: an I with no
// open span of its class is repaired as B; O closes the open span.
std::vector<EntitySpan> bio_decode(const std::vector<int>& tags, const BioLabelSet& labels);

// First token index of every word (index = word id). A word that lost all its
// tokens to truncation maps to -1.
std::vector<int> first_token_of_words(const TokenizedDocument& doc);

// Per-word tag predictions: linear head over encoder outputs, each word read
// from its first token, ties broken toward the lowest tag index.
std::vector<int> classify_tokens(const ModelParams& params, const TokenizedDocument& doc);

struct F1Result {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
};

// Micro-averaged counts over words whose gold or predicted tag is not O; a
// true positive is an exact tag match. Accumulates across documents.
struct TagTally {
  int64_t tp = 0;
  int64_t pred_entity = 0;
  int64_t gold_entity = 0;

  void add(const std::vector<int>& pred, const std::vector<int>& gold);
  F1Result result() const;
};

F1Result word_f1(const std::vector<int>& pred, const std::vector<int>& gold);

// Span-level alternative: true positives are exact (begin, end, class) span
// matches after decoding.
F1Result entity_f1(const std::vector<int>& pred, const std::vector<int>& gold,
                   const BioLabelSet& labels);

// [cls] question [sep] context; specials and question tokens sit at position
// row 0 with an empty box, context tokens keep their document rows and boxes.
struct QaModelInput {
  ModelInput input;
  int context_offset = 0;  // row of the first context token
};

QaModelInput build_qa_input(const TokenizedDocument& doc, const std::vector<int>& question_tokens,
                            const EncoderConfig& ecfg);

struct QaPrediction {
  int word_begin = 0;  // inclusive word range in the context document
  int word_end = 0;
  int token_begin = 0;  // context-relative token range backing it
  int token_end = 0;
};

// Extractive span prediction: start/end scores per context token, answer =
// best (s, e) with s <= e and e - s <= span_cap, mapped back to words.
QaPrediction qa_predict(const ModelParams& params, const TokenizedDocument& doc,
                        const std::vector<int>& question_tokens, int span_cap = 30);

// Edit distance (insert/delete/substitute, unit costs).
size_t levenshtein(const std::string& a, const std::string& b);

// Similarity of a prediction against gold strings: 1 - dist/max_len per gold,
// zeroed below tau, best gold wins. Case-insensitive after trimming.
double anls(const std::string& pred, const std::vector<std::string>& golds, double tau = 0.5);

// tokenizes free text by splitting on spaces and encoding each word
std::vector<int> encode_text(const TokenizerModel& tok, const std::string& text);

struct FinetuneConfig {
  std::string task = "sec";  // "sec" or "qa"
  int epochs = 8;
  int batch_size = 4;
  double lr = 1e-3;
  double weight_decay = 0.01;
  uint64_t rng_seed = 0;
  int span_cap = 30;
};

void validate(const FinetuneConfig& cfg);
nlohmann::json finetune_config_to_json(const FinetuneConfig& cfg);
FinetuneConfig finetune_config_from_json(const nlohmann::json& j);

struct SecExample {
  TokenizedDocument doc;
  std::vector<int> gold_tags;  // one per word
};

struct QaInstance {
  TokenizedDocument doc;
  std::vector<std::string> words;  // raw words, for answer text
  std::string question_text;
  std::vector<int> question;  // token ids
  int answer_word_begin = 0;
  int answer_word_end = 0;  // inclusive
};

// Label construction from corpus annotations (evaluation-side only; model
// inputs never see the annotations).
std::vector<SecExample> make_sec_examples(const std::vector<GeneratedDocument>& docs,
                                          const TokenizerModel& tok, const BioLabelSet& labels,
                                          int max_len = 512);
std::vector<QaInstance> make_qa_instances(const std::vector<GeneratedDocument>& docs,
                                          const TokenizerModel& tok, int max_len = 512);

// Training loops: constant learning rate AdamW, documents shuffled per epoch,
// batches averaged into one step. Both mutate params in place and return the
// per-epoch mean training loss.
std::vector<double> finetune_sec(ModelParams& params, const std::vector<SecExample>& data,
                                 const FinetuneConfig& cfg);
std::vector<double> finetune_qa(ModelParams& params, const std::vector<QaInstance>& data,
                                const FinetuneConfig& cfg);

struct SecMetrics {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
};

struct QaMetrics {
  double anls = 0.0;
  double exact_match = 0.0;
};

SecMetrics evaluate_sec(const ModelParams& params, const std::vector<SecExample>& data);
QaMetrics evaluate_qa(const ModelParams& params, const std::vector<QaInstance>& data,
                      int span_cap = 30);

nlohmann::ordered_json sec_metrics_to_json(const SecMetrics& m);
nlohmann::ordered_json qa_metrics_to_json(const QaMetrics& m);

}  // namespace layoutlab
