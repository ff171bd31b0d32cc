#include "layoutlab/finetune.hpp"

#include <algorithm>
#include <cctype>
#include <numeric>
#include <sstream>

#include "layoutlab/rng.hpp"
#include "layoutlab/tensor.hpp"
#include "layoutlab/util.hpp"

namespace layoutlab {

namespace {

constexpr uint64_t kFinetuneStream = 0x66696e65ull;  // rng stream for fine-tuning

int argmax_row(const Tensor& t, int row) {
  const int cols = t.shape()[1];
  const double* p = t.data().data() + static_cast<size_t>(row) * cols;
  int best = 0;
  for (int j = 1; j < cols; ++j) {
    if (p[j] > p[best]) {
      best = j;
    }
  }
  return best;
}

std::string trimmed_lower(const std::string& s) {
  size_t b = 0;
  size_t e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) {
    ++b;
  }
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) {
    --e;
  }
  std::string out = s.substr(b, e - b);
  for (char& c : out) {
    c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  }
  return out;
}

void check_vocab(const ModelParams& params, const TokenizedDocument& doc) {
  for (int id : doc.tokens) {
    require(id >= 0 && id < params.cfg.vocab_size,
            "document token id " + std::to_string(id) + " exceeds the model vocabulary (" +
                std::to_string(params.cfg.vocab_size) +
                "): was it produced by a different tokenizer?");
  }
}

// rows of the start/end scores restricted to context tokens, as one logits row
Tensor context_scores_row(const Tensor& scores, int offset, int count) {
  std::vector<int> rows(static_cast<size_t>(count));
  std::iota(rows.begin(), rows.end(), offset);
  return transpose(gather_rows(scores, rows));  // [1, count]
}

int last_token_of_word(const TokenizedDocument& doc, int word) {
  int last = -1;
  for (size_t t = 0; t < doc.word_of_token.size(); ++t) {
    if (doc.word_of_token[t] == word) {
      last = static_cast<int>(t);
    }
  }
  return last;
}

}  // namespace

int BioLabelSet::find_class(const std::string& label) const {
  for (size_t i = 0; i < classes.size(); ++i) {
    if (classes[i] == label) {
      return static_cast<int>(i);
    }
  }
  return -1;
}

std::string BioLabelSet::tag_name(int tag) const {
  require(tag >= 0 && tag < tag_count(), "tag " + std::to_string(tag) + " out of range");
  if (tag == 0) {
    return "O";
  }
  const int c = (tag - 1) / 2;
  return (tag % 2 == 1 ? "B-" : "I-") + classes[static_cast<size_t>(c)];
}

BioLabelSet make_bio_labels(const std::vector<std::string>& label_set) {
  BioLabelSet out;
  for (const auto& l : label_set) {
    if (l != kOutsideLabel) {
      out.classes.push_back(l);
    }
  }
  require(!out.classes.empty(), "bio labels: no entity classes besides the outside label");
  return out;
}

std::vector<int> bio_encode(const std::vector<std::string>& entity_labels,
                            const std::vector<std::vector<int>>& groups,
                            const BioLabelSet& labels) {
  const int w = static_cast<int>(entity_labels.size());
  std::vector<int> tags(static_cast<size_t>(w), 0);
  for (const auto& group : groups) {
    require(!group.empty(), "bio_encode: empty group");
    int first = group[0];
    for (int i : group) {
      require(i >= 0 && i < w, "bio_encode: word index out of range");
      first = std::min(first, i);
    }
    const std::string& label = entity_labels[static_cast<size_t>(first)];
    if (label == kOutsideLabel) {
      continue;
    }
    const int c = labels.find_class(label);
    if (c < 0) {
      std::string valid;
      for (const auto& cls : labels.classes) {
        valid += (valid.empty() ? "" : ", ") + cls;
      }
      fail("bio_encode: unknown entity class '" + label + "' (expected one of: " + valid + ")");
    }
    for (int i : group) {
      tags[static_cast<size_t>(i)] = i == first ? labels.b_tag(c) : labels.i_tag(c);
    }
  }
  return tags;
}

std::vector<EntitySpan> bio_decode(const std::vector<int>& tags, const BioLabelSet& labels) {
  std::vector<EntitySpan> spans;
  int open_class = -1;
  int open_begin = -1;
  auto close_at = [&](int end) {
    if (open_class >= 0) {
      spans.push_back({open_begin, end, open_class});
      open_class = -1;
    }
  };
  for (size_t i = 0; i < tags.size(); ++i) {
    const int tag = tags[i];
    require(tag >= 0 && tag < labels.tag_count(),
            "bio_decode: tag " + std::to_string(tag) + " out of range");
    if (tag == 0) {
      close_at(static_cast<int>(i) - 1);
      continue;
    }
    const int c = (tag - 1) / 2;
    const bool begins = tag % 2 == 1;
    if (begins || open_class != c) {  // a B, or an I repaired into one
      close_at(static_cast<int>(i) - 1);
      open_class = c;
      open_begin = static_cast<int>(i);
    }
  }
  close_at(static_cast<int>(tags.size()) - 1);
  return spans;
}

std::vector<int> first_token_of_words(const TokenizedDocument& doc) {
  int max_word = -1;
  for (int w : doc.word_of_token) {
    max_word = std::max(max_word, w);
  }
  std::vector<int> first(static_cast<size_t>(max_word + 1), -1);
  for (size_t t = 0; t < doc.word_of_token.size(); ++t) {
    int& slot = first[static_cast<size_t>(doc.word_of_token[t])];
    if (slot < 0) {
      slot = static_cast<int>(t);
    }
  }
  return first;
}

std::vector<int> classify_tokens(const ModelParams& params, const TokenizedDocument& doc) {
  check_vocab(params, doc);
  const Tensor reps = encode(embed(build_model_input(doc), params), params);
  const std::vector<int> first = first_token_of_words(doc);
  std::vector<int> rows;
  rows.reserve(first.size());
  for (size_t w = 0; w < first.size(); ++w) {
    require(first[w] >= 0,
            "classify_tokens: word " + std::to_string(w) + " has no tokens (truncated?)");
    rows.push_back(first[w]);
  }
  const Tensor logits = sec_logits(gather_rows(reps, rows), params);
  std::vector<int> tags(first.size(), 0);
  for (size_t w = 0; w < first.size(); ++w) {
    tags[w] = argmax_row(logits, static_cast<int>(w));
  }
  return tags;
}

void TagTally::add(const std::vector<int>& pred, const std::vector<int>& gold) {
  require(pred.size() == gold.size(), "word_f1: prediction and gold tag counts differ (" +
                                          std::to_string(pred.size()) + " vs " +
                                          std::to_string(gold.size()) + ")");
  for (size_t i = 0; i < pred.size(); ++i) {
    if (pred[i] != 0) {
      ++pred_entity;
    }
    if (gold[i] != 0) {
      ++gold_entity;
    }
    if (gold[i] != 0 && pred[i] == gold[i]) {
      ++tp;
    }
  }
}

F1Result TagTally::result() const {
  F1Result r;
  r.precision = pred_entity > 0 ? static_cast<double>(tp) / static_cast<double>(pred_entity) : 0.0;
  r.recall = gold_entity > 0 ? static_cast<double>(tp) / static_cast<double>(gold_entity) : 0.0;
  r.f1 = r.precision + r.recall > 0.0
             ? 2.0 * r.precision * r.recall / (r.precision + r.recall)
             : 0.0;
  return r;
}

F1Result word_f1(const std::vector<int>& pred, const std::vector<int>& gold) {
  TagTally tally;
  tally.add(pred, gold);
  return tally.result();
}

F1Result entity_f1(const std::vector<int>& pred, const std::vector<int>& gold,
                   const BioLabelSet& labels) {
  require(pred.size() == gold.size(), "entity_f1: tag counts differ");
  const std::vector<EntitySpan> p = bio_decode(pred, labels);
  const std::vector<EntitySpan> g = bio_decode(gold, labels);
  int64_t tp = 0;
  for (const auto& span : p) {
    if (std::find(g.begin(), g.end(), span) != g.end()) {
      ++tp;
    }
  }
  F1Result r;
  r.precision = !p.empty() ? static_cast<double>(tp) / static_cast<double>(p.size()) : 0.0;
  r.recall = !g.empty() ? static_cast<double>(tp) / static_cast<double>(g.size()) : 0.0;
  r.f1 = r.precision + r.recall > 0.0
             ? 2.0 * r.precision * r.recall / (r.precision + r.recall)
             : 0.0;
  return r;
}

QaModelInput build_qa_input(const TokenizedDocument& doc, const std::vector<int>& question_tokens,
                            const EncoderConfig& ecfg) {
  const size_t total = 2 + question_tokens.size() + doc.tokens.size();
  require(static_cast<int>(total) <= ecfg.max_seq_len,
          "qa input of " + std::to_string(total) + " tokens exceeds max_seq_len " +
              std::to_string(ecfg.max_seq_len));
  QaModelInput out;
  ModelInput& in = out.input;
  const Box no_box{0, 0, 0, 0};
  in.token_ids.push_back(TokenizerModel::kClsId);
  in.position_rows.push_back(0);
  in.boxes.push_back(no_box);
  for (int id : question_tokens) {
    in.token_ids.push_back(id);
    in.position_rows.push_back(0);
    in.boxes.push_back(no_box);
  }
  in.token_ids.push_back(TokenizerModel::kSepId);
  in.position_rows.push_back(0);
  in.boxes.push_back(no_box);
  out.context_offset = static_cast<int>(in.token_ids.size());
  for (size_t t = 0; t < doc.tokens.size(); ++t) {
    in.token_ids.push_back(doc.tokens[t]);
    in.position_rows.push_back(doc.positions[t]);
    in.boxes.push_back(doc.boxes[t]);
  }
  return out;
}

QaPrediction qa_predict(const ModelParams& params, const TokenizedDocument& doc,
                        const std::vector<int>& question_tokens, int span_cap) {
  check_vocab(params, doc);
  const QaModelInput qi = build_qa_input(doc, question_tokens, params.cfg);
  const Tensor reps = encode(embed(qi.input, params), params);
  const int n = static_cast<int>(doc.tokens.size());
  const Tensor start = qa_start_scores(reps, params);
  const Tensor end = qa_end_scores(reps, params);

  bool found = false;
  double best = 0.0;
  int best_s = 0, best_e = 0;
  for (int s = 0; s < n; ++s) {
    const double ss = start.data()[static_cast<size_t>(qi.context_offset + s)];
    for (int e = s; e < n && e - s <= span_cap; ++e) {
      const double score = ss + end.data()[static_cast<size_t>(qi.context_offset + e)];
      if (!found || score > best) {
        found = true;
        best = score;
        best_s = s;
        best_e = e;
      }
    }
  }
  require(found, "qa_predict: no valid span");
  QaPrediction out;
  out.token_begin = best_s;
  out.token_end = best_e;
  out.word_begin = doc.word_of_token[static_cast<size_t>(best_s)];
  out.word_end = doc.word_of_token[static_cast<size_t>(best_e)];
  return out;
}

size_t levenshtein(const std::string& a, const std::string& b) {
  const size_t n = a.size();
  const size_t m = b.size();
  std::vector<size_t> prev(m + 1);
  std::vector<size_t> cur(m + 1);
  std::iota(prev.begin(), prev.end(), size_t{0});
  for (size_t i = 1; i <= n; ++i) {
    cur[0] = i;
    for (size_t j = 1; j <= m; ++j) {
      const size_t sub = prev[j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1);
      cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1, sub});
    }
    std::swap(prev, cur);
  }
  return prev[m];
}

double anls(const std::string& pred, const std::vector<std::string>& golds, double tau) {
  require(!golds.empty(), "anls: empty gold list");
  const std::string p = trimmed_lower(pred);
  double best = 0.0;
  for (const auto& gold : golds) {
    const std::string g = trimmed_lower(gold);
    double nls = 1.0;
    const size_t longest = std::max(p.size(), g.size());
    if (longest > 0) {
      nls = 1.0 - static_cast<double>(levenshtein(p, g)) / static_cast<double>(longest);
    }
    if (nls >= tau) {
      best = std::max(best, nls);
    }
  }
  return best;
}

std::vector<int> encode_text(const TokenizerModel& tok, const std::string& text) {
  std::vector<int> out;
  std::istringstream words(text);
  std::string word;
  while (words >> word) {
    const std::vector<int> ids = tok.encode_word(word);
    out.insert(out.end(), ids.begin(), ids.end());
  }
  return out;
}

void validate(const FinetuneConfig& cfg) {
  require(cfg.task == "sec" || cfg.task == "qa",
          "finetune config: task must be \"sec\" or \"qa\", got \"" + cfg.task + "\"");
  require(cfg.epochs >= 0, "finetune config: epochs must be non-negative");
  require(cfg.batch_size >= 1, "finetune config: batch_size must be positive");
  require(cfg.lr > 0.0, "finetune config: lr must be positive");
  require(cfg.weight_decay >= 0.0, "finetune config: weight_decay must be non-negative");
  require(cfg.span_cap >= 0, "finetune config: span_cap must be non-negative");
}

nlohmann::json finetune_config_to_json(const FinetuneConfig& cfg) {
  return nlohmann::json{{"task", cfg.task},
                        {"epochs", cfg.epochs},
                        {"batch_size", cfg.batch_size},
                        {"lr", cfg.lr},
                        {"weight_decay", cfg.weight_decay},
                        {"rng_seed", cfg.rng_seed},
                        {"span_cap", cfg.span_cap}};
}

FinetuneConfig finetune_config_from_json(const nlohmann::json& j) {
  FinetuneConfig d;
  FinetuneConfig cfg;
  cfg.task = j.value("task", d.task);
  cfg.epochs = j.value("epochs", d.epochs);
  cfg.batch_size = j.value("batch_size", d.batch_size);
  cfg.lr = j.value("lr", d.lr);
  cfg.weight_decay = j.value("weight_decay", d.weight_decay);
  cfg.rng_seed = j.value("rng_seed", d.rng_seed);
  cfg.span_cap = j.value("span_cap", d.span_cap);
  return cfg;
}

std::vector<SecExample> make_sec_examples(const std::vector<GeneratedDocument>& docs,
                                          const TokenizerModel& tok, const BioLabelSet& labels,
                                          int max_len) {
  std::vector<SecExample> out;
  out.reserve(docs.size());
  for (const auto& d : docs) {
    SecExample ex;
    ex.doc = tokenize(d.raw, tok, max_len);
    ex.gold_tags = bio_encode(d.truth.entity_labels, d.truth.semantic_groups, labels);
    out.push_back(std::move(ex));
  }
  return out;
}

std::vector<QaInstance> make_qa_instances(const std::vector<GeneratedDocument>& docs,
                                          const TokenizerModel& tok, int max_len) {
  std::vector<QaInstance> out;
  for (const auto& d : docs) {
    TokenizedDocument doc = tokenize(d.raw, tok, max_len);
    for (const auto& qa : d.truth.qa) {
      QaInstance inst;
      inst.doc = doc;
      inst.words = d.raw.words;
      inst.question_text = qa.question;
      inst.question = encode_text(tok, qa.question);
      inst.answer_word_begin = qa.answer_begin;
      inst.answer_word_end = qa.answer_end;
      out.push_back(std::move(inst));
    }
  }
  return out;
}

namespace {

// both loops share the epoch scaffolding: shuffle, batch, average, step
template <typename Example, typename LossFn>
std::vector<double> run_finetune(ModelParams& params, const std::vector<Example>& data,
                                 const FinetuneConfig& cfg, const LossFn& doc_loss) {
  validate(cfg);
  require(!data.empty(), "finetune: empty training set");
  AdamWConfig ocfg;
  ocfg.lr = cfg.lr;
  ocfg.weight_decay = cfg.weight_decay;
  AdamW opt(params.all(), ocfg);
  const Rng root(cfg.rng_seed, kFinetuneStream);
  const size_t n = data.size();
  const size_t batch = static_cast<size_t>(cfg.batch_size);

  std::vector<double> epoch_losses;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    Rng erng = root.fork(static_cast<uint64_t>(epoch));
    std::vector<size_t> order(n);
    std::iota(order.begin(), order.end(), size_t{0});
    Rng srng = erng.fork(0);
    for (size_t i = n; i > 1; --i) {
      const size_t j = static_cast<size_t>(srng.uniform_int(0, static_cast<int>(i) - 1));
      std::swap(order[i - 1], order[j]);
    }

    double loss_sum = 0.0;
    size_t loss_count = 0;
    for (size_t begin = 0; begin < n; begin += batch) {
      const size_t end = std::min(begin + batch, n);
      opt.zero_grad();
      std::vector<Tensor> losses;
      losses.reserve(end - begin);
      for (size_t i = begin; i < end; ++i) {
        Tensor l = doc_loss(data[order[i]]);
        loss_sum += l.value();
        ++loss_count;
        losses.push_back(l);
      }
      const Tensor batch_loss = scale(add_n(losses), 1.0 / static_cast<double>(losses.size()));
      backward(batch_loss);
      opt.step();
    }
    epoch_losses.push_back(loss_sum / static_cast<double>(loss_count));
  }
  return epoch_losses;
}

}  // namespace

std::vector<double> finetune_sec(ModelParams& params, const std::vector<SecExample>& data,
                                 const FinetuneConfig& cfg) {
  for (const auto& ex : data) {
    check_vocab(params, ex.doc);
    const std::vector<int> first = first_token_of_words(ex.doc);
    require(ex.gold_tags.size() == first.size(),
            "finetune: gold tags and document word counts differ");
    for (int tag : ex.gold_tags) {
      require(tag >= 0 && tag < params.cfg.num_bio_tags(),
              "finetune: gold tag " + std::to_string(tag) + " outside the model's tag space");
    }
  }
  return run_finetune(params, data, cfg, [&](const SecExample& ex) {
    const Tensor reps = encode(embed(build_model_input(ex.doc), params), params);
    const Tensor logits = sec_logits(gather_rows(reps, first_token_of_words(ex.doc)), params);
    return cross_entropy(logits, ex.gold_tags);
  });
}

std::vector<double> finetune_qa(ModelParams& params, const std::vector<QaInstance>& data,
                                const FinetuneConfig& cfg) {
  for (const auto& ex : data) {
    check_vocab(params, ex.doc);
    require(ex.answer_word_begin >= 0 && ex.answer_word_begin <= ex.answer_word_end,
            "finetune: invalid answer word range");
  }
  return run_finetune(params, data, cfg, [&](const QaInstance& ex) {
    const QaModelInput qi = build_qa_input(ex.doc, ex.question, params.cfg);
    const Tensor reps = encode(embed(qi.input, params), params);
    const int n = static_cast<int>(ex.doc.tokens.size());
    const std::vector<int> first = first_token_of_words(ex.doc);
    require(ex.answer_word_begin < static_cast<int>(first.size()),
            "finetune: answer words missing from document");
    const int t_begin = first[static_cast<size_t>(ex.answer_word_begin)];
    const int t_end = last_token_of_word(ex.doc, ex.answer_word_end);
    require(t_begin >= 0 && t_end >= t_begin, "finetune: answer words missing from document");
    const Tensor start_row =
        context_scores_row(qa_start_scores(reps, params), qi.context_offset, n);
    const Tensor end_row = context_scores_row(qa_end_scores(reps, params), qi.context_offset, n);
    return scale(add(cross_entropy(start_row, std::vector<int>{t_begin}),
                     cross_entropy(end_row, std::vector<int>{t_end})),
                 0.5);
  });
}

SecMetrics evaluate_sec(const ModelParams& params, const std::vector<SecExample>& data) {
  require(!data.empty(), "evaluate: empty data set");
  TagTally tally;
  for (const auto& ex : data) {
    tally.add(classify_tokens(params, ex.doc), ex.gold_tags);
  }
  const F1Result r = tally.result();
  return {r.precision, r.recall, r.f1};
}

QaMetrics evaluate_qa(const ModelParams& params, const std::vector<QaInstance>& data,
                      int span_cap) {
  require(!data.empty(), "evaluate: empty data set");
  double anls_sum = 0.0;
  int64_t exact = 0;
  for (const auto& ex : data) {
    const QaPrediction pred = qa_predict(params, ex.doc, ex.question, span_cap);
    std::string pred_text;
    for (int w = pred.word_begin; w <= pred.word_end; ++w) {
      pred_text += (pred_text.empty() ? "" : " ") + ex.words[static_cast<size_t>(w)];
    }
    std::string gold_text;
    for (int w = ex.answer_word_begin; w <= ex.answer_word_end; ++w) {
      gold_text += (gold_text.empty() ? "" : " ") + ex.words[static_cast<size_t>(w)];
    }
    anls_sum += anls(pred_text, {gold_text});
    if (pred.word_begin == ex.answer_word_begin && pred.word_end == ex.answer_word_end) {
      ++exact;
    }
  }
  QaMetrics m;
  m.anls = anls_sum / static_cast<double>(data.size());
  m.exact_match = static_cast<double>(exact) / static_cast<double>(data.size());
  return m;
}

nlohmann::ordered_json sec_metrics_to_json(const SecMetrics& m) {
  nlohmann::ordered_json j;
  j["task"] = "sec";
  j["precision"] = m.precision;
  j["recall"] = m.recall;
  j["f1"] = m.f1;
  return j;
}

nlohmann::ordered_json qa_metrics_to_json(const QaMetrics& m) {
  nlohmann::ordered_json j;
  j["task"] = "qa";
  j["anls"] = m.anls;
  j["exact_match"] = m.exact_match;
  return j;
}

}  // namespace layoutlab
