#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"

#include "layoutlab/doc_model.hpp"
#include "layoutlab/encoder.hpp"
#include "layoutlab/rng.hpp"
#include "layoutlab/tensor.hpp"

namespace layoutlab {

struct PretrainConfig {
  double p_mlm = 0.20;   // per-word masking probability
  double p_lop = 0.30;   // per-segment position-masking probability
  double theta_dis = 120.0;  // pair gate: center distance upper bound (exclusive)
  double theta_sim = 0.9;    // pair gate: cosine lower bound (exclusive)
  double alpha = 0.5;        // weight of the local-position loss
  double gamma = 0.5;        // weight of the segment-contrast loss
  int epochs = 1;
  bool tsc_final_epoch_only = true;  // contrast term active only in the last epoch
  int batch_size = 4;
  double lr = 1e-3;
  double weight_decay = 0.01;
  uint64_t rng_seed = 0;
  // replacement flavors for the tokens of a selected word: [mask] with
  // mask_token_prob, a random byte token with mask_random_prob, kept as-is
  // otherwise; the word still counts as masked and contributes targets
  double mask_token_prob = 1.0;
  double mask_random_prob = 0.0;
  // stop after any epoch whose masked-token and local-position accuracies
  // both reach this value (0 disables early stopping)
  double early_stop_acc = 0.0;
};

void validate(const PretrainConfig& cfg);
nlohmann::json pretrain_config_to_json(const PretrainConfig& cfg);
PretrainConfig pretrain_config_from_json(const nlohmann::json& j);

struct MlmTarget {
  int token = 0;        // index into the tokenized document
  int original_id = 0;  // token id before replacement
};

struct LopTarget {
  int token = 0;
  int local_pos = 0;  // 1-based rank of the token within its segment
  int segment = 0;
};

// One document's masking draw: which words lose their identity, which
// segments lose their global positions, and the resulting model input.
struct MaskPlan {
  std::vector<int> mlm_masked_words;     // source word indices
  std::vector<int> lop_masked_segments;  // segment indices
  std::vector<MlmTarget> mlm_targets;    // one per token of a masked word
  std::vector<LopTarget> lop_targets;    // one per token of a masked segment
  ModelInput masked;                     // combined view, ready to embed
};

// Draws the two masks independently: every word with probability p_mlm
// (all its tokens together), every segment with probability p_lop (all its
// token positions together). A token may be hit by both.
MaskPlan sample_masks(const TokenizedDocument& doc, const PretrainConfig& cfg,
                      const EncoderConfig& ecfg, Rng& rng);

// A loss that may have nothing to average over. Absent terms carry a plain
// zero and are excluded from epoch means.
struct LossTerm {
  Tensor value;
  bool present = false;
};

// Mean negative log-likelihood of the original ids under `logits`, whose rows
// align with `targets`. No targets -> zero value, absent flag.
LossTerm mlm_loss(const Tensor& logits, const std::vector<MlmTarget>& targets);

// Mean negative log-likelihood of the 1-based local positions; logits width
// is the number of supported positions. No targets -> zero value, absent flag.
LossTerm lop_loss(const Tensor& logits, const std::vector<LopTarget>& targets);

// Average-pooled token representations of one segment.
Tensor segment_representation(const Tensor& reps, const std::vector<int>& segment_tokens);

struct PairSet {
  std::vector<std::pair<int, int>> pairs;  // ordered (k, k'), k != k'

  bool empty() const { return pairs.empty(); }
  size_t size() const { return pairs.size(); }
};

// All ordered segment pairs whose hull centers lie strictly closer than
// theta_dis and whose pooled representations have cosine strictly above
// theta_sim. Gates read values only; zero-norm vectors never pass.
PairSet select_pairs(const std::vector<std::vector<int>>& segments,
                     const std::vector<Box>& token_boxes, const std::vector<Tensor>& pooled,
                     double theta_dis, double theta_sim);

using PredictorFn = std::function<Tensor(const Tensor&)>;

// Mean over pairs (k,k') of -cosine(z_k, v_k') where z_k average-pools the
// predictor-mapped tokens of k and v_k' is the detached pooled representation
// of k': gradient never flows through the target side.
LossTerm tsc_loss(const Tensor& reps, const std::vector<std::vector<int>>& segments,
                  const PairSet& pairs, const PredictorFn& predictor);

// mlm + alpha*lop (+ gamma*tsc when the contrast term is scheduled for this
// epoch: always if !tsc_final_epoch_only, otherwise only epoch == epochs-1).
Tensor total_loss(const LossTerm& mlm, const LossTerm& lop, const LossTerm& tsc,
                  const PretrainConfig& cfg, int epoch);

struct EpochReport {
  int epoch = 0;
  double mlm = 0.0;      // mean over documents that had masked words
  double lop = 0.0;      // mean over documents that had masked segments
  double tsc = 0.0;      // mean over documents that had gated pairs
  double total = 0.0;    // mean over all documents
  double mlm_acc = 0.0;  // masked-token top-1 accuracy over the epoch
  double lop_acc = 0.0;  // local-position top-1 accuracy over the epoch
};

nlohmann::ordered_json epoch_report_to_json(const EpochReport& r);

struct PretrainResult {
  ModelParams params;
  // parameters as they stood when the last completed epoch began; lets
  // callers compare representations before/after the contrast-active epoch
  ModelParams before_last_epoch;
  std::vector<EpochReport> reports;
};

// Full pre-training loop: documents shuffled per epoch, batches of
// batch_size averaged into one optimizer step, AdamW with the learning rate
// decaying linearly to zero across all planned steps. Deterministic per seed.
PretrainResult pretrain(const std::vector<TokenizedDocument>& docs, const EncoderConfig& ecfg,
                        const PretrainConfig& pcfg);

}  // namespace layoutlab
