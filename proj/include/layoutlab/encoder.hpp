#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "json.hpp"

#include "layoutlab/doc_model.hpp"
#include "layoutlab/rng.hpp"
#include "layoutlab/tensor.hpp"

namespace layoutlab {

struct EncoderConfig {
  int vocab_size = 0;  // set from the tokenizer
  int hidden_dim = 64;
  int layers = 2;
  int heads = 4;
  int ffn_dim = 128;
  int max_seq_len = 512;
  int max_local_pos = 128;
  int grid_size = 1001;  // 0..1000 inclusive per 2D axis
  int num_entity_classes = 4;  // SEC head output = 2*classes + 1 BIO tags
  double dropout_prob = 0.0;
  double init_std = 0.02;
  double ln_eps = 1e-5;

  // pos1d table layout: row 0 = "no position" (cls/sep), rows 1..max_seq_len =
  // global positions, last row = the masked-position embedding
  int pos1d_rows() const { return max_seq_len + 2; }
  int masked_position_row() const { return max_seq_len + 1; }
  int predictor_dim() const { return hidden_dim / 4 > 0 ? hidden_dim / 4 : 1; }
  int num_bio_tags() const { return 2 * num_entity_classes + 1; }
};

void validate(const EncoderConfig& cfg);
nlohmann::json encoder_config_to_json(const EncoderConfig& cfg);
EncoderConfig encoder_config_from_json(const nlohmann::json& j);

struct LayerParams {
  Tensor ln1_g, ln1_b;
  Tensor wq, bq, wk, bk, wv, bv, wo, bo;
  Tensor ln2_g, ln2_b;
  Tensor ffn_w1, ffn_b1, ffn_w2, ffn_b2;
};

// Every learnable tensor of the model, including all task heads. named()
// fixes the checkpoint order and naming.
struct ModelParams {
  EncoderConfig cfg;

  Tensor token_table;            // V x d
  Tensor pos1d_table;            // pos1d_rows() x d
  std::array<Tensor, 6> pos2d;   // x0,y0,x1,y1,width,height tables, each grid_size x d
  std::vector<LayerParams> layers;

  // masked-token head: dense d->d, GELU, layer-norm affine, dense d->V
  Tensor mlm_w1, mlm_b1, mlm_ln_g, mlm_ln_b, mlm_w2, mlm_b2;
  // local-position head, same pattern, d -> max_local_pos
  Tensor lop_w1, lop_b1, lop_ln_g, lop_ln_b, lop_w2, lop_b2;
  // predictor: two-layer bottleneck d -> d/4 -> d
  Tensor pred_w1, pred_b1, pred_w2, pred_b2;
  // sequence-labeling head d -> num_bio_tags
  Tensor sec_w, sec_b;
  // extractive-QA start/end scorers d -> 1
  Tensor qa_start_w, qa_start_b, qa_end_w, qa_end_b;

  std::vector<NamedTensor> named() const;
  std::vector<Tensor> all() const;
};

// Gaussian(0, init_std^2) for every tensor, deterministic per seed; each
// tensor draws from its own forked stream so shapes don't leak across.
ModelParams init_params(const EncoderConfig& cfg, uint64_t seed);

// Deep copy: fresh tensors holding the same values (no storage sharing).
ModelParams clone_params(const ModelParams& src);

// Token-level model input. Masking policies rewrite token_ids (to [mask]) and
// position_rows (to the reserved row) before embedding; this struct is built
// only from tokenizer output, never from annotations.
struct ModelInput {
  std::vector<int> token_ids;
  std::vector<int> position_rows;  // index into pos1d_table
  std::vector<Box> boxes;          // normalized grid boxes
};

ModelInput build_model_input(const TokenizedDocument& doc);

// e_n = TE(t_n) + PE1D(o'_n) + sum of six PE2D feature lookups
// (x0, y0, x1, y1, width, height). Returns [N, d].
Tensor embed(const ModelInput& input, const ModelParams& params);

// Pre-norm transformer stack; attention_mask (when non-empty) marks attendable
// keys with 1, padding with 0. Zero layers return the input unchanged.
// dropout_rng enables dropout at cfg.dropout_prob (training only).
Tensor encode(const Tensor& embeddings, const ModelParams& params,
              const std::vector<int>& attention_mask = {}, Rng* dropout_rng = nullptr);

// task heads over encoder outputs
Tensor mlm_logits(const Tensor& reps, const ModelParams& params);        // [N, V]
Tensor lop_logits(const Tensor& reps, const ModelParams& params);        // [N, max_local_pos]
Tensor predictor_map(const Tensor& rows, const ModelParams& params);     // [n, d]
Tensor sec_logits(const Tensor& reps, const ModelParams& params);        // [N, tags]
Tensor qa_start_scores(const Tensor& reps, const ModelParams& params);   // [N, 1]
Tensor qa_end_scores(const Tensor& reps, const ModelParams& params);     // [N, 1]

// model checkpointing: tensor payloads plus config and tokenizer identity
void save_model(const std::string& path, const ModelParams& params, uint64_t tokenizer_hash,
                const nlohmann::json& extra_meta = nlohmann::json::object());
struct LoadedModel {
  ModelParams params;
  uint64_t tokenizer_hash = 0;
  nlohmann::json meta;
};
LoadedModel load_model(const std::string& path);

}  // namespace layoutlab
