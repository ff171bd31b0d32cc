#include "layoutlab/encoder.hpp"

#include <cmath>

#include "layoutlab/util.hpp"

namespace layoutlab {

void validate(const EncoderConfig& cfg) {
  require(cfg.vocab_size > 0, "encoder config: vocab_size must be positive");
  require(cfg.hidden_dim > 0 && cfg.layers >= 0 && cfg.heads > 0 && cfg.ffn_dim > 0,
          "encoder config: dimensions must be positive");
  require(cfg.hidden_dim % cfg.heads == 0,
          "encoder config: hidden_dim " + std::to_string(cfg.hidden_dim) +
              " not divisible by heads " + std::to_string(cfg.heads));
  require(cfg.max_seq_len > 0 && cfg.max_local_pos > 0 && cfg.grid_size > 1,
          "encoder config: sequence/grid limits must be positive");
  require(cfg.num_entity_classes > 0, "encoder config: num_entity_classes must be positive");
  require(cfg.dropout_prob >= 0.0 && cfg.dropout_prob < 1.0,
          "encoder config: dropout_prob outside [0,1)");
  require(cfg.init_std >= 0.0, "encoder config: negative init_std");
}

nlohmann::json encoder_config_to_json(const EncoderConfig& cfg) {
  return {{"vocab_size", cfg.vocab_size},
          {"hidden_dim", cfg.hidden_dim},
          {"layers", cfg.layers},
          {"heads", cfg.heads},
          {"ffn_dim", cfg.ffn_dim},
          {"max_seq_len", cfg.max_seq_len},
          {"max_local_pos", cfg.max_local_pos},
          {"grid_size", cfg.grid_size},
          {"num_entity_classes", cfg.num_entity_classes},
          {"dropout_prob", cfg.dropout_prob},
          {"init_std", cfg.init_std},
          {"ln_eps", cfg.ln_eps}};
}

EncoderConfig encoder_config_from_json(const nlohmann::json& j) {
  EncoderConfig d;
  EncoderConfig cfg;
  cfg.vocab_size = j.value("vocab_size", d.vocab_size);
  cfg.hidden_dim = j.value("hidden_dim", d.hidden_dim);
  cfg.layers = j.value("layers", d.layers);
  cfg.heads = j.value("heads", d.heads);
  cfg.ffn_dim = j.value("ffn_dim", d.ffn_dim);
  cfg.max_seq_len = j.value("max_seq_len", d.max_seq_len);
  cfg.max_local_pos = j.value("max_local_pos", d.max_local_pos);
  cfg.grid_size = j.value("grid_size", d.grid_size);
  cfg.num_entity_classes = j.value("num_entity_classes", d.num_entity_classes);
  cfg.dropout_prob = j.value("dropout_prob", d.dropout_prob);
  cfg.init_std = j.value("init_std", d.init_std);
  cfg.ln_eps = j.value("ln_eps", d.ln_eps);
  return cfg;
}

std::vector<NamedTensor> ModelParams::named() const {
  std::vector<NamedTensor> out;
  out.push_back({"token_table", token_table});
  out.push_back({"pos1d_table", pos1d_table});
  const char* feat[6] = {"x0", "y0", "x1", "y1", "w", "h"};
  for (int i = 0; i < 6; ++i) {
    out.push_back({std::string("pos2d_") + feat[i], pos2d[static_cast<size_t>(i)]});
  }
  for (size_t l = 0; l < layers.size(); ++l) {
    const std::string p = "layer" + std::to_string(l) + ".";
    const LayerParams& lp = layers[l];
    out.push_back({p + "ln1_g", lp.ln1_g});
    out.push_back({p + "ln1_b", lp.ln1_b});
    out.push_back({p + "wq", lp.wq});
    out.push_back({p + "bq", lp.bq});
    out.push_back({p + "wk", lp.wk});
    out.push_back({p + "bk", lp.bk});
    out.push_back({p + "wv", lp.wv});
    out.push_back({p + "bv", lp.bv});
    out.push_back({p + "wo", lp.wo});
    out.push_back({p + "bo", lp.bo});
    out.push_back({p + "ln2_g", lp.ln2_g});
    out.push_back({p + "ln2_b", lp.ln2_b});
    out.push_back({p + "ffn_w1", lp.ffn_w1});
    out.push_back({p + "ffn_b1", lp.ffn_b1});
    out.push_back({p + "ffn_w2", lp.ffn_w2});
    out.push_back({p + "ffn_b2", lp.ffn_b2});
  }
  out.push_back({"mlm.w1", mlm_w1});
  out.push_back({"mlm.b1", mlm_b1});
  out.push_back({"mlm.ln_g", mlm_ln_g});
  out.push_back({"mlm.ln_b", mlm_ln_b});
  out.push_back({"mlm.w2", mlm_w2});
  out.push_back({"mlm.b2", mlm_b2});
  out.push_back({"lop.w1", lop_w1});
  out.push_back({"lop.b1", lop_b1});
  out.push_back({"lop.ln_g", lop_ln_g});
  out.push_back({"lop.ln_b", lop_ln_b});
  out.push_back({"lop.w2", lop_w2});
  out.push_back({"lop.b2", lop_b2});
  out.push_back({"pred.w1", pred_w1});
  out.push_back({"pred.b1", pred_b1});
  out.push_back({"pred.w2", pred_w2});
  out.push_back({"pred.b2", pred_b2});
  out.push_back({"sec.w", sec_w});
  out.push_back({"sec.b", sec_b});
  out.push_back({"qa.start_w", qa_start_w});
  out.push_back({"qa.start_b", qa_start_b});
  out.push_back({"qa.end_w", qa_end_w});
  out.push_back({"qa.end_b", qa_end_b});
  return out;
}

std::vector<Tensor> ModelParams::all() const {
  std::vector<Tensor> out;
  for (auto& nt : named()) {
    out.push_back(nt.tensor);
  }
  return out;
}

ModelParams init_params(const EncoderConfig& cfg, uint64_t seed) {
  validate(cfg);
  const int d = cfg.hidden_dim;
  ModelParams p;
  p.cfg = cfg;
  p.layers.resize(static_cast<size_t>(cfg.layers));

  // allocate every tensor with its final shape, then fill in named() order
  p.token_table = Tensor::zeros({cfg.vocab_size, d}, true);
  p.pos1d_table = Tensor::zeros({cfg.pos1d_rows(), d}, true);
  for (auto& t : p.pos2d) {
    t = Tensor::zeros({cfg.grid_size, d}, true);
  }
  for (auto& lp : p.layers) {
    lp.ln1_g = Tensor::zeros({d}, true);
    lp.ln1_b = Tensor::zeros({d}, true);
    lp.wq = Tensor::zeros({d, d}, true);
    lp.bq = Tensor::zeros({d}, true);
    lp.wk = Tensor::zeros({d, d}, true);
    lp.bk = Tensor::zeros({d}, true);
    lp.wv = Tensor::zeros({d, d}, true);
    lp.bv = Tensor::zeros({d}, true);
    lp.wo = Tensor::zeros({d, d}, true);
    lp.bo = Tensor::zeros({d}, true);
    lp.ln2_g = Tensor::zeros({d}, true);
    lp.ln2_b = Tensor::zeros({d}, true);
    lp.ffn_w1 = Tensor::zeros({d, cfg.ffn_dim}, true);
    lp.ffn_b1 = Tensor::zeros({cfg.ffn_dim}, true);
    lp.ffn_w2 = Tensor::zeros({cfg.ffn_dim, d}, true);
    lp.ffn_b2 = Tensor::zeros({d}, true);
  }
  p.mlm_w1 = Tensor::zeros({d, d}, true);
  p.mlm_b1 = Tensor::zeros({d}, true);
  p.mlm_ln_g = Tensor::zeros({d}, true);
  p.mlm_ln_b = Tensor::zeros({d}, true);
  p.mlm_w2 = Tensor::zeros({d, cfg.vocab_size}, true);
  p.mlm_b2 = Tensor::zeros({cfg.vocab_size}, true);
  p.lop_w1 = Tensor::zeros({d, d}, true);
  p.lop_b1 = Tensor::zeros({d}, true);
  p.lop_ln_g = Tensor::zeros({d}, true);
  p.lop_ln_b = Tensor::zeros({d}, true);
  p.lop_w2 = Tensor::zeros({d, cfg.max_local_pos}, true);
  p.lop_b2 = Tensor::zeros({cfg.max_local_pos}, true);
  p.pred_w1 = Tensor::zeros({d, cfg.predictor_dim()}, true);
  p.pred_b1 = Tensor::zeros({cfg.predictor_dim()}, true);
  p.pred_w2 = Tensor::zeros({cfg.predictor_dim(), d}, true);
  p.pred_b2 = Tensor::zeros({d}, true);
  p.sec_w = Tensor::zeros({d, cfg.num_bio_tags()}, true);
  p.sec_b = Tensor::zeros({cfg.num_bio_tags()}, true);
  p.qa_start_w = Tensor::zeros({d, 1}, true);
  p.qa_start_b = Tensor::zeros({1}, true);
  p.qa_end_w = Tensor::zeros({d, 1}, true);
  p.qa_end_b = Tensor::zeros({1}, true);

  Rng root(seed);
  const auto named_tensors = p.named();
  for (size_t i = 0; i < named_tensors.size(); ++i) {
    Rng stream = root.fork(i);
    Tensor t = named_tensors[i].tensor;
    for (auto& x : t.data()) {
      x = stream.gauss() * cfg.init_std;
    }
  }
  return p;
}

ModelParams clone_params(const ModelParams& src) {
  EncoderConfig zeroed = src.cfg;
  zeroed.init_std = 0.0;
  ModelParams out = init_params(zeroed, 0);
  out.cfg = src.cfg;
  const auto from = src.named();
  auto to = out.named();
  for (size_t i = 0; i < from.size(); ++i) {
    to[i].tensor.data() = from[i].tensor.data();
  }
  return out;
}

ModelInput build_model_input(const TokenizedDocument& doc) {
  ModelInput in;
  in.token_ids = doc.tokens;
  in.position_rows = doc.positions;
  in.boxes = doc.boxes;
  return in;
}

Tensor embed(const ModelInput& input, const ModelParams& params) {
  const EncoderConfig& cfg = params.cfg;
  const size_t n = input.token_ids.size();
  require(n > 0, "embed: empty input");
  require(input.position_rows.size() == n && input.boxes.size() == n,
          "embed: token/position/box length mismatch");
  for (int id : input.token_ids) {
    require(id >= 0 && id < cfg.vocab_size,
            "embed: token id " + std::to_string(id) + " out of range [0," +
                std::to_string(cfg.vocab_size) + ")");
  }
  std::vector<int> x0s, y0s, x1s, y1s, ws, hs;
  x0s.reserve(n); y0s.reserve(n); x1s.reserve(n); y1s.reserve(n); ws.reserve(n); hs.reserve(n);
  for (const Box& b : input.boxes) {
    const int w = b.x1 - b.x0;
    const int h = b.y1 - b.y0;
    for (int c : {b.x0, b.y0, b.x1, b.y1, w, h}) {
      require(c >= 0 && c < cfg.grid_size,
              "embed: box feature " + std::to_string(c) + " out of range [0," +
                  std::to_string(cfg.grid_size) + ")");
    }
    x0s.push_back(b.x0); y0s.push_back(b.y0); x1s.push_back(b.x1); y1s.push_back(b.y1);
    ws.push_back(w); hs.push_back(h);
  }
  for (int r : input.position_rows) {
    require(r >= 0 && r < cfg.pos1d_rows(),
            "embed: position row " + std::to_string(r) + " out of range [0," +
                std::to_string(cfg.pos1d_rows()) + ")");
  }
  return add_n({embedding_lookup(params.token_table, input.token_ids),
                embedding_lookup(params.pos1d_table, input.position_rows),
                embedding_lookup(params.pos2d[0], x0s),
                embedding_lookup(params.pos2d[1], y0s),
                embedding_lookup(params.pos2d[2], x1s),
                embedding_lookup(params.pos2d[3], y1s),
                embedding_lookup(params.pos2d[4], ws),
                embedding_lookup(params.pos2d[5], hs)});
}

namespace {

Tensor affine_norm(const Tensor& x, const Tensor& g, const Tensor& b, double eps) {
  return add(mul(layer_norm(x, -1, eps), g), b);
}

Tensor attention(const Tensor& u, const LayerParams& lp, const EncoderConfig& cfg,
                 const std::vector<int>& attention_mask) {
  const int n = u.dim(0);
  const int d = cfg.hidden_dim;
  const int dh = d / cfg.heads;
  const Tensor q = add(matmul(u, lp.wq), lp.bq);
  const Tensor k = add(matmul(u, lp.wk), lp.bk);
  const Tensor v = add(matmul(u, lp.wv), lp.bv);

  Tensor mask_bias;  // [n, n] additive, broadcast-free
  if (!attention_mask.empty()) {
    require(static_cast<int>(attention_mask.size()) == n,
            "encode: attention mask length " + std::to_string(attention_mask.size()) +
                " does not match sequence length " + std::to_string(n));
    std::vector<double> bias(static_cast<size_t>(n) * n, 0.0);
    for (int j = 0; j < n; ++j) {
      if (attention_mask[static_cast<size_t>(j)] == 0) {
        for (int i = 0; i < n; ++i) {
          bias[static_cast<size_t>(i) * n + j] = -1e9;
        }
      }
    }
    mask_bias = Tensor::from({n, n}, std::move(bias));
  }

  std::vector<Tensor> head_outputs;
  head_outputs.reserve(static_cast<size_t>(cfg.heads));
  for (int h = 0; h < cfg.heads; ++h) {
    const Tensor qh = slice(q, 1, h * dh, (h + 1) * dh);
    const Tensor kh = slice(k, 1, h * dh, (h + 1) * dh);
    const Tensor vh = slice(v, 1, h * dh, (h + 1) * dh);
    Tensor scores = scale(matmul(qh, transpose(kh)), 1.0 / std::sqrt(static_cast<double>(dh)));
    if (mask_bias.defined()) {
      scores = add(scores, mask_bias);
    }
    head_outputs.push_back(matmul(softmax(scores, -1), vh));
  }
  const Tensor mixed = cfg.heads == 1 ? head_outputs[0] : concat(head_outputs, 1);
  return add(matmul(mixed, lp.wo), lp.bo);
}

}  // namespace

Tensor encode(const Tensor& embeddings, const ModelParams& params,
              const std::vector<int>& attention_mask, Rng* dropout_rng) {
  const EncoderConfig& cfg = params.cfg;
  require(embeddings.rank() == 2 && embeddings.dim(1) == cfg.hidden_dim,
          "encode: expected [N," + std::to_string(cfg.hidden_dim) + "] embeddings, got " +
              shape_str(embeddings.shape()));
  Tensor x = embeddings;
  for (const LayerParams& lp : params.layers) {
    Tensor a = attention(affine_norm(x, lp.ln1_g, lp.ln1_b, cfg.ln_eps), lp, cfg,
                         attention_mask);
    if (dropout_rng != nullptr && cfg.dropout_prob > 0.0) {
      a = dropout(a, cfg.dropout_prob, *dropout_rng);
    }
    x = add(x, a);
    Tensor f = affine_norm(x, lp.ln2_g, lp.ln2_b, cfg.ln_eps);
    f = add(matmul(gelu(add(matmul(f, lp.ffn_w1), lp.ffn_b1)), lp.ffn_w2), lp.ffn_b2);
    if (dropout_rng != nullptr && cfg.dropout_prob > 0.0) {
      f = dropout(f, cfg.dropout_prob, *dropout_rng);
    }
    x = add(x, f);
  }
  return x;
}

namespace {

// dense -> GELU -> layer-norm affine -> dense, the shared head pattern
Tensor nonlinear_head(const Tensor& reps, const Tensor& w1, const Tensor& b1, const Tensor& g,
                      const Tensor& b, const Tensor& w2, const Tensor& b2, double eps) {
  Tensor h = gelu(add(matmul(reps, w1), b1));
  h = add(mul(layer_norm(h, -1, eps), g), b);
  return add(matmul(h, w2), b2);
}

}  // namespace

Tensor mlm_logits(const Tensor& reps, const ModelParams& p) {
  return nonlinear_head(reps, p.mlm_w1, p.mlm_b1, p.mlm_ln_g, p.mlm_ln_b, p.mlm_w2, p.mlm_b2,
                        p.cfg.ln_eps);
}

Tensor lop_logits(const Tensor& reps, const ModelParams& p) {
  return nonlinear_head(reps, p.lop_w1, p.lop_b1, p.lop_ln_g, p.lop_ln_b, p.lop_w2, p.lop_b2,
                        p.cfg.ln_eps);
}

Tensor predictor_map(const Tensor& rows, const ModelParams& p) {
  return add(matmul(relu(add(matmul(rows, p.pred_w1), p.pred_b1)), p.pred_w2), p.pred_b2);
}

Tensor sec_logits(const Tensor& reps, const ModelParams& p) {
  return add(matmul(reps, p.sec_w), p.sec_b);
}

Tensor qa_start_scores(const Tensor& reps, const ModelParams& p) {
  return add(matmul(reps, p.qa_start_w), p.qa_start_b);
}

Tensor qa_end_scores(const Tensor& reps, const ModelParams& p) {
  return add(matmul(reps, p.qa_end_w), p.qa_end_b);
}

void save_model(const std::string& path, const ModelParams& params, uint64_t tokenizer_hash,
                const nlohmann::json& extra_meta) {
  nlohmann::json meta = extra_meta;
  meta["config"] = encoder_config_to_json(params.cfg);
  meta["tokenizer_hash"] = to_hex(tokenizer_hash);
  save_checkpoint(path, params.named(), meta);
}

LoadedModel load_model(const std::string& path) {
  Checkpoint ck = load_checkpoint(path);
  require(ck.meta.contains("config"), "load_model: checkpoint lacks a config in " + path);
  LoadedModel out;
  out.meta = ck.meta;
  out.tokenizer_hash =
      std::stoull(ck.meta.value("tokenizer_hash", std::string("0")), nullptr, 16);
  EncoderConfig cfg = encoder_config_from_json(ck.meta["config"]);
  out.params = init_params(cfg, 0);
  auto want = out.params.named();
  require(want.size() == ck.tensors.size(),
          "load_model: checkpoint tensor count mismatch in " + path);
  for (size_t i = 0; i < want.size(); ++i) {
    require(ck.tensors[i].name == want[i].name,
            "load_model: unexpected tensor \"" + ck.tensors[i].name + "\" (wanted \"" +
                want[i].name + "\") in " + path);
    require(ck.tensors[i].tensor.shape() == want[i].tensor.shape(),
            "load_model: shape mismatch for \"" + want[i].name + "\" in " + path);
    want[i].tensor.data() = ck.tensors[i].tensor.data();
  }
  return out;
}

}  // namespace layoutlab
