#include "layoutlab/objectives.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "layoutlab/util.hpp"

namespace layoutlab {

namespace {

constexpr uint64_t kTrainStream = 0x747261696eull;  // rng stream for the training loop

// gate similarity on raw values; callers treat a zero-norm side as "no
// direction", never as a match
bool gate_cosine(const std::vector<double>& u, const std::vector<double>& v, double* out) {
  double dot = 0.0, nu = 0.0, nv = 0.0;
  for (size_t i = 0; i < u.size(); ++i) {
    dot += u[i] * v[i];
    nu += u[i] * u[i];
    nv += v[i] * v[i];
  }
  if (nu == 0.0 || nv == 0.0) {
    return false;
  }
  *out = dot / (std::sqrt(nu) * std::sqrt(nv));
  return true;
}

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

struct RunningMean {
  double sum = 0.0;
  int count = 0;

  void add(double x) {
    sum += x;
    ++count;
  }
  double mean() const { return count > 0 ? sum / count : 0.0; }
};

}  // namespace

void validate(const PretrainConfig& cfg) {
  require(cfg.p_mlm >= 0.0 && cfg.p_mlm <= 1.0, "pretrain config: p_mlm must be in [0,1]");
  require(cfg.p_lop >= 0.0 && cfg.p_lop <= 1.0, "pretrain config: p_lop must be in [0,1]");
  require(cfg.theta_dis >= 0.0, "pretrain config: theta_dis must be non-negative");
  require(cfg.theta_sim >= -1.0 && cfg.theta_sim <= 1.0,
          "pretrain config: theta_sim must be in [-1,1]");
  require(cfg.alpha >= 0.0, "pretrain config: alpha must be non-negative");
  require(cfg.gamma >= 0.0, "pretrain config: gamma must be non-negative");
  require(cfg.epochs >= 0, "pretrain config: epochs must be non-negative");
  require(cfg.batch_size >= 1, "pretrain config: batch_size must be positive");
  require(cfg.lr > 0.0, "pretrain config: lr must be positive");
  require(cfg.weight_decay >= 0.0, "pretrain config: weight_decay must be non-negative");
  require(cfg.mask_token_prob >= 0.0 && cfg.mask_random_prob >= 0.0 &&
              cfg.mask_token_prob + cfg.mask_random_prob <= 1.0 + 1e-12,
          "pretrain config: replacement flavor probabilities must be in [0,1] and sum to at "
          "most 1");
  require(cfg.early_stop_acc >= 0.0 && cfg.early_stop_acc <= 1.0,
          "pretrain config: early_stop_acc must be in [0,1]");
}

nlohmann::json pretrain_config_to_json(const PretrainConfig& cfg) {
  return nlohmann::json{{"p_mlm", cfg.p_mlm},
                        {"p_lop", cfg.p_lop},
                        {"theta_dis", cfg.theta_dis},
                        {"theta_sim", cfg.theta_sim},
                        {"alpha", cfg.alpha},
                        {"gamma", cfg.gamma},
                        {"epochs", cfg.epochs},
                        {"tsc_final_epoch_only", cfg.tsc_final_epoch_only},
                        {"batch_size", cfg.batch_size},
                        {"lr", cfg.lr},
                        {"weight_decay", cfg.weight_decay},
                        {"rng_seed", cfg.rng_seed},
                        {"mask_token_prob", cfg.mask_token_prob},
                        {"mask_random_prob", cfg.mask_random_prob},
                        {"early_stop_acc", cfg.early_stop_acc}};
}

PretrainConfig pretrain_config_from_json(const nlohmann::json& j) {
  PretrainConfig d;
  PretrainConfig cfg;
  cfg.p_mlm = j.value("p_mlm", d.p_mlm);
  cfg.p_lop = j.value("p_lop", d.p_lop);
  cfg.theta_dis = j.value("theta_dis", d.theta_dis);
  cfg.theta_sim = j.value("theta_sim", d.theta_sim);
  cfg.alpha = j.value("alpha", d.alpha);
  cfg.gamma = j.value("gamma", d.gamma);
  cfg.epochs = j.value("epochs", d.epochs);
  cfg.tsc_final_epoch_only = j.value("tsc_final_epoch_only", d.tsc_final_epoch_only);
  cfg.batch_size = j.value("batch_size", d.batch_size);
  cfg.lr = j.value("lr", d.lr);
  cfg.weight_decay = j.value("weight_decay", d.weight_decay);
  cfg.rng_seed = j.value("rng_seed", d.rng_seed);
  cfg.mask_token_prob = j.value("mask_token_prob", d.mask_token_prob);
  cfg.mask_random_prob = j.value("mask_random_prob", d.mask_random_prob);
  cfg.early_stop_acc = j.value("early_stop_acc", d.early_stop_acc);
  return cfg;
}

MaskPlan sample_masks(const TokenizedDocument& doc, const PretrainConfig& cfg,
                      const EncoderConfig& ecfg, Rng& rng) {
  require(!doc.tokens.empty(), "sample_masks: empty document");
  MaskPlan plan;
  plan.masked.token_ids = doc.tokens;
  plan.masked.position_rows = doc.positions;
  plan.masked.boxes = doc.boxes;

  // distinct words in token order; tokens of one word are consecutive
  std::vector<int> words;
  for (int w : doc.word_of_token) {
    if (words.empty() || words.back() != w) {
      words.push_back(w);
    }
  }

  for (int w : words) {
    if (rng.bernoulli(cfg.p_mlm)) {
      plan.mlm_masked_words.push_back(w);
    }
  }
  for (size_t s = 0; s < doc.segments.size(); ++s) {
    if (rng.bernoulli(cfg.p_lop)) {
      plan.lop_masked_segments.push_back(static_cast<int>(s));
    }
  }

  // word replacement: all tokens of a selected word share one flavor draw so
  // the word stays atomic in the model's view
  std::vector<int> flavor;  // 0 = [mask], 1 = random byte token, 2 = keep
  flavor.reserve(plan.mlm_masked_words.size());
  const bool split_active = cfg.mask_token_prob < 1.0;
  for (size_t i = 0; i < plan.mlm_masked_words.size(); ++i) {
    if (!split_active) {
      flavor.push_back(0);
      continue;
    }
    const double u = rng.next_double();
    if (u < cfg.mask_token_prob) {
      flavor.push_back(0);
    } else if (u < cfg.mask_token_prob + cfg.mask_random_prob) {
      flavor.push_back(1);
    } else {
      flavor.push_back(2);
    }
  }

  for (size_t i = 0; i < plan.mlm_masked_words.size(); ++i) {
    const int w = plan.mlm_masked_words[i];
    for (size_t t = 0; t < doc.tokens.size(); ++t) {
      if (doc.word_of_token[t] != w) {
        continue;
      }
      plan.mlm_targets.push_back({static_cast<int>(t), doc.tokens[t]});
      if (flavor[i] == 0) {
        plan.masked.token_ids[t] = TokenizerModel::kMaskId;
      } else if (flavor[i] == 1) {
        plan.masked.token_ids[t] = rng.uniform_int(0, 255);
      }
    }
  }

  for (int s : plan.lop_masked_segments) {
    const auto& seg = doc.segments[static_cast<size_t>(s)];
    for (size_t j = 0; j < seg.size(); ++j) {
      const int t = seg[j];
      plan.lop_targets.push_back({t, static_cast<int>(j) + 1, s});
      plan.masked.position_rows[static_cast<size_t>(t)] = ecfg.masked_position_row();
    }
  }
  return plan;
}

LossTerm mlm_loss(const Tensor& logits, const std::vector<MlmTarget>& targets) {
  if (targets.empty()) {
    return {Tensor::scalar(0.0), false};
  }
  require(logits.rank() == 2 && logits.shape()[0] == static_cast<int>(targets.size()),
          "mlm_loss: logits rows must match target count");
  std::vector<int> ids;
  ids.reserve(targets.size());
  for (const auto& t : targets) {
    ids.push_back(t.original_id);
  }
  return {cross_entropy(logits, ids), true};
}

LossTerm lop_loss(const Tensor& logits, const std::vector<LopTarget>& targets) {
  if (targets.empty()) {
    return {Tensor::scalar(0.0), false};
  }
  require(logits.rank() == 2 && logits.shape()[0] == static_cast<int>(targets.size()),
          "lop_loss: logits rows must match target count");
  const int classes = logits.shape()[1];
  std::vector<int> positions;
  positions.reserve(targets.size());
  for (const auto& t : targets) {
    require(t.local_pos >= 1, "lop_loss: local positions are 1-based");
    require(t.local_pos <= classes,
            "lop_loss: segment " + std::to_string(t.segment) + " has local position " +
                std::to_string(t.local_pos) + " beyond the " + std::to_string(classes) +
                " positions the head supports");
    positions.push_back(t.local_pos - 1);
  }
  return {cross_entropy(logits, positions), true};
}

Tensor segment_representation(const Tensor& reps, const std::vector<int>& segment_tokens) {
  require(!segment_tokens.empty(), "segment_representation: empty segment");
  return mean_pool(reps, segment_tokens);
}

PairSet select_pairs(const std::vector<std::vector<int>>& segments,
                     const std::vector<Box>& token_boxes, const std::vector<Tensor>& pooled,
                     double theta_dis, double theta_sim) {
  require(pooled.size() == segments.size(),
          "select_pairs: one pooled vector per segment required");
  const size_t k = segments.size();
  PairSet out;
  for (size_t a = 0; a < k; ++a) {
    for (size_t b = 0; b < k; ++b) {
      if (a == b) {
        continue;
      }
      const double dist = segment_center_distance(segments[a], segments[b], token_boxes);
      if (!(dist < theta_dis)) {
        continue;
      }
      double sim = 0.0;
      if (!gate_cosine(pooled[a].data(), pooled[b].data(), &sim)) {
        continue;
      }
      if (sim > theta_sim) {
        out.pairs.emplace_back(static_cast<int>(a), static_cast<int>(b));
      }
    }
  }
  return out;
}

LossTerm tsc_loss(const Tensor& reps, const std::vector<std::vector<int>>& segments,
                  const PairSet& pairs, const PredictorFn& predictor) {
  if (pairs.empty()) {
    return {Tensor::scalar(0.0), false};
  }
  const Tensor mapped = predictor(reps);
  std::vector<Tensor> terms;
  terms.reserve(pairs.size());
  for (const auto& [k, kp] : pairs.pairs) {
    require(k >= 0 && k < static_cast<int>(segments.size()) && kp >= 0 &&
                kp < static_cast<int>(segments.size()),
            "tsc_loss: pair index out of range");
    const Tensor z = segment_representation(mapped, segments[static_cast<size_t>(k)]);
    const Tensor v = detach(segment_representation(reps, segments[static_cast<size_t>(kp)]));
    terms.push_back(cosine_sim(z, v));
  }
  return {scale(add_n(terms), -1.0 / static_cast<double>(terms.size())), true};
}

Tensor total_loss(const LossTerm& mlm, const LossTerm& lop, const LossTerm& tsc,
                  const PretrainConfig& cfg, int epoch) {
  Tensor out = add(mlm.value, scale(lop.value, cfg.alpha));
  const bool include_tsc = !cfg.tsc_final_epoch_only || epoch == cfg.epochs - 1;
  if (include_tsc) {
    out = add(out, scale(tsc.value, cfg.gamma));
  }
  return out;
}

nlohmann::ordered_json epoch_report_to_json(const EpochReport& r) {
  nlohmann::ordered_json j;
  j["epoch"] = r.epoch;
  j["mlm"] = r.mlm;
  j["lop"] = r.lop;
  j["tsc"] = r.tsc;
  j["total"] = r.total;
  j["mlm_acc"] = r.mlm_acc;
  j["lop_acc"] = r.lop_acc;
  return j;
}

PretrainResult pretrain(const std::vector<TokenizedDocument>& docs, const EncoderConfig& ecfg,
                        const PretrainConfig& pcfg) {
  validate(ecfg);
  validate(pcfg);
  require(!docs.empty(), "pretrain: empty corpus");

  PretrainResult res;
  res.params = init_params(ecfg, pcfg.rng_seed);
  res.before_last_epoch = clone_params(res.params);

  AdamWConfig ocfg;
  ocfg.lr = pcfg.lr;
  ocfg.weight_decay = pcfg.weight_decay;
  AdamW opt(res.params.all(), ocfg);

  const Rng root(pcfg.rng_seed, kTrainStream);
  const size_t n = docs.size();
  const size_t batch = static_cast<size_t>(pcfg.batch_size);
  const size_t batches_per_epoch = (n + batch - 1) / batch;
  const double total_steps =
      static_cast<double>(pcfg.epochs) * static_cast<double>(batches_per_epoch);
  int64_t step = 0;

  const PredictorFn predictor = [&](const Tensor& rows) {
    return predictor_map(rows, res.params);
  };

  for (int epoch = 0; epoch < pcfg.epochs; ++epoch) {
    res.before_last_epoch = clone_params(res.params);
    const bool tsc_active = !pcfg.tsc_final_epoch_only || epoch == pcfg.epochs - 1;
    Rng erng = root.fork(static_cast<uint64_t>(epoch));

    std::vector<size_t> order(n);
    std::iota(order.begin(), order.end(), size_t{0});
    Rng srng = erng.fork(0);
    for (size_t i = n; i > 1; --i) {
      const size_t j = static_cast<size_t>(srng.uniform_int(0, static_cast<int>(i) - 1));
      std::swap(order[i - 1], order[j]);
    }

    RunningMean mlm_mean, lop_mean, tsc_mean, total_mean;
    int64_t mlm_hits = 0, mlm_total = 0, lop_hits = 0, lop_total = 0;

    for (size_t b = 0; b < batches_per_epoch; ++b) {
      const size_t begin = b * batch;
      const size_t end = std::min(begin + batch, n);
      opt.zero_grad();
      std::vector<Tensor> doc_losses;
      doc_losses.reserve(end - begin);

      for (size_t i = begin; i < end; ++i) {
        const size_t doc_index = order[i];
        const TokenizedDocument& doc = docs[doc_index];
        // streams keyed by document identity so the draw is independent of
        // the batch partition
        Rng drng = erng.fork(1 + doc_index);
        Rng mask_rng = drng.fork(0);
        Rng dropout_rng = drng.fork(1);

        const MaskPlan plan = sample_masks(doc, pcfg, ecfg, mask_rng);
        const Tensor reps =
            encode(embed(plan.masked, res.params), res.params, {},
                   ecfg.dropout_prob > 0.0 ? &dropout_rng : nullptr);

        LossTerm lm{Tensor::scalar(0.0), false};
        if (!plan.mlm_targets.empty()) {
          std::vector<int> rows;
          rows.reserve(plan.mlm_targets.size());
          for (const auto& t : plan.mlm_targets) {
            rows.push_back(t.token);
          }
          const Tensor logits = mlm_logits(gather_rows(reps, rows), res.params);
          lm = mlm_loss(logits, plan.mlm_targets);
          for (size_t r = 0; r < plan.mlm_targets.size(); ++r) {
            mlm_hits += argmax_row(logits, static_cast<int>(r)) ==
                                plan.mlm_targets[r].original_id
                            ? 1
                            : 0;
          }
          mlm_total += static_cast<int64_t>(plan.mlm_targets.size());
          mlm_mean.add(lm.value.value());
        }

        LossTerm lp{Tensor::scalar(0.0), false};
        if (!plan.lop_targets.empty()) {
          std::vector<int> rows;
          rows.reserve(plan.lop_targets.size());
          for (const auto& t : plan.lop_targets) {
            rows.push_back(t.token);
          }
          const Tensor logits = lop_logits(gather_rows(reps, rows), res.params);
          lp = lop_loss(logits, plan.lop_targets);
          for (size_t r = 0; r < plan.lop_targets.size(); ++r) {
            lop_hits += argmax_row(logits, static_cast<int>(r)) ==
                                plan.lop_targets[r].local_pos - 1
                            ? 1
                            : 0;
          }
          lop_total += static_cast<int64_t>(plan.lop_targets.size());
          lop_mean.add(lp.value.value());
        }

        LossTerm lt{Tensor::scalar(0.0), false};
        if (tsc_active && doc.segments.size() >= 2) {
          std::vector<Tensor> pooled;
          pooled.reserve(doc.segments.size());
          for (const auto& seg : doc.segments) {
            pooled.push_back(segment_representation(reps, seg));
          }
          const PairSet pairs = select_pairs(doc.segments, doc.boxes, pooled, pcfg.theta_dis,
                                             pcfg.theta_sim);
          if (!pairs.empty()) {
            lt = tsc_loss(reps, doc.segments, pairs, predictor);
            tsc_mean.add(lt.value.value());
          }
        }

        const Tensor doc_total = total_loss(lm, lp, lt, pcfg, epoch);
        total_mean.add(doc_total.value());
        doc_losses.push_back(doc_total);
      }

      const Tensor batch_loss =
          scale(add_n(doc_losses), 1.0 / static_cast<double>(doc_losses.size()));
      const double lr_scale = 1.0 - static_cast<double>(step) / total_steps;
      if (batch_loss.requires_grad()) {
        backward(batch_loss);
        opt.step(lr_scale);
      }
      ++step;
    }

    EpochReport rep;
    rep.epoch = epoch;
    rep.mlm = mlm_mean.mean();
    rep.lop = lop_mean.mean();
    rep.tsc = tsc_mean.mean();
    rep.total = total_mean.mean();
    rep.mlm_acc = mlm_total > 0
                      ? static_cast<double>(mlm_hits) / static_cast<double>(mlm_total)
                      : 0.0;
    rep.lop_acc = lop_total > 0
                      ? static_cast<double>(lop_hits) / static_cast<double>(lop_total)
                      : 0.0;
    res.reports.push_back(rep);

    if (pcfg.early_stop_acc > 0.0 && rep.mlm_acc >= pcfg.early_stop_acc &&
        rep.lop_acc >= pcfg.early_stop_acc) {
      break;
    }
  }
  return res;
}

}  // namespace layoutlab
