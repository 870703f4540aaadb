#include "cliptta/engine.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>
#include <utility>

#include "cliptta/gradients.hpp"
#include "cliptta/pseudo.hpp"

namespace cliptta {

std::string to_string(Method m) {
  switch (m) {
    case Method::kCliptta: return "cliptta";
    case Method::kTent: return "tent";
    case Method::kHardContrastive: return "hard_contrastive";
    case Method::kZeroShot: return "zero_shot";
  }
  return "unknown";
}

Method parse_method(const std::string& s) {
  if (s == "cliptta") return Method::kCliptta;
  if (s == "tent") return Method::kTent;
  if (s == "hard_contrastive") return Method::kHardContrastive;
  if (s == "zero_shot") return Method::kZeroShot;
  throw std::invalid_argument("method: unknown value '" + s + "'");
}

std::string to_string(ScontMode m) {
  return m == ScontMode::kSymmetric ? "symmetric" : "image_to_text";
}

ScontMode parse_scont_mode(const std::string& s) {
  if (s == "image_to_text") return ScontMode::kImageToText;
  if (s == "symmetric") return ScontMode::kSymmetric;
  throw std::invalid_argument("scont_mode: unknown value '" + s + "'");
}

void EngineConfig::validate() const {
  if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate)) {
    throw std::invalid_argument("learning_rate: must be finite and >= 0");
  }
  if (inner_iterations == 0) throw std::invalid_argument("inner_iterations: must be >= 1");
  if (batch_size == 0) throw std::invalid_argument("batch_size: must be >= 1");
  if (!(lambda_reg >= 0.0)) throw std::invalid_argument("lambda_reg: must be >= 0");
  if (!(lambda_oce >= 0.0)) throw std::invalid_argument("lambda_oce: must be >= 0");
  if (!(tau > 0.0) || !std::isfinite(tau)) throw std::invalid_argument("tau: must be > 0");
  if (!std::isfinite(alpha_init)) throw std::invalid_argument("alpha_init: must be finite");
}

void adam_step(AdamState& adam, std::span<double> params, std::span<const double> grads,
               double lr) {
  if (params.size() != grads.size() || adam.m.size() != params.size()) {
    throw ShapeError("adam_step: parameter/gradient/moment sizes differ");
  }
  for (std::size_t k = 0; k < grads.size(); ++k) {
    if (!std::isfinite(grads[k])) {
      std::ostringstream msg;
      msg << "gradient blow-up: entry " << k << " = " << grads[k] << " at optimizer step "
          << adam.t + 1;
      throw NumericError(msg.str());
    }
  }
  ++adam.t;
  const double c1 = 1.0 - std::pow(adam.beta1, static_cast<double>(adam.t));
  const double c2 = 1.0 - std::pow(adam.beta2, static_cast<double>(adam.t));
  for (std::size_t k = 0; k < params.size(); ++k) {
    adam.m[k] = adam.beta1 * adam.m[k] + (1.0 - adam.beta1) * grads[k];
    adam.v[k] = adam.beta2 * adam.v[k] + (1.0 - adam.beta2) * grads[k] * grads[k];
    const double m_hat = adam.m[k] / c1;
    const double v_hat = adam.v[k] / c2;
    params[k] -= lr * m_hat / (std::sqrt(v_hat) + adam.eps);
  }
}

std::uint64_t AdaptationState::parameter_hash() const {
  std::uint64_t h = fingerprint(params.gamma.span());
  h = fingerprint(params.beta.span(), h);
  return fingerprint(std::span<const double>(&alpha, 1), h);
}

Engine::Engine(EngineConfig cfg, ClassPrototypes protos, Matrix w_proj, double eps_norm)
    : cfg_(cfg), protos_(std::move(protos)), initial_params_(std::move(w_proj), cfg.tau, eps_norm) {
  cfg_.validate();
  if (initial_params_.d_emb() != protos_.dim()) {
    throw ShapeError("projection output dimension != prototype dimension");
  }
}

AdaptationState Engine::initial_state() const {
  return AdaptationState{initial_params_, cfg_.alpha_init, AdamState(2 * initial_params_.d_in() + 1),
                         MemoryState::for_batch(protos_.num_classes(), cfg_.batch_size), {}, 0};
}

namespace {

struct EncodedBatch {
  EmbeddingMatrix z;
  ProbMatrix q;
  PseudoLabelSummary ps;
};

EncodedBatch encode_batch(const Matrix& x, const EncoderParams& params,
                          const ClassPrototypes& protos) {
  EmbeddingMatrix z = encode(x, params);
  ProbMatrix q = class_probabilities(z, protos, params.tau());
  PseudoLabelSummary ps = assign_pseudo_captions(q, protos);
  return {std::move(z), std::move(q), std::move(ps)};
}

void add_into(Vector& acc, const Vector& v) {
  for (std::size_t k = 0; k < acc.size(); ++k) acc[k] += v[k];
}

}  // namespace

BatchOutcome Engine::adapt_batch(AdaptationState& st, const Matrix& x) const {
  const std::size_t n = x.rows();
  if (n == 0) throw ShapeError("adapt_batch: empty batch");
  const std::size_t d_in = st.params.d_in();
  const double tau = cfg_.tau;
  if (cfg_.episodic) {
    st.params = initial_params_;
    st.adam = AdamState(2 * d_in + 1);
    st.alpha = cfg_.alpha_init;
  }
  const bool adaptive = cfg_.method != Method::kZeroShot;
  const bool use_memory = cfg_.memory_enabled && cfg_.method == Method::kCliptta;
  const Rng memory_rng = Rng(cfg_.seed).derive("memory").derive(st.batches_seen);

  BatchOutcome out;
  const std::size_t iterations = adaptive ? cfg_.inner_iterations : 1;
  for (std::size_t it = 0; it < iterations; ++it) {
    const EmbeddingMatrix z = encode(x, st.params);
    const ProbMatrix q = class_probabilities(z, protos_, tau);
    const Vector s = mcm_score(q);

    std::optional<OodScores> scores;
    std::vector<std::size_t> keep;
    out.contributed.assign(n, true);
    if (cfg_.open_set) {
      scores = outlier_weights(s, st.alpha);
      for (std::size_t i = 0; i < n; ++i) out.contributed[i] = scores->w[i] > 0.5;
    }
    for (std::size_t i = 0; i < n; ++i)
      if (out.contributed[i]) keep.push_back(i);

    LossReport rep;
    Matrix grad_z(n, protos_.dim(), 0.0);
    std::optional<Matrix> memory_x;
    std::optional<Matrix> grad_memory;

    if (!keep.empty()) {
      const EmbeddingMatrix zk{z.z.select_rows(keep)};
      const ProbMatrix qk{q.q.select_rows(keep)};
      const PseudoLabelSummary ps = assign_pseudo_captions(qk, protos_);
      rep.l_scont = soft_contrastive_loss(batch_match_probabilities(zk, ps.caption_rows, tau),
                                          cfg_.scont_mode);
      RegularizerResult reg = regularizer_loss(qk);
      rep.l_reg = reg.value;
      rep.q_bar = std::move(reg.q_bar);
      rep.l_tent = tent_loss(qk);
      rep.l_cont_hard = hard_contrastive_loss(zk, ps, tau);

      std::optional<EncodedBatch> mem;
      if (use_memory) {
        Rng r = memory_rng.derive(static_cast<std::uint64_t>(it));
        memory_x = st.memory.batch(keep.size(), r);
        if (memory_x) {
          mem = encode_batch(*memory_x, st.params, protos_);
          rep.l_scont_mem = soft_contrastive_loss(
              batch_match_probabilities(mem->z, mem->ps.caption_rows, tau), cfg_.scont_mode);
        }
      }

      Matrix grad_kept;
      switch (cfg_.method) {
        case Method::kCliptta:
        case Method::kZeroShot: {
          rep.l_total = cliptta_total(rep.l_scont, rep.l_scont_mem, rep.l_reg, cfg_.lambda_reg);
          if (adaptive) {
            const BatchView cur{zk, ps, qk};
            std::optional<BatchView> mv;
            if (mem) mv.emplace(BatchView{mem->z, mem->ps, mem->q});
            CliptaGradient g = grad_cliptta_wrt_z(cur, mv ? &*mv : nullptr, protos_, tau,
                                                  cfg_.lambda_reg, cfg_.scont_mode);
            grad_kept = std::move(g.current);
            grad_memory = std::move(g.memory);
          }
          break;
        }
        case Method::kTent:
          rep.l_total = *rep.l_tent;
          grad_kept = grad_tent_wrt_z(qk, protos_, tau);
          break;
        case Method::kHardContrastive:
          rep.l_total = *rep.l_cont_hard;
          grad_kept = grad_hard_contrastive_wrt_z(ps, protos_, qk, tau);
          break;
      }
      if (adaptive) {
        for (std::size_t k = 0; k < keep.size(); ++k) grad_z.set_row(keep[k], grad_kept.row(k));
      }
    }

    double grad_alpha = 0.0;
    if (cfg_.open_set) {
      const OceReport oce = oce_loss(*scores);
      rep.l_oce = oce.loss;
      if (adaptive && cfg_.oce_enabled) {
        rep.l_total += cfg_.lambda_oce * oce.loss;
        OceGradient og = grad_oce(*scores);
        for (double& v : og.s) v *= cfg_.lambda_oce;
        grad_alpha = cfg_.lambda_oce * og.alpha;
        const Matrix g_s = grad_mcm_wrt_z(og.s, q, protos_, tau);
        for (std::size_t k = 0; k < grad_z.data().size(); ++k) grad_z.data()[k] += g_s.data()[k];
      }
    }

    if (it == 0) out.losses = rep;
    out.loss_trace.push_back(rep.l_total);
    if (!adaptive) break;

    EncoderGradient eg = backprop_through_encoder(grad_z, x, st.params);
    if (memory_x && grad_memory) {
      const EncoderGradient em = backprop_through_encoder(*grad_memory, *memory_x, st.params);
      add_into(eg.gamma, em.gamma);
      add_into(eg.beta_shift, em.beta_shift);
    }

    std::vector<double> flat(2 * d_in + 1);
    std::vector<double> grads(2 * d_in + 1);
    for (std::size_t f = 0; f < d_in; ++f) {
      flat[f] = st.params.gamma[f];
      flat[d_in + f] = st.params.beta[f];
      grads[f] = eg.gamma[f];
      grads[d_in + f] = eg.beta_shift[f];
    }
    flat[2 * d_in] = st.alpha;
    grads[2 * d_in] = grad_alpha;
    adam_step(st.adam, flat, grads, cfg_.learning_rate);
    for (std::size_t f = 0; f < d_in; ++f) {
      st.params.gamma[f] = flat[f];
      st.params.beta[f] = flat[d_in + f];
    }
    st.alpha = flat[2 * d_in];
    if (!all_finite(flat)) throw NumericError("gradient blow-up: non-finite parameters after step");
  }

  const ProbMatrix q_after = class_probabilities(encode(x, st.params), protos_, tau);
  out.predictions_after = predicted_classes(q_after);
  if (use_memory) {
    const Vector s_after = mcm_score(q_after);
    for (std::size_t i = 0; i < n; ++i) {
      if (cfg_.open_set && !(sigmoid(s_after[i] - st.alpha) > 0.5)) continue;
      if (st.memory.insert(x.row_vector(i), out.predictions_after[i], s_after[i],
                           st.batches_seen)) {
        ++out.memory_inserts;
      }
    }
  }
  ++st.batches_seen;
  return out;
}

MetricRecord Engine::evaluate(const AdaptationState& state, const LabeledBatch& batch) const {
  const ProbMatrix q = class_probabilities(encode(batch.x_raw, state.params), protos_, cfg_.tau);
  const std::vector<std::size_t> pred = predicted_classes(q);
  const Vector s = mcm_score(q);

  std::vector<bool> id_mask(batch.size());
  std::vector<std::size_t> id_pred;
  std::vector<double> s_id, s_ood;
  double sample_entropy = 0.0;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    id_mask[i] = !batch.ood_mask[i];
    if (id_mask[i]) {
      id_pred.push_back(pred[i]);
      s_id.push_back(s[i]);
      sample_entropy += entropy(q.q.row(i));
    } else {
      s_ood.push_back(s[i]);
    }
  }

  MetricRecord rec;
  rec.accuracy = accuracy(pred, batch.true_labels, id_mask);
  rec.mean_prediction_entropy = prediction_entropy(id_pred, protos_.num_classes());
  rec.mean_sample_entropy = sample_entropy / static_cast<double>(id_pred.size());
  rec.unique_predicted_classes = unique_classes(id_pred);
  if (!s_ood.empty()) {
    const OodDetection det = auroc_fpr95(s_id, s_ood);
    rec.auroc = det.auroc;
    rec.fpr95 = det.fpr95;
  }
  if (cfg_.open_set) {
    const OceReport oce = oce_loss(outlier_weights(s, state.alpha));
    rec.mu_id_minus_mu_ood = oce.mu_id - oce.mu_ood;
    rec.alpha = state.alpha;
  }
  return rec;
}

RunResult Engine::run_stream(const std::vector<LabeledBatch>& stream,
                             const LabeledBatch& eval) const {
  if (stream.empty()) throw std::invalid_argument("run_stream: empty stream");
  RunResult result{initial_state(), {}, {}};
  const AdaptationState zero_shot = initial_state();
  for (std::size_t b = 0; b < stream.size(); ++b) {
    const LabeledBatch& batch = stream[b];
    MetricRecord rec = evaluate(result.state, batch);
    rec.batch_index = b;

    const BatchOutcome outcome = adapt_batch(result.state, batch.x_raw);
    rec.losses = outcome.losses;

    const std::vector<std::size_t> before = predicted_classes(
        class_probabilities(encode(batch.x_raw, zero_shot.params), protos_, cfg_.tau));
    std::vector<std::size_t> b_id, a_id, t_id;
    for (std::size_t i = 0; i < batch.size(); ++i) {
      if (batch.ood_mask[i]) continue;
      b_id.push_back(before[i]);
      a_id.push_back(outcome.predictions_after[i]);
      t_id.push_back(batch.true_labels[i]);
    }
    const ChangeRatios ratios = improvement_deterioration(b_id, a_id, t_id);
    rec.improvement_ratio = ratios.improvement;
    rec.deterioration_ratio = ratios.deterioration;
    result.history.push_back(rec);
  }
  result.state.history = result.history;
  result.final_eval = evaluate(result.state, eval);
  result.final_eval.batch_index = stream.size();
  return result;
}

Engine make_engine(const EngineConfig& cfg, const SyntheticWorld& world, double eps_norm) {
  return Engine(cfg, world.protos, world.w_proj, eps_norm);
}

}  // namespace cliptta
