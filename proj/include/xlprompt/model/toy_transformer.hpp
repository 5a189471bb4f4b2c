#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "xlprompt/core/error.hpp"
#include "xlprompt/core/linalg.hpp"
#include "xlprompt/core/rng.hpp"
#include "xlprompt/model/parameters.hpp"
#include "xlprompt/model/vocabulary.hpp"

namespace xlprompt {

struct BackendConfig {
  std::size_t vocabulary_size = 0;
  std::size_t hidden_dim = 32;
  std::size_t layers = 2;
  std::size_t attention_heads = 2;
  std::size_t max_sequence_length = 64;
  std::size_t num_classes = 3;
  std::size_t ffn_multiplier = 4;
  double init_std = 0.05;
  std::uint64_t seed = 0;

  void validate() const {
    if (vocabulary_size == 0) {
      throw configuration_error("backend vocabulary_size must be positive");
    }
    if (hidden_dim == 0 || attention_heads == 0 || hidden_dim % attention_heads != 0) {
      throw configuration_error("hidden_dim must be a positive multiple of attention_heads");
    }
    if (max_sequence_length == 0 || num_classes == 0 || ffn_multiplier == 0) {
      throw configuration_error("max_sequence_length, num_classes and ffn_multiplier must be positive");
    }
    if (!(init_std > 0.0)) {
      throw configuration_error("init_std must be positive");
    }
  }

  friend bool operator==(const BackendConfig&, const BackendConfig&) = default;
};

inline void to_json(nlohmann::json& j, const BackendConfig& c) {
  j = nlohmann::json{{"vocabulary_size", c.vocabulary_size}, {"hidden_dim", c.hidden_dim},
                     {"layers", c.layers},
                     {"attention_heads", c.attention_heads},
                     {"max_sequence_length", c.max_sequence_length},
                     {"num_classes", c.num_classes},
                     {"ffn_multiplier", c.ffn_multiplier},
                     {"init_std", c.init_std},
                     {"seed", c.seed}};
}

/// Missing keys keep their defaults.
inline void from_json(const nlohmann::json& j, BackendConfig& c) {
  const BackendConfig d;
  c.vocabulary_size = j.value("vocabulary_size", d.vocabulary_size);
  c.hidden_dim = j.value("hidden_dim", d.hidden_dim);
  c.layers = j.value("layers", d.layers);
  c.attention_heads = j.value("attention_heads", d.attention_heads);
  c.max_sequence_length = j.value("max_sequence_length", d.max_sequence_length);
  c.num_classes = j.value("num_classes", d.num_classes);
  c.ffn_multiplier = j.value("ffn_multiplier", d.ffn_multiplier);
  c.init_std = j.value("init_std", d.init_std);
  c.seed = j.value("seed", d.seed);
}

/// Pre-norm transformer encoder with learned positions, a tied MLM head and a
/// first-token classification head. Gradients are hand-derived; every forward
/// pass returns a trace that backward() consumes.
class ToyTransformer {
public:
  struct NormTrace {
    Matrix normalized; // (x - mean) / std
    Vector inv_std;
  };

  struct LayerTrace {
    Matrix input;
    NormTrace norm1;
    Matrix normed1;
    Matrix queries, keys, values;
    std::vector<Matrix> attention; // one L x L probability matrix per head
    Matrix context;
    Matrix residual;
    NormTrace norm2;
    Matrix normed2;
    Matrix pre_activation;
    Matrix activation;
  };

  struct Trace {
    std::vector<TokenId> ids;
    std::vector<LayerTrace> layers;
    Matrix final_input;
    NormTrace final_norm;
    Matrix hidden; // L x d, final encoder output
  };

  explicit ToyTransformer(BackendConfig config) : config_(std::move(config)) {
    config_.validate();
    const auto v = static_cast<Eigen::Index>(config_.vocabulary_size);
    const auto d = static_cast<Eigen::Index>(config_.hidden_dim);
    const auto f = static_cast<Eigen::Index>(config_.hidden_dim * config_.ffn_multiplier);
    const auto l = static_cast<Eigen::Index>(config_.max_sequence_length);
    const auto c = static_cast<Eigen::Index>(config_.num_classes);

    slots_.token_embedding = params_.add("token_embedding", v, d);
    slots_.position_embedding = params_.add("position_embedding", l, d);
    for (std::size_t i = 0; i < config_.layers; ++i) {
      const std::string p = "layer" + std::to_string(i) + ".";
      LayerSlots s;
      s.norm1_gain = params_.add(p + "norm1.gain", 1, d);
      s.norm1_bias = params_.add(p + "norm1.bias", 1, d);
      s.wq = params_.add(p + "attention.wq", d, d);
      s.bq = params_.add(p + "attention.bq", 1, d);
      s.wk = params_.add(p + "attention.wk", d, d);
      s.bk = params_.add(p + "attention.bk", 1, d);
      s.wv = params_.add(p + "attention.wv", d, d);
      s.bv = params_.add(p + "attention.bv", 1, d);
      s.wo = params_.add(p + "attention.wo", d, d);
      s.bo = params_.add(p + "attention.bo", 1, d);
      s.norm2_gain = params_.add(p + "norm2.gain", 1, d);
      s.norm2_bias = params_.add(p + "norm2.bias", 1, d);
      s.w1 = params_.add(p + "ffn.w1", d, f);
      s.b1 = params_.add(p + "ffn.b1", 1, f);
      s.w2 = params_.add(p + "ffn.w2", f, d);
      s.b2 = params_.add(p + "ffn.b2", 1, d);
      slots_.layers.push_back(s);
    }
    slots_.final_gain = params_.add("final_norm.gain", 1, d);
    slots_.final_bias = params_.add("final_norm.bias", 1, d);
    slots_.mlm_bias = params_.add("mlm_head.bias", 1, v);
    slots_.cls_weight = params_.add("cls_head.weight", d, c);
    slots_.cls_bias = params_.add("cls_head.bias", 1, c);
    initialize();
  }

  const BackendConfig& config() const noexcept { return config_; }
  ParameterSet& parameters() noexcept { return params_; }
  const ParameterSet& parameters() const noexcept { return params_; }

  Trace forward(std::span<const TokenId> ids) const {
    check_ids(ids);
    const auto len = static_cast<Eigen::Index>(ids.size());
    const Matrix& emb = params_[slots_.token_embedding];
    Trace trace;
    trace.ids.assign(ids.begin(), ids.end());
    Matrix x(len, emb.cols());
    for (Eigen::Index t = 0; t < len; ++t) {
      x.row(t) = emb.row(ids[static_cast<std::size_t>(t)]) + params_[slots_.position_embedding].row(t);
    }
    for (const auto& s : slots_.layers) {
      trace.layers.push_back(forward_layer(s, x));
      const LayerTrace& lt = trace.layers.back();
      x = lt.residual + lt.activation * params_[s.w2];
      x.rowwise() += params_[s.b2].row(0);
    }
    trace.final_input = x;
    trace.hidden = layer_norm(x, slots_.final_gain, slots_.final_bias, trace.final_norm);
    return trace;
  }

  /// Accumulate parameter gradients for upstream gradient `d_hidden` (L x d).
  void backward(const Trace& trace, const Matrix& d_hidden, ParameterSet& grads) const {
    Matrix dx = layer_norm_backward(trace.final_norm, d_hidden, slots_.final_gain, slots_.final_bias, grads);
    for (std::size_t li = slots_.layers.size(); li-- > 0;) {
      dx = backward_layer(slots_.layers[li], trace.layers[li], dx, grads);
    }
    Matrix& d_emb = grads[slots_.token_embedding];
    Matrix& d_pos = grads[slots_.position_embedding];
    for (Eigen::Index t = 0; t < dx.rows(); ++t) {
      d_emb.row(trace.ids[static_cast<std::size_t>(t)]) += dx.row(t);
      d_pos.row(t) += dx.row(t);
    }
  }

  /// Tied-embedding MLM head: logits = E h + b.
  Vector mlm_logits(const Vector& h) const {
    check_hidden(h);
    return params_[slots_.token_embedding] * h + params_[slots_.mlm_bias].row(0).transpose();
  }

  /// Returns dL/dh and accumulates head gradients.
  Vector mlm_backward(const Vector& h, const Vector& d_logits, ParameterSet& grads) const {
    grads[slots_.token_embedding].noalias() += d_logits * h.transpose();
    grads[slots_.mlm_bias].row(0) += d_logits.transpose();
    return params_[slots_.token_embedding].transpose() * d_logits;
  }

  Vector class_logits(const Vector& pooled) const {
    check_hidden(pooled);
    return params_[slots_.cls_weight].transpose() * pooled + params_[slots_.cls_bias].row(0).transpose();
  }

  Vector class_backward(const Vector& pooled, const Vector& d_logits, ParameterSet& grads) const {
    grads[slots_.cls_weight].noalias() += pooled * d_logits.transpose();
    grads[slots_.cls_bias].row(0) += d_logits.transpose();
    return params_[slots_.cls_weight] * d_logits;
  }

  std::size_t token_embedding_slot() const noexcept { return slots_.token_embedding; }
  std::size_t mlm_bias_slot() const noexcept { return slots_.mlm_bias; }

private:
  struct LayerSlots {
    std::size_t norm1_gain, norm1_bias, wq, bq, wk, bk, wv, bv, wo, bo;
    std::size_t norm2_gain, norm2_bias, w1, b1, w2, b2;
  };
  struct Slots {
    std::size_t token_embedding = 0, position_embedding = 0;
    std::vector<LayerSlots> layers;
    std::size_t final_gain = 0, final_bias = 0, mlm_bias = 0, cls_weight = 0, cls_bias = 0;
  };

  static constexpr double norm_eps = 1e-5;
  static constexpr double gelu_c = 0.7978845608028654; // sqrt(2 / pi)

  void initialize() {
    Rng rng(config_.seed);
    for (std::size_t i = 0; i < params_.size(); ++i) {
      const std::string& name = params_.names()[i];
      Matrix& t = params_[i];
      if (name.ends_with(".gain")) {
        t.setOnes();
      } else if (name.find("bias") != std::string::npos || name.ends_with(".bq") || name.ends_with(".bk") ||
                 name.ends_with(".bv") || name.ends_with(".bo") || name.ends_with(".b1") ||
                 name.ends_with(".b2")) {
        t.setZero();
      } else {
        for (Eigen::Index k = 0; k < t.size(); ++k) {
          t.data()[k] = rng.normal(0.0, config_.init_std);
        }
      }
    }
  }

  void check_ids(std::span<const TokenId> ids) const {
    if (ids.empty()) {
      throw input_error("cannot encode an empty sequence");
    }
    if (ids.size() > config_.max_sequence_length) {
      throw input_error("sequence of " + std::to_string(ids.size()) + " tokens exceeds max length " +
                        std::to_string(config_.max_sequence_length));
    }
    for (TokenId id : ids) {
      if (id < 0 || static_cast<std::size_t>(id) >= config_.vocabulary_size) {
        throw input_error("token id " + std::to_string(id) + " out of vocabulary range");
      }
    }
  }

  void check_hidden(const Vector& h) const {
    if (static_cast<std::size_t>(h.size()) != config_.hidden_dim) {
      throw input_error("representation has dimension " + std::to_string(h.size()) + ", backend expects " +
                        std::to_string(config_.hidden_dim));
    }
  }

  Matrix layer_norm(const Matrix& x, std::size_t gain, std::size_t bias, NormTrace& trace) const {
    const Eigen::Index d = x.cols();
    trace.normalized.resize(x.rows(), d);
    trace.inv_std.resize(x.rows());
    for (Eigen::Index r = 0; r < x.rows(); ++r) {
      const double mean = x.row(r).mean();
      const auto centered = (x.row(r).array() - mean).matrix();
      const double var = centered.squaredNorm() / static_cast<double>(d);
      const double inv = 1.0 / std::sqrt(var + norm_eps);
      trace.inv_std[r] = inv;
      trace.normalized.row(r) = centered * inv;
    }
    Matrix y = trace.normalized.array().rowwise() * params_[gain].row(0).array();
    y.rowwise() += params_[bias].row(0);
    return y;
  }

  Matrix layer_norm_backward(const NormTrace& trace, const Matrix& dy, std::size_t gain, std::size_t bias,
                             ParameterSet& grads) const {
    grads[gain].row(0) += (dy.array() * trace.normalized.array()).colwise().sum().matrix();
    grads[bias].row(0) += dy.colwise().sum();
    const Matrix dxhat = dy.array().rowwise() * params_[gain].row(0).array();
    Matrix dx(dy.rows(), dy.cols());
    for (Eigen::Index r = 0; r < dy.rows(); ++r) {
      const double mean_d = dxhat.row(r).mean();
      const double mean_dx = dxhat.row(r).dot(trace.normalized.row(r)) / static_cast<double>(dy.cols());
      dx.row(r) = trace.inv_std[r] *
                  (dxhat.row(r).array() - mean_d - trace.normalized.row(r).array() * mean_dx).matrix();
    }
    return dx;
  }

  static Matrix affine(const Matrix& x, const Matrix& w, const Matrix& b) {
    Matrix y = x * w;
    y.rowwise() += b.row(0);
    return y;
  }

  LayerTrace forward_layer(const LayerSlots& s, const Matrix& x) const {
    LayerTrace lt;
    lt.input = x;
    lt.normed1 = layer_norm(x, s.norm1_gain, s.norm1_bias, lt.norm1);
    lt.queries = affine(lt.normed1, params_[s.wq], params_[s.bq]);
    lt.keys = affine(lt.normed1, params_[s.wk], params_[s.bk]);
    lt.values = affine(lt.normed1, params_[s.wv], params_[s.bv]);

    const auto heads = static_cast<Eigen::Index>(config_.attention_heads);
    const Eigen::Index dh = x.cols() / heads;
    const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
    lt.context.resize(x.rows(), x.cols());
    for (Eigen::Index h = 0; h < heads; ++h) {
      Matrix scores = lt.queries.middleCols(h * dh, dh) * lt.keys.middleCols(h * dh, dh).transpose() * scale;
      for (Eigen::Index r = 0; r < scores.rows(); ++r) {
        const double peak = scores.row(r).maxCoeff();
        scores.row(r) = (scores.row(r).array() - peak).exp().matrix();
        scores.row(r) /= scores.row(r).sum();
      }
      lt.context.middleCols(h * dh, dh) = scores * lt.values.middleCols(h * dh, dh);
      lt.attention.push_back(std::move(scores));
    }
    lt.residual = x + affine(lt.context, params_[s.wo], params_[s.bo]);
    lt.normed2 = layer_norm(lt.residual, s.norm2_gain, s.norm2_bias, lt.norm2);
    lt.pre_activation = affine(lt.normed2, params_[s.w1], params_[s.b1]);
    lt.activation = lt.pre_activation.unaryExpr([](double z) {
      return 0.5 * z * (1.0 + std::tanh(gelu_c * (z + 0.044715 * z * z * z)));
    });
    return lt;
  }

  Matrix backward_layer(const LayerSlots& s, const LayerTrace& lt, const Matrix& d_out, ParameterSet& grads) const {
    // Feed-forward block: out = residual + gelu(norm2(residual) W1 + b1) W2 + b2
    grads[s.w2].noalias() += lt.activation.transpose() * d_out;
    grads[s.b2].row(0) += d_out.colwise().sum();
    const Matrix d_act = d_out * params_[s.w2].transpose();
    const Matrix d_pre = d_act.binaryExpr(lt.pre_activation, [](double g, double z) {
      const double t = std::tanh(gelu_c * (z + 0.044715 * z * z * z));
      const double dt = (1.0 - t * t) * gelu_c * (1.0 + 3.0 * 0.044715 * z * z);
      return g * (0.5 * (1.0 + t) + 0.5 * z * dt);
    });
    grads[s.w1].noalias() += lt.normed2.transpose() * d_pre;
    grads[s.b1].row(0) += d_pre.colwise().sum();
    const Matrix d_normed2 = d_pre * params_[s.w1].transpose();
    const Matrix d_residual =
        d_out + layer_norm_backward(lt.norm2, d_normed2, s.norm2_gain, s.norm2_bias, grads);

    // Attention block: residual = input + context Wo + bo
    grads[s.wo].noalias() += lt.context.transpose() * d_residual;
    grads[s.bo].row(0) += d_residual.colwise().sum();
    const Matrix d_context = d_residual * params_[s.wo].transpose();

    const auto heads = static_cast<Eigen::Index>(config_.attention_heads);
    const Eigen::Index dh = lt.input.cols() / heads;
    const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
    Matrix d_q(lt.queries.rows(), lt.queries.cols());
    Matrix d_k(lt.keys.rows(), lt.keys.cols());
    Matrix d_v(lt.values.rows(), lt.values.cols());
    for (Eigen::Index h = 0; h < heads; ++h) {
      const Matrix& probs = lt.attention[static_cast<std::size_t>(h)];
      const auto dc = d_context.middleCols(h * dh, dh);
      const Matrix d_probs = dc * lt.values.middleCols(h * dh, dh).transpose();
      d_v.middleCols(h * dh, dh) = probs.transpose() * dc;
      Matrix d_scores = probs.array() * (d_probs.array().colwise() -
                                         (d_probs.array() * probs.array()).rowwise().sum());
      d_scores *= scale;
      d_q.middleCols(h * dh, dh) = d_scores * lt.keys.middleCols(h * dh, dh);
      d_k.middleCols(h * dh, dh) = d_scores.transpose() * lt.queries.middleCols(h * dh, dh);
    }
    grads[s.wq].noalias() += lt.normed1.transpose() * d_q;
    grads[s.bq].row(0) += d_q.colwise().sum();
    grads[s.wk].noalias() += lt.normed1.transpose() * d_k;
    grads[s.bk].row(0) += d_k.colwise().sum();
    grads[s.wv].noalias() += lt.normed1.transpose() * d_v;
    grads[s.bv].row(0) += d_v.colwise().sum();
    const Matrix d_normed1 =
        d_q * params_[s.wq].transpose() + d_k * params_[s.wk].transpose() + d_v * params_[s.wv].transpose();
    return d_residual + layer_norm_backward(lt.norm1, d_normed1, s.norm1_gain, s.norm1_bias, grads);
  }

  BackendConfig config_;
  ParameterSet params_;
  Slots slots_;
};

} // namespace xlprompt
