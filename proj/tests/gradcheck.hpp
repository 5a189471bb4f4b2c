#pragma once

#include <algorithm>
#include <functional>
#include <string>
#include <vector>

#include "xlprompt/model/parameters.hpp"
#include "xlprompt/protocol/trainer.hpp"
#include "xlprompt/synth/desk.hpp"

namespace xlprompt::testing {

struct TensorCheck {
  std::string name;
  double relative_error = 0.0;
  double analytic_norm = 0.0;
  double numeric_norm = 0.0;
};

/// Central finite differences for every scalar of `params`, compared per tensor as
/// ||analytic - numeric|| / max(||analytic||, ||numeric||, floor). The floor keeps
/// tensors whose true gradient is zero (e.g. key biases under softmax shift
/// invariance) from dividing rounding noise by rounding noise.
inline std::vector<TensorCheck> check_gradients(ParameterSet& params,
                                                const std::function<double(ParameterSet& grads)>& loss,
                                                double step = 1e-4, double floor = 1e-6) {
  ParameterSet analytic = params.zeros_like();
  loss(analytic);
  ParameterSet scratch = params.zeros_like();
  std::vector<TensorCheck> out;
  for (std::size_t t = 0; t < params.size(); ++t) {
    Matrix numeric = Matrix::Zero(params[t].rows(), params[t].cols());
    for (Eigen::Index i = 0; i < params[t].size(); ++i) {
      double& x = params[t].data()[i];
      const double original = x;
      x = original + step;
      scratch.set_zero();
      const double up = loss(scratch);
      x = original - step;
      scratch.set_zero();
      const double down = loss(scratch);
      x = original;
      numeric.data()[i] = (up - down) / (2.0 * step);
    }
    TensorCheck c;
    c.name = params.names()[t];
    c.analytic_norm = analytic[t].norm();
    c.numeric_norm = numeric.norm();
    c.relative_error = (analytic[t] - numeric).norm() / std::max({c.analytic_norm, c.numeric_norm, floor});
    out.push_back(c);
  }
  return out;
}

inline double worst_error(const std::vector<TensorCheck>& checks) {
  double w = 0.0;
  for (const auto& c : checks) {
    w = std::max(w, c.relative_error);
  }
  return w;
}

/// Training-loss gradients for one method on a 2-example batch over a small toy
/// backend, with EN and one pseudo-language in the verbalizer set.
inline std::vector<TensorCheck> pipeline_gradient_check(Method method) {
  synth::SynthTaskSpec spec;
  spec.vocabulary_size = 12;
  const auto lexicon = synth::synth_verbalizers({"EN", "L1"}, 3);
  BackendConfig bc;
  bc.hidden_dim = 8;
  bc.max_sequence_length = 16;
  bc.seed = 3;
  bc.init_std = 0.3;
  ToyBackend backend(bc, Tokenizer(synth::toy_vocabulary(spec, lexicon)));
  RunConfig rc;
  rc.method = method;
  const LabeledPair a{{"w1", "w2", "w3"}, {"w2"}, 0, "EN"};
  const LabeledPair b{{"w4", "w5"}, {"w6", "w7"}, 1, "EN"};
  std::vector<EncodedExample> batch;
  if (traits_of(method).finetune) {
    batch = {backend.encode_pair(a), backend.encode_pair(b)};
  } else {
    const auto tmpl = lexicon.make_template(traits_of(method).variant);
    batch = {backend.encode(build_prompt(a, tmpl, "EN", 64)), backend.encode(build_prompt(b, tmpl, "EN", 64))};
  }
  const VerbalizerIds ids(lexicon.verbalizers, backend.tokenizer());
  const detail::MicroBatchObjective<ToyBackend> objective(backend, rc, &ids, {"EN", "L1"});
  return check_gradients(backend.parameters(), [&](ParameterSet& g) {
    Rng rng(5); // same lambda on every evaluation
    return objective.accumulate(batch, rng, g).total;
  });
}

} // namespace xlprompt::testing
