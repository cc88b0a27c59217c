#include "sketchkp/domainadapt.hpp"

#include <cmath>

#include "sketchkp/encoder.hpp"
#include "sketchkp/errors.hpp"

namespace sketchkp {

std::vector<std::optional<Var>> extract_query_embeddings(const Var& query_fmap,
                                                         const std::vector<Keypoint>& gt,
                                                         const std::vector<int>& keypoint_ids,
                                                         int input_size, double xi) {
  std::vector<std::optional<Var>> out(keypoint_ids.size());
  for (size_t j = 0; j < keypoint_ids.size(); ++j) {
    const Keypoint& kp = gt.at(static_cast<size_t>(keypoint_ids[j]));
    if (!kp.visible()) continue;
    out[j] = gaussian_pool(query_fmap, kp.ux, kp.uy, input_size, xi);
  }
  return out;
}

QueryPrototype query_prototype(const std::vector<Var>& embeddings, const Var& mu) {
  if (embeddings.empty())
    throw ValidationError("query_prototype needs at least one visible query embedding");
  const std::int64_t c = embeddings[0]->value.size();
  QueryPrototype qp;
  qp.values = Tensor(embeddings[0]->value.shape());
  for (const Var& e : embeddings) {
    if (e->value.size() != c)
      throw ShapeError("query_prototype: embeddings must share one length");
    for (std::int64_t i = 0; i < c; ++i) qp.values[i] += e->value[i];
  }
  const double inv = 1.0 / static_cast<double>(embeddings.size());
  for (std::int64_t i = 0; i < c; ++i) qp.values[i] *= inv;

  if (mu->value.size() != c)
    throw ShapeError("query_prototype: prototype length does not match embeddings");
  double sq = 0.0;
  for (std::int64_t i = 0; i < c; ++i) {
    const double d = qp.values[i] - mu->value[i];
    sq += d * d;
  }
  qp.likelihood = std::exp(-sq);
  qp.gradient_isolated = true;
  return qp;
}

Var transport_loss(const std::vector<Prototype>& prototypes,
                   const std::vector<std::vector<Var>>& query_embeddings_per_kp,
                   const std::vector<std::optional<QueryPrototype>>& query_protos) {
  if (prototypes.size() != query_embeddings_per_kp.size() ||
      prototypes.size() != query_protos.size())
    throw ShapeError("transport_loss: inputs must be aligned by keypoint");
  std::vector<Var> terms;
  for (size_t n = 0; n < prototypes.size(); ++n) {
    if (!prototypes[n].visible) continue;
    const auto& embeddings = query_embeddings_per_kp[n];
    if (embeddings.empty()) continue;
    if (!query_protos[n])
      throw ValidationError("transport_loss: missing query prototype for a contributing keypoint");
    const double p = query_protos[n]->likelihood;
    for (const Var& phi_hat : embeddings) {
      Var cost = l2_diff(prototypes[n].values, phi_hat);
      Var sim = exp_of(neg(sq_l2_diff(prototypes[n].values, phi_hat)));
      terms.push_back(scale(mul(cost, sim), p));
    }
  }
  if (terms.empty()) return make_scalar(0.0);
  return sum_scalars(terms);
}

Var transport_loss_auto(const std::vector<Prototype>& prototypes,
                        const std::vector<std::vector<Var>>& query_embeddings_per_kp) {
  std::vector<std::optional<QueryPrototype>> qps(prototypes.size());
  for (size_t n = 0; n < prototypes.size(); ++n) {
    if (!prototypes[n].visible || query_embeddings_per_kp[n].empty()) continue;
    qps[n] = query_prototype(query_embeddings_per_kp[n], prototypes[n].values);
  }
  return transport_loss(prototypes, query_embeddings_per_kp, qps);
}

}  // namespace sketchkp
