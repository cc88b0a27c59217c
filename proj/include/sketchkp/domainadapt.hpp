#pragma once

#include <optional>
#include <vector>

#include "sketchkp/autograd.hpp"
#include "sketchkp/dataset.hpp"
#include "sketchkp/matcher.hpp"

namespace sketchkp {

// Mean query embedding for one keypoint, held outside the gradient graph.
// The likelihood weights the transport cost but contributes no gradients.
struct QueryPrototype {
  Tensor values;               // mu_hat, length c
  double likelihood = 0.0;     // exp(-||mu_hat - mu||^2), in (0, 1]
  bool gradient_isolated = true;
};

// Pools the query feature map at every visible ground-truth keypoint.
// Entry n is empty when keypoint n is invisible in this query.
std::vector<std::optional<Var>> extract_query_embeddings(const Var& query_fmap,
                                                         const std::vector<Keypoint>& gt,
                                                         const std::vector<int>& keypoint_ids,
                                                         int input_size, double xi);

// mu_hat = mean of the available embeddings (divisor = count present), as a
// detached value; likelihood compares it to the live prototype's value.
QueryPrototype query_prototype(const std::vector<Var>& embeddings, const Var& mu);

// Keypoint-level transport loss:
//   sum over contributing (n, m) of
//     p(mu_hat_n) * ||mu_n - phi_hat||_2 * exp(-||mu_n - phi_hat||_2^2)
// Keypoint n contributes only when its prototype is visible and at least one
// query embedding exists. query_protos[n] must be present for such n.
Var transport_loss(const std::vector<Prototype>& prototypes,
                   const std::vector<std::vector<Var>>& query_embeddings_per_kp,
                   const std::vector<std::optional<QueryPrototype>>& query_protos);

// Convenience wrapper that derives the query prototypes itself.
Var transport_loss_auto(const std::vector<Prototype>& prototypes,
                        const std::vector<std::vector<Var>>& query_embeddings_per_kp);

}  // namespace sketchkp
