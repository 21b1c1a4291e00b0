#pragma once

// Built-in 6-node fixture for end-to-end gradient checks of every loss
// term through the full two-layer encoder.

#include "sacn/augmentation.hpp"
#include "sacn/autodiff.hpp"
#include "sacn/gat.hpp"
#include "sacn/objectives.hpp"
#include "sacn/pseudolabels.hpp"

#include <chrono>
#include <random>
#include <string>
#include <vector>

namespace sacn {

struct GradcheckFixture {
  GatConfig model;
  AttentionSupport support;
  ConsensusPairs pairs;
  Matrix<double> weak;
  Matrix<double> strong1;
  Matrix<double> strong2;
  std::vector<Index> train_nodes;
  Matrix<double> train_targets;
  PseudoLabelSet pseudo;
  LossWeights weights;
  ModelParams<double> params;

  /// Two triangles joined by the edge 2-3; 5 features, 2 classes.
  static GradcheckFixture make(std::uint64_t seed = 0) {
    GradcheckFixture f;
    f.model.num_features = 5;
    f.model.num_classes = 2;
    f.model.heads = 2;
    f.model.hidden_per_head = 3;
    const CsrPattern adjacency = CsrPattern::from_pairs(
        6, 6, {{0, 1}, {1, 0}, {1, 2}, {2, 1}, {0, 2}, {2, 0}, {3, 4}, {4, 3},
               {4, 5}, {5, 4}, {3, 5}, {5, 3}, {2, 3}, {3, 2}});
    f.support = AttentionSupport::from_adjacency(adjacency);
    f.pairs = ConsensusPairs::from_adjacency(adjacency);

    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    f.weak = Matrix<double>(6, 5);
    for (Index i = 0; i < f.weak.size(); ++i) f.weak.data()[i] = normal(rng);
    f.strong1 = apply_mask(f.weak, MaskPlan{{1}, 0.2, 0});
    f.strong2 = apply_mask(f.weak, MaskPlan{{3}, 0.2, 0});

    f.train_nodes = {0, 3};
    const std::vector<int> train_labels{0, 1};
    f.train_targets = one_hot<double>(train_labels, 2);
    f.pseudo.indices = {1, 4};
    f.pseudo.classes = {0, 1};
    f.pseudo.confidences = {0.9, 0.8};
    f.pseudo.per_class_counts = {1, 1};
    f.params = init_params<double>(f.model, seed + 1);
    return f;
  }

  std::vector<Matrix<double>> parameter_values() const {
    std::vector<Matrix<double>> out;
    for (const auto* m : params.tensors()) out.push_back(*m);
    return out;
  }

  /// Loss closure for one named term: cor, de, sacn, sup, w2s, two.
  ad::LossFn<double> term(const std::string& name) const {
    return [this, name](ad::Tape<double>& tape, const std::vector<ad::Var<double>>& leaves) {
      (void)tape;
      const auto vars = bind_existing(leaves, params);
      std::mt19937_64 unused(0);
      const auto v0 = forward_view<double>(weak, support, vars, model, false, unused);
      const auto v1 = forward_view<double>(strong1, support, vars, model, false, unused);
      const auto v2 = forward_view<double>(strong2, support, vars, model, false, unused);
      if (name == "cor") return loss_cor(normalize_latent(v1.z), normalize_latent(v2.z), pairs);
      if (name == "de") return loss_de(normalize_latent(v1.z), normalize_latent(v2.z));
      const auto sacn = loss_sacn(v1.z, v2.z, pairs, weights.lambda);
      if (name == "sacn") return sacn.total;
      const auto sup = loss_sup(v0.y, train_targets, train_nodes);
      if (name == "sup") return sup;
      const auto w2s = loss_w2s(pseudo, v1.y, v2.y);
      if (name == "w2s") return w2s;
      if (name == "two") return loss_stage_two(sup, sacn.total, w2s, weights);
      throw std::invalid_argument("gradcheck: unknown term " + name);
    };
  }
};

struct GradcheckResult {
  std::string term;
  double max_relative_error = 0;
};

inline const std::vector<std::string>& gradcheck_terms() {
  static const std::vector<std::string> terms{"cor", "de", "sacn", "sup", "w2s", "two"};
  return terms;
}

inline std::vector<GradcheckResult> run_gradcheck(double eps, std::uint64_t seed) {
  const auto fixture = GradcheckFixture::make(seed);
  const auto values = fixture.parameter_values();
  std::vector<GradcheckResult> out;
  for (const auto& name : gradcheck_terms()) {
    out.push_back({name, ad::gradient_check<double>(fixture.term(name), values, eps, seed)});
  }
  return out;
}

}  // namespace sacn
