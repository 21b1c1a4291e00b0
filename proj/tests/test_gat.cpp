#include "helpers.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>

using namespace sacn;
using sacn::testing::random_matrix;
using sacn::testing::undirected;

namespace {

GatConfig small_config(Index m, Index k, Index heads = 3, Index hidden = 4) {
  GatConfig c;
  c.num_features = m;
  c.num_classes = k;
  c.heads = heads;
  c.hidden_per_head = hidden;
  return c;
}

double leaky(double x, double slope) { return x > 0 ? x : slope * x; }
double elu(double x) { return x > 0 ? x : std::expm1(x); }

/// Scalar-loop attention layer over adjacency + self-loops.
Matrix<double> oracle_layer(const Matrix<double>& x, const CsrPattern& adjacency, const GatLayerParams<double>& layer,
                            bool concat, double slope, std::vector<std::vector<double>>* alpha_out = nullptr) {
  const Index n = x.rows(), heads = layer.heads(), d = layer.out_dim();
  const auto support = adjacency.with_self_loops();
  Matrix<double> out = Matrix<double>::Zero(n, concat ? heads * d : d);
  for (Index h = 0; h < heads; ++h) {
    Matrix<double> wh(n, d);
    for (Index i = 0; i < n; ++i) {
      for (Index c = 0; c < d; ++c) {
        double s = 0;
        for (Index f = 0; f < x.cols(); ++f) s += x(i, f) * layer.weights[h](f, c);
        wh(i, c) = s;
      }
    }
    const Matrix<double>& a = layer.attention[h];
    for (Index i = 0; i < n; ++i) {
      std::vector<Index> nbrs;
      for (Index j = 0; j < n; ++j) {
        if (support.contains(i, j)) nbrs.push_back(j);
      }
      std::vector<double> e;
      for (Index j : nbrs) {
        double s = 0;
        for (Index c = 0; c < d; ++c) s += a(c, 0) * wh(i, c) + a(d + c, 0) * wh(j, c);
        e.push_back(leaky(s, slope));
      }
      const double mx = *std::max_element(e.begin(), e.end());
      double z = 0;
      for (double& v : e) z += (v = std::exp(v - mx));
      for (double& v : e) v /= z;
      if (alpha_out && h == 0) alpha_out->push_back(e);
      for (std::size_t t = 0; t < nbrs.size(); ++t) {
        for (Index c = 0; c < d; ++c) {
          const double contribution = e[t] * wh(nbrs[t], c);
          if (concat) {
            out(i, h * d + c) += contribution;
          } else {
            out(i, c) += contribution / static_cast<double>(heads);
          }
        }
      }
    }
  }
  if (concat) out = out.unaryExpr([](double v) { return elu(v); });
  return out;
}

Matrix<double> eval_layer(const Matrix<double>& x, const CsrPattern& adjacency, const GatLayerParams<double>& layer,
                          HeadMode mode) {
  ad::Tape<double> tape;
  LayerVars<double> vars;
  for (const auto& w : layer.weights) vars.weights.push_back(tape.constant(w));
  for (const auto& a : layer.attention) vars.attention.push_back(tape.constant(a));
  std::mt19937_64 rng(0);
  const auto support = AttentionSupport::from_adjacency(adjacency);
  return gat_layer<double>(x, support, vars, LayerOptions{mode, 0.2, 0.0, false}, rng).value();
}

Matrix<double> eval_y(const ModelParams<double>& params, const Matrix<double>& x, const CsrPattern& a,
                      const GatConfig& config) {
  return predict(params, x, AttentionSupport::from_adjacency(a), config);
}

}  // namespace

TEST(ParameterCount, CoraConfiguration) {
  GatConfig c;
  c.num_features = 1433;
  c.num_classes = 7;
  const auto p = init_params<double>(c, 0);
  EXPECT_EQ(p.layer1.count(), 68880);
  EXPECT_EQ(p.layer2.count(), 350);
  EXPECT_EQ(parameter_count(p), 69230);
}

TEST(ParameterCount, MinimalAndLinearInHeads) {
  EXPECT_EQ(parameter_count(init_params<double>(small_config(1, 1, 1, 1), 0)), 6);
  const auto one = init_params<double>(small_config(20, 3, 4, 5), 0);
  const auto two = init_params<double>(small_config(20, 3, 8, 5), 0);
  EXPECT_EQ(two.layer1.count(), 2 * one.layer1.count());
}

TEST(GatLayer, IsolatedNodeAttendsToItself) {
  std::mt19937_64 rng(1);
  const auto params = init_params<double>(small_config(3, 2, 2, 2), 5);
  const auto x = random_matrix(1, 3, rng);
  const auto out = eval_layer(x, CsrPattern::from_pairs(1, 1, {}), params.layer1, HeadMode::concat);
  for (Index h = 0; h < 2; ++h) {
    const Matrix<double> wx = x * params.layer1.weights[h];
    for (Index c = 0; c < 2; ++c) EXPECT_NEAR(out(0, h * 2 + c), elu(wx(0, c)), 1e-14);
  }
}

TEST(GatLayer, IdenticalNeighborsShareAttentionEqually) {
  std::mt19937_64 rng(2);
  const auto params = init_params<double>(small_config(4, 2, 1, 3), 6);
  Matrix<double> x(2, 4);
  x.row(0) = random_matrix(1, 4, rng);
  x.row(1) = x.row(0);
  std::vector<std::vector<double>> alpha;
  oracle_layer(x, undirected(2, {{0, 1}}), params.layer1, true, 0.2, &alpha);
  for (const auto& row : alpha) {
    ASSERT_EQ(row.size(), 2u);
    EXPECT_DOUBLE_EQ(row[0], 0.5);
    EXPECT_DOUBLE_EQ(row[1], 0.5);
  }
  const auto out = eval_layer(x, undirected(2, {{0, 1}}), params.layer1, HeadMode::concat);
  const Matrix<double> expected = (x.row(0) * params.layer1.weights[0]).unaryExpr([](double v) { return elu(v); });
  EXPECT_LT((out.row(0) - expected).cwiseAbs().maxCoeff(), 1e-14);
}

TEST(GatLayer, PathGraphMatchesScalarOracle) {
  std::mt19937_64 rng(3);
  const auto adjacency = undirected(3, {{0, 1}, {1, 2}});
  const auto params = init_params<double>(small_config(4, 3, 2, 3), 7);
  const auto x = random_matrix(3, 4, rng);
  EXPECT_LT((eval_layer(x, adjacency, params.layer1, HeadMode::concat) -
             oracle_layer(x, adjacency, params.layer1, true, 0.2)).cwiseAbs().maxCoeff(), 1e-13);
  const auto z = random_matrix(3, 6, rng);
  EXPECT_LT((eval_layer(z, adjacency, params.layer2, HeadMode::single) -
             oracle_layer(z, adjacency, params.layer2, false, 0.2)).cwiseAbs().maxCoeff(), 1e-13);
}

TEST(GatLayer, RandomGraphsMatchScalarOracle) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    std::mt19937_64 rng(seed);
    const auto adjacency = sacn::testing::random_graph(9, 0.3, rng);
    const auto params = init_params<double>(small_config(5, 3, 3, 2), seed);
    const auto x = random_matrix(9, 5, rng);
    EXPECT_LT((eval_layer(x, adjacency, params.layer1, HeadMode::concat) -
               oracle_layer(x, adjacency, params.layer1, true, 0.2)).cwiseAbs().maxCoeff(), 1e-12);
  }
}

TEST(ForwardView, EvalModeIsDeterministic) {
  std::mt19937_64 rng(4);
  const auto a = sacn::testing::random_graph(20, 0.2, rng);
  const auto config = small_config(6, 3);
  const auto params = init_params<double>(config, 1);
  const auto x = random_matrix(20, 6, rng);
  EXPECT_TRUE(eval_y(params, x, a, config) == eval_y(params, x, a, config));
}

TEST(ForwardView, ViewsCollapseWithoutMaskingOrDropout) {
  std::mt19937_64 rng(5);
  const auto a = sacn::testing::random_graph(15, 0.2, rng);
  auto config = small_config(6, 3);
  config.dropout = 0.0;
  config.attention_dropout = 0.0;
  const auto params = init_params<double>(config, 2);
  const auto x = random_matrix(15, 6, rng);
  std::mt19937_64 mask_rng(9);
  const auto [strong, plan] = feature_mask(x, 0.0, mask_rng);
  ad::Tape<double> tape;
  const auto vars = bind(tape, params);
  const auto support = AttentionSupport::from_adjacency(a);
  const auto weak = forward_view<double>(x, support, vars, config, true, rng);
  const auto view = forward_view<double>(strong, support, vars, config, true, rng);
  EXPECT_TRUE(weak.z.value() == view.z.value());
  EXPECT_TRUE(weak.y.value() == view.y.value());
}

TEST(ForwardView, RowsAreStochastic) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    std::mt19937_64 rng(seed);
    const auto a = sacn::testing::random_graph(30, 0.15, rng);
    const auto config = small_config(8, 4);
    const auto params = init_params<double>(config, seed);
    const auto x = random_matrix(30, 8, rng, 5.0);
    ad::Tape<double> tape;
    const auto vars = bind(tape, params);
    const auto view = forward_view<double>(x, AttentionSupport::from_adjacency(a), vars, config, true, rng);
    const Matrix<double>& y = view.y.value();
    for (Index i = 0; i < y.rows(); ++i) EXPECT_NEAR(y.row(i).sum(), 1.0, 1e-6);
    EXPECT_TRUE(view.z.value().allFinite());
    EXPECT_EQ(view.z.cols(), config.latent_dim());
  }
}

TEST(ForwardView, PermutationEquivariance) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    std::mt19937_64 rng(seed);
    const Index n = 25;
    const auto a = sacn::testing::random_graph(n, 0.15, rng);
    const auto config = small_config(7, 3);
    const auto params = init_params<double>(config, seed);
    const auto x = random_matrix(n, 7, rng);

    std::vector<Index> perm(n);
    std::iota(perm.begin(), perm.end(), Index{0});
    std::shuffle(perm.begin(), perm.end(), rng);
    std::vector<std::pair<Index, Index>> pairs;
    for (Index i = 0; i < n; ++i) {
      for (Index e = a.row_ptr[i]; e < a.row_ptr[i + 1]; ++e) pairs.emplace_back(perm[i], perm[a.col_idx[e]]);
    }
    const auto pa = CsrPattern::from_pairs(n, n, pairs);
    Matrix<double> px(n, 7);
    for (Index i = 0; i < n; ++i) px.row(perm[i]) = x.row(i);

    const auto y = eval_y(params, x, a, config);
    const auto py = eval_y(params, px, pa, config);
    for (Index i = 0; i < n; ++i) {
      EXPECT_LT((py.row(perm[i]) - y.row(i)).cwiseAbs().maxCoeff(), 1e-12) << "seed " << seed;
    }
  }
}

TEST(ForwardView, TwoHopLocality) {
  std::mt19937_64 rng(8);
  // Path 0-1-2-3-4-5: node 3 and beyond are outside node 0's 2-hop ball.
  const auto a = undirected(6, {{0, 1}, {1, 2}, {2, 3}, {3, 4}, {4, 5}});
  const auto config = small_config(4, 2);
  const auto params = init_params<double>(config, 3);
  auto x = random_matrix(6, 4, rng);
  const auto before = eval_y(params, x, a, config);
  x.row(3) = random_matrix(1, 4, rng);
  x.row(5) *= -3.0;
  const auto after = eval_y(params, x, a, config);
  EXPECT_TRUE(before.row(0) == after.row(0));
  EXPECT_FALSE(before.row(1) == after.row(1));
}

TEST(ForwardView, SharedEncoderAcrossViews) {
  std::mt19937_64 rng(10);
  const auto a = sacn::testing::random_graph(10, 0.3, rng);
  const auto config = small_config(5, 2);
  auto params = init_params<double>(config, 4);
  const auto x = random_matrix(10, 5, rng);
  std::mt19937_64 mask_rng(1);
  const auto [strong, plan] = feature_mask(x, 0.4, mask_rng);
  const auto weak_before = eval_y(params, x, a, config);
  const auto strong_before = eval_y(params, strong, a, config);
  params.layer2.weights[0](0, 0) += 0.5;
  EXPECT_FALSE(eval_y(params, x, a, config) == weak_before);
  EXPECT_FALSE(eval_y(params, strong, a, config) == strong_before);

  // One bound ModelVars feeds both views; gradients from both land in it.
  ad::Tape<double> tape;
  const auto vars = bind(tape, params);
  const auto support = AttentionSupport::from_adjacency(a);
  const auto v1 = forward_view<double>(x, support, vars, config, false, rng);
  const auto v2 = forward_view<double>(strong, support, vars, config, false, rng);
  tape.backward(ad::add(ad::sum(ad::log(v1.y)), ad::sum(ad::log(v2.y))));
  EXPECT_FALSE(vars.layer1.weights[0].grad().isZero(0.0));
}

TEST(ForwardView, CoraShapedOutput) {
  const auto g = generate_sbm({.num_nodes = 2708, .num_classes = 7, .p_in = 0.004, .p_out = 0.0002,
                               .num_features = 1433, .feature_flip = 0.01, .seed = 0});
  GatConfig config;
  config.num_features = 1433;
  config.num_classes = 7;
  const auto params = init_params<double>(config, 0);
  const auto y = eval_y(params, g.features.to_dense(), g.adjacency, config);
  EXPECT_EQ(y.rows(), 2708);
  EXPECT_EQ(y.cols(), 7);
}

TEST(ForwardView, TrainingModeDropoutDependsOnRng) {
  std::mt19937_64 rng(11);
  const auto a = sacn::testing::random_graph(12, 0.3, rng);
  const auto config = small_config(5, 2);
  const auto params = init_params<double>(config, 5);
  const auto x = random_matrix(12, 5, rng);
  ad::Tape<double> tape;
  const auto vars = bind(tape, params);
  const auto support = AttentionSupport::from_adjacency(a);
  std::mt19937_64 r1(1), r2(1), r3(2);
  const auto y1 = forward_view<double>(x, support, vars, config, true, r1).y.value();
  const auto y2 = forward_view<double>(x, support, vars, config, true, r2).y.value();
  const auto y3 = forward_view<double>(x, support, vars, config, true, r3).y.value();
  EXPECT_TRUE(y1 == y2);
  EXPECT_FALSE(y1 == y3);
}

TEST(Checkpoint, RoundTripsBitExactly) {
  const auto config = small_config(9, 4);
  const auto params = init_params<double>(config, 12);
  const auto path = std::filesystem::temp_directory_path() / "sacn_ckpt_test.bin";
  save_checkpoint(path, params, R"({"x":1})");
  const auto loaded = load_checkpoint<double>(path);
  EXPECT_EQ(loaded.config_hash, fnv1a_hex(R"({"x":1})"));
  const auto a = params.tensors();
  const auto b = loaded.params.tensors();
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_TRUE(*a[i] == *b[i]);

  std::filesystem::resize_file(path, std::filesystem::file_size(path) - 8);
  EXPECT_THROW(load_checkpoint<double>(path), CheckpointError);
  std::ofstream(path) << "not json\n";
  EXPECT_THROW(load_checkpoint<double>(path), CheckpointError);
  std::filesystem::remove(path);
}

TEST(Checkpoint, HashIsFnv1a) {
  EXPECT_EQ(fnv1a_hex(""), "cbf29ce484222325");
  EXPECT_EQ(fnv1a_hex("a"), "af63dc4c8601ec8c");
}

TEST(ForwardView, FactoredFeaturesMatchDenseFeatures) {
  std::mt19937_64 rng(21);
  const auto bundle = generate_sbm({.num_nodes = 40, .num_classes = 3, .p_in = 0.3, .p_out = 0.05,
                                    .num_features = 12, .feature_flip = 0.1, .seed = 21});
  const auto ahat = renormalized_adjacency<double>(bundle.adjacency);
  const SmoothedFeatures<double> factored(bundle.features, ahat, 3);
  const auto masked = factored.masked({2, 5, 7});
  const auto config = small_config(12, 3);
  const auto params = init_params<double>(config, 4);
  const auto support = AttentionSupport::from_adjacency(bundle.adjacency);
  for (const auto* f : {&factored, &masked}) {
    const Matrix<double> dense = f->to_dense();
    EXPECT_LT((predict(params, *f, support, config) - predict(params, dense, support, config)).cwiseAbs().maxCoeff(),
              1e-12);
  }
}
