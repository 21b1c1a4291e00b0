#pragma once

#include "sacn/autodiff.hpp"
#include "sacn/graph.hpp"

#include <json.hpp>

#include <bit>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace sacn {

/// Architecture of the two-layer attention encoder. The defaults give
/// 69,230 parameters on a 1433-feature, 7-class graph.
struct GatConfig {
  Index num_features = 0;
  Index num_classes = 0;
  Index heads = 8;
  Index hidden_per_head = 6;
  Index output_heads = 1;
  double leaky_slope = 0.2;
  double dropout = 0.6;
  double attention_dropout = 0.6;

  Index latent_dim() const { return heads * hidden_per_head; }
};

template <class T>
struct GatLayerParams {
  std::vector<Matrix<T>> weights;    // d_in x d_out per head
  std::vector<Matrix<T>> attention;  // 2 d_out x 1 per head

  Index heads() const { return static_cast<Index>(weights.size()); }
  Index in_dim() const { return weights.empty() ? 0 : weights.front().rows(); }
  Index out_dim() const { return weights.empty() ? 0 : weights.front().cols(); }

  Index count() const {
    Index total = 0;
    for (const auto& w : weights) total += w.size();
    for (const auto& a : attention) total += a.size();
    return total;
  }
};

template <class T>
struct ModelParams {
  GatLayerParams<T> layer1;
  GatLayerParams<T> layer2;

  /// Every trainable tensor, in checkpoint order: layer 1 weights, layer 1
  /// attention vectors, then the same for layer 2.
  std::vector<Matrix<T>*> tensors() {
    std::vector<Matrix<T>*> out;
    for (auto* layer : {&layer1, &layer2}) {
      for (auto& w : layer->weights) out.push_back(&w);
      for (auto& a : layer->attention) out.push_back(&a);
    }
    return out;
  }
  std::vector<const Matrix<T>*> tensors() const {
    std::vector<const Matrix<T>*> out;
    for (const auto* layer : {&layer1, &layer2}) {
      for (const auto& w : layer->weights) out.push_back(&w);
      for (const auto& a : layer->attention) out.push_back(&a);
    }
    return out;
  }
};

template <class T>
Index parameter_count(const ModelParams<T>& params) {
  return params.layer1.count() + params.layer2.count();
}

namespace detail {

template <class T, class Rng>
Matrix<T> glorot_uniform(Index rows, Index cols, Index fan_in, Index fan_out, Rng& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  std::uniform_real_distribution<double> dist(-limit, limit);
  Matrix<T> m(rows, cols);
  for (Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<T>(dist(rng));
  return m;
}

template <class T, class Rng>
GatLayerParams<T> init_layer(Index heads, Index in_dim, Index out_dim, Rng& rng) {
  GatLayerParams<T> layer;
  for (Index h = 0; h < heads; ++h) {
    layer.weights.push_back(glorot_uniform<T>(in_dim, out_dim, in_dim, out_dim, rng));
  }
  for (Index h = 0; h < heads; ++h) {
    layer.attention.push_back(glorot_uniform<T>(2 * out_dim, 1, 2 * out_dim, 1, rng));
  }
  return layer;
}

}  // namespace detail

/// Glorot-uniform initialization of all weights and attention vectors.
template <class T>
ModelParams<T> init_params(const GatConfig& config, std::uint64_t seed) {
  if (config.num_features < 1 || config.num_classes < 1 || config.heads < 1 ||
      config.hidden_per_head < 1 || config.output_heads < 1) {
    throw std::invalid_argument("init_params: all dimensions must be positive");
  }
  std::mt19937_64 rng(seed);
  ModelParams<T> p;
  p.layer1 = detail::init_layer<T>(config.heads, config.num_features, config.hidden_per_head, rng);
  p.layer2 = detail::init_layer<T>(config.output_heads, config.latent_dim(), config.num_classes, rng);
  return p;
}

/// Neighborhood support of the attention layers: the adjacency plus a
/// self-loop on every node. The stored graph adjacency keeps its empty
/// diagonal.
struct AttentionSupport {
  CsrPattern pattern;

  static AttentionSupport from_adjacency(const CsrPattern& adjacency) {
    return AttentionSupport{adjacency.with_self_loops()};
  }
};

template <class T>
struct LayerVars {
  std::vector<ad::Var<T>> weights;
  std::vector<ad::Var<T>> attention;
};

/// Model parameters bound to a tape. All views of one step share one
/// ModelVars so their gradients accumulate into the same leaves.
template <class T>
struct ModelVars {
  LayerVars<T> layer1;
  LayerVars<T> layer2;

  std::vector<ad::Var<T>> all() const {
    std::vector<ad::Var<T>> out;
    for (const auto* layer : {&layer1, &layer2}) {
      out.insert(out.end(), layer->weights.begin(), layer->weights.end());
      out.insert(out.end(), layer->attention.begin(), layer->attention.end());
    }
    return out;
  }
};

/// Binds parameters as gradient-carrying leaves (or constants when
/// `trainable` is false).
template <class T>
ModelVars<T> bind(ad::Tape<T>& tape, const ModelParams<T>& params, bool trainable = true) {
  auto leaf = [&](const Matrix<T>& m) { return trainable ? tape.variable(m) : tape.constant(m); };
  ModelVars<T> vars;
  for (const auto& w : params.layer1.weights) vars.layer1.weights.push_back(leaf(w));
  for (const auto& a : params.layer1.attention) vars.layer1.attention.push_back(leaf(a));
  for (const auto& w : params.layer2.weights) vars.layer2.weights.push_back(leaf(w));
  for (const auto& a : params.layer2.attention) vars.layer2.attention.push_back(leaf(a));
  return vars;
}

/// Rebinds tensors that are already on the tape (e.g. the leaves handed to
/// a gradient-check closure) into the ModelVars layout of `shape`.
template <class T>
ModelVars<T> bind_existing(const std::vector<ad::Var<T>>& leaves, const ModelParams<T>& shape) {
  ModelVars<T> vars;
  std::size_t i = 0;
  auto take = [&](std::size_t count, std::vector<ad::Var<T>>& into) {
    for (std::size_t j = 0; j < count; ++j) into.push_back(leaves.at(i++));
  };
  take(shape.layer1.weights.size(), vars.layer1.weights);
  take(shape.layer1.attention.size(), vars.layer1.attention);
  take(shape.layer2.weights.size(), vars.layer2.weights);
  take(shape.layer2.attention.size(), vars.layer2.attention);
  return vars;
}

enum class HeadMode { concat, single };

struct LayerOptions {
  HeadMode mode = HeadMode::concat;
  double leaky_slope = 0.2;
  double attention_dropout = 0.0;
  bool training = false;
};

namespace detail {

template <class T>
ad::Var<T> project(const ad::Var<T>& x, ad::Var<T> w) { return ad::matmul(x, w); }
template <class T>
ad::Var<T> project(const Matrix<T>& x, ad::Var<T> w) { return ad::matmul(x, w); }
template <class T>
ad::Var<T> project(const SmoothedFeatures<T>& x, ad::Var<T> w) { return ad::linear_map(x, w); }

}  // namespace detail

/// Multi-head graph attention layer.
///
/// For head h: e_ij = LeakyReLU(a_h^T [W_h x_i || W_h x_j]) over j in the
/// support row of i, alpha = softmax of e over that row, and
/// out_i = sum_j alpha_ij W_h x_j. Concat mode joins the heads and applies
/// ELU; single mode returns the head average as logits.
///
/// `x` is a tape variable, or a constant dense matrix or SmoothedFeatures
/// borrowed for the lifetime of the tape.
template <class T, class Input, class Rng>
ad::Var<T> gat_layer(const Input& x, const AttentionSupport& support, const LayerVars<T>& layer,
                     const LayerOptions& options, Rng& rng) {
  const auto heads = static_cast<Index>(layer.weights.size());
  if (heads == 0 || static_cast<Index>(layer.attention.size()) != heads) {
    throw ad::ShapeError("gat_layer: inconsistent head parameters");
  }
  const Index out_dim = layer.weights.front().cols();
  if (x.rows() != support.pattern.rows) {
    throw ad::ShapeError("gat_layer: node count mismatch");
  }

  // One product X [W_1 ... W_H] instead of H separate ones.
  ad::Var<T> projected = heads == 1 ? detail::project<T>(x, layer.weights.front())
                                    : detail::project<T>(x, ad::concat_columns(layer.weights));
  const T slope = static_cast<T>(options.leaky_slope);

  std::vector<ad::Var<T>> outputs;
  outputs.reserve(static_cast<std::size_t>(heads));
  for (Index h = 0; h < heads; ++h) {
    ad::Var<T> hh = heads == 1 ? projected : ad::column_block(projected, h * out_dim, out_dim);
    const auto& a = layer.attention[h];
    ad::Var<T> src = ad::matmul(hh, ad::row_block(a, 0, out_dim));
    ad::Var<T> dst = ad::matmul(hh, ad::row_block(a, out_dim, out_dim));
    ad::Var<T> scores = ad::leaky_relu(ad::edge_sum(src, dst, support.pattern), slope);
    ad::Var<T> alpha = ad::edge_softmax(scores, support.pattern);
    alpha = ad::dropout(alpha, options.attention_dropout, rng, options.training);
    outputs.push_back(ad::edge_aggregate(alpha, support.pattern, hh));
  }

  if (options.mode == HeadMode::concat) {
    return ad::elu(heads == 1 ? outputs.front() : ad::concat_columns(outputs));
  }
  ad::Var<T> total = outputs.front();
  for (Index h = 1; h < heads; ++h) total = ad::add(total, outputs[h]);
  return heads == 1 ? total : ad::scalar_multiply(total, T(1) / static_cast<T>(heads));
}

template <class T>
struct ViewOutputs {
  ad::Var<T> z;       // latent features after head concatenation (and dropout)
  ad::Var<T> logits;  // second-layer output
  ad::Var<T> y;       // row-stochastic predictions
};

/// Runs one view through the shared encoder.
template <class T, class Input, class Rng>
ViewOutputs<T> forward_view(const Input& features, const AttentionSupport& support,
                            const ModelVars<T>& vars, const GatConfig& config, bool training,
                            Rng& rng) {
  LayerOptions first{HeadMode::concat, config.leaky_slope, config.attention_dropout, training};
  ad::Var<T> z = gat_layer<T>(features, support, vars.layer1, first, rng);
  z = ad::dropout(z, config.dropout, rng, training);
  LayerOptions second{HeadMode::single, config.leaky_slope, config.attention_dropout, training};
  ad::Var<T> logits = gat_layer<T>(z, support, vars.layer2, second, rng);
  return {z, logits, ad::row_softmax(logits)};
}

/// Eval-mode predictions (no dropout) as a plain matrix.
template <class T, class Input>
Matrix<T> predict(const ModelParams<T>& params, const Input& features,
                  const AttentionSupport& support, const GatConfig& config) {
  ad::Tape<T> tape;
  const auto vars = bind(tape, params, false);
  std::mt19937_64 unused(0);
  return forward_view<T>(features, support, vars, config, false, unused).y.value();
}

// ---------------------------------------------------------------------------
// Checkpoints: one JSON header line, then every tensor in checkpoint order
// as row-major little-endian 64-bit floats.

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline std::string fnv1a_hex(std::string_view text) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : text) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  std::ostringstream os;
  os << std::hex;
  os.width(16);
  os.fill('0');
  os << h;
  return os.str();
}

namespace detail {

inline std::uint64_t to_little_endian(std::uint64_t v) {
  if constexpr (std::endian::native == std::endian::little) {
    return v;
  } else {
    std::uint64_t out = 0;
    for (int i = 0; i < 8; ++i) out |= ((v >> (8 * i)) & 0xffULL) << (8 * (7 - i));
    return out;
  }
}

}  // namespace detail

template <class T>
void save_checkpoint(const std::filesystem::path& path, const ModelParams<T>& params,
                     const std::string& config_text) {
  nlohmann::ordered_json header;
  header["format"] = "sacn-checkpoint";
  header["version"] = 1;
  header["config_hash"] = fnv1a_hex(config_text);
  header["layers"] = {params.layer1.heads(), params.layer2.heads()};
  nlohmann::ordered_json shapes = nlohmann::ordered_json::array();
  for (const auto* m : params.tensors()) shapes.push_back({m->rows(), m->cols()});
  header["shapes"] = shapes;

  std::ofstream out(path, std::ios::binary);
  if (!out) throw CheckpointError("cannot write checkpoint " + path.string());
  out << header.dump() << '\n';
  for (const auto* m : params.tensors()) {
    for (Index i = 0; i < m->size(); ++i) {
      const auto bits = detail::to_little_endian(
          std::bit_cast<std::uint64_t>(static_cast<double>(m->data()[i])));
      out.write(reinterpret_cast<const char*>(&bits), sizeof(bits));
    }
  }
  if (!out) throw CheckpointError("write failed for " + path.string());
}

template <class T>
struct Checkpoint {
  ModelParams<T> params;
  std::string config_hash;
};

template <class T>
Checkpoint<T> load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot read checkpoint " + path.string());
  std::string line;
  std::getline(in, line);
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(line);
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(std::string("bad checkpoint header: ") + e.what());
  }
  if (header.value("format", "") != "sacn-checkpoint") throw CheckpointError("not a checkpoint");

  std::vector<Index> heads;
  std::vector<std::vector<Index>> shapes;
  Checkpoint<T> ck;
  try {
    heads = header.at("layers").get<std::vector<Index>>();
    shapes = header.at("shapes").get<std::vector<std::vector<Index>>>();
    ck.config_hash = header.at("config_hash").get<std::string>();
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(std::string("bad checkpoint header: ") + e.what());
  }
  if (heads.size() != 2 || static_cast<Index>(shapes.size()) != 2 * (heads[0] + heads[1])) {
    throw CheckpointError("checkpoint header shapes do not match layer heads");
  }
  for (const auto& shape : shapes) {
    if (shape.size() != 2 || shape[0] < 0 || shape[1] < 0) throw CheckpointError("bad tensor shape");
  }
  std::size_t s = 0;
  auto read_tensor = [&]() {
    const auto& shape = shapes.at(s++);
    Matrix<T> m(shape.at(0), shape.at(1));
    for (Index i = 0; i < m.size(); ++i) {
      std::uint64_t bits = 0;
      if (!in.read(reinterpret_cast<char*>(&bits), sizeof(bits))) {
        throw CheckpointError("checkpoint truncated");
      }
      m.data()[i] = static_cast<T>(std::bit_cast<double>(detail::to_little_endian(bits)));
    }
    return m;
  };
  for (auto [layer, h] : {std::pair{&ck.params.layer1, heads[0]}, std::pair{&ck.params.layer2, heads[1]}}) {
    for (Index i = 0; i < h; ++i) layer->weights.push_back(read_tensor());
    for (Index i = 0; i < h; ++i) layer->attention.push_back(read_tensor());
  }
  if (in.peek() != std::char_traits<char>::eof()) throw CheckpointError("trailing data after tensors");
  return ck;
}

}  // namespace sacn
