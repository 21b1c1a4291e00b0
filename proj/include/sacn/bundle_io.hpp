#pragma once

// Plain-text graph bundle directory:
//
//   meta.json     {"name", "num_nodes", "num_features", "num_classes"[, "num_edges"]}
//   edges.tsv     src <TAB> dst          one line per undirected edge, src < dst
//   features.tsv  node <TAB> dim <TAB> value
//   labels.tsv    node <TAB> class       nodes without a line are unlabeled
//   splits.json   {"train": [...], "val": [...], "test": [...]}   (optional)
//
// All indices are 0-based. Values are written in shortest round-trip form
// using Python's float repr conventions, so bundles produced by a Python
// converter and re-saved here compare byte-identical.

#include "sacn/graph.hpp"

#include <json.hpp>

#include <algorithm>
#include <array>
#include <cmath>
#include <charconv>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <string_view>
#include <tuple>
#include <vector>

namespace sacn {

class BundleError : public GraphError {
 public:
  BundleError(const std::filesystem::path& file, std::size_t line, const std::string& what)
      : GraphError(file.string() + (line ? ":" + std::to_string(line) : std::string()) + ": " +
                   what),
        file_(file),
        line_(line) {}

  const std::filesystem::path& file() const { return file_; }
  std::size_t line() const { return line_; }

 private:
  std::filesystem::path file_;
  std::size_t line_;
};

/// Shortest round-trip decimal text for a finite double, following the
/// layout of Python's float repr ("1.0", "0.0001", "1e-05", "1e+16").
inline std::string format_decimal(double value) {
  if (!std::isfinite(value)) throw std::invalid_argument("format_decimal: non-finite value");
  std::array<char, 64> buf{};
  auto [end, ec] = std::to_chars(buf.data(), buf.data() + buf.size(), value,
                                 std::chars_format::scientific);
  std::string sci(buf.data(), end);

  std::string sign;
  if (sci.front() == '-') {
    sign = "-";
    sci.erase(0, 1);
  }
  const auto epos = sci.find('e');
  std::string digits = sci.substr(0, epos);
  digits.erase(std::remove(digits.begin(), digits.end(), '.'), digits.end());
  const int exponent = std::stoi(sci.substr(epos + 1));

  if (exponent < -4 || exponent >= 16) {
    std::string out = sign + digits.substr(0, 1);
    if (digits.size() > 1) out += "." + digits.substr(1);
    const int mag = exponent < 0 ? -exponent : exponent;
    out += exponent < 0 ? "e-" : "e+";
    if (mag < 10) out += "0";
    return out + std::to_string(mag);
  }
  if (exponent < 0) {
    return sign + "0." + std::string(static_cast<std::size_t>(-exponent - 1), '0') + digits;
  }
  const auto int_len = static_cast<std::size_t>(exponent) + 1;
  if (digits.size() <= int_len) {
    return sign + digits + std::string(int_len - digits.size(), '0') + ".0";
  }
  return sign + digits.substr(0, int_len) + "." + digits.substr(int_len);
}

namespace detail {

inline std::vector<std::string_view> split_tabs(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    auto pos = line.find('\t', start);
    out.push_back(line.substr(start, pos - start));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

template <class Num>
Num parse_field(std::string_view text, const std::filesystem::path& file, std::size_t line) {
  Num value{};
  auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
  if (ec != std::errc() || ptr != text.data() + text.size()) {
    throw BundleError(file, line, "malformed field '" + std::string(text) + "'");
  }
  return value;
}

/// Calls fn(fields, line_number) for each non-empty line of a TSV file.
template <class Fn>
void read_tsv(const std::filesystem::path& file, std::size_t columns, Fn&& fn) {
  std::ifstream in(file);
  if (!in) throw BundleError(file, 0, "missing or unreadable file");
  std::string line;
  std::size_t number = 0;
  while (std::getline(in, line)) {
    ++number;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    auto fields = split_tabs(line);
    if (fields.size() != columns) {
      throw BundleError(file, number,
                        "expected " + std::to_string(columns) + " tab-separated columns");
    }
    fn(fields, number);
  }
}

inline nlohmann::json read_json(const std::filesystem::path& file) {
  std::ifstream in(file);
  if (!in) throw BundleError(file, 0, "missing or unreadable file");
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw BundleError(file, 0, e.what());
  }
}

inline void write_text(const std::filesystem::path& file, const std::string& text) {
  std::ofstream out(file, std::ios::binary);
  if (!out) throw BundleError(file, 0, "cannot open for writing");
  out << text;
  if (!out) throw BundleError(file, 0, "write failed");
}

}  // namespace detail

inline GraphBundle load_bundle(const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(dir)) throw BundleError(dir, 0, "bundle directory not found");

  GraphBundle g;
  const auto meta_path = dir / "meta.json";
  const auto meta = detail::read_json(meta_path);
  try {
    g.name = meta.at("name").get<std::string>();
    g.num_nodes = meta.at("num_nodes").get<Index>();
    g.num_features = meta.at("num_features").get<Index>();
    g.num_classes = meta.at("num_classes").get<Index>();
  } catch (const nlohmann::json::exception& e) {
    throw BundleError(meta_path, 0, e.what());
  }
  if (g.num_nodes < 0 || g.num_features < 0 || g.num_classes < 0) {
    throw BundleError(meta_path, 0, "negative dimension");
  }
  const Index n = g.num_nodes;

  const auto edges_path = dir / "edges.tsv";
  std::vector<std::pair<Index, Index>> pairs;
  detail::read_tsv(edges_path, 2, [&](const auto& f, std::size_t line) {
    const auto src = detail::parse_field<Index>(f[0], edges_path, line);
    const auto dst = detail::parse_field<Index>(f[1], edges_path, line);
    if (src < 0 || src >= n || dst < 0 || dst >= n) {
      throw BundleError(edges_path, line, "node index out of range");
    }
    if (src == dst) throw BundleError(edges_path, line, "self-loop");
    pairs.emplace_back(src, dst);
    pairs.emplace_back(dst, src);
  });
  g.adjacency = CsrPattern::from_pairs(n, n, std::move(pairs));

  const auto features_path = dir / "features.tsv";
  std::vector<std::tuple<Index, Index, double, std::size_t>> triplets;
  detail::read_tsv(features_path, 3, [&](const auto& f, std::size_t line) {
    const auto node = detail::parse_field<Index>(f[0], features_path, line);
    const auto dim = detail::parse_field<Index>(f[1], features_path, line);
    const auto value = detail::parse_field<double>(f[2], features_path, line);
    if (!std::isfinite(value)) throw BundleError(features_path, line, "non-finite feature value");
    if (node < 0 || node >= n) throw BundleError(features_path, line, "node index out of range");
    if (dim < 0 || dim >= g.num_features) {
      throw BundleError(features_path, line, "feature dimension out of range");
    }
    triplets.emplace_back(node, dim, value, line);
  });
  std::sort(triplets.begin(), triplets.end());
  g.features.pattern.rows = n;
  g.features.pattern.cols = g.num_features;
  g.features.pattern.row_ptr.assign(static_cast<std::size_t>(n) + 1, 0);
  for (std::size_t t = 0; t < triplets.size(); ++t) {
    const auto& [node, dim, value, line] = triplets[t];
    if (t > 0 && std::get<0>(triplets[t - 1]) == node && std::get<1>(triplets[t - 1]) == dim) {
      throw BundleError(features_path, line, "duplicate feature entry");
    }
    ++g.features.pattern.row_ptr[node + 1];
    g.features.pattern.col_idx.push_back(dim);
    g.features.values.push_back(value);
  }
  for (Index r = 0; r < n; ++r) g.features.pattern.row_ptr[r + 1] += g.features.pattern.row_ptr[r];

  const auto labels_path = dir / "labels.tsv";
  g.labels.assign(static_cast<std::size_t>(n), kUnlabeled);
  detail::read_tsv(labels_path, 2, [&](const auto& f, std::size_t line) {
    const auto node = detail::parse_field<Index>(f[0], labels_path, line);
    const auto cls = detail::parse_field<int>(f[1], labels_path, line);
    if (node < 0 || node >= n) throw BundleError(labels_path, line, "node index out of range");
    if (cls < 0 || cls >= g.num_classes) throw BundleError(labels_path, line, "class out of range");
    if (g.labels[node] != kUnlabeled) throw BundleError(labels_path, line, "duplicate labeled node");
    g.labels[node] = cls;
  });

  const auto splits_path = dir / "splits.json";
  if (fs::exists(splits_path)) {
    const auto splits = detail::read_json(splits_path);
    auto read_list = [&](const char* key) {
      std::vector<Index> out;
      if (!splits.contains(key)) return out;
      try {
        out = splits.at(key).get<std::vector<Index>>();
      } catch (const nlohmann::json::exception& e) {
        throw BundleError(splits_path, 0, e.what());
      }
      std::sort(out.begin(), out.end());
      return out;
    };
    g.split.train = read_list("train");
    g.split.val = read_list("val");
    g.split.test = read_list("test");
    try {
      g.validate();
    } catch (const GraphError& e) {
      throw BundleError(splits_path, 0, e.what());
    }
  }
  g.validate();
  return g;
}

/// Writes a bundle in canonical order: edges by (src, dst) with src < dst,
/// features by (node, dim), labels by node. splits.json is written only
/// when the bundle carries a split.
inline void save_bundle(const GraphBundle& g, const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);

  nlohmann::ordered_json meta;
  meta["name"] = g.name;
  meta["num_nodes"] = g.num_nodes;
  meta["num_features"] = g.num_features;
  meta["num_classes"] = g.num_classes;
  meta["num_edges"] = g.num_edges();
  detail::write_text(dir / "meta.json", meta.dump(2) + "\n");

  std::string edges;
  const auto& a = g.adjacency;
  for (Index r = 0; r < a.rows; ++r) {
    for (Index k = a.row_ptr[r]; k < a.row_ptr[r + 1]; ++k) {
      if (a.col_idx[k] > r) {
        edges += std::to_string(r) + '\t' + std::to_string(a.col_idx[k]) + '\n';
      }
    }
  }
  detail::write_text(dir / "edges.tsv", edges);

  std::string features;
  const auto& p = g.features.pattern;
  for (Index r = 0; r < p.rows; ++r) {
    for (Index k = p.row_ptr[r]; k < p.row_ptr[r + 1]; ++k) {
      features += std::to_string(r) + '\t' + std::to_string(p.col_idx[k]) + '\t' +
                  format_decimal(g.features.values[k]) + '\n';
    }
  }
  detail::write_text(dir / "features.tsv", features);

  std::string labels;
  for (Index i = 0; i < g.num_nodes; ++i) {
    if (g.labels[i] != kUnlabeled) labels += std::to_string(i) + '\t' + std::to_string(g.labels[i]) + '\n';
  }
  detail::write_text(dir / "labels.tsv", labels);

  if (g.split.empty()) {
    fs::remove(dir / "splits.json");
    return;
  }
  nlohmann::ordered_json splits;
  splits["train"] = g.split.train;
  splits["val"] = g.split.val;
  splits["test"] = g.split.test;
  detail::write_text(dir / "splits.json", splits.dump() + "\n");
}

}  // namespace sacn
