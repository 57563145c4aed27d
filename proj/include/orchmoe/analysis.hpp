#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "orchmoe/errors.hpp"
#include "orchmoe/tensor.hpp"

namespace orchmoe {

// Evaluation-time allocation state of one projection slot, plus how strongly
// each real task activated each abstract routing slot over an eval batch.
struct AllocationSnapshot {
  std::size_t layer = 0;
  std::size_t step = 0;
  Tensor matrix;             // T x S, entries in (0, 1)
  Tensor task_weight_stats;  // T_real x T mean task weights (empty if unused)
};

inline Tensor normalize_rows(const Tensor& m) {
  Tensor out = Tensor::zeros(m.rows(), m.cols());
  for (std::size_t i = 0; i < m.rows(); ++i) {
    double sum = 0.0;
    for (std::size_t j = 0; j < m.cols(); ++j) {
      const double v = m.at(i, j);
      if (v < 0.0)
        throw ContractError("normalize_rows: negative entry at row " + std::to_string(i));
      sum += v;
    }
    if (sum == 0.0)
      throw NumericalError("normalize_rows: row " + std::to_string(i) +
                           " sums to zero (degenerate)");
    for (std::size_t j = 0; j < m.cols(); ++j) out.at(i, j) = m.at(i, j) / sum;
  }
  return out;
}

// Row-normalize each layer's matrix, then take the arithmetic mean.
inline Tensor average_normalized(const std::vector<Tensor>& per_layer) {
  if (per_layer.empty()) throw ContractError("average_normalized: no matrices given");
  Tensor acc = Tensor::zeros(per_layer.front().rows(), per_layer.front().cols());
  for (const Tensor& m : per_layer) {
    if (m.rows() != acc.rows() || m.cols() != acc.cols())
      throw ShapeError("average_normalized: matrices disagree in shape");
    Tensor n = normalize_rows(m);
    for (std::size_t i = 0; i < acc.size(); ++i) acc.data()[i] += n.data()[i];
  }
  for (double& v : acc.data()) v /= static_cast<double>(per_layer.size());
  return acc;
}

// How much each real task uses each skill: mean task weights composed with
// the allocation matrix.
inline Tensor skill_usage(const Tensor& task_weight_stats, const Tensor& alloc) {
  return matmul(task_weight_stats, alloc);
}

// Either a task leaf or a merge of two subtrees at `height`; heights never
// decrease from leaves to root.
struct DendrogramNode {
  std::size_t task = 0;  // meaningful for leaves only
  double height = 0.0;
  std::size_t count = 1;
  std::unique_ptr<DendrogramNode> left, right;
  bool is_leaf() const { return left == nullptr; }
};

// Agglomerative clustering with average linkage on Euclidean distance
// between row-normalized skill vectors. Ties break toward the pair that
// appears first scanning cluster positions in creation order, so results
// are deterministic.
inline std::unique_ptr<DendrogramNode> cluster_tasks(const Tensor& usage) {
  if (usage.rows() < 1) throw ContractError("cluster_tasks: need at least one task row");
  Tensor rows = normalize_rows(usage);
  const std::size_t t_count = rows.rows(), s_count = rows.cols();

  struct Cluster {
    std::vector<std::size_t> members;
    std::unique_ptr<DendrogramNode> node;
  };
  std::vector<Cluster> active;
  for (std::size_t t = 0; t < t_count; ++t) {
    auto leaf = std::make_unique<DendrogramNode>();
    leaf->task = t;
    active.push_back({{t}, std::move(leaf)});
  }

  auto pair_dist = [&](std::size_t a, std::size_t b) {
    double d2 = 0.0;
    for (std::size_t j = 0; j < s_count; ++j) {
      const double diff = rows.at(a, j) - rows.at(b, j);
      d2 += diff * diff;
    }
    return std::sqrt(d2);
  };
  auto linkage = [&](const Cluster& a, const Cluster& b) {
    double sum = 0.0;
    for (std::size_t i : a.members)
      for (std::size_t j : b.members) sum += pair_dist(i, j);
    return sum / static_cast<double>(a.members.size() * b.members.size());
  };

  while (active.size() > 1) {
    std::size_t best_i = 0, best_j = 1;
    double best = linkage(active[0], active[1]);
    for (std::size_t i = 0; i < active.size(); ++i)
      for (std::size_t j = i + 1; j < active.size(); ++j) {
        const double d = linkage(active[i], active[j]);
        if (d < best) {
          best = d;
          best_i = i;
          best_j = j;
        }
      }
    auto merged = std::make_unique<DendrogramNode>();
    merged->height = best;
    merged->count = active[best_i].members.size() + active[best_j].members.size();
    merged->left = std::move(active[best_i].node);
    merged->right = std::move(active[best_j].node);
    active[best_i].members.insert(active[best_i].members.end(),
                                  active[best_j].members.begin(),
                                  active[best_j].members.end());
    active[best_i].node = std::move(merged);
    active.erase(active.begin() + static_cast<std::ptrdiff_t>(best_j));
  }
  return std::move(active.front().node);
}

namespace detail {

inline void collect_heights(const DendrogramNode& n, std::vector<double>& out) {
  if (n.is_leaf()) return;
  out.push_back(n.height);
  collect_heights(*n.left, out);
  collect_heights(*n.right, out);
}

inline void collect_leaves(const DendrogramNode& n, std::vector<std::size_t>& out) {
  if (n.is_leaf()) {
    out.push_back(n.task);
    return;
  }
  collect_leaves(*n.left, out);
  collect_leaves(*n.right, out);
}

inline void cut_below(const DendrogramNode& n, double threshold,
                      std::vector<std::vector<std::size_t>>& out) {
  if (n.is_leaf() || n.height <= threshold) {
    std::vector<std::size_t> leaves;
    collect_leaves(n, leaves);
    std::sort(leaves.begin(), leaves.end());
    out.push_back(std::move(leaves));
    return;
  }
  cut_below(*n.left, threshold, out);
  cut_below(*n.right, threshold, out);
}

}  // namespace detail

// Partition at the largest gap between consecutive merge heights. With
// fewer than two merges (or no strictly positive gap) everything stays in
// one cluster. Clusters come back sorted by their smallest member.
inline std::vector<std::vector<std::size_t>> cut_at_largest_gap(const DendrogramNode& root) {
  std::vector<double> heights;
  detail::collect_heights(root, heights);
  std::sort(heights.begin(), heights.end());
  double threshold = root.height;  // default: keep every merge
  if (heights.size() >= 2) {
    std::size_t best = 0;
    for (std::size_t i = 1; i + 1 < heights.size(); ++i)
      if (heights[i + 1] - heights[i] > heights[best + 1] - heights[best]) best = i;
    if (heights[best + 1] - heights[best] > 0.0)
      threshold = 0.5 * (heights[best] + heights[best + 1]);
  }
  std::vector<std::vector<std::size_t>> clusters;
  detail::cut_below(root, threshold, clusters);
  std::sort(clusters.begin(), clusters.end(),
            [](const auto& a, const auto& b) { return a.front() < b.front(); });
  return clusters;
}

inline nlohmann::ordered_json dendrogram_to_json(const DendrogramNode& n) {
  nlohmann::ordered_json j;
  if (n.is_leaf()) {
    j["task"] = n.task;
    return j;
  }
  j["left"] = dendrogram_to_json(*n.left);
  j["right"] = dendrogram_to_json(*n.right);
  j["height"] = n.height;
  j["count"] = n.count;
  return j;
}

// Binary view of an allocation: on iff the gate clears one half.
inline Tensor hard_allocation(const Tensor& alloc) {
  Tensor out = Tensor::zeros(alloc.rows(), alloc.cols());
  for (std::size_t i = 0; i < alloc.size(); ++i)
    out.data()[i] = alloc.data()[i] > 0.5 ? 1.0 : 0.0;
  return out;
}

namespace detail {

inline std::string format_g17(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace detail

inline nlohmann::ordered_json snapshot_to_json(const AllocationSnapshot& snap) {
  nlohmann::ordered_json j;
  j["layer"] = snap.layer;
  j["step"] = snap.step;
  j["matrix"] = snap.matrix.data();  // row-major
  j["tasks"] = snap.matrix.rows();
  j["skills"] = snap.matrix.cols();
  return j;
}

inline void export_snapshot(const AllocationSnapshot& snap, const std::string& path,
                            const std::string& format) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write snapshot: " + path);
  if (format == "json") {
    out << snapshot_to_json(snap).dump(2) << "\n";
  } else if (format == "csv") {
    out << "task";
    for (std::size_t s = 0; s < snap.matrix.cols(); ++s) out << ",skill_" << s;
    out << "\n";
    for (std::size_t t = 0; t < snap.matrix.rows(); ++t) {
      out << t;
      for (std::size_t s = 0; s < snap.matrix.cols(); ++s)
        out << "," << detail::format_g17(snap.matrix.at(t, s));
      out << "\n";
    }
  } else {
    throw ContractError("export_snapshot: format must be json or csv, got '" + format + "'");
  }
  if (!out.good()) throw IoError("write failed: " + path);
}

inline AllocationSnapshot import_snapshot(const std::string& path, const std::string& format) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read snapshot: " + path);
  AllocationSnapshot snap;
  if (format == "json") {
    nlohmann::json j;
    try {
      in >> j;
    } catch (const nlohmann::json::parse_error& e) {
      throw IoError("snapshot " + path + ": " + e.what());
    }
    snap.layer = j.at("layer").get<std::size_t>();
    snap.step = j.at("step").get<std::size_t>();
    snap.matrix = Tensor::from(j.at("tasks").get<std::size_t>(),
                               j.at("skills").get<std::size_t>(),
                               j.at("matrix").get<std::vector<double>>());
  } else if (format == "csv") {
    std::string line;
    if (!std::getline(in, line)) throw IoError("snapshot " + path + ": empty file");
    const std::size_t cols = static_cast<std::size_t>(std::count(line.begin(), line.end(), ','));
    std::vector<double> values;
    std::size_t rows = 0;
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      std::istringstream ss(line);
      std::string cell;
      std::getline(ss, cell, ',');  // task index column
      while (std::getline(ss, cell, ',')) values.push_back(std::stod(cell));
      ++rows;
    }
    snap.matrix = Tensor::from(rows, cols, std::move(values));
  } else {
    throw ContractError("import_snapshot: format must be json or csv, got '" + format + "'");
  }
  return snap;
}

}  // namespace orchmoe
