#include "attnseg/instance_assign.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <random>

#include <Eigen/Dense>

#include "attnseg/error.hpp"

namespace attnseg {

std::string to_string(AssignMode mode) { return mode == AssignMode::greedy ? "greedy" : "hungarian"; }

namespace {

constexpr double kIsolatedDegree = 1e-12;

// Portable uniform double in [0, 1) from a standardized engine.
double uniform01(std::mt19937_64& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

struct Affinity {
  Eigen::MatrixXd a;
  std::vector<std::size_t> active;  // nodes with nonzero degree
  std::vector<std::size_t> isolated;
};

Affinity symmetrized_affinity(const Matrix& s) {
  if (s.rows != s.cols || s.rows == 0) throw ValidationError("spectral: self map must be square and non-empty");
  const std::size_t n = s.rows;
  Affinity out;
  out.a.resize(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n));
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      out.a(i, j) = i == j ? 0.0 : 0.5 * (static_cast<double>(s(i, j)) + static_cast<double>(s(j, i)));
    }
  }
  for (std::size_t i = 0; i < n; ++i) {
    (out.a.row(i).sum() > kIsolatedDegree ? out.active : out.isolated).push_back(i);
  }
  return out;
}

Eigen::MatrixXd normalized_laplacian(const Affinity& aff) {
  const auto m = static_cast<Eigen::Index>(aff.active.size());
  Eigen::VectorXd inv_sqrt(m);
  for (Eigen::Index i = 0; i < m; ++i) inv_sqrt(i) = 1.0 / std::sqrt(aff.a.row(aff.active[i]).sum());
  Eigen::MatrixXd l(m, m);
  for (Eigen::Index i = 0; i < m; ++i) {
    for (Eigen::Index j = 0; j < m; ++j) {
      l(i, j) = (i == j ? 1.0 : 0.0) - inv_sqrt(i) * aff.a(aff.active[i], aff.active[j]) * inv_sqrt(j);
    }
  }
  return l;
}

double sq_dist(const Eigen::MatrixXd& pts, Eigen::Index i, const Eigen::MatrixXd& centers, Eigen::Index c) {
  return (pts.row(i) - centers.row(c)).squaredNorm();
}

struct KMeansResult {
  std::vector<int> labels;
  double inertia = std::numeric_limits<double>::infinity();
};

KMeansResult kmeans_once(const Eigen::MatrixXd& pts, int k, int max_iter, std::mt19937_64& rng) {
  const Eigen::Index n = pts.rows();
  Eigen::MatrixXd centers(k, pts.cols());

  // k-means++ seeding.
  auto first = static_cast<Eigen::Index>(uniform01(rng) * static_cast<double>(n));
  centers.row(0) = pts.row(std::min(first, n - 1));
  std::vector<double> d2(static_cast<std::size_t>(n));
  for (Eigen::Index i = 0; i < n; ++i) d2[i] = sq_dist(pts, i, centers, 0);
  for (int c = 1; c < k; ++c) {
    double total = 0.0;
    for (double v : d2) total += v;
    Eigen::Index pick = n - 1;
    if (total > 0.0) {
      const double target = uniform01(rng) * total;
      double run = 0.0;
      for (Eigen::Index i = 0; i < n; ++i) {
        run += d2[i];
        if (run > target) {
          pick = i;
          break;
        }
      }
    } else {
      pick = std::min(static_cast<Eigen::Index>(uniform01(rng) * static_cast<double>(n)), n - 1);
    }
    centers.row(c) = pts.row(pick);
    for (Eigen::Index i = 0; i < n; ++i) d2[i] = std::min(d2[i], sq_dist(pts, i, centers, c));
  }

  KMeansResult res;
  res.labels.assign(static_cast<std::size_t>(n), -1);
  for (int iter = 0; iter < max_iter; ++iter) {
    bool changed = false;
    for (Eigen::Index i = 0; i < n; ++i) {
      int best = 0;
      double best_d = sq_dist(pts, i, centers, 0);
      for (int c = 1; c < k; ++c) {
        const double d = sq_dist(pts, i, centers, c);
        if (d < best_d) {
          best_d = d;
          best = c;
        }
      }
      if (res.labels[i] != best) {
        res.labels[i] = best;
        changed = true;
      }
    }
    if (!changed && iter > 0) break;

    Eigen::MatrixXd sums = Eigen::MatrixXd::Zero(k, pts.cols());
    std::vector<int> counts(static_cast<std::size_t>(k), 0);
    for (Eigen::Index i = 0; i < n; ++i) {
      sums.row(res.labels[i]) += pts.row(i);
      ++counts[res.labels[i]];
    }
    for (int c = 0; c < k; ++c) {
      if (counts[c] > 0) {
        centers.row(c) = sums.row(c) / counts[c];
        continue;
      }
      // Empty cluster: move it to the point farthest from its center.
      Eigen::Index far = 0;
      double far_d = -1.0;
      for (Eigen::Index i = 0; i < n; ++i) {
        const double d = sq_dist(pts, i, centers, res.labels[i]);
        if (d > far_d) {
          far_d = d;
          far = i;
        }
      }
      centers.row(c) = pts.row(far);
      res.labels[far] = c;
    }
  }
  res.inertia = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) res.inertia += sq_dist(pts, i, centers, res.labels[i]);
  return res;
}

}  // namespace

std::vector<double> laplacian_spectrum(const Matrix& self_map) {
  const auto aff = symmetrized_affinity(self_map);
  if (aff.active.empty()) return {};
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(normalized_laplacian(aff), Eigen::EigenvaluesOnly);
  if (solver.info() != Eigen::Success) throw ValidationError("spectral: eigensolve failed");
  const auto& ev = solver.eigenvalues();
  return {ev.data(), ev.data() + ev.size()};
}

int estimate_k_eigengap(const Matrix& self_map, int max_eigs) {
  const auto ev = laplacian_spectrum(self_map);
  const int limit = std::min<int>(max_eigs, static_cast<int>(ev.size()));
  int best_k = 2;
  double best_gap = -1.0;
  for (int i = 1; i < limit; ++i) {
    const double gap = ev[i] - ev[i - 1];
    if (gap > best_gap && i >= 2) {
      best_gap = gap;
      best_k = i;
    }
  }
  return best_k;
}

SegmentPartition spectral_cluster(const Matrix& self_map, std::size_t width, std::size_t height, int k,
                                  std::uint64_t seed, const SpectralOptions& options) {
  if (k < 2) throw ValidationError("spectral_cluster: k must be >= 2");
  if (self_map.rows != width * height) throw ValidationError("spectral_cluster: grid does not match self map");
  if (static_cast<std::size_t>(k) > self_map.rows) {
    throw ValidationError("spectral_cluster: k exceeds the number of cells");
  }
  const auto aff = symmetrized_affinity(self_map);
  const std::size_t n = self_map.rows;

  // Raw cluster keys: isolated node i -> -(i+1); active nodes -> kmeans label.
  std::vector<long long> key(n, 0);
  for (std::size_t i : aff.isolated) key[i] = -static_cast<long long>(i) - 1;

  const int m = static_cast<int>(aff.active.size());
  if (m > 0) {
    const int k_eff = std::clamp(k - static_cast<int>(aff.isolated.size()), 1, m);
    std::vector<int> labels(static_cast<std::size_t>(m), 0);
    if (k_eff > 1) {
      Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(normalized_laplacian(aff));
      if (solver.info() != Eigen::Success) throw ValidationError("spectral_cluster: eigensolve failed");
      Eigen::MatrixXd emb = solver.eigenvectors().leftCols(k_eff);
      for (Eigen::Index i = 0; i < emb.rows(); ++i) {
        const double norm = emb.row(i).norm();
        if (norm > 0.0) emb.row(i) /= norm;
      }
      std::mt19937_64 rng(seed);
      KMeansResult best;
      for (int r = 0; r < std::max(1, options.kmeans_restarts); ++r) {
        auto res = kmeans_once(emb, k_eff, options.kmeans_iterations, rng);
        if (res.inertia < best.inertia) best = std::move(res);
      }
      labels = best.labels;
    }
    for (int i = 0; i < m; ++i) key[aff.active[i]] = labels[i];
  }

  SegmentPartition part;
  part.width = width;
  part.height = height;
  part.segment_id.resize(n);
  part.foreground_mask.assign(n, 1);
  std::map<long long, int> canonical;
  for (std::size_t i = 0; i < n; ++i) {
    auto [it, inserted] = canonical.emplace(key[i], static_cast<int>(canonical.size()));
    part.segment_id[i] = it->second;
  }
  part.n_segments = static_cast<int>(canonical.size());
  return part;
}

BoolGrid foreground_region(const Matrix& sc_class, const Matrix& sc_bg) {
  if (sc_class.rows != sc_bg.rows || sc_class.cols != sc_bg.cols) {
    throw ValidationError("foreground_region: grid shape mismatch");
  }
  BoolGrid fg(sc_class.size());
  for (std::size_t p = 0; p < fg.size(); ++p) fg[p] = sc_class.data[p] > sc_bg.data[p] ? 1 : 0;
  return fg;
}

ScoreMatrix segment_scores(const SegmentPartition& partition, std::span<const Matrix> instance_maps) {
  if (partition.n_segments <= 0 || partition.segment_id.empty()) {
    throw ValidationError("segment_scores: empty partition");
  }
  const std::size_t cells = partition.segment_id.size();
  if (partition.foreground_mask.size() != cells) throw ValidationError("segment_scores: foreground mask size");
  std::vector<std::size_t> counts(static_cast<std::size_t>(partition.n_segments), 0);
  for (std::size_t p = 0; p < cells; ++p) {
    if (partition.foreground_mask[p]) ++counts[partition.segment_id[p]];
  }
  ScoreMatrix scores(instance_maps.size(), static_cast<std::size_t>(partition.n_segments));
  for (std::size_t i = 0; i < instance_maps.size(); ++i) {
    const auto& map = instance_maps[i];
    if (map.size() != cells) throw ValidationError("segment_scores: instance map size differs from partition");
    std::vector<double> sums(counts.size(), 0.0);
    for (std::size_t p = 0; p < cells; ++p) {
      if (partition.foreground_mask[p]) sums[partition.segment_id[p]] += map.data[p];
    }
    for (std::size_t s = 0; s < counts.size(); ++s) {
      scores(i, s) = counts[s] ? sums[s] / static_cast<double>(counts[s]) : 0.0;
    }
  }
  return scores;
}

double AssignmentResult::total_score() const {
  double total = 0.0;
  for (const auto& inst : instances) total += inst.score;
  return total;
}

namespace {

std::string label_for(std::span<const std::string> labels, std::size_t i) {
  return i < labels.size() ? labels[i] : "instance_" + std::to_string(i);
}

void check_scores(const ScoreMatrix& scores) {
  if (scores.rows == 0 || scores.cols == 0 || scores.values.size() != scores.rows * scores.cols) {
    throw ValidationError("assignment: empty score matrix");
  }
  for (double v : scores.values) {
    if (!std::isfinite(v)) throw ValidationError("assignment: non-finite score");
  }
}

}  // namespace

AssignmentResult assign_greedy(const ScoreMatrix& scores, std::span<const std::string> labels) {
  check_scores(scores);
  AssignmentResult out;
  out.mode = AssignMode::greedy;
  for (std::size_t i = 0; i < scores.rows; ++i) {
    std::size_t best = 0;
    for (std::size_t s = 1; s < scores.cols; ++s) {
      if (scores(i, s) > scores(i, best)) best = s;
    }
    out.instances.push_back({label_for(labels, i), {static_cast<int>(best)}, scores(i, best)});
  }
  return out;
}

std::vector<int> solve_assignment(const std::vector<double>& cost, std::size_t n) {
  if (n == 0 || cost.size() != n * n) throw ValidationError("solve_assignment: cost matrix must be n x n");
  // Shortest augmenting paths with row/column potentials; 1-based with a
  // virtual column 0.
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0);
  std::vector<std::size_t> match(n + 1, 0), way(n + 1, 0);
  for (std::size_t i = 1; i <= n; ++i) {
    match[0] = i;
    std::size_t j0 = 0;
    std::vector<double> minv(n + 1, inf);
    std::vector<char> used(n + 1, 0);
    do {
      used[j0] = 1;
      const std::size_t i0 = match[j0];
      double delta = inf;
      std::size_t j1 = 0;
      for (std::size_t j = 1; j <= n; ++j) {
        if (used[j]) continue;
        const double cur = cost[(i0 - 1) * n + (j - 1)] - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (std::size_t j = 0; j <= n; ++j) {
        if (used[j]) {
          u[match[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (match[j0] != 0);
    do {
      const std::size_t j1 = way[j0];
      match[j0] = match[j1];
      j0 = j1;
    } while (j0 != 0);
  }
  std::vector<int> row_to_col(n, -1);
  for (std::size_t j = 1; j <= n; ++j) {
    if (match[j]) row_to_col[match[j] - 1] = static_cast<int>(j - 1);
  }
  return row_to_col;
}

AssignmentResult assign_hungarian(const ScoreMatrix& scores, std::span<const std::string> labels) {
  check_scores(scores);
  const double max_score = *std::max_element(scores.values.begin(), scores.values.end());
  double max_cost = 0.0;
  for (double s : scores.values) max_cost = std::max(max_cost, max_score - s);
  const double pad = max_cost + 1.0;

  const std::size_t n = std::max(scores.rows, scores.cols);
  std::vector<double> cost(n * n, pad);
  for (std::size_t i = 0; i < scores.rows; ++i) {
    for (std::size_t s = 0; s < scores.cols; ++s) cost[i * n + s] = max_score - scores(i, s);
  }
  const auto match = solve_assignment(cost, n);

  AssignmentResult out;
  out.mode = AssignMode::hungarian;
  for (std::size_t i = 0; i < scores.rows; ++i) {
    const int s = match[i];
    if (s >= 0 && static_cast<std::size_t>(s) < scores.cols) {
      out.instances.push_back({label_for(labels, i), {s}, scores(i, static_cast<std::size_t>(s))});
    } else {
      out.instances.push_back({label_for(labels, i), {}, 0.0});
    }
  }
  return out;
}

namespace {

Matrix channel_plane(const CorrelationMap& sc, std::size_t c) {
  Matrix m(sc.height, sc.width);
  std::copy_n(sc.plane(c), sc.plane_size(), m.data.begin());
  return m;
}

std::size_t channel_of_kind(const PromptPlan& plan, TokenKind kind) {
  const auto parts = plan.foreground_parts();
  for (std::size_t i = 0; i < parts.size(); ++i) {
    if (parts[i]->kind == kind) return i + 1;
  }
  throw ValidationError("bundle manifest has no " + to_string(kind) + " span");
}

}  // namespace

InstancePipelineResult run_instance_pipeline(const AttentionBundle& scene,
                                             std::span<const AttentionBundle> identifier_bundles,
                                             const FusionConfig& config, int k, std::uint64_t seed, bool auto_k) {
  if (identifier_bundles.empty()) throw ValidationError("instance pipeline: no identifier bundles");
  const auto scene_plan = plan_from_manifest(scene.token_manifest);
  const auto scene_sc = fuse(scene, scene_plan, config);
  const auto class_channel = channel_of_kind(scene_plan, TokenKind::category);

  InstancePipelineResult res;
  res.k = auto_k ? estimate_k_eigengap(scene.self_map) : (k > 0 ? k : static_cast<int>(identifier_bundles.size()) + 1);
  res.partition = spectral_cluster(scene.self_map, scene.self_width, scene.self_height, res.k, seed);
  res.partition.foreground_mask = foreground_region(channel_plane(scene_sc, class_channel), channel_plane(scene_sc, 0));

  std::vector<Matrix> maps;
  for (const auto& b : identifier_bundles) {
    if (b.self_width != scene.self_width || b.self_height != scene.self_height) {
      throw ValidationError("identifier bundle '" + b.image_id + "' grid differs from the scene grid");
    }
    const auto plan = plan_from_manifest(b.token_manifest);
    const auto sc = fuse(b, plan, config);
    const auto ch = channel_of_kind(plan, TokenKind::identifier);
    maps.push_back(channel_plane(sc, ch));
    res.labels.push_back(sc.channels[ch].label);
  }
  res.scores = segment_scores(res.partition, maps);
  res.greedy = assign_greedy(res.scores, res.labels);
  res.hungarian = assign_hungarian(res.scores, res.labels);
  return res;
}

std::vector<int> ground_truth_segments(const SegmentPartition& partition, std::span<const int> instance_grid,
                                       int count) {
  if (instance_grid.size() != partition.segment_id.size()) {
    throw ValidationError("ground truth grid size differs from partition");
  }
  std::vector<int> out;
  for (int inst = 1; inst <= count; ++inst) {
    std::vector<std::size_t> overlap(static_cast<std::size_t>(partition.n_segments), 0);
    bool any = false;
    for (std::size_t p = 0; p < instance_grid.size(); ++p) {
      if (instance_grid[p] == inst) {
        ++overlap[partition.segment_id[p]];
        any = true;
      }
    }
    if (!any) throw ValidationError("instance " + std::to_string(inst) + " has no ground-truth cells");
    out.push_back(static_cast<int>(std::max_element(overlap.begin(), overlap.end()) - overlap.begin()));
  }
  return out;
}

}  // namespace attnseg
