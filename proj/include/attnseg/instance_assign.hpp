#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "attnseg/fusion.hpp"
#include "attnseg/matrix.hpp"
#include "attnseg/tensor_store.hpp"

namespace attnseg {

using BoolGrid = std::vector<std::uint8_t>;

struct SegmentPartition {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<int> segment_id;  // per grid cell, in [0, n_segments)
  int n_segments = 0;
  BoolGrid foreground_mask;

  friend bool operator==(const SegmentPartition&, const SegmentPartition&) = default;
};

struct SpectralOptions {
  int kmeans_iterations = 100;
  int kmeans_restarts = 8;
};

/// Normalized-Laplacian spectral clustering of the symmetrized affinity
/// (S + S^T)/2 with a zeroed diagonal. Zero-degree nodes become singleton
/// segments. Segment ids are numbered in order of first appearance.
SegmentPartition spectral_cluster(const Matrix& self_map, std::size_t width, std::size_t height, int k,
                                  std::uint64_t seed, const SpectralOptions& options = {});

/// Eigenvalues of the normalized Laplacian in ascending order.
std::vector<double> laplacian_spectrum(const Matrix& self_map);
/// Position of the largest gap among the first `max_eigs` eigenvalues, >= 2.
int estimate_k_eigengap(const Matrix& self_map, int max_eigs = 10);

BoolGrid foreground_region(const Matrix& sc_class, const Matrix& sc_bg);

struct ScoreMatrix {
  std::size_t rows = 0;  // instances
  std::size_t cols = 0;  // segments
  std::vector<double> values;

  ScoreMatrix() = default;
  ScoreMatrix(std::size_t r, std::size_t c, double fill = 0.0) : rows(r), cols(c), values(r * c, fill) {}
  ScoreMatrix(std::size_t r, std::size_t c, std::vector<double> v) : rows(r), cols(c), values(std::move(v)) {}

  double& operator()(std::size_t r, std::size_t c) { return values[r * cols + c]; }
  double operator()(std::size_t r, std::size_t c) const { return values[r * cols + c]; }
};

/// Entry (i, s): mean of instance map i over the foreground cells of segment
/// s; 0 when the segment has no foreground cells.
ScoreMatrix segment_scores(const SegmentPartition& partition, std::span<const Matrix> instance_maps);

enum class AssignMode { greedy, hungarian };

struct InstanceAssignment {
  std::string label;
  std::vector<int> segments;  // empty if unassigned
  double score = 0.0;
};

struct AssignmentResult {
  AssignMode mode = AssignMode::greedy;
  std::vector<InstanceAssignment> instances;

  double total_score() const;
};

AssignmentResult assign_greedy(const ScoreMatrix& scores, std::span<const std::string> labels = {});
AssignmentResult assign_hungarian(const ScoreMatrix& scores, std::span<const std::string> labels = {});

/// Minimum-cost perfect matching on a square cost matrix (row -> column).
std::vector<int> solve_assignment(const std::vector<double>& cost, std::size_t n);

struct InstancePipelineResult {
  SegmentPartition partition;
  ScoreMatrix scores;
  AssignmentResult greedy;
  AssignmentResult hungarian;
  std::vector<std::string> labels;
  int k = 0;
};

/// Scene bundle ("a photo including <class>.") gives the foreground and the
/// affinity to cluster; each identifier bundle ("<new1> <class>") gives one
/// instance map. k <= 0 means instances + 1, unless auto_k.
InstancePipelineResult run_instance_pipeline(const AttentionBundle& scene,
                                             std::span<const AttentionBundle> identifier_bundles,
                                             const FusionConfig& config, int k, std::uint64_t seed,
                                             bool auto_k = false);

/// For each instance id 1..count in a grid-resolution instance mask, the
/// segment with the largest overlap (ties to the lower id).
std::vector<int> ground_truth_segments(const SegmentPartition& partition, std::span<const int> instance_grid,
                                       int count);

std::string to_string(AssignMode mode);

}  // namespace attnseg
