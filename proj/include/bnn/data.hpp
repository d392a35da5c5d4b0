#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "bnn/svi.hpp"

namespace bnn {

struct Dataset {
  Tensor inputs;   // N x D
  Tensor targets;  // N x d (class labels stored as doubles)

  std::size_t size() const { return inputs.dim(0); }
};

struct Task {
  Dataset train;
  Dataset test;
};

using TaskSequence = std::vector<Task>;

enum class SplitKind { two_moons_rotations, gaussian_blobs };

SplitKind parse_split_kind(const std::string& name);

// Two input clusters, x1 ~ U[-1,-0.7] and x2 ~ U[0.5,1], y ~ N(cos(4x+0.8), 0.1^2).
Dataset gen_toy_regression(std::size_t n_per_cluster, std::uint64_t seed);

// Binary tasks in disjoint regions of the plane. n is the number of training
// points per task; test sets have the same size.
TaskSequence gen_split_tasks(SplitKind kind, std::size_t num_tasks, std::size_t n, std::uint64_t seed);

// Header row required. Features keep their column order.
Dataset load_csv(const std::filesystem::path& path, const std::string& target_column);

// Rows [begin, end).
Dataset slice(const Dataset& data, std::size_t begin, std::size_t end);

// Consecutive mini-batches; the last one may be short.
std::vector<Batch> make_batches(const Dataset& data, std::size_t batch_size);

}  // namespace bnn
