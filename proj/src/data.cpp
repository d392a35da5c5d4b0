#include "bnn/data.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <numbers>
#include <sstream>

namespace bnn {

namespace {

std::vector<std::string> split_cells(const std::string& line) {
  std::vector<std::string> cells;
  std::string cell;
  std::istringstream in(line);
  while (std::getline(in, cell, ',')) cells.push_back(cell);
  if (!line.empty() && line.back() == ',') cells.emplace_back();
  return cells;
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

// Appends a blob of n points around (cx, cy) with the given label.
void add_blob(std::vector<double>& x, std::vector<double>& y, std::size_t n, double cx, double cy, double sd,
              double label, CounterRng& rng) {
  for (std::size_t i = 0; i < n; ++i) {
    x.push_back(cx + sd * rng.normal());
    x.push_back(cy + sd * rng.normal());
    y.push_back(label);
  }
}

Dataset blob_pair(std::size_t n, double cx, double cy, double angle, CounterRng& rng) {
  constexpr double sd = 0.5;
  constexpr double half_gap = 2.0 * sd;  // centres 4 sd apart
  const double dx = std::cos(angle) * half_gap;
  const double dy = std::sin(angle) * half_gap;
  std::vector<double> x;
  std::vector<double> y;
  for (std::size_t i = 0; i < n; ++i) {
    const double label = static_cast<double>(i % 2);
    const double sign = label == 0.0 ? -1.0 : 1.0;
    add_blob(x, y, 1, cx + sign * dx, cy + sign * dy, sd, label, rng);
  }
  return {Tensor({n, 2}, std::move(x)), Tensor({n, 1}, std::move(y))};
}

Dataset rotated_moons(std::size_t n, double angle, CounterRng& rng) {
  constexpr double noise = 0.1;
  const double c = std::cos(angle);
  const double s = std::sin(angle);
  std::vector<double> x;
  std::vector<double> y;
  for (std::size_t i = 0; i < n; ++i) {
    const double label = static_cast<double>(i % 2);
    const double t = std::numbers::pi * rng.uniform();
    double px = label == 0.0 ? std::cos(t) : 1.0 - std::cos(t);
    double py = label == 0.0 ? std::sin(t) : 0.5 - std::sin(t);
    px += noise * rng.normal() - 0.5;
    py += noise * rng.normal() - 0.25;
    x.push_back(c * px - s * py);
    x.push_back(s * px + c * py);
    y.push_back(label);
  }
  return {Tensor({n, 2}, std::move(x)), Tensor({n, 1}, std::move(y))};
}

}  // namespace

SplitKind parse_split_kind(const std::string& name) {
  if (name == "two_moons_rotations") return SplitKind::two_moons_rotations;
  if (name == "gaussian_blobs") return SplitKind::gaussian_blobs;
  throw ConfigError("unknown task split '" + name + "' (two_moons_rotations|gaussian_blobs)");
}

Dataset gen_toy_regression(std::size_t n_per_cluster, std::uint64_t seed) {
  if (n_per_cluster == 0) throw ContractError("toy regression needs at least one point per cluster");
  CounterRng rng(seed, 0x746f79);  // "toy"
  const std::size_t n = 2 * n_per_cluster;
  std::vector<double> x(n);
  std::vector<double> y(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double u = rng.uniform();
    x[i] = i < n_per_cluster ? -1.0 + 0.3 * u : 0.5 + 0.5 * u;
    y[i] = std::cos(4.0 * x[i] + 0.8) + 0.1 * rng.normal();
  }
  return {Tensor({n, 1}, std::move(x)), Tensor({n, 1}, std::move(y))};
}

TaskSequence gen_split_tasks(SplitKind kind, std::size_t num_tasks, std::size_t n, std::uint64_t seed) {
  if (num_tasks < 2) throw ContractError("a task split needs at least two tasks");
  if (n < 2) throw ContractError("each task needs at least two points");
  TaskSequence tasks;
  for (std::size_t t = 0; t < num_tasks; ++t) {
    CounterRng train_rng(seed, 2 * t);
    CounterRng test_rng(seed, 2 * t + 1);
    const double frac = static_cast<double>(t) / static_cast<double>(num_tasks);
    if (kind == SplitKind::gaussian_blobs) {
      // Task centres on a circle; the label direction turns with the task.
      const double where = 2.0 * std::numbers::pi * frac;
      const double cx = 3.0 * std::cos(where);
      const double cy = 3.0 * std::sin(where);
      const double angle = where + std::numbers::pi / 2.0 + std::numbers::pi * frac;
      tasks.push_back({blob_pair(n, cx, cy, angle, train_rng), blob_pair(n, cx, cy, angle, test_rng)});
    } else {
      const double angle = std::numbers::pi * frac;
      tasks.push_back({rotated_moons(n, angle, train_rng), rotated_moons(n, angle, test_rng)});
    }
  }
  return tasks;
}

Dataset load_csv(const std::filesystem::path& path, const std::string& target_column) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open '" + path.string() + "'");
  std::string line;
  if (!std::getline(in, line) || trim(line).empty()) throw ParseError(path.string() + ": empty file, header row expected");
  std::vector<std::string> header = split_cells(line);
  for (auto& h : header) h = trim(h);
  std::size_t target = header.size();
  for (std::size_t c = 0; c < header.size(); ++c)
    if (header[c] == target_column) target = c;
  if (target == header.size()) throw ConfigError(path.string() + ": no column named '" + target_column + "'");
  if (header.size() < 2) throw ParseError(path.string() + ": need at least one feature column");

  std::vector<double> features;
  std::vector<double> targets;
  std::size_t row = 0;
  while (std::getline(in, line)) {
    if (trim(line).empty()) continue;
    ++row;
    const auto cells = split_cells(line);
    if (cells.size() != header.size())
      throw ParseError(path.string() + ": row " + std::to_string(row) + " has " + std::to_string(cells.size()) +
                       " cells, expected " + std::to_string(header.size()));
    for (std::size_t c = 0; c < cells.size(); ++c) {
      const std::string cell = trim(cells[c]);
      double v = 0.0;
      const auto [end, ec] = std::from_chars(cell.data(), cell.data() + cell.size(), v);
      if (cell.empty() || ec != std::errc() || end != cell.data() + cell.size() || !std::isfinite(v))
        throw ParseError(path.string() + ": row " + std::to_string(row) + ", column '" + header[c] +
                         "': not a number: '" + cell + "'");
      (c == target ? targets : features).push_back(v);
    }
  }
  if (row == 0) throw ParseError(path.string() + ": no data rows");
  const std::size_t d = header.size() - 1;
  return {Tensor({row, d}, std::move(features)), Tensor({row, 1}, std::move(targets))};
}

Dataset slice(const Dataset& data, std::size_t begin, std::size_t end) {
  if (begin >= end || end > data.size()) throw ContractError("bad slice of a dataset");
  const auto rows = static_cast<Eigen::Index>(end - begin);
  const auto b = static_cast<Eigen::Index>(begin);
  return {Tensor({end - begin, data.inputs.dim(1)}, data.inputs.matrix().middleRows(b, rows)),
          Tensor({end - begin, data.targets.dim(1)}, data.targets.matrix().middleRows(b, rows))};
}

std::vector<Batch> make_batches(const Dataset& data, std::size_t batch_size) {
  if (batch_size == 0) throw ConfigError("batch size must be positive");
  std::vector<Batch> batches;
  for (std::size_t b = 0; b < data.size(); b += batch_size) {
    Dataset part = slice(data, b, std::min(b + batch_size, data.size()));
    batches.push_back({std::move(part.inputs), std::move(part.targets), std::nullopt});
  }
  return batches;
}

}  // namespace bnn
