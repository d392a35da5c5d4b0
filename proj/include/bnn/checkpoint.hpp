#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>
#include <utility>
#include <vector>

#include "bnn/mcmc.hpp"
#include "bnn/optim.hpp"
#include "bnn/svi.hpp"

namespace bnn {

// Binary layout, all integers u64 little-endian, values f64 little-endian:
//   "BNNCKPT1" count { name_len name rank extents[rank] values[numel] }*count
using Records = std::vector<std::pair<std::string, Tensor>>;

inline constexpr char kCheckpointMagic[] = "BNNCKPT1";

void write_checkpoint(std::ostream& out, const Records& records);
Records read_checkpoint(std::istream& in);

void save_checkpoint(const std::filesystem::path& path, const Records& records);
void save_checkpoint(const std::filesystem::path& path, const NamedTensors& tensors);
NamedTensors load_checkpoint(const std::filesystem::path& path);

// Guide parameters, deterministic values, Adam moments and the step counter.
NamedTensors training_state(const VariationalBNN& bnn, const AdamState& adam);
void restore_training_state(VariationalBNN& bnn, AdamState& adam, const NamedTensors& state);

// Samples are stored as "sample<k>/<site>", plus "acceptance_rate".
NamedTensors samples_state(const PosteriorSamples& samples);
PosteriorSamples restore_samples(const NamedTensors& state);

}  // namespace bnn
