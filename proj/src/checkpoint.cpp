#include "bnn/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>
#include <set>

namespace bnn {

namespace {

constexpr std::uint64_t kMaxNameLength = 1 << 16;
constexpr std::uint64_t kMaxRank = 8;

std::uint64_t to_le(std::uint64_t v) {
  if constexpr (std::endian::native == std::endian::little) return v;
  std::uint64_t r = 0;
  for (int i = 0; i < 8; ++i) r |= ((v >> (8 * i)) & 0xff) << (8 * (7 - i));
  return r;
}

void put_u64(std::ostream& out, std::uint64_t v) {
  const std::uint64_t le = to_le(v);
  out.write(reinterpret_cast<const char*>(&le), sizeof le);
}

std::uint64_t get_u64(std::istream& in, const char* what) {
  std::uint64_t le = 0;
  if (!in.read(reinterpret_cast<char*>(&le), sizeof le)) throw FormatError(std::string("truncated checkpoint reading ") + what);
  return to_le(le);
}

const std::string kSampleRate = "acceptance_rate";
const std::string kStep = "state.step";

std::string adam_key(const char* part, const std::string& name) { return std::string("adam.") + part + "/" + name; }

}  // namespace

void write_checkpoint(std::ostream& out, const Records& records) {
  std::set<std::string> seen;
  for (const auto& [name, t] : records)
    if (!seen.insert(name).second) throw FormatError("duplicate checkpoint record '" + name + "'");
  out.write(kCheckpointMagic, 8);
  put_u64(out, records.size());
  for (const auto& [name, t] : records) {
    put_u64(out, name.size());
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    put_u64(out, t.rank());
    for (std::size_t e : t.shape()) put_u64(out, e);
    for (std::size_t i = 0; i < t.size(); ++i) put_u64(out, std::bit_cast<std::uint64_t>(t[i]));
  }
  if (!out) throw FormatError("failed to write checkpoint");
}

Records read_checkpoint(std::istream& in) {
  char magic[8] = {};
  if (!in.read(magic, 8)) throw FormatError("truncated checkpoint: no magic");
  if (std::memcmp(magic, kCheckpointMagic, 8) != 0) throw FormatError("bad checkpoint magic");
  const std::uint64_t count = get_u64(in, "record count");
  Records records;
  std::set<std::string> seen;
  for (std::uint64_t r = 0; r < count; ++r) {
    const std::uint64_t len = get_u64(in, "name length");
    if (len == 0 || len > kMaxNameLength) throw FormatError("bad name length in record " + std::to_string(r));
    std::string name(len, '\0');
    if (!in.read(name.data(), static_cast<std::streamsize>(len))) throw FormatError("truncated checkpoint reading a name");
    if (!seen.insert(name).second) throw FormatError("duplicate checkpoint record '" + name + "'");
    const std::uint64_t rank = get_u64(in, "rank");
    if (rank > kMaxRank) throw FormatError("record '" + name + "' has rank " + std::to_string(rank));
    Shape shape;
    for (std::uint64_t d = 0; d < rank; ++d) shape.push_back(get_u64(in, "extents"));
    for (std::size_t e : shape)
      if (e == 0) throw FormatError("record '" + name + "' has a zero extent");
    std::vector<double> values(numel(shape));
    for (double& v : values) v = std::bit_cast<double>(get_u64(in, "values"));
    records.emplace_back(std::move(name), Tensor(shape, std::move(values)));
  }
  if (in.peek() != std::char_traits<char>::eof()) throw FormatError("trailing bytes after the last checkpoint record");
  return records;
}

void save_checkpoint(const std::filesystem::path& path, const Records& records) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw ConfigError("cannot write '" + path.string() + "'");
  write_checkpoint(out, records);
}

void save_checkpoint(const std::filesystem::path& path, const NamedTensors& tensors) {
  save_checkpoint(path, Records(tensors.begin(), tensors.end()));
}

NamedTensors load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open '" + path.string() + "'");
  const Records records = read_checkpoint(in);
  return NamedTensors(records.begin(), records.end());
}

NamedTensors training_state(const VariationalBNN& bnn, const AdamState& adam) {
  NamedTensors state;
  for (const auto& s : bnn.guide.sites) {
    state.emplace(MeanFieldGuide::mean_key(s.name), s.mean);
    state.emplace(MeanFieldGuide::rho_key(s.name), s.rho);
  }
  for (const auto& [name, value] : bnn.net.deterministic_values()) state.emplace(name, value);
  for (const auto& [name, m] : adam.moments) {
    state.emplace(adam_key("m", name), m.m);
    state.emplace(adam_key("v", name), m.v);
    state.emplace(adam_key("steps", name), Tensor::scalar(static_cast<double>(m.steps)));
  }
  state.emplace(kStep, Tensor::scalar(static_cast<double>(bnn.step)));
  return state;
}

void restore_training_state(VariationalBNN& bnn, AdamState& adam, const NamedTensors& state) {
  auto take = [&](const std::string& key, const Shape& shape) -> const Tensor& {
    auto it = state.find(key);
    if (it == state.end()) throw FormatError("checkpoint is missing '" + key + "'");
    if (it->second.shape() != shape)
      throw DimensionError("checkpoint record '" + key + "' has shape " + to_string(it->second.shape()) +
                           ", expected " + to_string(shape));
    return it->second;
  };
  for (auto& s : bnn.guide.sites) {
    s.mean = take(MeanFieldGuide::mean_key(s.name), s.mean.shape());
    s.rho = take(MeanFieldGuide::rho_key(s.name), s.rho.shape());
  }
  for (auto& site : bnn.net.mutable_sites())
    if (auto* d = std::get_if<Deterministic>(&site.treatment)) d->value = take(site.name, site.shape);

  adam.reset();
  for (const auto& [key, tensor] : state) {
    const std::string prefix = "adam.m/";
    if (key.rfind(prefix, 0) != 0) continue;
    const std::string name = key.substr(prefix.size());
    AdamMoments m;
    m.m = tensor;
    m.v = take(adam_key("v", name), tensor.shape());
    m.steps = static_cast<std::uint64_t>(take(adam_key("steps", name), {}).item());
    adam.moments.emplace(name, std::move(m));
  }
  bnn.step = static_cast<std::uint64_t>(take(kStep, {}).item());
}

NamedTensors samples_state(const PosteriorSamples& samples) {
  NamedTensors state;
  for (std::size_t k = 0; k < samples.samples.size(); ++k)
    for (const auto& [name, t] : samples.samples[k]) state.emplace("sample" + std::to_string(k) + "/" + name, t);
  state.emplace(kSampleRate, Tensor::scalar(samples.acceptance_rate));
  return state;
}

PosteriorSamples restore_samples(const NamedTensors& state) {
  PosteriorSamples out;
  for (const auto& [key, t] : state) {
    if (key == kSampleRate) {
      out.acceptance_rate = t.item();
      continue;
    }
    const auto slash = key.find('/');
    if (key.rfind("sample", 0) != 0 || slash == std::string::npos) throw FormatError("unexpected record '" + key + "'");
    const std::size_t k = std::stoul(key.substr(6, slash - 6));
    if (out.samples.size() <= k) out.samples.resize(k + 1);
    out.samples[k].emplace(key.substr(slash + 1), t);
  }
  return out;
}

}  // namespace bnn
