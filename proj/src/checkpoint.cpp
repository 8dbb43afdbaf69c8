#include "multitrans/checkpoint.hpp"

#include <cstring>
#include <fstream>

#include "binary_io.hpp"

namespace multitrans {

namespace {

constexpr char kMagic[6] = {'M', 'T', 'C', 'K', 'P', 'T'};

void write_string(std::ostream& out, const std::string& s) {
  io::write_u64(out, s.size());
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::string read_string(std::istream& in, const std::string& what) {
  const auto n = io::read_u64(in, what);
  if (n > (1ULL << 32)) throw DataError(what + ": implausible length " + std::to_string(n));
  std::string s(n, '\0');
  in.read(s.data(), static_cast<std::streamsize>(n));
  if (!in) throw DataError("truncated " + what);
  return s;
}

}  // namespace

template <typename T>
Checkpoint make_checkpoint(const ParameterStore<T>& store, std::string config_text,
                           std::uint64_t epoch, double metric) {
  Checkpoint c;
  c.config_text = std::move(config_text);
  c.epoch = epoch;
  c.metric = metric;
  for (const auto& e : store.entries()) {
    NamedTensor t;
    t.name = e.name;
    t.shape = e.tensor.shape();
    for (auto v : e.tensor.data()) t.values.push_back(static_cast<float>(v));
    c.tensors.push_back(std::move(t));
  }
  return c;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& c) {
  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw DataError("cannot write checkpoint " + path.string());
    out.write(kMagic, sizeof(kMagic));
    io::write_u32(out, kCheckpointVersion);
    write_string(out, c.config_text);
    io::write_u64(out, c.epoch);
    io::write_f64(out, c.metric);
    io::write_u64(out, c.tensors.size());
    for (const auto& t : c.tensors) {
      write_string(out, t.name);
      io::write_u64(out, t.shape.size());
      for (auto d : t.shape) io::write_u64(out, d);
      for (auto v : t.values) io::write_f32(out, v);
    }
    if (!out) throw DataError("failed writing checkpoint " + path.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw DataError("cannot move checkpoint into place: " + ec.message());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open checkpoint " + path.string());
  const std::string what = "checkpoint " + path.string();
  char magic[sizeof(kMagic)] = {};
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kMagic, sizeof(magic)) != 0) {
    throw DataError(what + ": bad magic");
  }
  const auto version = io::read_u32(in, what);
  if (version != kCheckpointVersion) {
    throw DataError(what + ": unsupported version " + std::to_string(version));
  }
  Checkpoint c;
  c.config_text = read_string(in, what);
  c.epoch = io::read_u64(in, what);
  c.metric = io::read_f64(in, what);
  const auto count = io::read_u64(in, what);
  for (std::uint64_t k = 0; k < count; ++k) {
    NamedTensor t;
    t.name = read_string(in, what);
    const auto rank = io::read_u64(in, what);
    if (rank == 0 || rank > 8) throw DataError(what + ": tensor " + t.name + " has rank " + std::to_string(rank));
    for (std::uint64_t r = 0; r < rank; ++r) t.shape.push_back(io::read_u64(in, what));
    const auto n = shape_numel(t.shape);
    if (n == 0 || n > (1ULL << 30)) throw DataError(what + ": tensor " + t.name + " has bad shape");
    t.values.resize(n);
    for (auto& v : t.values) v = io::read_f32(in, what);
    c.tensors.push_back(std::move(t));
  }
  if (in.peek() != std::char_traits<char>::eof()) throw DataError(what + ": trailing bytes");
  return c;
}

template <typename T>
void apply_checkpoint(const Checkpoint& c, ParameterStore<T>& store) {
  const auto& entries = store.entries();
  if (entries.size() != c.tensors.size()) {
    throw DataError("checkpoint holds " + std::to_string(c.tensors.size()) +
                    " tensors, model has " + std::to_string(entries.size()));
  }
  for (std::size_t k = 0; k < entries.size(); ++k) {
    const auto& t = c.tensors[k];
    if (t.name != entries[k].name || t.shape != entries[k].tensor.shape()) {
      throw DataError("checkpoint tensor " + t.name + " " + shape_str(t.shape) +
                      " does not match model parameter " + entries[k].name + " " +
                      shape_str(entries[k].tensor.shape()));
    }
  }
  for (std::size_t k = 0; k < entries.size(); ++k) {
    auto tensor = entries[k].tensor;
    auto dst = tensor.mutable_data();
    const auto& src = c.tensors[k].values;
    for (std::size_t i = 0; i < src.size(); ++i) dst[i] = static_cast<T>(src[i]);
  }
}

template Checkpoint make_checkpoint(const ParameterStore<float>&, std::string, std::uint64_t, double);
template Checkpoint make_checkpoint(const ParameterStore<double>&, std::string, std::uint64_t, double);
template void apply_checkpoint(const Checkpoint&, ParameterStore<float>&);
template void apply_checkpoint(const Checkpoint&, ParameterStore<double>&);

}  // namespace multitrans
