#include "ftwa/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <sstream>

#include "ftwa/config.hpp"
#include "ftwa/errors.hpp"

namespace ftwa {

namespace {

constexpr char kMagic[8] = {'F', 'T', 'W', 'A', 'C', 'K', 'P', 'T'};

class Writer {
 public:
  explicit Writer(std::ostream& out) : out_(out) {}
  template <typename I>
  void put(I v) {
    out_.write(reinterpret_cast<const char*>(&v), sizeof v);
  }
  void put_string(const std::string& s) {
    put<std::uint64_t>(s.size());
    out_.write(s.data(), static_cast<std::streamsize>(s.size()));
  }
  void put_tensor(const std::string& name, const Tensor<double>& t) {
    put_string(name);
    const Shape s = t.shape();
    for (int d : {s.n, s.c, s.h, s.w}) put<std::int32_t>(d);
    out_.write(reinterpret_cast<const char*>(t.data()), static_cast<std::streamsize>(t.size() * sizeof(double)));
  }

 private:
  std::ostream& out_;
};

class Reader {
 public:
  Reader(std::istream& in, std::string source) : in_(in), source_(std::move(source)) {}
  template <typename I>
  I get() {
    I v{};
    read(reinterpret_cast<char*>(&v), sizeof v);
    return v;
  }
  std::string get_string() {
    const auto n = get<std::uint64_t>();
    if (n > (1ull << 32)) fail("implausible string length");
    std::string s(n, '\0');
    read(s.data(), n);
    return s;
  }
  std::pair<std::string, Tensor<double>> get_tensor() {
    std::string name = get_string();
    int dims[4];
    for (int& d : dims) {
      d = get<std::int32_t>();
      if (d <= 0) fail("bad tensor shape for " + name);
    }
    Tensor<double> t(Shape{dims[0], dims[1], dims[2], dims[3]});
    read(reinterpret_cast<char*>(t.data()), t.size() * sizeof(double));
    return {std::move(name), std::move(t)};
  }
  void read(char* dst, std::size_t n) {
    in_.read(dst, static_cast<std::streamsize>(n));
    if (static_cast<std::size_t>(in_.gcount()) != n) fail("truncated file");
  }
  [[noreturn]] void fail(const std::string& why) { throw CheckpointError(source_ + ": " + why); }

 private:
  std::istream& in_;
  std::string source_;
};

}  // namespace

template <typename T>
Checkpoint make_checkpoint(const ParameterSet<T>& state, std::string config_text,
                           std::uint64_t config_hash, std::vector<int> identities) {
  Checkpoint c;
  c.config_text = std::move(config_text);
  c.config_hash = config_hash;
  c.identities = std::move(identities);
  for (const auto& p : state.parameters) c.parameters.emplace(p.name, p.var.value().template cast<double>());
  for (const auto& b : state.buffers) c.buffers.emplace(b.name, b.tensor->template cast<double>());
  return c;
}

void write_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write checkpoint " + path.string());
    Writer w(out);
    out.write(kMagic, sizeof kMagic);
    w.put<std::uint32_t>(Checkpoint::kVersion);
    w.put<std::uint64_t>(ckpt.config_hash);
    w.put_string(ckpt.config_text);
    w.put<std::uint64_t>(ckpt.identities.size());
    for (int id : ckpt.identities) w.put<std::int32_t>(id);
    w.put<std::uint64_t>(ckpt.parameters.size());
    for (const auto& [name, t] : ckpt.parameters) w.put_tensor(name, t);
    w.put<std::uint64_t>(ckpt.buffers.size());
    for (const auto& [name, t] : ckpt.buffers) w.put_tensor(name, t);
    if (!out) throw IoError("failed writing checkpoint " + path.string());
  }
  std::filesystem::rename(tmp, path);
}

Checkpoint read_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open checkpoint " + path.string());
  Reader r(in, path.string());
  char magic[8];
  r.read(magic, sizeof magic);
  if (std::memcmp(magic, kMagic, sizeof kMagic) != 0) r.fail("not a checkpoint file");
  const auto version = r.get<std::uint32_t>();
  if (version != Checkpoint::kVersion) r.fail("unsupported checkpoint version " + std::to_string(version));
  Checkpoint c;
  c.config_hash = r.get<std::uint64_t>();
  c.config_text = r.get_string();
  const auto n_ids = r.get<std::uint64_t>();
  if (n_ids > (1u << 24)) r.fail("implausible identity count");
  for (std::uint64_t i = 0; i < n_ids; ++i) c.identities.push_back(r.get<std::int32_t>());
  const auto n_params = r.get<std::uint64_t>();
  for (std::uint64_t i = 0; i < n_params; ++i) c.parameters.insert(r.get_tensor());
  const auto n_buffers = r.get<std::uint64_t>();
  for (std::uint64_t i = 0; i < n_buffers; ++i) c.buffers.insert(r.get_tensor());
  return c;
}

template <typename T>
void load_state(ParameterSet<T>& state, const Checkpoint& ckpt, std::uint64_t expected_hash) {
  if (ckpt.config_hash != expected_hash) {
    throw CheckpointError("checkpoint config hash " + hex64(ckpt.config_hash) +
                          " does not match the model config " + hex64(expected_hash));
  }
  auto copy = [](const std::string& name, const Tensor<double>& src, Tensor<T>& dst) {
    if (!(src.shape() == dst.shape())) {
      throw CheckpointError("shape mismatch for " + name + ": checkpoint " + src.shape().str() +
                            ", model " + dst.shape().str());
    }
    dst = src.template cast<T>();
  };
  if (ckpt.parameters.size() != state.parameters.size() || ckpt.buffers.size() != state.buffers.size()) {
    throw CheckpointError("checkpoint holds " + std::to_string(ckpt.parameters.size()) + " parameters and " +
                          std::to_string(ckpt.buffers.size()) + " buffers, model expects " +
                          std::to_string(state.parameters.size()) + " and " +
                          std::to_string(state.buffers.size()));
  }
  for (auto& p : state.parameters) {
    const auto it = ckpt.parameters.find(p.name);
    if (it == ckpt.parameters.end()) throw CheckpointError("checkpoint is missing parameter " + p.name);
    copy(p.name, it->second, p.var.mutable_value());
  }
  for (auto& b : state.buffers) {
    const auto it = ckpt.buffers.find(b.name);
    if (it == ckpt.buffers.end()) throw CheckpointError("checkpoint is missing buffer " + b.name);
    copy(b.name, it->second, *b.tensor);
  }
}

std::string file_digest(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return hex64(fnv1a(ss.str()));
}

std::string raft_config_text(const RaftConfig& c) {
  std::ostringstream out;
  out << "raft.attention_reduction = " << c.attention_reduction << "\n"
      << "raft.channels = " << c.channels << "\n"
      << "raft.num_blocks = " << c.num_blocks << "\n"
      << "raft.num_inner_steps = " << c.num_inner_steps << "\n"
      << "raft.width = " << c.width << "\n";
  return out.str();
}

RaftConfig parse_raft_config_text(const std::string& text) {
  const KeyValueDocument doc = KeyValueDocument::parse(text);
  RaftConfig c;
  c.attention_reduction = static_cast<int>(doc.get_int("raft.attention_reduction"));
  c.channels = static_cast<int>(doc.get_int("raft.channels"));
  c.num_blocks = static_cast<int>(doc.get_int("raft.num_blocks"));
  c.num_inner_steps = static_cast<int>(doc.get_int("raft.num_inner_steps"));
  c.width = static_cast<int>(doc.get_int("raft.width"));
  c.validate();
  return c;
}

template <typename T>
void export_raft(const std::filesystem::path& path, const Raft<T>& raft) {
  ParameterSet<T> set;
  raft.collect("raft", set);
  const std::string text = raft_config_text(raft.config());
  write_checkpoint(path, make_checkpoint(set, text, fnv1a(text), {}));
}

template <typename T>
Raft<T> import_raft(const std::filesystem::path& path) {
  const Checkpoint ckpt = read_checkpoint(path);
  const RaftConfig config = parse_raft_config_text(ckpt.config_text);
  Rng rng(0);
  Raft<T> raft(config, rng);
  ParameterSet<T> set;
  raft.collect("raft", set);
  load_state(set, ckpt, fnv1a(raft_config_text(config)));
  return raft;
}

#define FTWA_INSTANTIATE_CKPT(T)                                                                  \
  template Checkpoint make_checkpoint<T>(const ParameterSet<T>&, std::string, std::uint64_t,      \
                                         std::vector<int>);                                       \
  template void load_state<T>(ParameterSet<T>&, const Checkpoint&, std::uint64_t);                \
  template void export_raft<T>(const std::filesystem::path&, const Raft<T>&);                     \
  template Raft<T> import_raft<T>(const std::filesystem::path&);

FTWA_INSTANTIATE_CKPT(float)
FTWA_INSTANTIATE_CKPT(double)

}  // namespace ftwa
