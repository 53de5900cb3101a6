#include "setcomm/nn/checkpoint.hpp"

#include <cstdint>
#include <fstream>
#include <map>
#include <stdexcept>

namespace setcomm::nn {

namespace {

constexpr char kMagic[8] = {'S', 'C', 'K', 'P', 'T', '0', '1', '\n'};

class Snapshot : public ParamVisitor {
 public:
  StateDict out;
  void param(const std::string& name, Var& value) override { out.emplace_back(name, value.value()); }
  void buffer(const std::string& name, Mat& value) override { out.emplace_back(name, value); }
};

class Restore : public ParamVisitor {
 public:
  explicit Restore(const StateDict& state) {
    for (const auto& [name, m] : state) by_name.emplace(name, &m);
  }
  std::map<std::string, const Mat*> by_name;
  std::size_t used = 0;

  const Mat& lookup(const std::string& name, const Mat& current) {
    auto it = by_name.find(name);
    if (it == by_name.end()) throw std::runtime_error("checkpoint is missing tensor '" + name + "'");
    if (it->second->rows() != current.rows() || it->second->cols() != current.cols()) {
      throw std::runtime_error("checkpoint tensor '" + name + "' has the wrong shape");
    }
    ++used;
    return *it->second;
  }
  void param(const std::string& name, Var& value) override {
    value.mutable_value() = lookup(name, value.value());
  }
  void buffer(const std::string& name, Mat& value) override { value = lookup(name, value); }
};

template <typename T>
void put(std::ostream& os, T v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::istream& is) {
  T v{};
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!is) throw std::runtime_error("checkpoint truncated");
  return v;
}

}  // namespace

StateDict state_dict(Module& module) {
  Snapshot s;
  module.visit("", s);
  return std::move(s.out);
}

void load_state_dict(Module& module, const StateDict& state) {
  Restore r(state);
  module.visit("", r);
  if (r.used != state.size()) throw std::runtime_error("checkpoint has unexpected extra tensors");
}

void write_checkpoint(const std::filesystem::path& path, const nlohmann::json& meta,
                      const StateDict& state) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot write checkpoint " + path.string());
  os.write(kMagic, sizeof(kMagic));
  const std::string text = meta.dump();
  put<std::uint64_t>(os, text.size());
  os.write(text.data(), static_cast<std::streamsize>(text.size()));
  put<std::uint64_t>(os, state.size());
  for (const auto& [name, m] : state) {
    put<std::uint32_t>(os, static_cast<std::uint32_t>(name.size()));
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    put<std::int64_t>(os, m.rows());
    put<std::int64_t>(os, m.cols());
    os.write(reinterpret_cast<const char*>(m.data()),
             static_cast<std::streamsize>(m.size() * sizeof(float)));
  }
}

std::pair<nlohmann::json, StateDict> read_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open checkpoint " + path.string());
  char magic[sizeof(kMagic)];
  is.read(magic, sizeof(magic));
  if (!is || !std::equal(magic, magic + sizeof(kMagic), kMagic)) {
    throw std::runtime_error(path.string() + " is not a checkpoint file");
  }
  const auto meta_len = get<std::uint64_t>(is);
  std::string text(meta_len, '\0');
  is.read(text.data(), static_cast<std::streamsize>(meta_len));
  auto meta = nlohmann::json::parse(text);
  const auto count = get<std::uint64_t>(is);
  StateDict state;
  for (std::uint64_t i = 0; i < count; ++i) {
    const auto len = get<std::uint32_t>(is);
    std::string name(len, '\0');
    is.read(name.data(), len);
    const auto rows = get<std::int64_t>(is);
    const auto cols = get<std::int64_t>(is);
    Mat m(rows, cols);
    is.read(reinterpret_cast<char*>(m.data()), static_cast<std::streamsize>(m.size() * sizeof(float)));
    if (!is) throw std::runtime_error("checkpoint truncated");
    state.emplace_back(std::move(name), std::move(m));
  }
  return {std::move(meta), std::move(state)};
}

}  // namespace setcomm::nn
