#include "remar/checkpoint.hpp"

#include <fstream>
#include <sstream>
#include <stdexcept>

#include "remar/keyvalue.hpp"
#include "remar/serialize.hpp"

namespace remar {

namespace {

constexpr const char* kHeader = "REMAR-CHECKPOINT 1";

struct Entry {
  std::string name;
  Shape shape;
  std::vector<double> values;
};

std::string dims_string(const Shape& s) {
  std::string out;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) out += 'x';
    out += std::to_string(s[i]);
  }
  return out;
}

Shape parse_dims(const std::string& text) {
  Shape s;
  std::stringstream ss(text);
  std::string part;
  while (std::getline(ss, part, 'x')) s.push_back(std::stoull(part));
  return s;
}

[[noreturn]] void corrupt(const std::filesystem::path& path, const std::string& why) {
  throw std::runtime_error("corrupt checkpoint " + path.string() + ": " + why);
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const ReMarNet& net) {
  std::vector<Entry> entries;
  for (const auto& p : net.parameters().items()) {
    entries.push_back({p.name, p.tensor.shape(), {p.tensor.data().begin(), p.tensor.data().end()}});
  }
  for (const auto& b : net.buffers()) {
    const Shape s{b.stats->running_mean.size()};
    entries.push_back({b.name + ".running_mean", s, b.stats->running_mean});
    entries.push_back({b.name + ".running_var", s, b.stats->running_var});
  }

  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  out << kHeader << "\n[config]\n";
  write_key_values(out, net.config().to_map());
  out << "[tensors]\n";
  std::size_t offset = 0;
  for (const auto& e : entries) {
    out << e.name << ' ' << dims_string(e.shape) << ' ' << offset << '\n';
    offset += tensor_record_size(e.shape);
  }
  out << "[payload]\n";
  for (const auto& e : entries) write_tensor(out, e.shape, e.values);
  if (!out) throw std::runtime_error("failed writing checkpoint " + path.string());
}

ReMarNet load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open checkpoint " + path.string());
  std::string line;
  if (!std::getline(in, line) || line != kHeader) corrupt(path, "missing header line");
  if (!std::getline(in, line) || line != "[config]") corrupt(path, "missing [config] section");

  std::stringstream config_text;
  while (std::getline(in, line) && line != "[tensors]") config_text << line << '\n';
  if (line != "[tensors]") corrupt(path, "missing [tensors] section");

  struct Manifest {
    std::string name;
    Shape shape;
    std::size_t offset;
  };
  std::vector<Manifest> manifest;
  while (std::getline(in, line) && line != "[payload]") {
    std::stringstream ss(line);
    Manifest m;
    std::string dims;
    if (!(ss >> m.name >> dims >> m.offset)) corrupt(path, "bad manifest line '" + line + "'");
    m.shape = parse_dims(dims);
    manifest.push_back(std::move(m));
  }
  if (line != "[payload]") corrupt(path, "missing [payload] section");
  const auto payload_start = in.tellg();

  ModelConfig config;
  try {
    config = ModelConfig::from_map(parse_key_values(config_text));
  } catch (const std::exception& e) {
    corrupt(path, std::string("bad model config: ") + e.what());
  }

  ReMarNet::State state;
  for (const auto& m : manifest) {
    in.seekg(payload_start + static_cast<std::streamoff>(m.offset));
    TensorRecord rec;
    try {
      rec = read_tensor(in);
    } catch (const std::exception& e) {
      corrupt(path, "tensor '" + m.name + "': " + e.what());
    }
    if (rec.shape != m.shape) corrupt(path, "tensor '" + m.name + "' shape disagrees with manifest");
    state[m.name] = std::move(rec.values);
  }

  ReMarNet net(config);
  for (const auto& p : net.parameters().items()) {
    auto it = state.find(p.name);
    if (it == state.end()) corrupt(path, "missing parameter '" + p.name + "'");
  }
  try {
    net.load_state(state);
  } catch (const std::exception& e) {
    corrupt(path, e.what());
  }
  return net;
}

}  // namespace remar
