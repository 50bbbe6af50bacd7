#include "pmx/checkpoint.hpp"

#include <fstream>
#include <json.hpp>

#include "pmx/config.hpp"

namespace pmx {

using Json = nlohmann::ordered_json;

namespace {
constexpr char kMagic[8] = {'P', 'M', 'X', 'C', 'K', 'P', 'T', '\n'};
}

const Tensor& Checkpoint::find(const std::string& name) const {
  for (const auto& [n, t] : tensors)
    if (n == name) return t;
  throw std::runtime_error("checkpoint: missing tensor '" + name + "'");
}

bool Checkpoint::has(const std::string& name) const {
  for (const auto& [n, t] : tensors)
    if (n == name) return true;
  return false;
}

void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
  Json dir = Json::array();
  for (const auto& [name, tensor] : ckpt.tensors)
    dir.push_back(Json{{"name", name}, {"shape", tensor.shape()}, {"count", tensor.size()}});
  Json header{{"version", ckpt.version},
              {"epoch", ckpt.epoch},
              {"model", Json::parse(model_config_to_json(ckpt.model))},
              {"tensors", dir}};
  const std::string header_text = header.dump();

  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("checkpoint: cannot open " + path + " for writing");
  f.write(kMagic, sizeof(kMagic));
  const std::uint64_t len = header_text.size();
  f.write(reinterpret_cast<const char*>(&len), sizeof(len));
  f.write(header_text.data(), static_cast<std::streamsize>(header_text.size()));
  for (const auto& [name, tensor] : ckpt.tensors)
    f.write(reinterpret_cast<const char*>(tensor.data()),
            static_cast<std::streamsize>(tensor.size() * sizeof(real)));
  if (!f) throw std::runtime_error("checkpoint: write failed for " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("checkpoint: cannot open " + path);
  char magic[8];
  f.read(magic, sizeof(magic));
  if (f.gcount() != sizeof(magic) || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0)
    throw std::runtime_error("checkpoint: bad magic in " + path);
  std::uint64_t len = 0;
  f.read(reinterpret_cast<char*>(&len), sizeof(len));
  std::string header_text(len, '\0');
  f.read(header_text.data(), static_cast<std::streamsize>(len));
  if (!f) throw std::runtime_error("checkpoint: truncated header in " + path);

  Json header = Json::parse(header_text);
  Checkpoint ckpt;
  ckpt.version = header.at("version").get<int>();
  if (ckpt.version != 1)
    throw std::runtime_error("checkpoint: unsupported version " + std::to_string(ckpt.version));
  ckpt.epoch = header.at("epoch").get<int>();
  ckpt.model = model_config_from_json(header.at("model").dump());
  for (const auto& entry : header.at("tensors")) {
    const auto shape = entry.at("shape").get<std::vector<int>>();
    Tensor t(shape);
    f.read(reinterpret_cast<char*>(t.data()),
           static_cast<std::streamsize>(t.size() * sizeof(real)));
    if (!f) throw std::runtime_error("checkpoint: truncated tensor data in " + path);
    ckpt.tensors.emplace_back(entry.at("name").get<std::string>(), std::move(t));
  }
  return ckpt;
}

namespace {

void add_projector(Checkpoint& ckpt, const std::string& prefix, const S2SProjector& proj) {
  ckpt.tensors.emplace_back(prefix + ".w1", proj.w1->value);
  ckpt.tensors.emplace_back(prefix + ".b1", proj.b1->value);
  ckpt.tensors.emplace_back(prefix + ".w2", proj.w2->value);
  ckpt.tensors.emplace_back(prefix + ".b2", proj.b2->value);
}

void load_projector(const Checkpoint& ckpt, const std::string& prefix, S2SProjector& proj) {
  proj.w1->value = ckpt.find(prefix + ".w1");
  proj.b1->value = ckpt.find(prefix + ".b1");
  proj.w2->value = ckpt.find(prefix + ".w2");
  proj.b2->value = ckpt.find(prefix + ".b2");
}

}  // namespace

Checkpoint snapshot_state(Encoder& enc, const S2SProjector& proj_g, const S2SProjector& proj_p,
                          const CenterBank& bank, int epoch) {
  Checkpoint ckpt;
  ckpt.epoch = epoch;
  ckpt.model = enc.config();
  for (const auto& [name, var] : enc.named_parameters())
    ckpt.tensors.emplace_back(name, var->value);
  for (const auto& [name, state] : enc.named_bn_states()) {
    ckpt.tensors.emplace_back(name + ".running_mean", state->running_mean);
    ckpt.tensors.emplace_back(name + ".running_var", state->running_var);
  }
  add_projector(ckpt, "s2s_g", proj_g);
  add_projector(ckpt, "s2s_p", proj_p);
  ckpt.tensors.emplace_back("bank.centers", bank.storage());
  Tensor flags({static_cast<int>(bank.flags().size())});
  for (size_t i = 0; i < bank.flags().size(); ++i) flags[static_cast<long long>(i)] = bank.flags()[i];
  ckpt.tensors.emplace_back("bank.flags", flags);
  return ckpt;
}

void restore_state(const Checkpoint& ckpt, Encoder& enc, S2SProjector& proj_g,
                   S2SProjector& proj_p, CenterBank& bank) {
  auto copy_into = [&ckpt](const std::string& name, Tensor& dst) {
    const Tensor& src = ckpt.find(name);
    if (!src.same_shape(dst))
      throw std::runtime_error("checkpoint: shape mismatch for '" + name + "' (checkpoint " +
                               shape_str(src.shape()) + ", model " + shape_str(dst.shape()) + ")");
    dst = src;
  };
  for (const auto& [name, var] : enc.named_parameters()) copy_into(name, var->value);
  for (const auto& [name, state] : enc.named_bn_states()) {
    copy_into(name + ".running_mean", state->running_mean);
    copy_into(name + ".running_var", state->running_var);
  }
  load_projector(ckpt, "s2s_g", proj_g);
  load_projector(ckpt, "s2s_p", proj_p);
  copy_into("bank.centers", bank.storage());
  const Tensor& flags = ckpt.find("bank.flags");
  if (flags.size() != static_cast<long long>(bank.flags().size()))
    throw std::runtime_error("checkpoint: bank flag count mismatch");
  for (size_t i = 0; i < bank.flags().size(); ++i)
    bank.flags()[i] = flags[static_cast<long long>(i)] != 0;
}

}  // namespace pmx
