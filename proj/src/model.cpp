#include "rotir/model.hpp"

#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>

#include "rotir/error.hpp"

namespace rotir {

RotirModelImpl::RotirModelImpl(const Config& config) {
  config.validate();
  backbone = register_module("backbone", Backbone(config.backbone()));
  matcher = register_module("matcher", Matcher(config.matcher()));
  alpha = register_parameter("alpha", torch::full({}, config.alpha_init));
}

MatcherOutput RotirModelImpl::forward(const torch::Tensor& moving, const torch::Tensor& fixed) {
  // One backbone pass over both frames keeps batch statistics shared between streams.
  const int64_t B = moving.size(0);
  auto feats = backbone->forward(torch::cat({moving, fixed}, 0));
  return matcher->forward(feats.narrow(0, 0, B), feats.narrow(0, B, B));
}

namespace {

constexpr char kMagic[8] = {'R', 'O', 'T', 'I', 'R', 'C', 'K', 'P'};
constexpr std::uint32_t kVersion = 1;

template <typename T>
void put(std::ostream& o, T v) {
  o.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::istream& in) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!in) throw ConfigError("checkpoint truncated");
  return v;
}

void put_string(std::ostream& o, const std::string& s) {
  put<std::uint64_t>(o, s.size());
  o.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::string get_string(std::istream& in) {
  const auto n = get<std::uint64_t>(in);
  if (n > (1u << 24)) throw ConfigError("checkpoint string too long");
  std::string s(n, '\0');
  in.read(s.data(), static_cast<std::streamsize>(n));
  if (!in) throw ConfigError("checkpoint truncated");
  return s;
}

std::map<std::string, torch::Tensor> named_state(RotirModel& model) {
  std::map<std::string, torch::Tensor> state;
  for (const auto& p : model->named_parameters()) state[p.key()] = p.value();
  for (const auto& b : model->named_buffers()) state[b.key()] = b.value();
  return state;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, RotirModel& model, const Config& config) {
  const auto tmp = std::filesystem::path(path.string() + ".tmp");
  {
    std::ofstream o(tmp, std::ios::binary);
    if (!o) throw ConfigError("cannot write checkpoint '" + path.string() + "'");
    o.write(kMagic, sizeof(kMagic));
    put(o, kVersion);
    put_string(o, config.to_text());
    const auto state = named_state(model);
    put<std::uint64_t>(o, state.size());
    for (const auto& [name, tensor] : state) {
      const auto t = tensor.detach().to(torch::kCPU, torch::kFloat32).contiguous();
      put_string(o, name);
      put<std::uint32_t>(o, static_cast<std::uint32_t>(t.dim()));
      for (int64_t d : t.sizes()) put<std::int64_t>(o, d);
      o.write(reinterpret_cast<const char*>(t.data_ptr<float>()), static_cast<std::streamsize>(t.numel() * sizeof(float)));
    }
    if (!o) throw ConfigError("failed writing checkpoint '" + path.string() + "'");
  }
  std::filesystem::rename(tmp, path);
}

LoadedModel load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open checkpoint '" + path.string() + "'");
  char magic[sizeof(kMagic)];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) throw ConfigError("not a checkpoint: '" + path.string() + "'");
  const auto version = get<std::uint32_t>(in);
  if (version != kVersion) throw ConfigError("unsupported checkpoint version " + std::to_string(version));
  LoadedModel out;
  out.config = Config::parse(get_string(in));
  out.model = RotirModel(out.config);
  auto state = named_state(out.model);
  const auto count = get<std::uint64_t>(in);
  if (count != state.size()) throw ConfigError("checkpoint tensor count does not match the model");
  torch::NoGradGuard guard;
  for (std::uint64_t k = 0; k < count; ++k) {
    const std::string name = get_string(in);
    const auto ndim = get<std::uint32_t>(in);
    std::vector<int64_t> shape(ndim);
    for (auto& d : shape) d = get<std::int64_t>(in);
    auto it = state.find(name);
    if (it == state.end()) throw ConfigError("checkpoint has unknown tensor '" + name + "'");
    if (!it->second.sizes().equals(shape)) throw ConfigError("checkpoint tensor '" + name + "' has the wrong shape");
    auto buf = torch::empty(shape, torch::kFloat32);
    in.read(reinterpret_cast<char*>(buf.data_ptr<float>()), static_cast<std::streamsize>(buf.numel() * sizeof(float)));
    if (!in) throw ConfigError("checkpoint truncated");
    it->second.copy_(buf);
  }
  out.model->eval();
  return out;
}

}  // namespace rotir
