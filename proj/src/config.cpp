#include "rotir/config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

#include "rotir/error.hpp"

namespace rotir {

VariantConfig VariantConfig::parse(const std::string& letters) {
  std::string s = letters;
  VariantConfig v;
  if (!s.empty() && s.back() == '*') {
    v.refine_at_inference = false;
    s.pop_back();
  }
  if (s.size() != 3) throw ConfigError("variant must be three T/F letters with an optional '*', got '" + letters + "'");
  bool* flags[3] = {&v.use_upsampling, &v.scale_detection, &v.rectangle_mask};
  for (int i = 0; i < 3; ++i) {
    if (s[i] == 'T') *flags[i] = true;
    else if (s[i] == 'F') *flags[i] = false;
    else throw ConfigError("variant letters must be T or F, got '" + letters + "'");
  }
  return v;
}

std::string VariantConfig::name() const {
  std::string s;
  s += use_upsampling ? 'T' : 'F';
  s += scale_detection ? 'T' : 'F';
  s += rectangle_mask ? 'T' : 'F';
  if (!refine_at_inference) s += '*';
  return s;
}

BackboneConfig Config::backbone() const {
  BackboneConfig b;
  b.input_size = input_size;
  b.grid_size = grid_size;
  b.use_upsampling = variant.use_upsampling;
  b.widths = widths;
  b.group_order = group_order;
  b.lift_kernel = lift_kernel;
  b.kernel = kernel;
  return b;
}

MatcherConfig Config::matcher() const {
  MatcherConfig m;
  m.in_channels = variant.use_upsampling ? 24 : 8;
  m.grid_size = grid_size;
  m.width = model_width;
  m.heads = heads;
  m.blocks = blocks;
  m.positional_encoding = positional_encoding;
  m.temperature = temperature;
  return m;
}

void Config::validate() const {
  backbone().validate();
  matcher().validate();
  weights.validate();
  if (sinkhorn_iters_train < 1 || sinkhorn_iters_infer < 1) throw ConfigError("sinkhorn iterations must be >= 1");
  if (!(match_threshold > 0.0 && match_threshold < 1.0)) throw ConfigError("match_threshold must lie in (0, 1)");
  if (!(lr > 0.0)) throw ConfigError("lr must be positive");
  if (epochs < 0 || batch_size < 1) throw ConfigError("epochs must be >= 0 and batch_size >= 1");
  if (!(min_fraction > 0.0 && min_fraction <= 1.0)) throw ConfigError("min_fraction must lie in (0, 1]");
}

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

template <typename T>
T parse_number(const std::string& key, const std::string& value) {
  T out{};
  const auto* end = value.data() + value.size();
  auto [ptr, ec] = std::from_chars(value.data(), end, out);
  if (ec != std::errc() || ptr != end) throw ConfigError("bad value for '" + key + "': '" + value + "'");
  return out;
}

bool parse_bool(const std::string& key, const std::string& value) {
  if (value == "true" || value == "1" || value == "yes") return true;
  if (value == "false" || value == "0" || value == "no") return false;
  throw ConfigError("bad boolean for '" + key + "': '" + value + "'");
}

std::vector<int> parse_list(const std::string& key, const std::string& value) {
  std::vector<int> out;
  std::stringstream ss(value);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(parse_number<int>(key, trim(item)));
  if (out.empty()) throw ConfigError("empty list for '" + key + "'");
  return out;
}

using Setter = std::function<void(Config&, const std::string&, const std::string&)>;

const std::map<std::string, Setter>& setters() {
  static const std::map<std::string, Setter> table = {
      {"variant", [](Config& c, const auto&, const auto& v) { c.variant = VariantConfig::parse(v); }},
      {"group_order", [](Config& c, const auto& k, const auto& v) { c.group_order = parse_number<int>(k, v); }},
      {"widths", [](Config& c, const auto& k, const auto& v) { c.widths = parse_list(k, v); }},
      {"lift_kernel", [](Config& c, const auto& k, const auto& v) { c.lift_kernel = parse_number<int>(k, v); }},
      {"kernel", [](Config& c, const auto& k, const auto& v) { c.kernel = parse_number<int>(k, v); }},
      {"grid_size", [](Config& c, const auto& k, const auto& v) { c.grid_size = parse_number<int>(k, v); }},
      {"input_size", [](Config& c, const auto& k, const auto& v) { c.input_size = parse_number<int>(k, v); }},
      {"model_width", [](Config& c, const auto& k, const auto& v) { c.model_width = parse_number<int>(k, v); }},
      {"heads", [](Config& c, const auto& k, const auto& v) { c.heads = parse_number<int>(k, v); }},
      {"blocks", [](Config& c, const auto& k, const auto& v) { c.blocks = parse_number<int>(k, v); }},
      {"positional_encoding", [](Config& c, const auto& k, const auto& v) { c.positional_encoding = parse_bool(k, v); }},
      {"temperature", [](Config& c, const auto& k, const auto& v) { c.temperature = parse_number<double>(k, v); }},
      {"alpha_init", [](Config& c, const auto& k, const auto& v) { c.alpha_init = parse_number<double>(k, v); }},
      {"sinkhorn_iters_train", [](Config& c, const auto& k, const auto& v) { c.sinkhorn_iters_train = parse_number<int>(k, v); }},
      {"sinkhorn_iters_infer", [](Config& c, const auto& k, const auto& v) { c.sinkhorn_iters_infer = parse_number<int>(k, v); }},
      {"match_threshold", [](Config& c, const auto& k, const auto& v) { c.match_threshold = parse_number<double>(k, v); }},
      {"lr", [](Config& c, const auto& k, const auto& v) { c.lr = parse_number<double>(k, v); }},
      {"epochs", [](Config& c, const auto& k, const auto& v) { c.epochs = parse_number<int>(k, v); }},
      {"batch_size", [](Config& c, const auto& k, const auto& v) { c.batch_size = parse_number<int>(k, v); }},
      {"seed", [](Config& c, const auto& k, const auto& v) { c.seed = parse_number<std::uint64_t>(k, v); }},
      {"w_conf", [](Config& c, const auto& k, const auto& v) { c.weights.conf = parse_number<double>(k, v); }},
      {"w_angle", [](Config& c, const auto& k, const auto& v) { c.weights.angle = parse_number<double>(k, v); }},
      {"w_refine", [](Config& c, const auto& k, const auto& v) { c.weights.refine = parse_number<double>(k, v); }},
      {"w_scale", [](Config& c, const auto& k, const auto& v) { c.weights.scale = parse_number<double>(k, v); }},
      {"min_fraction", [](Config& c, const auto& k, const auto& v) { c.min_fraction = parse_number<double>(k, v); }},
      {"threads", [](Config& c, const auto& k, const auto& v) { c.threads = parse_number<int>(k, v); }},
  };
  return table;
}

}  // namespace

Config Config::parse(const std::string& text) {
  Config c;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError("config line " + std::to_string(lineno) + ": expected key = value");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    const auto it = setters().find(key);
    if (it == setters().end()) throw ConfigError("config line " + std::to_string(lineno) + ": unknown key '" + key + "'");
    it->second(c, key, value);
  }
  c.validate();
  return c;
}

Config Config::load(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError("cannot open config '" + path.string() + "'");
  std::stringstream ss;
  ss << f.rdbuf();
  return parse(ss.str());
}

std::string Config::to_text() const {
  std::ostringstream o;
  o.precision(17);
  std::string w;
  for (std::size_t i = 0; i < widths.size(); ++i) w += (i ? "," : "") + std::to_string(widths[i]);
  o << "variant = " << variant.name() << "\n"
    << "group_order = " << group_order << "\n"
    << "widths = " << w << "\n"
    << "lift_kernel = " << lift_kernel << "\n"
    << "kernel = " << kernel << "\n"
    << "grid_size = " << grid_size << "\n"
    << "input_size = " << input_size << "\n"
    << "model_width = " << model_width << "\n"
    << "heads = " << heads << "\n"
    << "blocks = " << blocks << "\n"
    << "positional_encoding = " << (positional_encoding ? "true" : "false") << "\n"
    << "temperature = " << temperature << "\n"
    << "alpha_init = " << alpha_init << "\n"
    << "sinkhorn_iters_train = " << sinkhorn_iters_train << "\n"
    << "sinkhorn_iters_infer = " << sinkhorn_iters_infer << "\n"
    << "match_threshold = " << match_threshold << "\n"
    << "lr = " << lr << "\n"
    << "epochs = " << epochs << "\n"
    << "batch_size = " << batch_size << "\n"
    << "seed = " << seed << "\n"
    << "w_conf = " << weights.conf << "\n"
    << "w_angle = " << weights.angle << "\n"
    << "w_refine = " << weights.refine << "\n"
    << "w_scale = " << weights.scale << "\n"
    << "min_fraction = " << min_fraction << "\n"
    << "threads = " << threads << "\n";
  return o.str();
}

}  // namespace rotir
