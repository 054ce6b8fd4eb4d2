#include "natreg/config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <sstream>

#include "natreg/errors.hpp"

NATREG_NAMESPACE_BEGIN

namespace {

std::string_view trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

[[noreturn]] void bad_value(std::string_view key, std::string_view value) {
  throw ConfigError("invalid value '" + std::string(value) + "' for key '" + std::string(key) + "'");
}

template <class T>
T parse_integer(std::string_view key, std::string_view value) {
  T out{};
  auto [ptr, ec] = std::from_chars(value.data(), value.data() + value.size(), out);
  if (ec != std::errc() || ptr != value.data() + value.size()) bad_value(key, value);
  return out;
}

double parse_double(std::string_view key, std::string_view value) {
  // from_chars for floating point is unavailable on older libstdc++.
  const std::string s(value);
  std::size_t used = 0;
  double out = 0;
  try {
    out = std::stod(s, &used);
  } catch (const std::exception&) {
    bad_value(key, value);
  }
  if (used != s.size()) bad_value(key, value);
  return out;
}

bool parse_bool(std::string_view key, std::string_view value) {
  if (value == "true" || value == "1") return true;
  if (value == "false" || value == "0") return false;
  bad_value(key, value);
}

// Shortest text that parses back to the same value.
template <class T>
std::string format_real(T v) {
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, end);
}

bool apply_model_key(ModelConfig& m, std::string_view key, std::string_view value) {
  using Setter = std::function<void(std::string_view)>;
  const std::pair<std::string_view, Setter> table[] = {
      {"d_model", [&](auto v) { m.d_model = parse_integer<std::size_t>(key, v); }},
      {"n_heads", [&](auto v) { m.n_heads = parse_integer<std::size_t>(key, v); }},
      {"n_enc_layers", [&](auto v) { m.n_enc_layers = parse_integer<std::size_t>(key, v); }},
      {"n_dec_layers", [&](auto v) { m.n_dec_layers = parse_integer<std::size_t>(key, v); }},
      {"d_ff", [&](auto v) { m.d_ff = parse_integer<std::size_t>(key, v); }},
      {"dropout", [&](auto v) { m.dropout = static_cast<real>(parse_double(key, v)); }},
      {"max_len", [&](auto v) { m.max_len = parse_integer<std::size_t>(key, v); }},
      {"src_vocab_size", [&](auto v) { m.src_vocab_size = parse_integer<std::size_t>(key, v); }},
      {"tgt_vocab_size", [&](auto v) { m.tgt_vocab_size = parse_integer<std::size_t>(key, v); }},
      {"share_src_tgt_vocab", [&](auto v) { m.share_src_tgt_vocab = parse_bool(key, v); }},
      {"learned_positions", [&](auto v) { m.learned_positions = parse_bool(key, v); }},
  };
  for (const auto& [name, set] : table) {
    if (name == key) {
      set(value);
      return true;
    }
  }
  return false;
}

}  // namespace

void TrainConfig::validate() const {
  if (batch_size < 1) throw ConfigError("batch_size must be at least 1");
  if (warmup_steps < 1) throw ConfigError("warmup_steps must be at least 1");
  if (!(base_lr > 0)) throw ConfigError("base_lr must be positive");
  if (eval_interval < 1) throw ConfigError("eval_interval must be at least 1");
  if (!(adam_beta1 >= 0 && adam_beta1 < 1 && adam_beta2 >= 0 && adam_beta2 < 1)) {
    throw ConfigError("Adam moment decay rates must lie in [0,1)");
  }
  if (!(adam_eps > 0)) throw ConfigError("adam_eps must be positive");
  if (!(dev_fraction >= 0 && dev_fraction < 1)) throw ConfigError("dev_fraction must be in [0,1)");
  if (mode.sim && mode.universal) {
    throw ConfigError("similarity regularization and the universal penalty are exclusive");
  }
}

std::map<std::string, std::string> parse_key_values(std::string_view text) {
  std::map<std::string, std::string> out;
  std::size_t lineno = 0;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    auto end = text.find('\n', pos);
    if (end == std::string_view::npos) end = text.size();
    const auto line = trim(text.substr(pos, end - pos));
    pos = end + 1;
    ++lineno;
    if (line.empty() || line.front() == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) {
      throw ConfigError("line " + std::to_string(lineno) + ": expected 'key = value'");
    }
    std::string key(trim(line.substr(0, eq)));
    std::string value(trim(line.substr(eq + 1)));
    if (key.empty()) throw ConfigError("line " + std::to_string(lineno) + ": empty key");
    if (!out.emplace(key, value).second) {
      throw ConfigError("line " + std::to_string(lineno) + ": duplicate key '" + key + "'");
    }
  }
  return out;
}

bool apply_train_key(TrainConfig& c, std::string_view key, std::string_view value) {
  if (key == "seed") c.seed = parse_integer<std::uint64_t>(key, value);
  else if (key == "batch_size") c.batch_size = parse_integer<std::size_t>(key, value);
  else if (key == "max_steps") c.max_steps = parse_integer<std::size_t>(key, value);
  else if (key == "base_lr") c.base_lr = static_cast<real>(parse_double(key, value));
  else if (key == "warmup_steps") c.warmup_steps = parse_integer<std::size_t>(key, value);
  else if (key == "adam_beta1") c.adam_beta1 = static_cast<real>(parse_double(key, value));
  else if (key == "adam_beta2") c.adam_beta2 = static_cast<real>(parse_double(key, value));
  else if (key == "adam_eps") c.adam_eps = static_cast<real>(parse_double(key, value));
  else if (key == "eval_interval") c.eval_interval = parse_integer<std::size_t>(key, value);
  else if (key == "dev_fraction") c.dev_fraction = parse_double(key, value);
  else if (key == "alpha") c.weights.alpha = static_cast<real>(parse_double(key, value));
  else if (key == "beta") c.weights.beta = static_cast<real>(parse_double(key, value));
  else if (key == "mode") c.mode = parse_loss_mode(value);
  else if (key == "sever_rec_embedding") c.mode.sever_rec_embedding = parse_bool(key, value);
  else return apply_model_key(c.model, key, value);
  return true;
}

TrainConfig parse_train_config(std::string_view text, TrainConfig base) {
  for (const auto& [key, value] : parse_key_values(text)) {
    if (!apply_train_key(base, key, value)) throw ConfigError("unknown config key '" + key + "'");
  }
  base.validate();
  return base;
}

TrainConfig load_train_config(const std::filesystem::path& path, TrainConfig base) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_train_config(ss.str(), std::move(base));
}

std::string format_model_config(const ModelConfig& m) {
  std::ostringstream os;
  os << "d_model = " << m.d_model << '\n'
     << "n_heads = " << m.n_heads << '\n'
     << "n_enc_layers = " << m.n_enc_layers << '\n'
     << "n_dec_layers = " << m.n_dec_layers << '\n'
     << "d_ff = " << m.d_ff << '\n'
     << "dropout = " << format_real(m.dropout) << '\n'
     << "max_len = " << m.max_len << '\n'
     << "src_vocab_size = " << m.src_vocab_size << '\n'
     << "tgt_vocab_size = " << m.tgt_vocab_size << '\n'
     << "share_src_tgt_vocab = " << (m.share_src_tgt_vocab ? "true" : "false") << '\n'
     << "learned_positions = " << (m.learned_positions ? "true" : "false") << '\n';
  return os.str();
}

ModelConfig parse_model_config(std::string_view text) {
  ModelConfig m;
  for (const auto& [key, value] : parse_key_values(text)) {
    if (!apply_model_key(m, key, value)) throw ConfigError("unknown model config key '" + key + "'");
  }
  m.validate();
  return m;
}

std::string format_train_config(const TrainConfig& c) {
  std::ostringstream os;
  os << "seed = " << c.seed << '\n'
     << "batch_size = " << c.batch_size << '\n'
     << "max_steps = " << c.max_steps << '\n'
     << "base_lr = " << format_real(c.base_lr) << '\n'
     << "warmup_steps = " << c.warmup_steps << '\n'
     << "adam_beta1 = " << format_real(c.adam_beta1) << '\n'
     << "adam_beta2 = " << format_real(c.adam_beta2) << '\n'
     << "adam_eps = " << format_real(c.adam_eps) << '\n'
     << "eval_interval = " << c.eval_interval << '\n'
     << "dev_fraction = " << format_real(c.dev_fraction) << '\n'
     << "alpha = " << format_real(c.weights.alpha) << '\n'
     << "beta = " << format_real(c.weights.beta) << '\n'
     << "mode = " << loss_mode_name(c.mode) << '\n'
     << "sever_rec_embedding = " << (c.mode.sever_rec_embedding ? "true" : "false") << '\n'
     << format_model_config(c.model);
  return os.str();
}

LossMode parse_loss_mode(std::string_view name) {
  LossMode m;
  if (name == "base") return m;
  if (name == "sim") m.sim = true;
  else if (name == "rec") m.rec = true;
  else if (name == "both") m.sim = m.rec = true;
  else if (name == "universal") m.universal = true;
  else throw ConfigError("unknown mode '" + std::string(name) + "' (base, sim, rec, both, universal)");
  return m;
}

std::string_view loss_mode_name(const LossMode& m) {
  if (m.universal) return "universal";
  if (m.sim && m.rec) return "both";
  if (m.sim) return "sim";
  if (m.rec) return "rec";
  return "base";
}

NATREG_NAMESPACE_END
