#include "natreg/checkpoint.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>
#include <unordered_set>

#include "natreg/config.hpp"
#include "natreg/errors.hpp"

NATREG_NAMESPACE_BEGIN

namespace {

constexpr std::size_t kMagicLen = sizeof(kCheckpointMagic) - 1;

template <class T>
void put(std::string& out, T value) {
  static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");
  char buf[sizeof(T)];
  std::memcpy(buf, &value, sizeof(T));
  out.append(buf, sizeof(T));
}

class Reader {
 public:
  explicit Reader(std::string_view bytes) : bytes_(bytes) {}

  template <class T>
  T get(const char* what) {
    need(sizeof(T), what);
    T value;
    std::memcpy(&value, bytes_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return value;
  }

  std::string_view take(std::size_t n, const char* what) {
    need(n, what);
    auto s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }

  bool done() const { return pos_ == bytes_.size(); }

 private:
  void need(std::size_t n, const char* what) {
    if (bytes_.size() - pos_ < n) {
      throw FormatError(std::string("checkpoint truncated while reading ") + what + " at byte " +
                        std::to_string(pos_));
    }
  }
  std::string_view bytes_;
  std::size_t pos_ = 0;
};

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const std::filesystem::path& path, std::string_view bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError("cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw FormatError("write failed for " + path.string());
}

std::filesystem::path with_cfg_suffix(std::filesystem::path p) {
  p += ".cfg";
  return p;
}

}  // namespace

std::string serialize_params(const ModelParams& params) {
  std::string out(kCheckpointMagic, kMagicLen);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(params.size()));
  for (const auto& [name, t] : params.entries()) {
    if (name.size() > 0xFFFF) throw FormatError("tensor name too long: " + name.substr(0, 32) + "...");
    put<std::uint16_t>(out, static_cast<std::uint16_t>(name.size()));
    out += name;
    put<std::uint8_t>(out, static_cast<std::uint8_t>(t.rank()));
    for (auto d : t.shape()) put<std::uint32_t>(out, static_cast<std::uint32_t>(d));
    for (real v : t.data()) put<float>(out, static_cast<float>(v));
  }
  return out;
}

ModelParams deserialize_params(std::string_view bytes) {
  Reader r(bytes);
  const auto magic = r.take(kMagicLen, "magic");
  if (magic != std::string_view(kCheckpointMagic, kMagicLen)) {
    throw FormatError("bad checkpoint magic (expected " + std::string(kCheckpointMagic) + ")");
  }
  const auto count = r.get<std::uint32_t>("tensor count");
  ModelParams params;
  std::unordered_set<std::string> seen;
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto name_len = r.get<std::uint16_t>("name length");
    std::string name(r.take(name_len, "tensor name"));
    if (!seen.insert(name).second) throw FormatError("duplicate tensor name '" + name + "' in checkpoint");
    const auto rank = r.get<std::uint8_t>("rank");
    Shape shape;
    for (std::uint8_t k = 0; k < rank; ++k) shape.push_back(r.get<std::uint32_t>("dimension"));
    std::vector<real> data(shape_numel(shape));
    for (auto& v : data) v = static_cast<real>(r.get<float>("tensor data"));
    params.add(std::move(name), Tensor::from(std::move(shape), std::move(data), true));
  }
  if (!r.done()) throw FormatError("trailing bytes after " + std::to_string(count) + " tensors");
  return params;
}

void save_checkpoint(const ModelParams& params, const std::filesystem::path& path) {
  write_file(path, serialize_params(params));
}

ModelParams load_checkpoint(const std::filesystem::path& path) {
  return deserialize_params(read_file(path));
}

std::string_view model_kind_name(ModelKind kind) {
  switch (kind) {
    case ModelKind::Teacher: return "teacher";
    case ModelKind::Nat: return "nat";
    case ModelKind::Backward: return "backward";
  }
  return "teacher";
}

ModelKind parse_model_kind(std::string_view name) {
  if (name == "teacher") return ModelKind::Teacher;
  if (name == "nat") return ModelKind::Nat;
  if (name == "backward") return ModelKind::Backward;
  throw FormatError("unknown model kind '" + std::string(name) + "'");
}

void save_model(const Transformer& model, const std::filesystem::path& path) {
  save_checkpoint(model.params(), path);
  std::string cfg = "kind = " + std::string(model_kind_name(model.kind())) + "\n";
  cfg += format_model_config(model.config());
  write_file(with_cfg_suffix(path), cfg);
}

Transformer load_model(const std::filesystem::path& path) {
  auto kv = parse_key_values(read_file(with_cfg_suffix(path)));
  auto it = kv.find("kind");
  if (it == kv.end()) throw FormatError(with_cfg_suffix(path).string() + ": missing 'kind'");
  const ModelKind kind = parse_model_kind(it->second);
  kv.erase(it);
  std::string rest;
  for (const auto& [k, v] : kv) rest += k + " = " + v + "\n";
  return Transformer::from_params(kind, parse_model_config(rest), load_checkpoint(path));
}

NATREG_NAMESPACE_END
