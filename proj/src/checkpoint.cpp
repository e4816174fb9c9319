#include "missfuse/checkpoint.hpp"

#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>

namespace missfuse {

namespace {

constexpr char kMagic[4] = {'M', 'F', 'C', 'K'};
constexpr uint32_t kVersion = 1;

void write_u32(std::ostream& out, uint32_t v) {
  unsigned char buf[4];
  for (int i = 0; i < 4; ++i) buf[i] = (v >> (8 * i)) & 0xff;
  out.write(reinterpret_cast<const char*>(buf), 4);
}

uint32_t read_u32(std::istream& in) {
  unsigned char buf[4];
  in.read(reinterpret_cast<char*>(buf), 4);
  if (!in) throw DataError("checkpoint truncated");
  uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(buf[i]) << (8 * i);
  return v;
}

void write_f32(std::ostream& out, float v) {
  uint32_t bits;
  std::memcpy(&bits, &v, 4);
  write_u32(out, bits);
}

float read_f32(std::istream& in) {
  const uint32_t bits = read_u32(in);
  float v;
  std::memcpy(&v, &bits, 4);
  return v;
}

void write_string(std::ostream& out, const std::string& s) {
  write_u32(out, static_cast<uint32_t>(s.size()));
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::string read_string(std::istream& in) {
  const uint32_t len = read_u32(in);
  if (len > (1u << 20)) throw DataError("checkpoint string too large");
  std::string s(len, '\0');
  in.read(s.data(), len);
  if (!in) throw DataError("checkpoint truncated");
  return s;
}

template <class S>
void save_impl(const std::string& path, ModelParams<S>& params) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot open checkpoint for writing: " + path);
  out.write(kMagic, 4);
  write_u32(out, kVersion);
  write_string(out, serialize_model_config(params.cfg));

  uint32_t count = 0;
  visit_params(params, [&](diff::Param<S>&) { ++count; });
  write_u32(out, count);
  visit_params(params, [&](diff::Param<S>& p) {
    write_string(out, p.name);
    write_u32(out, static_cast<uint32_t>(p.value.shape.size()));
    for (int d : p.value.shape) write_u32(out, static_cast<uint32_t>(d));
  });
  visit_params(params, [&](diff::Param<S>& p) {
    for (S v : p.value.data) write_f32(out, static_cast<float>(v));
  });
  if (!out) throw DataError("checkpoint write failed: " + path);
}

}  // namespace

void save_checkpoint(const std::string& path, ModelParams<float>& params) {
  save_impl(path, params);
}
void save_checkpoint(const std::string& path, ModelParams<double>& params) {
  save_impl(path, params);
}

LoadedCheckpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open checkpoint: " + path);
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, kMagic, 4) != 0) {
    throw DataError("not a checkpoint file: " + path);
  }
  const uint32_t version = read_u32(in);
  if (version != kVersion) {
    throw DataError("unsupported checkpoint version " +
                    std::to_string(version));
  }
  LoadedCheckpoint ckpt;
  ckpt.config = parse_model_config(read_string(in));

  const uint32_t count = read_u32(in);
  std::vector<std::vector<int>> shapes;
  for (uint32_t i = 0; i < count; ++i) {
    ckpt.names.push_back(read_string(in));
    const uint32_t ndim = read_u32(in);
    if (ndim > 4) throw DataError("checkpoint shape rank too large");
    std::vector<int> shape;
    for (uint32_t d = 0; d < ndim; ++d) {
      shape.push_back(static_cast<int>(read_u32(in)));
    }
    shapes.push_back(std::move(shape));
  }
  for (uint32_t i = 0; i < count; ++i) {
    auto t = diff::Tensor<float>::zeros(shapes[i]);
    for (auto& v : t.data) v = read_f32(in);
    ckpt.tensors.push_back(std::move(t));
  }
  return ckpt;
}

std::string serialize_model_config(const ModelConfig& cfg) {
  std::ostringstream os;
  os << "num_modalities=" << cfg.num_modalities << "\n";
  os << "input_dims=";
  for (size_t i = 0; i < cfg.input_dims.size(); ++i) {
    os << (i ? "," : "") << cfg.input_dims[i];
  }
  os << "\n";
  os << "num_classes=" << cfg.num_classes << "\n";
  os << "feat_dim=" << cfg.feat_dim << "\n";
  os << "latent_dim=" << cfg.latent_dim << "\n";
  os << "heads=" << cfg.heads << "\n";
  os << "encoder_hidden=" << cfg.encoder_hidden << "\n";
  os << "disable_pra=" << cfg.disable_pra << "\n";
  os << "literal_attention=" << cfg.literal_attention << "\n";
  os << "vector_gate=" << cfg.vector_gate << "\n";
  os << "fixed_unit_variance=" << cfg.fixed_unit_variance << "\n";
  os << "deterministic_inference=" << cfg.deterministic_inference << "\n";
  return os.str();
}

ModelConfig parse_model_config(const std::string& text) {
  ModelConfig cfg;
  std::istringstream is(text);
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ParseError("model config: expected key=value, got '" + line + "'");
    }
    const std::string key = line.substr(0, eq);
    const std::string value = line.substr(eq + 1);
    if (key == "num_modalities") {
      cfg.num_modalities = std::stoi(value);
    } else if (key == "input_dims") {
      cfg.input_dims.clear();
      std::istringstream vs(value);
      std::string part;
      while (std::getline(vs, part, ',')) {
        cfg.input_dims.push_back(std::stoi(part));
      }
    } else if (key == "num_classes") {
      cfg.num_classes = std::stoi(value);
    } else if (key == "feat_dim") {
      cfg.feat_dim = std::stoi(value);
    } else if (key == "latent_dim") {
      cfg.latent_dim = std::stoi(value);
    } else if (key == "heads") {
      cfg.heads = std::stoi(value);
    } else if (key == "encoder_hidden") {
      cfg.encoder_hidden = std::stoi(value);
    } else if (key == "disable_pra") {
      cfg.disable_pra = value == "1";
    } else if (key == "literal_attention") {
      cfg.literal_attention = value == "1";
    } else if (key == "vector_gate") {
      cfg.vector_gate = value == "1";
    } else if (key == "fixed_unit_variance") {
      cfg.fixed_unit_variance = value == "1";
    } else if (key == "deterministic_inference") {
      cfg.deterministic_inference = value == "1";
    } else {
      throw ParseError("model config: unknown key '" + key + "'");
    }
  }
  return cfg;
}

}  // namespace missfuse
