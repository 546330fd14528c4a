#include <cstring>
#include <fstream>
#include <sstream>

#include "cvit/train.hpp"

namespace cvit {

namespace {

constexpr char kMagic[4] = {'C', 'V', 'I', 'T'};
constexpr uint32_t kVersion = 1;

// Serialization is little-endian; this writer targets LE hosts (x86/ARM64).
template <typename T>
void put(std::ostream& os, T v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::istream& is, const char* what) {
  T v;
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!is) throw IoError(std::string("checkpoint truncated while reading ") + what);
  return v;
}

void put_array(std::ostream& os, const std::string& name, const Shape& shape,
               const float* data) {
  put<uint32_t>(os, static_cast<uint32_t>(name.size()));
  os.write(name.data(), static_cast<std::streamsize>(name.size()));
  put<uint32_t>(os, static_cast<uint32_t>(shape.size()));
  int64_t numel = 1;
  for (int64_t d : shape) {
    put<int64_t>(os, d);
    numel *= d;
  }
  os.write(reinterpret_cast<const char*>(data),
           static_cast<std::streamsize>(numel * static_cast<int64_t>(sizeof(float))));
}

std::vector<float> config_values(const ModelConfig& c, const std::string& key) {
  if (key == "image_size") return {static_cast<float>(c.image_size)};
  if (key == "patch_size") return {static_cast<float>(c.patch_size)};
  if (key == "vit_dim") return {static_cast<float>(c.vit_dim)};
  if (key == "vit_layers") return {static_cast<float>(c.vit_layers)};
  if (key == "vit_heads") return {static_cast<float>(c.vit_heads)};
  if (key == "ffn_expansion") return {static_cast<float>(c.ffn_expansion)};
  if (key == "detail_channels")
    return {static_cast<float>(c.detail_channels[0]), static_cast<float>(c.detail_channels[1]),
            static_cast<float>(c.detail_channels[2])};
  if (key == "decoder_channels")
    return {static_cast<float>(c.decoder_channels[0]), static_cast<float>(c.decoder_channels[1]),
            static_cast<float>(c.decoder_channels[2]), static_cast<float>(c.decoder_channels[3])};
  if (key == "injector_variant")
    return {c.injector_variant == InjectorVariant::kVitAsQuery ? 0.0f : 1.0f};
  if (key == "threshold") return {c.threshold};
  if (key == "use_vit") return {c.use_vit ? 1.0f : 0.0f};
  if (key == "use_detail") return {c.use_detail ? 1.0f : 0.0f};
  if (key == "use_injector") return {c.use_injector ? 1.0f : 0.0f};
  throw ContractError("unknown config key " + key);
}

const char* kConfigKeys[] = {"image_size",     "patch_size",       "vit_dim",
                             "vit_layers",     "vit_heads",        "ffn_expansion",
                             "detail_channels", "decoder_channels", "injector_variant",
                             "threshold",      "use_vit",          "use_detail",
                             "use_injector"};

}  // namespace

std::string model_config_canonical(const ModelConfig& cfg) {
  std::ostringstream os;
  for (const char* key : kConfigKeys) {
    os << key << "=";
    auto vals = config_values(cfg, key);
    for (std::size_t i = 0; i < vals.size(); ++i) os << (i ? "," : "") << vals[i];
    os << "\n";
  }
  return os.str();
}

uint64_t model_config_hash(const ModelConfig& cfg) {
  return fnv1a64(model_config_canonical(cfg));
}

void save_checkpoint(const std::string& path, ModelParams<float>& params,
                     const OptimState<float>* optim, int64_t iter) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open checkpoint for writing: " + path);
  os.write(kMagic, 4);
  put<uint32_t>(os, kVersion);
  put<uint64_t>(os, model_config_hash(params.cfg));

  uint32_t count = 0;
  params.visit([&](const std::string&, Tensor<float>&) { ++count; });
  count += static_cast<uint32_t>(std::size(kConfigKeys)) + 1;  // config/* + meta/iter
  if (optim) {
    params.visit([&](const std::string& name, Tensor<float>&) {
      if (optim->moments.count(name)) count += 2;
    });
    count += 1;  // optim/t
  }
  put<uint32_t>(os, count);

  for (const char* key : kConfigKeys) {
    auto vals = config_values(params.cfg, key);
    put_array(os, std::string("config/") + key,
              Shape{static_cast<int64_t>(vals.size())}, vals.data());
  }
  float iter_f = static_cast<float>(iter);
  put_array(os, "meta/iter", Shape{1}, &iter_f);

  params.visit([&](const std::string& name, Tensor<float>& t) {
    put_array(os, "param/" + name, t.shape(), t.data());
  });
  if (optim) {
    float t_f = static_cast<float>(optim->t);
    put_array(os, "optim/t", Shape{1}, &t_f);
    params.visit([&](const std::string& name, Tensor<float>& t) {
      auto it = optim->moments.find(name);
      if (it == optim->moments.end()) return;
      put_array(os, "optim/" + name + ".m", t.shape(), it->second.m.data());
      put_array(os, "optim/" + name + ".v", t.shape(), it->second.v.data());
    });
  }
  if (!os) throw IoError("failed while writing checkpoint: " + path);
}

CheckpointData read_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open checkpoint: " + path);
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, kMagic, 4) != 0)
    throw IoError("not a CVIT checkpoint: " + path);
  uint32_t version = get<uint32_t>(is, "version");
  if (version != kVersion)
    throw IncompatibilityError("unsupported checkpoint version " + std::to_string(version));

  CheckpointData data;
  data.config_hash = get<uint64_t>(is, "config hash");
  uint32_t count = get<uint32_t>(is, "array count");
  for (uint32_t i = 0; i < count; ++i) {
    uint32_t name_len = get<uint32_t>(is, "array name length");
    std::string name(name_len, '\0');
    is.read(name.data(), name_len);
    if (!is) throw IoError("checkpoint truncated while reading an array name");
    uint32_t ndim = get<uint32_t>(is, "array rank");
    Shape shape;
    int64_t numel = 1;
    for (uint32_t d = 0; d < ndim; ++d) {
      int64_t dim = get<int64_t>(is, "array dim");
      if (dim <= 0 || dim > (int64_t(1) << 32)) throw IoError("corrupt array dimension");
      shape.push_back(dim);
      numel *= dim;
    }
    std::vector<float> values(static_cast<std::size_t>(numel));
    is.read(reinterpret_cast<char*>(values.data()),
            static_cast<std::streamsize>(numel * static_cast<int64_t>(sizeof(float))));
    if (!is) throw IoError("checkpoint truncated while reading array " + name);
    data.arrays.emplace(name, std::make_pair(std::move(shape), std::move(values)));
  }

  auto take_scalar = [&](const std::string& name) -> float {
    auto it = data.arrays.find(name);
    if (it == data.arrays.end()) throw IoError("checkpoint missing " + name);
    return it->second.second.at(0);
  };
  auto take_vec = [&](const std::string& name) -> const std::vector<float>& {
    auto it = data.arrays.find(name);
    if (it == data.arrays.end()) throw IoError("checkpoint missing " + name);
    return it->second.second;
  };

  ModelConfig& c = data.cfg;
  c.image_size = static_cast<int>(take_scalar("config/image_size"));
  c.patch_size = static_cast<int>(take_scalar("config/patch_size"));
  c.vit_dim = static_cast<int>(take_scalar("config/vit_dim"));
  c.vit_layers = static_cast<int>(take_scalar("config/vit_layers"));
  c.vit_heads = static_cast<int>(take_scalar("config/vit_heads"));
  c.ffn_expansion = static_cast<int>(take_scalar("config/ffn_expansion"));
  const auto& dc = take_vec("config/detail_channels");
  for (int i = 0; i < 3; ++i) c.detail_channels[i] = static_cast<int>(dc.at(i));
  const auto& xc = take_vec("config/decoder_channels");
  for (int i = 0; i < 4; ++i) c.decoder_channels[i] = static_cast<int>(xc.at(i));
  c.injector_variant = take_scalar("config/injector_variant") == 0.0f
                           ? InjectorVariant::kVitAsQuery
                           : InjectorVariant::kDetailAsQuery;
  c.threshold = take_scalar("config/threshold");
  c.use_vit = take_scalar("config/use_vit") != 0.0f;
  c.use_detail = take_scalar("config/use_detail") != 0.0f;
  c.use_injector = take_scalar("config/use_injector") != 0.0f;
  data.iter = static_cast<int64_t>(take_scalar("meta/iter"));

  if (model_config_hash(data.cfg) != data.config_hash)
    throw IncompatibilityError("checkpoint config hash does not match its stored config");
  return data;
}

void restore_checkpoint(const CheckpointData& data, ModelParams<float>& params,
                        OptimState<float>* optim, int64_t* iter) {
  if (model_config_hash(params.cfg) != data.config_hash)
    throw IncompatibilityError(
        "checkpoint was trained with a different model configuration (hash mismatch)");
  params.visit([&](const std::string& name, Tensor<float>& t) {
    auto it = data.arrays.find("param/" + name);
    if (it == data.arrays.end())
      throw IncompatibilityError("checkpoint missing parameter " + name);
    if (it->second.first != t.shape())
      throw IncompatibilityError("checkpoint parameter " + name + " has shape " +
                                 shape_str(it->second.first) + ", expected " +
                                 shape_str(t.shape()));
    t.vec() = it->second.second;
  });
  if (optim) {
    optim->moments.clear();
    optim->t = 0;
    auto t_it = data.arrays.find("optim/t");
    if (t_it != data.arrays.end()) {
      optim->t = static_cast<int64_t>(t_it->second.second.at(0));
      params.visit([&](const std::string& name, Tensor<float>& t) {
        auto m_it = data.arrays.find("optim/" + name + ".m");
        auto v_it = data.arrays.find("optim/" + name + ".v");
        if (m_it == data.arrays.end() || v_it == data.arrays.end()) return;
        auto& mom = optim->moments[name];
        mom.m = m_it->second.second;
        mom.v = v_it->second.second;
        if (mom.m.size() != t.vec().size() || mom.v.size() != t.vec().size())
          throw IncompatibilityError("checkpoint moment shape mismatch for " + name);
      });
    }
  }
  if (iter) *iter = data.iter;
}

ModelParams<float> model_from_checkpoint(const CheckpointData& data) {
  ModelParams<float> params = ModelParams<float>::init(data.cfg, 0);
  restore_checkpoint(data, params, nullptr, nullptr);
  return params;
}

}  // namespace cvit
