#include "cvit/config.hpp"

#include <cctype>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <sstream>
#include <vector>

namespace cvit {

namespace {

struct Entry {
  std::string section;  // "" for top level
  std::string key;
  std::string raw;  // value text
  int line = 0;
};

std::string trim(const std::string& s) {
  std::size_t b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  std::size_t e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::string strip_comment(const std::string& line) {
  bool in_string = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    if (line[i] == '"') in_string = !in_string;
    else if (line[i] == '#' && !in_string) return line.substr(0, i);
  }
  return line;
}

std::vector<Entry> tokenize(const std::string& text) {
  std::vector<Entry> entries;
  std::istringstream is(text);
  std::string line, section;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    std::string t = trim(strip_comment(line));
    if (t.empty()) continue;
    if (t.front() == '[') {
      if (t.back() != ']')
        throw ConfigError("config line " + std::to_string(lineno) + ": malformed section header");
      section = trim(t.substr(1, t.size() - 2));
      if (section.empty())
        throw ConfigError("config line " + std::to_string(lineno) + ": empty section name");
      continue;
    }
    std::size_t eq = t.find('=');
    if (eq == std::string::npos)
      throw ConfigError("config line " + std::to_string(lineno) + ": expected key = value");
    Entry e;
    e.section = section;
    e.key = trim(t.substr(0, eq));
    e.raw = trim(t.substr(eq + 1));
    e.line = lineno;
    if (e.key.empty() || e.raw.empty())
      throw ConfigError("config line " + std::to_string(lineno) + ": empty key or value");
    entries.push_back(e);
  }
  return entries;
}

[[noreturn]] void bad_value(const Entry& e, const std::string& why) {
  throw ConfigError("config line " + std::to_string(e.line) + " (" +
                    (e.section.empty() ? e.key : e.section + "." + e.key) + "): " + why);
}

double as_number(const Entry& e, const std::string& raw) {
  const char* begin = raw.c_str();
  char* end = nullptr;
  double v = std::strtod(begin, &end);
  if (end != begin + raw.size()) bad_value(e, "not a number: '" + raw + "'");
  return v;
}

double as_number(const Entry& e) { return as_number(e, e.raw); }

int64_t as_int(const Entry& e) {
  double v = as_number(e);
  if (v != std::floor(v)) bad_value(e, "expected an integer");
  return static_cast<int64_t>(v);
}

bool as_bool(const Entry& e) {
  if (e.raw == "true") return true;
  if (e.raw == "false") return false;
  bad_value(e, "expected true or false");
}

std::string as_string(const Entry& e) {
  if (e.raw.size() >= 2 && e.raw.front() == '"' && e.raw.back() == '"')
    return e.raw.substr(1, e.raw.size() - 2);
  return e.raw;  // bare strings allowed
}

std::vector<int64_t> as_int_array(const Entry& e) {
  if (e.raw.front() != '[' || e.raw.back() != ']') bad_value(e, "expected [a, b, ...]");
  std::vector<int64_t> out;
  std::string body = e.raw.substr(1, e.raw.size() - 2);
  std::istringstream is(body);
  std::string item;
  while (std::getline(is, item, ',')) {
    std::string t = trim(item);
    if (t.empty()) bad_value(e, "empty array element");
    double v = as_number(e, t);
    if (v != std::floor(v)) bad_value(e, "expected integer array elements");
    out.push_back(static_cast<int64_t>(v));
  }
  if (out.empty()) bad_value(e, "empty array");
  return out;
}

ModelConfig preset_by_name(const Entry& e, const std::string& name) {
  if (name == "tiny") return ModelConfig::tiny();
  if (name == "vit-t") return ModelConfig::vit_t();
  if (name == "vit-s") return ModelConfig::vit_s();
  bad_value(e, "unknown preset '" + name + "' (tiny, vit-t, vit-s)");
}

InjectorVariant variant_by_name(const Entry& e, const std::string& name) {
  if (name == "vit_as_query") return InjectorVariant::kVitAsQuery;
  if (name == "detail_as_query") return InjectorVariant::kDetailAsQuery;
  bad_value(e, "unknown injector variant '" + name + "'");
}

void apply_model_key(ModelConfig& m, const Entry& e) {
  const std::string& k = e.key;
  if (k == "preset") return;  // handled up front
  if (k == "image_size") m.image_size = static_cast<int>(as_int(e));
  else if (k == "patch_size") m.patch_size = static_cast<int>(as_int(e));
  else if (k == "vit_dim") m.vit_dim = static_cast<int>(as_int(e));
  else if (k == "vit_layers") m.vit_layers = static_cast<int>(as_int(e));
  else if (k == "vit_heads") m.vit_heads = static_cast<int>(as_int(e));
  else if (k == "ffn_expansion") m.ffn_expansion = static_cast<int>(as_int(e));
  else if (k == "detail_channels") {
    auto v = as_int_array(e);
    if (v.size() != 3) bad_value(e, "detail_channels needs exactly 3 entries");
    for (int i = 0; i < 3; ++i) m.detail_channels[i] = static_cast<int>(v[i]);
  } else if (k == "decoder_channels") {
    auto v = as_int_array(e);
    if (v.size() != 4) bad_value(e, "decoder_channels needs exactly 4 entries");
    for (int i = 0; i < 4; ++i) m.decoder_channels[i] = static_cast<int>(v[i]);
  } else if (k == "injector_variant") m.injector_variant = variant_by_name(e, as_string(e));
  else if (k == "threshold") m.threshold = static_cast<float>(as_number(e));
  else if (k == "use_vit") m.use_vit = as_bool(e);
  else if (k == "use_detail") m.use_detail = as_bool(e);
  else if (k == "use_injector") m.use_injector = as_bool(e);
  else bad_value(e, "unknown key in [model]");
}

void apply_train_key(TrainConfig& t, const Entry& e) {
  const std::string& k = e.key;
  if (k == "lr0") t.lr0 = static_cast<float>(as_number(e));
  else if (k == "beta1") t.beta1 = static_cast<float>(as_number(e));
  else if (k == "beta2") t.beta2 = static_cast<float>(as_number(e));
  else if (k == "weight_decay") t.weight_decay = static_cast<float>(as_number(e));
  else if (k == "alpha") t.alpha = static_cast<float>(as_number(e));
  else if (k == "adam_eps") t.adam_eps = static_cast<float>(as_number(e));
  else if (k == "max_iter") t.max_iter = static_cast<int>(as_int(e));
  else if (k == "batch_size") t.batch_size = static_cast<int>(as_int(e));
  else if (k == "eval_interval") t.eval_interval = static_cast<int>(as_int(e));
  else bad_value(e, "unknown key in [train]");
}

void apply_data_key(DataConfig& d, const Entry& e) {
  const std::string& k = e.key;
  if (k == "train_dir") d.train_dir = as_string(e);
  else if (k == "val_dir") d.val_dir = as_string(e);
  else if (k == "augment") d.augment = as_bool(e);
  else if (k == "augment_flip") d.augment_flip = as_bool(e);
  else if (k == "augment_crop") d.augment_crop = as_bool(e);
  else if (k == "crop_min") d.crop_min = as_number(e);
  else bad_value(e, "unknown key in [data]");
}

}  // namespace

RunConfig parse_run_config_text(const std::string& text) {
  auto entries = tokenize(text);
  RunConfig rc;
  // The preset (when given) is the base the other model keys override,
  // regardless of where it appears in the file.
  for (const auto& e : entries)
    if (e.section == "model" && e.key == "preset") rc.model = preset_by_name(e, as_string(e));
  for (const auto& e : entries) {
    if (e.section.empty()) {
      if (e.key == "seed") rc.seed = static_cast<uint64_t>(as_int(e));
      else bad_value(e, "unknown top-level key");
    } else if (e.section == "model") {
      apply_model_key(rc.model, e);
    } else if (e.section == "train") {
      apply_train_key(rc.train, e);
    } else if (e.section == "data") {
      apply_data_key(rc.data, e);
    } else {
      bad_value(e, "unknown section [" + e.section + "]");
    }
  }
  rc.train.seed = rc.seed;
  rc.model.validate();
  rc.train.validate();
  if (rc.data.crop_min <= 0 || rc.data.crop_min > 1)
    throw ConfigError("data.crop_min must lie in (0, 1]");
  return rc;
}

RunConfig parse_run_config_file(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot open config file: " + path);
  std::stringstream ss;
  ss << is.rdbuf();
  return parse_run_config_text(ss.str());
}

SynthSpec parse_synth_spec_text(const std::string& text) {
  auto entries = tokenize(text);
  SynthSpec s;
  for (const auto& e : entries) {
    if (!e.section.empty() && e.section != "synth")
      bad_value(e, "unknown section in a synth spec");
    const std::string& k = e.key;
    if (k == "canvas") s.canvas = static_cast<int>(as_int(e));
    else if (k == "num_objects") s.num_objects = static_cast<int>(as_int(e));
    else if (k == "size_min") s.size_min = as_number(e);
    else if (k == "size_max") s.size_max = as_number(e);
    else if (k == "change_prob") s.change_prob = as_number(e);
    else if (k == "texture_seed") s.texture_seed = static_cast<uint64_t>(as_int(e));
    else if (k == "noise") s.noise = as_number(e);
    else if (k == "drift") s.drift = as_number(e);
    else if (k == "drift_scale") s.drift_scale = as_number(e);
    else if (k == "contrast_min") s.contrast_min = as_number(e);
    else if (k == "contrast_max") s.contrast_max = as_number(e);
    else if (k == "contrast_by_size") s.contrast_by_size = as_bool(e);
    else bad_value(e, "unknown key in a synth spec");
  }
  s.validate();
  return s;
}

SynthSpec parse_synth_spec_file(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot open synth spec file: " + path);
  std::stringstream ss;
  ss << is.rdbuf();
  return parse_synth_spec_text(ss.str());
}

}  // namespace cvit
