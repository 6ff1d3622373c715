#include <bit>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

#include "attnforge/transformer.hpp"

static_assert(std::endian::native == std::endian::little,
              "checkpoint blobs are little-endian; byte swapping is not implemented");

namespace attnforge {

namespace fs = std::filesystem;

namespace {

std::string shape_string(const std::vector<int>& shape) {
  std::string s;
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += 'x';
    s += std::to_string(shape[i]);
  }
  return s;
}

std::vector<int> parse_shape(const std::string& s) {
  std::vector<int> shape;
  std::stringstream ss(s);
  std::string part;
  while (std::getline(ss, part, 'x')) {
    try {
      shape.push_back(std::stoi(part));
    } catch (const std::exception&) {
      throw std::runtime_error("checkpoint: bad shape '" + s + "'");
    }
  }
  if (shape.empty()) throw std::runtime_error("checkpoint: empty shape");
  return shape;
}

std::string format_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

// returns field=value pairs in file order
std::vector<std::pair<std::string, std::string>> parse_manifest(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("checkpoint: cannot open " + path.string());
  std::vector<std::pair<std::string, std::string>> fields;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    std::string stripped = line.substr(0, line.find('#'));
    auto first = stripped.find_first_not_of(" \t\r");
    if (first == std::string::npos) continue;
    auto eq = stripped.find('=');
    if (eq == std::string::npos)
      throw std::runtime_error("checkpoint: line " + std::to_string(lineno) + " has no '='");
    auto trim = [](std::string s) {
      auto a = s.find_first_not_of(" \t\r");
      auto b = s.find_last_not_of(" \t\r");
      return a == std::string::npos ? std::string() : s.substr(a, b - a + 1);
    };
    std::string key = trim(stripped.substr(0, eq));
    std::string value = trim(stripped.substr(eq + 1));
    if (key.empty() || value.empty())
      throw std::runtime_error("checkpoint: line " + std::to_string(lineno) + " is malformed");
    fields.emplace_back(key, value);
  }
  return fields;
}

}  // namespace

void save_checkpoint(const VitModel& model, const std::string& dir) {
  fs::create_directories(dir);
  auto tensors = named_tensors(model);

  std::ofstream manifest(fs::path(dir) / "manifest.txt");
  if (!manifest) throw std::runtime_error("checkpoint: cannot write manifest in " + dir);
  const ModelConfig& c = model.config;
  manifest << "format = attnforge-checkpoint-v1\n";
  manifest << "model.layers = " << c.layers << "\n";
  manifest << "model.d_model = " << c.d_model << "\n";
  manifest << "model.heads = " << c.heads << "\n";
  manifest << "model.mlp_ratio = " << format_double(c.mlp_ratio) << "\n";
  manifest << "model.patch_size = " << c.patch_size << "\n";
  manifest << "model.image_side = " << c.image_side << "\n";
  manifest << "model.classes = " << c.classes << "\n";
  manifest << "model.seed = " << c.seed << "\n";
  for (const auto& [name, t] : tensors)
    manifest << "tensor." << name << " = " << shape_string(t.shape()) << "\n";
  manifest.close();

  std::ofstream blob(fs::path(dir) / "weights.bin", std::ios::binary);
  if (!blob) throw std::runtime_error("checkpoint: cannot write weights in " + dir);
  for (const auto& [name, t] : tensors) {
    (void)name;
    blob.write(reinterpret_cast<const char*>(t.values().data()),
               static_cast<std::streamsize>(t.numel() * sizeof(double)));
  }
  if (!blob) throw std::runtime_error("checkpoint: short write in " + dir);
}

VitModel load_checkpoint(const std::string& dir) {
  auto fields = parse_manifest(fs::path(dir) / "manifest.txt");

  std::map<std::string, std::string> scalars;
  std::vector<std::pair<std::string, std::vector<int>>> tensor_specs;
  for (const auto& [key, value] : fields) {
    if (key.rfind("tensor.", 0) == 0)
      tensor_specs.emplace_back(key.substr(7), parse_shape(value));
    else
      scalars[key] = value;
  }
  if (scalars["format"] != "attnforge-checkpoint-v1")
    throw std::runtime_error("checkpoint: unknown format tag");

  auto need = [&](const std::string& k) {
    auto it = scalars.find(k);
    if (it == scalars.end()) throw std::runtime_error("checkpoint: missing field " + k);
    return it->second;
  };
  ModelConfig cfg;
  try {
    cfg.layers = std::stoi(need("model.layers"));
    cfg.d_model = std::stoi(need("model.d_model"));
    cfg.heads = std::stoi(need("model.heads"));
    cfg.mlp_ratio = std::stod(need("model.mlp_ratio"));
    cfg.patch_size = std::stoi(need("model.patch_size"));
    cfg.image_side = std::stoi(need("model.image_side"));
    cfg.classes = std::stoi(need("model.classes"));
    cfg.seed = std::stoull(need("model.seed"));
  } catch (const std::invalid_argument&) {
    throw std::runtime_error("checkpoint: malformed numeric field in manifest");
  }
  cfg.validate();

  VitModel model = build_vit(cfg);
  // persistent attention-bias buffers exist only when listed
  for (const auto& [name, shape] : tensor_specs) {
    auto dot = name.find('.');
    if (dot != std::string::npos && name.substr(dot + 1) == "attn_bias") {
      int layer = std::stoi(name.substr(5, dot - 5));  // "layerN"
      if (layer < 0 || layer >= cfg.layers)
        throw std::runtime_error("checkpoint: attn_bias for out-of-range layer");
      model.layers[layer].attn_bias = Tensor::zeros(shape);
    }
  }

  auto tensors = named_tensors(model);
  if (tensors.size() != tensor_specs.size())
    throw std::runtime_error("checkpoint: tensor count does not match the config");
  for (std::size_t i = 0; i < tensors.size(); ++i) {
    if (tensors[i].first != tensor_specs[i].first)
      throw std::runtime_error("checkpoint: unexpected tensor '" + tensor_specs[i].first +
                               "' (wanted '" + tensors[i].first + "')");
    if (tensors[i].second.shape() != tensor_specs[i].second)
      throw std::runtime_error("checkpoint: shape mismatch for " + tensor_specs[i].first);
  }

  fs::path blob_path = fs::path(dir) / "weights.bin";
  std::ifstream blob(blob_path, std::ios::binary);
  if (!blob) throw std::runtime_error("checkpoint: cannot open " + blob_path.string());
  std::size_t total = 0;
  for (const auto& [name, t] : tensors) {
    (void)name;
    total += t.numel();
  }
  if (fs::file_size(blob_path) != total * sizeof(double))
    throw std::runtime_error("checkpoint: weights.bin size does not match the manifest");
  for (auto& [name, t] : tensors) {
    (void)name;
    Tensor handle = t;
    blob.read(reinterpret_cast<char*>(handle.values().data()),
              static_cast<std::streamsize>(handle.numel() * sizeof(double)));
    if (!blob) throw std::runtime_error("checkpoint: short read from weights.bin");
  }
  return model;
}

}  // namespace attnforge
