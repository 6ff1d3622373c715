#include "attnforge/datasets.hpp"

#include <json.hpp>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <stdexcept>

#include "attnforge/rng.hpp"

namespace attnforge {
namespace {

using nlohmann::json;

bool is_stripes(const std::string& g) { return g == "stripes"; }
bool is_checker(const std::string& g) { return g == "checker"; }
bool is_blobs(const std::string& g) { return g == "blob-count"; }

// largest stripe half-period / checker cell used by any class
int stripes_max_half(int classes) { return (classes - 1) / 2 + 1; }

void render_stripes(Tensor& img, int side, int cls, int phase) {
  int orientation = cls % 2;  // 0: value follows the row index, 1: the column
  int half = cls / 2 + 1;
  int period = 2 * half;
  for (int r = 0; r < side; ++r) {
    for (int c = 0; c < side; ++c) {
      int idx = orientation == 0 ? r : c;
      img.at(r, c) = ((idx + phase) % period) < half ? 1.0 : 0.0;
    }
  }
}

void render_checker(Tensor& img, int side, int cls, int flip) {
  int cell = cls + 1;
  for (int r = 0; r < side; ++r) {
    for (int c = 0; c < side; ++c) {
      img.at(r, c) = ((r / cell + c / cell + flip) % 2) ? 1.0 : 0.0;
    }
  }
}

void render_blobs(Tensor& img, int side, const std::vector<int>& cells) {
  int grid = side / 2;
  for (int cell : cells) {
    int r0 = 2 * (cell / grid);
    int c0 = 2 * (cell % grid);
    img.at(r0, c0) = 1.0;
    img.at(r0, c0 + 1) = 1.0;
    img.at(r0 + 1, c0) = 1.0;
    img.at(r0 + 1, c0 + 1) = 1.0;
  }
}

// one example of class cls; consumes the generator's pattern draws
Tensor draw_image(const DatasetSpec& spec, int cls, Rng& rng) {
  Tensor img = Tensor::zeros({spec.image_side, spec.image_side});
  if (is_stripes(spec.generator)) {
    int phase = static_cast<int>(rng.uniform_index(2 * (cls / 2 + 1)));
    render_stripes(img, spec.image_side, cls, phase);
  } else if (is_checker(spec.generator)) {
    int flip = static_cast<int>(rng.uniform_index(2));
    render_checker(img, spec.image_side, cls, flip);
  } else {
    int grid = spec.image_side / 2;
    std::vector<int> cells(grid * grid);
    for (int i = 0; i < grid * grid; ++i) cells[i] = i;
    rng.shuffle(cells);
    cells.resize(cls + 1);
    render_blobs(img, spec.image_side, cells);
  }
  return img;
}

DatasetSplit draw_split(const DatasetSpec& spec, int count, Rng& rng) {
  DatasetSplit split;
  split.labels.resize(count);
  for (int i = 0; i < count; ++i) split.labels[i] = i % spec.classes;
  rng.shuffle(split.labels);
  split.images.reserve(count);
  for (int i = 0; i < count; ++i) {
    split.images.push_back(draw_image(spec, split.labels[i], rng));
    double u = rng.uniform();
    if (u < spec.label_noise && spec.classes > 1) {
      int offset = 1 + static_cast<int>(rng.uniform_index(spec.classes - 1));
      split.labels[i] = (split.labels[i] + offset) % spec.classes;
    }
  }
  return split;
}

int match_count(const Tensor& img, const Tensor& candidate) {
  int hits = 0;
  for (std::size_t i = 0; i < img.numel(); ++i) {
    if (img.values()[i] == candidate.values()[i]) ++hits;
  }
  return hits;
}

void write_blob(const std::string& path, const void* bytes, std::size_t n) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("dataset: cannot open " + path + " for writing");
  out.write(static_cast<const char*>(bytes), static_cast<std::streamsize>(n));
  if (!out) throw std::runtime_error("dataset: short write to " + path);
}

std::vector<char> read_blob(const std::string& path, std::size_t expect) {
  std::ifstream in(path, std::ios::binary | std::ios::ate);
  if (!in) throw std::runtime_error("dataset: cannot open " + path);
  auto size = static_cast<std::size_t>(in.tellg());
  if (size != expect) {
    throw std::runtime_error("dataset: " + path + " has " + std::to_string(size) +
                             " bytes, expected " + std::to_string(expect));
  }
  std::vector<char> bytes(size);
  in.seekg(0);
  in.read(bytes.data(), static_cast<std::streamsize>(size));
  if (!in) throw std::runtime_error("dataset: short read from " + path);
  return bytes;
}

void write_split(const DatasetSplit& split, int side, const std::string& dir,
                 const std::string& name) {
  std::vector<double> pixels;
  pixels.reserve(split.images.size() * side * side);
  for (const Tensor& img : split.images) {
    pixels.insert(pixels.end(), img.values().begin(), img.values().end());
  }
  std::vector<std::uint32_t> labels(split.labels.begin(), split.labels.end());
  write_blob(dir + "/" + name + "_images.f64", pixels.data(), pixels.size() * sizeof(double));
  write_blob(dir + "/" + name + "_labels.u32", labels.data(),
             labels.size() * sizeof(std::uint32_t));
}

DatasetSplit load_split(const std::string& dir, const std::string& name, int count, int side) {
  auto image_bytes = read_blob(dir + "/" + name + "_images.f64",
                               static_cast<std::size_t>(count) * side * side * sizeof(double));
  auto label_bytes = read_blob(dir + "/" + name + "_labels.u32",
                               static_cast<std::size_t>(count) * sizeof(std::uint32_t));
  DatasetSplit split;
  const double* px = reinterpret_cast<const double*>(image_bytes.data());
  for (int i = 0; i < count; ++i) {
    std::vector<double> values(px + static_cast<std::size_t>(i) * side * side,
                               px + static_cast<std::size_t>(i + 1) * side * side);
    split.images.push_back(Tensor::from({side, side}, std::move(values)));
  }
  const std::uint32_t* lb = reinterpret_cast<const std::uint32_t*>(label_bytes.data());
  split.labels.assign(lb, lb + count);
  return split;
}

}  // namespace

void DatasetSpec::validate() const {
  if (!is_stripes(generator) && !is_checker(generator) && !is_blobs(generator)) {
    throw std::invalid_argument("dataset: unknown generator '" + generator + "'");
  }
  if (classes < 2) throw std::invalid_argument("dataset: classes must be >= 2");
  if (train_size < 1 || val_size < 1 || test_size < 1) {
    throw std::invalid_argument("dataset: split sizes must be >= 1");
  }
  if (!(label_noise >= 0.0 && label_noise <= 1.0)) {
    throw std::invalid_argument("dataset: label_noise must be in [0, 1]");
  }
  if (is_stripes(generator) && image_side < 2 * stripes_max_half(classes)) {
    throw std::invalid_argument("dataset: image_side too small for stripes with " +
                                std::to_string(classes) + " classes");
  }
  if (is_checker(generator) && image_side < 2 * classes) {
    throw std::invalid_argument("dataset: image_side too small for checker with " +
                                std::to_string(classes) + " classes");
  }
  if (is_blobs(generator)) {
    int grid = image_side / 2;
    if (grid * grid < classes) {
      throw std::invalid_argument("dataset: image_side too small for blob-count with " +
                                  std::to_string(classes) + " classes");
    }
  }
  if (image_side < 1) throw std::invalid_argument("dataset: image_side must be >= 1");
}

Dataset generate_dataset(const DatasetSpec& spec) {
  spec.validate();
  Dataset data;
  data.spec = spec;
  Rng rng(spec.seed);
  data.train = draw_split(spec, spec.train_size, rng);
  data.val = draw_split(spec, spec.val_size, rng);
  data.test = draw_split(spec, spec.test_size, rng);
  return data;
}

int bayes_label(const DatasetSpec& spec, const Tensor& image) {
  spec.validate();
  if (image.shape() != std::vector<int>{spec.image_side, spec.image_side}) {
    throw std::invalid_argument("dataset: image shape does not match spec");
  }
  if (is_blobs(spec.generator)) {
    double total = 0.0;
    for (std::size_t i = 0; i < image.numel(); ++i) total += image.values()[i];
    int cls = static_cast<int>(std::llround(total / 4.0)) - 1;
    if (cls < 0) cls = 0;
    if (cls >= spec.classes) cls = spec.classes - 1;
    return cls;
  }
  // template match: best agreement over every (class, nuisance) rendering
  int best_cls = 0;
  int best_hits = -1;
  Tensor candidate = Tensor::zeros({spec.image_side, spec.image_side});
  for (int cls = 0; cls < spec.classes; ++cls) {
    int variants = is_stripes(spec.generator) ? 2 * (cls / 2 + 1) : 2;
    for (int v = 0; v < variants; ++v) {
      if (is_stripes(spec.generator)) {
        render_stripes(candidate, spec.image_side, cls, v);
      } else {
        render_checker(candidate, spec.image_side, cls, v);
      }
      int hits = match_count(image, candidate);
      if (hits > best_hits) {
        best_hits = hits;
        best_cls = cls;
      }
    }
  }
  return best_cls;
}

void write_dataset(const Dataset& data, const std::string& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw std::runtime_error("dataset: cannot create directory " + dir);
  json splits;
  const std::pair<const char*, const DatasetSplit*> parts[] = {
      {"train", &data.train}, {"val", &data.val}, {"test", &data.test}};
  for (auto [name, split] : parts) {
    write_split(*split, data.spec.image_side, dir, name);
    splits[name] = {{"count", split->labels.size()},
                    {"images", std::string(name) + "_images.f64"},
                    {"labels", std::string(name) + "_labels.u32"}};
  }
  json manifest = {{"generator", data.spec.generator},
                   {"image_side", data.spec.image_side},
                   {"classes", data.spec.classes},
                   {"label_noise", data.spec.label_noise},
                   {"seed", data.spec.seed},
                   {"splits", splits}};
  std::ofstream out(dir + "/manifest.json");
  if (!out) throw std::runtime_error("dataset: cannot write manifest in " + dir);
  out << manifest.dump(2) << "\n";
  if (!out) throw std::runtime_error("dataset: short write to manifest in " + dir);
}

Dataset load_dataset(const std::string& dir) {
  std::ifstream in(dir + "/manifest.json");
  if (!in) throw std::runtime_error("dataset: cannot open manifest in " + dir);
  json manifest = json::parse(in, nullptr, false);
  if (manifest.is_discarded()) throw std::runtime_error("dataset: malformed manifest in " + dir);
  Dataset data;
  try {
    data.spec.generator = manifest.at("generator").get<std::string>();
    data.spec.image_side = manifest.at("image_side").get<int>();
    data.spec.classes = manifest.at("classes").get<int>();
    data.spec.label_noise = manifest.at("label_noise").get<double>();
    data.spec.seed = manifest.at("seed").get<std::uint64_t>();
    const json& splits = manifest.at("splits");
    data.spec.train_size = splits.at("train").at("count").get<int>();
    data.spec.val_size = splits.at("val").at("count").get<int>();
    data.spec.test_size = splits.at("test").at("count").get<int>();
  } catch (const json::exception& e) {
    throw std::runtime_error(std::string("dataset: bad manifest: ") + e.what());
  }
  data.spec.validate();
  data.train = load_split(dir, "train", data.spec.train_size, data.spec.image_side);
  data.val = load_split(dir, "val", data.spec.val_size, data.spec.image_side);
  data.test = load_split(dir, "test", data.spec.test_size, data.spec.image_side);
  return data;
}

}  // namespace attnforge
