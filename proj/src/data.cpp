#include "vsa/data.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>

#include <json.hpp>

namespace vsa {

namespace {

std::vector<float> unit_vector(size_t dim, Rng& rng) {
  std::vector<float> v(dim);
  double norm = 0.0;
  for (auto& x : v) {
    double g = rng.normal();
    x = static_cast<float>(g);
    norm += g * g;
  }
  norm = std::sqrt(std::max(norm, 1e-12));
  for (auto& x : v) x = static_cast<float>(x / norm);
  return v;
}

struct Pools {
  std::vector<std::vector<float>> signatures;
  std::vector<float> marker;
  std::vector<std::string> class_tokens;
  std::vector<std::string> distractor_tokens;
};

Dataset make_split(const SyntheticSpec& spec, const Pools& pools,
                   size_t n_samples, const std::string& id_prefix, Rng& rng) {
  Dataset d;
  d.task = spec.task;
  d.has_classes = true;
  d.signatures = pools.signatures;
  d.marker = pools.marker;
  size_t F = spec.feature_width, R = spec.regions, L = spec.caption_len;
  size_t C = spec.n_classes;
  for (size_t i = 0; i < n_samples; ++i) {
    size_t cls = i % C;  // balanced classes
    ImageFeatures img;
    img.id = id_prefix + std::to_string(i);
    img.n_regions = R;
    img.width = F;
    img.feats.resize(R * F);
    size_t needle = static_cast<size_t>(
        rng.uniform_int(0, static_cast<int64_t>(R) - 1));
    // distractor contents: other classes' signatures in shuffled order (the
    // hardest haystack -- uniform pooling mixes true and decoy classes at
    // equal weight), or norm-matched random directions
    std::vector<size_t> decoys;
    if (spec.distractors == SyntheticSpec::kSignatureDecoys) {
      for (size_t c2 = 0; c2 < C; ++c2)
        if (c2 != cls) decoys.push_back(c2);
      std::shuffle(decoys.begin(), decoys.end(), rng.engine());
    }
    size_t decoy_at = 0;
    for (size_t r = 0; r < R; ++r) {
      if (r == needle) {
        for (size_t c = 0; c < F; ++c) {
          double v = pools.signatures[cls][c] +
                     spec.noise * rng.normal() / std::sqrt(static_cast<double>(F)) +
                     spec.marker * pools.marker[c];
          img.feats[r * F + c] = static_cast<float>(v);
        }
      } else if (spec.distractors == SyntheticSpec::kSignatureDecoys) {
        size_t src = decoys[decoy_at++ % decoys.size()];
        for (size_t c = 0; c < F; ++c) {
          double v = pools.signatures[src][c] +
                     spec.noise * rng.normal() / std::sqrt(static_cast<double>(F));
          img.feats[r * F + c] =
              static_cast<float>(spec.distractor_scale * v);
        }
      } else {
        auto dir = unit_vector(F, rng);
        for (size_t c = 0; c < F; ++c)
          img.feats[r * F + c] =
              static_cast<float>(spec.distractor_scale * dir[c]);
      }
    }

    Sample s;
    s.image_index = d.images.size();
    s.class_id = static_cast<int64_t>(cls);
    size_t slot = static_cast<size_t>(
        rng.uniform_int(0, static_cast<int64_t>(L) - 1));
    s.caption_tokens.resize(L);
    for (size_t t = 0; t < L; ++t) {
      if (t == slot) {
        s.caption_tokens[t] = pools.class_tokens[cls];
      } else {
        size_t di = static_cast<size_t>(rng.uniform_int(
            0, static_cast<int64_t>(pools.distractor_tokens.size()) - 1));
        s.caption_tokens[t] = pools.distractor_tokens[di];
      }
    }
    if (spec.task == Task::kVqa) {
      s.answers.assign(10, pools.class_tokens[cls]);
      static const char* kCats[3] = {"yes/no", "number", "other"};
      s.category = kCats[cls % 3];
    }
    d.needle_position.push_back(needle);
    d.images.push_back(std::move(img));
    d.samples.push_back(std::move(s));
  }
  return d;
}

}  // namespace

SyntheticData generate_synthetic(const SyntheticSpec& spec) {
  if (spec.n_classes < 2)
    throw ConfigError("synthetic data needs at least 2 classes");
  if (spec.vocab_size < spec.n_classes + 4)
    throw ConfigError("synthetic vocab_size must exceed n_classes + 4");
  Rng rng(spec.seed, RngStream::kDataGen);
  Pools pools;
  pools.signatures.reserve(spec.n_classes);
  for (size_t c = 0; c < spec.n_classes; ++c)
    pools.signatures.push_back(unit_vector(spec.feature_width, rng));
  pools.marker = unit_vector(spec.feature_width, rng);
  for (size_t c = 0; c < spec.n_classes; ++c)
    pools.class_tokens.push_back("sig" + std::to_string(c));
  size_t n_distractors = spec.vocab_size - spec.n_classes - 2;
  for (size_t i = 0; i < n_distractors; ++i)
    pools.distractor_tokens.push_back("w" + std::to_string(i));

  SyntheticData out;
  out.train = make_split(spec, pools, spec.n_train, "train", rng);
  out.test = make_split(spec, pools, spec.n_test, "test", rng);
  return out;
}

namespace {

void write_u32(std::ostream& os, uint32_t v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(v));
}

uint32_t read_u32(std::istream& is, const std::string& what) {
  uint32_t v = 0;
  is.read(reinterpret_cast<char*>(&v), sizeof(v));
  if (!is) throw ParseError("region file: truncated " + what);
  return v;
}

}  // namespace

void write_region_file(const std::string& path,
                       const std::vector<ImageFeatures>& images) {
  static_assert(std::endian::native == std::endian::little,
                "region files are little-endian");
  std::ofstream os(path, std::ios::binary);
  if (!os) throw ConfigError("cannot write region file: " + path);
  for (const auto& img : images) {
    write_u32(os, static_cast<uint32_t>(img.id.size()));
    os.write(img.id.data(), static_cast<std::streamsize>(img.id.size()));
    write_u32(os, static_cast<uint32_t>(img.n_regions));
    write_u32(os, static_cast<uint32_t>(img.width));
    os.write(reinterpret_cast<const char*>(img.feats.data()),
             static_cast<std::streamsize>(img.feats.size() * sizeof(float)));
  }
}

std::vector<ImageFeatures> read_region_file(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw ConfigError("cannot open region file: " + path);
  std::vector<ImageFeatures> images;
  while (true) {
    uint32_t id_len = 0;
    is.read(reinterpret_cast<char*>(&id_len), sizeof(id_len));
    if (is.eof()) break;
    if (!is) throw ParseError("region file: truncated record header");
    ImageFeatures img;
    img.id.resize(id_len);
    is.read(img.id.data(), id_len);
    if (!is) throw ParseError("region file: truncated image id");
    img.n_regions = read_u32(is, "region count");
    img.width = read_u32(is, "feature width");
    img.feats.resize(img.n_regions * img.width);
    is.read(reinterpret_cast<char*>(img.feats.data()),
            static_cast<std::streamsize>(img.feats.size() * sizeof(float)));
    if (!is) throw ParseError("region file: truncated features for image '" +
                              img.id + "'");
    images.push_back(std::move(img));
  }
  return images;
}

void write_samples_jsonl(const std::string& path, const Dataset& data) {
  std::ofstream os(path);
  if (!os) throw ConfigError("cannot write samples file: " + path);
  for (const auto& s : data.samples) {
    nlohmann::json j;
    j["image_id"] = data.images[s.image_index].id;
    std::string text;
    for (size_t t = 0; t < s.caption_tokens.size(); ++t) {
      if (t) text += ' ';
      text += s.caption_tokens[t];
    }
    if (data.task == Task::kVqa) {
      j["question"] = text;
      j["answers"] = s.answers;
      j["category"] = s.category;
    } else {
      j["caption"] = text;
    }
    if (s.class_id >= 0) j["class"] = s.class_id;
    os << j.dump() << "\n";
  }
}

void read_samples_jsonl(const std::string& path, Dataset& data) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot open samples file: " + path);
  std::map<std::string, size_t> image_index;
  for (size_t i = 0; i < data.images.size(); ++i)
    image_index[data.images[i].id] = i;
  std::string line;
  size_t line_no = 0;
  bool any_class = false;
  while (std::getline(is, line)) {
    ++line_no;
    if (line.empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw ParseError("samples file line " + std::to_string(line_no) + ": " +
                       e.what());
    }
    Sample s;
    std::string img_id = j.at("image_id").get<std::string>();
    auto it = image_index.find(img_id);
    if (it == image_index.end())
      throw ParseError("samples file line " + std::to_string(line_no) +
                       ": unknown image id '" + img_id + "'");
    s.image_index = it->second;
    std::string text = data.task == Task::kVqa
                           ? j.at("question").get<std::string>()
                           : j.at("caption").get<std::string>();
    s.caption_tokens = tokenize(text);
    if (data.task == Task::kVqa) {
      s.answers = j.at("answers").get<std::vector<std::string>>();
      s.category = j.value("category", "other");
    }
    if (j.contains("class")) {
      s.class_id = j["class"].get<int64_t>();
      any_class = true;
    }
    data.samples.push_back(std::move(s));
  }
  data.has_classes = any_class;
}

void write_dataset_dir(const std::string& dir, const SyntheticData& data) {
  std::filesystem::create_directories(dir);
  write_region_file(dir + "/regions_train.bin", data.train.images);
  write_region_file(dir + "/regions_test.bin", data.test.images);
  write_samples_jsonl(dir + "/train.jsonl", data.train);
  write_samples_jsonl(dir + "/test.jsonl", data.test);
}

SyntheticData load_dataset_dir(Task task, const std::string& dir) {
  SyntheticData out;
  out.train.task = task;
  out.test.task = task;
  out.train.images = read_region_file(dir + "/regions_train.bin");
  out.test.images = read_region_file(dir + "/regions_test.bin");
  read_samples_jsonl(dir + "/train.jsonl", out.train);
  read_samples_jsonl(dir + "/test.jsonl", out.test);
  return out;
}

std::vector<std::vector<size_t>> retrieval_ground_truth(const Dataset& data) {
  size_t n = data.samples.size();
  std::vector<std::vector<size_t>> gt(n);
  for (size_t i = 0; i < n; ++i) {
    for (size_t j = 0; j < n; ++j) {
      bool match = data.has_classes
                       ? data.samples[i].class_id == data.samples[j].class_id
                       : data.samples[i].image_index == data.samples[j].image_index;
      if (match) gt[i].push_back(j);
    }
  }
  return gt;
}

}  // namespace vsa
