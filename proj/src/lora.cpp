#include "easyphoto/lora.hpp"

#include "easyphoto/error.hpp"
#include "easyphoto/image_io.hpp"

#include <json.hpp>

#include <algorithm>
#include <bit>
#include <cmath>
#include <numeric>
#include <set>

namespace easyphoto {

namespace fs = std::filesystem;
using nlohmann::json;

std::int64_t Tensor::element_count() const {
  return std::accumulate(shape.begin(), shape.end(), std::int64_t{1}, std::multiplies<>());
}

double MergedLora::mean_value() const {
  double sum = 0.0;
  std::int64_t count = 0;
  for (const auto& [key, t] : tensors) {
    for (Eigen::Index i = 0; i < t.values.size(); ++i) sum += t.values[i];
    count += t.values.size();
  }
  return count > 0 ? sum / static_cast<double>(count) : 0.0;
}

MergedLora merge_lora(std::span<const LoraCheckpoint> checkpoints, std::span<const double> weights) {
  if (checkpoints.empty()) throw Error(Errc::InvalidArgument, "no checkpoints to merge");
  if (checkpoints.size() != weights.size()) {
    throw Error(Errc::LengthMismatch, "checkpoint and weight lists differ in length");
  }
  for (const double w : weights) {
    if (!std::isfinite(w) || w < 0.0) throw Error(Errc::InvalidArgument, "weights must be >= 0");
  }

  const LoraCheckpoint& first = checkpoints.front();
  if (first.tensors.empty()) throw Error(Errc::KeyMismatch, "checkpoint has no tensors");
  for (const auto& ckpt : checkpoints) {
    if (ckpt.tensors.size() != first.tensors.size()) {
      throw Error(Errc::KeyMismatch, ckpt.checkpoint_id + " has a different key set");
    }
    for (const auto& [key, t] : first.tensors) {
      const auto it = ckpt.tensors.find(key);
      if (it == ckpt.tensors.end()) {
        throw Error(Errc::KeyMismatch, ckpt.checkpoint_id + " lacks " + key);
      }
      if (it->second.shape != t.shape || it->second.values.size() != t.values.size()) {
        throw Error(Errc::ShapeMismatch, ckpt.checkpoint_id + ":" + key + " shape differs");
      }
    }
  }

  std::vector<size_t> order(checkpoints.size());
  std::iota(order.begin(), order.end(), size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](size_t a, size_t b) {
    return std::tie(checkpoints[a].checkpoint_id, weights[a]) <
           std::tie(checkpoints[b].checkpoint_id, weights[b]);
  });
  double total = 0.0;
  for (const size_t i : order) total += weights[i];
  if (!(total > 0.0)) throw Error(Errc::AllZeroWeights, "merge weights sum to zero");

  MergedLora merged;
  for (const auto& [key, proto] : first.tensors) {
    Eigen::ArrayXd acc = Eigen::ArrayXd::Zero(proto.values.size());
    for (const size_t i : order) {
      acc += weights[i] * checkpoints[i].tensors.at(key).values.cast<double>();
    }
    merged.tensors[key] = Tensor{proto.shape, (acc / total).cast<float>()};
  }
  for (size_t i = 0; i < checkpoints.size(); ++i) {
    merged.provenance.emplace_back(checkpoints[i].checkpoint_id, weights[i] / total);
  }
  return merged;
}

MergedLora as_merged(const LoraCheckpoint& checkpoint) {
  const double one = 1.0;
  return merge_lora(std::span(&checkpoint, 1), std::span(&one, 1));
}

std::string sanitize_key(const std::string& key) {
  std::string out = key;
  for (char& ch : out) {
    const bool ok = (ch >= 'a' && ch <= 'z') || (ch >= 'A' && ch <= 'Z') || (ch >= '0' && ch <= '9') ||
                    ch == '_' || ch == '-' || ch == '.';
    if (!ok) ch = '_';
  }
  return out;
}

namespace {

std::string encode_f32le(const Eigen::ArrayXf& values) {
  std::string bytes(static_cast<size_t>(values.size()) * 4, '\0');
  for (Eigen::Index i = 0; i < values.size(); ++i) {
    const auto bits = std::bit_cast<std::uint32_t>(values[i]);
    for (int b = 0; b < 4; ++b) {
      bytes[static_cast<size_t>(4 * i + b)] = static_cast<char>((bits >> (8 * b)) & 0xFFu);
    }
  }
  return bytes;
}

Eigen::ArrayXf decode_f32le(const std::vector<std::uint8_t>& bytes, std::int64_t count) {
  if (static_cast<std::int64_t>(bytes.size()) != 4 * count) {
    throw Error(Errc::ShapeMismatch, "tensor file size does not match its shape");
  }
  Eigen::ArrayXf values(count);
  for (std::int64_t i = 0; i < count; ++i) {
    std::uint32_t bits = 0;
    for (int b = 0; b < 4; ++b) bits |= static_cast<std::uint32_t>(bytes[static_cast<size_t>(4 * i + b)]) << (8 * b);
    values[i] = std::bit_cast<float>(bits);
  }
  return values;
}

json write_tensors(const fs::path& dir, const std::string& stem, const TensorMap& tensors) {
  json index = json::array();
  std::set<std::string> files;
  for (const auto& [key, t] : tensors) {
    const std::string file = stem + "." + sanitize_key(key) + ".f32";
    if (!files.insert(file).second) {
      throw Error(Errc::KeyMismatch, "keys collide after sanitizing: " + key);
    }
    if (t.element_count() != t.values.size()) {
      throw Error(Errc::ShapeMismatch, key + ": value count does not match shape");
    }
    write_file_atomic(dir / file, encode_f32le(t.values));
    index.push_back({{"key", key}, {"shape", t.shape}, {"file", file}});
  }
  return index;
}

TensorMap read_tensors(const fs::path& dir, const json& index) {
  TensorMap tensors;
  for (const auto& entry : index) {
    Tensor t;
    t.shape = entry.at("shape").get<std::vector<std::int64_t>>();
    t.values = decode_f32le(read_bytes(dir / entry.at("file").get<std::string>()), t.element_count());
    tensors.emplace(entry.at("key").get<std::string>(), std::move(t));
  }
  return tensors;
}

json read_json(const fs::path& path) {
  const auto bytes = read_bytes(path);
  try {
    return json::parse(bytes.begin(), bytes.end());
  } catch (const json::exception& e) {
    throw Error(Errc::IoError, path.string() + ": " + e.what());
  }
}

}  // namespace

fs::path write_checkpoint(const fs::path& dir, const LoraCheckpoint& ckpt) {
  fs::create_directories(dir);
  const std::string stem = "checkpoint-" + std::to_string(ckpt.stage);
  json meta = {{"v", 1},
               {"checkpoint_id", ckpt.checkpoint_id},
               {"stage", ckpt.stage},
               {"tensors", write_tensors(dir, stem, ckpt.tensors)}};
  const fs::path path = dir / (stem + ".json");
  write_file_atomic(path, meta.dump(2) + "\n");
  return path;
}

LoraCheckpoint read_checkpoint(const fs::path& json_path) {
  const json meta = read_json(json_path);
  try {
    LoraCheckpoint ckpt;
    ckpt.checkpoint_id = meta.at("checkpoint_id").get<std::string>();
    ckpt.stage = meta.at("stage").get<int>();
    ckpt.tensors = read_tensors(json_path.parent_path(), meta.at("tensors"));
    return ckpt;
  } catch (const json::exception& e) {
    throw Error(Errc::IoError, json_path.string() + ": " + e.what());
  }
}

std::vector<LoraCheckpoint> read_checkpoints(const fs::path& dir) {
  std::vector<LoraCheckpoint> out;
  for (const auto& entry : fs::directory_iterator(dir)) {
    const std::string name = entry.path().filename().string();
    if (name.rfind("checkpoint-", 0) == 0 && entry.path().extension() == ".json") {
      out.push_back(read_checkpoint(entry.path()));
    }
  }
  std::sort(out.begin(), out.end(), [](const auto& a, const auto& b) { return a.stage < b.stage; });
  return out;
}

fs::path write_merged(const fs::path& dir, const MergedLora& merged) {
  fs::create_directories(dir);
  json prov = json::array();
  for (const auto& [id, w] : merged.provenance) prov.push_back({{"checkpoint_id", id}, {"weight", w}});
  json meta = {{"v", 1}, {"provenance", prov}, {"tensors", write_tensors(dir, "merged", merged.tensors)}};
  const fs::path path = dir / "merged.json";
  write_file_atomic(path, meta.dump(2) + "\n");
  return path;
}

MergedLora read_merged(const fs::path& dir) {
  const json meta = read_json(dir / "merged.json");
  try {
    MergedLora merged;
    merged.tensors = read_tensors(dir, meta.at("tensors"));
    for (const auto& p : meta.at("provenance")) {
      merged.provenance.emplace_back(p.at("checkpoint_id").get<std::string>(),
                                     p.at("weight").get<double>());
    }
    return merged;
  } catch (const json::exception& e) {
    throw Error(Errc::IoError, (dir / "merged.json").string() + ": " + e.what());
  }
}

}  // namespace easyphoto
