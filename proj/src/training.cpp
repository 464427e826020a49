#include "easyphoto/training.hpp"

#include "easyphoto/error.hpp"
#include "easyphoto/fixtures.hpp"
#include "easyphoto/image_io.hpp"
#include "easyphoto/random.hpp"

#include <json.hpp>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <thread>

namespace easyphoto {

namespace fs = std::filesystem;

void TrainingConfig::check(size_t image_count) const {
  if (stages < 1) throw Error(Errc::InvalidArgument, "stages must be >= 1");
  if (top_k < 1 || top_k > stages) {
    throw Error(Errc::InvalidArgument, "top_k must be in [1, stages]");
  }
  if (!(crop_ratio > 0.0) || !std::isfinite(crop_ratio)) {
    throw Error(Errc::InvalidArgument, "crop_ratio must be positive");
  }
  if (prompt != kFixedPrompt && !allow_prompt_override) {
    throw Error(Errc::InvalidArgument, "training prompt is fixed; set the override flag to change it");
  }
  if (user_id.empty()) throw Error(Errc::InvalidArgument, "empty user id");
  if (force) return;
  if (image_count < static_cast<size_t>(min_images)) {
    throw Error(Errc::NotEnoughImages, "at least " + std::to_string(min_images) +
                                           " images are required, got " +
                                           std::to_string(image_count));
  }
  if (image_count > static_cast<size_t>(max_images)) {
    throw Error(Errc::TooManyImages, "at most " + std::to_string(max_images) +
                                         " images are allowed, got " +
                                         std::to_string(image_count));
  }
}

BBox training_crop_window(const BBox& face, double crop_ratio, Eigen::Index height,
                          Eigen::Index width) {
  const int limit = static_cast<int>(std::min(height, width));
  const int side = std::clamp(static_cast<int>(std::lround(crop_ratio * face.height())), 1, limit);
  // Center on the bbox center, then shift (not shrink) to stay inside the image.
  int x0 = static_cast<int>(std::lround(face.center_x() - side / 2.0));
  int y0 = static_cast<int>(std::lround(face.center_y() - side / 2.0));
  x0 = std::clamp(x0, 0, static_cast<int>(width) - side);
  y0 = std::clamp(y0, 0, static_cast<int>(height) - side);
  return BBox{x0, y0, x0 + side, y0 + side};
}

PreprocessResult preprocess_training_images(const std::vector<Image>& images,
                                            const TrainingConfig& cfg,
                                            const AdapterRegistry& adapters) {
  PreprocessResult out;
  for (size_t i = 0; i < images.size(); ++i) {
    const Image& img = images[i];
    const auto faces = adapters.detector->detect(img);
    if (faces.empty()) {
      out.warnings.push_back("image " + std::to_string(i) + ": no face found, skipped");
      continue;
    }
    const auto& face = faces[largest_face(faces)];
    const Image window = crop(img, training_crop_window(face.bbox, cfg.crop_ratio, img.height(),
                                                       img.width()));
    const Mask fg = adapters.matting->matte(window);
    Image matted = window;
    for (auto& ch : matted.channels) ch = fg * ch + (1.0f - fg);
    const Image retouched = adapters.retouch->retouch(matted);
    out.images.push_back(clamp01(resize_bilinear(retouched, kProcessedSide, kProcessedSide)));
    out.source_index.push_back(i);
  }
  if (out.images.empty()) throw Error(Errc::NoFacesFound, "no training image contains a face");
  return out;
}

std::vector<LoraCheckpoint> MockTrainer::train(const std::vector<Image>& processed,
                                               const TrainingConfig& cfg) const {
  if (processed.empty()) throw Error(Errc::TrainerFailure, "no processed images");
  const std::uint64_t user_key = fnv1a64(cfg.user_id);
  auto fill = [](SplitMix64& rng, std::vector<std::int64_t> shape) {
    Tensor t;
    t.shape = std::move(shape);
    t.values.resize(t.element_count());
    for (Eigen::Index i = 0; i < t.values.size(); ++i) {
      t.values[i] = static_cast<float>(0.1 * rng.symmetric());
    }
    return t;
  };
  std::vector<LoraCheckpoint> out;
  for (int stage = 0; stage < cfg.stages; ++stage) {
    SplitMix64 rng(splitmix64(user_key ^ splitmix64(static_cast<std::uint64_t>(stage))));
    LoraCheckpoint ckpt;
    ckpt.checkpoint_id = cfg.user_id + "/stage-" + std::to_string(stage);
    ckpt.stage = stage;
    ckpt.tensors["lora.down"] = fill(rng, {16, 8});
    ckpt.tensors["lora.up"] = fill(rng, {8, 16});
    out.push_back(std::move(ckpt));
  }
  return out;
}

std::vector<LoraCheckpoint> train_lora(const std::vector<Image>& processed,
                                       const TrainingConfig& cfg, const LoraTrainer& trainer) {
  if (processed.empty()) throw Error(Errc::TrainerFailure, "no processed images");
  std::vector<LoraCheckpoint> out;
  try {
    out = trainer.train(processed, cfg);
  } catch (const Error&) {
    throw;
  } catch (const std::exception& e) {
    throw Error(Errc::TrainerFailure, trainer.id() + ": " + e.what());
  }
  if (out.size() != static_cast<size_t>(cfg.stages)) {
    throw Error(Errc::TrainerFailure, "trainer returned " + std::to_string(out.size()) +
                                          " checkpoints, expected " + std::to_string(cfg.stages));
  }
  for (size_t i = 1; i < out.size(); ++i) {
    if (out[i].stage <= out[i - 1].stage) {
      throw Error(Errc::TrainerFailure, "checkpoint stages are not increasing");
    }
  }
  return out;
}

std::vector<FaceEmbedding> reference_embeddings(const std::vector<Image>& images,
                                                const AdapterRegistry& adapters) {
  std::vector<FaceEmbedding> out;
  for (const auto& img : images) {
    try {
      const auto faces = adapters.detector->detect(img);
      if (faces.empty()) continue;
      out.push_back(adapters.embedder->embed(img, faces[largest_face(faces)].bbox));
    } catch (const Error&) {
      continue;
    }
  }
  return out;
}

namespace {

double best_similarity(const FaceEmbedding& e, const std::vector<FaceEmbedding>& refs) {
  double best = -1.0;
  for (const auto& r : refs) best = std::max(best, face_similarity(e, r));
  return std::clamp(best, -1.0, 1.0);
}

// Runs fn(i) for i in [0, n) on up to `workers` threads.
template <typename Fn>
void parallel_for(size_t n, size_t workers, Fn&& fn) {
  workers = std::clamp<size_t>(workers, 1, std::max<size_t>(n, 1));
  if (workers == 1) {
    for (size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<size_t> next{0};
  std::vector<std::thread> pool;
  for (size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&] {
      for (size_t i = next++; i < n; i = next++) fn(i);
    });
  }
  for (auto& t : pool) t.join();
}

size_t worker_count(const DiffusionBackend& backend) {
  const size_t hw = std::max(1u, std::thread::hardware_concurrency());
  const int limit = backend.max_concurrency();
  return limit > 0 ? std::min(hw, static_cast<size_t>(limit)) : hw;
}

// Lexicographic (score desc, stage asc, template asc) over every cell.
ValidationReport::Best best_cell(const ValidationReport& report) {
  ValidationReport::Best best;
  bool found = false;
  for (size_t c = 0; c < report.checkpoints.size(); ++c) {
    const auto& ck = report.checkpoints[c];
    for (size_t t = 0; t < ck.scores.size(); ++t) {
      const double s = ck.scores[t];
      const bool better = !found || s > best.score ||
                          (s == best.score && (ck.stage < best.stage ||
                                               (ck.stage == best.stage && t < best.template_index)));
      if (better) {
        best = {c, ck.stage, t, s};
        found = true;
      }
    }
  }
  return best;
}

}  // namespace

ValidationReport validate_checkpoints(const std::vector<LoraCheckpoint>& checkpoints,
                                      const TrainingConfig& cfg,
                                      const std::vector<Image>& reference_images,
                                      const AdapterRegistry& adapters,
                                      const DiffusionBackend& backend) {
  if (checkpoints.empty()) throw Error(Errc::InvalidArgument, "no checkpoints to validate");
  const auto& templates = cfg.validation_templates;
  if (templates.empty()) throw Error(Errc::InvalidArgument, "no validation templates");
  const auto refs = reference_embeddings(reference_images, adapters);
  if (refs.empty()) throw Error(Errc::NoFacesFound, "no usable reference image");

  struct TemplateInputs {
    BBox bbox;
    Mask mask;
    Image canny;
  };
  std::vector<TemplateInputs> prepared;
  for (size_t t = 0; t < templates.size(); ++t) {
    const auto faces = adapters.detector->detect(templates[t]);
    if (faces.empty()) {
      throw Error(Errc::NoFacesFound, "validation template " + std::to_string(t) + " has no face");
    }
    const auto& face = faces[largest_face(faces)];
    prepared.push_back({face.bbox,
                        calibrate_face_mask(face.landmarks, face.bbox, templates[t].height(),
                                            templates[t].width(), cfg.ear_expand_ratio),
                        canny_reference(templates[t])});
  }
  std::vector<std::shared_ptr<const MergedLora>> loras;
  for (const auto& ck : checkpoints) loras.push_back(std::make_shared<MergedLora>(as_merged(ck)));

  const size_t n_ckpt = checkpoints.size();
  const size_t n_tmpl = templates.size();
  std::vector<double> scores(n_ckpt * n_tmpl, -1.0);
  std::vector<char> failed(n_ckpt * n_tmpl, 0);
  std::vector<Image> images(n_ckpt * n_tmpl);

  parallel_for(n_ckpt * n_tmpl, worker_count(backend), [&](size_t cell) {
    const size_t c = cell / n_tmpl;
    const size_t t = cell % n_tmpl;
    InpaintRequest req;
    req.image = templates[t];
    req.mask = prepared[t].mask;
    req.prompt = cfg.prompt;
    req.controls.push_back({ControlKind::Canny, prepared[t].canny, cfg.canny_weight});
    req.lora = loras[c];
    req.denoise_strength = cfg.validation.denoise_strength;
    req.steps = cfg.validation.steps;
    req.seed = cfg.validation_seed + t;
    try {
      images[cell] = backend.inpaint(req);
      scores[cell] = best_similarity(adapters.embedder->embed(images[cell], prepared[t].bbox), refs);
    } catch (const std::exception&) {
      if (images[cell].empty()) images[cell] = templates[t];
      scores[cell] = -1.0;
      failed[cell] = 1;
    }
  });

  ValidationReport report;
  report.images.resize(n_ckpt);
  for (size_t c = 0; c < n_ckpt; ++c) {
    CheckpointScores cs;
    cs.checkpoint_id = checkpoints[c].checkpoint_id;
    cs.stage = checkpoints[c].stage;
    for (size_t t = 0; t < n_tmpl; ++t) {
      cs.scores.push_back(scores[c * n_tmpl + t]);
      cs.failed.push_back(failed[c * n_tmpl + t] != 0);
      report.images[c].push_back(std::move(images[c * n_tmpl + t]));
    }
    cs.mean = std::accumulate(cs.scores.begin(), cs.scores.end(), 0.0) /
              static_cast<double>(n_tmpl);
    report.checkpoints.push_back(std::move(cs));
  }
  report.best = best_cell(report);
  return report;
}

std::string report_json(const ValidationReport& report) {
  nlohmann::json j;
  j["v"] = 1;
  j["checkpoints"] = nlohmann::json::array();
  j["scores"] = nlohmann::json::array();
  for (const auto& ck : report.checkpoints) {
    j["checkpoints"].push_back({{"id", ck.checkpoint_id},
                                {"stage", ck.stage},
                                {"mean", ck.mean},
                                {"failed", ck.failed}});
    j["scores"].push_back(ck.scores);
  }
  j["best"] = {{"stage", report.best.stage},
               {"template", report.best.template_index},
               {"score", report.best.score}};
  return j.dump(2);
}

std::vector<double> ensemble_weights(std::vector<double> ranked_scores) {
  if (ranked_scores.empty()) throw Error(Errc::InvalidArgument, "no scores");
  double total = 0.0;
  for (auto& s : ranked_scores) {
    s = std::max(s, 1e-6);
    total += s;
  }
  // The last weight takes the remainder so the weights sum to exactly 1.
  double assigned = 0.0;
  for (size_t i = 0; i + 1 < ranked_scores.size(); ++i) {
    ranked_scores[i] /= total;
    assigned += ranked_scores[i];
  }
  ranked_scores.back() = std::max(0.0, 1.0 - assigned);
  return ranked_scores;
}

MergedLora ensemble_merge(const ValidationReport& report,
                          const std::vector<LoraCheckpoint>& checkpoints, int top_k) {
  if (top_k < 1) throw Error(Errc::InvalidArgument, "top_k must be >= 1");
  if (report.checkpoints.empty()) throw Error(Errc::EmptyReport, "empty validation report");
  std::vector<size_t> order(report.checkpoints.size());
  std::iota(order.begin(), order.end(), size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](size_t a, size_t b) {
    const auto& ca = report.checkpoints[a];
    const auto& cb = report.checkpoints[b];
    if (ca.mean != cb.mean) return ca.mean > cb.mean;
    return ca.stage < cb.stage;
  });
  order.resize(std::min(order.size(), static_cast<size_t>(top_k)));

  std::vector<LoraCheckpoint> selected;
  std::vector<double> ranked;
  for (const size_t i : order) {
    const auto& id = report.checkpoints[i].checkpoint_id;
    const auto it = std::find_if(checkpoints.begin(), checkpoints.end(),
                                 [&](const LoraCheckpoint& c) { return c.checkpoint_id == id; });
    if (it == checkpoints.end()) {
      throw Error(Errc::InvalidArgument, "report names unknown checkpoint " + id);
    }
    selected.push_back(*it);
    ranked.push_back(report.checkpoints[i].mean);
  }
  const auto weights = ensemble_weights(ranked);
  return merge_lora(selected, weights);
}

Image select_face_id_image(const ValidationReport& report) {
  if (report.empty()) throw Error(Errc::EmptyReport, "empty validation report");
  const auto best = best_cell(report);
  return report.images.at(best.checkpoint).at(best.template_index);
}

double identity_reward(const Image& generated, const std::vector<FaceEmbedding>& references,
                       const AdapterRegistry& adapters) {
  if (references.empty()) return -1.0;
  try {
    const auto faces = adapters.detector->detect(generated);
    if (faces.empty()) return -1.0;
    const auto e = adapters.embedder->embed(generated, faces[largest_face(faces)].bbox);
    return best_similarity(e, references);
  } catch (const Error&) {
    return -1.0;
  }
}

RewardFn make_identity_reward(std::vector<FaceEmbedding> references, AdapterRegistry adapters) {
  return [refs = std::move(references), adapters = std::move(adapters)](const Image& img) {
    return identity_reward(img, refs, adapters);
  };
}

const char* to_string(TrainingPhase phase) noexcept {
  switch (phase) {
    case TrainingPhase::Preprocessing: return "preprocessing";
    case TrainingPhase::Training: return "training";
    case TrainingPhase::Validating: return "validating";
    case TrainingPhase::Merging: return "merging";
  }
  return "unknown";
}

namespace {

void write_json_file(const fs::path& path, const std::string& text) {
  write_file_atomic(path, text + "\n");
}

std::string indexed_name(const char* prefix, size_t i, const char* suffix) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%s%03zu%s", prefix, i, suffix);
  return buf;
}

}  // namespace

TrainingArtifacts run_training(const std::vector<Image>& images, TrainingConfig cfg,
                               const TrainingContext& ctx, const fs::path& user_dir,
                               const TrainingProgressFn& progress) {
  auto report_phase = [&](TrainingPhase p, double f) {
    if (progress) progress(p, f);
  };
  cfg.check(images.size());
  if (cfg.validation_templates.empty()) cfg.validation_templates = fixtures::validation_templates();

  TrainingArtifacts art;
  art.user_dir = user_dir;
  for (const char* sub : {"processed", "lora", "validation", "ensemble"}) {
    fs::remove_all(user_dir / sub);
    fs::create_directories(user_dir / sub);
  }

  report_phase(TrainingPhase::Preprocessing, 0.0);
  auto pre = preprocess_training_images(images, cfg, ctx.adapters);
  art.warnings = pre.warnings;
  art.source_index = pre.source_index;
  for (size_t i = 0; i < pre.images.size(); ++i) {
    write_png(user_dir / "processed" / indexed_name("", i, ".png"), pre.images[i]);
  }

  report_phase(TrainingPhase::Training, 0.25);
  const auto checkpoints = train_lora(pre.images, cfg, *ctx.trainer);
  for (const auto& ck : checkpoints) write_checkpoint(user_dir / "lora", ck);

  report_phase(TrainingPhase::Validating, 0.5);
  const auto report =
      validate_checkpoints(checkpoints, cfg, pre.images, ctx.adapters, *ctx.backend);
  for (size_t c = 0; c < report.checkpoints.size(); ++c) {
    for (size_t t = 0; t < report.images[c].size(); ++t) {
      write_png(user_dir / "validation" /
                    ("val-" + std::to_string(report.checkpoints[c].stage) + "-" +
                     std::to_string(t) + ".png"),
                report.images[c][t]);
    }
  }
  art.report_json = user_dir / "report.json";
  write_json_file(art.report_json, report_json(report));

  report_phase(TrainingPhase::Merging, 0.85);
  const auto merged = ensemble_merge(report, checkpoints, cfg.top_k);
  write_merged(user_dir / "ensemble", merged);
  art.ensemble_dir = user_dir / "ensemble";
  art.face_id_png = user_dir / "face_id.png";
  write_png(art.face_id_png, select_face_id_image(report));
  art.best_score = report.best.score;
  return art;
}

}  // namespace easyphoto
