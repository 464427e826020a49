#include "easyphoto/inference.hpp"

#include "easyphoto/error.hpp"

#include <json.hpp>

#include <chrono>
#include <cmath>

namespace easyphoto {

void GenerationOptions::check() const {
  auto strength_ok = [](const StageParams& p) {
    return p.denoise_strength > 0.0 && p.denoise_strength <= 1.0 && p.steps >= 1;
  };
  if (!strength_ok(first) || !strength_ok(second)) {
    throw Error(Errc::InvalidArgument, "denoise strength must be in (0,1] and steps >= 1");
  }
  for (const double w : {weights.canny, weights.color, weights.openpose, weights.tile}) {
    if (!(w >= 0.0 && w <= 2.0)) throw Error(Errc::InvalidArgument, "control weight outside [0,2]");
  }
  if (!(ear_expand_ratio >= 0.0 && ear_expand_ratio <= 1.0)) {
    throw Error(Errc::InvalidArgument, "ear_expand_ratio outside [0,1]");
  }
  if (ring_outer < 1 || ring_inner < 0) throw Error(Errc::InvalidArgument, "bad ring radii");
}

std::string options_to_json(const GenerationOptions& opts) {
  nlohmann::json j{{"seed", opts.seed},
                   {"mouth_refine", opts.mouth_refine},
                   {"ear_expand_ratio", opts.ear_expand_ratio},
                   {"first_strength", opts.first.denoise_strength},
                   {"first_steps", opts.first.steps},
                   {"second_strength", opts.second.denoise_strength},
                   {"second_steps", opts.second.steps},
                   {"canny_weight", opts.weights.canny},
                   {"color_weight", opts.weights.color},
                   {"openpose_weight", opts.weights.openpose},
                   {"tile_weight", opts.weights.tile},
                   {"ring_outer", opts.ring_outer},
                   {"ring_inner", opts.ring_inner},
                   {"style", opts.style}};
  return j.dump();
}

GenerationOptions options_from_json(std::string_view text, GenerationOptions base) {
  nlohmann::json j;
  try {
    j = text.empty() ? nlohmann::json::object() : nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw Error(Errc::InvalidArgument, std::string("options are not valid JSON: ") + e.what());
  }
  if (!j.is_object()) throw Error(Errc::InvalidArgument, "options must be a JSON object");
  if (j.contains("seed") && !j["seed"].is_number_unsigned()) {
    throw Error(Errc::InvalidArgument, "seed must be a non-negative integer");
  }
  auto& o = base;
  try {
    o.seed = j.value("seed", o.seed);
    o.mouth_refine = j.value("mouth_refine", o.mouth_refine);
    o.ear_expand_ratio = j.value("ear_expand_ratio", o.ear_expand_ratio);
    o.first.denoise_strength = j.value("first_strength", o.first.denoise_strength);
    o.first.steps = j.value("first_steps", o.first.steps);
    o.second.denoise_strength = j.value("second_strength", o.second.denoise_strength);
    o.second.steps = j.value("second_steps", o.second.steps);
    o.weights.canny = j.value("canny_weight", o.weights.canny);
    o.weights.color = j.value("color_weight", o.weights.color);
    o.weights.openpose = j.value("openpose_weight", o.weights.openpose);
    o.weights.tile = j.value("tile_weight", o.weights.tile);
    o.ring_outer = j.value("ring_outer", o.ring_outer);
    o.ring_inner = j.value("ring_inner", o.ring_inner);
    o.style = j.value("style", o.style);
  } catch (const nlohmann::json::exception& e) {
    throw Error(Errc::InvalidArgument, std::string("bad option value: ") + e.what());
  }
  o.check();
  return o;
}

std::string provenance_json(const Provenance& p) {
  nlohmann::json j;
  j["v"] = 1;
  j["template"] = p.template_ref;
  j["users"] = p.user_ids;
  j["seed"] = p.seed;
  j["style"] = p.style;
  j["backend"] = p.backend_id;
  j["adapters"] = p.adapter_ids;
  j["calls"] = nlohmann::json::array();
  for (const auto& c : p.calls) {
    nlohmann::json controls = nlohmann::json::array();
    for (const auto& [kind, weight] : c.controls) {
      controls.push_back({{"kind", to_string(kind)}, {"weight", weight}});
    }
    j["calls"].push_back({{"stage", c.stage},
                          {"seed", c.seed},
                          {"denoise_strength", c.denoise_strength},
                          {"steps", c.steps},
                          {"controls", controls}});
  }
  j["timings_ms"] = p.timings_ms;
  return j.dump(2);
}

namespace {

using Clock = std::chrono::steady_clock;

double elapsed_ms(Clock::time_point since) {
  return std::chrono::duration<double, std::milli>(Clock::now() - since).count();
}

FaceDetection single_face(const Image& img, const AdapterRegistry& adapters, const char* what) {
  const auto faces = adapters.detector->detect(img);
  if (faces.empty()) throw Error(Errc::NoFacesFound, std::string("no face in ") + what);
  if (faces.size() > 1) {
    throw Error(Errc::AmbiguousFace, std::string(what) + " has " + std::to_string(faces.size()) +
                                         " faces, expected one");
  }
  return faces.front();
}

Image run_inpaint(const InpaintRequest& req, const DiffusionBackend& backend, const char* stage,
                  Provenance* provenance) {
  if (provenance) {
    DiffusionCall call{stage, req.seed, req.denoise_strength, req.steps, {}};
    for (const auto& c : req.controls) call.controls.emplace_back(c.kind, c.weight);
    provenance->calls.push_back(std::move(call));
  }
  const auto start = Clock::now();
  Image out = backend.inpaint(req);
  if (provenance) provenance->timings_ms[stage] += elapsed_ms(start);
  return out;
}

// Re-labels an error with the pipeline stage it came from.
template <typename Fn>
auto labeled(const std::string& label, Fn&& fn) -> decltype(fn()) {
  try {
    return fn();
  } catch (const Error& e) {
    throw Error(e.code(), label + ": " + e.message());
  }
}

}  // namespace

PreparedInputs prepare_inputs(const Image& template_img, const Image& face_id, const Image& roop,
                              const GenerationOptions& opts, const AdapterRegistry& adapters) {
  const auto template_faces = adapters.detector->detect(template_img);
  if (template_faces.empty()) throw Error(Errc::NoFacesFound, "no face in template");
  const auto& tface = template_faces[largest_face(template_faces)];
  const auto id_face = single_face(face_id, adapters, "face_id");
  const auto roop_face = single_face(roop, adapters, "roop");

  PreparedInputs prep;
  prep.template_landmarks = tface.landmarks;
  prep.template_bbox = tface.bbox;
  prep.roop_landmarks = roop_face.landmarks;
  prep.inpaint_mask = calibrate_face_mask(tface.landmarks, tface.bbox, template_img.height(),
                                          template_img.width(), opts.ear_expand_ratio);
  prep.M = estimate_alignment(id_face.landmarks, tface.landmarks);
  prep.replaced = paste_face(template_img, face_id, prep.M, prep.inpaint_mask);
  prep.fused = adapters.fuser->fuse(template_img, roop, roop_face.landmarks, tface.landmarks);
  return prep;
}

Image first_diffusion(const PreparedInputs& prep, std::shared_ptr<const MergedLora> lora,
                      const GenerationOptions& opts, const DiffusionBackend& backend,
                      Provenance* provenance) {
  InpaintRequest req;
  req.image = prep.fused;
  req.mask = prep.inpaint_mask;
  req.prompt = opts.prompt;
  req.negative_prompt = opts.negative_prompt;
  req.controls = {
      {ControlKind::Canny, canny_reference(prep.fused), opts.weights.canny},
      {ControlKind::Color, color_reference(prep.fused), opts.weights.color},
      {ControlKind::OpenPose,
       openpose_reference(prep.template_landmarks, prep.fused.height(), prep.fused.width()),
       opts.weights.openpose},
  };
  req.lora = std::move(lora);
  req.denoise_strength = opts.first.denoise_strength;
  req.steps = opts.first.steps;
  req.seed = opts.seed;
  req.style = opts.style;
  return run_inpaint(req, backend, "first_diffusion", provenance);
}

Mask second_stage_mask(const PreparedInputs& prep, const GenerationOptions& opts) {
  Mask ring = boundary_ring(prep.inpaint_mask, opts.ring_outer, opts.ring_inner);
  if (!opts.mouth_refine) return ring;
  return mask_union(ring, mouth_mask(prep.template_landmarks, prep.template_bbox,
                                     prep.inpaint_mask.rows(), prep.inpaint_mask.cols()));
}

Image second_diffusion(const Image& first_out, const PreparedInputs& prep, const Image& roop,
                       std::shared_ptr<const MergedLora> lora, const GenerationOptions& opts,
                       const InferenceContext& ctx, Provenance* provenance) {
  if (!first_out.same_size(prep.fused)) {
    throw Error(Errc::DimensionMismatch, "first stage output does not match the template");
  }
  const Image input2 =
      ctx.adapters.fuser->fuse(first_out, roop, prep.roop_landmarks, prep.template_landmarks);
  InpaintRequest req;
  req.image = input2;
  req.mask = second_stage_mask(prep, opts);
  req.prompt = opts.prompt;
  req.negative_prompt = opts.negative_prompt;
  req.controls = {
      {ControlKind::Canny, canny_reference(input2), opts.weights.canny},
      {ControlKind::Tile, tile_reference(input2), opts.weights.tile},
  };
  req.lora = std::move(lora);
  req.denoise_strength = opts.second.denoise_strength;
  req.steps = opts.second.steps;
  req.seed = opts.seed + 1;
  req.style = opts.style;
  return run_inpaint(req, *ctx.backend, "second_diffusion", provenance);
}

Image post_process(const Image& img, Eigen::Index template_h, Eigen::Index template_w,
                   const AdapterRegistry& adapters) {
  const Image sized = resize_bilinear(img, template_h, template_w);
  return clamp01(adapters.enhance->enhance(adapters.retouch->retouch(sized)));
}

namespace {

Provenance base_provenance(const GenerationOptions& opts, const InferenceContext& ctx) {
  Provenance p;
  p.seed = opts.seed;
  p.style = opts.style;
  p.backend_id = ctx.backend->id();
  p.adapter_ids = ctx.adapters.ids();
  return p;
}

void notify(const StageFn& on_stage, GenerationStage stage) {
  if (on_stage) on_stage(stage);
}

// prepare -> first -> second, without post_process.
Image single_identity(const Image& template_img, const UserBundle& user,
                      const GenerationOptions& opts, const InferenceContext& ctx,
                      Provenance& provenance, const std::string& label, const StageFn& on_stage) {
  notify(on_stage, GenerationStage::Preparing);
  auto start = Clock::now();
  const auto prep = labeled(label + "prepare_inputs", [&] {
    return prepare_inputs(template_img, user.face_id, user.roop, opts, ctx.adapters);
  });
  provenance.timings_ms["prepare_inputs"] += elapsed_ms(start);
  notify(on_stage, GenerationStage::FirstDiffusion);
  const Image first = labeled(label + "first_diffusion", [&] {
    return first_diffusion(prep, user.lora, opts, *ctx.backend, &provenance);
  });
  notify(on_stage, GenerationStage::SecondDiffusion);
  return labeled(label + "second_diffusion", [&] {
    return second_diffusion(first, prep, user.roop, user.lora, opts, ctx, &provenance);
  });
}

}  // namespace

PortraitResult generate_portrait(const Image& template_img, const UserBundle& user,
                                 const GenerationOptions& opts, const InferenceContext& ctx,
                                 const StageFn& on_stage) {
  opts.check();
  PortraitResult out;
  out.provenance = base_provenance(opts, ctx);
  out.provenance.user_ids = {user.user_id};
  out.raw = single_identity(template_img, user, opts, ctx, out.provenance, "", on_stage);
  notify(on_stage, GenerationStage::PostProcess);
  const auto start = Clock::now();
  out.image = post_process(out.raw, template_img.height(), template_img.width(), ctx.adapters);
  out.provenance.timings_ms["post_process"] = elapsed_ms(start);
  return out;
}

std::vector<FaceSplit> split_masks_multi(const Image& template_img, const GenerationOptions& opts,
                                         const AdapterRegistry& adapters) {
  const auto faces = adapters.detector->detect(template_img);
  if (faces.empty()) throw Error(Errc::NoFacesFound, "no face in template");
  std::vector<FaceSplit> out;
  for (const auto& f : faces) {
    out.push_back({f, template_img,
                   calibrate_face_mask(f.landmarks, f.bbox, template_img.height(),
                                       template_img.width(), opts.ear_expand_ratio)});
  }
  std::stable_sort(out.begin(), out.end(), [](const FaceSplit& a, const FaceSplit& b) {
    return a.face.bbox.center_x() < b.face.bbox.center_x();
  });
  for (size_t i = 0; i < out.size(); ++i) {
    for (size_t j = 0; j < out.size(); ++j) {
      if (i == j) continue;
      for (auto& ch : out[i].sub_image.channels) {
        ch = (out[j].mask > 0.5f).select(1.0f, ch);
      }
    }
  }
  return out;
}

PortraitResult generate(const Image& template_img, const std::vector<UserBundle>& users,
                        const GenerationOptions& opts, const InferenceContext& ctx,
                        const StageFn& on_stage) {
  const size_t faces = ctx.adapters.detector->detect(template_img).size();
  if (faces == 0) throw Error(Errc::NoFacesFound, "no face in template");
  if (faces != users.size()) {
    throw Error(Errc::UserCountMismatch, "template has " + std::to_string(faces) + " faces but " +
                                             std::to_string(users.size()) + " users were given");
  }
  if (faces == 1) return generate_portrait(template_img, users.front(), opts, ctx, on_stage);
  return generate_group(template_img, users, opts, ctx, on_stage);
}

Mask group_seam_mask(const std::vector<FaceSplit>& splits, const GenerationOptions& opts) {
  Mask seams = Mask::Zero(splits.front().mask.rows(), splits.front().mask.cols());
  for (const auto& s : splits) {
    seams = mask_union(seams, boundary_ring(s.mask, opts.ring_outer, opts.ring_inner));
  }
  return seams;
}

PortraitResult generate_group(const Image& template_img, const std::vector<UserBundle>& users,
                              const GenerationOptions& opts, const InferenceContext& ctx,
                              const StageFn& on_stage) {
  opts.check();
  const auto splits = split_masks_multi(template_img, opts, ctx.adapters);
  if (splits.size() != users.size()) {
    throw Error(Errc::UserCountMismatch, "template has " + std::to_string(splits.size()) +
                                             " faces but " + std::to_string(users.size()) +
                                             " users were given");
  }
  PortraitResult out;
  out.provenance = base_provenance(opts, ctx);
  Image composite = template_img;
  for (size_t i = 0; i < splits.size(); ++i) {
    out.provenance.user_ids.push_back(users[i].user_id);
    GenerationOptions face_opts = opts;
    face_opts.seed = opts.seed + 2 * i;
    const Image face_out = single_identity(splits[i].sub_image, users[i], face_opts, ctx,
                                           out.provenance, "face " + std::to_string(i) + ": ",
                                           on_stage);
    const auto inside = splits[i].mask > 0.5f;
    for (int c = 0; c < 3; ++c) {
      composite.channels[c] = inside.select(face_out.channels[c], composite.channels[c]);
    }
  }

  notify(on_stage, GenerationStage::Merging);
  InpaintRequest req;
  req.image = composite;
  req.mask = group_seam_mask(splits, opts);
  req.prompt = opts.prompt;
  req.negative_prompt = opts.negative_prompt;
  req.controls = {{ControlKind::Canny, canny_reference(composite), opts.weights.canny}};
  req.denoise_strength = opts.second.denoise_strength;
  req.steps = opts.second.steps;
  req.seed = opts.seed + opts.merge_seed_offset;
  req.style = opts.style;
  out.raw = labeled("merge", [&] { return run_inpaint(req, *ctx.backend, "merge", &out.provenance); });
  notify(on_stage, GenerationStage::PostProcess);
  const auto start = Clock::now();
  out.image = post_process(out.raw, template_img.height(), template_img.width(), ctx.adapters);
  out.provenance.timings_ms["post_process"] = elapsed_ms(start);
  return out;
}

}  // namespace easyphoto
