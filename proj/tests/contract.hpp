#pragma once

// Inpaint contract suite, runnable against any DiffusionBackend.

#include "easyphoto/diffusion.hpp"

#include "support.hpp"

#include <optional>
#include <random>
#include <sstream>
#include <string>

namespace easyphoto::testing {

inline InpaintRequest random_request(std::mt19937_64& rng) {
  std::uniform_int_distribution<int> dim(6, 40);
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  InpaintRequest req;
  const int h = dim(rng), w = dim(rng);
  req.image = random_image(rng, h, w);
  req.mask = Mask(h, w);
  for (Eigen::Index i = 0; i < req.mask.size(); ++i) {
    req.mask.data()[i] = static_cast<float>(u01(rng));
  }
  const int n_controls = static_cast<int>(rng() % 4);
  for (int i = 0; i < n_controls; ++i) {
    ControlUnit unit;
    unit.kind = static_cast<ControlKind>(rng() % 4);
    unit.reference = random_image(rng, h, w);
    unit.weight = 2.0 * u01(rng);
    req.controls.push_back(std::move(unit));
  }
  if (rng() % 2) {
    auto lora = std::make_shared<MergedLora>();
    Tensor t;
    t.shape = {4, 2};
    t.values.resize(8);
    for (Eigen::Index k = 0; k < 8; ++k) t.values[k] = static_cast<float>(2.0 * u01(rng) - 1.0);
    lora->tensors["lora.down"] = t;
    lora->provenance = {{"ckpt", 1.0}};
    req.lora = lora;
  }
  req.denoise_strength = std::max(1e-3, u01(rng));
  req.seed = rng();
  req.steps = 1 + static_cast<int>(rng() % 30);
  req.prompt = "easyphoto_face, easyphoto, 1person";
  return req;
}

/// Returns an empty string when all `count` randomized requests honor the contract,
/// otherwise a description of the first violation.
inline std::string check_inpaint_contract(const DiffusionBackend& backend, int count,
                                          std::uint64_t seed = 2024) {
  std::mt19937_64 rng(seed);
  constexpr float kTol = 1.0f / 255.0f;
  for (int i = 0; i < count; ++i) {
    InpaintRequest req = random_request(rng);
    std::ostringstream where;
    where << "request " << i << " (" << req.image.height() << "x" << req.image.width() << "): ";

    const Image out = backend.inpaint(req);
    if (!out.same_size(req.image)) return where.str() + "size changed";
    if (!in_unit_range(out)) return where.str() + "output outside [0,1]";
    const float locality = max_abs_diff_where(out, req.image, [&](Eigen::Index y, Eigen::Index x) {
      return req.mask(y, x) < 0.5f;
    });
    if (locality > kTol) return where.str() + "unmasked pixel moved by " + std::to_string(locality);
    if (!(backend.inpaint(req) == out)) return where.str() + "not deterministic";

    InpaintRequest empty = req;
    empty.mask.setZero();
    if (max_abs_diff(backend.inpaint(empty), req.image) > kTol) {
      return where.str() + "zero mask changed the image";
    }
  }
  return {};
}

}  // namespace easyphoto::testing
