#pragma once

#include "easyphoto/fiducial.hpp"
#include "easyphoto/geometry.hpp"
#include "easyphoto/image.hpp"

#include <atomic>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <random>
#include <string>
#include <unistd.h>

namespace easyphoto::testing {

// Scratch directory removed on destruction.
class TempDir {
 public:
  TempDir() {
    static std::atomic<int> counter{0};
    path_ = std::filesystem::temp_directory_path() /
            ("ep-test-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

inline std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline Mask random_binary_mask(std::mt19937_64& rng, Eigen::Index h, Eigen::Index w,
                               double density = 0.3) {
  std::bernoulli_distribution on(density);
  Mask m(h, w);
  for (Eigen::Index y = 0; y < h; ++y)
    for (Eigen::Index x = 0; x < w; ++x) m(y, x) = on(rng) ? 1.0f : 0.0f;
  return m;
}

// Face-shaped 5-point set: canonical layout of a 60-200 px face, jittered by 3% of the
// face size and expressed relative to its centroid.
inline LandmarkSet random_face_landmarks(std::mt19937_64& rng) {
  std::uniform_int_distribution<int> side(60, 200), pos(0, 300);
  const int s = side(rng), x0 = pos(rng), y0 = pos(rng);
  LandmarkSet p = fiducial::layout(BBox{x0, y0, x0 + s, y0 + s});
  std::normal_distribution<double> jitter(0.0, 0.03 * s);
  for (Eigen::Index i = 0; i < p.size(); ++i) p.data()[i] += jitter(rng);
  p.rowwise() -= p.colwise().mean();
  return p;
}

inline Image random_image(std::mt19937_64& rng, Eigen::Index h, Eigen::Index w) {
  std::uniform_real_distribution<float> u(0.0f, 1.0f);
  Image img(h, w);
  for (auto& ch : img.channels)
    for (Eigen::Index i = 0; i < ch.size(); ++i) ch.data()[i] = u(rng);
  return img;
}

inline float max_abs_diff(const Image& a, const Image& b) {
  float d = 0.0f;
  for (int c = 0; c < 3; ++c) d = std::max(d, (a.channels[c] - b.channels[c]).abs().maxCoeff());
  return d;
}

// Largest per-pixel channel difference restricted to pixels where `where` is false.
template <typename Pred>
float max_abs_diff_where(const Image& a, const Image& b, Pred where) {
  float d = 0.0f;
  for (Eigen::Index y = 0; y < a.height(); ++y)
    for (Eigen::Index x = 0; x < a.width(); ++x) {
      if (!where(y, x)) continue;
      for (int c = 0; c < 3; ++c) d = std::max(d, std::abs(a(y, x, c) - b(y, x, c)));
    }
  return d;
}

inline bool same_mask(const Mask& a, const Mask& b) {
  return a.rows() == b.rows() && a.cols() == b.cols() && (a == b).all();
}

// Brute-force disc morphology, used as an independent oracle.
inline Mask brute_dilate(const Mask& m, int r) {
  Mask out = Mask::Zero(m.rows(), m.cols());
  for (Eigen::Index y = 0; y < m.rows(); ++y)
    for (Eigen::Index x = 0; x < m.cols(); ++x)
      for (int dy = -r; dy <= r; ++dy)
        for (int dx = -r; dx <= r; ++dx) {
          if (dx * dx + dy * dy > r * r) continue;
          const Eigen::Index yy = y + dy, xx = x + dx;
          if (yy < 0 || xx < 0 || yy >= m.rows() || xx >= m.cols()) continue;
          if (m(yy, xx) >= 0.5f) out(y, x) = 1.0f;
        }
  return out;
}

inline Mask brute_erode(const Mask& m, int r) {
  Mask out = Mask::Ones(m.rows(), m.cols());
  for (Eigen::Index y = 0; y < m.rows(); ++y)
    for (Eigen::Index x = 0; x < m.cols(); ++x)
      for (int dy = -r; dy <= r; ++dy)
        for (int dx = -r; dx <= r; ++dx) {
          if (dx * dx + dy * dy > r * r) continue;
          const Eigen::Index yy = y + dy, xx = x + dx;
          if (yy < 0 || xx < 0 || yy >= m.rows() || xx >= m.cols()) continue;
          if (m(yy, xx) < 0.5f) out(y, x) = 0.0f;
        }
  return out;
}

inline Mask brute_ring(const Mask& m, int r_out, int r_in) {
  const Mask d = brute_dilate(m, r_out);
  const Mask e = brute_erode(m, r_in);
  return (d > 0.5f && e < 0.5f).cast<float>();
}

}  // namespace easyphoto::testing
