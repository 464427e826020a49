#include "easyphoto/adapters.hpp"
#include "easyphoto/fiducial.hpp"
#include "easyphoto/fixtures.hpp"
#include "easyphoto/image_io.hpp"

#include "../src/external_adapters.hpp"
#include "fake_models.hpp"
#include "support.hpp"

#include <gtest/gtest.h>

#include <algorithm>

namespace ep = easyphoto;
using ep::BBox;
using ep::Errc;
using ep::Image;
using ep::LandmarkSet;

namespace {

ep::FaceEmbedding unit(std::vector<double> v) {
  ep::FaceEmbedding e{Eigen::Map<Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()))};
  return e;
}

}  // namespace

TEST(DetectFaces, BlankImageHasNoFaces) {
  EXPECT_TRUE(ep::detect_faces(Image::constant(64, 64, 0.5f, 0.5f, 0.5f)).empty());
  EXPECT_TRUE(ep::detect_faces(ep::fixtures::textured_background(128, 128, 3)).empty());
}

TEST(DetectFaces, TwoFiducialsOrderedLeftToRight) {
  Image canvas = ep::fixtures::textured_background(120, 160, 1);
  // Painted right face first so that ordering cannot come from paint order.
  const auto right = ep::fiducial::paint_face(canvas, BBox{80, 20, 130, 80});
  const auto left = ep::fiducial::paint_face(canvas, BBox{10, 30, 50, 90});
  const auto faces = ep::detect_faces(canvas);
  ASSERT_EQ(faces.size(), 2u);
  EXPECT_EQ(faces[0].bbox, (BBox{10, 30, 50, 90}));
  EXPECT_EQ(faces[1].bbox, (BBox{80, 20, 130, 80}));
  EXPECT_EQ(faces[0].landmarks, left);
  EXPECT_EQ(faces[1].landmarks, right);
  for (const auto& f : faces) {
    EXPECT_GE(f.confidence, 0.0);
    EXPECT_LE(f.confidence, 1.0);
  }
}

TEST(DetectFaces, PainterDetectorRoundTripIsExactOnLandmarks) {
  std::mt19937_64 rng(21);
  std::uniform_int_distribution<int> size(30, 90), pos(0, 100);
  for (int trial = 0; trial < 40; ++trial) {
    const int w = size(rng), h = size(rng);
    const BBox box{pos(rng), pos(rng), 0, 0};
    const BBox face{box.x0, box.y0, box.x0 + w, box.y0 + h};
    Image canvas = ep::fixtures::textured_background(200, 200, static_cast<std::uint64_t>(trial));
    const auto painted = ep::fiducial::paint_face(canvas, face);
    const auto faces = ep::detect_faces(canvas);
    ASSERT_EQ(faces.size(), 1u) << trial;
    EXPECT_EQ(faces[0].landmarks, painted);
    // The box is rebuilt from rounded landmarks; an exhaustive scan of 30..300 px faces
    // bounds the per-side error at 1 px.
    const BBox b = faces[0].bbox;
    EXPECT_LE(std::max({std::abs(b.x0 - face.x0), std::abs(b.y0 - face.y0), std::abs(b.x1 - face.x1),
                        std::abs(b.y1 - face.y1)}),
              1)
        << trial;
  }
}

TEST(DetectFaces, SurvivesGrayBlend) {
  Image canvas = ep::fixtures::portrait(128, 128, BBox{30, 30, 100, 110}, 4);
  const auto want = ep::detect_faces(canvas).at(0).landmarks;
  for (int c = 0; c < 3; ++c) canvas.channels[c] = 0.6f * canvas.channels[c] + 0.4f * 0.5f;
  const auto faces = ep::detect_faces(canvas);
  ASSERT_EQ(faces.size(), 1u);
  EXPECT_EQ(faces[0].landmarks, want);
}

TEST(EmbedFace, DeterministicAndUnitNorm) {
  const Image img = ep::fixtures::single_template();
  const auto box = ep::detect_faces(img).at(0).bbox;
  const auto a = ep::embed_face(img, box);
  const auto b = ep::embed_face(img, box);
  EXPECT_EQ(a.vector, b.vector);
  EXPECT_EQ(a.vector.size(), ep::kReferenceEmbeddingDim);
  EXPECT_NEAR(a.vector.norm(), 1.0, 1e-6);
  EXPECT_NEAR(ep::face_similarity(a, b), 1.0, 1e-12);
}

TEST(EmbedFace, ConstantCropIsDegenerate) {
  try {
    ep::embed_face(Image::constant(32, 32, 0.3f, 0.3f, 0.3f), BBox{0, 0, 32, 32});
    FAIL();
  } catch (const ep::Error& e) {
    EXPECT_EQ(e.code(), Errc::DegenerateCrop);
  }
}

TEST(EmbedFace, KnownPatternsGiveCosine096) {
  // u = +-1/8 by vertical half, v = +-1/8 by horizontal half: orthonormal and zero-mean
  // on the 8x8 grid, so an 8x8 gray crop of 0.5 + 0.3 (a u + b v) embeds to a u + b v.
  auto make = [](double a, double b) {
    ep::Plane g(8, 8);
    for (int y = 0; y < 8; ++y)
      for (int x = 0; x < 8; ++x) {
        const double u = y < 4 ? 0.125 : -0.125;
        const double v = x < 4 ? 0.125 : -0.125;
        g(y, x) = static_cast<float>(0.5 + 0.3 * (a * u + b * v));
      }
    return Image::from_gray(g);
  };
  const auto e1 = ep::embed_face(make(0.6, 0.8), BBox{0, 0, 8, 8});
  const auto e2 = ep::embed_face(make(0.8, 0.6), BBox{0, 0, 8, 8});
  EXPECT_NEAR(e1.vector(0), 0.6 * 0.125 + 0.8 * 0.125, 1e-6);
  EXPECT_NEAR(ep::face_similarity(e1, e2), 0.96, 1e-6);
}

TEST(FaceSimilarity, Examples) {
  const auto a = unit({0.6, 0.8, 0, 0});
  const auto b = unit({0.8, 0.6, 0, 0});
  EXPECT_DOUBLE_EQ(ep::face_similarity(a, a), 1.0);
  EXPECT_NEAR(ep::face_similarity(a, b), 0.96, 1e-15);
  EXPECT_EQ(ep::face_similarity(unit({1, 0}), unit({0, 1})), 0.0);
  try {
    ep::face_similarity(unit({1, 0}), unit({1, 0, 0}));
    FAIL();
  } catch (const ep::Error& e) {
    EXPECT_EQ(e.code(), Errc::DimensionMismatch);
  }
}

TEST(FaceSimilarity, SymmetricAndBounded) {
  std::mt19937_64 rng(7);
  std::normal_distribution<double> n;
  for (int trial = 0; trial < 200; ++trial) {
    Eigen::VectorXd x(64), y(64);
    for (int i = 0; i < 64; ++i) {
      x(i) = n(rng);
      y(i) = n(rng);
    }
    const ep::FaceEmbedding a{x.normalized()}, b{y.normalized()};
    const double s = ep::face_similarity(a, b);
    EXPECT_EQ(s, ep::face_similarity(b, a));
    EXPECT_GE(s, -1.0);
    EXPECT_LE(s, 1.0);
    EXPECT_GE(1.0 - s, 0.0);
    EXPECT_LE(1.0 - s, 2.0);
  }
}

TEST(SaliencyMatte, UniformImageIsEmpty) {
  EXPECT_EQ(ep::saliency_matte(Image::constant(20, 20, 0.7f, 0.2f, 0.1f)).sum(), 0.0f);
}

TEST(SaliencyMatte, WhiteSquareOnBlack) {
  Image img(64, 64, 0.0f);
  ep::Mask truth = ep::Mask::Zero(64, 64);
  for (int y = 20; y < 44; ++y)
    for (int x = 16; x < 48; ++x) {
      for (int c = 0; c < 3; ++c) img(y, x, c) = 1.0f;
      truth(y, x) = 1.0f;
    }
  const auto m = ep::saliency_matte(img);
  const float inter = (m * truth).sum();
  const float uni = ((m + truth) > 0.5f).cast<float>().sum();
  EXPECT_GT(inter / uni, 0.95f);
  EXPECT_GE(m.minCoeff(), 0.0f);
  EXPECT_LE(m.maxCoeff(), 1.0f);
}

TEST(ImageAdapters, PreserveDimsAndRange) {
  std::mt19937_64 rng(8);
  for (int trial = 0; trial < 10; ++trial) {
    const auto img = ep::testing::random_image(rng, 17 + trial, 23);
    for (const auto& out : {ep::retouch_skin(img), ep::enhance_portrait(img)}) {
      EXPECT_TRUE(out.same_size(img));
      EXPECT_TRUE(ep::in_unit_range(out));
    }
    const auto m = ep::saliency_matte(img);
    EXPECT_TRUE(ep::same_size(img, m));
    EXPECT_GE(m.minCoeff(), 0.0f);
    EXPECT_LE(m.maxCoeff(), 1.0f);
  }
}

TEST(FuseFaces, SelfFusionIsIdentity) {
  const Image img = ep::fixtures::single_template();
  const auto lm = ep::detect_faces(img).at(0).landmarks;
  EXPECT_LT(ep::testing::max_abs_diff(ep::fuse_faces(img, img, lm, lm), img), 1e-6f);
}

TEST(FuseFaces, DegenerateHullPropagates) {
  const Image img = ep::fixtures::single_template();
  const auto lm = ep::detect_faces(img).at(0).landmarks;
  LandmarkSet line(5, 2);
  line << 10, 10, 20, 20, 30, 30, 40, 40, 50, 50;
  try {
    ep::fuse_faces(img, img, lm, line);
    FAIL();
  } catch (const ep::Error& e) {
    EXPECT_EQ(e.code(), Errc::DegenerateHull);
  }
}

TEST(FuseFaces, LengthMismatch) {
  const Image img = ep::fixtures::single_template();
  const auto lm = ep::detect_faces(img).at(0).landmarks;
  EXPECT_THROW(ep::fuse_faces(img, img, lm, lm.topRows(4)), ep::Error);
}

TEST(LargestFace, FirstOnTies) {
  std::vector<ep::FaceDetection> faces(3);
  faces[0].bbox = BBox{0, 0, 10, 10};
  faces[1].bbox = BBox{20, 0, 40, 20};
  faces[2].bbox = BBox{50, 0, 70, 20};
  EXPECT_EQ(ep::largest_face(faces), 1u);
}

TEST(AdapterRegistry, ConfigBindings) {
  const auto ref = ep::AdapterRegistry::from_config({});
  for (const auto& [name, id] : ref.ids()) EXPECT_EQ(id, "reference") << name;
  EXPECT_EQ(ref.ids().size(), 6u);

  const auto mixed = ep::AdapterRegistry::from_config(
      {{"adapter.detector", "external:http://127.0.0.1:9/models"}, {"adapter.fuser", "reference"}});
  EXPECT_EQ(mixed.ids().at("detector"), "external:http://127.0.0.1:9/models");
  EXPECT_EQ(mixed.ids().at("fuser"), "reference");

  try {
    ep::AdapterRegistry::from_config({{"adapter.embedder", "/usr/bin/some-binary"}});
    FAIL();
  } catch (const ep::Error& e) {
    EXPECT_EQ(e.code(), Errc::InvalidArgument);
  }
}

TEST(ExternalAdapters, MatchReferenceThroughTheWire) {
  ep::testing::FakeModelServer server;
  const auto url = server.url();
  const auto reg = ep::AdapterRegistry::from_config(
      {{"adapter.detector", url}, {"adapter.embedder", url}, {"adapter.matting", url},
       {"adapter.retouch", url}, {"adapter.enhance", url}, {"adapter.fuser", "external:" + url}});

  // Fixture images are 8-bit exact, so the PNG wire encoding is lossless for inputs.
  const Image img = ep::fixtures::single_template();
  ASSERT_TRUE(ep::quantize8(img) == img);

  const auto remote = reg.detector->detect(img);
  const auto local = ep::detect_faces(img);
  ASSERT_EQ(remote.size(), local.size());
  EXPECT_EQ(remote[0].bbox, local[0].bbox);
  EXPECT_EQ(remote[0].landmarks, local[0].landmarks);

  EXPECT_EQ(reg.embedder->embed(img, local[0].bbox).vector, ep::embed_face(img, local[0].bbox).vector);
  try {
    reg.embedder->embed(Image::constant(16, 16, 0.5f, 0.5f, 0.5f), BBox{0, 0, 16, 16});
    FAIL();
  } catch (const ep::Error& e) {
    EXPECT_EQ(e.code(), Errc::DegenerateCrop);
  }

  const auto mask = reg.matting->matte(img);
  EXPECT_TRUE((mask == ep::saliency_matte(img)).all());
  EXPECT_TRUE(reg.retouch->retouch(img) == ep::quantize8(ep::retouch_skin(img)));
  EXPECT_TRUE(reg.enhance->enhance(img) == ep::quantize8(ep::enhance_portrait(img)));
  const auto lm = local[0].landmarks;
  EXPECT_TRUE(reg.fuser->fuse(img, img, lm, lm) == ep::quantize8(ep::fuse_faces(img, img, lm, lm)));
  EXPECT_GE(server.calls(), 7);
}

TEST(ExternalAdapters, UnreachableServerIsAdapterFailure) {
  const auto det = ep::make_external_detector("http://127.0.0.1:1");
  try {
    det->detect(Image(8, 8));
    FAIL();
  } catch (const ep::Error& e) {
    EXPECT_EQ(e.code(), Errc::AdapterFailure);
  }
}
