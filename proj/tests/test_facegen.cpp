#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>

#include "facedr/core/errors.hpp"
#include "facedr/core/image_io.hpp"
#include "facedr/facegen.hpp"

using namespace facedr;
using namespace facedr::facegen;
namespace fs = std::filesystem;

namespace {

bool tensors_equal(const Tensor& a, const Tensor& b) {
  if (!a.same_shape(b)) return false;
  for (int64_t i = 0; i < a.numel(); ++i)
    if (a[i] != b[i]) return false;
  return true;
}

double mean_abs_laplacian(const Tensor& img) {
  const int64_t C = img.dim(0), H = img.dim(1), W = img.dim(2);
  double acc = 0;
  int64_t count = 0;
  for (int64_t c = 0; c < C; ++c)
    for (int64_t i = 1; i + 1 < H; ++i)
      for (int64_t j = 1; j + 1 < W; ++j) {
        const double lap = -4.0 * img.at3(c, i, j) + img.at3(c, i - 1, j) + img.at3(c, i + 1, j) +
                           img.at3(c, i, j - 1) + img.at3(c, i, j + 1);
        acc += std::abs(lap);
        ++count;
      }
  return acc / static_cast<double>(count);
}

fs::path temp_dir(const char* tag) {
  fs::path p = fs::temp_directory_path() / (std::string("facedr_test_") + tag);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

}  // namespace

TEST_CASE("sample_identity: deterministic, injective ids, bounded geometry") {
  const IdentityParams a = sample_identity(0);
  const IdentityParams b = sample_identity(0);
  CHECK(a.identity_id == b.identity_id);
  CHECK(a.geometry.head_rx == b.geometry.head_rx);
  CHECK(a.geometry.freckle_phase == b.geometry.freckle_phase);
  CHECK(a.palette.skin == b.palette.skin);

  CHECK(sample_identity(0).identity_id != sample_identity(1).identity_id);

  for (int64_t seed = 0; seed < 1000; ++seed) {
    const FaceGeometry& g = sample_identity(seed).geometry;
    CHECK(g.head_rx >= 0.20f);
    CHECK(g.head_rx <= 0.26f);
    CHECK(g.head_ry >= 0.26f);
    CHECK(g.head_ry <= 0.33f);
    CHECK(g.eye_cy >= 0.42f);
    CHECK(g.eye_cy <= 0.46f);
    CHECK(g.eye_dx >= 0.085f);
    CHECK(g.eye_dx <= 0.125f);
    CHECK(g.nose_len >= 0.09f);
    CHECK(g.nose_len <= 0.14f);
    CHECK(g.mouth_rx >= 0.055f);
    CHECK(g.mouth_rx <= 0.085f);
    // whole face (hair halo included) stays inside the frame at max pose
    const float extent = 1.10f * std::max(g.head_rx, g.head_ry) * kMaxScale + 0.03f;
    CHECK(extent < 0.5f);
  }
}

TEST_CASE("render_face: determinism and pose checks") {
  const IdentityParams id = sample_identity(3);
  const PoseParams identity_pose{0.0f, 1.0f, 0.0f, 0.0f};

  const FaceSample s1 = render_face(id, identity_pose, 1.0f, 64);
  const FaceSample s2 = render_face(id, identity_pose, 1.0f, 64);
  CHECK(tensors_equal(s1.image, s2.image));
  CHECK(tensors_equal(s1.parsing.probs, s2.parsing.probs));

  SUBCASE("pose preconditions") {
    CHECK_THROWS_AS(render_face(id, PoseParams{0.4f, 1.0f, 0, 0}, 1.0f, 64), PoseOutOfRange);
    CHECK_THROWS_AS(render_face(id, PoseParams{0.0f, 0.7f, 0, 0}, 1.0f, 64), PoseOutOfRange);
    CHECK_THROWS_AS(render_face(id, PoseParams{0.0f, 1.3f, 0, 0}, 1.0f, 64), PoseOutOfRange);
  }

  SUBCASE("rotating the pose transforms landmarks by the same affine") {
    const PoseParams rot{0.2f, 1.0f, 0.0f, 0.0f};
    const FaceSample sr = render_face(id, rot, 1.0f, 64);
    const float c = std::cos(0.2f), s = std::sin(0.2f);
    for (int i = 0; i < kNumLandmarks; ++i) {
      // affine acts in normalized coords around the center
      const float x0 = (s1.landmarks.points[i][0] + 0.5f) / 64.0f - 0.5f;
      const float y0 = (s1.landmarks.points[i][1] + 0.5f) / 64.0f - 0.5f;
      const float xr = (c * x0 - s * y0 + 0.5f) * 64.0f - 0.5f;
      const float yr = (s * x0 + c * y0 + 0.5f) * 64.0f - 0.5f;
      CHECK(std::abs(xr - sr.landmarks.points[i][0]) < 0.5f);
      CHECK(std::abs(yr - sr.landmarks.points[i][1]) < 0.5f);
    }
  }

  SUBCASE("parsing is one-hot at every pixel") {
    const auto& probs = s1.parsing.probs;
    CHECK(probs.dim(0) == kNumParseClasses);
    for (int64_t i = 0; i < 64 * 64; ++i) {
      float sum = 0;
      int ones = 0;
      for (int c = 0; c < kNumParseClasses; ++c) {
        const float v = probs[c * 64 * 64 + i];
        sum += v;
        if (v == 1.0f) ++ones;
      }
      CHECK(sum == 1.0f);
      CHECK(ones == 1);
    }
  }

  SUBCASE("image values in range") {
    for (int64_t i = 0; i < s1.image.numel(); ++i) {
      CHECK(s1.image[i] >= 0.0f);
      CHECK(s1.image[i] <= 1.0f);
    }
  }
}

TEST_CASE("landmark / parsing ground-truth consistency") {
  // every landmark pixel is non-background; component landmarks fall inside
  // their component region dilated by 2 px
  for (int64_t seed : {0, 5, 11, 23}) {
    const IdentityParams id = sample_identity(seed);
    Rng rng(seed * 7 + 1);
    PoseParams pose;
    pose.rotation = static_cast<float>(rng.uniform(-0.3, 0.3));
    pose.scale = static_cast<float>(rng.uniform(0.85, 1.2));
    pose.tx = static_cast<float>(rng.uniform(-0.02, 0.02));
    pose.ty = static_cast<float>(rng.uniform(-0.02, 0.02));
    const FaceSample s = render_face(id, pose, 1.0f, 64);
    const auto labels = s.parsing.argmax_labels();

    for (int i = 0; i < kNumLandmarks; ++i) {
      const auto& p = s.landmarks.points[i];
      CHECK(p[0] >= 0.0f);
      CHECK(p[0] <= 63.0f);
      CHECK(p[1] >= 0.0f);
      CHECK(p[1] <= 63.0f);
      const int64_t x = std::llround(p[0]), y = std::llround(p[1]);

      CHECK(labels[static_cast<size_t>(y * 64 + x)] != kBackground);

      const auto expected = landmark_component_classes(i);
      if (expected.empty()) continue;
      bool found = false;
      for (int64_t dy = -2; dy <= 2 && !found; ++dy)
        for (int64_t dx = -2; dx <= 2 && !found; ++dx) {
          const int64_t yy = std::clamp<int64_t>(y + dy, 0, 63);
          const int64_t xx = std::clamp<int64_t>(x + dx, 0, 63);
          const uint8_t l = labels[static_cast<size_t>(yy * 64 + xx)];
          for (uint8_t e : expected) found = found || (l == e);
        }
      CHECK_MESSAGE(found, "landmark ", i, " seed ", seed);
    }
  }
}

TEST_CASE("sample_reflection: determinism, blur ordering, range") {
  const Tensor a = sample_reflection(9, 32, 48, 2.0f);
  const Tensor b = sample_reflection(9, 32, 48, 2.0f);
  CHECK(tensors_equal(a, b));

  const Tensor sharp = sample_reflection(4, 64, 64, 0.0f);
  const Tensor smooth = sample_reflection(4, 64, 64, 4.0f);
  CHECK(mean_abs_laplacian(smooth) < mean_abs_laplacian(sharp));

  for (int64_t seed = 0; seed < 100; ++seed) {
    const Tensor r = sample_reflection(seed, 16, 16, 1.0f);
    for (int64_t i = 0; i < r.numel(); ++i) {
      CHECK(r[i] >= 0.0f);
      CHECK(r[i] <= 1.0f);
    }
  }
}

TEST_CASE("compose_mixture: identity case, hand value, occlusion limit") {
  MixtureParams mix;
  mix.alpha = 1.0f;
  mix.beta = 0.0f;
  mix.nt_mask = Tensor({4, 4});  // all zero
  Tensor b({3, 4, 4}, 0.37f);
  Tensor r({3, 4, 4}, 0.91f);
  CHECK(tensors_equal(compose_mixture(b, r, mix), b));

  mix.alpha = 0.7f;
  mix.beta = 0.3f;
  Tensor b2({3, 4, 4}, 0.5f);
  Tensor r2({3, 4, 4}, 1.0f);
  const Tensor out = compose_mixture(b2, r2, mix);
  for (int64_t i = 0; i < out.numel(); ++i) CHECK(out[i] == doctest::Approx(0.65f).epsilon(1e-6));

  // full occlusion inside the mask
  mix.nt_strength = 1.0f;
  for (int64_t i = 0; i < 8; ++i) mix.nt_mask[i] = 1.0f;
  const Tensor occ = compose_mixture(b2, r2, mix);
  for (int64_t c = 0; c < 3; ++c)
    for (int64_t i = 0; i < 8; ++i) CHECK(occ[c * 16 + i] == 1.0f);

  SUBCASE("shape mismatch throws") {
    Tensor bad({3, 4, 5}, 0.1f);
    CHECK_THROWS_AS(compose_mixture(b2, bad, mix), ShapeMismatch);
  }

  SUBCASE("linearity before clipping") {
    MixtureParams lin;
    lin.alpha = 0.6f;
    lin.beta = 0.4f;
    lin.nt_mask = Tensor({4, 4});
    Rng rng(5);
    Tensor x1({3, 4, 4}), x2({3, 4, 4}), r0({3, 4, 4});
    for (int64_t i = 0; i < x1.numel(); ++i) {
      x1[i] = static_cast<float>(rng.uniform());
      x2[i] = static_cast<float>(rng.uniform());
      r0[i] = static_cast<float>(rng.uniform());
    }
    Tensor sum({3, 4, 4});
    for (int64_t i = 0; i < sum.numel(); ++i) sum[i] = 2.0f * x1[i] + 3.0f * x2[i];
    const Tensor lhs = compose_mixture_raw(sum, r0, lin);
    const Tensor a1 = compose_mixture_raw(x1, r0, lin);
    const Tensor a2 = compose_mixture_raw(x2, r0, lin);
    Tensor zero({3, 4, 4}, 0.0f);
    const Tensor rpart = compose_mixture_raw(zero, r0, lin);
    for (int64_t i = 0; i < lhs.numel(); ++i)
      CHECK(lhs[i] ==
            doctest::Approx(2.0f * a1[i] + 3.0f * a2[i] - 4.0f * rpart[i]).epsilon(1e-5));
  }
}

TEST_CASE("build_pair: shared identity, independent masks, determinism") {
  SynthConfig cfg;
  cfg.image_size = 32;
  const IdentityParams id = sample_identity(12);

  const MixturePair p1 = build_pair(id, 100, cfg);
  CHECK(p1.main_truth.identity_id == p1.guided_truth.identity_id);
  CHECK(p1.main_truth.pose.rotation != p1.guided_truth.pose.rotation);

  const MixturePair p2 = build_pair(id, 100, cfg);
  CHECK(tensors_equal(p1.main_input, p2.main_input));
  CHECK(tensors_equal(p1.guided_input, p2.guided_input));

  // nt masks drawn independently: no collisions across 100 seeds
  int collisions = 0;
  for (int64_t seed = 0; seed < 100; ++seed) {
    const MixturePair p = build_pair(id, seed, cfg);
    if (tensors_equal(p.main_mix.nt_mask, p.guided_mix.nt_mask)) ++collisions;
    float mask_sum = 0;
    for (int64_t j = 0; j < p.main_mix.nt_mask.numel(); ++j) mask_sum += p.main_mix.nt_mask[j];
    const float area_m = mask_sum / static_cast<float>(p.main_mix.nt_mask.numel());
    CHECK(area_m >= cfg.nt_area_range[0]);
    CHECK(area_m <= cfg.nt_area_range[1]);
  }
  CHECK(collisions == 0);
}

TEST_CASE("dataset round-trip, splits, and tamper detection") {
  SynthConfig cfg;
  cfg.image_size = 32;
  cfg.identities = 5;
  cfg.pairs_per_identity = 2;
  const Dataset ds = generate_dataset(cfg, 77);
  REQUIRE(ds.pairs.size() == 10);

  SUBCASE("splits are identity-disjoint and cover everything") {
    std::set<int64_t> train, val, test;
    for (int64_t id : ds.identities_for_split("train")) train.insert(id);
    for (int64_t id : ds.identities_for_split("val")) val.insert(id);
    for (int64_t id : ds.identities_for_split("test")) test.insert(id);
    CHECK(train.size() + val.size() + test.size() == 5);
    for (int64_t id : test) CHECK(train.count(id) == 0);
    for (int64_t id : val) CHECK(train.count(id) == 0);
    CHECK(!train.empty());
    CHECK(!val.empty());
    CHECK(!test.empty());
  }

  const fs::path dir = temp_dir("roundtrip");
  const Manifest manifest = write_dataset(ds, dir);
  CHECK(manifest.file_sha256.size() == 10 * 9);

  SUBCASE("regenerating gives a bit-identical manifest") {
    const Dataset ds2 = generate_dataset(cfg, 77);
    const fs::path dir2 = temp_dir("roundtrip2");
    const Manifest m2 = write_dataset(ds2, dir2);
    CHECK(m2.to_json() == manifest.to_json());
  }

  SUBCASE("read back within quantization error") {
    const Dataset rd = read_dataset(dir);
    REQUIRE(rd.pairs.size() == ds.pairs.size());
    double max_diff = 0;
    for (size_t i = 0; i < rd.pairs.size(); ++i) {
      const Tensor& a = rd.pairs[i].main_input;
      const Tensor& b = ds.pairs[i].main_input;
      for (int64_t j = 0; j < a.numel(); ++j)
        max_diff = std::max(max_diff, std::abs(static_cast<double>(a[j]) - b[j]));
      CHECK(tensors_equal(rd.pairs[i].main_truth.parsing.probs, ds.pairs[i].main_truth.parsing.probs));
      CHECK(rd.pairs[i].main_truth.identity_id == ds.pairs[i].main_truth.identity_id);
      CHECK(tensors_equal(rd.pairs[i].main_mix.nt_mask, ds.pairs[i].main_mix.nt_mask));
      for (int k = 0; k < kNumLandmarks; ++k) {
        CHECK(rd.pairs[i].main_truth.landmarks.points[k][0] ==
              doctest::Approx(ds.pairs[i].main_truth.landmarks.points[k][0]).epsilon(1e-6));
      }
    }
    CHECK(max_diff <= std::pow(2.0, -15.0));
  }

  SUBCASE("tampering with a file raises CorruptManifest") {
    {
      std::ofstream f(dir / "pairs" / "3" / "mix.json", std::ios::app);
      f << " ";
    }
    CHECK_THROWS_AS(read_dataset(dir), CorruptManifest);
  }

  SUBCASE("missing file raises MissingFile") {
    fs::remove(dir / "pairs" / "2" / "main_input.png");
    CHECK_THROWS_AS(read_dataset(dir), MissingFile);
  }

  fs::remove_all(dir);
}

TEST_CASE("png 16-bit round trip is exact at quantization resolution") {
  const fs::path dir = temp_dir("png");
  Rng rng(1);
  Tensor img({3, 20, 24});
  for (int64_t i = 0; i < img.numel(); ++i) img[i] = static_cast<float>(rng.uniform());
  io::write_png_rgb16(dir / "x.png", img);
  const Tensor back = io::read_png_rgb16(dir / "x.png");
  for (int64_t i = 0; i < img.numel(); ++i)
    CHECK(std::abs(back[i] - img[i]) <= 1.0f / 65535.0f);
  fs::remove_all(dir);
}
