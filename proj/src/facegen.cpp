#include "facedr/facegen.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <json.hpp>
#include <sstream>

#include "facedr/core/errors.hpp"
#include "facedr/core/image_io.hpp"

namespace facedr::facegen {

using nlohmann::json;

const char* parse_class_name(int c) {
  static const char* names[] = {"background", "skin",      "left_brow", "right_brow",
                                "left_eye",   "right_eye", "nose",      "upper_lip",
                                "lower_lip",  "teeth",     "hair"};
  return names[c];
}

// ---------------------------------------------------------------------------
// identity sampling
// ---------------------------------------------------------------------------

namespace {

std::array<float, 3> jitter3(Rng& rng, std::array<float, 3> base, float amount) {
  for (auto& v : base)
    v = std::clamp(v + static_cast<float>(rng.uniform(-amount, amount)), 0.02f, 1.0f);
  return base;
}

struct Affine {
  // face frame -> image frame: p = c + t + s * R(r) * (q - c)
  float cosr, sinr, s, tx, ty;

  static Affine from_pose(const PoseParams& pose) {
    return {std::cos(pose.rotation), std::sin(pose.rotation), pose.scale, pose.tx, pose.ty};
  }
  std::array<float, 2> apply(float qx, float qy) const {
    const float dx = qx - 0.5f, dy = qy - 0.5f;
    return {0.5f + tx + s * (cosr * dx - sinr * dy), 0.5f + ty + s * (sinr * dx + cosr * dy)};
  }
  std::array<float, 2> invert(float px, float py) const {
    const float dx = (px - 0.5f - tx) / s, dy = (py - 0.5f - ty) / s;
    return {0.5f + cosr * dx + sinr * dy, 0.5f - sinr * dx + cosr * dy};
  }
};

inline bool in_ellipse(float x, float y, float cx, float cy, float rx, float ry) {
  const float dx = (x - cx) / rx, dy = (y - cy) / ry;
  return dx * dx + dy * dy <= 1.0f;
}

}  // namespace

IdentityParams sample_identity(int64_t seed) {
  Rng rng(hash_combine(0xFACE0001ull, static_cast<uint64_t>(seed)));
  IdentityParams id;
  id.identity_id = seed;

  FaceGeometry& g = id.geometry;
  g.head_rx = static_cast<float>(rng.uniform(0.20, 0.26));
  g.head_ry = static_cast<float>(rng.uniform(0.26, 0.33));
  g.eye_cy = static_cast<float>(rng.uniform(0.42, 0.46));
  g.eye_dx = static_cast<float>(rng.uniform(0.085, 0.125));
  g.eye_rx = static_cast<float>(rng.uniform(0.028, 0.042));
  g.eye_ry = static_cast<float>(rng.uniform(0.018, 0.028));
  g.iris_r = static_cast<float>(rng.uniform(0.008, 0.014));
  g.brow_dy = static_cast<float>(rng.uniform(0.038, 0.060));
  g.brow_len = static_cast<float>(rng.uniform(0.050, 0.080));
  g.brow_thick = static_cast<float>(rng.uniform(0.010, 0.018));
  g.brow_tilt = static_cast<float>(rng.uniform(-0.15, 0.25));
  g.nose_len = static_cast<float>(rng.uniform(0.09, 0.14));
  g.nose_w = static_cast<float>(rng.uniform(0.025, 0.045));
  g.mouth_dy = static_cast<float>(rng.uniform(0.045, 0.070));
  g.mouth_rx = static_cast<float>(rng.uniform(0.055, 0.085));
  g.mouth_ry = static_cast<float>(rng.uniform(0.026, 0.040));
  g.mouth_open = static_cast<float>(rng.uniform(0.35, 0.55));
  g.hairline_y = static_cast<float>(rng.uniform(0.30, 0.40));
  g.freckle_fx = static_cast<float>(rng.uniform(25.0, 70.0));
  g.freckle_fy = static_cast<float>(rng.uniform(25.0, 70.0));
  g.freckle_phase = static_cast<float>(rng.uniform(0.0, 6.28318));
  g.freckle_amp = static_cast<float>(rng.uniform(0.01, 0.03));

  Palette& p = id.palette;
  const float tone = static_cast<float>(rng.uniform(0.45, 1.0));
  p.skin = jitter3(rng, {0.98f * tone, 0.84f * tone, 0.72f * tone}, 0.04f);
  const int hair_kind = static_cast<int>(rng.randint(4));
  const std::array<std::array<float, 3>, 4> hair_bases{{{0.12f, 0.10f, 0.08f},
                                                        {0.35f, 0.22f, 0.12f},
                                                        {0.70f, 0.58f, 0.30f},
                                                        {0.45f, 0.42f, 0.40f}}};
  p.hair = jitter3(rng, hair_bases[static_cast<size_t>(hair_kind)], 0.05f);
  p.brow = {p.hair[0] * 0.8f, p.hair[1] * 0.8f, p.hair[2] * 0.8f};
  p.sclera = jitter3(rng, {0.93f, 0.93f, 0.90f}, 0.02f);
  const int iris_kind = static_cast<int>(rng.randint(4));
  const std::array<std::array<float, 3>, 4> iris_bases{{{0.35f, 0.20f, 0.10f},
                                                        {0.28f, 0.45f, 0.65f},
                                                        {0.30f, 0.50f, 0.30f},
                                                        {0.45f, 0.45f, 0.52f}}};
  p.iris = jitter3(rng, iris_bases[static_cast<size_t>(iris_kind)], 0.05f);
  p.lip = jitter3(rng, {0.66f, 0.28f, 0.30f}, 0.06f);
  p.teeth = jitter3(rng, {0.92f, 0.90f, 0.86f}, 0.02f);
  p.background = jitter3(rng, {0.25f, 0.28f, 0.33f}, 0.08f);
  return id;
}

// ---------------------------------------------------------------------------
// geometry classification and landmarks (face frame)
// ---------------------------------------------------------------------------

namespace {

uint8_t classify_point(const FaceGeometry& g, float x, float y) {
  const float cx = 0.5f;
  const float browy = g.eye_cy - g.brow_dy;
  // brows: tilted bands, tilt mirrored between sides
  for (int side = 0; side < 2; ++side) {
    const float bx = side == 0 ? cx - g.eye_dx : cx + g.eye_dx;
    const float dx = x - bx;
    if (std::abs(dx) <= g.brow_len) {
      const float tilt = side == 0 ? -g.brow_tilt : g.brow_tilt;
      if (std::abs((y - browy) - tilt * dx) <= g.brow_thick)
        return side == 0 ? kLeftBrow : kRightBrow;
    }
  }
  // eyes
  if (in_ellipse(x, y, cx - g.eye_dx, g.eye_cy, g.eye_rx, g.eye_ry)) return kLeftEye;
  if (in_ellipse(x, y, cx + g.eye_dx, g.eye_cy, g.eye_rx, g.eye_ry)) return kRightEye;
  // nose: triangle widening from the bridge to the tip
  const float bridge_top = g.eye_cy + 0.015f;
  const float tip = g.eye_cy + g.nose_len;
  if (y >= bridge_top && y <= tip) {
    const float half_w = g.nose_w * (y - bridge_top) / (tip - bridge_top);
    if (std::abs(x - cx) <= half_w) return kNose;
  }
  // mouth
  const float mouth_cy = g.eye_cy + g.nose_len + g.mouth_dy;
  const float ry_in = g.mouth_ry * g.mouth_open;
  const float rx_in = g.mouth_rx * 0.62f;
  if (in_ellipse(x, y, cx, mouth_cy, rx_in, ry_in)) return kTeeth;
  if (in_ellipse(x, y, cx, mouth_cy, g.mouth_rx, g.mouth_ry))
    return y <= mouth_cy ? kUpperLip : kLowerLip;
  // head / hair
  if (in_ellipse(x, y, cx, 0.5f, g.head_rx, g.head_ry))
    return y < g.hairline_y ? kHair : kSkin;
  if (y < 0.5f && in_ellipse(x, y, cx, 0.5f, g.head_rx * 1.10f, g.head_ry * 1.10f)) return kHair;
  return kBackground;
}

std::vector<std::array<float, 2>> landmarks_face_frame(const FaceGeometry& g) {
  std::vector<std::array<float, 2>> pts;
  pts.reserve(kNumLandmarks);
  const float cx = 0.5f, cy = 0.5f;

  // 0-16 jaw: head ellipse from left ear over the chin to the right ear
  for (int i = 0; i < 17; ++i) {
    const float theta = static_cast<float>(M_PI) * (1.0f - static_cast<float>(i) / 16.0f);
    pts.push_back({cx + 0.94f * g.head_rx * std::cos(theta),
                   cy + 0.94f * g.head_ry * std::sin(theta)});
  }
  // 17-26 brows, 5 each, along the band center
  const float browy = g.eye_cy - g.brow_dy;
  for (int side = 0; side < 2; ++side) {
    const float bx = side == 0 ? cx - g.eye_dx : cx + g.eye_dx;
    const float tilt = side == 0 ? -g.brow_tilt : g.brow_tilt;
    for (int i = 0; i < 5; ++i) {
      const float dx = 0.9f * g.brow_len * (static_cast<float>(i) / 2.0f - 1.0f);
      pts.push_back({bx + dx, browy + tilt * dx});
    }
  }
  // 27-30 nose bridge
  const float bridge_top = g.eye_cy + 0.015f;
  const float tip = g.eye_cy + g.nose_len;
  for (int i = 0; i < 4; ++i) {
    const float t = static_cast<float>(i) / 3.0f;
    pts.push_back({cx, bridge_top + 0.02f + t * (tip - bridge_top - 0.035f)});
  }
  // 31-35 nose base
  for (int i = 0; i < 5; ++i) {
    const float fx = (static_cast<float>(i) / 2.0f - 1.0f) * 0.8f;
    pts.push_back({cx + fx * g.nose_w, tip - 0.006f});
  }
  // 36-47 eyes, 6 each
  for (int side = 0; side < 2; ++side) {
    const float ex = side == 0 ? cx - g.eye_dx : cx + g.eye_dx;
    const float angles[6] = {180.0f, 120.0f, 60.0f, 0.0f, -60.0f, -120.0f};
    for (float adeg : angles) {
      const float a = adeg * static_cast<float>(M_PI) / 180.0f;
      pts.push_back({ex + 0.85f * g.eye_rx * std::cos(a), g.eye_cy - 0.85f * g.eye_ry * std::sin(a)});
    }
  }
  // 48-59 outer lip ring, 60-67 inner ring
  const float mouth_cy = g.eye_cy + g.nose_len + g.mouth_dy;
  for (int i = 0; i < 12; ++i) {
    const float a = static_cast<float>(M_PI) - static_cast<float>(i) * static_cast<float>(M_PI) / 6.0f;
    pts.push_back({cx + 0.92f * g.mouth_rx * std::cos(a), mouth_cy - 0.92f * g.mouth_ry * std::sin(a)});
  }
  const float rx_in = g.mouth_rx * 0.62f, ry_in = g.mouth_ry * g.mouth_open;
  for (int i = 0; i < 8; ++i) {
    const float a = static_cast<float>(M_PI) - static_cast<float>(i) * static_cast<float>(M_PI) / 4.0f;
    pts.push_back({cx + rx_in * std::cos(a), mouth_cy - ry_in * std::sin(a)});
  }
  return pts;
}

std::array<float, 3> color_for_class(const IdentityParams& id, uint8_t cls, float qx, float qy,
                                     float illum) {
  const FaceGeometry& g = id.geometry;
  const Palette& p = id.palette;
  std::array<float, 3> c;
  switch (cls) {
    case kSkin: c = p.skin; break;
    case kHair: c = p.hair; break;
    case kLeftBrow:
    case kRightBrow: c = p.brow; break;
    case kLeftEye:
    case kRightEye: {
      const float ex = cls == kLeftEye ? 0.5f - g.eye_dx : 0.5f + g.eye_dx;
      const float dx = qx - ex, dy = qy - g.eye_cy;
      c = (dx * dx + dy * dy <= g.iris_r * g.iris_r) ? p.iris : p.sclera;
      break;
    }
    case kNose:
      c = {p.skin[0] * 0.93f, p.skin[1] * 0.93f, p.skin[2] * 0.93f};
      break;
    case kUpperLip: c = p.lip; break;
    case kLowerLip:
      c = {std::min(1.0f, p.lip[0] * 1.12f), std::min(1.0f, p.lip[1] * 1.12f),
           std::min(1.0f, p.lip[2] * 1.12f)};
      break;
    case kTeeth: c = p.teeth; break;
    default: c = p.background; break;
  }
  float shade = illum * (1.05f - 0.15f * qy);
  if (cls == kSkin || cls == kNose) {
    shade *= 1.0f + g.freckle_amp * std::sin(g.freckle_fx * qx + g.freckle_phase) *
                        std::sin(g.freckle_fy * qy + 1.7f * g.freckle_phase);
  }
  if (cls == kBackground) shade = illum * (0.9f + 0.2f * qy);
  for (auto& v : c) v = std::clamp(v * shade, 0.0f, 1.0f);
  return c;
}

}  // namespace

std::vector<uint8_t> ParsingMap::argmax_labels() const {
  const int64_t H = probs.dim(1), W = probs.dim(2);
  std::vector<uint8_t> out(static_cast<size_t>(H * W));
  for (int64_t i = 0; i < H * W; ++i) {
    int best = 0;
    float bv = probs[i];
    for (int c = 1; c < kNumParseClasses; ++c) {
      const float v = probs[c * H * W + i];
      if (v > bv) {
        bv = v;
        best = c;
      }
    }
    out[static_cast<size_t>(i)] = static_cast<uint8_t>(best);
  }
  return out;
}

ParsingMap ParsingMap::from_labels(const std::vector<uint8_t>& labels, int64_t h, int64_t w) {
  ParsingMap m;
  m.probs = Tensor({kNumParseClasses, h, w});
  for (int64_t i = 0; i < h * w; ++i)
    m.probs[labels[static_cast<size_t>(i)] * h * w + i] = 1.0f;
  return m;
}

FaceSample render_face(const IdentityParams& id, const PoseParams& pose, float illum,
                       int64_t image_size) {
  if (std::abs(pose.rotation) > kMaxRotation || pose.scale < kMinScale || pose.scale > kMaxScale)
    throw PoseOutOfRange("rotation=" + std::to_string(pose.rotation) +
                         " scale=" + std::to_string(pose.scale));
  const int64_t S = image_size;
  const Affine aff = Affine::from_pose(pose);

  FaceSample out;
  out.identity_id = id.identity_id;
  out.pose = pose;
  out.illum = illum;
  out.image = Tensor({3, S, S});
  out.parsing.probs = Tensor({kNumParseClasses, S, S});

  for (int64_t i = 0; i < S; ++i) {
    for (int64_t j = 0; j < S; ++j) {
      const float px = (static_cast<float>(j) + 0.5f) / static_cast<float>(S);
      const float py = (static_cast<float>(i) + 0.5f) / static_cast<float>(S);
      const auto q = aff.invert(px, py);
      const uint8_t cls = classify_point(id.geometry, q[0], q[1]);
      const auto rgb = color_for_class(id, cls, q[0], q[1], illum);
      for (int64_t c = 0; c < 3; ++c) out.image.at3(c, i, j) = rgb[static_cast<size_t>(c)];
      out.parsing.probs.at3(cls, i, j) = 1.0f;  // one-hot at render time
    }
  }

  const auto face_pts = landmarks_face_frame(id.geometry);
  out.landmarks.points.reserve(kNumLandmarks);
  for (const auto& q : face_pts) {
    const auto p = aff.apply(q[0], q[1]);
    out.landmarks.points.push_back({p[0] * static_cast<float>(S) - 0.5f,
                                    p[1] * static_cast<float>(S) - 0.5f});
  }
  return out;
}

// ---------------------------------------------------------------------------
// reflections and masks
// ---------------------------------------------------------------------------

namespace {

// bilinear upscale of a [h,w] grid to [H,W]
void upscale_bilinear(const std::vector<float>& src, int64_t h, int64_t w, float* dst, int64_t H,
                      int64_t W) {
  for (int64_t i = 0; i < H; ++i) {
    const float fy = (static_cast<float>(i) + 0.5f) * static_cast<float>(h) / static_cast<float>(H) - 0.5f;
    const int64_t y0 = std::clamp<int64_t>(static_cast<int64_t>(std::floor(fy)), 0, h - 1);
    const int64_t y1 = std::min<int64_t>(y0 + 1, h - 1);
    const float ty = std::clamp(fy - static_cast<float>(y0), 0.0f, 1.0f);
    for (int64_t j = 0; j < W; ++j) {
      const float fx = (static_cast<float>(j) + 0.5f) * static_cast<float>(w) / static_cast<float>(W) - 0.5f;
      const int64_t x0 = std::clamp<int64_t>(static_cast<int64_t>(std::floor(fx)), 0, w - 1);
      const int64_t x1 = std::min<int64_t>(x0 + 1, w - 1);
      const float tx = std::clamp(fx - static_cast<float>(x0), 0.0f, 1.0f);
      const float a = src[static_cast<size_t>(y0 * w + x0)] * (1 - tx) +
                      src[static_cast<size_t>(y0 * w + x1)] * tx;
      const float b = src[static_cast<size_t>(y1 * w + x0)] * (1 - tx) +
                      src[static_cast<size_t>(y1 * w + x1)] * tx;
      dst[i * W + j] = a * (1 - ty) + b * ty;
    }
  }
}

// separable gaussian blur with reflected boundary
void gaussian_blur_inplace(float* img, int64_t H, int64_t W, float sigma) {
  if (sigma <= 0.0f) return;
  const int64_t radius = std::max<int64_t>(1, static_cast<int64_t>(std::ceil(3.0f * sigma)));
  std::vector<float> k(static_cast<size_t>(2 * radius + 1));
  float sum = 0;
  for (int64_t i = -radius; i <= radius; ++i) {
    const float v = std::exp(-0.5f * static_cast<float>(i * i) / (sigma * sigma));
    k[static_cast<size_t>(i + radius)] = v;
    sum += v;
  }
  for (auto& v : k) v /= sum;

  auto reflect = [](int64_t i, int64_t n) {
    if (i < 0) i = -i - 1;
    if (i >= n) i = 2 * n - 1 - i;
    return std::clamp<int64_t>(i, 0, n - 1);
  };
  std::vector<float> tmp(static_cast<size_t>(H * W));
  for (int64_t i = 0; i < H; ++i)
    for (int64_t j = 0; j < W; ++j) {
      float acc = 0;
      for (int64_t d = -radius; d <= radius; ++d)
        acc += k[static_cast<size_t>(d + radius)] * img[i * W + reflect(j + d, W)];
      tmp[static_cast<size_t>(i * W + j)] = acc;
    }
  for (int64_t i = 0; i < H; ++i)
    for (int64_t j = 0; j < W; ++j) {
      float acc = 0;
      for (int64_t d = -radius; d <= radius; ++d)
        acc += k[static_cast<size_t>(d + radius)] * tmp[static_cast<size_t>(reflect(i + d, H) * W + j)];
      img[i * W + j] = acc;
    }
}

}  // namespace

Tensor sample_reflection(int64_t seed, int64_t h, int64_t w, float blur_sigma) {
  if (h <= 0 || w <= 0) throw BadShape("sample_reflection: non-positive size");
  Rng rng(hash_combine(0x5EF1ull, static_cast<uint64_t>(seed)));
  Tensor out({3, h, w});
  const int64_t lh = std::max<int64_t>(2, h / 4), lw = std::max<int64_t>(2, w / 4);
  for (int64_t c = 0; c < 3; ++c) {
    std::vector<float> base(static_cast<size_t>(lh * lw));
    for (auto& v : base) v = static_cast<float>(rng.uniform());
    upscale_bilinear(base, lh, lw, out.data() + c * h * w, h, w);
    gaussian_blur_inplace(out.data() + c * h * w, h, w, blur_sigma);
  }
  return out;
}

Tensor sample_nt_mask(Rng rng, int64_t h, int64_t w, float area_fraction) {
  std::vector<float> base(static_cast<size_t>(std::max<int64_t>(2, h / 8) *
                                              std::max<int64_t>(2, w / 8)));
  for (auto& v : base) v = static_cast<float>(rng.uniform());
  Tensor field({h, w});
  upscale_bilinear(base, std::max<int64_t>(2, h / 8), std::max<int64_t>(2, w / 8), field.data(),
                   h, w);
  gaussian_blur_inplace(field.data(), h, w, static_cast<float>(h) / 16.0f);

  std::vector<float> sorted(field.vec());
  const int64_t k = std::clamp<int64_t>(
      static_cast<int64_t>(std::llround((1.0 - static_cast<double>(area_fraction)) *
                                        static_cast<double>(h * w))),
      0, h * w - 1);
  std::nth_element(sorted.begin(), sorted.begin() + k, sorted.end());
  const float thresh = sorted[static_cast<size_t>(k)];

  Tensor mask({h, w});
  for (int64_t i = 0; i < h * w; ++i) mask[i] = field[i] > thresh ? 1.0f : 0.0f;
  return mask;
}

Tensor compose_mixture_raw(const Tensor& b, const Tensor& r, const MixtureParams& mix) {
  if (!b.same_shape(r)) throw ShapeMismatch("compose_mixture: b vs r");
  if (mix.nt_mask.defined() &&
      (mix.nt_mask.dim(0) != b.dim(1) || mix.nt_mask.dim(1) != b.dim(2)))
    throw ShapeMismatch("compose_mixture: nt_mask size");
  const int64_t HW = b.dim(1) * b.dim(2);
  Tensor out(b.shape());
  for (int64_t c = 0; c < b.dim(0); ++c)
    for (int64_t i = 0; i < HW; ++i) {
      const bool inside = mix.nt_mask.defined() && mix.nt_mask[i] > 0.5f;
      const float a = inside ? 1.0f - mix.nt_strength : mix.alpha;
      const float bb = inside ? mix.nt_strength : mix.beta;
      out[c * HW + i] = a * b[c * HW + i] + bb * r[c * HW + i];
    }
  return out;
}

Tensor compose_mixture(const Tensor& b, const Tensor& r, const MixtureParams& mix) {
  Tensor out = compose_mixture_raw(b, r, mix);
  for (int64_t i = 0; i < out.numel(); ++i) out[i] = std::clamp(out[i], 0.0f, 1.0f);
  return out;
}

// ---------------------------------------------------------------------------
// pairs
// ---------------------------------------------------------------------------

namespace {

PoseParams sample_pose(Rng& rng) {
  PoseParams p;
  p.rotation = static_cast<float>(rng.uniform(-kMaxRotation, kMaxRotation));
  p.scale = static_cast<float>(rng.uniform(kMinScale, kMaxScale));
  p.tx = static_cast<float>(rng.uniform(-0.03, 0.03));
  p.ty = static_cast<float>(rng.uniform(-0.03, 0.03));
  return p;
}

MixtureParams sample_mix(Rng& rng, const SynthConfig& cfg) {
  MixtureParams m;
  m.alpha = static_cast<float>(rng.uniform(cfg.alpha_range[0], cfg.alpha_range[1]));
  m.beta = 1.0f - m.alpha;
  m.nt_strength =
      static_cast<float>(rng.uniform(cfg.nt_strength_range[0], cfg.nt_strength_range[1]));
  const float area = static_cast<float>(
      rng.uniform(cfg.nt_area_range[0] + 0.01, cfg.nt_area_range[1] - 0.01));
  m.nt_mask = sample_nt_mask(rng.child("mask"), cfg.image_size, cfg.image_size, area);
  return m;
}

}  // namespace

MixturePair build_pair(const IdentityParams& id, int64_t seed, const SynthConfig& cfg) {
  Rng root(hash_combine(0xBA17ull, static_cast<uint64_t>(seed)));
  MixturePair pair;
  pair.pair_seed = seed;

  Rng pm = root.child("pose_m"), pg = root.child("pose_g");
  PoseParams pose_m = sample_pose(pm), pose_g = sample_pose(pg);
  if (std::abs(pose_m.rotation - pose_g.rotation) < 1e-6f) pose_g.rotation += 0.02f;

  Rng im = root.child("illum_m"), ig = root.child("illum_g");
  const float illum_m = static_cast<float>(im.uniform(cfg.illum_range[0], cfg.illum_range[1]));
  const float illum_g = static_cast<float>(ig.uniform(cfg.illum_range[0], cfg.illum_range[1]));

  pair.main_truth = render_face(id, pose_m, illum_m, cfg.image_size);
  pair.guided_truth = render_face(id, pose_g, illum_g, cfg.image_size);

  Rng rm = root.child("refl_m"), rg = root.child("refl_g");
  Rng bm = root.child("blur_m"), bg = root.child("blur_g");
  const float sig_m = static_cast<float>(bm.uniform(cfg.blur_sigma_range[0], cfg.blur_sigma_range[1]));
  const float sig_g = static_cast<float>(bg.uniform(cfg.blur_sigma_range[0], cfg.blur_sigma_range[1]));
  Tensor refl_m = sample_reflection(static_cast<int64_t>(rm.next_u64() >> 1), cfg.image_size,
                                    cfg.image_size, sig_m);
  Tensor refl_g = sample_reflection(static_cast<int64_t>(rg.next_u64() >> 1), cfg.image_size,
                                    cfg.image_size, sig_g);

  Rng mm = root.child("mix_m"), mg = root.child("mix_g");
  pair.main_mix = sample_mix(mm, cfg);
  pair.guided_mix = sample_mix(mg, cfg);

  pair.main_input = compose_mixture(pair.main_truth.image, refl_m, pair.main_mix);
  pair.guided_input = compose_mixture(pair.guided_truth.image, refl_g, pair.guided_mix);
  return pair;
}

std::vector<uint8_t> landmark_component_classes(int i) {
  if (i >= 17 && i <= 21) return {kLeftBrow};
  if (i >= 22 && i <= 26) return {kRightBrow};
  if (i >= 36 && i <= 41) return {kLeftEye};
  if (i >= 42 && i <= 47) return {kRightEye};
  if (i >= 48 && i <= 59) return {kUpperLip, kLowerLip};
  if (i >= 60 && i <= 67) return {kUpperLip, kLowerLip, kTeeth};
  return {};
}

Tensor colorize_labels(const std::vector<uint8_t>& labels, int64_t h, int64_t w) {
  static const float colors[kNumParseClasses][3] = {
      {0.05f, 0.05f, 0.05f}, {0.85f, 0.70f, 0.55f}, {0.90f, 0.30f, 0.10f},
      {0.95f, 0.55f, 0.10f}, {0.15f, 0.45f, 0.95f}, {0.10f, 0.75f, 0.95f},
      {0.20f, 0.80f, 0.30f}, {0.90f, 0.15f, 0.40f}, {0.65f, 0.10f, 0.30f},
      {0.95f, 0.95f, 0.95f}, {0.55f, 0.30f, 0.75f}};
  Tensor out({3, h, w});
  for (int64_t i = 0; i < h * w; ++i)
    for (int64_t c = 0; c < 3; ++c) out[c * h * w + i] = colors[labels[static_cast<size_t>(i)]][c];
  return out;
}

Tensor colorize_parsing(const ParsingMap& map) {
  return colorize_labels(map.argmax_labels(), map.probs.dim(1), map.probs.dim(2));
}

// ---------------------------------------------------------------------------
// serialization
// ---------------------------------------------------------------------------

namespace {

json pose_to_json(const PoseParams& p) {
  return json{{"rotation", p.rotation}, {"scale", p.scale}, {"tx", p.tx}, {"ty", p.ty}};
}
PoseParams pose_from_json(const json& j) {
  PoseParams p;
  p.rotation = j.at("rotation");
  p.scale = j.at("scale");
  p.tx = j.at("tx");
  p.ty = j.at("ty");
  return p;
}

std::string mask_to_hex(const Tensor& mask) {
  std::string out;
  const int64_t n = mask.numel();
  out.reserve(static_cast<size_t>((n + 3) / 4));
  static const char* hex = "0123456789abcdef";
  for (int64_t i = 0; i < n; i += 4) {
    int v = 0;
    for (int64_t b = 0; b < 4 && i + b < n; ++b)
      if (mask[i + b] > 0.5f) v |= 1 << b;
    out.push_back(hex[v]);
  }
  return out;
}

Tensor mask_from_hex(const std::string& s, int64_t h, int64_t w) {
  Tensor mask({h, w});
  for (int64_t i = 0; i < h * w; ++i) {
    const char c = s[static_cast<size_t>(i / 4)];
    const int v = (c >= 'a') ? c - 'a' + 10 : c - '0';
    mask[i] = (v >> (i % 4)) & 1 ? 1.0f : 0.0f;
  }
  return mask;
}

json mix_side_to_json(const MixtureParams& m, const FaceSample& truth) {
  return json{{"alpha", m.alpha},
              {"beta", m.beta},
              {"nt_strength", m.nt_strength},
              {"nt_mask_hex", mask_to_hex(m.nt_mask)},
              {"pose", pose_to_json(truth.pose)},
              {"illum", truth.illum},
              {"identity_id", truth.identity_id}};
}

}  // namespace

std::string SynthConfig::to_json() const {
  json j{{"image_size", image_size},
         {"identities", identities},
         {"pairs_per_identity", pairs_per_identity},
         {"alpha_range", alpha_range},
         {"nt_area_range", nt_area_range},
         {"nt_strength_range", nt_strength_range},
         {"blur_sigma_range", blur_sigma_range},
         {"illum_range", illum_range},
         {"split_train", split_train},
         {"split_val", split_val},
         {"split_test", split_test},
         {"identity_seed_base", identity_seed_base}};
  return j.dump();
}

SynthConfig SynthConfig::from_json(const std::string& text) {
  const json j = json::parse(text);
  SynthConfig c;
  c.image_size = j.at("image_size");
  c.identities = j.at("identities");
  c.pairs_per_identity = j.at("pairs_per_identity");
  c.alpha_range = j.at("alpha_range");
  c.nt_area_range = j.at("nt_area_range");
  c.nt_strength_range = j.at("nt_strength_range");
  c.blur_sigma_range = j.at("blur_sigma_range");
  c.illum_range = j.at("illum_range");
  c.split_train = j.at("split_train");
  c.split_val = j.at("split_val");
  c.split_test = j.at("split_test");
  c.identity_seed_base = j.at("identity_seed_base");
  return c;
}

std::string Manifest::to_json() const {
  json files(json::object());
  for (const auto& [k, v] : file_sha256) files[k] = v;
  json splits(json::object());
  for (const auto& [k, v] : identity_split) splits[std::to_string(k)] = v;
  json j{{"version", version},
         {"config", json::parse(config.to_json())},
         {"master_seed", master_seed},
         {"files", files},
         {"identity_split", splits},
         {"pair_identity", pair_identity}};
  return j.dump(2);
}

Manifest Manifest::from_json(const std::string& text) {
  const json j = json::parse(text);
  Manifest m;
  m.version = j.at("version");
  m.config = SynthConfig::from_json(j.at("config").dump());
  m.master_seed = j.at("master_seed");
  for (const auto& [k, v] : j.at("files").items()) m.file_sha256[k] = v;
  for (const auto& [k, v] : j.at("identity_split").items())
    m.identity_split[std::stoll(k)] = v;
  m.pair_identity = j.at("pair_identity").get<std::vector<int64_t>>();
  return m;
}

std::vector<int64_t> Dataset::identities_for_split(const std::string& split) const {
  std::vector<int64_t> out;
  for (const auto& [id, s] : manifest.identity_split)
    if (s == split) out.push_back(id);
  return out;
}

std::vector<int64_t> Dataset::pair_indices_for_split(const std::string& split) const {
  std::vector<int64_t> out;
  for (size_t i = 0; i < manifest.pair_identity.size(); ++i)
    if (manifest.identity_split.at(manifest.pair_identity[i]) == split)
      out.push_back(static_cast<int64_t>(i));
  return out;
}

Dataset generate_dataset(const SynthConfig& cfg, uint64_t master_seed) {
  Dataset ds;
  ds.manifest.config = cfg;
  ds.manifest.master_seed = master_seed;

  std::vector<int64_t> ids(static_cast<size_t>(cfg.identities));
  for (int64_t i = 0; i < cfg.identities; ++i)
    ids[static_cast<size_t>(i)] = cfg.identity_seed_base + i;

  // identity-disjoint splits
  std::vector<int64_t> shuffled = ids;
  Rng srng(hash_combine(master_seed, hash_str("split")));
  for (int64_t i = static_cast<int64_t>(shuffled.size()) - 1; i > 0; --i)
    std::swap(shuffled[static_cast<size_t>(i)], shuffled[static_cast<size_t>(srng.randint(i + 1))]);
  const int64_t n = cfg.identities;
  int64_t n_test = std::max<int64_t>(n >= 3 ? 1 : 0, std::llround(cfg.split_test * static_cast<double>(n)));
  int64_t n_val = std::max<int64_t>(n >= 3 ? 1 : 0, std::llround(cfg.split_val * static_cast<double>(n)));
  for (int64_t i = 0; i < n; ++i) {
    const int64_t id = shuffled[static_cast<size_t>(i)];
    ds.manifest.identity_split[id] = i < n_test ? "test" : (i < n_test + n_val ? "val" : "train");
  }

  for (int64_t i = 0; i < cfg.identities; ++i) {
    const IdentityParams id = sample_identity(ids[static_cast<size_t>(i)]);
    for (int64_t p = 0; p < cfg.pairs_per_identity; ++p) {
      const int64_t pair_index = i * cfg.pairs_per_identity + p;
      const int64_t pair_seed =
          static_cast<int64_t>(hash_combine(master_seed, static_cast<uint64_t>(pair_index)) >> 1);
      ds.pairs.push_back(build_pair(id, pair_seed, cfg));
      ds.manifest.pair_identity.push_back(id.identity_id);
    }
  }
  return ds;
}

namespace {

void write_landmarks_json(const std::filesystem::path& path, const LandmarkSet& lm) {
  json pts = json::array();
  for (const auto& p : lm.points) pts.push_back({p[0], p[1]});
  std::ofstream out(path);
  out << json{{"points", pts}}.dump();
}

LandmarkSet read_landmarks_json(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw MissingFile(path.string());
  json j;
  in >> j;
  LandmarkSet lm;
  for (const auto& p : j.at("points")) lm.points.push_back({p[0], p[1]});
  if (lm.points.size() != kNumLandmarks) throw BadCount("landmarks file");
  return lm;
}

}  // namespace

Manifest write_dataset(const Dataset& ds, const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  fs::create_directories(dir / "pairs");
  Manifest manifest = ds.manifest;
  manifest.file_sha256.clear();

  auto add_file = [&](const fs::path& rel) {
    manifest.file_sha256[rel.generic_string()] = io::sha256_file(dir / rel);
  };

  for (size_t idx = 0; idx < ds.pairs.size(); ++idx) {
    const MixturePair& pair = ds.pairs[idx];
    const fs::path rel = fs::path("pairs") / std::to_string(idx);
    fs::create_directories(dir / rel);
    const int64_t S = pair.main_input.dim(1);

    io::write_png_rgb16(dir / rel / "main_input.png", pair.main_input);
    io::write_png_rgb16(dir / rel / "guided_input.png", pair.guided_input);
    io::write_png_rgb16(dir / rel / "main_truth.png", pair.main_truth.image);
    io::write_png_rgb16(dir / rel / "guided_truth.png", pair.guided_truth.image);
    io::write_png_gray8(dir / rel / "main_parsing.png", S, S,
                        pair.main_truth.parsing.argmax_labels());
    io::write_png_gray8(dir / rel / "guided_parsing.png", S, S,
                        pair.guided_truth.parsing.argmax_labels());
    write_landmarks_json(dir / rel / "main_landmarks.json", pair.main_truth.landmarks);
    write_landmarks_json(dir / rel / "guided_landmarks.json", pair.guided_truth.landmarks);
    {
      std::ofstream out(dir / rel / "mix.json");
      out << json{{"pair_seed", pair.pair_seed},
                  {"main", mix_side_to_json(pair.main_mix, pair.main_truth)},
                  {"guided", mix_side_to_json(pair.guided_mix, pair.guided_truth)}}
                 .dump();
    }
    for (const char* f : {"main_input.png", "guided_input.png", "main_truth.png",
                          "guided_truth.png", "main_parsing.png", "guided_parsing.png",
                          "main_landmarks.json", "guided_landmarks.json", "mix.json"})
      add_file(rel / f);
  }

  std::ofstream out(dir / "manifest.json");
  out << manifest.to_json();
  return manifest;
}

Dataset read_dataset(const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  std::ifstream in(dir / "manifest.json");
  if (!in) throw MissingFile((dir / "manifest.json").string());
  std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());

  Dataset ds;
  ds.manifest = Manifest::from_json(text);

  for (const auto& [rel, expected] : ds.manifest.file_sha256) {
    const fs::path p = dir / rel;
    if (!fs::exists(p)) throw MissingFile(p.string());
    if (io::sha256_file(p) != expected) throw CorruptManifest("hash mismatch: " + rel);
  }

  const int64_t S = ds.manifest.config.image_size;
  for (size_t idx = 0; idx < ds.manifest.pair_identity.size(); ++idx) {
    const fs::path rel = dir / "pairs" / std::to_string(idx);
    MixturePair pair;
    pair.main_input = io::read_png_rgb16(rel / "main_input.png");
    pair.guided_input = io::read_png_rgb16(rel / "guided_input.png");
    pair.main_truth.image = io::read_png_rgb16(rel / "main_truth.png");
    pair.guided_truth.image = io::read_png_rgb16(rel / "guided_truth.png");
    int64_t h = 0, w = 0;
    const auto main_labels = io::read_png_gray8(rel / "main_parsing.png", h, w);
    pair.main_truth.parsing = ParsingMap::from_labels(main_labels, h, w);
    const auto guided_labels = io::read_png_gray8(rel / "guided_parsing.png", h, w);
    pair.guided_truth.parsing = ParsingMap::from_labels(guided_labels, h, w);
    pair.main_truth.landmarks = read_landmarks_json(rel / "main_landmarks.json");
    pair.guided_truth.landmarks = read_landmarks_json(rel / "guided_landmarks.json");

    std::ifstream mixin(rel / "mix.json");
    if (!mixin) throw MissingFile((rel / "mix.json").string());
    json mj;
    mixin >> mj;
    pair.pair_seed = mj.at("pair_seed");
    auto load_side = [&](const json& j, MixtureParams& m, FaceSample& truth) {
      m.alpha = j.at("alpha");
      m.beta = j.at("beta");
      m.nt_strength = j.at("nt_strength");
      m.nt_mask = mask_from_hex(j.at("nt_mask_hex"), S, S);
      truth.pose = pose_from_json(j.at("pose"));
      truth.illum = j.at("illum");
      truth.identity_id = j.at("identity_id");
    };
    load_side(mj.at("main"), pair.main_mix, pair.main_truth);
    load_side(mj.at("guided"), pair.guided_mix, pair.guided_truth);
    ds.pairs.push_back(std::move(pair));
  }
  return ds;
}

}  // namespace facedr::facegen
