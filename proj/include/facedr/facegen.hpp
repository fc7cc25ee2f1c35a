#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "facedr/core/rng.hpp"
#include "facedr/core/tensor.hpp"

// Procedural synthesis of identity-labeled faces, reflections and mixture
// pairs, with exact ground truth (clean image, 11-class parsing, 68
// landmarks, reflection mask) and a deterministic on-disk dataset format.

namespace facedr::facegen {

// parsing classes
enum ParseClass : uint8_t {
  kBackground = 0,
  kSkin = 1,
  kLeftBrow = 2,
  kRightBrow = 3,
  kLeftEye = 4,
  kRightEye = 5,
  kNose = 6,
  kUpperLip = 7,
  kLowerLip = 8,
  kTeeth = 9,
  kHair = 10,
};
inline constexpr int kNumParseClasses = 11;
inline constexpr int kNumLandmarks = 68;

const char* parse_class_name(int c);

struct Palette {
  std::array<float, 3> skin{};
  std::array<float, 3> hair{};
  std::array<float, 3> brow{};
  std::array<float, 3> sclera{};
  std::array<float, 3> iris{};
  std::array<float, 3> lip{};
  std::array<float, 3> teeth{};
  std::array<float, 3> background{};
};

/// Face geometry in a normalized [0,1]^2 frame centered at (0.5, 0.5);
/// x grows right, y grows down. All extents are bounded so that the whole
/// face (including hair) stays inside the frame for every legal pose.
struct FaceGeometry {
  float head_rx, head_ry;
  float eye_cy, eye_dx, eye_rx, eye_ry, iris_r;
  float brow_dy, brow_len, brow_thick, brow_tilt;
  float nose_len, nose_w;
  float mouth_dy, mouth_rx, mouth_ry, mouth_open;
  float hairline_y;
  float freckle_fx, freckle_fy, freckle_phase, freckle_amp;
};

struct IdentityParams {
  int64_t identity_id = -1;
  FaceGeometry geometry{};
  Palette palette{};
};

struct PoseParams {
  float rotation = 0.0f;  // radians
  float scale = 1.0f;
  float tx = 0.0f, ty = 0.0f;  // translation, normalized units
};

inline constexpr float kMaxRotation = 0.35f;
inline constexpr float kMinScale = 0.8f, kMaxScale = 1.25f;

struct LandmarkSet {
  // 68 (x, y) pairs in pixel coordinates
  std::vector<std::array<float, 2>> points;
};

struct ParsingMap {
  Tensor probs;  // [11, H, W], per-pixel distribution

  std::vector<uint8_t> argmax_labels() const;
  static ParsingMap from_labels(const std::vector<uint8_t>& labels, int64_t h, int64_t w);
};

struct FaceSample {
  Tensor image;  // [3, H, W] in [0,1]
  ParsingMap parsing;
  LandmarkSet landmarks;
  int64_t identity_id = -1;
  PoseParams pose;
  float illum = 1.0f;
};

struct MixtureParams {
  float alpha = 0.8f;
  float beta = 0.2f;
  Tensor nt_mask;           // [H, W], binary {0,1}
  float nt_strength = 0.9f; // effective reflection weight inside the mask
};

struct MixturePair {
  Tensor main_input, guided_input;  // [3, H, W]
  FaceSample main_truth, guided_truth;
  MixtureParams main_mix, guided_mix;
  int64_t pair_seed = 0;
};

struct SynthConfig {
  int64_t image_size = 64;  // up to 128, divisible by 16
  int64_t identities = 40;
  int64_t pairs_per_identity = 10;
  std::array<float, 2> alpha_range{0.6f, 0.9f};
  std::array<float, 2> nt_area_range{0.05f, 0.4f};
  std::array<float, 2> nt_strength_range{0.8f, 1.0f};
  std::array<float, 2> blur_sigma_range{1.5f, 4.0f};
  std::array<float, 2> illum_range{0.8f, 1.1f};
  float split_train = 0.75f, split_val = 0.10f, split_test = 0.15f;
  int64_t identity_seed_base = 0;

  std::string to_json() const;
  static SynthConfig from_json(const std::string& text);
};

// ---- operations ----

IdentityParams sample_identity(int64_t seed);

FaceSample render_face(const IdentityParams& id, const PoseParams& pose, float illum,
                       int64_t image_size);

Tensor sample_reflection(int64_t seed, int64_t h, int64_t w, float blur_sigma);

/// Eq form: outside the mask I = alpha*b + beta*r; inside I uses nt_strength
/// as the effective reflection weight. No clipping.
Tensor compose_mixture_raw(const Tensor& b, const Tensor& r, const MixtureParams& mix);
/// compose_mixture_raw followed by clipping to [0,1].
Tensor compose_mixture(const Tensor& b, const Tensor& r, const MixtureParams& mix);

Tensor sample_nt_mask(Rng rng, int64_t h, int64_t w, float area_fraction);

MixturePair build_pair(const IdentityParams& id, int64_t seed, const SynthConfig& cfg);

/// Which parsing classes a landmark index may fall on (after 2 px dilation).
std::vector<uint8_t> landmark_component_classes(int landmark_index);

Tensor colorize_parsing(const ParsingMap& map);
Tensor colorize_labels(const std::vector<uint8_t>& labels, int64_t h, int64_t w);

// ---- datasets ----

struct Manifest {
  int version = 1;
  SynthConfig config;
  uint64_t master_seed = 0;
  std::map<std::string, std::string> file_sha256;
  std::map<int64_t, std::string> identity_split;  // id -> train|val|test
  std::vector<int64_t> pair_identity;             // pair index -> identity id

  std::string to_json() const;
  static Manifest from_json(const std::string& text);
};

struct Dataset {
  Manifest manifest;
  std::vector<MixturePair> pairs;

  std::vector<int64_t> pair_indices_for_split(const std::string& split) const;
  std::vector<int64_t> identities_for_split(const std::string& split) const;
};

/// Deterministically generate the full dataset for (cfg, master_seed).
Dataset generate_dataset(const SynthConfig& cfg, uint64_t master_seed);

Manifest write_dataset(const Dataset& ds, const std::filesystem::path& dir);
Dataset read_dataset(const std::filesystem::path& dir);

}  // namespace facedr::facegen
