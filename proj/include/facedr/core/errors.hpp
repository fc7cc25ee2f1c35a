#pragma once

#include <stdexcept>
#include <string>

namespace facedr {

struct ShapeMismatch : std::runtime_error {
  explicit ShapeMismatch(const std::string& what) : std::runtime_error("ShapeMismatch: " + what) {}
};

struct BadShape : std::runtime_error {
  explicit BadShape(const std::string& what) : std::runtime_error("BadShape: " + what) {}
};

struct BadCount : std::runtime_error {
  explicit BadCount(const std::string& what) : std::runtime_error("BadCount: " + what) {}
};

struct PoseOutOfRange : std::runtime_error {
  explicit PoseOutOfRange(const std::string& what) : std::runtime_error("PoseOutOfRange: " + what) {}
};

struct CorruptManifest : std::runtime_error {
  explicit CorruptManifest(const std::string& what) : std::runtime_error("CorruptManifest: " + what) {}
};

struct MissingFile : std::runtime_error {
  explicit MissingFile(const std::string& what) : std::runtime_error("MissingFile: " + what) {}
};

struct EmptySample : std::runtime_error {
  explicit EmptySample(const std::string& what) : std::runtime_error("EmptySample: " + what) {}
};

struct DimMismatch : std::runtime_error {
  explicit DimMismatch(const std::string& what) : std::runtime_error("DimMismatch: " + what) {}
};

struct MissingBranch : std::runtime_error {
  explicit MissingBranch(const std::string& what) : std::runtime_error("MissingBranch: " + what) {}
};

struct InsufficientIdentities : std::runtime_error {
  explicit InsufficientIdentities(const std::string& what)
      : std::runtime_error("InsufficientIdentities: " + what) {}
};

struct DatasetEmpty : std::runtime_error {
  explicit DatasetEmpty(const std::string& what) : std::runtime_error("DatasetEmpty: " + what) {}
};

struct NaNLoss : std::runtime_error {
  explicit NaNLoss(const std::string& what) : std::runtime_error("NaNLoss: " + what) {}
};

struct UntrainedModel : std::runtime_error {
  explicit UntrainedModel(const std::string& what) : std::runtime_error("UntrainedModel: " + what) {}
};

struct IdentityNotInGallery : std::runtime_error {
  explicit IdentityNotInGallery(const std::string& what)
      : std::runtime_error("IdentityNotInGallery: " + what) {}
};

struct MissingConfiguration : std::runtime_error {
  explicit MissingConfiguration(const std::string& what)
      : std::runtime_error("MissingConfiguration: " + what) {}
};

struct IOFailure : std::runtime_error {
  explicit IOFailure(const std::string& what) : std::runtime_error("IOFailure: " + what) {}
};

struct ConfigError : std::runtime_error {
  explicit ConfigError(const std::string& what) : std::runtime_error("ConfigError: " + what) {}
};

}  // namespace facedr
