#pragma once

#include <stdexcept>
#include <string>

namespace altsfm {

/// A 3D point landed at or behind the camera plane where a projection was required.
class BehindCameraError : public std::runtime_error {
 public:
  explicit BehindCameraError(const std::string& what) : std::runtime_error(what) {}
};

/// Frame pair with (near-)zero translation: the fundamental matrix is undefined
/// for epipolar-line purposes. Callers drop the epipolar losses for the pair.
class DegenerateMotionError : public std::runtime_error {
 public:
  explicit DegenerateMotionError(const std::string& what) : std::runtime_error(what) {}
};

/// Point configuration too degenerate (collinear / empty) for rigid registration.
class DegenerateGeometryError : public std::runtime_error {
 public:
  explicit DegenerateGeometryError(const std::string& what) : std::runtime_error(what) {}
};

/// A loss or gradient evaluation produced a non-finite value. Carries the name
/// of the offending term so the trainer can report it.
class NumericalError : public std::runtime_error {
 public:
  NumericalError(const std::string& term, const std::string& what)
      : std::runtime_error(term + ": " + what), term_(term) {}
  const std::string& term() const { return term_; }

 private:
  std::string term_;
};

}  // namespace altsfm
