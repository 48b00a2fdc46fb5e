#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace csdf {

enum class ErrorCode {
  kInvalidArgument,
  kIo,
  kParse,
  kNonWatertight,
  kDegenerate,
  kOutOfDomain,
  kUnknownShape,
  kDiverged,
  kEmpty,
};

const char* to_string(ErrorCode code);

// Base exception for everything the library throws on purpose.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

class NonWatertightError : public Error {
 public:
  explicit NonWatertightError(std::size_t open_edges)
      : Error(ErrorCode::kNonWatertight,
              "mesh is not watertight: " + std::to_string(open_edges) +
                  " edge(s) not shared by exactly two triangles"),
        open_edges_(open_edges) {}

  std::size_t open_edges() const noexcept { return open_edges_; }

 private:
  std::size_t open_edges_;
};

class DivergenceError : public Error {
 public:
  DivergenceError(unsigned epoch, const std::string& detail)
      : Error(ErrorCode::kDiverged, "training diverged at epoch " +
                                        std::to_string(epoch) + ": " + detail),
        epoch_(epoch) {}

  unsigned epoch() const noexcept { return epoch_; }

 private:
  unsigned epoch_;
};

}  // namespace csdf
