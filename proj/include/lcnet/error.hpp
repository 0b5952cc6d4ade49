#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace lcnet {

enum class Errc {
  InvalidShape,
  OutOfBounds,
  ShapeMismatch,
  DegenerateBatch,
  InvalidRate,
  InvalidArgument,
  InvalidConfig,
  InvalidLabel,
  OutOfRange,
  IoError,
  CorruptFile,
};

const char *errc_name(Errc code);

class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string &what)
      : std::runtime_error(std::string(errc_name(code)) + ": " + what), code_(code) {}

  Errc code() const noexcept { return code_; }

 private:
  Errc code_;
};

// Raised by the weight-file reader; offset is the byte position of the fault.
class CorruptFile : public Error {
 public:
  CorruptFile(std::uint64_t offset, const std::string &what)
      : Error(Errc::CorruptFile, what + " (at byte offset " + std::to_string(offset) + ")"),
        offset_(offset) {}

  std::uint64_t offset() const noexcept { return offset_; }

 private:
  std::uint64_t offset_;
};

}  // namespace lcnet
