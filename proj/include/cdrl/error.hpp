#pragma once

#include <stdexcept>
#include <string>

namespace cdrl {

// IO / corpus loading failures, each distinguishable by type.
struct io_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct missing_file_error : io_error {
  explicit missing_file_error(const std::string& path)
      : io_error("missing file: " + path), path(path) {}
  std::string path;
};

struct checksum_error : io_error {
  explicit checksum_error(const std::string& path)
      : io_error("checksum mismatch: " + path), path(path) {}
  std::string path;
};

struct manifest_error : io_error {
  using io_error::io_error;
};

// Bad run configuration discovered at setup time (e.g. an empty emotion
// subset after filtering).
struct config_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace cdrl
