#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace nnprobe {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed or inconsistent on-disk data (database, manifests, blobs).
class FormatError : public Error {
 public:
  using Error::Error;
};

/// A referenced entity (model, epoch, layer, tensor) does not exist.
class NotFoundError : public Error {
 public:
  NotFoundError(std::string what, std::string id)
      : Error(what + ": " + id), id_(std::move(id)) {}
  const std::string& id() const noexcept { return id_; }

 private:
  std::string id_;
};

/// Caller supplied an argument outside the operation's contract.
class InvalidArgument : public Error {
 public:
  using Error::Error;
};

}  // namespace nnprobe
