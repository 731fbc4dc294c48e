#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace nfgen {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed input text; carries the 1-based line number when known.
class ParseError : public Error {
 public:
  ParseError(std::size_t line, const std::string& what)
      : Error("line " + std::to_string(line) + ": " + what), line_(line) {}

  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

/// Artifacts produced under different feature schemas or configs were mixed.
class SchemaMismatch : public Error {
 public:
  using Error::Error;
};

/// A stage input does not exist on disk.
class MissingArtifact : public Error {
 public:
  explicit MissingArtifact(std::string path)
      : Error("missing artifact: " + path), path_(std::move(path)) {}

  const std::string& path() const noexcept { return path_; }

 private:
  std::string path_;
};

/// Invalid configuration or arguments, or a violated numeric precondition.
class ValidationError : public Error {
 public:
  using Error::Error;
};

}  // namespace nfgen
