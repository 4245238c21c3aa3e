#pragma once

#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

namespace bamifun {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A configuration value is out of its admissible range (bad rank, level, grid...).
class InvalidConfiguration : public Error {
 public:
  using Error::Error;
};

/// Input data violates a structural requirement (non-increasing grid, shape mismatch...).
class InvalidInput : public Error {
 public:
  using Error::Error;
};

/// A linear-algebra step could not be completed (non-PD precision, singular design).
class NumericalFailure : public Error {
 public:
  using Error::Error;
};

class SingularDesign : public NumericalFailure {
 public:
  using NumericalFailure::NumericalFailure;
};

/// A latent component collapsed to zero norm; usually means R is too large.
class DegenerateComponent : public NumericalFailure {
 public:
  using NumericalFailure::NumericalFailure;
};

class PoolingImpossible : public Error {
 public:
  using Error::Error;
};

class UndefinedMetric : public Error {
 public:
  using Error::Error;
};

/// The validation split could not leave every row with a training observation.
class SplitFailure : public Error {
 public:
  using Error::Error;
};

// Warnings go to stderr unless a WarningCapture is active on the calling thread.
void warn(const std::string& message);

/// Collects warnings emitted on the current thread for its lifetime.
class WarningCapture {
 public:
  WarningCapture();
  ~WarningCapture();
  WarningCapture(const WarningCapture&) = delete;
  WarningCapture& operator=(const WarningCapture&) = delete;

  const std::vector<std::string>& messages() const { return messages_; }
  bool contains(const std::string& fragment) const;

 private:
  friend void warn(const std::string& message);
  std::vector<std::string> messages_;
  WarningCapture* previous_;
};

/// Replaces the process-wide sink used when no capture is active; nullptr restores stderr.
void set_warning_sink(std::function<void(const std::string&)> sink);

}  // namespace bamifun
