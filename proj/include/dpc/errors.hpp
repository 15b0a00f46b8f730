#pragma once

#include <stdexcept>
#include <string>

namespace dpc {

// Base class for every error thrown by this library. Each concrete type
// corresponds to one documented failure mode of the public interfaces.
struct Error : std::runtime_error {
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// up and forward are parallel or near-zero, no valid frame exists.
struct DegenerateFrame : Error {
  explicit DegenerateFrame(const std::string& msg) : Error(msg) {}
};

// Position falls outside the normalization bounds by more than one bin width.
struct OutOfWorkspace : Error {
  explicit OutOfWorkspace(const std::string& msg) : Error(msg) {}
};

// A direction with (near) zero length was passed where a unit vector is needed.
struct ZeroVector : Error {
  explicit ZeroVector(const std::string& msg) : Error(msg) {}
};

// Input dimensions disagree with the parameter dimensions.
struct ShapeMismatch : Error {
  explicit ShapeMismatch(const std::string& msg) : Error(msg) {}
};

// Training loss became NaN or infinite; carries epoch/batch diagnostics.
struct NonFiniteLoss : Error {
  explicit NonFiniteLoss(const std::string& msg) : Error(msg) {}
};

// classify() was called on parameters whose failure head was never trained.
struct UntrainedDetector : Error {
  explicit UntrainedDetector(const std::string& msg) : Error(msg) {}
};

// A labeled dataset ended up with zero samples for some class.
struct EmptyClass : Error {
  explicit EmptyClass(const std::string& msg) : Error(msg) {}
};

// Fewer than 3 usable depth pixels in a manipulation box, no plane fit.
struct DegeneratePatch : Error {
  explicit DegeneratePatch(const std::string& msg) : Error(msg) {}
};

// A success that went through no correction was offered to the success buffer.
struct RejectNonCorrected : Error {
  explicit RejectNonCorrected(const std::string& msg) : Error(msg) {}
};

// A category id absent from the category table.
struct UnknownCategory : Error {
  explicit UnknownCategory(const std::string& msg) : Error(msg) {}
};

// Demonstration acceptance rate fell below the generator floor.
struct InsufficientSuccesses : Error {
  explicit InsufficientSuccesses(const std::string& msg) : Error(msg) {}
};

// report() was pointed at a run directory with no stage outputs.
struct EmptyRun : Error {
  explicit EmptyRun(const std::string& msg) : Error(msg) {}
};

}  // namespace dpc
