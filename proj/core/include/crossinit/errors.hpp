#pragma once

#include <stdexcept>
#include <string>

namespace crossinit {

/// Base class for every error raised by the toolkit.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// embedding_core
struct UnknownToken : Error { using Error::Error; };
struct EmptyNameList : Error { using Error::Error; };
struct SchemaVersionMismatch : Error { using Error::Error; };
struct CorruptFile : Error { using Error::Error; };
struct DimensionMismatch : Error { using Error::Error; };
struct InvalidEmbedding : Error { using Error::Error; };

// text_encoder
struct SlotCountMismatch : Error { using Error::Error; };
struct PositionOutOfRange : Error { using Error::Error; };
struct InvalidConfig : Error { using Error::Error; };

// diffusion
struct ShapeMismatch : Error { using Error::Error; };
struct TimestepOutOfRange : Error { using Error::Error; };
struct AdapterMissing : Error { using Error::Error; };

// inversion
struct NonFiniteLoss : Error { using Error::Error; };
struct MissingNames : Error { using Error::Error; };

// diagnostics
struct NonMonotonicStep : Error { using Error::Error; };
struct ZeroReference : Error { using Error::Error; };
struct IoError : Error { using Error::Error; };

// evaluation
struct NoFaceDetected : Error { using Error::Error; };
struct EmptyAfterSkips : Error { using Error::Error; };
struct EmptyInput : Error { using Error::Error; };
struct ScorerFailure : Error { using Error::Error; };

}  // namespace crossinit
