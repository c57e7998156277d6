#pragma once

#include <stdexcept>
#include <string>

namespace mkmed {

// Base for every domain error the library throws.
struct Error : std::runtime_error {
  explicit Error(const std::string& what) : std::runtime_error(what) {}
};

#define MKMED_DEFINE_ERROR(Name)                                  \
  struct Name : Error {                                           \
    explicit Name(const std::string& what) : Error(#Name ": " + what) {} \
  }

// molkit
MKMED_DEFINE_ERROR(EmptyInput);
MKMED_DEFINE_ERROR(UnsupportedToken);
MKMED_DEFINE_ERROR(UnbalancedRing);
MKMED_DEFINE_ERROR(UnbalancedBranch);
MKMED_DEFINE_ERROR(RelaxationFailure);

// encoders
MKMED_DEFINE_ERROR(DimensionMismatch);
MKMED_DEFINE_ERROR(AllMasked);
MKMED_DEFINE_ERROR(BadPatchGrid);
MKMED_DEFINE_ERROR(TokenOutOfVocab);
MKMED_DEFINE_ERROR(EmptyKG);
MKMED_DEFINE_ERROR(UnknownEntity);
MKMED_DEFINE_ERROR(DegenerateEdge);

// align
MKMED_DEFINE_ERROR(ZeroNormRow);
MKMED_DEFINE_ERROR(ModalityUnderfilled);
MKMED_DEFINE_ERROR(EmptyIntersection);
MKMED_DEFINE_ERROR(NonFiniteLoss);

// clinical
MKMED_DEFINE_ERROR(VocabMismatch);
MKMED_DEFINE_ERROR(IndexOutOfRange);

// objective / eval
MKMED_DEFINE_ERROR(ShapeMismatch);
MKMED_DEFINE_ERROR(UnknownVariant);
MKMED_DEFINE_ERROR(EmptyTestSet);

// synthgen
MKMED_DEFINE_ERROR(ExhaustedAttempts);

// config / persistence
MKMED_DEFINE_ERROR(ConfigError);
MKMED_DEFINE_ERROR(CheckpointError);

#undef MKMED_DEFINE_ERROR

}  // namespace mkmed
