#pragma once

#include <stdexcept>
#include <string>

namespace shapeformer {

// Base for every error raised by the library. Each subclass maps to one
// failure kind named in the module contracts.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

#define SHAPEFORMER_DEFINE_ERROR(Name)            \
    class Name : public Error {                   \
    public:                                       \
        using Error::Error;                       \
    }

SHAPEFORMER_DEFINE_ERROR(ChecksumError);
SHAPEFORMER_DEFINE_ERROR(DimensionMismatch);
SHAPEFORMER_DEFINE_ERROR(ContainmentError);
SHAPEFORMER_DEFINE_ERROR(BoxOutOfBounds);
SHAPEFORMER_DEFINE_ERROR(DegenerateShape);
SHAPEFORMER_DEFINE_ERROR(GenerationExhausted);
SHAPEFORMER_DEFINE_ERROR(FormatVersionMismatch);
SHAPEFORMER_DEFINE_ERROR(ParseError);
SHAPEFORMER_DEFINE_ERROR(ShapeError);
SHAPEFORMER_DEFINE_ERROR(NonFiniteGradient);
SHAPEFORMER_DEFINE_ERROR(NonFiniteLoss);
SHAPEFORMER_DEFINE_ERROR(NonFiniteValue);
SHAPEFORMER_DEFINE_ERROR(UnknownCategory);
SHAPEFORMER_DEFINE_ERROR(EmptySplit);
SHAPEFORMER_DEFINE_ERROR(MissingArtifact);
SHAPEFORMER_DEFINE_ERROR(ConfigError);
SHAPEFORMER_DEFINE_ERROR(IoError);
SHAPEFORMER_DEFINE_ERROR(UsageError);

#undef SHAPEFORMER_DEFINE_ERROR

} // namespace shapeformer
