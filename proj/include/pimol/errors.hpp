#pragma once

#include <stdexcept>
#include <string>

namespace pimol {

/// Base class for all library errors.
struct Error : std::runtime_error {
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

#define PIMOL_DEFINE_ERROR(NAME)                                         \
    struct NAME : Error {                                                \
        explicit NAME(const std::string& msg) : Error(#NAME ": " + msg) {} \
    }

// symbolic
PIMOL_DEFINE_ERROR(InvalidConstant);
PIMOL_DEFINE_ERROR(UnexpectedEnd);
PIMOL_DEFINE_ERROR(TrailingTokens);
PIMOL_DEFINE_ERROR(MalformedExpression);
PIMOL_DEFINE_ERROR(UnknownFamily);
PIMOL_DEFINE_ERROR(NonFiniteResidual);

// tensor / autodiff
PIMOL_DEFINE_ERROR(ShapeError);
PIMOL_DEFINE_ERROR(NotScalar);
PIMOL_DEFINE_ERROR(Unsupported);

// model
PIMOL_DEFINE_ERROR(VocabularyError);

// data generation
PIMOL_DEFINE_ERROR(SolverDiverged);
PIMOL_DEFINE_ERROR(DegenerateSignal);

// losses / backends
PIMOL_DEFINE_ERROR(NonFiniteDerivative);
PIMOL_DEFINE_ERROR(StepUnderflow);

// training / evaluation / orchestration
PIMOL_DEFINE_ERROR(NonFiniteGradient);
PIMOL_DEFINE_ERROR(DegenerateReference);
PIMOL_DEFINE_ERROR(ConfigError);
PIMOL_DEFINE_ERROR(IoError);

#undef PIMOL_DEFINE_ERROR

}  // namespace pimol
