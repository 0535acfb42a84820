#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace pxeval {

enum class ErrorKind {
    // template_engine
    UnknownPlaceholder,
    DuplicateId,
    EmptyBody,
    InvalidAttributes,
    MissingField,
    UncoveredPlaceholder,
    MissingRule,
    // task_model
    BadGoldIndex,
    DuplicateChoice,
    EmptyChoiceSet,
    MalformedRecord,
    TooManyChoices,
    // scoring
    EmptyContinuation,
    BackendUnavailable,
    NonFiniteLogProb,
    EmptyScoreList,
    // metrics / analysis
    CountMismatch,
    EmptyList,
    EmptyGroup,
    NonPositiveRank,
    ZeroVariance,
    InsufficientData,
    // harness
    InvalidConfig,
    MissingRun,
    IncompleteMatrix,
    Io,
};

std::string_view to_string(ErrorKind kind);

/// Every failure raised by the library carries a machine-readable kind so the
/// harness can record it per (prompt, task) pair.
class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& what)
        : std::runtime_error(std::string(to_string(kind)) + ": " + what), kind_(kind) {}

    ErrorKind kind() const noexcept { return kind_; }

private:
    ErrorKind kind_;
};

} // namespace pxeval
