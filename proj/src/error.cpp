#include "pxeval/error.hpp"

namespace pxeval {

std::string_view to_string(ErrorKind kind) {
    switch (kind) {
    case ErrorKind::UnknownPlaceholder: return "UnknownPlaceholder";
    case ErrorKind::DuplicateId: return "DuplicateId";
    case ErrorKind::EmptyBody: return "EmptyBody";
    case ErrorKind::InvalidAttributes: return "InvalidAttributes";
    case ErrorKind::MissingField: return "MissingField";
    case ErrorKind::UncoveredPlaceholder: return "UncoveredPlaceholder";
    case ErrorKind::MissingRule: return "MissingRule";
    case ErrorKind::BadGoldIndex: return "BadGoldIndex";
    case ErrorKind::DuplicateChoice: return "DuplicateChoice";
    case ErrorKind::EmptyChoiceSet: return "EmptyChoiceSet";
    case ErrorKind::MalformedRecord: return "MalformedRecord";
    case ErrorKind::TooManyChoices: return "TooManyChoices";
    case ErrorKind::EmptyContinuation: return "EmptyContinuation";
    case ErrorKind::BackendUnavailable: return "BackendUnavailable";
    case ErrorKind::NonFiniteLogProb: return "NonFiniteLogProb";
    case ErrorKind::EmptyScoreList: return "EmptyScoreList";
    case ErrorKind::CountMismatch: return "CountMismatch";
    case ErrorKind::EmptyList: return "EmptyList";
    case ErrorKind::EmptyGroup: return "EmptyGroup";
    case ErrorKind::NonPositiveRank: return "NonPositiveRank";
    case ErrorKind::ZeroVariance: return "ZeroVariance";
    case ErrorKind::InsufficientData: return "InsufficientData";
    case ErrorKind::InvalidConfig: return "InvalidConfig";
    case ErrorKind::MissingRun: return "MissingRun";
    case ErrorKind::IncompleteMatrix: return "IncompleteMatrix";
    case ErrorKind::Io: return "Io";
    }
    return "Unknown";
}

} // namespace pxeval
