#pragma once

#include <stdexcept>
#include <string>

namespace fxemu {

// Error taxonomy. The CLI maps categories onto distinct exit codes, and
// the file loaders use them to keep failure modes distinguishable.
enum class ErrorCategory {
    Config,     // bad flags, bad WL/guard settings
    Pipeline,   // a pass could not complete (e.g. unfusable BN hits division removal)
    Contract,   // executor precondition violated (unaligned FLs, missing params)
    Graph,      // malformed graph structure (cycle, undefined tensor)
    Shape,      // geometry mismatch
    Domain,     // numeric domain error (non-finite input, invalid clamp bounds)
    Manifest,   // malformed or unparsable model manifest
    Version,    // format version mismatch
    Blob,       // weight index / blob inconsistency
    Validation, // stored value violates its declared quantization range
};

const char* to_string(ErrorCategory cat);

class Error : public std::runtime_error {
public:
    Error(ErrorCategory cat, const std::string& msg)
        : std::runtime_error(msg), cat_(cat) {}
    ErrorCategory category() const noexcept { return cat_; }

private:
    ErrorCategory cat_;
};

#define FXEMU_DEFINE_ERROR(NAME, CATEGORY)                        \
    class NAME : public Error {                                   \
    public:                                                       \
        explicit NAME(const std::string& msg)                     \
            : Error(ErrorCategory::CATEGORY, msg) {}              \
    }

FXEMU_DEFINE_ERROR(ConfigError, Config);
FXEMU_DEFINE_ERROR(PipelineError, Pipeline);
FXEMU_DEFINE_ERROR(ContractError, Contract);
FXEMU_DEFINE_ERROR(GraphError, Graph);
FXEMU_DEFINE_ERROR(ShapeError, Shape);
FXEMU_DEFINE_ERROR(DomainError, Domain);
FXEMU_DEFINE_ERROR(ManifestError, Manifest);
FXEMU_DEFINE_ERROR(VersionError, Version);
FXEMU_DEFINE_ERROR(BlobError, Blob);
FXEMU_DEFINE_ERROR(ValidationError, Validation);

#undef FXEMU_DEFINE_ERROR

} // namespace fxemu
