#include "debiaslab/error.hpp"

namespace debiaslab {

const char* error_code_name(ErrorCode code) {
    switch (code) {
        case ErrorCode::invalid_input: return "invalid-input";
        case ErrorCode::invalid_site: return "invalid-site";
        case ErrorCode::incompatible_snapshot: return "incompatible-snapshot";
        case ErrorCode::subject_not_found: return "subject-not-found";
        case ErrorCode::format_error: return "format-error";
        case ErrorCode::transport_error: return "transport-error";
        case ErrorCode::paraphrase_validation: return "paraphrase-validation";
        case ErrorCode::tagging_error: return "tagging-error";
        case ErrorCode::divergence: return "divergence";
        case ErrorCode::value_solve_failed: return "value-solve-failed";
        case ErrorCode::ill_conditioned_update: return "ill-conditioned-update";
        case ErrorCode::unsupported_protocol: return "unsupported-protocol";
        case ErrorCode::config_error: return "config-error";
        case ErrorCode::report_error: return "report-error";
        case ErrorCode::io_error: return "io-error";
    }
    return "unknown-error";
}

} // namespace debiaslab
