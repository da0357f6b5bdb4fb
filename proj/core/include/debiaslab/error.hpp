#pragma once

#include <stdexcept>
#include <string>

namespace debiaslab {

enum class ErrorCode {
    invalid_input,
    invalid_site,
    incompatible_snapshot,
    subject_not_found,
    format_error,
    transport_error,
    paraphrase_validation,
    tagging_error,
    divergence,
    value_solve_failed,
    ill_conditioned_update,
    unsupported_protocol,
    config_error,
    report_error,
    io_error,
};

const char* error_code_name(ErrorCode code);

class Error : public std::runtime_error {
  public:
    Error(ErrorCode code, const std::string& message)
        : std::runtime_error(std::string(error_code_name(code)) + ": " + message), code_(code) {}

    ErrorCode code() const { return code_; }

  private:
    ErrorCode code_;
};

} // namespace debiaslab
