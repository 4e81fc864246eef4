#pragma once

#include <stdexcept>
#include <string>

namespace htune {

/// Base of every error the library throws. The category is a short stable
/// tag ("dimension", "config", ...) used by the CLI as a message prefix.
class Error : public std::runtime_error {
public:
    Error(std::string category, const std::string& what)
        : std::runtime_error(what), category_(std::move(category)) {}

    const std::string& category() const noexcept { return category_; }

private:
    std::string category_;
};

#define HTUNE_DEFINE_ERROR(Name, tag)                                        \
    class Name : public Error {                                              \
    public:                                                                  \
        explicit Name(const std::string& what) : Error(tag, what) {}         \
    };

HTUNE_DEFINE_ERROR(DimensionError, "dimension")
HTUNE_DEFINE_ERROR(NumericError, "numeric")
HTUNE_DEFINE_ERROR(ConfigError, "config")
HTUNE_DEFINE_ERROR(LifecycleError, "lifecycle")
HTUNE_DEFINE_ERROR(InputError, "input")
HTUNE_DEFINE_ERROR(ContractError, "contract")
HTUNE_DEFINE_ERROR(IntegrityError, "integrity")
HTUNE_DEFINE_ERROR(SamplingError, "sampling")
HTUNE_DEFINE_ERROR(DegenerateSampleError, "degenerate-sample")
HTUNE_DEFINE_ERROR(ProtocolError, "protocol")
HTUNE_DEFINE_ERROR(UnsupportedError, "unsupported")

#undef HTUNE_DEFINE_ERROR

}  // namespace htune
