#pragma once

#include <stdexcept>
#include <string>

namespace stereoscale
{
// Error kinds map onto the one-line `error=<kind> ...` messages the CLI prints.

class Error : public std::runtime_error
{
public:
        Error(std::string kind, const std::string& message)
                : std::runtime_error(message), kind_(std::move(kind))
        {
        }

        const std::string& kind() const noexcept
        {
                return kind_;
        }

private:
        std::string kind_;
};

#define STEREOSCALE_ERROR_KIND(Name, tag)                                       \
        class Name : public Error                                               \
        {                                                                       \
        public:                                                                 \
                explicit Name(const std::string& message) : Error(tag, message) \
                {                                                               \
                }                                                               \
        };

STEREOSCALE_ERROR_KIND(InputError, "input")
STEREOSCALE_ERROR_KIND(DomainError, "domain")
STEREOSCALE_ERROR_KIND(DataError, "data")
STEREOSCALE_ERROR_KIND(FormatError, "format")
STEREOSCALE_ERROR_KIND(ConfigError, "config")
STEREOSCALE_ERROR_KIND(GenerationError, "generation")
STEREOSCALE_ERROR_KIND(NumericalError, "numerical")
STEREOSCALE_ERROR_KIND(IoError, "io")
STEREOSCALE_ERROR_KIND(SignalError, "insufficient_signal")

#undef STEREOSCALE_ERROR_KIND
}
