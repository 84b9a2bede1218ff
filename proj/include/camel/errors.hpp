#pragma once

#include <stdexcept>
#include <string>

namespace camel {

// Base class for all library errors. Callers that do not care about the
// specific failure can catch this one type.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// core
class InvalidDistribution : public Error { public: using Error::Error; };
class InvalidThreshold : public Error { public: using Error::Error; };
class TraceInvariantError : public Error { public: using Error::Error; };

// protocol
class VerdictParseError : public Error { public: using Error::Error; };
class DistributionUnavailable : public Error { public: using Error::Error; };

// backend
class BackendError : public Error { public: using Error::Error; };
class ProtocolError : public Error { public: using Error::Error; };

// harness
class ParseError : public Error { public: using Error::Error; };
class DuplicateId : public Error { public: using Error::Error; };
class LabelError : public Error { public: using Error::Error; };
class EmptyEvaluation : public Error { public: using Error::Error; };
class InvalidBinWidth : public Error { public: using Error::Error; };
class WriteError : public Error { public: using Error::Error; };

// grpo_toy
class DivergenceError : public Error { public: using Error::Error; };

// cli_service
class ConfigError : public Error { public: using Error::Error; };

} // namespace camel
