#pragma once

#include <stdexcept>
#include <string>

namespace latentlm {

/// Root of every error thrown by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class DimensionError : public Error { public: using Error::Error; };
class IndexError : public Error { public: using Error::Error; };
class ArgumentError : public Error { public: using Error::Error; };
class ContractError : public Error { public: using Error::Error; };
class ConfigError : public Error { public: using Error::Error; };
class CapacityError : public Error { public: using Error::Error; };
class NumericError : public Error { public: using Error::Error; };

// Sequence structure
class VocabularyError : public Error { public: using Error::Error; };
class StructureError : public Error { public: using Error::Error; };

// On-disk formats
class FormatError : public Error { public: using Error::Error; };
class VersionError : public FormatError { public: using FormatError::FormatError; };
class CorruptionError : public FormatError { public: using FormatError::FormatError; };

}  // namespace latentlm
