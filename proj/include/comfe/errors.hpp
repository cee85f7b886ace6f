#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace comfe {

// Base of every error the library throws. `exit_code` is what the CLI
// returns when the error escapes a subcommand.
class Error : public std::runtime_error {
   public:
    explicit Error(const std::string &what, int exit_code = 2)
        : std::runtime_error(what), exit_code_(exit_code) {}

    int exit_code() const noexcept { return exit_code_; }

   private:
    int exit_code_;
};

class DimensionError : public Error {
   public:
    explicit DimensionError(const std::string &what) : Error("dimension error: " + what, 2) {}
};

class NumericError : public Error {
   public:
    explicit NumericError(const std::string &what) : Error("numeric error: " + what, 3) {}
};

class NormalizationError : public Error {
   public:
    explicit NormalizationError(const std::string &what)
        : Error("normalization error: " + what, 3) {}
};

class ConfigError : public Error {
   public:
    explicit ConfigError(const std::string &what) : Error("config error: " + what, 1) {}
};

class AssociationError : public Error {
   public:
    explicit AssociationError(const std::string &what)
        : Error("association-matrix error: " + what, 2) {}
};

class LabelError : public Error {
   public:
    explicit LabelError(const std::string &what) : Error("label error: " + what, 2) {}
};

class DataError : public Error {
   public:
    explicit DataError(const std::string &what) : Error("data error: " + what, 2) {}
};

// Malformed binary input; carries the byte offset at which reading failed.
class FormatError : public Error {
   public:
    enum class Kind { bad_magic, version_mismatch, truncated, inconsistent };

    FormatError(Kind kind, std::uint64_t offset, const std::string &what)
        : Error(kind_name(kind) + " at byte " + std::to_string(offset) + ": " + what, 2),
          kind_(kind),
          offset_(offset) {}

    Kind kind() const noexcept { return kind_; }
    std::uint64_t offset() const noexcept { return offset_; }

   private:
    static std::string kind_name(Kind kind) {
        switch (kind) {
            case Kind::bad_magic:
                return "bad magic";
            case Kind::version_mismatch:
                return "version mismatch";
            case Kind::truncated:
                return "truncated file";
            case Kind::inconsistent:
                return "inconsistent header";
        }
        return "format error";
    }

    Kind kind_;
    std::uint64_t offset_;
};

class CheckpointError : public Error {
   public:
    explicit CheckpointError(const std::string &what) : Error("checkpoint error: " + what, 2) {}
};

}  // namespace comfe
