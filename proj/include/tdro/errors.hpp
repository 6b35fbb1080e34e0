#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace tdro {

// Base class for all library-level failures. Subclasses carry the
// context named in their constructor so callers can branch on type.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// --- corpus ---
struct MalformedRecord : Error {
  std::size_t line;
  MalformedRecord(std::size_t line_no, const std::string& why)
      : Error("malformed record at line " + std::to_string(line_no) + ": " + why),
        line(line_no) {}
};
struct EmptyFile : Error {
  explicit EmptyFile(const std::string& path) : Error("no records in file: " + path) {}
};
struct MissingField : Error {
  std::string field;
  MissingField(std::size_t line_no, const std::string& name)
      : Error("missing field \"" + name + "\" at line " + std::to_string(line_no)),
        field(name) {}
};
struct InvalidSpec : Error {
  explicit InvalidSpec(const std::string& reason) : Error("invalid spec: " + reason) {}
};
struct TooSmall : Error {
  explicit TooSmall(const std::string& why) : Error("dataset too small: " + why) {}
};

// --- encoder ---
struct EmptyInput : Error {
  EmptyInput() : Error("cannot encode an empty token sequence") {}
};
struct DegenerateNorm : Error {
  DegenerateNorm() : Error("pre-normalization norm below 1e-12") {}
};
struct NotNormalized : Error {
  NotNormalized() : Error("input vector is not unit-norm") {}
};

// --- contrastive ---
struct NoNegatives : Error {
  std::size_t item;
  explicit NoNegatives(std::size_t item_index)
      : Error("item " + std::to_string(item_index) + " has no hard negatives"),
        item(item_index) {}
};
struct NonFinite : Error {
  explicit NonFinite(const std::string& where) : Error("non-finite value in " + where) {}
};
struct MixedTasks : Error {
  MixedTasks() : Error("homogeneous batch contains more than one task label") {}
};
struct LengthMismatch : Error {
  explicit LengthMismatch(const std::string& why) : Error("length mismatch: " + why) {}
};

// --- dro ---
struct MissingTask : Error {
  std::string task;
  explicit MissingTask(const std::string& label)
      : Error("task \"" + label + "\" missing"), task(label) {}
};
struct ZeroVector : Error {
  ZeroVector() : Error("cannot normalize an all-zero measurement vector") {}
};
struct GapInLog : Error {
  std::uint64_t step;
  explicit GapInLog(std::uint64_t at_step)
      : Error("gap in measurement log at step " + std::to_string(at_step)), step(at_step) {}
};

// --- sampler ---
struct EmptyDataset : Error {
  std::string task;
  explicit EmptyDataset(const std::string& label)
      : Error("dataset for task \"" + label + "\" is empty"), task(label) {}
};

// --- trainer ---
struct OutOfRange : Error {
  explicit OutOfRange(const std::string& why) : Error("out of range: " + why) {}
};
struct ConfigError : Error {
  explicit ConfigError(const std::string& why) : Error("config error: " + why) {}
};

// --- evalkit ---
struct EmptyPool : Error {
  EmptyPool() : Error("document pool is empty") {}
};
struct NoRelevant : Error {
  explicit NoRelevant(const std::string& qid)
      : Error("query \"" + qid + "\" has no relevant documents") {}
};

// --- io ---
struct IoError : Error {
  explicit IoError(const std::string& why) : Error("io error: " + why) {}
};

}  // namespace tdro
