#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace nuanced {

/// Base of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// ── nuance core ─────────────────────────────────────────────────

class DimensionMismatch : public Error {
 public:
  DimensionMismatch(std::size_t expected, std::size_t got)
      : Error("dimension mismatch: expected " + std::to_string(expected) + ", got " +
              std::to_string(got)),
        expected_(expected),
        got_(got) {}
  std::size_t expected() const noexcept { return expected_; }
  std::size_t got() const noexcept { return got_; }

 private:
  std::size_t expected_;
  std::size_t got_;
};

class NonStochasticColumn : public Error {
 public:
  NonStochasticColumn(std::size_t column, double sum)
      : Error("column " + std::to_string(column) + " sums to " + std::to_string(sum)),
        column_(column),
        sum_(sum) {}
  std::size_t column() const noexcept { return column_; }
  double sum() const noexcept { return sum_; }

 private:
  std::size_t column_;
  double sum_;
};

class NegativeEntry : public Error {
 public:
  NegativeEntry(std::size_t row, std::size_t column)
      : Error("entry (" + std::to_string(row) + ", " + std::to_string(column) +
              ") is outside [0, 1]"),
        row_(row),
        column_(column) {}
  std::size_t row() const noexcept { return row_; }
  std::size_t column() const noexcept { return column_; }

 private:
  std::size_t row_;
  std::size_t column_;
};

class InvalidDistribution : public Error {
 public:
  using Error::Error;
};

class NoConvergence : public Error {
 public:
  using Error::Error;
};

class NotOverridableTone : public Error {
 public:
  NotOverridableTone() : Error("only humorous or aggressive tones override the tone flags") {}
};

class InvalidNuanceSpec : public Error {
 public:
  using Error::Error;
};

// ── knowledge base ──────────────────────────────────────────────

class OntologyError : public Error {
 public:
  using Error::Error;
};

class CycleDetected : public OntologyError {
 public:
  explicit CycleDetected(const std::string& id) : OntologyError("cycle through topic '" + id + "'") {}
};

class DanglingParent : public OntologyError {
 public:
  DanglingParent(const std::string& id, const std::string& parent)
      : OntologyError("topic '" + id + "' names missing parent '" + parent + "'") {}
};

class DuplicateId : public OntologyError {
 public:
  explicit DuplicateId(const std::string& id) : OntologyError("duplicate topic id '" + id + "'") {}
};

class UnknownTopic : public Error {
 public:
  explicit UnknownTopic(const std::string& id) : Error("unknown topic '" + id + "'"), id_(id) {}
  const std::string& id() const noexcept { return id_; }

 private:
  std::string id_;
};

// ── prompt builder ──────────────────────────────────────────────

class EmptyCandidates : public Error {
 public:
  EmptyCandidates() : Error("topic prompt needs at least one candidate") {}
};

class EmptySentence : public Error {
 public:
  EmptySentence() : Error("user sentence is empty") {}
};

class EmptyPool : public Error {
 public:
  EmptyPool() : Error("filler pool is empty") {}
};

class InvalidState : public Error {
 public:
  using Error::Error;
};

class TemplateError : public Error {
 public:
  using Error::Error;
};

// ── llm gateway ─────────────────────────────────────────────────

class BackendError : public Error {
 public:
  using Error::Error;
};

class BackendUnreachable : public BackendError {
 public:
  using BackendError::BackendError;
};

class Timeout : public BackendError {
 public:
  using BackendError::BackendError;
};

class MalformedUpstreamResponse : public BackendError {
 public:
  using BackendError::BackendError;
};

class EmptyReply : public Error {
 public:
  EmptyReply() : Error("model reply is empty") {}
};

// ── dialogue manager / hub ──────────────────────────────────────

class PhaseOneMissing : public Error {
 public:
  PhaseOneMissing() : Error("dialogue state carries no completed first request") {}
};

class StateFormatError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

// ── metrics ─────────────────────────────────────────────────────

class EmptyLog : public Error {
 public:
  EmptyLog() : Error("log contains no turns") {}
};

class LengthMismatch : public Error {
 public:
  LengthMismatch(std::size_t log, std::size_t script)
      : Error("log has " + std::to_string(log) + " turns but script has " +
              std::to_string(script) + " sentences") {}
};

}  // namespace nuanced
