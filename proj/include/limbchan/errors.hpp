// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>

namespace limbchan {

/// Base class for all library errors.
class Error : public std::runtime_error {
public:
  explicit Error(const std::string &msg) : std::runtime_error(msg) {}
};

// -- parser errors ----------------------------------------------------------

class MalformedHeader : public Error {
public:
  explicit MalformedHeader(const std::string &msg) : Error("malformed header: " + msg) {}
};

class UnsupportedFormat : public Error {
public:
  explicit UnsupportedFormat(const std::string &msg) : Error("unsupported format: " + msg) {}
};

class TruncatedPayload : public Error {
public:
  explicit TruncatedPayload(const std::string &msg) : Error("truncated payload: " + msg) {}
};

class ZeroGain : public Error {
public:
  explicit ZeroGain(const std::string &msg) : Error("zero gain: " + msg) {}
};

// -- preprocessing errors ---------------------------------------------------

class EmptySignal : public Error {
public:
  explicit EmptySignal(const std::string &msg) : Error("empty signal: " + msg) {}
};

class UnknownLead : public Error {
public:
  explicit UnknownLead(const std::string &msg) : Error("unknown lead: " + msg) {}
};

// -- tensor / graph errors --------------------------------------------------

class ShapeMismatch : public Error {
public:
  explicit ShapeMismatch(const std::string &msg) : Error("shape mismatch: " + msg) {}
};

class DegenerateBatch : public Error {
public:
  explicit DegenerateBatch(const std::string &msg) : Error("degenerate batch: " + msg) {}
};

class IndexOutOfRange : public Error {
public:
  explicit IndexOutOfRange(const std::string &msg) : Error("index out of range: " + msg) {}
};

class NonScalarLoss : public Error {
public:
  explicit NonScalarLoss(const std::string &msg) : Error("non-scalar loss: " + msg) {}
};

// -- training / dataset errors ----------------------------------------------

class EmptyDataset : public Error {
public:
  explicit EmptyDataset(const std::string &msg) : Error("empty dataset: " + msg) {}
};

class SingleClassDataset : public Error {
public:
  explicit SingleClassDataset(const std::string &msg) : Error("single-class dataset: " + msg) {}
};

// -- evaluation errors ------------------------------------------------------

class LengthMismatch : public Error {
public:
  explicit LengthMismatch(const std::string &msg) : Error("length mismatch: " + msg) {}
};

class EmptyInput : public Error {
public:
  explicit EmptyInput(const std::string &msg) : Error("empty input: " + msg) {}
};

// -- experiment errors ------------------------------------------------------

class UnknownScenario : public Error {
public:
  explicit UnknownScenario(const std::string &msg) : Error("unknown scenario: " + msg) {}
};

class InvalidSpec : public Error {
public:
  explicit InvalidSpec(const std::string &msg) : Error("invalid spec: " + msg) {}
};

// -- I/O ----------------------------------------------------------------------

class IoError : public Error {
public:
  explicit IoError(const std::string &msg) : Error("i/o error: " + msg) {}
};

} // namespace limbchan
