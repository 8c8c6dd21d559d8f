// Copyright 2026 The cbfllm Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <stdexcept>
#include <string>

namespace cbfllm {

// Root of every error thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// An argument lies outside the domain of an operation (token id out of range,
// invalid class scores, bad configuration value).
class DomainError : public Error {
 public:
  using Error::Error;
};

// A collaborator broke its interface contract (wrong logit length, NaN logits).
class ContractError : public Error {
 public:
  using Error::Error;
};

// The normalizer received a vector with no positive mass.
class NormalizationError : public Error {
 public:
  using Error::Error;
};

// The language-constraint function failed or produced NaN.
class ConstraintEvaluationError : public Error {
 public:
  using Error::Error;
};

// Transport-level failure talking to the inference bridge.
class RemoteError : public Error {
 public:
  using Error::Error;
};

// The bridge answered, but the payload violates the wire protocol.
class ProtocolError : public Error {
 public:
  using Error::Error;
};

// An experiment spec file failed to parse or validate. The message names the
// offending field (or line/column for syntax errors).
class SpecError : public Error {
 public:
  using Error::Error;
};

}  // namespace cbfllm
