/*
 * Copyright 2026 The qshape Authors.
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */
#pragma once

#include <stdexcept>
#include <string>

namespace qshape {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Precondition or configuration violation.
class InvalidArgument : public Error {
 public:
  using Error::Error;
};

/// A NaN or Inf reached a place that requires finite values.
class NonFiniteError : public Error {
 public:
  using Error::Error;
};

/// Quantized-loss is undefined for an all-zero tensor.
class ZeroNormError : public Error {
 public:
  using Error::Error;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

/// Grouped quantization requested where the BN merge cannot be applied.
class FoldError : public Error {
 public:
  using Error::Error;
};

/// Malformed file, unknown schema version, or I/O failure.
class FormatError : public Error {
 public:
  using Error::Error;
};

/// Training produced a non-finite loss or activation.
class DivergenceError : public Error {
 public:
  using Error::Error;
};

}  // namespace qshape
