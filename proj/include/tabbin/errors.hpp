/*
 * Copyright 2026 The tabbin Authors.
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     https://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#ifndef TABBIN_ERRORS_HPP_
#define TABBIN_ERRORS_HPP_

#include <stdexcept>
#include <string>

namespace tabbin {

// Base of every error thrown by the library. The CLI maps subclasses of
// ValidationError to exit code 1 and everything else to exit code 2.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ValidationError : public Error {
 public:
  using Error::Error;
};

#define TABBIN_DEFINE_ERROR(Name, Base)    \
  class Name : public Base {               \
   public:                                 \
    using Base::Base;                      \
  };

// Input validation.
TABBIN_DEFINE_ERROR(SchemaError, ValidationError)
TABBIN_DEFINE_ERROR(ShapeError, ValidationError)
TABBIN_DEFINE_ERROR(ValueError, ValidationError)
TABBIN_DEFINE_ERROR(ConfigError, ValidationError)
TABBIN_DEFINE_ERROR(RangeOrderError, ValidationError)
TABBIN_DEFINE_ERROR(FormatError, ValidationError)
TABBIN_DEFINE_ERROR(ChecksumError, ValidationError)
TABBIN_DEFINE_ERROR(UsageError, ValidationError)

// Runtime failures.
TABBIN_DEFINE_ERROR(OverflowError, Error)
TABBIN_DEFINE_ERROR(IndexError, Error)
TABBIN_DEFINE_ERROR(CellTooLargeError, Error)
TABBIN_DEFINE_ERROR(NonFiniteError, Error)
TABBIN_DEFINE_ERROR(TooFewCellsError, Error)
TABBIN_DEFINE_ERROR(NoSequencesError, Error)
TABBIN_DEFINE_ERROR(EmptyUnitError, Error)
TABBIN_DEFINE_ERROR(MissingModelError, Error)
TABBIN_DEFINE_ERROR(ZeroVectorError, Error)
TABBIN_DEFINE_ERROR(EmptyExemplarError, Error)
TABBIN_DEFINE_ERROR(NoRelevantError, Error)
TABBIN_DEFINE_ERROR(IoError, Error)

#undef TABBIN_DEFINE_ERROR

}  // namespace tabbin

#endif  // TABBIN_ERRORS_HPP_
