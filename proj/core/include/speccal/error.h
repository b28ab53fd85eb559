/*
 * Copyright 2026 The speccal Authors.
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

#ifndef SPECCAL_ERROR_H_
#define SPECCAL_ERROR_H_

#include <stdexcept>
#include <string>

namespace speccal {

// Bad input, contract violation or protocol breach (CLI exit code 1).
class ValidationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Split-discipline violation, e.g. fitting a calibrator on test data.
class ProtocolError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

// Filesystem or format failure (CLI exit code 2).
class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace speccal

#endif  // SPECCAL_ERROR_H_
