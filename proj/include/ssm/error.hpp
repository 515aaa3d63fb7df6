/*
 * atria-ssm - statistical shape modelling and atrial ECG simulation.
 *
 * Copyright 2026 The atria-ssm Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 * http://www.apache.org/licenses/LICENSE-2.0
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

namespace ssm {

/// Base class for all errors raised by the library.
class Error : public std::runtime_error
{
public:
    using std::runtime_error::runtime_error;
};

/// Malformed input data: wrong sizes, out-of-range indices, degenerate geometry.
class InvalidInput : public Error
{
public:
    using Error::Error;
};

/// A text or binary file could not be parsed. The message carries the location.
class ParseError : public Error
{
public:
    ParseError(const std::string& source, std::size_t line, const std::string& what)
        : Error(source + (line > 0 ? ":" + std::to_string(line) : std::string()) + ": " + what), line_(line)
    {
    }

    std::size_t line() const noexcept { return line_; }

private:
    std::size_t line_ = 0;
};

/// A numerical procedure failed (rank deficiency, divergence, indefinite matrix).
class NumericalError : public Error
{
public:
    using Error::Error;
};

} // namespace ssm
