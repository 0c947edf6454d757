# Copyright 2025 The orthogonal-kge Authors.
#
# Licensed under the Apache License, Version 2.0 (the "License");
# you may not use this file except in compliance with the License.
# You may obtain a copy of the License at
#
#   http://www.apache.org/licenses/LICENSE-2.0
#
# Unless required by applicable law or agreed to in writing, software
# distributed under the License is distributed on an "AS IS" BASIS,
# WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
# See the License for the specific language governing permissions and
# limitations under the License.
from __future__ import annotations

from typing import Any, Sequence


class OrthoKGEError(Exception):
    """Base class for every error raised on purpose by orthokge."""


class ShapeError(OrthoKGEError, ValueError):
    """Raised when array dimensions do not line up."""

    def __init__(
        self,
        *args: Any,
        expected: Any | None = None,
        actual: Any | None = None,
    ):
        super().__init__(*args)
        self.expected = expected
        self.actual = actual

    def __str__(self) -> str:
        parts = [super().__str__()]
        if self.expected is not None or self.actual is not None:
            parts.append(f"(expected {self.expected}, got {self.actual})")
        return " ".join(parts)


class NumericError(OrthoKGEError, ArithmeticError):
    """Raised on non-finite values or numerical breakdown."""


class DegeneracyError(NumericError):
    """Raised when Gram-Schmidt meets a (numerically) dependent column."""

    def __init__(self, *args: Any, column: int | None = None):
        super().__init__(*args)
        self.column = column


class PreconditionError(OrthoKGEError, ValueError):
    """Raised when an input violates a geometric precondition."""

    def __init__(self, *args: Any, residual: float | None = None):
        super().__init__(*args)
        self.residual = residual

    def __str__(self) -> str:
        if self.residual is None:
            return super().__str__()
        return f"{super().__str__()} (residual={self.residual:.3e})"


class ConfigError(OrthoKGEError, ValueError):
    """Raised for invalid or unknown configuration values."""


class ParseError(OrthoKGEError, ValueError):
    """Raised for malformed triple files."""

    def __init__(
        self,
        *args: Any,
        path: str | None = None,
        line_number: int | None = None,
        line: str | None = None,
    ):
        super().__init__(*args)
        self.path = path
        self.line_number = line_number
        self.line = line

    def __str__(self) -> str:
        parts = [super().__str__()]
        if self.path is not None:
            parts.append(f"\nFile: {self.path}")
        if self.line_number is not None:
            parts.append(f"\nLine {self.line_number}: {self.line!r}")
        return "".join(parts)


class VocabularyError(OrthoKGEError, KeyError):
    """Raised for entity or relation names that are not in the vocabulary."""

    def __init__(
        self,
        *args: Any,
        name: str | None = None,
        suggestions: Sequence[str] = (),
    ):
        super().__init__(*args)
        self.name = name
        self.suggestions = list(suggestions)

    def __str__(self) -> str:
        message = str(self.args[0]) if self.args else f"unknown name {self.name!r}"
        if self.suggestions:
            message += f" (did you mean: {', '.join(self.suggestions)}?)"
        return message


class ProtocolError(OrthoKGEError, RuntimeError):
    """Raised when an evaluation or analysis protocol is violated."""


class CompatibilityError(OrthoKGEError, ValueError):
    """Raised when a checkpoint does not match the data or format it is used with."""
