# This file is part of qslr
#
# qslr is free software: you can redistribute it and/or modify
# it under the terms of the GNU Lesser General Public License as published by
# the Free Software Foundation, either version 3 of the License, or
# (at your option) any later version.
#
# This program is distributed in the hope that it will be useful,
# but WITHOUT ANY WARRANTY; without even the implied warranty of
# MERCHANTABILITY or FITNESS FOR A PARTICULAR PURPOSE.  See the
# GNU Lesser General Public License for more details.
#
# You should have received a copy of the GNU Lesser General Public License
# along with this program.  If not, see <https://www.gnu.org/licenses/>.
#
#
# Copyright 2024 The qslr authors


# This file regroups the exception classes raised by the quaternion algebra,
# the solvers and the command line front-end.

import unittest
from typing import Optional


class QslrError(Exception):
    pass


class ShapeError(QslrError, ValueError):
    pass


class DomainError(QslrError, ValueError):
    pass


class ConfigError(QslrError, ValueError):
    def __init__(
        self, message: str, line: Optional[int] = None, column: Optional[int] = None
    ):
        super().__init__(message)
        self.message = message
        self.line = line
        self.column = column

    def __str__(self):
        if self.line is None:
            return self.message
        return f"{self.message} (line {self.line}, column {self.column})"


class SingularityError(ConfigError):
    pass


class NumericalError(QslrError, RuntimeError):
    def __init__(self, message: str, diagnostics: Optional[dict] = None):
        super().__init__(message)
        self.message = message
        self.diagnostics = dict(diagnostics or {})

    def __str__(self):
        if not self.diagnostics:
            return self.message
        details = ", ".join(f"{k}={v!r}" for k, v in self.diagnostics.items())
        return f"{self.message} [{details}]"


class DivergenceError(QslrError, RuntimeError):
    """Raised when solver iterates stop being finite or blow up."""

    def __init__(self, message: str, trace=None):
        super().__init__(message)
        self.trace = trace


class FileFormatError(QslrError, OSError):
    def __init__(self, path, reason: str):
        super().__init__(reason)
        self.path = str(path)
        self.reason = reason

    def __str__(self):
        return f"{self.path}: {self.reason}"


class TestExceptions(unittest.TestCase):
    def test_config_error_location(self):
        self.assertEqual(str(ConfigError("bad key")), "bad key")
        self.assertEqual(
            str(ConfigError("malformed", line=3, column=7)),
            "malformed (line 3, column 7)",
        )
        self.assertIsInstance(SingularityError("x"), ValueError)

    def test_numerical_error_diagnostics(self):
        e = NumericalError("svd failed", {"rows": 2})
        self.assertEqual(e.diagnostics, {"rows": 2})
        self.assertIn("rows=2", str(e))

    def test_file_format_error(self):
        e = FileFormatError("a.png", "16-bit depth is not supported")
        self.assertIsInstance(e, OSError)
        self.assertEqual(str(e), "a.png: 16-bit depth is not supported")


if __name__ == "__main__":
    unittest.main()
