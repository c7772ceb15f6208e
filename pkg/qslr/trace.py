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

import csv
import io
import math
import unittest
from dataclasses import astuple, dataclass, fields
from pathlib import Path
from typing import Iterator, List, TextIO, Union

from .exceptions import FileFormatError


@dataclass(frozen=True)
class IterationRecord:
    """
    One outer iteration of a solver. gap2 and dLambda2 are 0 for denoising;
    merit is NaN until enough history exists to evaluate it.
    """

    k: int
    eps_k: float
    gap1: float
    gap2: float
    objective: float
    merit: float
    dX: float
    dW: float
    dLambda1: float
    dLambda2: float
    wall_ms: float


CSV_COLUMNS = tuple(f.name for f in fields(IterationRecord))


def _format(value) -> str:
    if isinstance(value, int):
        return str(value)
    # 17 significant digits round-trip every double.
    return format(value, ".17g")


class IterationTrace:
    """
    Append-only sequence of :class:`IterationRecord` with strictly increasing k.
    """

    def __init__(self, records=()):
        self._records: List[IterationRecord] = []
        for r in records:
            self.append(r)

    def append(self, record: IterationRecord):
        """
        :raises ValueError: If record.k does not increase.
        """
        if self._records and record.k <= self._records[-1].k:
            raise ValueError(
                f"Trace iteration {record.k} does not follow {self._records[-1].k}"
            )
        self._records.append(record)

    def __len__(self):
        return len(self._records)

    def __iter__(self) -> Iterator[IterationRecord]:
        return iter(self._records)

    def __getitem__(self, i) -> IterationRecord:
        return self._records[i]

    @property
    def last(self) -> IterationRecord:
        return self._records[-1]

    def column(self, name: str) -> List[float]:
        return [getattr(r, name) for r in self._records]

    def write_csv(self, stream: TextIO):
        writer = csv.writer(stream, lineterminator="\n")
        writer.writerow(CSV_COLUMNS)
        for r in self._records:
            writer.writerow([_format(v) for v in astuple(r)])

    def to_csv(self) -> str:
        buffer = io.StringIO()
        self.write_csv(buffer)
        return buffer.getvalue()

    def save(self, path: Union[str, Path]):
        try:
            with open(path, "w", newline="") as f:
                self.write_csv(f)
        except OSError as e:
            raise FileFormatError(path, f"cannot write trace: {e.strerror}") from e

    @classmethod
    def read_csv(cls, stream: TextIO, path="<stream>") -> "IterationTrace":
        """
        :raises FileFormatError: If the header or a row is malformed.
        """
        reader = csv.reader(stream)
        header = next(reader, None)
        if header is None or tuple(header) != CSV_COLUMNS:
            raise FileFormatError(path, "not a solver trace, bad CSV header")
        trace = cls()
        for line, row in enumerate(reader, start=2):
            try:
                values = [int(row[0])] + [float(v) for v in row[1:]]
                trace.append(IterationRecord(*values))
            except (ValueError, TypeError) as e:
                raise FileFormatError(path, f"bad trace row {line}: {e}") from e
        return trace

    @classmethod
    def load(cls, path: Union[str, Path]) -> "IterationTrace":
        try:
            with open(path, newline="") as f:
                return cls.read_csv(f, path)
        except OSError as e:
            raise FileFormatError(path, f"cannot read trace: {e.strerror}") from e

    def plot_rows(self):
        """
        :return: (k, ‖ΔX‖ + ‖ΔW‖ + ‖ΔΛ‖) pairs, one per iteration.
        """
        return [(r.k, r.dX + r.dW + r.dLambda1 + r.dLambda2) for r in self._records]


def write_plotdata(trace: IterationTrace, stream: TextIO):
    writer = csv.writer(stream, lineterminator="\n")
    writer.writerow(("k", "delta_sum"))
    for k, total in trace.plot_rows():
        writer.writerow((k, _format(total)))


def _record(k, merit=float("nan")):
    return IterationRecord(k, 0.5 / k, 0.1, 0.0, 2.0, merit, 0.25, 0.125, 1 / 3, 0.0, 0.0)


class TestTrace(unittest.TestCase):
    def test_increasing_k(self):
        trace = IterationTrace([_record(1), _record(2)])
        with self.assertRaises(ValueError):
            trace.append(_record(2))
        self.assertEqual(len(trace), 2)
        self.assertEqual(trace.last.k, 2)

    def test_csv_round_trip(self):
        trace = IterationTrace([_record(1), _record(2, merit=3.5), _record(5, merit=1.0)])
        text = trace.to_csv()
        self.assertTrue(text.startswith(",".join(CSV_COLUMNS) + "\n"))
        back = IterationTrace.read_csv(io.StringIO(text))
        self.assertEqual(back.column("eps_k"), trace.column("eps_k"))
        self.assertEqual(back.column("dLambda1"), [1 / 3] * 3)
        self.assertTrue(math.isnan(back[0].merit))
        self.assertEqual(back.to_csv(), text)

    def test_bad_csv(self):
        with self.assertRaises(FileFormatError):
            IterationTrace.read_csv(io.StringIO("a,b\n1,2\n"))
        header = ",".join(CSV_COLUMNS)
        with self.assertRaises(FileFormatError):
            IterationTrace.read_csv(io.StringIO(header + "\n1,x\n"))

    def test_plotdata(self):
        trace = IterationTrace([_record(1), _record(2), _record(3)])
        out = io.StringIO()
        write_plotdata(trace, out)
        lines = out.getvalue().splitlines()
        self.assertEqual(len(lines), 4)
        self.assertEqual(lines[1], "1," + _format(0.25 + 0.125 + 1 / 3))


if __name__ == "__main__":
    unittest.main()
