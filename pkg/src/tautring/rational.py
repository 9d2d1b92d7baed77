"""Exact rational scalars and small dense linear algebra over Q.

Rationals are ``fractions.Fraction`` values: arbitrary precision, always
reduced, positive denominator.  Matrices are dense; forward elimination is
fraction-free (Bareiss) on a denominator-cleared integer copy so that
intermediate entries stay single integers instead of growing fractions.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from math import gcd
from typing import Sequence

Rational = Fraction


def rat(value, den=None) -> Fraction:
    """Build a Fraction from ints, strings like "3/4", or another Fraction."""
    if den is not None:
        return Fraction(value, den)
    if isinstance(value, str):
        return Fraction(value)
    return Fraction(value)


def format_rat(x: Fraction) -> str:
    """Serialize as "p/q", omitting the denominator when it is 1."""
    x = Fraction(x)
    if x.denominator == 1:
        return str(x.numerator)
    return f"{x.numerator}/{x.denominator}"


def parse_rat(s: str) -> Fraction:
    return Fraction(s.strip())


class RatMatrix:
    """Dense matrix of Fractions with fixed dimensions."""

    def __init__(self, rows: int, cols: int, entries=None):
        if rows < 0 or cols < 0:
            raise ValueError("negative dimensions")
        self.rows = rows
        self.cols = cols
        if entries is None:
            self._m = [[Fraction(0)] * cols for _ in range(rows)]
        else:
            if len(entries) != rows or any(len(r) != cols for r in entries):
                raise ValueError("entry shape does not match dimensions")
            self._m = [[Fraction(x) for x in row] for row in entries]

    @classmethod
    def from_rows(cls, entries: Sequence[Sequence]) -> "RatMatrix":
        rows = len(entries)
        cols = len(entries[0]) if rows else 0
        return cls(rows, cols, entries)

    @classmethod
    def identity(cls, n: int) -> "RatMatrix":
        m = cls(n, n)
        for i in range(n):
            m[i, i] = Fraction(1)
        return m

    def __getitem__(self, rc):
        r, c = rc
        return self._m[r][c]

    def __setitem__(self, rc, value):
        r, c = rc
        self._m[r][c] = Fraction(value)

    def row(self, r: int) -> list[Fraction]:
        return list(self._m[r])

    def transpose(self) -> "RatMatrix":
        return RatMatrix(self.cols, self.rows,
                         [[self._m[r][c] for r in range(self.rows)]
                          for c in range(self.cols)])

    def mul_vector(self, v: Sequence) -> list[Fraction]:
        if len(v) != self.cols:
            raise ValueError("dimension mismatch")
        vv = [Fraction(x) for x in v]
        return [sum((self._m[r][c] * vv[c] for c in range(self.cols)),
                    Fraction(0)) for r in range(self.rows)]

    def __eq__(self, other):
        return (isinstance(other, RatMatrix) and self.rows == other.rows
                and self.cols == other.cols and self._m == other._m)

    def __repr__(self):
        body = "; ".join(" ".join(format_rat(x) for x in row) for row in self._m)
        return f"RatMatrix({self.rows}x{self.cols}: {body})"


@dataclass
class SolveResult:
    """Outcome of an exact linear solve.

    ``status`` is one of "unique", "underdetermined", "inconsistent".
    ``solution`` is a particular solution when one exists; ``kernel``
    is a basis of the homogeneous solution space (empty when unique).
    """

    status: str
    solution: list[Fraction] | None
    kernel: list[list[Fraction]]


def _bareiss_echelon(mat: list[list[int]]) -> tuple[list[list[int]], list[int]]:
    """Forward fraction-free elimination to row echelon form.

    Classical Bareiss: every division by the previous pivot is exact, so
    all intermediate entries are integers of bounded size.  Returns the
    echelon rows and the pivot column list.
    """
    m = [row[:] for row in mat]
    nrows = len(m)
    ncols = len(m[0]) if nrows else 0
    pivots: list[int] = []
    prev = 1
    r = 0
    for c in range(ncols):
        pr = next((i for i in range(r, nrows) if m[i][c] != 0), None)
        if pr is None:
            continue
        m[r], m[pr] = m[pr], m[r]
        piv = m[r][c]
        for i in range(r + 1, nrows):
            fi = m[i][c]
            for j in range(ncols):
                m[i][j] = (m[i][j] * piv - fi * m[r][j]) // prev
        prev = piv
        pivots.append(c)
        r += 1
        if r == nrows:
            break
    return m, pivots


def _cleared(matrix_rows: Sequence[Sequence[Fraction]]) -> list[list[int]]:
    rows = []
    for row in matrix_rows:
        mult = 1
        for x in row:
            f = Fraction(x)
            mult = mult * f.denominator // gcd(mult, f.denominator)
        rows.append([int(Fraction(x) * mult) for x in row])
    return rows


def rank(matrix: RatMatrix) -> int:
    """Exact rank over Q."""
    if matrix.rows == 0 or matrix.cols == 0:
        return 0
    _, pivots = _bareiss_echelon(_cleared(matrix._m))
    return len(pivots)


def solve_linear(matrix: RatMatrix, rhs: Sequence) -> SolveResult:
    """Solve M x = b exactly.

    Distinguishes a unique solution, an inconsistent system, and an
    underdetermined one; in the last case a particular solution plus a
    kernel basis is returned.
    """
    if len(rhs) != matrix.rows:
        raise ValueError("dimension mismatch: rhs length != row count")
    n = matrix.cols
    if matrix.rows == 0:
        kernel = [[Fraction(i == j) for j in range(n)] for i in range(n)]
        status = "underdetermined" if n else "unique"
        return SolveResult(status, [Fraction(0)] * n, kernel)
    aug = [list(matrix._m[r]) + [Fraction(rhs[r])] for r in range(matrix.rows)]
    ech, pivots = _bareiss_echelon(_cleared(aug))
    if n in pivots:
        return SolveResult("inconsistent", None, [])
    # back substitution in exact fractions on the echelon rows
    rows = [[Fraction(x) for x in ech[i]] for i in range(len(pivots))]
    free_cols = [c for c in range(n) if c not in pivots]

    def back_solve(free_assign: dict[int, Fraction], with_rhs: bool) -> list[Fraction]:
        x = [Fraction(0)] * n
        for fc, val in free_assign.items():
            x[fc] = val
        for i in range(len(pivots) - 1, -1, -1):
            c = pivots[i]
            s = rows[i][n] if with_rhs else Fraction(0)
            for j in range(c + 1, n):
                s -= rows[i][j] * x[j]
            x[c] = s / rows[i][c]
        return x

    solution = back_solve({fc: Fraction(0) for fc in free_cols}, True)
    kernel = [back_solve({c: Fraction(c == fc) for c in free_cols}, False)
              for fc in free_cols]
    if free_cols:
        return SolveResult("underdetermined", solution, kernel)
    return SolveResult("unique", solution, [])
