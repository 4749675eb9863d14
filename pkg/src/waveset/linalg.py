"""Small dense matrices with exact rational arithmetic, and full-rank lattices.

Matrices keep ``fractions.Fraction`` entries whenever the input is rational
("exact mode"); anything built from irrational floats degrades to float
entries ("general mode").  All exact-mode operations (det, inverse, products,
powers, lattice folding) are performed without rounding, which is what makes
the tiling checks in the rest of the package exact rather than approximate.
"""

from __future__ import annotations

import math
from fractions import Fraction
from typing import Iterable, Optional, Sequence

import numpy as np

from .errors import EigenSolveError, InputFormatError

Scalar = Fraction  # exact entries; float is the degraded mode

_DET_TOL = 1e-12


def _as_scalar(x):
    if isinstance(x, Fraction):
        return x
    if isinstance(x, int):
        return Fraction(x)
    if isinstance(x, str):
        return Fraction(x)
    if isinstance(x, float):
        if x == int(x):
            return Fraction(int(x))
        # keep genuine non-integers as floats (general mode)
        return x
    raise InputFormatError(f"cannot interpret matrix entry {x!r}")


def is_dyadic(q: Fraction) -> bool:
    """True if q = p / 2^k."""
    d = q.denominator
    return d & (d - 1) == 0


def dyadic_exponent(q: Fraction) -> int:
    """Smallest k >= 0 with q * 2^k integral (q must be dyadic)."""
    assert is_dyadic(q), q
    return q.denominator.bit_length() - 1


class Matrix:
    """Immutable n x n matrix, exact when all entries are rational."""

    __slots__ = ("n", "rows", "exact")

    def __init__(self, rows: Sequence[Sequence]):
        rows = tuple(tuple(_as_scalar(x) for x in row) for row in rows)
        n = len(rows)
        if n == 0 or any(len(r) != n for r in rows):
            raise InputFormatError("matrix must be square and non-empty")
        self.n = n
        self.rows = rows
        self.exact = all(isinstance(x, Fraction) for row in rows for x in row)

    # -- constructors ------------------------------------------------------

    @classmethod
    def identity(cls, n: int) -> "Matrix":
        return cls([[Fraction(int(i == j)) for j in range(n)] for i in range(n)])

    @classmethod
    def diagonal(cls, diag: Sequence) -> "Matrix":
        n = len(diag)
        return cls([[diag[i] if i == j else 0 for j in range(n)] for i in range(n)])

    @classmethod
    def scalar(cls, n: int, value) -> "Matrix":
        return cls.diagonal([value] * n)

    @classmethod
    def rotation2d(cls, theta: float) -> "Matrix":
        """2-D rotation; exact for quarter turns, float otherwise."""
        quarter = theta / (math.pi / 2)
        if abs(quarter - round(quarter)) < 1e-15:
            k = round(quarter) % 4
            c, s = [(1, 0), (0, 1), (-1, 0), (0, -1)][k]
            return cls([[c, -s], [s, c]])
        c, s = math.cos(theta), math.sin(theta)
        return cls([[c, -s], [s, c]])

    # -- basic structure ---------------------------------------------------

    def __eq__(self, other):
        return isinstance(other, Matrix) and self.rows == other.rows

    def __hash__(self):
        return hash(self.rows)

    def __repr__(self):
        return f"Matrix({[[str(x) for x in row] for row in self.rows]})"

    def entry(self, i: int, j: int):
        return self.rows[i][j]

    def to_numpy(self) -> np.ndarray:
        return np.array([[float(x) for x in row] for row in self.rows], dtype=float)

    def close_to(self, other: "Matrix", tol: float = 1e-9) -> bool:
        if self.n != other.n:
            return False
        return all(
            abs(float(a) - float(b)) <= tol
            for ra, rb in zip(self.rows, other.rows)
            for a, b in zip(ra, rb)
        )

    def key(self, tol: float = 1e-9) -> tuple:
        """Rounded row-major entry tuple; used for deduplication/ordering."""
        return tuple(round(float(x) / tol) for row in self.rows for x in row)

    # -- arithmetic --------------------------------------------------------

    @property
    def T(self) -> "Matrix":
        return Matrix(tuple(zip(*self.rows)))

    def __matmul__(self, other: "Matrix") -> "Matrix":
        n = self.n
        assert other.n == n
        return Matrix(
            [
                [sum(self.rows[i][k] * other.rows[k][j] for k in range(n)) for j in range(n)]
                for i in range(n)
            ]
        )

    def apply(self, vec: Sequence) -> tuple:
        """Matrix-vector product; exact when both sides are rational."""
        n = self.n
        return tuple(sum(self.rows[i][k] * vec[k] for k in range(n)) for i in range(n))

    def det(self):
        """Determinant; Fraction in exact mode, float otherwise."""
        if not self.exact:
            return float(np.linalg.det(self.to_numpy()))
        # fraction-free Gaussian elimination is unnecessary at n <= 4; plain
        # Fraction elimination is exact anyway
        n = self.n
        a = [list(row) for row in self.rows]
        det = Fraction(1)
        for col in range(n):
            piv = None
            for r in range(col, n):
                if a[r][col] != 0:
                    piv = r
                    break
            if piv is None:
                return Fraction(0)
            if piv != col:
                a[col], a[piv] = a[piv], a[col]
                det = -det
            det *= a[col][col]
            inv = Fraction(1) / a[col][col]
            for r in range(col + 1, n):
                lead = a[r][col]
                if lead == 0:
                    continue
                f = lead * inv
                for c in range(col, n):
                    a[r][c] -= f * a[col][c]
        return det

    def inv(self) -> "Matrix":
        if not self.exact:
            return Matrix(np.linalg.inv(self.to_numpy()).tolist())
        n = self.n
        a = [list(row) + [Fraction(int(i == j)) for j in range(n)] for i, row in enumerate(self.rows)]
        for col in range(n):
            piv = None
            for r in range(col, n):
                if a[r][col] != 0:
                    piv = r
                    break
            if piv is None:
                raise ZeroDivisionError("singular matrix")
            a[col], a[piv] = a[piv], a[col]
            inv = Fraction(1) / a[col][col]
            a[col] = [x * inv for x in a[col]]
            for r in range(n):
                if r != col and a[r][col] != 0:
                    f = a[r][col]
                    a[r] = [x - f * y for x, y in zip(a[r], a[col])]
        return Matrix([row[n:] for row in a])

    def __pow__(self, k: int) -> "Matrix":
        if k < 0:
            return self.inv() ** (-k)
        out = Matrix.identity(self.n)
        base = self
        while k:
            if k & 1:
                out = out @ base
            base = base @ base
            k >>= 1
        return out

    def op_norm(self) -> float:
        return float(np.linalg.norm(self.to_numpy(), 2))

    # -- structure queries -------------------------------------------------

    def is_invertible(self, tol: float = _DET_TOL) -> bool:
        d = self.det()
        if isinstance(d, Fraction):
            return d != 0
        return abs(d) > tol

    def dyadic_monomial(self) -> Optional[tuple]:
        """Decompose as a signed dyadic monomial matrix.

        Returns (perm, values) with row i acting on input axis perm[i] by the
        dyadic rational values[i], or None.  These are exactly the matrices
        that map the dyadic cell grid into a (possibly finer) cell grid, so
        exact affine images of cell unions exist precisely for them.
        """
        if not self.exact:
            return None
        perm = []
        vals = []
        for row in self.rows:
            nz = [(j, v) for j, v in enumerate(row) if v != 0]
            if len(nz) != 1:
                return None
            j, v = nz[0]
            # value must be dyadic: p / 2^k with integer p
            if not is_dyadic(v):
                return None
            perm.append(j)
            vals.append(v)
        if sorted(perm) != list(range(self.n)):
            return None
        return tuple(perm), tuple(vals)

    def charpoly(self) -> list:
        """Coefficients [1, c1, ..., cn] of det(tI - A), exact in exact mode."""
        n = self.n
        if not self.exact:
            return [1.0] + [float(c) for c in np.poly(self.to_numpy())[1:]]
        # Faddeev-LeVerrier
        coeffs = [Fraction(1)]
        M = Matrix.identity(n)
        for k in range(1, n + 1):
            M = self @ M
            c = -Fraction(sum(M.rows[i][i] for i in range(n)), k)
            coeffs.append(c)
            M = Matrix([[M.rows[i][j] + (c if i == j else 0) for j in range(n)] for i in range(n)])
        return coeffs

    def eig_moduli(self) -> list:
        """Sorted eigenvalue moduli.

        n <= 4 goes through the exact characteristic polynomial and a
        companion-matrix root solve; larger n falls back to LAPACK.
        """
        try:
            if self.n <= 4:
                coeffs = [float(c) for c in self.charpoly()]
                roots = np.roots(coeffs)
            else:
                roots = np.linalg.eigvals(self.to_numpy())
        except np.linalg.LinAlgError as exc:  # pragma: no cover - rare
            raise EigenSolveError(f"eigenvalue solve failed: {exc}") from exc
        if not np.all(np.isfinite(roots)):
            raise EigenSolveError("eigenvalue solve returned non-finite roots")
        return sorted(float(abs(r)) for r in roots)

    # -- serialization -----------------------------------------------------

    def to_json_obj(self) -> dict:
        def enc(x):
            if isinstance(x, Fraction):
                return str(x.numerator) if x.denominator == 1 else f"{x.numerator}/{x.denominator}"
            return x

        return {"dim": self.n, "rows": [[enc(x) for x in row] for row in self.rows]}

    @classmethod
    def from_json_obj(cls, obj) -> "Matrix":
        if isinstance(obj, list):
            return cls(obj)
        if not isinstance(obj, dict) or "rows" not in obj:
            raise InputFormatError("matrix JSON must be a list of rows or {dim, rows}")
        return cls(obj["rows"])


# ---------------------------------------------------------------------------
# integer lattice utilities


def hnf_lower(mat: Sequence[Sequence[int]]) -> list:
    """Column-style Hermite normal form of a nonsingular integer matrix.

    Returns H lower-triangular with positive diagonal such that the columns
    of H generate the same lattice as the columns of ``mat``.
    """
    n = len(mat)
    cols = [[int(mat[i][j]) for i in range(n)] for j in range(n)]

    def col_sub(a, b, q):
        return [x - q * y for x, y in zip(a, b)]

    for i in range(n):
        # gcd sweep on row i over columns i..n-1
        while True:
            nz = [j for j in range(i, n) if cols[j][i] != 0]
            if not nz:
                raise ValueError("singular integer matrix in HNF")
            jmin = min(nz, key=lambda j: abs(cols[j][i]))
            if jmin != i:
                cols[i], cols[jmin] = cols[jmin], cols[i]
            done = True
            for j in range(i + 1, n):
                if cols[j][i] != 0:
                    q = cols[j][i] // cols[i][i]
                    cols[j] = col_sub(cols[j], cols[i], q)
                    if cols[j][i] != 0:
                        done = False
            if done:
                break
        if cols[i][i] < 0:
            cols[i] = [-x for x in cols[i]]
        # canonicalize columns to the left: 0 <= row entry < diagonal
        for j in range(i):
            q = cols[j][i] // cols[i][i]
            if q:
                cols[j] = col_sub(cols[j], cols[i], q)
    return [[cols[j][i] for j in range(n)] for i in range(n)]


def hnf_residue(vec: Sequence[int], H: Sequence[Sequence[int]]) -> tuple:
    """Canonical representative of vec modulo the lattice generated by H.

    H must be lower-triangular with positive diagonal; the representative
    satisfies 0 <= r_i < H[i][i] for every axis.
    """
    n = len(vec)
    r = list(int(x) for x in vec)
    for i in range(n):
        q = r[i] // H[i][i]
        if q:
            for k in range(i, n):
                r[k] -= q * H[k][i]
    return tuple(r)


class Lattice:
    """Full-rank lattice L = B Z^n given by a generator matrix B (columns)."""

    __slots__ = ("basis", "_dual")

    def __init__(self, basis: Matrix):
        if not basis.is_invertible():
            raise InputFormatError("lattice generator must be invertible")
        self.basis = basis
        self._dual = None

    @classmethod
    def standard(cls, n: int) -> "Lattice":
        return cls(Matrix.identity(n))

    @property
    def dim(self) -> int:
        return self.basis.n

    @property
    def covolume(self):
        d = self.basis.det()
        return abs(d)

    def dual(self) -> "Lattice":
        """Dual lattice L* = (B^T)^{-1} Z^n; involution."""
        if self._dual is None:
            self._dual = Lattice(self.basis.T.inv())
        return self._dual

    @property
    def exact(self) -> bool:
        return self.basis.exact

    def is_dyadic(self) -> bool:
        return self.exact and all(is_dyadic(x) for row in self.basis.rows for x in row)

    def denom_exponent(self) -> int:
        """Smallest q >= 0 with 2^q B integral (dyadic lattices only)."""
        assert self.is_dyadic()
        return max(
            (dyadic_exponent(x) for row in self.basis.rows for x in row),
            default=0,
        )

    def vector(self, coeffs: Sequence[int]) -> tuple:
        """The lattice point B @ coeffs."""
        return self.basis.apply([Fraction(c) for c in coeffs])

    def int_matrix(self, level: int) -> list:
        """2^level * B as an integer matrix (requires dyadic B, level >= q)."""
        q = self.denom_exponent()
        assert level >= q, (level, q)
        s = 1 << level
        return [[int(x * s) for x in row] for row in self.basis.rows]

    def hnf_at(self, level: int) -> list:
        return hnf_lower(self.int_matrix(level))

    def __eq__(self, other):
        return isinstance(other, Lattice) and self.basis == other.basis

    def __hash__(self):
        return hash(self.basis)

    def __repr__(self):
        return f"Lattice({self.basis!r})"

    def to_json_obj(self) -> dict:
        return {"generator": self.basis.to_json_obj()}

    @classmethod
    def from_json_obj(cls, obj) -> "Lattice":
        if isinstance(obj, dict) and "generator" in obj:
            return cls(Matrix.from_json_obj(obj["generator"]))
        return cls(Matrix.from_json_obj(obj))
