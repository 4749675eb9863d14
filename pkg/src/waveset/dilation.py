"""Dilation families: enumeration, expansiveness, and seed multiplicative tiles.

A matrix is expansive when every eigenvalue modulus exceeds 1; equivalently it
admits an ellipsoid E with closure(E) contained in the interior of a(E).  The
shell a(E) \\ E then tiles R^n minus the origin under integer powers of a,
which is the seed tile used by all constructions downstream.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterable, List, Optional, Sequence, Tuple

import numpy as np
import scipy.linalg

from .dyadic import DyadicSet, affine_image
from .errors import InputFormatError, PreconditionError
from .linalg import Matrix

EXPANSIVE_TOL = 1e-9
DEDUP_TOL = 1e-9


@dataclass(frozen=True)
class ExpansivenessCertificate:
    matrix: Matrix
    moduli: Tuple[float, ...]
    margin: float  # min |lambda| - 1

    @property
    def expansive(self) -> bool:
        return self.margin > EXPANSIVE_TOL

    @property
    def verdict(self) -> str:
        return "expansive" if self.expansive else "notExpansive"


def classify_expansive(m: Matrix) -> ExpansivenessCertificate:
    """Eigenvalue-modulus test for expansiveness."""
    if not m.is_invertible():
        raise PreconditionError("expansiveness is defined for invertible matrices")
    moduli = m.eig_moduli()
    return ExpansivenessCertificate(m, tuple(moduli), moduli[0] - 1.0)


class DilationSystem:
    """Enumerable family of invertible matrices.

    kinds:
      cyclic   - integer powers a^j, j in [jmin, jmax]
      group    - words in the generators and their inverses up to word radius
      explicit - a fixed list
    An optional invariance witness ``a`` records the claim D a = D.
    """

    def __init__(
        self,
        kind: str,
        *,
        matrix: Optional[Matrix] = None,
        j_range: Optional[Tuple[int, int]] = None,
        generators: Optional[Sequence[Matrix]] = None,
        word_radius: int = 0,
        matrices: Optional[Sequence[Matrix]] = None,
        witness: Optional[Matrix] = None,
    ):
        if kind not in ("cyclic", "group", "explicit"):
            raise InputFormatError(f"unknown dilation system kind {kind!r}")
        self.kind = kind
        self.matrix = matrix
        self.j_range = j_range
        self.generators = list(generators or [])
        self.word_radius = word_radius
        self.matrices = list(matrices or [])
        self._witness = witness
        self._enum: Optional[List[Matrix]] = None
        if kind == "cyclic":
            if matrix is None or j_range is None:
                raise InputFormatError("cyclic system needs matrix and j_range")
            if j_range[0] > j_range[1]:
                raise InputFormatError("empty j_range")
        elif kind == "group" and not self.generators:
            raise InputFormatError("group system needs generators")
        elif kind == "explicit" and not self.matrices:
            raise InputFormatError("explicit system needs matrices")

    # ------------------------------------------------------------------

    @classmethod
    def cyclic(cls, a: Matrix, j_range: Tuple[int, int], witness: Optional[Matrix] = None):
        return cls("cyclic", matrix=a, j_range=tuple(j_range), witness=witness)

    @classmethod
    def group(cls, generators: Sequence[Matrix], word_radius: int, witness=None):
        return cls("group", generators=generators, word_radius=word_radius, witness=witness)

    @classmethod
    def explicit(cls, matrices: Sequence[Matrix], witness=None):
        return cls("explicit", matrices=matrices, witness=witness)

    @property
    def dim(self) -> int:
        if self.kind == "cyclic":
            return self.matrix.n
        if self.kind == "group":
            return self.generators[0].n
        return self.matrices[0].n

    def invariance_witness(self) -> Optional[Matrix]:
        if self._witness is not None:
            return self._witness
        if self.kind == "cyclic":
            return self.matrix
        if self.kind == "group":
            # a generator that is itself expansive will do: D g = D for a group
            for g in self.generators:
                if classify_expansive(g).expansive:
                    return g
            for g in self.generators:
                if classify_expansive(g.inv()).expansive:
                    return g.inv()
        return None

    def transpose(self) -> "DilationSystem":
        """The family of transposes, preserving enumeration structure."""
        w = self._witness.T if self._witness is not None else None
        if self.kind == "cyclic":
            return DilationSystem.cyclic(self.matrix.T, self.j_range, witness=w)
        if self.kind == "group":
            return DilationSystem.group([g.T for g in self.generators], self.word_radius, witness=w)
        return DilationSystem.explicit([m.T for m in self.matrices], witness=w)

    def enumerate(self) -> List[Matrix]:
        """Deterministic, deduplicated enumeration.

        cyclic: by |j|, positive exponent first.  group: breadth-first by word
        length, ties broken lexicographically on rounded entries.  explicit:
        input order with duplicates collapsed.
        """
        if self._enum is not None:
            return self._enum
        out: List[Matrix] = []
        if self.kind == "cyclic":
            jmin, jmax = self.j_range
            js = sorted(range(jmin, jmax + 1), key=lambda j: (abs(j), j < 0))
            pows = {}
            for j in js:
                pows[j] = self.matrix ** j
            seen = set()
            for j in js:
                k = pows[j].key(DEDUP_TOL)
                if k not in seen:
                    seen.add(k)
                    out.append(pows[j])
        elif self.kind == "group":
            gens = []
            for g in self.generators:
                if not g.is_invertible():
                    raise PreconditionError("group generator must be invertible")
                gens.extend([g, g.inv()])
            frontier = [Matrix.identity(self.dim)]
            seen = {frontier[0].key(DEDUP_TOL)}
            out.append(frontier[0])
            for _ in range(self.word_radius):
                nxt = []
                for w in frontier:
                    for g in gens:
                        m = w @ g
                        k = m.key(DEDUP_TOL)
                        if k not in seen:
                            seen.add(k)
                            nxt.append(m)
                nxt.sort(key=lambda m: m.key(DEDUP_TOL))
                out.extend(nxt)
                frontier = nxt
        else:
            seen = set()
            for m in self.matrices:
                if not m.is_invertible():
                    raise PreconditionError("explicit system contains a singular matrix")
                k = m.key(DEDUP_TOL)
                if k not in seen:
                    seen.add(k)
                    out.append(m)
        self._enum = out
        return out

    def invariance_spot_check(self, a: Matrix) -> dict:
        """Check D a = D on the truncated enumeration.

        For each enumerated d, d a must be enumerated too unless it lies
        beyond the truncation frontier (operator norm above the largest
        enumerated one).  Frontier misses are reported, true misses fail.
        """
        enum = self.enumerate()
        keys = {m.key(DEDUP_TOL) for m in enum}
        frontier_norm = max(m.op_norm() for m in enum)
        inv_norm = max((m.inv().op_norm() for m in enum), default=1.0)
        misses, frontier = [], 0
        for d in enum:
            da = d @ a
            if da.key(DEDUP_TOL) in keys:
                continue
            if da.op_norm() > frontier_norm + DEDUP_TOL or da.inv().op_norm() > inv_norm + DEDUP_TOL:
                frontier += 1
            else:
                misses.append(da)
        return {"ok": not misses, "frontier_misses": frontier, "misses": misses}

    # ------------------------------------------------------------------

    def to_json_obj(self) -> dict:
        obj = {"kind": self.kind}
        if self._witness is not None:
            obj["witness"] = self._witness.to_json_obj()
        if self.kind == "cyclic":
            obj["matrix"] = self.matrix.to_json_obj()
            obj["j_range"] = list(self.j_range)
        elif self.kind == "group":
            obj["generators"] = [g.to_json_obj() for g in self.generators]
            obj["word_radius"] = self.word_radius
        else:
            obj["matrices"] = [m.to_json_obj() for m in self.matrices]
        return obj

    @classmethod
    def from_json_obj(cls, obj: dict) -> "DilationSystem":
        try:
            kind = obj["kind"]
            witness = Matrix.from_json_obj(obj["witness"]) if "witness" in obj else None
            if kind == "cyclic":
                return cls.cyclic(
                    Matrix.from_json_obj(obj["matrix"]), tuple(obj["j_range"]), witness=witness
                )
            if kind == "group":
                return cls.group(
                    [Matrix.from_json_obj(g) for g in obj["generators"]],
                    int(obj["word_radius"]),
                    witness=witness,
                )
            if kind == "explicit":
                return cls.explicit(
                    [Matrix.from_json_obj(m) for m in obj["matrices"]], witness=witness
                )
            raise InputFormatError(f"unknown system kind {kind!r}")
        except (KeyError, TypeError) as exc:
            raise InputFormatError(f"bad dilation system JSON: {exc}") from exc


# ---------------------------------------------------------------------------
# nested ellipsoids and shell tiles


@dataclass(frozen=True)
class Ellipsoid:
    """E = {x : x^T Q x < 1} with symmetric positive-definite Q."""

    q: np.ndarray
    nesting_margin: float  # min_{y on boundary of aE} y^T Q y - 1

    def contains(self, pts: np.ndarray) -> np.ndarray:
        return np.einsum("ni,ij,nj->n", pts, self.q, pts) < 1.0


def nested_ellipsoid(a: Matrix, rho: Optional[float] = None) -> Ellipsoid:
    """An ellipsoid E with closure(E) inside the interior of a(E).

    Solves the Lyapunov-type relation Q - rho (a^{-1})^T Q a^{-1} = I for a
    contraction factor rho in (1, min|lambda|^2); falls back to the truncated
    averaging sum over (a^{-k})^T a^{-k} if the solver fails.  The nesting is
    then verified independently on the boundary of a(E) via the generalized
    eigenproblem min_{x^T Q x = 1} (ax)^T Q (ax).
    """
    cert = classify_expansive(a)
    if not cert.expansive:
        raise PreconditionError(f"matrix is not expansive (moduli {cert.moduli})")
    lam2 = cert.moduli[0] ** 2
    if rho is None:
        rho = (1.0 + lam2) / 2.0
    if not (1.0 < rho < lam2):
        raise PreconditionError(f"contraction factor {rho} outside (1, {lam2})")
    binv = np.linalg.inv(a.to_numpy())
    try:
        qmat = scipy.linalg.solve_discrete_lyapunov(np.sqrt(rho) * binv.T, np.eye(a.n))
    except Exception:
        qmat = np.eye(a.n)
        term = np.eye(a.n)
        for _ in range(200):
            term = binv.T @ term @ binv
            qmat = qmat + term
            if np.linalg.norm(term) < 1e-15:
                break
    qmat = 0.5 * (qmat + qmat.T)
    af = a.to_numpy()
    # independent boundary check: smallest y^T Q y over the boundary of aE
    vals = scipy.linalg.eigh(af.T @ qmat @ af, qmat, eigvals_only=True)
    margin = float(vals[0]) - 1.0
    if margin <= 0:
        raise PreconditionError("nesting verification failed; matrix too close to non-expansive")
    return Ellipsoid(qmat, margin)


def ellipsoid_shell_tile(a: Matrix, level: int, window: Optional[int] = None) -> DyadicSet:
    """Rasterized shell a(E) \\ E: bounded, bounded away from 0, tiles under a^j.

    For dyadic monomial matrices the shell is built as a(I) \\ I from the
    rasterized core I, so consecutive powers telescope exactly and the tiling
    has no seam defects inside the window; the only defect is the unresolved
    core around the origin, which shrinks with the level.
    """
    ell = nested_ellipsoid(a)
    q = ell.q
    # scale the ellipsoid so its short axis spans a healthy number of cells
    # and the scale factor is a power of two (keeps classical cases on-grid)
    short = 1.0 / np.sqrt(np.linalg.eigvalsh(q)[-1])
    target = 2.0 ** int(np.ceil(np.log2(1.0 / max(short, 1e-12))))
    qs = q / target**2
    short_scaled = short * target  # in [1/2, 1) * 2 roughly; >= 1/2
    if window is None:
        long_ax = float(np.sqrt(1.0 / np.linalg.eigvalsh(qs)[0]))
        reach = long_ax * a.op_norm()
        window = max(0, int(np.ceil(np.log2(max(reach, 1.0)))))
    core = DyadicSet.from_predicate(
        a.n, level, window, lambda pts: np.einsum("ni,ij,nj->n", pts, qs, pts) < 1.0
    )
    if core.is_empty:
        raise PreconditionError("ellipsoid core rasterized to nothing; raise the level")
    if a.dyadic_monomial() is not None:
        outer, _ = affine_image(core, a, mode="exact")
    else:
        qa = np.linalg.inv(a.to_numpy()).T @ qs @ np.linalg.inv(a.to_numpy())
        outer = DyadicSet.from_predicate(
            a.n, level, window + max(1, int(np.ceil(np.log2(a.op_norm() + 1)))),
            lambda pts: np.einsum("ni,ij,nj->n", pts, qa, pts) < 1.0,
        )
    shell = outer.difference(core)
    if shell.is_empty:
        raise PreconditionError("shell rasterized to nothing; raise the level")
    return shell
