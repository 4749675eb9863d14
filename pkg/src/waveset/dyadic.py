"""Measurable sets as finite unions of half-open dyadic cells.

A cell at resolution level r is the box 2^-r * ([c1, c1+1) x ... x [cn, cn+1))
for an integer vector c.  A :class:`DyadicSet` stores cells at mixed levels in
a canonical form (no cell contains another, complete sibling groups are merged
into their parent), so set equality is structural equality and every Boolean
operation, measure and affine image below is computed in exact integer /
Fraction arithmetic.

Two arithmetic modes for affine images:

* exact - the matrix must be a signed dyadic monomial (each row one nonzero
  dyadic entry): exactly the linear maps sending the cell grid into a finer
  cell grid.  Measures transform by |det m| with no error.
* raster - any invertible float matrix; the image is rasterized by
  supersampled center tests and returned together with a symmetric-difference
  error bound (straddling subcells times subcell volume).

Negative coefficients use the half-open regularization: the image of [a, b)
under x -> -x is taken as [-b, -a).  This differs from the set image only on
a null set, and every contract in this package is measure-theoretic.
"""

from __future__ import annotations

import itertools
import math
from fractions import Fraction
from typing import Callable, Dict, FrozenSet, Iterable, Iterator, Optional, Sequence, Tuple

import numpy as np

from .errors import InputFormatError, PreconditionError
from .linalg import Matrix, dyadic_exponent, is_dyadic

Cell = Tuple[int, ...]
Levels = Dict[int, FrozenSet[Cell]]

#: refuse to materialize flat refinements larger than this
FLATTEN_CAP = 4_000_000


def _anc(cell: Cell, dlev: int) -> Cell:
    """Ancestor coordinates dlev levels up (floor shift works for negatives)."""
    if dlev == 0:
        return cell
    return tuple(c >> dlev for c in cell)


def _children(cell: Cell) -> Iterator[Cell]:
    n = len(cell)
    base = tuple(c << 1 for c in cell)
    for off in itertools.product((0, 1), repeat=n):
        yield tuple(b + o for b, o in zip(base, off))


def _canonicalize(dim: int, levels: Dict[int, set]) -> Levels:
    # 1. drop cells covered by a coarser cell
    lv = {l: set(cs) for l, cs in levels.items() if cs}
    order = sorted(lv)
    for idx, l in enumerate(order):
        coarser = order[:idx]
        if not coarser:
            continue
        drop = set()
        for cell in lv[l]:
            for lc in coarser:
                if _anc(cell, l - lc) in lv[lc]:
                    drop.add(cell)
                    break
        lv[l] -= drop
    # 2. merge complete sibling groups upward
    full = 1 << dim
    for l in sorted(lv, reverse=True):
        while l > 0 and lv.get(l):
            groups: Dict[Cell, int] = {}
            for cell in lv[l]:
                groups[_anc(cell, 1)] = groups.get(_anc(cell, 1), 0) + 1
            parents = {p for p, k in groups.items() if k == full}
            if not parents:
                break
            lv[l] = {c for c in lv[l] if _anc(c, 1) not in parents}
            lv.setdefault(l - 1, set()).update(parents)
            l -= 1
    return {l: frozenset(cs) for l, cs in lv.items() if cs}


class DyadicSet:
    __slots__ = ("dim", "levels", "_hash")

    def __init__(self, dim: int, levels: Dict[int, Iterable[Cell]], _canonical: bool = False):
        if dim < 1:
            raise InputFormatError("dimension must be positive")
        if _canonical:
            self.levels = levels  # trusted
        else:
            self.levels = _canonicalize(dim, {l: set(map(tuple, cs)) for l, cs in levels.items()})
        self.dim = dim
        self._hash = None

    # -- constructors ------------------------------------------------------

    @classmethod
    def empty(cls, dim: int) -> "DyadicSet":
        return cls(dim, {}, _canonical=True)

    @classmethod
    def from_cells(cls, dim: int, level: int, cells: Iterable[Sequence[int]]) -> "DyadicSet":
        if level < 0:
            raise InputFormatError("level must be nonnegative")
        return cls(dim, {level: {tuple(int(x) for x in c) for c in cells}})

    @classmethod
    def interval(cls, lo, hi, level: Optional[int] = None) -> "DyadicSet":
        """1-D set [lo, hi) for dyadic endpoints."""
        return cls.box([lo], [hi], level)

    @classmethod
    def box(cls, lo: Sequence, hi: Sequence, level: Optional[int] = None) -> "DyadicSet":
        """Axis-aligned half-open box with dyadic-rational corners."""
        lo = [Fraction(x) for x in lo]
        hi = [Fraction(x) for x in hi]
        dim = len(lo)
        if level is None:
            level = max([0] + [dyadic_exponent(x) for x in lo + hi if is_dyadic(x)])
        for x in lo + hi:
            if not is_dyadic(x) or dyadic_exponent(x) > level:
                raise InputFormatError(f"corner {x} is not dyadic at level {level}")
        s = 1 << level
        ranges = []
        for a, b in zip(lo, hi):
            ia, ib = int(a * s), int(b * s)
            if ib < ia:
                raise InputFormatError("box with hi < lo")
            ranges.append(range(ia, ib))
        count = 1
        for r in ranges:
            count *= len(r)
        if count > FLATTEN_CAP:
            raise InputFormatError("box too fine to materialize")
        return cls(dim, {level: set(itertools.product(*ranges))})

    @classmethod
    def window_box(cls, dim: int, window: int, level: int = 0) -> "DyadicSet":
        """The full window [-2^W, 2^W)^n."""
        w = Fraction(2) ** window
        return cls.box([-w] * dim, [w] * dim, level)

    @classmethod
    def from_predicate(
        cls, dim: int, level: int, window: int, pred: Callable[[np.ndarray], np.ndarray]
    ) -> "DyadicSet":
        """Rasterize {x : pred(x)} over the window by cell-center tests.

        ``pred`` receives an (N, dim) float array of cell centers and returns
        a boolean mask.  Centers are dyadic so the evaluation is exact for
        predicates built from dyadic arithmetic.
        """
        side = 1 << (window + level + 1)
        if side ** dim > FLATTEN_CAP:
            raise InputFormatError("window too fine to rasterize")
        axes = [np.arange(-(side // 2), side // 2) for _ in range(dim)]
        grids = np.meshgrid(*axes, indexing="ij")
        coords = np.stack([g.ravel() for g in grids], axis=1)
        centers = (coords + 0.5) * (2.0 ** -level)
        mask = np.asarray(pred(centers), dtype=bool)
        cells = {tuple(int(v) for v in row) for row in coords[mask]}
        return cls(dim, {level: cells})

    # -- canonical structure -----------------------------------------------

    def __eq__(self, other):
        return (
            isinstance(other, DyadicSet)
            and self.dim == other.dim
            and self.levels == other.levels
        )

    def __hash__(self):
        if self._hash is None:
            self._hash = hash((self.dim, frozenset(self.levels.items())))
        return self._hash

    def __repr__(self):
        n = self.cell_count()
        return f"DyadicSet(dim={self.dim}, cells={n}, measure={float(self.measure()):.6g})"

    def __bool__(self):
        return bool(self.levels)

    @property
    def is_empty(self) -> bool:
        return not self.levels

    @property
    def level(self) -> int:
        """Finest resolution present (0 for the empty set)."""
        return max(self.levels, default=0)

    def cell_count(self) -> int:
        return sum(len(cs) for cs in self.levels.values())

    def iter_cells(self) -> Iterator[Tuple[int, Cell]]:
        for l in sorted(self.levels):
            for c in sorted(self.levels[l]):
                yield l, c

    def measure(self) -> Fraction:
        n = self.dim
        return sum(
            (Fraction(len(cs), 1 << (l * n)) for l, cs in self.levels.items()),
            Fraction(0),
        )

    @property
    def window(self) -> int:
        """Smallest W >= 0 with the set inside [-2^W, 2^W)^n."""
        w = 0
        for l, cs in self.levels.items():
            for c in cs:
                for x in c:
                    hi = max(x + 1, -x)  # cells are [x, x+1) at scale 2^-l
                    need = hi  # require hi <= 2^(W+l)
                    while (1 << (w + l)) < need:
                        w += 1
        return w

    def bbox(self) -> Tuple[Tuple[Fraction, ...], Tuple[Fraction, ...]]:
        if self.is_empty:
            raise PreconditionError("bbox of empty set")
        lo = [None] * self.dim
        hi = [None] * self.dim
        for l, cs in self.levels.items():
            s = Fraction(1, 1 << l)
            for c in cs:
                for i, x in enumerate(c):
                    a, b = x * s, (x + 1) * s
                    lo[i] = a if lo[i] is None or a < lo[i] else lo[i]
                    hi[i] = b if hi[i] is None or b > hi[i] else hi[i]
        return tuple(lo), tuple(hi)

    def min_norm_sq(self) -> Fraction:
        """Squared distance from the origin to the closure of the set."""
        if self.is_empty:
            raise PreconditionError("distance to empty set")
        best = None
        for l, cs in self.levels.items():
            s = Fraction(1, 1 << l)
            for c in cs:
                d = Fraction(0)
                for x in c:
                    a, b = x * s, (x + 1) * s
                    if a > 0:
                        d += a * a
                    elif b < 0:
                        d += b * b
                if best is None or d < best:
                    best = d
        return best

    def max_norm_sq(self) -> Fraction:
        if self.is_empty:
            return Fraction(0)
        best = Fraction(0)
        for l, cs in self.levels.items():
            s = Fraction(1, 1 << l)
            for c in cs:
                d = Fraction(0)
                for x in c:
                    d += max(abs(x * s), abs((x + 1) * s)) ** 2
                if d > best:
                    best = d
        return best

    # -- membership --------------------------------------------------------

    def _covered(self, level: int, cell: Cell, strict: bool = False) -> bool:
        for l in self.levels:
            if l < level or (not strict and l == level):
                if _anc(cell, level - l) in self.levels[l]:
                    return True
        return False

    def contains_point(self, pt: Sequence) -> bool:
        pt = [Fraction(x) if not isinstance(x, float) else x for x in pt]
        for l, cs in self.levels.items():
            idx = tuple(int(math.floor(x * (1 << l))) for x in pt)
            if idx in cs:
                return True
        return False

    def contains_points_np(self, pts: np.ndarray) -> np.ndarray:
        """Vectorized center-membership test for an (N, dim) float array."""
        out = np.zeros(len(pts), dtype=bool)
        for l, cs in self.levels.items():
            idx = np.floor(pts * float(1 << l)).astype(np.int64)
            keys = [tuple(row) for row in idx]
            hit = np.fromiter((k in cs for k in keys), dtype=bool, count=len(keys))
            out |= hit
        return out

    def intersects(self, other: "DyadicSet") -> bool:
        for l, cs in self.levels.items():
            for c in cs:
                if other._covered(l, c) or _other_has_descendant(other, l, c):
                    return True
        return False

    # -- boolean algebra ----------------------------------------------------

    def union(self, other: "DyadicSet") -> "DyadicSet":
        self._check(other)
        lv: Dict[int, set] = {l: set(cs) for l, cs in self.levels.items()}
        for l, cs in other.levels.items():
            lv.setdefault(l, set()).update(cs)
        return DyadicSet(self.dim, lv)

    def intersection(self, other: "DyadicSet") -> "DyadicSet":
        self._check(other)
        lv: Dict[int, set] = {}
        for l, cs in self.levels.items():
            for c in cs:
                if other._covered(l, c):
                    lv.setdefault(l, set()).add(c)
        for l, cs in other.levels.items():
            for c in cs:
                if self._covered(l, c, strict=True):
                    lv.setdefault(l, set()).add(c)
        return DyadicSet(self.dim, lv)

    def difference(self, other: "DyadicSet") -> "DyadicSet":
        self._check(other)
        if other.is_empty:
            return self
        # index other's cells by their ancestors at each of our levels
        out: Dict[int, set] = {}
        olevels = sorted(other.levels)
        for l, cs in self.levels.items():
            finer = [(lb, other.levels[lb]) for lb in olevels if lb > l]
            for c in cs:
                if other._covered(l, c):
                    continue
                intruders = []
                for lb, bcells in finer:
                    d = lb - l
                    intruders.extend((lb, b) for b in bcells if _anc(b, d) == c)
                if not intruders:
                    out.setdefault(l, set()).add(c)
                else:
                    for rl, rc in _carve(l, c, intruders):
                        out.setdefault(rl, set()).add(rc)
        return DyadicSet(self.dim, out)

    def symmetric_difference(self, other: "DyadicSet") -> "DyadicSet":
        return self.difference(other).union(other.difference(self))

    def _check(self, other: "DyadicSet"):
        if self.dim != other.dim:
            raise PreconditionError(f"dimension mismatch {self.dim} != {other.dim}")

    # -- geometry ------------------------------------------------------------

    def translate(self, t: Sequence) -> "DyadicSet":
        """Translate by a dyadic vector (exact)."""
        t = [Fraction(x) for x in t]
        if not all(is_dyadic(x) for x in t):
            raise PreconditionError("translation vector must be dyadic for exact mode")
        q = max([0] + [dyadic_exponent(x) for x in t])
        lv: Dict[int, set] = {}
        for l, cs in self.levels.items():
            lt = max(l, q)
            shift = tuple(int(x * (1 << lt)) for x in t)
            if lt == l:
                lv.setdefault(l, set()).update(
                    tuple(x + s for x, s in zip(c, shift)) for c in cs
                )
            else:
                d = lt - l
                for c in cs:
                    base = tuple(x << d for x in c)
                    for off in itertools.product(range(1 << d), repeat=self.dim):
                        lv.setdefault(lt, set()).add(
                            tuple(b + o + s for b, o, s in zip(base, off, shift))
                        )
        return DyadicSet(self.dim, lv)

    def refine_to(self, level: int) -> "DyadicSet":
        """Flat representation with every cell at the given level."""
        cells = self.cells_at(level)
        return DyadicSet(self.dim, {level: cells}, _canonical=True) if cells else DyadicSet.empty(self.dim)

    def cells_at(self, level: int) -> FrozenSet[Cell]:
        if self.levels and level < self.level:
            raise PreconditionError(f"cannot coarsen to level {level} < {self.level}")
        total = sum(len(cs) << (self.dim * (level - l)) for l, cs in self.levels.items())
        if total > FLATTEN_CAP:
            raise PreconditionError(f"flat refinement would need {total} cells")
        out = set()
        for l, cs in self.levels.items():
            d = level - l
            if d == 0:
                out.update(cs)
                continue
            for c in cs:
                base = tuple(x << d for x in c)
                for off in itertools.product(range(1 << d), repeat=self.dim):
                    out.add(tuple(b + o for b, o in zip(base, off)))
        return frozenset(out)

    def remove_ball(self, radius: Fraction) -> Tuple["DyadicSet", Fraction]:
        """Drop every cell whose closure meets the open ball B_radius(0).

        Returns (remaining set, measure removed).  Conservative: a cell is
        removed as soon as it touches the ball.
        """
        radius = Fraction(radius)
        r2 = radius * radius
        keep: Dict[int, set] = {}
        removed = Fraction(0)
        n = self.dim
        for l, cs in self.levels.items():
            s = Fraction(1, 1 << l)
            vol = Fraction(1, 1 << (l * n))
            for c in cs:
                d = Fraction(0)
                for x in c:
                    a, b = x * s, (x + 1) * s
                    if a > 0:
                        d += a * a
                    elif b < 0:
                        d += b * b
                if d < r2:
                    removed += vol
                else:
                    keep.setdefault(l, set()).add(c)
        return DyadicSet(self.dim, keep), removed

    def inside_open_ball(self, radius: Fraction) -> bool:
        """True if the closure of the set lies inside the open ball B_radius."""
        return self.is_empty or self.max_norm_sq() < Fraction(radius) ** 2

    # -- serialization -------------------------------------------------------

    def to_json_obj(self, flat_cap: int = 200_000) -> dict:
        base = {"dim": self.dim, "window": self.window}
        if self.is_empty:
            return {**base, "level": 0, "cells": []}
        level = self.level
        total = sum(len(cs) << (self.dim * (level - l)) for l, cs in self.levels.items())
        if total <= flat_cap:
            cells = sorted(self.cells_at(level))
            return {**base, "level": level, "cells": [list(c) for c in cells]}
        return {
            **base,
            "levels": {str(l): [list(c) for c in sorted(cs)] for l, cs in sorted(self.levels.items())},
        }

    @classmethod
    def from_json_obj(cls, obj: dict) -> "DyadicSet":
        try:
            dim = int(obj["dim"])
            if "levels" in obj:
                lv = {int(l): {tuple(int(x) for x in c) for c in cs} for l, cs in obj["levels"].items()}
                return cls(dim, lv)
            return cls.from_cells(dim, int(obj["level"]), obj["cells"])
        except (KeyError, TypeError, ValueError) as exc:
            raise InputFormatError(f"bad set JSON: {exc}") from exc


def _other_has_descendant(other: DyadicSet, level: int, cell: Cell) -> bool:
    for lb, cs in other.levels.items():
        if lb <= level:
            continue
        d = lb - level
        if any(_anc(b, d) == cell for b in cs):
            return True
    return False


def _carve(level: int, cell: Cell, intruders) -> Iterator[Tuple[int, Cell]]:
    """Yield the part of ``cell`` not covered by strictly finer intruder cells."""
    exact = set()
    groups: Dict[Cell, list] = {}
    for lb, cb in intruders:
        if lb == level + 1:
            exact.add(cb)
        else:
            groups.setdefault(_anc(cb, lb - level - 1), []).append((lb, cb))
    for ch in _children(cell):
        if ch in exact:
            continue
        if ch in groups:
            yield from _carve(level + 1, ch, groups[ch])
        else:
            yield level + 1, ch


# ---------------------------------------------------------------------------
# affine images


def affine_image(
    s: DyadicSet,
    m: Matrix,
    t: Sequence = None,
    mode: str = "exact",
    samples: int = 4,
    out_level: Optional[int] = None,
) -> Tuple[DyadicSet, Fraction]:
    """Image m(S) + t, with an error bound on the symmetric difference.

    Exact mode requires a signed dyadic monomial matrix and dyadic t; the
    bound is 0 and measures scale exactly by |det m|.  Raster mode accepts
    any invertible matrix; the returned bound counts boundary-straddling
    subcells times subcell volume, and halves (or better) when ``samples``
    doubles on sets with nice boundaries.
    """
    if t is None:
        t = [Fraction(0)] * s.dim
    if mode == "exact":
        return _affine_exact(s, m, t), Fraction(0)
    if mode == "raster":
        return _affine_raster(s, m, t, samples, out_level)
    raise InputFormatError(f"unknown affine mode {mode!r}")


def _affine_exact(s: DyadicSet, m: Matrix, t: Sequence) -> DyadicSet:
    mono = m.dyadic_monomial()
    if mono is None:
        raise PreconditionError(
            "exact affine image requires a signed dyadic monomial matrix"
        )
    perm, vals = mono
    t = [Fraction(x) for x in t]
    if not all(is_dyadic(x) for x in t):
        raise PreconditionError("exact affine image requires a dyadic translation")
    n = s.dim
    lv: Dict[int, set] = {}
    for l, cs in s.levels.items():
        # output level: fine enough for every axis image and the translation
        lt = 0
        for i in range(n):
            v = vals[i]
            lt = max(lt, l + dyadic_exponent(v) - _pow2_part(v.numerator), dyadic_exponent(t[i]))
        lt = max(lt, 0)
        sc = 1 << lt
        for c in cs:
            ranges = []
            for i in range(n):
                j = perm[i]
                v = vals[i]
                a = v * c[j] * Fraction(1, 1 << l) + t[i]
                b = v * (c[j] + 1) * Fraction(1, 1 << l) + t[i]
                if b < a:
                    a, b = b, a
                ia, ib = a * sc, b * sc
                assert ia.denominator == 1 and ib.denominator == 1
                ranges.append(range(int(ia), int(ib)))
            for cell in itertools.product(*ranges):
                lv.setdefault(lt, set()).add(cell)
    return DyadicSet(n, lv)


def _pow2_part(p: int) -> int:
    """Largest e with 2^e | p (p nonzero)."""
    p = abs(p)
    return (p & -p).bit_length() - 1


def _affine_raster(
    s: DyadicSet, m: Matrix, t: Sequence, samples: int, out_level: Optional[int]
) -> Tuple[DyadicSet, Fraction]:
    if s.is_empty:
        return DyadicSet.empty(s.dim), Fraction(0)
    if samples < 1:
        raise InputFormatError("supersampling depth must be >= 1")
    n = s.dim
    level = s.level if out_level is None else out_level
    mf = m.to_numpy()
    minv = np.linalg.inv(mf)
    tf = np.array([float(Fraction(x)) for x in t])
    lo, hi = s.bbox()
    corners = np.array(list(itertools.product(*zip(map(float, lo), map(float, hi)))))
    img = corners @ mf.T + tf
    sc = float(1 << level)
    ilo = np.floor(img.min(axis=0) * sc).astype(np.int64) - 1
    ihi = np.ceil(img.max(axis=0) * sc).astype(np.int64) + 1
    shape = tuple(int(b - a) for a, b in zip(ilo, ihi))
    fine_shape = tuple(k * samples for k in shape)
    total = int(np.prod([max(k, 1) for k in fine_shape]))
    if total > FLATTEN_CAP:
        raise PreconditionError(f"raster grid too large ({total} subcells)")
    axes = [
        (ilo[i] + (np.arange(fine_shape[i]) + 0.5) / samples) / sc for i in range(n)
    ]
    grids = np.meshgrid(*axes, indexing="ij")
    pts = np.stack([g.ravel() for g in grids], axis=1)
    pre = (pts - tf) @ minv.T
    mask = s.contains_points_np(pre).reshape(fine_shape)

    # straddling subcells: classification changes across a face
    straddle = np.zeros(fine_shape, dtype=bool)
    for ax in range(n):
        sl_a = [slice(None)] * n
        sl_b = [slice(None)] * n
        sl_a[ax] = slice(0, -1)
        sl_b[ax] = slice(1, None)
        diff = mask[tuple(sl_a)] ^ mask[tuple(sl_b)]
        straddle[tuple(sl_a)] |= diff
        straddle[tuple(sl_b)] |= diff
    n_straddle = int(straddle.sum())
    subcell_vol = Fraction(1, (1 << (level * n)) * samples**n)
    bound = n_straddle * subcell_vol

    # majority vote per cell
    block = mask.reshape(
        tuple(x for k in shape for x in (k, samples))
    ).transpose(*range(0, 2 * n, 2), *range(1, 2 * n, 2)).reshape(shape + (samples**n,))
    counts = block.sum(axis=-1)
    sel = np.argwhere(counts * 2 > samples**n)
    cells = {tuple(int(v) for v in (row + ilo)) for row in sel}
    return DyadicSet(n, {level: cells}), bound
