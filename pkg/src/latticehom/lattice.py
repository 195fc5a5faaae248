"""Periodic lattice geometry: labels, interaction ranges, phase connectivity,
bond enumeration and the operators that move fields between scales."""

from __future__ import annotations

import hashlib
import itertools
from dataclasses import dataclass
from functools import cached_property
from typing import Sequence

import numpy as np


class LatticeError(ValueError):
    """Invalid lattice model or box."""


class NoInfiniteComponent(LatticeError):
    def __init__(self, phase: int):
        self.phase = phase
        super().__init__(f"phase {phase} has no unbounded connected component")


class MultipleInfiniteComponents(LatticeError):
    def __init__(self, phase: int, reason: str = ""):
        self.phase = phase
        msg = f"phase {phase} has more than one unbounded connected component"
        super().__init__(msg + (f" ({reason})" if reason else ""))


class EmptyComponentInBox(LatticeError):
    """Raised when a box holds no complete periodicity cell."""


class MisalignedBox(LatticeError):
    """Raised when a box is not a union of whole periodicity cells."""


def _offsets(P, d: int) -> np.ndarray:
    arr = np.asarray(P, dtype=np.int64)
    if arr.ndim == 1:
        if d != 1:
            arr = arr.reshape(-1, d)
        else:
            arr = arr.reshape(-1, 1)
    if arr.ndim != 2 or arr.shape[1] != d:
        raise LatticeError(f"offsets must have shape (n, {d})")
    arr = np.unique(arr, axis=0)
    return arr


def _lex_positive(v: np.ndarray) -> np.ndarray:
    """Boolean mask of rows whose first nonzero entry is positive."""
    out = np.zeros(len(v), dtype=bool)
    decided = np.zeros(len(v), dtype=bool)
    for a in range(v.shape[1]):
        col = v[:, a]
        out |= ~decided & (col > 0)
        decided |= col != 0
    return out


def hermite_basis(vectors, d: int) -> np.ndarray:
    """Row-style Hermite normal form of the integer span of ``vectors``.

    Returns an ``(r, d)`` integer array whose rows form an echelon basis
    with positive pivots and reduced entries above each pivot.
    """
    A = [[int(x) for x in v] for v in vectors if any(int(x) for x in v)]
    r = 0
    for col in range(d):
        while True:
            nz = [i for i in range(r, len(A)) if A[i][col] != 0]
            if not nz:
                break
            piv = min(nz, key=lambda i: (abs(A[i][col]), i))
            A[r], A[piv] = A[piv], A[r]
            clean = True
            for i in range(r + 1, len(A)):
                if A[i][col]:
                    q = A[i][col] // A[r][col]
                    A[i] = [a - q * b for a, b in zip(A[i], A[r])]
                    if A[i][col]:
                        clean = False
            if clean:
                break
        if r < len(A) and A[r][col] != 0:
            if A[r][col] < 0:
                A[r] = [-a for a in A[r]]
            for i in range(r):
                q = A[i][col] // A[r][col]
                A[i] = [a - q * b for a, b in zip(A[i], A[r])]
            r += 1
        A = A[:r] + [row for row in A[r:] if any(row)]
    return np.array(A[:r], dtype=np.int64).reshape(r, d)


def lattice_index(basis: np.ndarray, d: int) -> float:
    """Index of the span of ``basis`` in Z^d (``inf`` when rank < d)."""
    if len(basis) < d:
        return float("inf")
    return float(abs(round(np.prod([basis[i, i] for i in range(d)]))))


@dataclass(frozen=True)
class TorusComponent:
    """A connected component of one phase on the periodicity torus.

    ``sites`` are residues in the fundamental cell, ``lift`` places each
    residue in a connected lift to Z^d, and ``winding`` holds generators
    (in lattice units) of the closed-walk displacement group.
    """

    phase: int
    sites: np.ndarray
    lift: np.ndarray
    winding: np.ndarray
    T: int

    @property
    def is_infinite(self) -> bool:
        return len(self.winding) > 0

    @property
    def index(self) -> float:
        d = self.sites.shape[1]
        return lattice_index(self.winding // self.T, d)

    @property
    def diameter(self) -> int:
        if len(self.lift) == 0:
            return 0
        return int((self.lift.max(axis=0) - self.lift.min(axis=0)).max())

    def as_dict(self) -> dict:
        return {
            "phase": self.phase,
            "sites": self.sites.tolist(),
            "lift": self.lift.tolist(),
            "winding_generators": self.winding.tolist(),
            "infinite": self.is_infinite,
            "index": None if not self.is_infinite else self.index,
        }


@dataclass(frozen=True)
class PhaseDecomposition:
    T: int
    d: int
    components: dict
    infinite: dict
    islands: dict
    soft: np.ndarray
    role: np.ndarray  # per residue: j >= 1 on C_j, 0 on soft sites, -j on islands of phase j

    def infinite_count(self, j: int) -> int:
        return len(self.infinite[j].sites)

    def volume_fraction(self, j: int) -> float:
        """Share of the periodicity cell occupied by the infinite component of phase j (j=0: soft sites)."""
        if j == 0:
            return len(self.soft) / self.T ** self.d
        return self.infinite_count(j) / self.T ** self.d

    def as_dict(self) -> dict:
        return {
            "T": self.T,
            "d": self.d,
            "phases": {
                str(j): {
                    "components": [c.as_dict() for c in comps],
                    "infinite": None if j not in self.infinite else self.infinite[j].sites.tolist(),
                    "islands": [c.lift.tolist() for c in self.islands.get(j, ())],
                }
                for j, comps in self.components.items()
            },
            "soft": self.soft.tolist(),
        }


class PeriodicLatticeModel:
    """A T-periodic labelling of Z^d with per-label interaction ranges.

    Parameters
    ----------
    labels : array of shape ``(T,) * d`` with entries in ``0..N``
    ranges : ``N + 1`` offset lists, entry ``j`` the range of label ``j``
    m : dimension of the field values
    check : validate phase connectivity eagerly
    """

    def __init__(self, labels, ranges: Sequence, m: int = 1, check: bool = True):
        lab = np.asarray(labels, dtype=np.int64)
        if lab.ndim == 0:
            raise LatticeError("labels must be an array")
        T = lab.shape[0]
        if T < 1 or any(s != T for s in lab.shape):
            raise LatticeError("labels must form a cube with positive period")
        if m < 1:
            raise LatticeError("codomain dimension m must be positive")
        d = lab.ndim
        N = len(ranges) - 1
        if N < 1:
            raise LatticeError("at least one hard phase is required")
        if lab.min() < 0 or lab.max() > N:
            raise LatticeError(f"labels must lie in 0..{N}")
        rng = []
        for j, P in enumerate(ranges):
            arr = _offsets(P, d)
            keys = {tuple(r) for r in arr}
            if tuple([0] * d) not in keys:
                raise LatticeError(f"range {j} must contain the zero offset")
            if any(tuple(-x for x in r) not in keys for r in keys):
                raise LatticeError(f"range {j} must be symmetric")
            arr.setflags(write=False)
            rng.append(arr)
        lab = lab.copy()
        lab.setflags(write=False)
        object.__setattr__(self, "_labels", lab)
        object.__setattr__(self, "_ranges", tuple(rng))
        object.__setattr__(self, "_m", int(m))
        if check:
            self.phases  # noqa: B018  (eager validation)

    @property
    def labels(self) -> np.ndarray:
        return self._labels

    @property
    def ranges(self) -> tuple:
        return self._ranges

    @property
    def m(self) -> int:
        return self._m

    @property
    def d(self) -> int:
        return self._labels.ndim

    @property
    def T(self) -> int:
        return self._labels.shape[0]

    @property
    def N(self) -> int:
        return len(self._ranges) - 1

    def __setattr__(self, name, value):
        raise AttributeError("PeriodicLatticeModel is immutable")

    def label(self, k) -> np.ndarray:
        """Labels of sites ``k`` (shape ``(n, d)``), extended periodically."""
        k = np.asarray(k, dtype=np.int64).reshape(-1, self.d)
        res = np.mod(k, self.T)
        return self._labels[tuple(res.T)]

    def cell_sites(self) -> np.ndarray:
        return np.array(list(itertools.product(range(self.T), repeat=self.d)), dtype=np.int64).reshape(-1, self.d)

    def positive_offsets(self, j: int) -> np.ndarray:
        P = self._ranges[j]
        return P[_lex_positive(P)]

    def reach(self, j: int) -> int:
        P = self._ranges[j]
        return int(np.abs(P).max()) if len(P) else 0

    @cached_property
    def phases(self) -> "PhaseDecomposition":
        return build_phases(self)

    def fingerprint(self) -> str:
        h = hashlib.sha256()
        h.update(np.asarray(self._labels.shape, dtype=np.int64).tobytes())
        h.update(self._labels.tobytes())
        h.update(str(self._m).encode())
        for P in self._ranges:
            h.update(b"|")
            h.update(P.tobytes())
        return h.hexdigest()[:16]

    def __repr__(self) -> str:
        return f"PeriodicLatticeModel(d={self.d}, T={self.T}, N={self.N}, m={self.m})"


class _WeightedUnionFind:
    """Union-find that tracks the cell shift of each node relative to its root."""

    def __init__(self, n: int, d: int):
        self.parent = list(range(n))
        self.shift = [np.zeros(d, dtype=np.int64) for _ in range(n)]
        self.cycles: dict[int, list] = {}

    def find(self, x: int):
        path = []
        while self.parent[x] != x:
            path.append(x)
            x = self.parent[x]
        root = x
        # compress, accumulating shifts from the top of the path down
        acc = np.zeros_like(self.shift[root])
        for node in reversed(path):
            acc = acc + self.shift[node]
            self.shift[node] = acc.copy()
            self.parent[node] = root
        return root

    def potential(self, x: int) -> np.ndarray:
        self.find(x)
        return self.shift[x] if self.parent[x] != x else np.zeros_like(self.shift[x])

    def union(self, a: int, b: int, s: np.ndarray) -> None:
        """Record that the lift of ``b`` sits ``s`` cells from the lift of ``a``."""
        ra, rb = self.find(a), self.find(b)
        pa, pb = self.potential(a), self.potential(b)
        if ra == rb:
            cyc = pa + s - pb
            if cyc.any():
                self.cycles.setdefault(ra, []).append(cyc)
            return
        # attach rb under ra: pot(rb) relative ra = pa + s - pb
        self.parent[rb] = ra
        self.shift[rb] = pa + s - pb
        moved = self.cycles.pop(rb, [])
        self.cycles.setdefault(ra, []).extend(moved)


def build_phases(model: PeriodicLatticeModel, strict: bool = True) -> PhaseDecomposition:
    """Torus components, winding groups, infinite components and islands.

    With ``strict=False`` the decomposition is returned even when a phase
    fails the uniqueness requirement (its ``infinite`` entry is omitted).
    """
    T, d = model.T, model.d
    cell = model.cell_sites()
    flat = {tuple(y): i for i, y in enumerate(cell)}
    labels = model.label(cell)
    components: dict[int, tuple] = {}
    infinite: dict[int, TorusComponent] = {}
    islands: dict[int, tuple] = {}
    role = np.zeros((T,) * d, dtype=np.int64)
    for j in range(1, model.N + 1):
        idx = np.flatnonzero(labels == j)
        uf = _WeightedUnionFind(len(cell), d)
        offs = model.positive_offsets(j)
        for i in idx:
            y = cell[i]
            for delta in offs:
                k = y + delta
                r = np.mod(k, T)
                if labels[flat[tuple(r)]] != j:
                    continue
                uf.union(i, flat[tuple(r)], (k - r) // T)
        groups: dict[int, list] = {}
        for i in idx:
            groups.setdefault(uf.find(int(i)), []).append(int(i))
        comps = []
        for root, members in sorted(groups.items(), key=lambda kv: min(kv[1])):
            sites = cell[members]
            lift = np.array([cell[i] + T * uf.potential(i) for i in members], dtype=np.int64).reshape(-1, d)
            # place the lift so its first member sits in the fundamental cell
            lift = lift - T * ((lift[0] - sites[0]) // T)
            basis = hermite_basis(uf.cycles.get(root, []), d)
            comps.append(TorusComponent(j, sites, lift, T * basis, T))
        components[j] = tuple(comps)
        inf = [c for c in comps if c.is_infinite]
        if not inf:
            if strict:
                raise NoInfiniteComponent(j)
        elif len(inf) > 1:
            if strict:
                raise MultipleInfiniteComponents(j)
        elif inf[0].index != 1.0:
            if strict:
                raise MultipleInfiniteComponents(
                    j, f"lift splits into {inf[0].index:g} unbounded pieces"
                )
        else:
            infinite[j] = inf[0]
        islands[j] = tuple(c for c in comps if not c.is_infinite)
        for c in comps:
            role[tuple(c.sites.T)] = j if (j in infinite and c is infinite[j]) else -j
    soft = cell[labels == 0]
    return PhaseDecomposition(T, d, components, infinite, islands, soft, role)


@dataclass(frozen=True)
class Box:
    """Integer box ``lo <= k < hi`` with row-major site enumeration."""

    lo: tuple
    hi: tuple

    def __post_init__(self):
        lo = tuple(int(x) for x in np.atleast_1d(self.lo))
        hi = tuple(int(x) for x in np.atleast_1d(self.hi))
        if len(lo) != len(hi):
            raise LatticeError("box corners differ in dimension")
        if any(h <= l for l, h in zip(lo, hi)):
            raise LatticeError("box must be nonempty")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    @classmethod
    def cube(cls, lo: int, n: int, d: int) -> "Box":
        return cls((lo,) * d, (lo + n,) * d)

    @property
    def d(self) -> int:
        return len(self.lo)

    @property
    def shape(self) -> tuple:
        return tuple(h - l for l, h in zip(self.lo, self.hi))

    @property
    def size(self) -> int:
        return int(np.prod(self.shape))

    def sites(self) -> np.ndarray:
        axes = [np.arange(l, h) for l, h in zip(self.lo, self.hi)]
        grid = np.meshgrid(*axes, indexing="ij")
        return np.stack([g.ravel() for g in grid], axis=1).astype(np.int64)

    def contains(self, k) -> np.ndarray:
        k = np.asarray(k).reshape(-1, self.d)
        return np.all((k >= np.array(self.lo)) & (k < np.array(self.hi)), axis=1)

    def wrap(self, k) -> np.ndarray:
        k = np.asarray(k, dtype=np.int64).reshape(-1, self.d)
        lo = np.array(self.lo)
        return lo + np.mod(k - lo, np.array(self.shape))

    def index_of(self, k) -> np.ndarray:
        """Flat row-major indices of sites ``k``; -1 for sites outside."""
        k = np.asarray(k, dtype=np.int64).reshape(-1, self.d)
        inside = self.contains(k)
        rel = k - np.array(self.lo)
        idx = np.zeros(len(k), dtype=np.int64)
        for a, n in enumerate(self.shape):
            idx = idx * n + np.where(inside, rel[:, a], 0)
        return np.where(inside, idx, -1)

    def is_aligned(self, T: int) -> bool:
        return all(l % T == 0 for l in self.lo) and all(n % T == 0 for n in self.shape)


@dataclass
class DiscreteField:
    """Values in R^m on the sites of a box, with lattice spacing ``eps``."""

    box: Box
    values: np.ndarray
    eps: float = 1.0

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.ndim == 1:
            v = v[:, None]
        if v.shape[0] != self.box.size:
            raise ValueError("field needs one value per box site")
        if not np.all(np.isfinite(v)):
            raise ValueError("field values must be finite")
        self.values = v
        if not self.eps > 0:
            raise ValueError("spacing must be positive")

    @property
    def m(self) -> int:
        return self.values.shape[1]

    @classmethod
    def from_function(cls, box: Box, fn, eps: float = 1.0, m: int = 1) -> "DiscreteField":
        """Sample ``fn`` at the physical positions ``eps * k``."""
        x = eps * box.sites().astype(float)
        vals = np.asarray(fn(x), dtype=float).reshape(box.size, -1)
        if vals.shape[1] == 1 and m > 1:
            vals = np.repeat(vals, m, axis=1)
        return cls(box, vals, eps)

    def grid(self) -> np.ndarray:
        return self.values.reshape(*self.box.shape, self.m)

    def at(self, k) -> np.ndarray:
        idx = self.box.index_of(k)
        if np.any(idx < 0):
            raise IndexError("site outside the field box")
        return self.values[idx]

    def interpolate(self, x) -> np.ndarray:
        """Piecewise-constant interpolation: value of the site ``floor(x / eps)``."""
        x = np.asarray(x, dtype=float).reshape(-1, self.box.d)
        k = np.floor(x / self.eps).astype(np.int64)
        return self.at(k)


@dataclass(frozen=True)
class Bonds:
    """Unordered bonds, each listed once as ``(first, second)`` flat box indices.

    ``offset`` is the displacement from the first to the second endpoint
    before any periodic wrapping.
    """

    first: np.ndarray
    second: np.ndarray
    offset: np.ndarray

    def __len__(self) -> int:
        return len(self.first)

    def pairs(self, box: Box) -> list:
        sites = box.sites()
        return [(tuple(sites[a]), tuple(sites[a] + o)) for a, o in zip(self.first, self.offset)]


@dataclass(frozen=True)
class BondSets:
    strong: dict
    weak: Bonds

    def count(self) -> int:
        return len(self.weak) + sum(len(b) for b in self.strong.values())


def _collect(model, box, offsets, labels, mask_first, accept, periodic):
    sites = box.sites()
    firsts, seconds, offs = [], [], []
    cand = np.flatnonzero(mask_first)
    for delta in offsets:
        k2 = sites[cand] + delta
        if periodic:
            k2 = box.wrap(k2)
            ok = np.ones(len(cand), dtype=bool)
        else:
            ok = box.contains(k2)
        idx2 = np.full(len(cand), -1, dtype=np.int64)
        idx2[ok] = box.index_of(k2[ok])
        ok &= accept(labels[cand], np.where(ok, labels[np.maximum(idx2, 0)], -1))
        firsts.append(cand[ok])
        seconds.append(idx2[ok])
        offs.append(np.repeat(delta[None, :], ok.sum(), axis=0))
    if not firsts:
        e = np.zeros(0, dtype=np.int64)
        return Bonds(e, e, np.zeros((0, box.d), dtype=np.int64))
    first = np.concatenate(firsts)
    second = np.concatenate(seconds)
    off = np.concatenate(offs).reshape(-1, box.d)
    # on small tori distinct periodic bonds may share endpoints (or be loops); all are kept
    order = np.lexsort((second, first))
    return Bonds(first[order], second[order], off[order])


def bond_sets(model: PeriodicLatticeModel, box: Box, periodic: bool = False,
              decomposition: PhaseDecomposition | None = None) -> BondSets:
    """Strong bonds per phase and weak bonds with both endpoints in ``box``.

    With ``periodic=True`` the box is treated as a torus and bonds leaving
    it wrap around; the box should then be aligned to the period.
    """
    labels = model.label(box.sites())
    strong = {}
    for j in range(1, model.N + 1):
        strong[j] = _collect(
            model, box, model.positive_offsets(j), labels, labels == j,
            lambda a, b, j=j: b == j, periodic,
        )
    weak = _collect(
        model, box, model.positive_offsets(0), labels, np.ones(len(labels), dtype=bool),
        lambda a, b: (b >= 0) & ((a * b == 0) | (a != b)), periodic,
    )
    return BondSets(strong, weak)


def _cell_slices(box: Box, T: int):
    """Periodicity cells T*i + [0,T)^d fully inside ``box``, as (i, flat indices)."""
    lo = np.array(box.lo)
    hi = np.array(box.hi)
    first = -((-lo) // T)
    last = hi // T  # exclusive
    if np.any(last <= first):
        return []
    cells = []
    local = np.array(list(itertools.product(range(T), repeat=box.d)), dtype=np.int64).reshape(-1, box.d)
    for i in itertools.product(*[range(a, b) for a, b in zip(first, last)]):
        i = np.array(i, dtype=np.int64)
        cells.append((i, box.index_of(T * i + local)))
    return cells


def extend_from_component(field: DiscreteField, model: PeriodicLatticeModel, phase: int = 1,
                          decomposition: PhaseDecomposition | None = None) -> DiscreteField:
    """Fill non-component sites with cell averages over the infinite component.

    Sites of the infinite component of ``phase`` keep their values.  On each
    periodicity cell fully inside the box the remaining sites receive the
    average over the component sites of that cell; sites outside full cells
    copy the nearest full cell's average.
    """
    dec = decomposition or model.phases
    T = model.T
    box = field.box
    cells = _cell_slices(box, T)
    if not cells:
        raise EmptyComponentInBox("box contains no complete periodicity cell")
    sites = box.sites()
    on_c = dec.role[tuple(np.mod(sites, T).T)] == phase
    out = field.values.copy()
    centers = np.array([T * i + (T - 1) / 2.0 for i, _ in cells], dtype=float).reshape(-1, box.d)
    avgs = np.array([field.values[idx[on_c[idx]]].mean(axis=0) for _, idx in cells])
    assigned = np.zeros(box.size, dtype=bool)
    for (i, idx), a in zip(cells, avgs):
        fill = idx[~on_c[idx]]
        out[fill] = a
        assigned[idx] = True
    rest = np.flatnonzero(~assigned & ~on_c)
    if len(rest):
        dist = np.abs(sites[rest][:, None, :] - centers[None, :, :]).max(axis=2)
        nearest = np.argmin(dist, axis=1)
        out[rest] = avgs[nearest]
    return DiscreteField(box, out, field.eps)


def two_scale_decompose(field: DiscreteField, model: PeriodicLatticeModel) -> dict:
    """Split a field into one coarse field per residue ``y``.

    The coarse field for ``y`` lives on the box of cell indices ``i`` and
    holds ``field(y + T*i)``; its spacing is ``T * eps``.
    """
    T = model.T
    box = field.box
    if not box.is_aligned(T):
        raise MisalignedBox("box corners must be multiples of the period")
    coarse = Box(tuple(l // T for l in box.lo), tuple(h // T for h in box.hi))
    csites = coarse.sites()
    out = {}
    for y in model.cell_sites():
        idx = box.index_of(T * csites + y)
        out[tuple(int(v) for v in y)] = DiscreteField(coarse, field.values[idx], field.eps * T)
    return out


def reassemble(family: dict, model: PeriodicLatticeModel) -> DiscreteField:
    """Inverse of :func:`two_scale_decompose`."""
    T = model.T
    any_field = next(iter(family.values()))
    coarse = any_field.box
    box = Box(tuple(T * l for l in coarse.lo), tuple(T * h for h in coarse.hi))
    values = np.zeros((box.size, any_field.m))
    csites = coarse.sites()
    for y, f in family.items():
        values[box.index_of(T * csites + np.array(y))] = f.values
    return DiscreteField(box, values, any_field.eps / T)
