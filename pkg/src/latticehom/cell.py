"""Cell problems: interaction densities, homogenized densities, island minima
and the two-scale interaction density."""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import connected_components

from .energy import Density, EnergyModel, Quadratic
from .lattice import Box, PeriodicLatticeModel, bond_sets
from .solver import (ConstraintSet, Objective, SolveReport, bond_term, minimize,
                     quadratic_form_recover, site_term)


class MonotonicityViolation(ArithmeticError):
    """Cell values decreased along a dyadic sequence beyond the solver tolerance."""


def _as_z(z, N: int, m: int) -> np.ndarray:
    arr = np.asarray(z, dtype=float).reshape(-1)
    if arr.size != N * m:
        raise ValueError(f"expected {N * m} values for the hard-phase levels, got {arr.size}")
    return arr.reshape(N, m)


def cell_box(M: int, d: int, T: int) -> Box:
    """The cube of side ``M`` centred at the origin, shifted so its corner lies on the period lattice."""
    if M < 1 or M % T:
        raise ValueError(f"cell size {M} must be a positive multiple of the period {T}")
    lo = -T * math.ceil(M / (2 * T))
    return Box.cube(lo, M, d)


def layer_mask(box: Box, R: float) -> np.ndarray:
    """Sites of ``box`` outside the concentric box shrunk by ``R`` (``R/2`` per side)."""
    sites = box.sites()
    lo = np.array(box.lo)
    hi = np.array(box.hi) - 1
    dist = np.minimum(sites - lo, hi - sites).min(axis=1)
    return dist < R / 2.0


def _components(n: int, first, second, mask) -> list:
    """Connected components among sites with ``mask`` true, joined by the given bonds."""
    keep = mask[first] & mask[second]
    G = sp.csr_matrix((np.ones(keep.sum()), (first[keep], second[keep])), shape=(n, n))
    _, lab = connected_components(G, directed=False)
    groups: dict = {}
    for i in np.flatnonzero(mask):
        groups.setdefault(lab[i], []).append(int(i))
    return sorted(groups.values(), key=min)


def default_boundary_width(model: PeriodicLatticeModel) -> int:
    """Total width ``R`` of the pinned layer: twice the larger of the weak reach and
    (largest island diameter + 1)."""
    dec = model.phases
    diam = max((c.diameter for isl in dec.islands.values() for c in isl), default=-1)
    return 2 * max(model.reach(0), diam + 1, 1)


@dataclass
class CellSolution:
    M: int
    box: Box
    periodic: bool
    field: np.ndarray
    value: float
    parts: dict
    report: SolveReport
    weak_bonds: tuple
    p: float

    @property
    def soft_only(self) -> float:
        """Normalized value without the site term on infinite-component sites."""
        return self.value - self.parts["site_hard"]


def _site_centers(energy: EnergyModel, model, n: int, x, target):
    if target is not None:
        return np.broadcast_to(np.asarray(target, dtype=float).reshape(1, -1), (n, model.m))
    xx = np.zeros((1, model.d)) if x is None else np.asarray(x, dtype=float).reshape(1, -1)
    c = energy.site.centers(xx, model.m)
    return np.broadcast_to(c, (n, model.m))


def solve_cell(z, M: int, model: PeriodicLatticeModel, energy: EnergyModel, x=None,
               boundary: str = "periodic", target=None, pin_zero=None, R: float | None = None,
               tol: float | None = None, x0=None) -> CellSolution:
    """Minimize the weak-bond plus site energy on the cell of side ``M``.

    Infinite-component sites are fixed at their phase level ``z[j]``; every
    other connected piece of a hard phase inside the cell shares one value.
    ``boundary`` is ``"periodic"`` (the cell is a torus) or ``"free"`` (bonds
    leaving the cell are dropped).  ``pin_zero="layer"`` additionally fixes
    the boundary set of width ``R`` to zero.  The site potential's centre is
    ``target`` if given, otherwise its profile at the macroscopic point ``x``.
    """
    if boundary not in ("periodic", "free"):
        raise ValueError("boundary must be 'periodic' or 'free'")
    periodic = boundary == "periodic"
    N, m, d = model.N, model.m, model.d
    zz = _as_z(z, N, m)
    box = cell_box(M, d, model.T)
    n = box.size
    sites = box.sites()
    role = model.phases.role[tuple(np.mod(sites, model.T).T)]
    bonds = bond_sets(model, box, periodic=periodic)
    wb = bonds.weak
    terms = {"weak": bond_term(wb.first, wb.second, n, energy.weak, 1.0, 1.0, m=m)}
    site_w = None
    if energy.site is not None:
        site_w = energy.site.site_weights(model, sites)
        centers = _site_centers(energy, model, n, x, target)
        for name, mask in (("site_hard", role > 0), ("site_island", role < 0), ("site_soft", role == 0)):
            idx = np.flatnonzero(mask & (site_w != 0))
            terms[name] = site_term(idx, n, energy.site.density, site_w[idx], centers[idx], m=m)
    cons = ConstraintSet()
    for j in range(1, N + 1):
        cons.pin(np.flatnonzero(role == j), zz[j - 1], m=m)
    island_groups = []
    for j in range(1, N + 1):
        sb = bonds.strong[j]
        for group in _components(n, sb.first, sb.second, role == -j):
            cons.tie(group)
            island_groups.append(group)
    if pin_zero is not None:
        if isinstance(pin_zero, str) and pin_zero == "layer":
            pz = boundary_set(model, box, R if R is not None else default_boundary_width(model),
                              periodic=periodic)
        else:
            pz = np.asarray(pin_zero, dtype=np.int64)
        cons.pin(pz, np.zeros(m), m=m)
    obj = Objective(n, m, list(terms.values()))
    rep = minimize(obj, cons, tol=tol, x0=x0)
    u = rep.field
    norm = float(M) ** d
    parts = {name: t.value(u) / norm for name, t in terms.items()}
    for name in ("site_hard", "site_island", "site_soft"):
        parts.setdefault(name, 0.0)
    value = math.fsum(parts.values())
    return CellSolution(M, box, periodic, u, value, parts, rep, (wb.first, wb.second), energy.p)


def boundary_set(model: PeriodicLatticeModel, box: Box, R: float, periodic: bool = False) -> np.ndarray:
    """Flat indices of the boundary set: soft sites of the layer of width ``R`` plus
    the bounded hard-phase pieces of the cell that lie entirely in the layer."""
    layer = layer_mask(box, R)
    sites = box.sites()
    role = model.phases.role[tuple(np.mod(sites, model.T).T)]
    out = set(np.flatnonzero(layer & (role == 0)).tolist())
    bonds = bond_sets(model, box, periodic=periodic)
    n = box.size
    for j in range(1, model.N + 1):
        sb = bonds.strong[j]
        for group in _components(n, sb.first, sb.second, role == -j):
            if all(layer[g] for g in group):
                out.update(group)
    return np.array(sorted(out), dtype=np.int64)


def phi_M(z, M: int, model: PeriodicLatticeModel, energy: EnergyModel, x=None,
          boundary: str = "periodic", target=None, tol: float | None = None) -> float:
    """Normalized cell minimum with hard-phase levels ``z``."""
    return solve_cell(z, M, model, energy, x, boundary, target, tol=tol).value


def phi_tilde_M(z, M: int, model: PeriodicLatticeModel, energy: EnergyModel, R: float | None = None,
                x=None, boundary: str = "free", target=None, tol: float | None = None) -> float:
    """As :func:`phi_M` with the boundary set of width ``R`` pinned to zero."""
    return solve_cell(z, M, model, energy, x, boundary, target, pin_zero="layer", R=R, tol=tol).value


def boundary_layer_energy(sol: CellSolution, R_M: float) -> float:
    """``M^-d`` times the sum of ``|v_k - v_k'|^p`` over weak bonds with both ends in the layer of width ``R_M``."""
    layer = layer_mask(sol.box, R_M)
    a, b = sol.weak_bonds
    keep = layer[a] & layer[b]
    diff = sol.field[a[keep]] - sol.field[b[keep]]
    vals = np.linalg.norm(diff, axis=1) ** sol.p
    return math.fsum(vals) / float(sol.M) ** sol.box.d


# -------------------------------------------------------------- tables

@dataclass
class PhiTable:
    samples: np.ndarray
    Ms: list
    values: np.ndarray
    variant: str
    boundary: str
    metadata: dict = field(default_factory=dict)

    @property
    def extrapolated(self) -> np.ndarray:
        return self.values[:, -1]

    @property
    def increments(self) -> np.ndarray:
        return np.diff(self.values, axis=1)

    def monotone(self, tol: float = 1e-8) -> bool:
        return not _dyadic_violations(self.Ms, self.values, tol)

    def rows(self):
        for i, z in enumerate(self.samples):
            for k, M in enumerate(self.Ms):
                yield (*z, M, self.values[i, k])


def _dyadic_violations(Ms, values, tol):
    bad = []
    for a, Ma in enumerate(Ms):
        for b, Mb in enumerate(Ms):
            if Mb > Ma and Mb % Ma == 0 and (Mb // Ma) & (Mb // Ma - 1) == 0:
                drop = values[:, a] - values[:, b]
                for i in np.flatnonzero(drop > tol):
                    bad.append((i, Ma, Mb, float(drop[i])))
    return bad


def _phi_task(args):
    z, M, model, energy, variant, boundary, R, tol = args
    if variant == "tilde":
        return phi_tilde_M(z, M, model, energy, R=R, boundary=boundary, tol=tol)
    return phi_M(z, M, model, energy, boundary=boundary, tol=tol)


def phi_limit(samples, Ms, model: PeriodicLatticeModel, energy: EnergyModel, variant: str = "free",
              boundary: str = "periodic", R: float | None = None, tol: float | None = None,
              mono_tol: float = 1e-8, workers: int = 1) -> PhiTable:
    """Tabulate the cell values over a dyadic list of sizes and check monotonicity.

    ``variant`` is ``"free"`` (no boundary pinning) or ``"tilde"`` (boundary set
    pinned to zero).  The extrapolated value is the last entry of each row.
    """
    Ms = [int(M) for M in Ms]
    if len(Ms) < 3:
        raise ValueError("at least three cell sizes are needed")
    samples = np.atleast_2d(np.asarray(samples, dtype=float))
    if R is None and variant == "tilde":
        R = default_boundary_width(model)
    tasks = [(z, M, model, energy, variant, boundary, R, tol) for z in samples for M in Ms]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            flat = list(ex.map(_phi_task, tasks))
    else:
        flat = [_phi_task(t) for t in tasks]
    values = np.array(flat, dtype=float).reshape(len(samples), len(Ms))
    if variant == "free":
        bad = _dyadic_violations(Ms, values, mono_tol)
        if bad:
            i, Ma, Mb, drop = bad[0]
            raise MonotonicityViolation(f"sample {i}: value at {Mb} is {drop:.3e} below the value at {Ma}")
    meta = {"model": model.fingerprint(), "tol": tol, "mono_tol": mono_tol, "R": R}
    return PhiTable(samples, Ms, values, variant, boundary, meta)


# ------------------------------------------------------ homogenized density

def f_hom_estimate(j: int, xi, K: int, model: PeriodicLatticeModel, energy: EnergyModel,
                   boundary: str = "periodic", tol: float | None = None) -> float:
    """Normalized strong-phase energy of the best perturbation of the affine field ``xi x``.

    ``boundary="periodic"`` uses periodic perturbations on the torus of side
    ``K``; ``boundary="dirichlet"`` uses the box ``[0, K)^d`` with the
    perturbation vanishing within interaction range of its faces.
    """
    d, m = model.d, model.m
    if K % model.T or K < 1:
        raise ValueError(f"cell size {K} must be a positive multiple of the period {model.T}")
    if j not in model.phases.infinite:
        raise ValueError(f"phase {j} has no infinite component")
    xi = np.asarray(xi, dtype=float).reshape(m, d)
    box = Box.cube(0, K, d)
    n = box.size
    sites = box.sites()
    on_c = model.phases.role[tuple(np.mod(sites, model.T).T)] == j
    periodic = boundary == "periodic"
    if boundary not in ("periodic", "dirichlet"):
        raise ValueError("boundary must be 'periodic' or 'dirichlet'")
    sb = bond_sets(model, box, periodic=periodic).strong[j]
    keep = on_c[sb.first] & on_c[sb.second]
    first, second, off = sb.first[keep], sb.second[keep], sb.offset[keep]
    # u_k - u_k' = -xi . delta + (v_k - v_k')
    offset = (off @ xi.T).reshape(-1, m)
    term = bond_term(first, second, n, energy.strong_density(j), 1.0, 1.0, offset=offset, m=m)
    cons = ConstraintSet()
    cons.pin(np.flatnonzero(~on_c), np.zeros(m), m=m)
    if not periodic:
        r = model.reach(j)
        near = np.any((sites < r) | (sites > K - 1 - r), axis=1)
        cons.pin(np.flatnonzero(near), np.zeros(m), m=m)
    rep = minimize(Objective(n, m, [term]), cons, tol=tol)
    return rep.value / float(K) ** d


@dataclass
class HomDensityTable:
    phase: int
    directions: np.ndarray
    Ks: list
    values: np.ndarray
    matrix: np.ndarray | None = None

    @property
    def extrapolated(self) -> np.ndarray:
        return self.values[:, -1]


def fhom_matrix(j: int, model: PeriodicLatticeModel, energy: EnergyModel, K: int | None = None,
                boundary: str = "periodic") -> np.ndarray:
    """Matrix ``A`` with ``f_hom(xi) = <A vec(xi), vec(xi)>`` for quadratic strong densities
    (``vec`` flattens the ``m x d`` gradient row by row)."""
    K = model.T if K is None else K
    dim = model.m * model.d
    return quadratic_form_recover(lambda v: f_hom_estimate(j, v, K, model, energy, boundary), dim)


def fhom_table(j: int, directions, Ks, model, energy, boundary: str = "periodic") -> HomDensityTable:
    directions = np.atleast_2d(np.asarray(directions, dtype=float))
    vals = np.array([[f_hom_estimate(j, xi, K, model, energy, boundary) for K in Ks] for xi in directions])
    mat = None
    if energy.strong_density(j).quadratic:
        mat = fhom_matrix(j, model, energy, Ks[-1], boundary)
    return HomDensityTable(j, directions, list(Ks), vals, mat)


# ------------------------------------------------------------ islands

@dataclass
class IslandMin:
    value: float
    field: np.ndarray


def island_min(sites, offsets, density: Density, m: int = 1, tol: float | None = None) -> IslandMin:
    """Minimum of the island's internal bond energy over unconstrained values.

    Bonds join island sites whose difference is a lexicographically positive
    element of ``offsets``; each is counted once.
    """
    sites = np.asarray(sites, dtype=np.int64)
    if sites.ndim == 1:
        sites = sites[:, None]
    d = sites.shape[1]
    index = {tuple(s): i for i, s in enumerate(sites)}
    offs = np.asarray(offsets, dtype=np.int64).reshape(-1, d)
    first, second = [], []
    for i, s in enumerate(sites):
        for delta in offs:
            if not any(delta) or next(x for x in delta if x != 0) < 0:
                continue
            k = index.get(tuple(s + delta))
            if k is not None:
                first.append(i)
                second.append(k)
    n = len(sites)
    if not first:
        return IslandMin(0.0, np.zeros((n, m)))
    obj = Objective(n, m, [bond_term(np.array(first), np.array(second), n, density, 1.0, 1.0, m=m)])
    rep = minimize(obj, ConstraintSet(), tol=tol)
    return IslandMin(rep.value, rep.field)


@dataclass
class IslandConstants:
    values: dict
    T: int
    d: int

    @property
    def m(self) -> float:
        return math.fsum(self.values.values()) / self.T ** self.d


def aggregate_m(model: PeriodicLatticeModel, energy: EnergyModel) -> IslandConstants:
    values = {}
    for j, isl in model.phases.islands.items():
        for l, comp in enumerate(isl):
            values[(j, l)] = island_min(comp.lift, model.ranges[j], energy.strong_density(j), model.m).value
    return IslandConstants(values, model.T, model.d)


# ------------------------------------------------ two-scale density

def _residue_values(u, model):
    arr = np.asarray(u, dtype=float)
    n = model.T ** model.d
    return arr.reshape(*arr.shape[:-2], n, model.m) if arr.shape[-2:] == (n, model.m) else arr.reshape(-1, n, model.m)


def phi_g_convex(u, w, model: PeriodicLatticeModel, energy: EnergyModel, g: Density | None = None,
                 sites: str = "all", check: bool = True) -> np.ndarray | float:
    """Direct evaluation of the two-scale density at residue values ``u``.

    ``u`` and ``w`` hold one value per residue of the periodicity cell (in
    row-major order), optionally with leading batch axes.  ``sites`` selects
    where the comparison density ``g`` acts: ``"all"`` residues or only the
    ``"soft"`` ones.
    """
    g = energy.site.density if g is None else g
    T, d, m = model.T, model.d, model.m
    nres = T ** d
    U = np.asarray(u, dtype=float)
    batch = U.shape[:-2] if U.ndim >= 2 and U.shape[-2:] == (nres, m) else None
    U = U.reshape(-1, nres, m)
    W = np.broadcast_to(np.asarray(w, dtype=float).reshape(-1, nres, m) if np.size(w) > 1 else np.full((1, nres, m), float(np.asarray(w))), U.shape)
    box = Box.cube(0, T, d)
    role = model.phases.role[tuple(box.sites().T)]
    if check:
        for j in range(1, model.N + 1):
            on = np.flatnonzero(role == j)
            if len(on) > 1 and np.max(np.abs(U[:, on] - U[:, on[:1]])) > 1e-12:
                raise ValueError(f"values must agree on the infinite component of phase {j}")
    wb = bond_sets(model, box, periodic=True).weak
    B = len(U)
    bond_part = energy.weak.value((U[:, wb.first] - U[:, wb.second]).reshape(-1, m)).reshape(B, -1)
    sel = np.arange(nres) if sites == "all" else np.flatnonzero(role == 0)
    site_part = g.value((U[:, sel] - W[:, sel]).reshape(-1, m)).reshape(B, -1)
    out = np.array([math.fsum([*bp, *spart]) for bp, spart in zip(bond_part, site_part)]) / nres
    if batch is None:
        return float(out[0])
    return out.reshape(batch)


def phi_g_general(u, w, M: int, model: PeriodicLatticeModel, energy: EnergyModel, g: Density | None = None,
                  sites: str = "all", tol: float | None = None) -> float:
    """Two-scale density from the periodic cell problem of side ``T*M`` with prescribed residue averages."""
    g = energy.site.density if g is None else g
    T, d, m = model.T, model.d, model.m
    nres = T ** d
    U = np.asarray(u, dtype=float).reshape(nres, m)
    W = np.broadcast_to(np.asarray(w, dtype=float).reshape(-1, m), (nres, m)) if np.size(w) > 1 \
        else np.full((nres, m), float(np.asarray(w)))
    box = Box.cube(0, T * M, d)
    n = box.size
    sites_k = box.sites()
    res = np.mod(sites_k, T)
    res_flat = Box.cube(0, T, d).index_of(res)
    wb = bond_sets(model, box, periodic=True).weak
    terms = [bond_term(wb.first, wb.second, n, energy.weak, 1.0, 1.0, m=m)]
    lab = model.label(sites_k)
    sel = np.arange(n) if sites == "all" else np.flatnonzero(lab == 0)
    terms.append(site_term(sel, n, g, 1.0, W[res_flat[sel]], m=m))
    cons = ConstraintSet()
    for y in range(nres):
        cons.average(np.flatnonzero(res_flat == y), U[y] * M ** d)
    rep = minimize(Objective(n, m, terms), cons, tol=tol)
    return rep.value / float(T * M) ** d


# ----------------------------------------- quadratic interaction density

@dataclass
class QuadraticPhi:
    """Interaction density of a quadratic model as a quadratic form in
    ``(z_1, .., z_N, c)`` where ``c`` is the site-potential centre."""

    Q: np.ndarray
    N: int
    m: int
    has_center: bool

    def __call__(self, z, c=None) -> np.ndarray:
        z = np.asarray(z, dtype=float).reshape(-1, self.N * self.m)
        if self.has_center:
            c = np.zeros((len(z), self.m)) if c is None else np.broadcast_to(np.asarray(c, dtype=float).reshape(-1, self.m), (len(z), self.m))
            v = np.concatenate([z, c], axis=1)
        else:
            v = z
        return np.einsum("ij,jk,ik->i", v, self.Q, v)

    def density(self) -> Quadratic:
        return Quadratic(1.0, A=self.Q)


def phi_quadratic(model: PeriodicLatticeModel, energy: EnergyModel, M: int | None = None,
                  boundary: str = "periodic") -> QuadraticPhi:
    """Recover the interaction density of a quadratic model from cell solves."""
    if not energy.is_quadratic:
        raise ValueError("the model is not quadratic")
    if energy.site is not None and energy.site.density.degree != 2.0:
        raise ValueError("site density must be an unshifted quadratic")
    M = model.T if M is None else M
    N, m = model.N, model.m
    has_c = energy.site is not None
    dim = N * m + (m if has_c else 0)

    def q(v):
        z = v[: N * m]
        c = v[N * m:] if has_c else None
        return solve_cell(z, M, model, energy, boundary=boundary, target=c).value

    return QuadraticPhi(quadratic_form_recover(q, dim), N, m, has_c)
