"""Limit functionals on a macroscopic grid and micro/macro comparisons of minima."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import RegularGridInterpolator

from .cell import (PhiTable, QuadraticPhi, aggregate_m, fhom_matrix, phi_g_convex,
                   phi_quadratic)
from .energy import Density, EnergyModel, Quadratic, energy_objective
from .lattice import Box, DiscreteField, PeriodicLatticeModel, extend_from_component
from .solver import Objective, bond_term, minimize, stacked_term


class ExtrapolationError(ValueError):
    """A state left the sampled range of a tabulated density."""


@dataclass(frozen=True)
class MacroGrid:
    """Cell-centred grid on a box of R^dim."""

    lower: tuple
    upper: tuple
    shape: tuple

    @classmethod
    def interval(cls, n: int, a: float = 0.0, b: float = 1.0) -> "MacroGrid":
        return cls((float(a),), (float(b),), (int(n),))

    @property
    def dim(self) -> int:
        return len(self.shape)

    @property
    def h(self) -> np.ndarray:
        return (np.array(self.upper) - np.array(self.lower)) / np.array(self.shape)

    @property
    def size(self) -> int:
        return int(np.prod(self.shape))

    @property
    def cell_volume(self) -> float:
        return float(np.prod(self.h))

    @property
    def volume(self) -> float:
        return float(np.prod(np.array(self.upper) - np.array(self.lower)))

    def centers(self) -> np.ndarray:
        axes = [self.lower[a] + (np.arange(n) + 0.5) * self.h[a] for a, n in enumerate(self.shape)]
        mesh = np.meshgrid(*axes, indexing="ij")
        return np.stack([g.ravel() for g in mesh], axis=1)

    def sample(self, fn, m: int = 1) -> np.ndarray:
        vals = np.asarray(fn(self.centers()), dtype=float).reshape(self.size, -1)
        return np.repeat(vals, m, axis=1) if vals.shape[1] == 1 and m > 1 else vals


@dataclass
class MacroState:
    """Hard-phase fields ``hard[j-1]`` of shape ``(n, m)``; in two-scale mode
    ``residues`` maps residues outside the infinite components to fields."""

    grid: MacroGrid
    hard: np.ndarray
    residues: dict | None = None

    def __post_init__(self):
        self.hard = np.asarray(self.hard, dtype=float)
        if self.hard.ndim == 2:
            self.hard = self.hard[:, :, None]

    @property
    def N(self) -> int:
        return self.hard.shape[0]

    @property
    def m(self) -> int:
        return self.hard.shape[2]

    def residue_array(self, model: PeriodicLatticeModel) -> np.ndarray:
        """All residue fields stacked as ``(n, T^d, m)``; hard residues copy their phase field."""
        if self.residues is None:
            raise ValueError("state carries no residue fields")
        cell = model.cell_sites()
        role = model.phases.role[tuple(cell.T)]
        out = np.empty((self.grid.size, len(cell), self.m))
        for i, y in enumerate(cell):
            if role[i] > 0:
                out[:, i] = self.hard[role[i] - 1]
            else:
                out[:, i] = np.asarray(self.residues[tuple(int(v) for v in y)], dtype=float).reshape(self.grid.size, self.m)
        return out


class PhiFromForm:
    """Interaction density from a recovered quadratic form; the centre follows the site profile."""

    def __init__(self, form: QuadraticPhi, energy: EnergyModel):
        self.form = form
        self.energy = energy

    def centers(self, x: np.ndarray) -> np.ndarray | None:
        if not self.form.has_center:
            return None
        return self.energy.site.centers(x, self.form.m)

    def __call__(self, x, z) -> np.ndarray:
        return self.form(z, self.centers(np.atleast_2d(x)))

    def as_terms(self, x: np.ndarray, n_nodes: int, N: int, m: int, weight: float):
        """Per-node quadratic terms on unknowns laid out phase-major, plus a constant."""
        Q = self.form.Q
        k = N * m
        Qzz = Q[:k, :k]
        idx = np.stack([np.arange(n_nodes) + j * n_nodes for j in range(N)], axis=1)
        if not self.form.has_center:
            return stacked_term(idx, N * n_nodes, Quadratic(1.0, A=Qzz), weight, m=m), 0.0
        c = self.centers(x)
        Qzc = Q[:k, k:]
        Qcc = Q[k:, k:]
        shift = -(np.linalg.pinv(Qzz) @ (Qzc @ c.T)).T  # (n, k)
        const = np.einsum("ij,jk,ik->i", c, Qcc, c) - np.einsum("ij,jk,ik->i", shift, Qzz, shift)
        return (stacked_term(idx, N * n_nodes, Quadratic(1.0, A=Qzz), weight, offset=shift, m=m),
                weight * math.fsum(const))


class PhiFromTable:
    """Multilinear interpolation of a tabulated interaction density (no x dependence)."""

    def __init__(self, table: PhiTable, axes: list):
        self.axes = [np.asarray(a, dtype=float) for a in axes]
        shape = tuple(len(a) for a in self.axes)
        vals = table.extrapolated.reshape(shape)
        self.lo = np.array([a[0] for a in self.axes])
        self.hi = np.array([a[-1] for a in self.axes])
        self._interp = RegularGridInterpolator(self.axes, vals, method="linear")

    def __call__(self, x, z) -> np.ndarray:
        z = np.atleast_2d(np.asarray(z, dtype=float))
        if np.any(z < self.lo - 1e-12) or np.any(z > self.hi + 1e-12):
            raise ExtrapolationError("state outside the tabulated range of the interaction density")
        return self._interp(np.clip(z, self.lo, self.hi))


@dataclass
class LimitFunctional:
    """Homogenized densities per phase, island constant and interaction density."""

    fhom: dict
    m_const: float
    phi: object
    model: PeriodicLatticeModel | None = None
    energy: EnergyModel | None = None
    fingerprint: str = ""
    details: dict = field(default_factory=dict)

    @classmethod
    def from_model(cls, model: PeriodicLatticeModel, energy: EnergyModel, K: int | None = None,
                   M: int | None = None) -> "LimitFunctional":
        """Assemble the limit of a quadratic model from periodic cell problems."""
        fh = {}
        mats = {}
        for j in range(1, model.N + 1):
            A = fhom_matrix(j, model, energy, K)
            mats[j] = A.tolist()
            fh[j] = Quadratic(1.0, A=A)
        isl = aggregate_m(model, energy)
        form = phi_quadratic(model, energy, M)
        return cls(fh, isl.m, PhiFromForm(form, energy), model, energy, model.fingerprint(),
                   {"fhom": mats, "phi": form.Q.tolist(), "m": isl.m})


def _gradients(grid: MacroGrid, u: np.ndarray) -> np.ndarray:
    """Central differences (one-sided at the ends) of ``u`` of shape ``(n, m)``; returns ``(n, m*dim)``."""
    m = u.shape[1]
    U = u.reshape(*grid.shape, m)
    gs = []
    for a in range(grid.dim):
        if grid.shape[a] < 2:
            gs.append(np.zeros_like(U))
        else:
            gs.append(np.gradient(U, grid.h[a], axis=a, edge_order=1))
    G = np.stack(gs, axis=-1)  # (..., m, dim)
    return G.reshape(grid.size, m * grid.dim)


def evaluate_F_hom(state: MacroState, limit: LimitFunctional) -> float:
    """Midpoint-rule value of the limit functional at ``state``."""
    grid = state.grid
    w = grid.cell_volume
    x = grid.centers()
    parts = []
    for j in range(1, state.N + 1):
        parts.extend(w * limit.fhom[j].value(_gradients(grid, state.hard[j - 1])))
    parts.append(limit.m_const * grid.volume)
    z = np.concatenate([state.hard[j] for j in range(state.N)], axis=1)
    parts.extend(w * limit.phi(x, z))
    return math.fsum(parts)


def evaluate_G0(state: MacroState, limit: LimitFunctional, w, g: Density | None = None) -> float:
    """Two-scale limit value: hard-phase gradient terms, comparison term on
    infinite-component residues and the two-scale density on the rest.

    ``w`` is a constant, a callable of position, or an array ``(n, T^d, m)``.
    """
    model, energy = limit.model, limit.energy
    g = energy.site.density if g is None else g
    grid = state.grid
    vol = grid.cell_volume
    U = state.residue_array(model)
    n, nres, m = U.shape
    if callable(w):
        W = np.repeat(grid.sample(w, m)[:, None, :], nres, axis=1)
    else:
        W = np.broadcast_to(np.asarray(w, dtype=float), U.shape) if np.ndim(w) == 3 \
            else np.full(U.shape, float(w))
    role = model.phases.role[tuple(model.cell_sites().T)]
    parts = []
    for j in range(1, model.N + 1):
        parts.extend(vol * limit.fhom[j].value(_gradients(grid, state.hard[j - 1])))
    hard = np.flatnonzero(role > 0)
    if len(hard):
        vals = g.value((U[:, hard] - W[:, hard]).reshape(-1, m)).reshape(n, -1)
        parts.extend(vol * vals.ravel() / nres)
    parts.extend(vol * phi_g_convex(U, W, model, energy, g=g, sites="soft"))
    return math.fsum(parts)


@dataclass
class MacroMinimum:
    state: MacroState
    value: float
    report: object


def minimize_F_hom(limit: LimitFunctional, grid: MacroGrid, tol: float | None = None) -> MacroMinimum:
    """Minimize a finite-volume discretization of a quadratic limit functional on a 1D grid.

    Gradients are face differences (natural boundary conditions); the
    interaction term is integrated with the midpoint rule.
    """
    if grid.dim != 1:
        raise NotImplementedError("macro minimization is implemented on intervals")
    if not isinstance(limit.phi, PhiFromForm):
        raise NotImplementedError("macro minimization needs a quadratic interaction density")
    N = len(limit.fhom)
    m = limit.phi.form.m
    n = grid.size
    h = float(grid.h[0])
    terms = []
    for j in range(1, N + 1):
        a = np.arange(n - 1) + (j - 1) * n
        terms.append(bond_term(a, a + 1, N * n, limit.fhom[j], h, -1.0 / h, m=m))
    pt, const = limit.phi.as_terms(grid.centers(), n, N, m, h)
    terms.append(pt)
    obj = Objective(N * n, m, terms, constant=const + limit.m_const * grid.volume)
    rep = minimize(obj, tol=tol)
    hard = rep.field.reshape(N, n, m)
    return MacroMinimum(MacroState(grid, hard), rep.value, rep)


@dataclass
class MinimaReport:
    eps: list
    micro: list
    macro: float
    extended: list = field(default_factory=list)

    @property
    def gaps(self) -> list:
        return [abs(a - self.macro) for a in self.micro]

    @property
    def relative_gaps(self) -> list:
        return [g / abs(self.macro) if self.macro else math.inf for g in self.gaps]

    def decreasing(self) -> bool:
        g = self.gaps
        return all(b < a for a, b in zip(g, g[1:]))

    def rows(self):
        for e, mi, gap in zip(self.eps, self.micro, self.gaps):
            yield e, mi, self.macro, gap


def micro_minimum(model: PeriodicLatticeModel, energy: EnergyModel, eps: float, tol: float | None = None):
    """Minimum of the scaled lattice energy on the sites ``0 <= k < 1/eps`` of the unit cube."""
    n = int(round(1.0 / eps))
    if abs(n * eps - 1.0) > 1e-12 or n % model.T:
        raise ValueError("1/eps must be an integer multiple of the period")
    box = Box.cube(0, n, model.d)
    obj = energy_objective(model, energy, box, eps)
    rep = minimize(obj, tol=tol)
    return DiscreteField(box, rep.field, eps), rep


def minima_convergence_experiment(model: PeriodicLatticeModel, energy: EnergyModel, eps_list,
                                  limit: LimitFunctional | None = None, n_macro: int = 2048,
                                  keep_fields: bool = False) -> MinimaReport:
    """Micro minima over a list of spacings against the minimum of the limit functional."""
    if model.d != 1:
        raise NotImplementedError("the experiment runs on the unit interval")
    limit = limit or LimitFunctional.from_model(model, energy)
    macro = minimize_F_hom(limit, MacroGrid.interval(n_macro))
    micro, ext = [], []
    for eps in eps_list:
        fld, rep = micro_minimum(model, energy, eps)
        micro.append(rep.value)
        if keep_fields:
            ext.append({j: extend_from_component(fld, model, j) for j in range(1, model.N + 1)})
    return MinimaReport(list(eps_list), micro, macro.value, ext)
