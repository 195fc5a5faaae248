"""Gradient flows by minimizing movements on the lattice and on the macroscopic grid."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.linalg import expm
from scipy.sparse.csgraph import connected_components
from scipy.sparse.linalg import factorized

from .cell import fhom_matrix
from .energy import EnergyModel, Quadratic, energy_objective
from .gamma import MacroGrid
from .lattice import Box, DiscreteField, PeriodicLatticeModel, bond_sets, two_scale_decompose
from .solver import Objective, ProximalStepper, bond_term


class ConnectivityViolation(ValueError):
    """Some residues are not linked to any infinite hard component."""


def check_connectivity(model: PeriodicLatticeModel) -> None:
    """Every residue must reach an infinite hard component through strong or weak bonds."""
    T = model.T
    box = Box.cube(0, T, model.d)
    bonds = bond_sets(model, box, periodic=True)
    n = box.size
    first = np.concatenate([bonds.weak.first] + [b.first for b in bonds.strong.values()])
    second = np.concatenate([bonds.weak.second] + [b.second for b in bonds.strong.values()])
    G = sp.csr_matrix((np.ones(len(first)), (first, second)), shape=(n, n))
    _, lab = connected_components(G, directed=False)
    role = model.phases.role[tuple(box.sites().T)]
    good = set(lab[role > 0].tolist())
    bad = [tuple(int(v) for v in box.sites()[i]) for i in range(n) if lab[i] not in good]
    if bad:
        raise ConnectivityViolation(f"residues {bad} are not connected to an infinite component")


@dataclass
class MicroTrajectory:
    eps: float
    tau: float
    box: Box
    times: np.ndarray
    fields: np.ndarray  # (n_steps + 1, n_sites, m)
    energies: np.ndarray

    def field_at(self, step: int) -> DiscreteField:
        return DiscreteField(self.box, self.fields[step], self.eps)

    def step_sizes(self) -> np.ndarray:
        """Squared proximal distances ``eps^d |u_n - u_{n-1}|^2`` per step."""
        diff = np.diff(self.fields, axis=0)
        return self.eps ** self.box.d * np.einsum("nij,nij->n", diff, diff)


def minimizing_movement_micro(model: PeriodicLatticeModel, energy: EnergyModel, u0: DiscreteField,
                              tau: float, n_steps: int, tol: float | None = None,
                              check: bool = True) -> MicroTrajectory:
    """Iterated proximal steps of the scaled lattice energy with the ``eps^d``-weighted squared distance."""
    if energy.site is not None:
        raise ValueError("the flow is defined for energies without a site term")
    if not energy.is_convex:
        raise ValueError("the flow needs a convex energy")
    if tau <= 0:
        raise ValueError("time step must be positive")
    if check:
        check_connectivity(model)
    eps = u0.eps
    box = u0.box
    obj = energy_objective(model, energy, box, eps)
    w = np.full(box.size, eps ** box.d / tau)
    stepper = ProximalStepper(obj, w, tol)
    fields = [u0.values.copy()]
    energies = [obj.value(u0.values)]
    for _ in range(n_steps):
        u = stepper.step(fields[-1])
        fields.append(u)
        energies.append(obj.value(u))
    times = tau * np.arange(n_steps + 1)
    return MicroTrajectory(eps, tau, box, times, np.array(fields), np.array(energies))


# ------------------------------------------------------------------ macro

@dataclass(frozen=True)
class MacroGroups:
    """Residue groups that share one macroscopic field.

    Each infinite component is one group, each island one group and every
    soft residue its own group; ``weights`` are the group sizes over ``T^d``.
    """

    members: tuple  # residue flat indices per group
    kinds: tuple  # ("hard", j) | ("island", j) | ("soft", 0)
    weights: np.ndarray
    exchange: tuple  # (group a, group b, count) weak bonds of one period between distinct groups

    @property
    def size(self) -> int:
        return len(self.members)

    def group_of(self) -> np.ndarray:
        out = np.empty(sum(len(m) for m in self.members), dtype=np.int64)
        for g, mem in enumerate(self.members):
            out[list(mem)] = g
        return out


def macro_groups(model: PeriodicLatticeModel) -> MacroGroups:
    dec = model.phases
    cell = model.cell_sites()
    cbox = Box.cube(0, model.T, model.d)
    flat = lambda sites: tuple(int(i) for i in cbox.index_of(sites))
    members, kinds = [], []
    for j in range(1, model.N + 1):
        members.append(flat(dec.infinite[j].sites))
        kinds.append(("hard", j))
    for j in range(1, model.N + 1):
        for comp in dec.islands[j]:
            members.append(flat(comp.sites))
            kinds.append(("island", j))
    for y in dec.soft:
        members.append(flat(y[None, :]))
        kinds.append(("soft", 0))
    weights = np.array([len(m) for m in members], dtype=float) / len(cell)
    groups = MacroGroups(tuple(members), tuple(kinds), weights, ())
    gof = groups.group_of()
    wb = bond_sets(model, cbox, periodic=True).weak
    counts: dict = {}
    for a, b in zip(gof[wb.first], gof[wb.second]):
        if a != b:
            counts[(int(a), int(b))] = counts.get((int(a), int(b)), 0) + 1
    ex = tuple((a, b, c) for (a, b), c in sorted(counts.items()))
    return MacroGroups(groups.members, groups.kinds, weights, ex)


@dataclass
class MacroTrajectory:
    grid: MacroGrid
    tau: float
    times: np.ndarray
    groups: MacroGroups
    values: np.ndarray  # (n_steps + 1, n_groups, n_nodes, m)
    energies: np.ndarray

    @property
    def fractions(self) -> dict:
        """Volume fraction per infinite component and of the soft residues (key 0)."""
        out = {}
        for (kind, j), w in zip(self.groups.kinds, self.groups.weights):
            key = j if kind == "hard" else 0 if kind == "soft" else ("island", j)
            out[key] = out.get(key, 0.0) + w
        return out

    def hard(self, j: int) -> np.ndarray:
        return self.values[:, self.groups.kinds.index(("hard", j))]

    def residue(self, y_flat: int) -> np.ndarray:
        return self.values[:, self.groups.group_of()[y_flat]]

    def mass(self) -> np.ndarray:
        """Weighted total ``sum_g weight_g * integral(u_g)`` per step and component."""
        return np.einsum("g,tgnm->tm", self.groups.weights, self.values) * self.grid.cell_volume


def _macro_objective(model, energy, grid: MacroGrid, groups: MacroGroups, fhom: dict):
    if grid.dim != 1:
        raise NotImplementedError("macro flows are implemented on intervals")
    n = grid.size
    m = model.m
    h = float(grid.h[0])
    G = groups.size
    terms = []
    for g, (kind, j) in enumerate(groups.kinds):
        if kind == "hard":
            a = np.arange(n - 1) + g * n
            terms.append(bond_term(a, a + 1, G * n, fhom[j], h, -1.0 / h, m=m))
    ncell = model.T ** model.d
    for a, b, cnt in groups.exchange:
        ia = np.arange(n) + a * n
        ib = np.arange(n) + b * n
        terms.append(bond_term(ia, ib, G * n, energy.weak, h * cnt / ncell, 1.0, m=m))
    return Objective(G * n, m, terms)


def macro_flow(model: PeriodicLatticeModel, energy: EnergyModel, initial, tau: float, t_max: float,
               grid: MacroGrid, fhom: dict | None = None, tol: float | None = None) -> MacroTrajectory:
    """Implicit Euler steps of the limit flow, each solved as a proximal minimization.

    ``initial`` is a callable of position (same datum for every residue), an
    array ``(n_nodes, m)``, or a dict mapping group index to either.
    """
    if tau <= 0 or grid.h.min() <= 0:
        raise ValueError("time step and grid spacing must be positive")
    if energy.site is not None:
        raise ValueError("the flow is defined for energies without a site term")
    groups = macro_groups(model)
    if fhom is None:
        fhom = {j: Quadratic(1.0, A=fhom_matrix(j, model, energy)) for j in range(1, model.N + 1)}
    obj = _macro_objective(model, energy, grid, groups, fhom)
    n, m, G = grid.size, model.m, groups.size
    u = np.empty((G, n, m))
    for g in range(G):
        src = initial.get(g) if isinstance(initial, dict) else initial
        u[g] = grid.sample(src, m) if callable(src) else np.asarray(src, dtype=float).reshape(n, m)
    weights = np.repeat(groups.weights, n) * grid.cell_volume / tau
    stepper = ProximalStepper(obj, weights, tol)
    n_steps = int(round(t_max / tau))
    vals = [u]
    energies = [obj.value(u.reshape(G * n, m))]
    for _ in range(n_steps):
        nxt = stepper.step(vals[-1].reshape(G * n, m)).reshape(G, n, m)
        vals.append(nxt)
        energies.append(obj.value(nxt.reshape(G * n, m)))
    return MacroTrajectory(grid, tau, tau * np.arange(n_steps + 1), groups, np.array(vals), np.array(energies))


# --------------------------------------------- single-field memory equation

# chain-with-soft-sites coefficients after the time change t -> 4t
RESCALED_COEFFICIENTS = (2.0, 1.0, 1.0)


def exchange_coefficients(model: PeriodicLatticeModel, energy: EnergyModel) -> tuple:
    """Coefficients ``(a, b, kappa)`` of the hard-field equation
    ``u_t = a u'' - b (u - s)`` with ``s`` the single soft residue obeying ``s_t = kappa (u - s)``."""
    groups = macro_groups(model)
    if model.N != 1 or model.m != 1 or model.d != 1:
        raise ValueError("needs one hard phase, scalar fields and d = 1")
    soft = [g for g, (k, _) in enumerate(groups.kinds) if k == "soft"]
    if len(soft) != 1 or groups.size != 2:
        raise ValueError("needs exactly one soft residue and no islands")
    A = float(fhom_matrix(1, model, energy)[0, 0])
    f1 = float(energy.weak.value(np.ones((1, 1)))[0])
    cnt = sum(c for a, b, c in groups.exchange)
    B = cnt * f1 / model.T ** model.d
    c_h, c_s = groups.weights[0], groups.weights[soft[0]]
    return 2.0 * A / c_h, 2.0 * B / c_h, 2.0 * B / c_s


def _neumann_laplacian(n: int, h: float) -> sp.csr_matrix:
    main = np.full(n, -2.0)
    main[0] = main[-1] = -1.0
    off = np.ones(n - 1)
    return sp.diags([off, main, off], [-1, 0, 1], format="csr") / (h * h)


@dataclass
class ReferenceTrajectory:
    grid: MacroGrid
    times: np.ndarray
    u: np.ndarray  # (n_steps + 1, n_nodes)
    coefficients: tuple


def integro_differential_reference(u0, tau: float, t_max: float, grid: MacroGrid,
                                   coefficients: tuple = RESCALED_COEFFICIENTS) -> ReferenceTrajectory:
    """Single hard field with the soft residue eliminated into a memory term.

    Solves ``u_t = a u'' - b u + b (u0 e^{-kappa t} + kappa int_0^t e^{kappa(s-t)} u(s) ds)``
    with Neumann conditions by implicit Euler.  The memory integral uses the
    product trapezoidal rule (``u`` linear on each step, kernel integrated
    exactly), updated recursively, so constant data stay exactly constant.
    """
    a, b, kappa = coefficients
    n = grid.size
    h = float(grid.h[0])
    u_init = grid.sample(u0).ravel() if callable(u0) else np.asarray(u0, dtype=float).ravel()
    Lap = _neumann_laplacian(n, h)
    n_steps = int(round(t_max / tau))
    decay = math.exp(-kappa * tau)
    # I_n = decay * I_{n-1} + w_old u_{n-1} + w_new u_n
    w_sum = -math.expm1(-kappa * tau) / kappa
    w_new = 1.0 / kappa - w_sum / (kappa * tau)
    w_old = w_sum - w_new
    A = (sp.identity(n) * (1.0 / tau + b - b * kappa * w_new) - a * Lap).tocsc()
    solve = factorized(A)
    out = [u_init.copy()]
    memory = np.zeros(n)
    u = u_init.copy()
    for step in range(1, n_steps + 1):
        t = step * tau
        carried = decay * memory + w_old * u
        rhs = u / tau + b * (u_init * math.exp(-kappa * t) + kappa * carried)
        u_new = solve(rhs)
        memory = carried + w_new * u_new
        u = u_new
        out.append(u.copy())
    return ReferenceTrajectory(grid, tau * np.arange(n_steps + 1), np.array(out), tuple(coefficients))


def two_by_two_solution(coefficients: tuple, mode: float, u_hard: float, u_soft: float, times) -> np.ndarray:
    """Exact hard and soft amplitudes of one cosine mode (``mode`` = its wavenumber)."""
    a, b, kappa = coefficients
    K = np.array([[-a * mode ** 2 - b, b], [kappa, -kappa]])
    x0 = np.array([u_hard, u_soft], dtype=float)
    return np.array([expm(K * t) @ x0 for t in np.atleast_1d(times)])


# ------------------------------------------------------------ comparison

def _pc_l2_squared(coarse_vals: np.ndarray, fine_vals: np.ndarray) -> float:
    """Squared L2(0,1) distance of two piecewise-constant functions on uniform partitions."""
    n1, n2 = len(coarse_vals), len(fine_vals)
    nf = n1 * n2 // math.gcd(n1, n2)
    a = np.repeat(coarse_vals, nf // n1, axis=0)
    b = np.repeat(fine_vals, nf // n2, axis=0)
    d = a - b
    return float(np.sum(d * d)) / nf


@dataclass
class CompareReport:
    eps: list
    errors: list
    tau: float
    t_max: float

    def decreasing(self) -> bool:
        return all(b < a for a, b in zip(self.errors, self.errors[1:]))

    def rows(self):
        return list(zip(self.eps, self.errors))


def _nodal_on_grid(values: np.ndarray, positions: np.ndarray, centers: np.ndarray) -> np.ndarray:
    """Piecewise-linear interpolation of nodal samples, constant beyond the outer nodes."""
    return np.stack([np.interp(centers, positions, values[:, c]) for c in range(values.shape[1])], axis=1)


def trajectory_distance(micro: MicroTrajectory, macro: MacroTrajectory, model: PeriodicLatticeModel,
                        reconstruction: str = "linear") -> np.ndarray:
    """Per-step distance between the split micro field and the macro groups.

    Each residue's coarse field is turned into a function of ``x`` either as
    nodal samples at their sites ``eps*k`` joined linearly (``"linear"``) or as
    constants on the coarse cells (``"constant"``).  The value is the
    residue-averaged squared L2 gap, square-rooted.
    """
    if reconstruction not in ("linear", "constant"):
        raise ValueError("reconstruction must be 'linear' or 'constant'")
    steps = min(len(micro.times), len(macro.times))
    cbox = Box.cube(0, model.T, model.d)
    gof = macro.groups.group_of()
    centers = macro.grid.centers()[:, 0]
    h = macro.grid.cell_volume
    out = np.empty(steps)
    ncell = model.T ** model.d
    for s in range(steps):
        fam = two_scale_decompose(micro.field_at(s), model)
        total = 0.0
        for y, fld in fam.items():
            g = gof[cbox.index_of(np.array(y)[None, :])[0]]
            if reconstruction == "constant":
                total += _pc_l2_squared(fld.values, macro.values[s, g])
            else:
                pos = micro.eps * (model.T * fld.box.sites()[:, 0] + y[0])
                diff = _nodal_on_grid(fld.values, pos, centers) - macro.values[s, g]
                total += h * float(np.sum(diff * diff))
        out[s] = math.sqrt(total / ncell)
    return out


def micro_macro_compare(model: PeriodicLatticeModel, energy: EnergyModel, u0, eps_list, tau: float,
                        t_max: float, n_macro: int = 256, reconstruction: str = "linear") -> CompareReport:
    """Sup-in-time distance between lattice flows at each spacing and the macroscopic flow."""
    if model.d != 1:
        raise NotImplementedError("comparisons run on the unit interval")
    grid = MacroGrid.interval(n_macro)
    macro = macro_flow(model, energy, u0, tau, t_max, grid)
    n_steps = int(round(t_max / tau))
    errors = []
    for eps in eps_list:
        n = int(round(1.0 / eps))
        if n % model.T:
            raise ValueError("1/eps must be a multiple of the period")
        box = Box.cube(0, n, model.d)
        init = DiscreteField.from_function(box, u0, eps, model.m)
        micro = minimizing_movement_micro(model, energy, init, tau, n_steps)
        errors.append(float(trajectory_distance(micro, macro, model, reconstruction).max()))
    return CompareReport(list(eps_list), errors, tau, t_max)
