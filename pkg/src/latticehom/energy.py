"""Bond and site densities and the scaled lattice energies built from them."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping

import numpy as np

from .lattice import Box, DiscreteField, PeriodicLatticeModel, bond_sets
from .solver import Objective, bond_term, site_term


# ---------------------------------------------------------------- densities

class Density:
    """Convex function on R^q, evaluated row-wise on arrays of shape ``(n, q)``."""

    quadratic = False
    convex = True
    degree: float | None = None  # positive homogeneity degree, if any

    def value(self, r: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def grad(self, r: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def hess(self, r: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def __call__(self, r) -> np.ndarray:
        r = np.asarray(r, dtype=float)
        if r.ndim <= 1:
            return self.value(r.reshape(1, -1))[0]
        return self.value(r)

    def growth(self, p: float) -> tuple[float, float]:
        """Constants ``(c, C)`` with ``c(|z|^p - 1) <= f(z) <= C(|z|^p + 1)``."""
        raise NotImplementedError

    def lipschitz(self) -> float:
        """Constant ``L`` with ``|f(z) - f(z')| <= L |z - z'| (|z|^(p-1) + |z'|^(p-1) + 1)``."""
        raise NotImplementedError

    def params(self) -> dict:
        return {}


def _rows(r):
    r = np.asarray(r, dtype=float)
    return r.reshape(1, -1) if r.ndim == 1 else r


@dataclass(frozen=True, eq=False)
class Quadratic(Density):
    """``coef * <A (r - shift), (r - shift)>`` with ``A`` symmetric positive semidefinite.

    ``A = None`` stands for the identity in whatever dimension is supplied.
    """

    coef: float = 1.0
    A: np.ndarray | None = None
    shift: np.ndarray | None = None

    quadratic = True

    def __post_init__(self):
        if self.A is not None:
            A = np.atleast_2d(np.asarray(self.A, dtype=float))
            if not np.allclose(A, A.T, atol=1e-12):
                raise ValueError("quadratic density needs a symmetric matrix")
            if np.linalg.eigvalsh(A).min() < -1e-12 * max(1.0, np.abs(A).max()):
                raise ValueError("quadratic density needs a positive semidefinite matrix")
            object.__setattr__(self, "A", A)
        if self.shift is not None:
            object.__setattr__(self, "shift", np.atleast_1d(np.asarray(self.shift, dtype=float)))
        if self.coef < 0:
            raise ValueError("coefficient must be nonnegative")

    @property
    def degree(self):
        return 2.0 if self.shift is None or not np.any(self.shift) else None

    def _d(self, r):
        r = _rows(r)
        return r - self.shift if self.shift is not None else r

    def value(self, r):
        d = self._d(r)
        if self.A is None:
            return self.coef * np.einsum("ij,ij->i", d, d)
        return self.coef * np.einsum("ij,jk,ik->i", d, self.A, d)

    def grad(self, r):
        d = self._d(r)
        if self.A is None:
            return 2.0 * self.coef * d
        return 2.0 * self.coef * d @ self.A

    def hess(self, r):
        r = _rows(r)
        q = r.shape[1]
        A = np.eye(q) if self.A is None else self.A
        return np.broadcast_to(2.0 * self.coef * A, (len(r), q, q)).copy()

    def _extremes(self, q=1):
        if self.A is None:
            return self.coef, self.coef
        ev = np.linalg.eigvalsh(self.A)
        return self.coef * ev.min(), self.coef * ev.max()

    def growth(self, p=2.0):
        lo, hi = self._extremes()
        s = 0.0 if self.shift is None else float(np.linalg.norm(self.shift))
        if s == 0.0:
            return lo, hi
        # |z|^2 <= 2|z - a|^2 + 2|a|^2 and |z - a|^2 <= 2|z|^2 + 2|a|^2
        return (lo / 2.0 if s * s <= 0.5 else 0.0), 2.0 * hi * max(1.0, s * s)

    def lipschitz(self):
        _, hi = self._extremes()
        s = 0.0 if self.shift is None else float(np.linalg.norm(self.shift))
        return hi * max(1.0, 2.0 * s)

    def homogeneous_lipschitz(self):
        """``L`` with ``|f(a) - f(b)| <= L |a - b| (|a| + |b|)`` for the unshifted form."""
        return self._extremes()[1]

    def coercivity(self):
        return self._extremes()[0]

    def params(self):
        out = {"kind": "quadratic", "coef": self.coef}
        if self.A is not None:
            out["A"] = self.A.tolist()
        if self.shift is not None:
            out["shift"] = self.shift.tolist()
        return out


@dataclass(frozen=True, eq=False)
class PowerLaw(Density):
    """``coef * |r - shift|^p`` (Euclidean norm)."""

    p: float = 2.0
    coef: float = 1.0
    shift: np.ndarray | None = None

    def __post_init__(self):
        if self.p < 1:
            raise ValueError("power density needs p >= 1")
        if self.shift is not None:
            object.__setattr__(self, "shift", np.atleast_1d(np.asarray(self.shift, dtype=float)))

    @property
    def quadratic(self):
        return self.p == 2.0

    @property
    def degree(self):
        return self.p if self.shift is None or not np.any(self.shift) else None

    def _d(self, r):
        r = _rows(r)
        return r - self.shift if self.shift is not None else r

    def value(self, r):
        d = self._d(r)
        return self.coef * np.linalg.norm(d, axis=1) ** self.p

    def grad(self, r):
        d = self._d(r)
        n = np.linalg.norm(d, axis=1)
        fac = np.where(n > 0, n ** (self.p - 2) if self.p >= 2 else np.where(n > 0, n, 1.0) ** (self.p - 2), 0.0)
        return self.coef * self.p * fac[:, None] * d

    def hess(self, r):
        d = self._d(r)
        q = d.shape[1]
        n = np.linalg.norm(d, axis=1)
        safe = np.maximum(n, 1e-150)
        a = self.coef * self.p * safe ** (self.p - 2)
        b = self.coef * self.p * (self.p - 2) * safe ** (self.p - 4)
        H = a[:, None, None] * np.eye(q)[None] + b[:, None, None] * np.einsum("ni,nj->nij", d, d)
        if self.p > 2:
            H[n == 0] = 0.0
        return H

    def growth(self, p=None):
        s = 0.0 if self.shift is None else float(np.linalg.norm(self.shift))
        if s == 0.0:
            return self.coef, self.coef
        k = 2.0 ** (self.p - 1)
        return (self.coef / k if s ** self.p <= 1.0 / k else 0.0), self.coef * k * max(1.0, s ** self.p)

    def lipschitz(self):
        s = 0.0 if self.shift is None else float(np.linalg.norm(self.shift))
        return self.coef * self.p * 2.0 ** max(self.p - 2.0, 0.0) * max(1.0, s ** (self.p - 1))

    def homogeneous_lipschitz(self):
        """``L`` with ``|f(a) - f(b)| <= L |a - b| (|a|^(p-1) + |b|^(p-1))``."""
        return self.coef * self.p

    def coercivity(self):
        return self.coef

    def params(self):
        out = {"kind": "power", "p": self.p, "coef": self.coef}
        if self.shift is not None:
            out["shift"] = self.shift.tolist()
        return out


def make_density(kind: str, **params) -> Density:
    """Built-in densities by name.

    ``quadratic`` (coef), ``anisotropic`` (coef, A), ``shifted`` (coef,
    shift), ``power`` (p, coef).
    """
    kind = kind.lower()
    if kind == "quadratic":
        return Quadratic(float(params.get("coef", 1.0)))
    if kind == "anisotropic":
        return Quadratic(float(params.get("coef", 1.0)), A=np.asarray(params["A"], dtype=float))
    if kind == "shifted":
        return Quadratic(float(params.get("coef", 1.0)), shift=np.asarray(params["shift"], dtype=float))
    if kind == "power":
        return PowerLaw(float(params.get("p", 2.0)), float(params.get("coef", 1.0)))
    raise ValueError(f"unknown density {kind!r}")


# ----------------------------------------------------------- site potential

@dataclass(frozen=True)
class Profile:
    """Scalar macroscopic profile ``offset + amp * shape(freq * pi * x[axis])``."""

    kind: str = "const"
    amp: float = 1.0
    freq: float = 1.0
    offset: float = 0.0
    axis: int = 0

    def __call__(self, x) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        t = self.freq * math.pi * x[:, self.axis]
        if self.kind == "const":
            base = np.zeros_like(t)
        elif self.kind == "sin":
            base = np.sin(t)
        elif self.kind == "cos":
            base = np.cos(t)
        else:
            raise ValueError(f"unknown profile {self.kind!r}")
        if self.kind == "const":
            return np.full(len(t), self.offset + self.amp)
        return self.offset + self.amp * base


@dataclass(frozen=True, eq=False)
class SitePotential:
    """``g(x, k, z) = weight[k mod T] * density(z - target(x))``.

    ``target`` is a :class:`Profile`, a constant, or ``None`` (zero);
    ``weights`` is ``None`` (all ones) or an array of shape ``(T,) * d``.
    """

    density: Density
    target: object = None
    weights: np.ndarray | None = None

    def centers(self, x: np.ndarray, m: int) -> np.ndarray:
        x = np.atleast_2d(x)
        if self.target is None:
            return np.zeros((len(x), m))
        if callable(self.target):
            c = np.asarray(self.target(x), dtype=float).reshape(len(x), -1)
        else:
            c = np.broadcast_to(np.asarray(self.target, dtype=float).reshape(1, -1), (len(x), m))
        if c.shape[1] == 1 and m > 1:
            c = np.repeat(c, m, axis=1)
        return c

    def site_weights(self, model: PeriodicLatticeModel, sites: np.ndarray) -> np.ndarray:
        if self.weights is None:
            return np.ones(len(sites))
        w = np.asarray(self.weights, dtype=float)
        return w[tuple(np.mod(sites, model.T).T)]

    def with_target(self, target) -> "SitePotential":
        return SitePotential(self.density, target, self.weights)


@dataclass(frozen=True, eq=False)
class EnergyModel:
    """Densities and exponent of a double-porosity lattice energy.

    ``strong`` is one density for every hard phase or a mapping
    ``phase -> density``; ``weak`` acts on soft and cross-phase bonds and
    must be positively homogeneous of degree ``p``.
    """

    p: float
    strong: object
    weak: Density
    site: SitePotential | None = None
    c: float | None = None
    C: float | None = None

    def __post_init__(self):
        if not self.p > 1:
            raise ValueError("growth exponent p must exceed 1")
        deg = getattr(self.weak, "degree", None)
        if deg is None or abs(deg - self.p) > 1e-12:
            raise ValueError("weak density must be positively homogeneous of degree p")
        c, C = self._derived_constants()
        if self.c is None:
            object.__setattr__(self, "c", c)
        if self.C is None:
            object.__setattr__(self, "C", C)

    def strong_density(self, j: int) -> Density:
        if isinstance(self.strong, Mapping):
            return self.strong[j]
        return self.strong

    def densities(self) -> list:
        out = [self.weak]
        if isinstance(self.strong, Mapping):
            out.extend(self.strong.values())
        else:
            out.append(self.strong)
        if self.site is not None:
            out.append(self.site.density)
        return out

    @property
    def is_quadratic(self) -> bool:
        return all(d.quadratic for d in self.densities())

    @property
    def is_convex(self) -> bool:
        return all(d.convex for d in self.densities())

    def without_site(self) -> "EnergyModel":
        return EnergyModel(self.p, self.strong, self.weak, None, self.c, self.C)

    def with_site(self, site: SitePotential | None) -> "EnergyModel":
        return EnergyModel(self.p, self.strong, self.weak, site, self.c, self.C)

    def _derived_constants(self):
        cs, Cs = [], []
        for dens in self.densities():
            try:
                c, C = dens.growth(self.p)
            except NotImplementedError:
                continue
            cs.append(c)
            Cs.append(max(C, dens.lipschitz()))
        return (min(cs) if cs else 0.0), (max(Cs) if Cs else 0.0)


# -------------------------------------------------------------- energies

@dataclass
class EnergyBreakdown:
    strong: dict
    weak: float
    zero_order: float

    @property
    def total(self) -> float:
        return math.fsum([*self.strong.values(), self.weak, self.zero_order])

    def as_dict(self) -> dict:
        return {"strong": {str(k): v for k, v in self.strong.items()}, "weak": self.weak,
                "zero_order": self.zero_order, "total": self.total}


def lattice_terms(model: PeriodicLatticeModel, energy: EnergyModel, box: Box, eps: float,
                  periodic: bool = False, parts=("strong", "weak", "site")) -> dict:
    """Terms of the scaled energy on ``box`` keyed by part name.

    Bond arguments are ``(u_k - u_k') / eps``; strong and site terms carry
    weight ``eps^d``, weak terms ``eps^(d + p)``.
    """
    d, m = model.d, model.m
    n = box.size
    bonds = bond_sets(model, box, periodic=periodic)
    out: dict = {}
    if "strong" in parts:
        for j in range(1, model.N + 1):
            b = bonds.strong[j]
            out[f"strong{j}"] = bond_term(b.first, b.second, n, energy.strong_density(j),
                                          eps ** d, 1.0 / eps, m=m)
    if "weak" in parts:
        b = bonds.weak
        out["weak"] = bond_term(b.first, b.second, n, energy.weak, eps ** (d + energy.p), 1.0 / eps, m=m)
    if "site" in parts and energy.site is not None:
        sites = box.sites()
        x = eps * sites.astype(float)
        w = energy.site.site_weights(model, sites) * eps ** d
        keep = np.flatnonzero(w != 0)
        out["site"] = site_term(keep, n, energy.site.density, w[keep],
                                energy.site.centers(x[keep], m), m=m)
    return out


def _restrict(field: DiscreteField, box: Box | None) -> DiscreteField:
    if box is None or box == field.box:
        return field
    idx = field.box.index_of(box.sites())
    if np.any(idx < 0):
        raise ValueError("field does not cover the domain box")
    return DiscreteField(box, field.values[idx], field.eps)


def total_energy(field: DiscreteField, model: PeriodicLatticeModel, energy: EnergyModel,
                 box: Box | None = None) -> EnergyBreakdown:
    """Strong, weak and site sums of the scaled energy of ``field`` on ``box``."""
    f = _restrict(field, box)
    terms = lattice_terms(model, energy, f.box, f.eps)
    u = f.values
    strong = {j: terms[f"strong{j}"].value(u) for j in range(1, model.N + 1)}
    weak = terms["weak"].value(u)
    zero = terms["site"].value(u) if "site" in terms else 0.0
    return EnergyBreakdown(strong, weak, zero)


def energy_objective(model, energy, box, eps, periodic=False, extra=()) -> Objective:
    terms = list(lattice_terms(model, energy, box, eps, periodic).values()) + list(extra)
    return Objective(box.size, model.m, terms)


def perturbed_energy(field: DiscreteField, w: DiscreteField, g: Density, model: PeriodicLatticeModel,
                     energy: EnergyModel, box: Box | None = None) -> float:
    """Energy of ``field`` plus ``sum_k eps^d g(u_k - w_k)``."""
    f = _restrict(field, box)
    wv = _restrict(w, f.box)
    base = total_energy(f, model, energy).total
    extra = g.value(f.values - wv.values) * f.eps ** model.d
    return math.fsum([base, *extra])


@dataclass
class PwcCheck:
    lhs: float
    rhs: float
    constant: float
    ratio: float

    @property
    def holds(self) -> bool:
        return self.lhs <= self.rhs * (1 + 1e-12) + 1e-300


def pwc_constant(model: PeriodicLatticeModel, energy: EnergyModel) -> float:
    """Constant of the weak-bond perturbation inequality.

    ``C = 2 * Lh * n0^(1/p) * cf^(-(p-1)/p)`` where ``Lh`` bounds
    ``|f(a) - f(b)| / (|a - b| (|a|^(p-1) + |b|^(p-1)))`` for the weak
    density, ``cf`` is its coercivity constant (``f(z) >= cf |z|^p``) and
    ``n0`` the number of nonzero weak offsets (the most weak bonds a site
    can have).  The bound follows from Hoelder's inequality applied per
    phase and ``(x + y)^q <= 2^(q-1) (x^q + y^q)``.
    """
    p = energy.p
    Lh = energy.weak.homogeneous_lipschitz()
    cf = energy.weak.coercivity()
    if cf <= 0:
        return math.inf
    n0 = 2 * len(model.positive_offsets(0))
    return 2.0 * Lh * max(n0, 1) ** (1.0 / p) * cf ** (-(p - 1.0) / p)


def pwc_gap_check(u: DiscreteField, v: DiscreteField, model: PeriodicLatticeModel,
                  energy: EnergyModel, constant: float | None = None) -> PwcCheck:
    """Both sides of the weak-bond perturbation inequality.

    ``lhs = sum_weak eps^d |f(u_k - u_k') - f(v_k - v_k')|`` and
    ``rhs = C * sum_j (sum_{A_j} eps^d |u_k - v_k|^p)^(1/p) * (F(u) + F(v))^((p-1)/p)``.
    ``ratio`` is lhs divided by rhs without the constant.
    """
    if u.box != v.box:
        raise ValueError("fields must share a box")
    p = energy.p
    d = model.d
    eps = u.eps
    box = u.box
    sites = box.sites()
    lab = model.label(sites)
    diff = u.values - v.values
    if np.any(np.abs(diff[lab == 0]) > 0):
        raise ValueError("fields must agree on soft sites")
    b = bond_sets(model, box).weak
    fu = energy.weak.value(u.values[b.first] - u.values[b.second])
    fv = energy.weak.value(v.values[b.first] - v.values[b.second])
    lhs = math.fsum(eps ** d * np.abs(fu - fv))
    Fu = total_energy(u, model, energy.without_site()).total
    Fv = total_energy(v, model, energy.without_site()).total
    norm_sum = math.fsum(
        math.fsum(eps ** d * np.linalg.norm(diff[lab == j], axis=1) ** p) ** (1.0 / p)
        for j in range(1, model.N + 1)
    )
    base = norm_sum * (Fu + Fv) ** ((p - 1.0) / p)
    C = pwc_constant(model, energy) if constant is None else constant
    ratio = lhs / base if base > 0 else (0.0 if lhs == 0 else math.inf)
    return PwcCheck(lhs, C * base, C, ratio)
