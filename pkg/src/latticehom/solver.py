"""Minimization of sums of convex densities over affinely constrained lattice fields.

An objective is a list of :class:`Term` objects.  Each term applies a sparse
linear map to the site values, subtracts an offset and feeds the result,
row block by row block, to a density.  Constraints (pins, ties, periodic
identifications, average constraints) are eliminated explicitly so that the
remaining unknowns are free; the reduced problem is then solved by
preconditioned conjugate gradients (quadratic case), damped Newton or an
accelerated gradient method.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import connected_components
from scipy.sparse.linalg import lsqr, spsolve


class SolverError(RuntimeError):
    pass


class InconsistentConstraints(SolverError):
    pass


class Unbounded(SolverError):
    pass


@dataclass
class Term:
    """Weighted sum ``sum_t weight[t] * density((L u)_t - offset[t])``.

    ``L`` has ``n_terms * S`` rows; row ``t*S + s`` forms the ``s``-th
    sub-vector of the argument of term ``t``.  Each sub-vector has ``m``
    components (one per field component), so the density receives vectors
    of length ``S * m``.
    """

    L: sp.csr_matrix
    offset: np.ndarray
    density: object
    weight: np.ndarray
    S: int = 1

    def __post_init__(self):
        self.L = sp.csr_matrix(self.L)
        self.weight = np.asarray(self.weight, dtype=float).reshape(-1)
        n = self.L.shape[0] // self.S
        if self.weight.size == 1 and n != 1:
            self.weight = np.full(n, float(self.weight[0]))
        self.offset = np.asarray(self.offset, dtype=float)
        if self.offset.ndim == 1 and n > 0:
            self.offset = np.broadcast_to(self.offset, (n, self.offset.size)).copy()

    @property
    def n_terms(self) -> int:
        return self.L.shape[0] // self.S

    def arguments(self, u: np.ndarray) -> np.ndarray:
        m = u.shape[1]
        r = (self.L @ u).reshape(self.n_terms, self.S * m)
        return r - self.offset

    def values(self, u: np.ndarray) -> np.ndarray:
        if self.n_terms == 0:
            return np.zeros(0)
        return self.weight * self.density.value(self.arguments(u))

    def value(self, u: np.ndarray) -> float:
        return math.fsum(self.values(u))

    def grad(self, u: np.ndarray) -> np.ndarray:
        m = u.shape[1]
        if self.n_terms == 0:
            return np.zeros_like(u)
        g = self.density.grad(self.arguments(u)) * self.weight[:, None]
        return self.L.T @ g.reshape(self.n_terms * self.S, m)

    def hess(self, u: np.ndarray) -> sp.csr_matrix:
        n, m = u.shape
        if self.n_terms == 0:
            return sp.csr_matrix((n * m, n * m))
        H = self.density.hess(self.arguments(u)) * self.weight[:, None, None]
        J = self.L if m == 1 else sp.kron(self.L, sp.identity(m), format="csr")
        return (J.T @ _block_diag(H) @ J).tocsr()


def _block_diag(H: np.ndarray) -> sp.csr_matrix:
    n, q, _ = H.shape
    base = np.arange(n)[:, None, None] * q
    rows = np.broadcast_to(base + np.arange(q)[None, :, None], H.shape)
    cols = np.broadcast_to(base + np.arange(q)[None, None, :], H.shape)
    return sp.csr_matrix((H.ravel(), (rows.ravel(), cols.ravel())), shape=(n * q, n * q))


def pair_matrix(first, second, n_sites: int, scale: float = 1.0) -> sp.csr_matrix:
    """Rows ``scale * (e_first - e_second)``."""
    first = np.asarray(first, dtype=np.int64)
    second = np.asarray(second, dtype=np.int64)
    k = len(first)
    rows = np.concatenate([np.arange(k), np.arange(k)])
    cols = np.concatenate([first, second])
    vals = np.concatenate([np.full(k, scale), np.full(k, -scale)])
    return sp.csr_matrix((vals, (rows, cols)), shape=(k, n_sites))


def selection_matrix(idx, n_sites: int) -> sp.csr_matrix:
    idx = np.asarray(idx, dtype=np.int64).reshape(-1)
    return sp.csr_matrix((np.ones(len(idx)), (np.arange(len(idx)), idx)), shape=(len(idx), n_sites))


def bond_term(first, second, n_sites, density, weight=1.0, scale=1.0, offset=None, m=1) -> Term:
    k = len(first)
    off = np.zeros((k, m)) if offset is None else offset
    return Term(pair_matrix(first, second, n_sites, scale), off, density, np.broadcast_to(weight, (k,)).copy() if k else np.zeros(0))


def site_term(idx, n_sites, density, weight=1.0, centers=None, m=1) -> Term:
    idx = np.asarray(idx, dtype=np.int64).reshape(-1)
    off = np.zeros((len(idx), m)) if centers is None else np.asarray(centers, dtype=float).reshape(len(idx), m)
    return Term(selection_matrix(idx, n_sites), off, density, np.broadcast_to(weight, (len(idx),)).copy() if len(idx) else np.zeros(0))


def stacked_term(idx, n_sites, density, weight=1.0, offset=None, m=1) -> Term:
    """Terms whose argument concatenates the values at ``idx[t, 0..S-1]``."""
    idx = np.asarray(idx, dtype=np.int64)
    n, S = idx.shape
    off = np.zeros((n, S * m)) if offset is None else offset
    return Term(selection_matrix(idx.ravel(), n_sites), off, density, np.broadcast_to(weight, (n,)).copy(), S=S)


class Objective:
    """Sum of terms plus a constant, over ``n_sites`` values in R^m."""

    def __init__(self, n_sites: int, m: int, terms, constant: float = 0.0):
        self.n_sites = int(n_sites)
        self.m = int(m)
        self.terms = [t for t in terms if t.n_terms > 0]
        self.constant = float(constant)
        for t in self.terms:
            if t.L.shape[1] != self.n_sites:
                raise ValueError("term width does not match the number of sites")

    @property
    def is_quadratic(self) -> bool:
        return all(getattr(t.density, "quadratic", False) for t in self.terms)

    @property
    def is_convex(self) -> bool:
        return all(getattr(t.density, "convex", False) for t in self.terms)

    def _shape(self, u):
        return np.asarray(u, dtype=float).reshape(self.n_sites, self.m)

    def value(self, u) -> float:
        u = self._shape(u)
        parts = [self.constant]
        for t in self.terms:
            parts.extend(t.values(u))
        return math.fsum(parts)

    def grad(self, u) -> np.ndarray:
        u = self._shape(u)
        g = np.zeros_like(u)
        for t in self.terms:
            g += t.grad(u)
        return g

    def hess(self, u) -> sp.csr_matrix:
        u = self._shape(u)
        n = self.n_sites * self.m
        H = sp.csr_matrix((n, n))
        for t in self.terms:
            H = H + t.hess(u)
        return H.tocsr()


@dataclass
class ConstraintSet:
    """Affine constraints on site values.

    ``pins`` maps a site to a fixed value; ``ties`` are groups of sites
    sharing one unknown; ``identify`` pairs are periodic identifications
    (the same as two-element ties); ``averages`` are
    ``(sites, weights, target)`` triples requiring
    ``sum_i weights[i] * u[sites[i]] == target``.  ``anchor`` is
    ``"auto"`` (pin the smallest free unknown of each translation-invariant
    block to zero), ``None`` (no gauge fixing) or a list of sites pinned to 0.
    """

    pins: dict = field(default_factory=dict)
    ties: list = field(default_factory=list)
    identify: list = field(default_factory=list)
    averages: list = field(default_factory=list)
    anchor: object = "auto"

    def pin(self, sites, values, m: int = 1) -> "ConstraintSet":
        sites = np.asarray(sites, dtype=np.int64).reshape(-1)
        vals = np.broadcast_to(np.asarray(values, dtype=float).reshape(-1, m), (len(sites), m))
        for s, v in zip(sites, vals):
            self.pins[int(s)] = np.array(v, dtype=float)
        return self

    def tie(self, sites) -> "ConstraintSet":
        sites = [int(s) for s in np.asarray(sites).reshape(-1)]
        if len(sites) > 1:
            self.ties.append(sites)
        return self

    def average(self, sites, target, weights=None) -> "ConstraintSet":
        sites = np.asarray(sites, dtype=np.int64).reshape(-1)
        w = np.ones(len(sites)) if weights is None else np.asarray(weights, dtype=float).reshape(-1)
        self.averages.append((sites, w, np.atleast_1d(np.asarray(target, dtype=float))))
        return self


@dataclass
class Reduction:
    """Affine parametrization ``u = P @ x + u0`` of the admissible fields."""

    P: sp.csr_matrix
    u0: np.ndarray
    anchored: list

    @property
    def n_free(self) -> int:
        return self.P.shape[1]

    def expand(self, x: np.ndarray) -> np.ndarray:
        return self.P @ x + self.u0


class _UF:
    def __init__(self, n):
        self.p = np.arange(n)

    def find(self, a):
        root = a
        while self.p[root] != root:
            root = self.p[root]
        while self.p[a] != root:
            self.p[a], a = root, self.p[a]
        return root

    def union(self, a, b):
        ra, rb = self.find(a), self.find(b)
        if ra != rb:
            if ra < rb:
                self.p[rb] = ra
            else:
                self.p[ra] = rb


def reduce_constraints(objective: Objective, constraints: ConstraintSet | None, atol: float = 1e-10) -> Reduction:
    n, m = objective.n_sites, objective.m
    c = constraints or ConstraintSet()
    uf = _UF(n)
    for group in c.ties:
        for s in group[1:]:
            uf.union(group[0], s)
    for a, b in c.identify:
        uf.union(int(a), int(b))
    roots = np.array([uf.find(i) for i in range(n)])
    fixed: dict[int, np.ndarray] = {}
    for s, v in sorted(c.pins.items()):
        r = roots[s]
        v = np.asarray(v, dtype=float).reshape(m)
        if r in fixed:
            if np.max(np.abs(fixed[r] - v)) > atol * (1 + np.max(np.abs(v))):
                raise InconsistentConstraints(f"conflicting pinned values on the group containing site {s}")
        else:
            fixed[r] = v
    u0 = np.zeros((n, m))
    free_roots = []
    seen = set()
    for i in range(n):
        r = roots[i]
        if r in fixed:
            u0[i] = fixed[r]
        elif r not in seen:
            seen.add(r)
            free_roots.append(r)
    col_of = {r: k for k, r in enumerate(free_roots)}
    rows = [i for i in range(n) if roots[i] not in fixed]
    cols = [col_of[roots[i]] for i in rows]
    Psite = sp.csr_matrix((np.ones(len(rows)), (rows, cols)), shape=(n, len(free_roots)))

    # average constraints, eliminated one pivot at a time
    A = sp.identity(len(free_roots), format="csc")
    a0 = np.zeros((len(free_roots), m))
    for sites, w, target in c.averages:
        target = np.broadcast_to(target, (m,))
        row = sp.csr_matrix((w, (np.zeros(len(sites), dtype=np.int64), sites)), shape=(1, n))
        cnode = row @ Psite
        coef = np.asarray((cnode @ A).todense()).ravel()
        rhs = target - np.asarray(row @ u0).ravel() - np.asarray(cnode @ a0).ravel()
        scale = max(1.0, np.abs(w).sum())
        if coef.size == 0 or np.max(np.abs(coef)) <= atol * scale:
            if np.max(np.abs(rhs)) > 1e-8 * (1 + np.max(np.abs(target))):
                raise InconsistentConstraints("average constraint cannot be met by the remaining unknowns")
            continue
        p = int(np.argmax(np.abs(coef)))
        keep = np.array([i for i in range(len(coef)) if i != p], dtype=np.int64)
        colp = A[:, p]
        a0 = a0 + np.asarray(colp.todense()).reshape(-1, 1) * (rhs / coef[p])[None, :]
        A = (A[:, keep] - colp @ sp.csr_matrix(coef[keep][None, :] / coef[p])).tocsc()
        A.eliminate_zeros()
    P = (Psite @ A).tocsr()
    u0 = u0 + Psite @ a0

    anchored = []
    if c.anchor == "auto":
        P, anchored = _anchor_gauge(objective, P)
    elif c.anchor is not None:
        keep_cols = np.ones(P.shape[1], dtype=bool)
        for s in c.anchor:
            nz = P[int(s)].indices
            if len(nz) != 1:
                raise InconsistentConstraints(f"anchor site {s} is not a free unknown")
            keep_cols[nz[0]] = False
            anchored.append(int(s))
        P = P[:, np.flatnonzero(keep_cols)].tocsr()
    return Reduction(P, u0, anchored)


def _anchor_gauge(objective: Objective, P: sp.csr_matrix):
    """Drop one unknown from every block along which the objective is translation invariant."""
    k = P.shape[1]
    if k == 0:
        return P, []
    mats = [(t.L @ P).tocsr() for t in objective.terms]
    if mats:
        stacked = sp.vstack(mats).tocsr()
        coupling = (abs(stacked).T @ abs(stacked)).tocsr()
    else:
        coupling = sp.csr_matrix((k, k))
    ncomp, lab = connected_components(coupling, directed=False)
    drop = []
    for comp in range(ncomp):
        members = np.flatnonzero(lab == comp)
        ind = np.zeros(k)
        ind[members] = 1.0
        invariant = True
        for M in mats:
            v = M @ ind
            if np.max(np.abs(v), initial=0.0) > 1e-12 * max(1.0, abs(M).max() if M.nnz else 1.0):
                invariant = False
                break
        if invariant:
            drop.append(int(members.min()))
    keep = np.setdiff1d(np.arange(k), drop)
    # report anchored unknowns by their first site
    Pc = P.tocsc()
    sites = [int(Pc[:, c].indices.min()) if Pc[:, c].nnz else -1 for c in drop]
    return P[:, keep].tocsr(), sites


@dataclass
class SolveReport:
    field: np.ndarray
    value: float
    iterations: int
    grad_norm: float
    status: str
    method: str
    threshold: float

    @property
    def converged(self) -> bool:
        return self.status == "converged"


def _pcg(H, b, x0, tol, max_iter):
    """Jacobi-preconditioned conjugate gradients for ``H x = b``."""
    diag = H.diagonal()
    inv = np.where(diag > 0, 1.0 / np.where(diag > 0, diag, 1.0), 1.0)
    x = x0.copy()
    r = b - H @ x
    bnorm = np.linalg.norm(b)
    thresh = tol * max(bnorm, 1e-300)
    if bnorm == 0.0:
        return np.zeros_like(b), 0, 0.0, thresh
    z = inv * r
    p = z.copy()
    rz = r @ z
    it = 0
    rn = np.linalg.norm(r)
    while rn > thresh and it < max_iter:
        Hp = H @ p
        curv = p @ Hp
        if curv <= 0:
            raise Unbounded("reduced quadratic form is not positive definite along a search direction")
        alpha = rz / curv
        x += alpha * p
        r -= alpha * Hp
        it += 1
        if it % 50 == 0:
            r = b - H @ x
        rn = np.linalg.norm(r)
        z = inv * r
        rz_new = r @ z
        p = z + (rz_new / rz) * p
        rz = rz_new
    return x, it, rn, thresh


def minimize(objective: Objective, constraints: ConstraintSet | None = None, tol: float | None = None,
             max_iter: int | None = None, method: str = "auto", x0=None) -> SolveReport:
    """Minimize ``objective`` subject to ``constraints``.

    ``method`` is one of ``"auto"``, ``"cg"``, ``"direct"`` (quadratic
    objectives), ``"newton"`` or ``"agd"``.  ``x0`` is an optional warm start
    given as a full site field.
    """
    red = reduce_constraints(objective, constraints)
    m = objective.m
    P = red.P
    k = P.shape[1]
    quad = objective.is_quadratic
    if method == "auto":
        method = "cg" if quad else "newton"
    if method in ("cg", "direct") and not quad:
        raise SolverError("linear solvers need a quadratic objective")
    if tol is None:
        tol = 1e-10 if quad else 1e-8
    if max_iter is None:
        max_iter = max(10 * k * m, 200) if method == "cg" else 500 if method == "newton" else 20000

    def expand(x):
        return red.expand(x.reshape(k, m))

    if k == 0:
        u = red.u0.copy()
        return SolveReport(u, objective.value(u), 0, 0.0, "converged", method, tol)

    Pm = P if m == 1 else sp.kron(P, sp.identity(m), format="csr")

    def rgrad(x):
        return Pm.T @ objective.grad(expand(x)).ravel()

    if x0 is not None:
        start = np.asarray(lsqr(Pm, (np.asarray(x0, dtype=float).reshape(-1, m) - red.u0).ravel(), atol=1e-14, btol=1e-14)[0])
    else:
        start = np.zeros(k * m)

    if method in ("cg", "direct"):
        H = (Pm.T @ objective.hess(red.u0) @ Pm).tocsr()
        b = -rgrad(np.zeros(k * m))
        if method == "direct":
            x = np.atleast_1d(spsolve(H.tocsc(), b)) if k * m > 1 else b / H.toarray().ravel()
            it = 1
            rn = float(np.linalg.norm(H @ x - b))
            thresh = tol * max(np.linalg.norm(b), 1e-300)
        else:
            x, it, rn, thresh = _pcg(H, b, start, tol, max_iter)
        status = "converged" if rn <= thresh or np.linalg.norm(b) == 0 else "max-iter"
        if not np.all(np.isfinite(x)):
            raise Unbounded("reduced system is singular")
        u = expand(x)
        return SolveReport(u, objective.value(u), it, rn, status, method, thresh)

    f = lambda x: objective.value(expand(x))
    if method == "newton":
        return _newton(objective, expand, Pm, f, rgrad, start, tol, max_iter)
    if method == "agd":
        return _agd(expand, f, rgrad, start, tol, max_iter)
    raise ValueError(f"unknown method {method!r}")


_RECESSION_FACTOR = 1e10


def _check_recession(xn, start_norm, fn, fx):
    """Iterates running off to infinity while the objective still drops: no minimizer exists."""
    if fn < fx and np.linalg.norm(xn) > _RECESSION_FACTOR * max(1.0, start_norm):
        raise Unbounded("objective keeps decreasing along a recession direction")


def _ray_probe(f, x, x_start, fx):
    """A convex objective that keeps dropping far along the drift of the iterates has no minimizer.

    At a genuine minimizer both probes are at least ``fx``, so this never
    fires on bounded problems beyond rounding, which the margin absorbs.
    """
    d = x - x_start
    if not np.any(d):
        return
    margin = 1e-8 * (1.0 + abs(fx))
    try:
        with np.errstate(over="ignore", invalid="ignore"):
            f1 = f(x + 1e3 * d)
            unbounded = f1 < fx - margin and f(x + 1e6 * d) < f1 - margin
    except (OverflowError, ValueError):
        return
    if unbounded:
        raise Unbounded("objective decreases without bound along the iterate drift")


def _newton(objective, expand, Pm, f, rgrad, x, tol, max_iter):
    x_start = x.copy()
    start_norm = float(np.linalg.norm(x))
    fx = f(x)
    g = rgrad(x)
    it = 0
    status = "max-iter"
    while it < max_iter:
        gn = np.linalg.norm(g)
        if gn <= tol * (1 + abs(fx)):
            status = "converged"
            break
        H = (Pm.T @ objective.hess(expand(x)) @ Pm).tocsc()
        mu = 1e-12 * max(1.0, float(np.abs(H.diagonal()).max(initial=0.0)))
        d = np.atleast_1d(spsolve(H + mu * sp.identity(H.shape[0], format="csc"), -g))
        if not np.all(np.isfinite(d)) or d @ g >= 0:
            d = -g
        t = 1.0
        while True:
            xn = x + t * d
            fn = f(xn)
            if fn <= fx + 1e-4 * t * (g @ d):
                break
            t *= 0.5
            if t < 1e-20:
                break
        it += 1
        if t < 1e-20:
            status = "stalled" if gn > tol * (1 + abs(fx)) else "converged"
            break
        if fn > fx:
            break
        _check_recession(xn, start_norm, fn, fx)
        x, fx = xn, fn
        g = rgrad(x)
    _ray_probe(f, x, x_start, fx)
    u = expand(x)
    return SolveReport(u, objective.value(u), it, float(np.linalg.norm(rgrad(x))), status, "newton", tol * (1 + abs(fx)))


def _agd(expand, f, rgrad, x, tol, max_iter):
    """Accelerated gradient descent with backtracking and monotone restarts."""
    x_start = x.copy()
    start_norm = float(np.linalg.norm(x))
    fx = f(x)
    g = rgrad(x)
    y, fy, gy = x.copy(), fx, g.copy()
    Lc = 1.0
    theta = 1.0
    it = 0
    status = "max-iter"
    while it < max_iter:
        if np.linalg.norm(g) <= tol * (1 + abs(fx)):
            status = "converged"
            break
        while True:
            xn = y - gy / Lc
            fn = f(xn)
            if fn <= fy - 0.5 / Lc * (gy @ gy) + 1e-15 * abs(fy):
                break
            Lc *= 2.0
            if Lc > 1e300:
                raise SolverError("line search failed")
        it += 1
        if fn > fx:
            # restart from the last accepted point with a plain gradient step
            theta = 1.0
            y, fy, gy = x.copy(), fx, g.copy()
            continue
        _check_recession(xn, start_norm, fn, fx)
        if fx - fn < np.finfo(float).eps * max(1.0, abs(fx)) and np.linalg.norm(xn) > 2 * max(np.linalg.norm(x), 1.0):
            raise Unbounded("iterates double in norm without lowering the objective")
        theta_n = 0.5 * (1 + math.sqrt(1 + 4 * theta * theta))
        y = xn + ((theta - 1) / theta_n) * (xn - x)
        theta = theta_n
        x, fx = xn, fn
        g = rgrad(x)
        fy, gy = f(y), rgrad(y)
        Lc = max(Lc / 1.5, 1e-12)
    _ray_probe(f, x, x_start, fx)
    u = expand(x)
    return SolveReport(u, f(x), it, float(np.linalg.norm(g)), status, "agd", tol * (1 + abs(fx)))


def quadratic_form_recover(q, dim: int, rtol: float = 1e-8) -> np.ndarray:
    """Symmetric ``A`` with ``q(xi) = <A xi, xi>`` from evaluations at unit vectors and their pairwise sums.

    ``q`` must be an exact quadratic form; the same coefficients are also
    re-derived from ``q(e_i - e_j)`` and a mismatch raises ``ValueError``.
    """
    E = np.eye(dim)
    diag = np.array([q(E[i]) for i in range(dim)], dtype=float)
    A = np.diag(diag)
    for i in range(dim):
        for j in range(i + 1, dim):
            plus = q(E[i] + E[j])
            minus = q(E[i] - E[j])
            a = 0.5 * (plus - diag[i] - diag[j])
            b = 0.5 * (diag[i] + diag[j] - minus)
            if abs(a - b) > rtol * (1 + abs(plus) + abs(minus)):
                raise ValueError("map is not a quadratic form (asymmetric mixed terms)")
            A[i, j] = A[j, i] = a
    return A


class ProximalStepper:
    """Repeated minimization of ``F(u) + sum_i w_i/2 |u_i - c_i|^2`` over varying centres ``c``.

    For quadratic ``F`` the system matrix is factorized once and every step
    is a single sparse solve; otherwise each step calls :func:`minimize`
    with the previous minimizer as warm start.
    """

    def __init__(self, objective: Objective, weights, tol: float | None = None):
        from scipy.sparse.linalg import factorized

        self.objective = objective
        self.weights = np.asarray(weights, dtype=float).reshape(-1)
        self.tol = tol
        n, m = objective.n_sites, objective.m
        self._quadratic = objective.is_quadratic
        if self._quadratic:
            zero = np.zeros((n, m))
            H = objective.hess(zero) + sp.diags(np.repeat(self.weights, m))
            self._g0 = objective.grad(zero).ravel()
            self._solve = factorized(H.tocsc())

    def step(self, centers: np.ndarray) -> np.ndarray:
        n, m = self.objective.n_sites, self.objective.m
        centers = np.asarray(centers, dtype=float).reshape(n, m)
        if self._quadratic:
            rhs = (self.weights[:, None] * centers).ravel() - self._g0
            return np.asarray(self._solve(rhs)).reshape(n, m)
        prox = Term(selection_matrix(np.arange(n), n), centers, _HalfSquare(), self.weights)
        obj = Objective(n, m, self.objective.terms + [prox], self.objective.constant)
        rep = minimize(obj, ConstraintSet(anchor=None), tol=self.tol, x0=centers)
        if not rep.converged:
            raise SolverError(f"proximal step did not converge ({rep.status})")
        return rep.field


class _HalfSquare:
    quadratic = True
    convex = True

    def value(self, r):
        return 0.5 * np.einsum("ij,ij->i", r, r)

    def grad(self, r):
        return r

    def hess(self, r):
        return np.broadcast_to(np.eye(r.shape[1]), (len(r), r.shape[1], r.shape[1])).copy()
