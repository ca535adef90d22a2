"""Cell-centred finite-volume fields, discrete operators and norms.

Cells carry point values at their centres; fluxes live on faces.  The face
gradient ``G`` and the cell divergence ``D`` are built so that

    <G u, v>_faces = -<u, D v>_cells

holds exactly for the quadrature weights stored on the grid (face dual
volumes and cell volumes).  Homogeneous Dirichlet data enter through the
boundary faces, where the gradient is taken over the half cell between the
centre and the boundary.  In radial mode the first face sits at r = 0 and
carries no flux.
"""
from __future__ import annotations

import csv
import io
import math
import struct
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
import scipy.sparse as sp

from .regime import DomainError

MAGIC = b"SPLB1"


def sphere_area(N: int) -> float:
    """Surface measure of the unit sphere in R^N."""
    return 2.0 * math.pi ** (N / 2) / math.gamma(N / 2)


def _diff_dirichlet(n: int, h: float) -> sp.csr_matrix:
    """(n+1) x n face differences on [0, n h] with zero trace at both ends."""
    rows, cols, vals = [], [], []
    for j in range(n + 1):
        if j == 0:
            rows.append(j); cols.append(0); vals.append(2.0 / h)
        elif j == n:
            rows.append(j); cols.append(n - 1); vals.append(-2.0 / h)
        else:
            rows += [j, j]; cols += [j - 1, j]; vals += [-1.0 / h, 1.0 / h]
    return sp.csr_matrix((vals, (rows, cols)), shape=(n + 1, n))


def _face_mean(n: int) -> sp.csr_matrix:
    rows, cols, vals = [], [], []
    for j in range(n + 1):
        if j == 0:
            rows.append(j); cols.append(0); vals.append(1.0)
        elif j == n:
            rows.append(j); cols.append(n - 1); vals.append(1.0)
        else:
            rows += [j, j]; cols += [j - 1, j]; vals += [0.5, 0.5]
    return sp.csr_matrix((vals, (rows, cols)), shape=(n + 1, n))


def _cell_mean(n: int) -> sp.csr_matrix:
    """n x (n+1) average of the two faces bounding each cell."""
    rows = np.repeat(np.arange(n), 2)
    cols = np.stack([np.arange(n), np.arange(1, n + 1)], axis=1).ravel()
    return sp.csr_matrix((np.full(2 * n, 0.5), (rows, cols)), shape=(n, n + 1))


def _kron_axis(mats: Sequence[sp.spmatrix]) -> sp.csr_matrix:
    out = mats[0]
    for m in mats[1:]:
        out = sp.kron(out, m, format="csr")
    return sp.csr_matrix(out)


@dataclass(frozen=True, eq=False)
class Grid:
    """Uniform grid on the box [0, L]^d or on the ball of radius R in R^N.

    ``dim`` is the formal dimension N; in cartesian mode it equals the number
    of axes.  ``T`` is the time horizon of problems posed on the grid.
    """

    mode: str
    cells: tuple
    extent: float = 1.0
    T: float = 1.0
    dim: Optional[int] = None

    def __post_init__(self):
        if self.mode not in ("cartesian", "radial"):
            raise ValueError(f"unknown grid mode {self.mode!r}")
        cells = tuple(int(c) for c in self.cells)
        object.__setattr__(self, "cells", cells)
        if self.mode == "cartesian":
            if len(cells) not in (1, 2, 3):
                raise ValueError("cartesian grids have 1, 2 or 3 axes")
            object.__setattr__(self, "dim", len(cells))
        else:
            if len(cells) != 1:
                raise ValueError("radial grids have a single axis")
            if self.dim is None or self.dim < 2:
                raise ValueError("radial grids need a formal dimension N >= 2")
        if any(c < 2 for c in cells):
            raise ValueError("need at least two cells per axis")

    @classmethod
    def cartesian(cls, cells, d: Optional[int] = None, extent: float = 1.0, T: float = 1.0) -> "Grid":
        if isinstance(cells, int):
            cells = (cells,) * (d or 1)
        return cls("cartesian", tuple(cells), float(extent), float(T))

    @classmethod
    def radial(cls, cells: int, N: int, R: float = 1.0, T: float = 1.0) -> "Grid":
        return cls("radial", (int(cells),), float(R), float(T), int(N))

    def refined(self, factor: int = 2) -> "Grid":
        return Grid(self.mode, tuple(c * factor for c in self.cells), self.extent, self.T, self.dim)

    # -- geometry ----------------------------------------------------------

    @property
    def N(self) -> int:
        return int(self.dim)

    @property
    def ndim(self) -> int:
        return len(self.cells)

    @property
    def shape(self) -> tuple:
        return self.cells

    @property
    def size(self) -> int:
        return int(np.prod(self.cells))

    @property
    def h(self) -> tuple:
        return tuple(self.extent / n for n in self.cells)

    @cached_property
    def axes(self) -> list:
        """Cell-centre coordinates along each axis."""
        return [(np.arange(n) + 0.5) * hk for n, hk in zip(self.cells, self.h)]

    @cached_property
    def coords(self) -> list:
        return np.meshgrid(*self.axes, indexing="ij")

    @cached_property
    def radius(self) -> np.ndarray:
        """Distance of each cell centre from the origin (radial) or box centre."""
        if self.mode == "radial":
            return self.axes[0].copy()
        c = self.extent / 2
        return np.sqrt(sum((x - c) ** 2 for x in self.coords))

    @cached_property
    def volumes(self) -> np.ndarray:
        if self.mode == "radial":
            edges = np.arange(self.cells[0] + 1) * self.h[0]
            return sphere_area(self.N) * np.diff(edges ** self.N) / self.N
        return np.full(self.size, float(np.prod(self.h)))

    @property
    def measure(self) -> float:
        return float(self.volumes.sum())

    # -- operators ---------------------------------------------------------

    @cached_property
    def _ops(self) -> dict:
        if self.mode == "radial":
            return self._radial_ops()
        return self._cartesian_ops()

    def _radial_ops(self) -> dict:
        n, hr, N = self.cells[0], self.h[0], self.N
        full = _diff_dirichlet(n, hr)
        G = sp.csr_matrix(full[1:])  # the r = 0 face carries no flux
        r_face = np.arange(1, n + 1) * hr
        dual = np.full(n, hr)
        dual[-1] = hr / 2
        w = sphere_area(N) * r_face ** (N - 1) * dual
        fm = sp.csr_matrix(_face_mean(n)[1:])
        # cell average of its two faces; the origin face has zero gradient
        cm = sp.csr_matrix(_cell_mean(n)[:, 1:])
        return {
            "G": G, "w": w, "axis": np.zeros(n, dtype=int), "tan": [[]],
            "cellgrad": [cm @ G], "face_mean": fm, "face_slices": [slice(0, n)],
        }

    def _cartesian_ops(self) -> dict:
        d = self.ndim
        hs = self.h
        ns = self.cells
        eye = [sp.identity(n, format="csr") for n in ns]
        D1 = [_diff_dirichlet(n, hk) for n, hk in zip(ns, hs)]
        M1 = [_face_mean(n) for n in ns]
        C1 = [_cell_mean(n) @ D for n, D in zip(ns, D1)]
        Gs, ws, axis, tans, fms, cgs, slices = [], [], [], [], [], [], []
        start = 0
        for k in range(d):
            Gk = _kron_axis([D1[j] if j == k else eye[j] for j in range(d)])
            dual = np.full(ns[k] + 1, hs[k])
            dual[0] = dual[-1] = hs[k] / 2
            other = float(np.prod([hs[j] for j in range(d) if j != k]))
            wk = _kron_vec([dual if j == k else np.ones(ns[j]) for j in range(d)]) * other
            Gs.append(Gk)
            ws.append(wk)
            axis.append(np.full(Gk.shape[0], k))
            tans.append([
                _kron_axis([M1[i] if i == k else (C1[i] if i == j else eye[i]) for i in range(d)])
                for j in range(d) if j != k
            ])
            fms.append(_kron_axis([M1[j] if j == k else eye[j] for j in range(d)]))
            cgs.append(_kron_axis([C1[j] if j == k else eye[j] for j in range(d)]))
            slices.append(slice(start, start + Gk.shape[0]))
            start += Gk.shape[0]
        return {
            "G": sp.csr_matrix(sp.vstack(Gs)), "w": np.concatenate(ws), "axis": np.concatenate(axis),
            "tan": tans, "cellgrad": cgs, "face_mean": sp.csr_matrix(sp.vstack(fms)),
            "face_slices": slices,
        }

    @property
    def G(self) -> sp.csr_matrix:
        return self._ops["G"]

    @property
    def face_weights(self) -> np.ndarray:
        return self._ops["w"]

    @property
    def face_axis(self) -> np.ndarray:
        return self._ops["axis"]

    @property
    def n_faces(self) -> int:
        return self.G.shape[0]

    @cached_property
    def D(self) -> sp.csr_matrix:
        """Cell divergence of face fluxes, the negative adjoint of ``G``."""
        return sp.csr_matrix(-(sp.diags(1.0 / self.volumes) @ self.G.T @ sp.diags(self.face_weights)))

    @cached_property
    def tangential(self) -> list:
        """For each axis k, matrices giving the other gradient components on k-faces."""
        return self._ops["tan"]

    @property
    def face_slices(self) -> list:
        return self._ops["face_slices"]

    @property
    def face_mean(self) -> sp.csr_matrix:
        return self._ops["face_mean"]

    @cached_property
    def cell_gradient_ops(self) -> list:
        return self._ops["cellgrad"]

    @cached_property
    def tangential_stacked(self) -> list:
        """Per tangential slot, a faces x cells matrix (rows of other axes zero)."""
        d = self.ndim
        if d == 1:
            return []
        out = []
        for slot in range(d - 1):
            blocks = [self.tangential[k][slot] for k in range(d)]
            out.append(sp.csr_matrix(sp.vstack(blocks)))
        return out

    def to_spec(self) -> dict:
        spec = {"mode": self.mode, "cells": list(self.cells), "extent": self.extent, "T": self.T}
        if self.mode == "radial":
            spec["N"] = self.N
        return spec


def _kron_vec(vecs) -> np.ndarray:
    out = np.asarray(vecs[0], dtype=float)
    for v in vecs[1:]:
        out = np.kron(out, v)
    return out


@dataclass(frozen=True, eq=False)
class Field:
    """One time slice on a grid; the Dirichlet trace is zero."""

    grid: Grid
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float).reshape(self.grid.shape)
        object.__setattr__(self, "values", v)

    @property
    def flat(self) -> np.ndarray:
        return self.values.ravel()

    @classmethod
    def zeros(cls, grid: Grid) -> "Field":
        return cls(grid, np.zeros(grid.shape))


@dataclass(eq=False)
class Trajectory:
    """Accepted time levels of a run; ``values[k]`` is the flattened field at ``times[k]``.

    ``step_sizes`` keeps the dt actually used for each step so that another
    run can replay the schedule bit for bit.
    """

    grid: Grid
    times: np.ndarray
    values: np.ndarray
    status: str = "completed"
    reason: str = ""
    newton_iters: list = field(default_factory=list)
    step_sizes: Optional[np.ndarray] = None

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.values = np.asarray(self.values, dtype=float).reshape(len(self.times), -1)
        if self.step_sizes is None:
            self.step_sizes = np.diff(self.times)
        if np.any(np.diff(self.times) <= 0):
            raise ValueError("trajectory times must be strictly increasing")

    @property
    def dts(self) -> np.ndarray:
        return np.diff(self.times)

    def __len__(self) -> int:
        return len(self.times)

    def field(self, k: int) -> Field:
        return Field(self.grid, self.values[k])

    @property
    def final(self) -> Field:
        return self.field(-1)


# ---------------------------------------------------------------------------
# differential operators


def _vals(u) -> np.ndarray:
    return u.flat if isinstance(u, Field) else np.asarray(u, dtype=float).ravel()


def discrete_gradient(u: Field) -> np.ndarray:
    """Face-normal gradient (two-point differences, half cell at the boundary)."""
    return u.grid.G @ u.flat


def discrete_divergence(grid: Grid, flux: np.ndarray) -> Field:
    return Field(grid, grid.D @ np.asarray(flux, dtype=float))


def face_inner(grid: Grid, a: np.ndarray, b: np.ndarray) -> float:
    return float(np.sum(grid.face_weights * a * b))


def cell_inner(grid: Grid, a, b) -> float:
    return float(np.sum(grid.volumes * _vals(a) * _vals(b)))


def face_gradient_components(grid: Grid, u) -> tuple:
    """Normal component and the tangential components on every face."""
    v = _vals(u)
    n = grid.G @ v
    t = [T @ v for T in grid.tangential_stacked]
    return n, t


def face_gradient_magnitude(grid: Grid, u) -> np.ndarray:
    n, t = face_gradient_components(grid, u)
    g2 = n * n
    for tj in t:
        g2 = g2 + tj * tj
    return np.sqrt(g2)


def cell_gradient(grid: Grid, u) -> np.ndarray:
    """Gradient at cell centres, shape (ndim, ncells)."""
    v = _vals(u)
    return np.stack([C @ v for C in grid.cell_gradient_ops])


def cell_gradient_magnitude(grid: Grid, u) -> np.ndarray:
    return np.sqrt(np.sum(cell_gradient(grid, u) ** 2, axis=0))


def gradient_power_integral(grid: Grid, u, s: float) -> float:
    """Quadrature of |grad u|^s over the domain using face gradients.

    Each family of faces normal to one axis tiles the domain, so the face
    quadratures are averaged over the axes.
    """
    g = face_gradient_magnitude(grid, u)
    return float(np.sum(grid.face_weights * g ** s)) / grid.ndim


# ---------------------------------------------------------------------------
# coefficients and fluxes


@dataclass(frozen=True, eq=False)
class CoefficientMatrix:
    """Per-cell symmetric matrices A(x) with alpha |xi|^2 <= xi.A xi <= Lambda |xi|^2."""

    values: np.ndarray  # (ncells, d, d)
    alpha: float = 1.0
    Lambda: float = 1.0
    h_sample: Optional[np.ndarray] = None
    seed: Optional[int] = None

    @classmethod
    def identity(cls, grid: Grid) -> "CoefficientMatrix":
        d = grid.ndim
        return cls(np.broadcast_to(np.eye(d), (grid.size, d, d)).copy(), 1.0, 1.0)

    @classmethod
    def random(cls, grid: Grid, alpha: float, Lambda: float, seed: int = 0) -> "CoefficientMatrix":
        if not 0 < alpha <= Lambda:
            raise ValueError("need 0 < alpha <= Lambda")
        rng = np.random.default_rng(seed)
        d = grid.ndim
        eig = rng.uniform(alpha, Lambda, size=(grid.size, d))
        q, _ = np.linalg.qr(rng.standard_normal((grid.size, d, d)))
        vals = np.einsum("nij,nj,nkj->nik", q, eig, q)
        return cls(vals, alpha, Lambda, seed=seed)

    def check_bounds(self, tol: float = 1e-12) -> bool:
        eig = np.linalg.eigvalsh(self.values)
        return bool(eig.min() >= self.alpha - tol and eig.max() <= self.Lambda + tol)

    def face_rows(self, grid: Grid) -> list:
        """For each face, the row of A along the face normal: [A_kk, A_kj (j != k)...]."""
        fm = grid.face_mean
        d = grid.ndim
        out = []
        for k, sl in enumerate(grid.face_slices):
            rows = fm[sl]
            diag = rows @ self.values[:, k, k]
            offs = [rows @ self.values[:, k, j] for j in range(d) if j != k]
            out.append((diag, offs))
        normal = np.concatenate([r[0] for r in out])
        tang = [np.concatenate([r[1][s] for r in out]) for s in range(d - 1)]
        return normal, tang

    @property
    def is_identity(self) -> bool:
        d = self.values.shape[-1]
        return bool(np.array_equal(self.values, np.broadcast_to(np.eye(d), self.values.shape)))


class FluxOperator:
    """Regularized flux A grad u (|grad u|^2 + eps^2)^((p-2)/2) on faces, with its Jacobian."""

    def __init__(self, grid: Grid, p: float, eps: float = 0.0, A: Optional[CoefficientMatrix] = None):
        if p <= 1:
            raise DomainError(f"flux needs p > 1, got {p}")
        if eps < 0:
            raise ValueError("eps must be >= 0")
        self.grid = grid
        self.p = float(p)
        self.eps = float(eps)
        self.A = A
        if A is None or A.is_identity:
            self._a_n, self._a_t = None, None
        else:
            self._a_n, self._a_t = A.face_rows(grid)

    def _coef(self, g2):
        p, eps = self.p, self.eps
        if p == 2:
            return np.ones_like(g2), np.zeros_like(g2)
        base = g2 + eps * eps
        with np.errstate(divide="ignore", invalid="ignore"):
            c = base ** ((p - 2) / 2)
            dc = 0.5 * (p - 2) * base ** ((p - 4) / 2)
        if p < 2:
            zero = base == 0
            c[zero] = 0.0
            dc[zero] = 0.0
        return c, dc

    def _parts(self, v):
        grid = self.grid
        n = grid.G @ v
        t = [T @ v for T in grid.tangential_stacked]
        g2 = n * n
        for tj in t:
            g2 = g2 + tj * tj
        if self._a_n is None:
            an = n
        else:
            an = self._a_n * n
            for a, tj in zip(self._a_t, t):
                an = an + a * tj
        return n, t, g2, an

    def flux(self, u) -> np.ndarray:
        v = _vals(u)
        _, _, g2, an = self._parts(v)
        c, _ = self._coef(g2)
        return c * an

    def jacobian(self, u) -> sp.csr_matrix:
        """d(flux)/du as a faces x cells sparse matrix."""
        grid = self.grid
        v = _vals(u)
        n, t, g2, an = self._parts(v)
        c, dc = self._coef(g2)
        G = grid.G
        if self._a_n is None:
            dan = G
        else:
            dan = sp.diags(self._a_n) @ G
            for a, T in zip(self._a_t, grid.tangential_stacked):
                dan = dan + sp.diags(a) @ T
        J = sp.diags(c) @ dan
        if self.p != 2:
            dg2 = sp.diags(2.0 * n) @ G
            for tj, T in zip(t, grid.tangential_stacked):
                dg2 = dg2 + sp.diags(2.0 * tj) @ T
            J = J + sp.diags(dc * an) @ dg2
        return sp.csr_matrix(J)

    def lagged_matrix(self, u) -> sp.csr_matrix:
        """Flux with the nonlinear coefficient frozen at ``u`` (Picard linearization)."""
        v = _vals(u)
        _, _, g2, _ = self._parts(v)
        c, _ = self._coef(g2)
        grid = self.grid
        if self._a_n is None:
            dan = grid.G
        else:
            dan = sp.diags(self._a_n) @ grid.G
            for a, T in zip(self._a_t, grid.tangential_stacked):
                dan = dan + sp.diags(a) @ T
        return sp.csr_matrix(sp.diags(c) @ dan)


def p_flux(u: Field, p: float, eps: float = 0.0, A: Optional[CoefficientMatrix] = None) -> np.ndarray:
    return FluxOperator(u.grid, p, eps, A).flux(u)


# ---------------------------------------------------------------------------
# truncations


def truncate_T(u, k: float):
    """T_k(v) = max(-k, min(k, v))."""
    if k < 0:
        raise ValueError("truncation level must be >= 0")
    if isinstance(u, Field):
        return Field(u.grid, np.clip(u.values, -k, k))
    return np.clip(u, -k, k)


def truncate_G(u, k: float):
    """G_k(v) = (|v| - k)_+ sign(v) = v - T_k(v)."""
    if k < 0:
        raise ValueError("truncation level must be >= 0")
    if isinstance(u, Field):
        return Field(u.grid, u.values - np.clip(u.values, -k, k))
    return u - np.clip(u, -k, k)


# ---------------------------------------------------------------------------
# norms


def lebesgue_norm(u: Field, s: float) -> float:
    v = np.abs(u.flat)
    if s == math.inf:
        return float(v.max(initial=0.0))
    if s <= 0:
        raise DomainError("Lebesgue exponent must be positive")
    return float(np.sum(u.grid.volumes * v ** s) ** (1.0 / s))


def _spatial_norms(traj: Trajectory, m: float) -> np.ndarray:
    grid = traj.grid
    v = np.abs(traj.values)
    if m == math.inf:
        return v.max(axis=1)
    return np.sum(grid.volumes * v ** m, axis=1) ** (1.0 / m)


def bochner_norm(traj: Trajectory, r: float, m: float) -> float:
    """Norm in L^r(0,T;L^m): samples after t=0 weighted by the step that produced them."""
    if len(traj) == 0:
        raise DomainError("empty trajectory")
    if r < 1:
        raise DomainError("time exponent must be >= 1")
    norms = _spatial_norms(traj, m)
    if r == math.inf:
        return float(norms.max())
    if len(traj) < 2:
        raise DomainError("need at least one time step for a finite time exponent")
    return float(np.sum(traj.dts * norms[1:] ** r) ** (1.0 / r))


def space_time_weights(traj: Trajectory) -> np.ndarray:
    """Weights (cell volume x step) for samples 1..K, shape (K, ncells)."""
    return traj.dts[:, None] * traj.grid.volumes[None, :]


def marcinkiewicz_norm(values, gamma: float, weights=None) -> float:
    """sup_k (k^gamma meas{|v| > k})^(1/gamma) for piecewise constant data.

    The level-set measure only changes at achieved values, so the supremum is
    attained as k increases to one of them.
    """
    if gamma <= 0:
        raise DomainError("Marcinkiewicz exponent must be positive")
    v = np.abs(np.asarray(values, dtype=float)).ravel()
    w = np.ones_like(v) if weights is None else np.broadcast_to(np.asarray(weights, dtype=float), np.shape(values)).ravel()
    keep = v > 0
    v, w = v[keep], w[keep]
    if v.size == 0:
        return 0.0
    order = np.argsort(-v, kind="stable")
    v, w = v[order], w[order]
    meas = np.cumsum(w)
    # ties: the level set {|v| > k} for k just below v_i contains all equal values
    last = np.r_[v[1:] != v[:-1], True]
    return float(np.max(v[last] ** gamma * meas[last]) ** (1.0 / gamma))


def space_time_gradient_power(traj: Trajectory, theta: float) -> np.ndarray:
    """|grad u|^theta at cell centres for samples 1..K."""
    grid = traj.grid
    return np.stack([cell_gradient_magnitude(grid, v) ** theta for v in traj.values[1:]])


# ---------------------------------------------------------------------------
# Gagliardo-Nirenberg checker


@dataclass(frozen=True)
class GNResult:
    h: float
    eta: float
    w: float
    y: float
    lhs: float
    rhs: float
    ratio: float


def gn_relation_residual(N: int, h: float, eta: float, w: float, y: float) -> float:
    """N h/w + (N(eta-h)+eta h)/y - N."""
    inv_y = 0.0 if y == math.inf else 1.0 / y
    return N * h / w + (N * (eta - h) + eta * h) * inv_y - N


def gn_exponents_equal(N: int, h: float, eta: float) -> float:
    """Common value w = y = eta (N + h)/N."""
    return eta * (N + h) / N


def gn_check(traj: Trajectory, h: float, eta: float, w: float, y: float, tol: float = 1e-9) -> GNResult:
    """Both sides of the parabolic Gagliardo-Nirenberg inequality, constant omitted."""
    N = traj.grid.N
    if not (1 <= eta < N):
        raise DomainError(f"need 1 <= eta < N, got eta={eta}, N={N}")
    eta_star = N * eta / (N - eta)
    if not (1 <= h <= eta_star):
        raise DomainError(f"need 1 <= h <= eta* = {eta_star}, got h={h}")
    res = gn_relation_residual(N, h, eta, w, y)
    if abs(res) > tol:
        raise DomainError(f"(w, y) = ({w}, {y}) violates the exponent relation, residual {res:.3e}")
    grid = traj.grid
    sup_h = float(_spatial_norms(traj, h).max())
    lw = _spatial_norms(traj, w)[1:]
    grad = np.array([gradient_power_integral(grid, v, eta) for v in traj.values[1:]])
    dts = traj.dts
    if y == math.inf:
        # the relation forces w = h and the inequality degenerates to an identity
        lhs = float(lw.max(initial=0.0))
        rhs = sup_h
    else:
        lhs = float(np.sum(dts * lw ** y))
        rhs = sup_h ** (y - eta) * float(np.sum(dts * grad))
    ratio = 0.0 if rhs == 0.0 else lhs / rhs
    return GNResult(h, eta, w, y, lhs, rhs, ratio)


# ---------------------------------------------------------------------------
# estimate ledger


@dataclass
class EstimateLedger:
    sigma: float
    p: float
    beta: float
    sup_t_Lsigma: float
    grad_beta_energy: float
    grad_renorm_energy: float
    marcinkiewicz: list = field(default_factory=list)
    gn_residuals: list = field(default_factory=list)
    blowup_flag: bool = False

    @property
    def energy(self) -> float:
        """The gradient quantity appropriate to beta (renormalized form when beta < 1)."""
        return self.grad_beta_energy if self.beta >= 1 else self.grad_renorm_energy

    @property
    def total(self) -> float:
        return self.sup_t_Lsigma ** self.sigma + self.energy ** self.p

    def to_dict(self) -> dict:
        return {
            "sigma": self.sigma, "p": self.p, "beta": self.beta,
            "sup_t_Lsigma": self.sup_t_Lsigma,
            "grad_beta_energy": self.grad_beta_energy,
            "grad_renorm_energy": self.grad_renorm_energy,
            "total": self.total,
            "marcinkiewicz": [list(m) for m in self.marcinkiewicz],
            "gn_residuals": [list(g) for g in self.gn_residuals],
            "blowup_flag": self.blowup_flag,
        }


def ledger(
    traj: Trajectory,
    sigma: float,
    p: float,
    beta: float,
    marcinkiewicz: Sequence = (),
    gn: Sequence = (),
) -> EstimateLedger:
    """Measure the a priori estimate quantities on a trajectory.

    ``marcinkiewicz`` holds (theta, gamma) pairs: the M^gamma norm of
    |grad u|^theta over the space-time cylinder is recorded.  ``gn`` holds
    (h, eta, w, y) tuples checked on (1+|u|)^beta.
    """
    grid = traj.grid
    sup = float(_spatial_norms(traj, sigma).max())
    e_beta = 0.0
    e_ren = 0.0
    for dt, v in zip(traj.dts, traj.values[1:]):
        a = np.abs(v)
        # shifted by 1 so the zero boundary trace does not create a spurious jump
        e_beta += dt * gradient_power_integral(grid, (1 + a) ** beta - 1, p)
        e_ren += dt * gradient_power_integral(grid, (1 + a) ** (beta - 1) * v, p)
    marc = []
    if marcinkiewicz:
        weights = space_time_weights(traj)
        for theta, gamma in marcinkiewicz:
            vals = space_time_gradient_power(traj, theta)
            marc.append((float(theta), float(gamma), marcinkiewicz_norm(vals, gamma, weights)))
    gns = []
    if gn:
        tv = Trajectory(grid, traj.times, (1 + np.abs(traj.values)) ** beta - 1)
        for h, eta, w, y in gn:
            r = gn_check(tv, h, eta, w, y)
            gns.append((r.h, r.eta, r.w, r.y, r.lhs, r.rhs, r.ratio))
    return EstimateLedger(
        sigma=float(sigma), p=float(p), beta=float(beta),
        sup_t_Lsigma=sup, grad_beta_energy=e_beta ** (1 / p), grad_renorm_energy=e_ren ** (1 / p),
        marcinkiewicz=marc, gn_residuals=gns, blowup_flag=traj.status == "blowup",
    )


# ---------------------------------------------------------------------------
# sampling of singular data


def power_law_datum(grid: Grid, eta: float, omega: float, amplitude: float = 1.0, cutoff: float = 1.0, sub: int = 8) -> Field:
    """|x|^(-N/eta + omega) on {|x| < cutoff}, sampled so that each cell keeps its L^eta mass.

    The cell value is (cell average of u0^eta)^(1/eta): exact integrals in
    radial mode, midpoint sub-cell quadrature in cartesian mode (box centred
    at the origin of the power law).
    """
    N = grid.N
    s = -N / eta + omega
    if grid.mode == "radial":
        hr = grid.h[0]
        a = np.arange(grid.cells[0]) * hr
        b = a + hr
        a_c = np.minimum(a, cutoff)
        b_c = np.minimum(b, cutoff)
        k = omega * eta
        mass = sphere_area(N) * (b_c ** k - a_c ** k) / k
        vals = (mass / grid.volumes) ** (1 / eta)
        return Field(grid, amplitude * vals)
    offs = (np.arange(sub) + 0.5) / sub - 0.5
    acc = np.zeros(grid.shape)
    c = grid.extent / 2
    grids = np.meshgrid(*([offs] * grid.ndim), indexing="ij")
    for shift in zip(*(g.ravel() for g in grids)):
        r2 = sum((x + o * hk - c) ** 2 for x, o, hk in zip(grid.coords, shift, grid.h))
        r = np.sqrt(r2)
        with np.errstate(divide="ignore"):
            val = np.where(r < cutoff, r ** (s * eta), 0.0)
        acc += val
    acc /= sub ** grid.ndim
    return Field(grid, amplitude * acc ** (1 / eta))


# ---------------------------------------------------------------------------
# serialization


def field_to_csv(u: Field, path=None) -> str:
    grid = u.grid
    buf = io.StringIO()
    wr = csv.writer(buf, lineterminator="\n")
    names = ["r"] if grid.mode == "radial" else ["x", "y", "z"][: grid.ndim]
    wr.writerow(names + ["value"])
    cols = [c.ravel() for c in grid.coords]
    for i, val in enumerate(u.flat):
        wr.writerow([repr(float(c[i])) for c in cols] + [repr(float(val))])
    text = buf.getvalue()
    if path is not None:
        Path(path).write_text(text)
    return text


def field_to_bytes(u: Field) -> bytes:
    """Binary dump: magic, mode, axes, N, cells, extent, T, then little-endian doubles (row-major)."""
    g = u.grid
    head = MAGIC + struct.pack("<BBB", 0 if g.mode == "cartesian" else 1, g.ndim, g.N)
    head += struct.pack(f"<{g.ndim}I", *g.cells) + struct.pack("<dd", g.extent, g.T)
    return head + np.ascontiguousarray(u.values, dtype="<f8").tobytes()


def field_from_bytes(data: bytes) -> Field:
    if data[:5] != MAGIC:
        raise ValueError("not an SPLB1 field dump")
    mode, ndim, N = struct.unpack_from("<BBB", data, 5)
    off = 8
    cells = struct.unpack_from(f"<{ndim}I", data, off)
    off += 4 * ndim
    extent, T = struct.unpack_from("<dd", data, off)
    off += 16
    grid = Grid("cartesian" if mode == 0 else "radial", tuple(cells), extent, T, None if mode == 0 else N)
    vals = np.frombuffer(data, dtype="<f8", offset=off).reshape(cells).copy()
    return Field(grid, vals)


def save_field(u: Field, path) -> None:
    Path(path).write_bytes(field_to_bytes(u))


def load_field(path) -> Field:
    return field_from_bytes(Path(path).read_bytes())
