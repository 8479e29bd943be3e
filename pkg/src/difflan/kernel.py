"""Transition densities and the transition semigroup from a spectral decomposition."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from functools import cached_property
from itertools import combinations_with_replacement

import numpy as np

from .errors import ConfigurationError, DomainError
from .spectral import SpectralDecomposition, default_mode_count

#: Shortest time for which kernels are evaluated on grids with N <= 4096.
T_MIN = 0.05


@dataclass(frozen=True, eq=False)
class HeatKernel:
    """Truncated series ``p_t(x, y) = sum_j exp(lambda_j t) u_j(x) u_j(y) mu(y)``."""

    dec: SpectralDecomposition
    t: float
    n_modes: int
    weights: np.ndarray = field(repr=False)

    @property
    def grid(self):
        return self.dec.grid

    @cached_property
    def symmetric_part(self) -> np.ndarray:
        """``sum_j w_j u_j(x_i) u_j(x_k)``; multiply columns by ``mu`` to get densities."""
        u = self.dec.vectors[:, : self.n_modes]
        k = (u * self.weights) @ u.T
        k = 0.5 * (k + k.T)
        k.setflags(write=False)
        return k

    def matrix(self) -> np.ndarray:
        """``p_t(x_i, y_k)`` on the grid, rows indexed by the starting state."""
        return self.symmetric_part * self.dec.density.values[None, :]

    def derivative_matrix(self) -> np.ndarray:
        """``d/dx p_t(x_i, y_k)`` on the grid."""
        u = self.dec.vectors[:, : self.n_modes]
        du = self.dec.derivatives[:, : self.n_modes]
        return ((du * self.weights) @ u.T) * self.dec.density.values[None, :]

    def rows(self, x) -> np.ndarray:
        """``p_t(x, y_k)`` for off-grid starting states, shape ``x.shape + (N,)``."""
        ux = self.dec.modes_at(x, self.n_modes)
        u = self.dec.vectors[:, : self.n_modes]
        return ((ux * self.weights) @ u.T) * self.dec.density.values

    def __call__(self, x, y):
        return transition_density(self, x, y)


def heat_kernel(
    dec: SpectralDecomposition, t: float, n_modes: int | None = None, t_min: float = T_MIN
) -> HeatKernel:
    if not t >= t_min:
        raise DomainError(f"t={t} below t_min={t_min}: spectral series not trustworthy on this grid")
    if n_modes is None:
        n_modes = default_mode_count(dec, t)
        if n_modes == dec.n_modes < dec.grid.n:
            raise ConfigurationError(
                f"decomposition holds {dec.n_modes} modes, too few to truncate at t={t}"
            )
    if not 1 <= n_modes <= dec.n_modes:
        raise ConfigurationError(
            f"kernel needs {n_modes} modes but the decomposition holds {dec.n_modes}"
        )
    w = np.exp(dec.eigenvalues[:n_modes] * t)
    w.setflags(write=False)
    return HeatKernel(dec, float(t), int(n_modes), w)


def _check_states(*args):
    for a in args:
        a = np.asarray(a, dtype=float)
        if np.any(~np.isfinite(a)) or np.any(a < 0.0) or np.any(a > 1.0):
            raise DomainError("state outside [0, 1]")


def transition_density(hk: HeatKernel, x, y):
    """Spectral sum at arbitrary states, eigenfunctions interpolated piecewise linearly."""
    _check_states(x, y)
    x, y = np.broadcast_arrays(np.asarray(x, dtype=float), np.asarray(y, dtype=float))
    ux = hk.dec.modes_at(x, hk.n_modes)
    uy = hk.dec.modes_at(y, hk.n_modes)
    p = np.sum(ux * hk.weights * uy, axis=-1) * hk.dec.density(y)
    return float(p) if p.ndim == 0 else p


def d1_transition_density(hk: HeatKernel, x, y):
    """Derivative in the starting state, ``sum_j w_j u_j'(x) u_j(y) mu(y)``."""
    _check_states(x, y)
    x, y = np.broadcast_arrays(np.asarray(x, dtype=float), np.asarray(y, dtype=float))
    dx = hk.dec.mode_derivatives_at(x, hk.n_modes)
    uy = hk.dec.modes_at(y, hk.n_modes)
    p = np.sum(dx * hk.weights * uy, axis=-1) * hk.dec.density(y)
    return float(p) if p.ndim == 0 else p


def semigroup_apply(dec: SpectralDecomposition, t: float, f: np.ndarray) -> np.ndarray:
    """``P_t f = sum_j exp(t lambda_j) <f, u_j> u_j`` over the modes held by ``dec``."""
    if t < 0:
        raise DomainError("semigroup time must be non-negative")
    f = np.asarray(f, dtype=float)
    if f.shape[0] != dec.grid.n:
        raise ConfigurationError("function is not defined on the decomposition's grid")
    c = dec.project(f)
    w = np.exp(dec.eigenvalues * t).reshape((-1,) + (1,) * (f.ndim - 1))
    return dec.vectors @ (w * c)


def kernel_csv(hk: HeatKernel) -> str:
    """Grid kernel as CSV: first row holds ``y`` nodes, first column ``x`` nodes."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    nodes = hk.grid.nodes
    w.writerow(["x\\y"] + [repr(float(v)) for v in nodes])
    for xi, row in zip(nodes, hk.matrix()):
        w.writerow([repr(float(xi))] + [repr(float(v)) for v in row])
    return buf.getvalue()


@dataclass
class IdentityReport:
    single: list[dict]
    chapman_kolmogorov: list[dict]
    tolerance: float

    @property
    def max_mass_defect(self) -> float:
        return max(r["mass_defect"] for r in self.single)

    @property
    def max_balance_defect(self) -> float:
        return max(r["balance_defect"] for r in self.single)

    @property
    def max_ck_defect(self) -> float:
        return max((r["defect"] for r in self.chapman_kolmogorov), default=0.0)

    @property
    def passed(self) -> bool:
        return max(self.max_mass_defect, self.max_balance_defect, self.max_ck_defect) < self.tolerance

    def to_json(self) -> dict:
        return {
            "single": self.single,
            "chapman_kolmogorov": self.chapman_kolmogorov,
            "max_mass_defect": self.max_mass_defect,
            "max_balance_defect": self.max_balance_defect,
            "max_ck_defect": self.max_ck_defect,
            "tolerance": self.tolerance,
            "passed": self.passed,
        }


def kernel_identity_checks(
    dec: SpectralDecomposition, times, tolerance: float = 1e-7, t_min: float = T_MIN
) -> IdentityReport:
    """Sup-norm defects of mass conservation, detailed balance and Chapman-Kolmogorov.

    Chapman-Kolmogorov is checked for every pair ``s <= t`` drawn from ``times``
    (including ``s = t``) with the inner integral by the midpoint rule.
    """
    times = sorted({float(t) for t in times})
    if not times:
        raise ValueError("need at least one time")
    mu = dec.density.values
    n = dec.grid.n
    mats = {}

    def p(t):
        if t not in mats:
            mats[t] = heat_kernel(dec, t, t_min=t_min).matrix()
        return mats[t]

    single = []
    for t in times:
        m = p(t)
        mass = float(np.max(np.abs(m.sum(axis=1) / n - 1.0)))
        flux = mu[:, None] * m
        balance = float(np.max(np.abs(flux - flux.T)))
        single.append({"t": t, "mass_defect": mass, "balance_defect": balance})
    ck = []
    for s, t in combinations_with_replacement(times, 2):
        lhs = p(s) @ p(t) / n
        ck.append({"s": s, "t": t, "defect": float(np.max(np.abs(lhs - p(s + t))))})
    return IdentityReport(single, ck, tolerance)


def density_bounds(dec: SpectralDecomposition, times, t_min: float = T_MIN) -> list[dict]:
    """Grid extrema of ``p_t`` and the short-time scale ``sup p_t * sqrt(t)``."""
    out = []
    for t in sorted(float(t) for t in times):
        m = heat_kernel(dec, t, t_min=t_min).matrix()
        out.append(
            {
                "t": t,
                "min": float(m.min()),
                "max": float(m.max()),
                "sup_times_sqrt_t": float(m.max() * math.sqrt(t)),
            }
        )
    return out


__all__ = [
    "T_MIN",
    "HeatKernel",
    "heat_kernel",
    "transition_density",
    "d1_transition_density",
    "semigroup_apply",
    "kernel_identity_checks",
    "kernel_csv",
    "density_bounds",
    "IdentityReport",
]
