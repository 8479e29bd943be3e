"""Drift derivative of the transition density, the score operator and the LAN norm.

With ``G[j, k] = <h u_k', u_j>_{L^2(mu)}`` the time integral in the derivative
formula can be done mode by mode:

    D(x, y) = mu(y) sum_{j,k} W[j, k] G[j, k] u_j(x) u_k(y),
    W[j, k] = (exp(lambda_k T) - exp(lambda_j T)) / (lambda_k - lambda_j),

with ``W[j, j] = T exp(lambda_j T)``.  The score is ``D / p_T``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy.special import roots_legendre

from .errors import ConfigurationError, NumericError
from .kernel import T_MIN, heat_kernel, semigroup_apply
from .model import DriftSpec
from .spectral import SpectralDecomposition, _Interpolator, build_decomposition

POSITIVITY_FLOOR = 1e-8
DEGENERATE_GAP = 1e-8


@dataclass(frozen=True, eq=False)
class CouplingTable:
    coupling: np.ndarray = field(repr=False)  # G[j, k]
    time_factors: np.ndarray = field(repr=False)  # W[j, k]

    @property
    def product(self) -> np.ndarray:
        return self.coupling * self.time_factors


def time_factors(eigenvalues: np.ndarray, t: float) -> np.ndarray:
    """``W[j, k]`` computed as ``t exp(max(l_j, l_k) t) expm1(-|gap| t) / (-|gap| t)``."""
    lam = np.asarray(eigenvalues, dtype=float)
    hi = np.maximum(lam[:, None], lam[None, :])
    gap = np.abs(lam[:, None] - lam[None, :])
    scale = np.maximum(np.maximum(np.abs(lam[:, None]), np.abs(lam[None, :])), 1.0)
    z = -gap * t
    degenerate = gap <= DEGENERATE_GAP * scale
    with np.errstate(invalid="ignore", divide="ignore"):
        ratio = np.where(degenerate, 1.0, np.expm1(z) / np.where(degenerate, 1.0, z))
    return t * np.exp(hi * t) * ratio


def coupling_table(dec: SpectralDecomposition, h: DriftSpec, delta: float) -> CouplingTable:
    w = h(dec.grid.nodes) * dec.density.values / dec.grid.n
    g = dec.vectors.T @ (w[:, None] * dec.derivatives)
    return CouplingTable(g, time_factors(dec.eigenvalues, delta))


def _check_perturbation(h: DriftSpec):
    if not h.vanishes_at_boundary:
        raise ConfigurationError("perturbation must be a sine series (vanish at 0 and 1)")


def _symmetric_derivative_part(dec: SpectralDecomposition, h: DriftSpec, delta: float) -> np.ndarray:
    c = coupling_table(dec, h, delta).product
    return dec.vectors @ c @ dec.vectors.T


def derivative_field(dec: SpectralDecomposition, h: DriftSpec, delta: float) -> np.ndarray:
    """``d/d eta p_{delta, b + eta h}(x_i, y_k)`` at ``eta = 0`` on the grid.

    All modes held by ``dec`` enter; the sum over ``k`` converges slowly when
    ``j = 0``, so pass a full decomposition.
    """
    if not delta >= T_MIN:
        raise ConfigurationError(f"delta={delta} below t_min={T_MIN}")
    _check_perturbation(h)
    return _symmetric_derivative_part(dec, h, delta) * dec.density.values[None, :]


def derivative_field_quadrature(
    dec: SpectralDecomposition, h: DriftSpec, delta: float, n_nodes: int = 32
) -> np.ndarray:
    """Gauss-Legendre quadrature in time of ``P_{delta-s}[h d_1 p_s(., y)](x)``.

    Independent route to :func:`derivative_field`; all modes of ``dec`` are used
    at every node since small ``s`` needs the full series.
    """
    _check_perturbation(h)
    nodes, weights = roots_legendre(n_nodes)
    s_nodes = 0.5 * delta * (nodes + 1.0)
    hx = h(dec.grid.nodes)[:, None]
    out = np.zeros((dec.grid.n, dec.grid.n))
    for s, wq in zip(s_nodes, weights):
        hk = heat_kernel(dec, s, n_modes=dec.n_modes, t_min=0.0)
        out += (0.5 * delta * wq) * semigroup_apply(dec, delta - s, hx * hk.derivative_matrix())
    return out


def _bilinear(table: np.ndarray, ix, tx, iy, ty) -> np.ndarray:
    a = table[ix, iy]
    b = table[ix + 1, iy]
    c = table[ix, iy + 1]
    d = table[ix + 1, iy + 1]
    return (1 - tx) * ((1 - ty) * a + ty * c) + tx * ((1 - ty) * b + ty * d)


def _extend2(table: np.ndarray) -> np.ndarray:
    t = _Interpolator.extend_values(table)
    return _Interpolator.extend_values(t.T).T


@dataclass(frozen=True, eq=False)
class ScoreField:
    """``A_b h`` on the product grid together with the fields it is built from."""

    dec: SpectralDecomposition
    h: DriftSpec
    delta: float
    derivative: np.ndarray = field(repr=False)
    density: np.ndarray = field(repr=False)
    score: np.ndarray = field(repr=False)
    _sym_derivative: np.ndarray = field(repr=False)
    _sym_density: np.ndarray = field(repr=False)

    @property
    def grid(self):
        return self.dec.grid

    @cached_property
    def _tables(self):
        return _extend2(self._sym_derivative), _extend2(self._sym_density)

    def __call__(self, x, y):
        """Score at arbitrary states; eigenfunctions interpolated as in the kernel module."""
        x, y = np.broadcast_arrays(np.asarray(x, dtype=float), np.asarray(y, dtype=float))
        ix, tx = self.dec.locate(x)
        iy, ty = self.dec.locate(y)
        td, tp = self._tables
        return _bilinear(td, ix, tx, iy, ty) / _bilinear(tp, ix, tx, iy, ty)

    def centering_defect(self) -> float:
        """``max_x |sum_y A_b h(x, y) p(x, y) / N|``."""
        return float(np.max(np.abs((self.score * self.density).sum(axis=1) / self.grid.n)))

    def to_csv(self) -> str:
        nodes = self.grid.nodes
        lines = ["x\\y," + ",".join(repr(float(v)) for v in nodes)]
        for xi, row in zip(nodes, self.score):
            lines.append(repr(float(xi)) + "," + ",".join(repr(float(v)) for v in row))
        return "\n".join(lines) + "\n"


def score_field(dec: SpectralDecomposition, h: DriftSpec, delta: float) -> ScoreField:
    d = derivative_field(dec, h, delta)
    hk = heat_kernel(dec, delta)
    p = hk.matrix()
    if p.min() <= POSITIVITY_FLOOR:
        raise NumericError(f"transition density {p.min():.3e} below positivity floor")
    sym_d = _symmetric_derivative_part(dec, h, delta)
    return ScoreField(dec, h, float(delta), d, p, d / p, sym_d, hk.symmetric_part)


def lan_inner(sf1: ScoreField, sf2: ScoreField) -> float:
    """``int int S1 S2 mu(x) p(x, y) dx dy`` by the double midpoint rule."""
    if sf1.dec is not sf2.dec or sf1.delta != sf2.delta:
        raise ConfigurationError("score fields must share drift, sampling time and grid")
    mu = sf1.dec.density.values
    n = sf1.grid.n
    return float(np.sum(sf1.score * sf2.score * sf1.density * mu[:, None]) / (n * n))


def lan_norm(sf: ScoreField) -> float:
    return float(np.sqrt(max(lan_inner(sf, sf), 0.0)))


def score_fd_oracle(
    b: DriftSpec, h: DriftSpec, delta: float, eta: float, n: int = 512
) -> np.ndarray:
    """Central difference of ``log p_{delta, b + eta h}`` in ``eta``; test oracle only."""
    if not 1e-4 <= eta <= 1e-2:
        raise ValueError(f"eta must lie in [1e-4, 1e-2], got {eta}")
    if h.is_zero:
        return np.zeros((n, n))
    logs = []
    for s in (1.0, -1.0):
        dec = build_decomposition(b + s * eta * h, n)
        logs.append(np.log(heat_kernel(dec, delta).matrix()))
    return (logs[0] - logs[1]) / (2.0 * eta)


def density_fd_oracle(b: DriftSpec, h: DriftSpec, delta: float, eta: float, n: int = 512) -> np.ndarray:
    """Central difference of ``p_{delta, b + eta h}`` in ``eta`` on the grid."""
    mats = []
    for s in (1.0, -1.0):
        dec = build_decomposition(b + s * eta * h, n)
        mats.append(heat_kernel(dec, delta).matrix())
    return (mats[0] - mats[1]) / (2.0 * eta)
