"""Discrete Neumann generator ``f'' + b f'`` and its eigendecomposition.

The operator is assembled in divergence form,

    (L f)_i = N^2 / mu_i * (mu_{i+1/2} (f_{i+1} - f_i) - mu_{i-1/2} (f_i - f_{i-1})),

with geometric-mean face weights and zero flux through the two boundary faces.
It annihilates constants exactly and is self-adjoint for the midpoint
``L^2(mu)`` product, so after the similarity transform ``sqrt(mu) L / sqrt(mu)``
it is a symmetric tridiagonal matrix whose off-diagonal is identically ``N^2``.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import scipy.linalg
import scipy.sparse as sp

from .errors import ConfigurationError, NumericError
from .model import DriftSpec, Grid, InvariantDensity, invariant_density

#: Series truncation target for spectral sums.
TRUNCATION_EPS = 1e-14


def central_difference_matrix(grid: Grid) -> sp.csr_matrix:
    """First derivative at cell centres: central inside, one-sided second order at the ends."""
    n = grid.n
    h2 = 0.5 * n
    rows, cols, vals = [], [], []
    i = np.arange(1, n - 1)
    rows += [i, i]
    cols += [i + 1, i - 1]
    vals += [np.full(n - 2, h2), np.full(n - 2, -h2)]
    rows.append(np.array([0, 0, 0]))
    cols.append(np.array([0, 1, 2]))
    vals.append(h2 * np.array([-3.0, 4.0, -1.0]))
    rows.append(np.array([n - 1] * 3))
    cols.append(np.array([n - 1, n - 2, n - 3]))
    vals.append(h2 * np.array([3.0, -4.0, 1.0]))
    return sp.csr_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(n, n)
    )


def neumann_laplacian_matrix(grid: Grid) -> sp.csr_matrix:
    """Second derivative with zero flux through the boundary faces."""
    n = grid.n
    main = np.full(n, -2.0)
    main[0] = main[-1] = -1.0
    off = np.ones(n - 1)
    return sp.diags([off, main, off], [-1, 0, 1], format="csr") * float(n * n)


@dataclass(frozen=True, eq=False)
class GeneratorMatrix:
    """Flux-form generator; ``diag``/``offdiag`` hold the symmetrised matrix."""

    spec: DriftSpec
    grid: Grid
    density: InvariantDensity
    diag: np.ndarray = field(repr=False)
    offdiag: np.ndarray = field(repr=False)
    sqrt_mu: np.ndarray = field(repr=False)
    upper: np.ndarray = field(repr=False)  # L[i, i+1]
    lower: np.ndarray = field(repr=False)  # L[i+1, i]

    @property
    def n(self) -> int:
        return self.grid.n

    def apply(self, f: np.ndarray) -> np.ndarray:
        """Untransformed operator applied along the first axis of ``f``."""
        f = np.asarray(f, dtype=float)
        out = np.zeros_like(f)
        diff = f[1:] - f[:-1]
        up = self.upper.reshape((-1,) + (1,) * (f.ndim - 1))
        lo = self.lower.reshape((-1,) + (1,) * (f.ndim - 1))
        out[:-1] += up * diff
        out[1:] -= lo * diff
        return out

    def apply_symmetric(self, v: np.ndarray) -> np.ndarray:
        v = np.asarray(v, dtype=float)
        shape = (-1,) + (1,) * (v.ndim - 1)
        out = self.diag.reshape(shape) * v
        out[:-1] += self.offdiag.reshape(shape) * v[1:]
        out[1:] += self.offdiag.reshape(shape) * v[:-1]
        return out

    def sparse(self) -> sp.csr_matrix:
        """Untransformed operator as a sparse matrix."""
        main = -np.concatenate([self.upper, [0.0]]) - np.concatenate([[0.0], self.lower])
        return sp.diags([self.lower, main, self.upper], [-1, 0, 1], format="csr")


def assemble_generator(spec: DriftSpec, mu: InvariantDensity, grid: Grid) -> GeneratorMatrix:
    if mu.grid != grid:
        raise ConfigurationError(f"density grid N={mu.grid.n} does not match grid N={grid.n}")
    if mu.spec != spec:
        raise ConfigurationError("invariant density was built for a different drift")
    n2 = float(grid.n) ** 2
    half_gap = 0.5 * np.diff(mu.log_values)
    # mu_{i+1/2} / mu_i and mu_{i+1/2} / mu_{i+1} for geometric-mean faces
    upper = n2 * np.exp(half_gap)
    lower = n2 * np.exp(-half_gap)
    diag = -(np.concatenate([upper, [0.0]]) + np.concatenate([[0.0], lower]))
    offdiag = np.full(grid.n - 1, n2)
    sqrt_mu = np.sqrt(mu.values)
    for a in (diag, offdiag, sqrt_mu, upper, lower):
        a.setflags(write=False)
    return GeneratorMatrix(spec, grid, mu, diag, offdiag, sqrt_mu, upper, lower)


class _Interpolator:
    """Piecewise-linear interpolation on the cell centres extended by the two endpoints."""

    def __init__(self, grid: Grid):
        self.n = grid.n
        self.nodes = np.concatenate([[0.0], grid.nodes, [1.0]])

    def locate(self, x):
        x = np.clip(np.asarray(x, dtype=float), 0.0, 1.0)
        # extended node k sits at (k - 1/2)/N for 1 <= k <= N
        pos = x * self.n + 0.5
        idx = np.clip(np.floor(pos).astype(np.intp), 0, self.n)
        lo = self.nodes[idx]
        hi = self.nodes[idx + 1]
        theta = (x - lo) / (hi - lo)
        return idx, theta

    @staticmethod
    def extend_values(values: np.ndarray) -> np.ndarray:
        """Append boundary rows using the zero-slope quadratic through the first two nodes."""
        first = (9.0 * values[0] - values[1]) / 8.0
        last = (9.0 * values[-1] - values[-2]) / 8.0
        return np.vstack([first[None], values, last[None]])

    @staticmethod
    def extend_zero(values: np.ndarray) -> np.ndarray:
        z = np.zeros((1,) + values.shape[1:])
        return np.vstack([z, values, z])


@dataclass(frozen=True, eq=False)
class SpectralDecomposition:
    """Leading eigenpairs of the discrete generator, ``L^2(mu)``-orthonormal on the grid.

    ``vectors[:, j]`` holds ``u_j`` at the cell centres; eigenvalues are non-increasing.
    """

    generator: GeneratorMatrix
    eigenvalues: np.ndarray = field(repr=False)
    vectors: np.ndarray = field(repr=False)

    @property
    def grid(self) -> Grid:
        return self.generator.grid

    @property
    def density(self) -> InvariantDensity:
        return self.generator.density

    @property
    def spec(self) -> DriftSpec:
        return self.generator.spec

    @property
    def n_modes(self) -> int:
        return self.eigenvalues.size

    def truncated(self, n_modes: int) -> "SpectralDecomposition":
        if not 1 <= n_modes <= self.n_modes:
            raise ValueError(f"cannot truncate {self.n_modes} modes to {n_modes}")
        return SpectralDecomposition(
            self.generator, self.eigenvalues[:n_modes], self.vectors[:, :n_modes]
        )

    @cached_property
    def derivatives(self) -> np.ndarray:
        """``u_j'`` at the cell centres via :func:`central_difference_matrix`."""
        d = central_difference_matrix(self.grid) @ self.vectors
        d[:, 0] = 0.0
        d.setflags(write=False)
        return d

    @cached_property
    def _interp(self) -> _Interpolator:
        return _Interpolator(self.grid)

    @cached_property
    def _ext_vectors(self) -> np.ndarray:
        return _Interpolator.extend_values(self.vectors)

    @cached_property
    def _ext_derivatives(self) -> np.ndarray:
        return _Interpolator.extend_zero(self.derivatives)

    def locate(self, x):
        return self._interp.locate(x)

    def modes_at(self, x, n_modes: int | None = None) -> np.ndarray:
        """``u_j(x)`` for arbitrary states, shape ``x.shape + (n_modes,)``."""
        idx, theta = self.locate(x)
        tab = self._ext_vectors[:, :n_modes]
        theta = theta[..., None]
        return (1.0 - theta) * tab[idx] + theta * tab[idx + 1]

    def mode_derivatives_at(self, x, n_modes: int | None = None) -> np.ndarray:
        idx, theta = self.locate(x)
        tab = self._ext_derivatives[:, :n_modes]
        theta = theta[..., None]
        return (1.0 - theta) * tab[idx] + theta * tab[idx + 1]

    def inner(self, f, g) -> float:
        """Midpoint ``L^2(mu)`` product."""
        return float(np.sum(np.asarray(f) * np.asarray(g) * self.density.values) / self.grid.n)

    def project(self, f: np.ndarray) -> np.ndarray:
        """Coefficients ``<f, u_j>_{L^2(mu)}`` along the first axis of ``f``."""
        w = self.density.values / self.grid.n
        return self.vectors.T @ (w.reshape((-1,) + (1,) * (np.ndim(f) - 1)) * f)

    def gram(self) -> np.ndarray:
        w = self.density.values / self.grid.n
        return self.vectors.T @ (w[:, None] * self.vectors)


def eigendecompose(gen: GeneratorMatrix, n_modes: int | None = None) -> SpectralDecomposition:
    """Leading ``n_modes`` eigenpairs (all ``N`` by default).

    The null pair is set exactly to ``lambda_0 = 0``, ``u_0 = 1``: the symmetrised
    matrix annihilates ``sqrt(mu)`` by construction.
    """
    n = gen.n
    if n_modes is None:
        n_modes = n
    if not 1 <= n_modes <= n:
        raise ValueError(f"mode count must be in [1, {n}], got {n_modes}")
    try:
        if n_modes == n:
            lam, vec = scipy.linalg.eigh_tridiagonal(gen.diag, gen.offdiag)
        else:
            lam, vec = scipy.linalg.eigh_tridiagonal(
                gen.diag, gen.offdiag, select="i", select_range=(n - n_modes, n - 1)
            )
    except (np.linalg.LinAlgError, ValueError) as exc:
        raise NumericError(f"tridiagonal eigensolver failed for N={n}: {exc}") from exc
    if not np.all(np.isfinite(lam)) or not np.all(np.isfinite(vec)):
        raise NumericError(f"eigensolver returned non-finite values for N={n}")
    lam = lam[::-1].copy()
    vec = vec[:, ::-1]
    u = vec * (math.sqrt(n) / gen.sqrt_mu[:, None])
    u[:, 0] = 1.0
    lam[0] = 0.0
    norms = np.sqrt(np.sum(u * u * gen.density.values[:, None], axis=0) / n)
    u /= norms
    u *= np.where(u[0] < 0.0, -1.0, 1.0)
    if n_modes > 1 and not np.all(np.diff(lam) < 0.0):
        bad = int(np.argmin(np.diff(lam)))
        raise NumericError(f"eigenvalues not strictly decreasing near j={bad + 1}")
    lam.setflags(write=False)
    u = np.ascontiguousarray(u)
    u.setflags(write=False)
    return SpectralDecomposition(gen, lam, u)


def build_decomposition(spec: DriftSpec, n: int, n_modes: int | None = None) -> SpectralDecomposition:
    """Density, generator and eigendecomposition for ``spec`` on an ``n``-cell grid."""
    grid = Grid(n)
    mu = invariant_density(spec, grid)
    return eigendecompose(assemble_generator(spec, mu, grid), n_modes)


def richardson_eigenvalues(spec: DriftSpec, n: int, n_modes: int) -> np.ndarray:
    """Second-order Richardson extrapolation of the leading eigenvalues over ``(N, 2N)``."""
    coarse = build_decomposition(spec, n, n_modes).eigenvalues
    fine = build_decomposition(spec, 2 * n, n_modes).eigenvalues
    return (4.0 * fine - coarse) / 3.0


def gap_constant(dec: SpectralDecomposition) -> float:
    """Lower sandwich constant ``pi^2 min mu / max mu``."""
    lo, _ = dec.density.ratio_window
    return math.pi**2 * lo


def default_mode_count(dec: SpectralDecomposition, t: float, eps: float = TRUNCATION_EPS) -> int:
    """Mode count so that the first dropped weight ``exp(lambda_J t)`` is below ``eps``."""
    if t <= 0:
        raise ValueError("time must be positive")
    c = gap_constant(dec)
    j = min(dec.grid.n // 2, math.ceil(math.sqrt(math.log(1.0 / eps) / (c * t))) + 4)
    j = min(j, dec.n_modes)
    lam = dec.eigenvalues
    while j < dec.n_modes and math.exp(lam[j] * t) >= eps:
        j += 1
    return j


# ---------------------------------------------------------------- diagnostics


@dataclass
class DiagnosticsReport:
    records: list[dict]
    window: tuple[float, float]
    tolerance: float
    max_orthonormality_defect: float
    failures: list[str]

    @property
    def passed(self) -> bool:
        return not self.failures

    def to_json(self) -> dict:
        return {
            "records": self.records,
            "window": list(self.window),
            "tolerance": self.tolerance,
            "max_orthonormality_defect": self.max_orthonormality_defect,
            "failures": self.failures,
            "passed": self.passed,
        }

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["j", "lambda", "rayleigh_residual", "sandwich_ratio"])
        for r in self.records:
            w.writerow([r["j"], repr(r["lambda"]), repr(r["rayleigh_residual"]), repr(r["sandwich_ratio"])])
        return buf.getvalue()


def spectral_diagnostics(
    dec: SpectralDecomposition,
    max_mode: int = 32,
    tol: float = 0.01,
    residual_tol: float = 1e-6,
    orthonormality_tol: float = 1e-9,
) -> DiagnosticsReport:
    """Rayleigh residuals, orthonormality defects and eigenvalue sandwich ratios.

    The sandwich ratio ``lambda_j / (-j^2 pi^2)`` must lie in
    ``[min mu / max mu - tol, max mu / min mu + tol]``.  Only modes up to
    ``max_mode`` are examined since the ratio compares against the continuum.
    """
    if dec.n_modes < 2:
        raise ValueError("diagnostics need at least two modes")
    jmax = min(dec.n_modes - 1, max_mode)
    lo, hi = dec.density.ratio_window
    window = (lo, hi)
    gen = dec.generator
    u = dec.vectors[:, : jmax + 1]
    lam = dec.eigenvalues[: jmax + 1]
    resid = gen.apply(u) - u * lam
    w = dec.density.values / dec.grid.n
    rnorm = np.sqrt(np.sum(resid * resid * w[:, None], axis=0))
    gram = dec.gram()
    defect = np.abs(gram - np.eye(dec.n_modes))
    records, failures = [], []
    for j in range(jmax + 1):
        rel = float(rnorm[j] / abs(lam[j])) if j else float(rnorm[j])
        ratio = float(lam[j] / (-(j**2) * math.pi**2)) if j else None
        records.append(
            {"j": j, "lambda": float(lam[j]), "rayleigh_residual": rel, "sandwich_ratio": ratio}
        )
        if rel > residual_tol:
            failures.append(f"rayleigh residual {rel:.3e} at j={j}")
        if ratio is not None and not (lo - tol <= ratio <= hi + tol):
            failures.append(f"sandwich ratio {ratio:.6f} outside [{lo:.6f}, {hi:.6f}] at j={j}")
    max_defect = float(defect.max())
    if max_defect > orthonormality_tol:
        failures.append(f"orthonormality defect {max_defect:.3e}")
    return DiagnosticsReport(records, window, tol, max_defect, failures)


@dataclass
class GrowthReport:
    modes: list[int]
    h1_norms: list[float]
    h2_norms: list[float]
    slopes: dict[int, float]
    thresholds: dict[int, float]

    @property
    def passed(self) -> bool:
        return all(self.slopes[a] <= self.thresholds[a] for a in self.slopes)

    def to_json(self) -> dict:
        return {
            "modes": self.modes,
            "h1_norms": self.h1_norms,
            "h2_norms": self.h2_norms,
            "slopes": {str(a): s for a, s in self.slopes.items()},
            "thresholds": {str(a): s for a, s in self.thresholds.items()},
            "passed": self.passed,
        }


def sobolev_growth_check(dec: SpectralDecomposition, margin: float = 0.1) -> GrowthReport:
    """Fit ``log ||u_j||_{H^alpha}`` against ``log |lambda_j|`` for ``alpha = 1, 2``.

    Uses ``j in [4, J/2]`` with Lebesgue midpoint norms, central differences for
    ``u'`` and the Neumann second difference for ``u''``.
    """
    if dec.n_modes < 8:
        raise ValueError("growth check needs at least 8 modes")
    js = np.arange(4, dec.n_modes // 2 + 1)
    u = dec.vectors[:, js]
    du = dec.derivatives[:, js]
    d2u = neumann_laplacian_matrix(dec.grid) @ u
    n = dec.grid.n
    l2 = np.sum(u * u, axis=0) / n
    h1 = np.sqrt(l2 + np.sum(du * du, axis=0) / n)
    h2 = np.sqrt(h1**2 + np.sum(d2u * d2u, axis=0) / n)
    loglam = np.log(np.abs(dec.eigenvalues[js]))
    slopes = {
        1: float(np.polyfit(loglam, np.log(h1), 1)[0]),
        2: float(np.polyfit(loglam, np.log(h2), 1)[0]),
    }
    thresholds = {a: a / 2 + margin for a in (1, 2)}
    return GrowthReport(js.tolist(), h1.tolist(), h2.tolist(), slopes, thresholds)
