"""Reflected Euler paths, exact Markov skeletons and stationary draws.

Randomness comes from :class:`RngStream`, a (seed, index) pair mapped onto a
counter-based Philox generator, so replicate ``r`` of an experiment draws the
same numbers regardless of how replicates are scheduled.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Sequence

import numba
import numpy as np
from scipy import integrate, stats

from .errors import DomainError
from .kernel import T_MIN, HeatKernel, heat_kernel
from .model import DriftSpec, InvariantDensity
from .spectral import SpectralDecomposition

MAX_EULER_STEP = 1e-3


def derive_seed(seed: int, *keys: int) -> int:
    """Deterministic 64-bit child seed for a tuple of integer keys."""
    ss = np.random.SeedSequence(int(seed), spawn_key=tuple(int(k) for k in keys))
    return int(ss.generate_state(1, np.uint64)[0])


@dataclass(frozen=True)
class RngStream:
    seed: int
    index: int = 0
    counter: int = 0

    def generator(self) -> np.random.Generator:
        ss = np.random.SeedSequence(int(self.seed), spawn_key=(int(self.index),))
        bitgen = np.random.Philox(ss)
        if self.counter:
            bitgen = bitgen.advance(self.counter)
        return np.random.Generator(bitgen)


def _as_generator(rng) -> np.random.Generator:
    if isinstance(rng, RngStream):
        return rng.generator()
    if isinstance(rng, np.random.Generator):
        return rng
    raise TypeError(f"expected RngStream or numpy Generator, got {type(rng).__name__}")


@dataclass(frozen=True, eq=False)
class LowFreqSample:
    states: np.ndarray = field(repr=False)
    delta: float
    method: str
    seed: int | None = None
    index: int | None = None
    dt: float | None = None

    def __post_init__(self):
        s = np.asarray(self.states, dtype=float)
        if s.ndim != 1 or s.size < 1:
            raise ValueError("a sample needs at least one state")
        if np.any(s < 0.0) or np.any(s > 1.0):
            raise DomainError("sample states must lie in [0, 1]")
        if not self.delta > 0:
            raise ValueError("sampling distance must be positive")
        object.__setattr__(self, "states", s)

    @property
    def n(self) -> int:
        return self.states.size - 1

    def metadata(self) -> dict:
        return {
            "n": self.n,
            "delta": self.delta,
            "method": self.method,
            "seed": self.seed,
            "index": self.index,
            "dt": self.dt,
        }

    def to_csv(self) -> str:
        return "state\n" + "".join(f"{v!r}\n" for v in self.states.tolist())

    def metadata_json(self) -> str:
        return json.dumps(self.metadata(), indent=2, sort_keys=True)


def _inverse_cdf(masses: np.ndarray, u: np.ndarray) -> np.ndarray:
    """Cell masses on the uniform grid (one row per draw, or one shared row); draws ``u``."""
    masses = np.clip(masses, 0.0, None)
    n = masses.shape[-1]
    if masses.ndim == 1:
        cdf = np.cumsum(masses)
        target = u * cdf[-1]
        cell = np.minimum(np.searchsorted(cdf, target, side="left"), n - 1)
        m = masses[cell]
        frac = np.where(m > 0, 1.0 - (cdf[cell] - target) / np.where(m > 0, m, 1.0), 0.5)
        return (cell + np.clip(frac, 0.0, 1.0)) / n
    cdf = np.cumsum(masses, axis=-1)
    total = cdf[..., -1:]
    target = u[..., None] * total
    cell = np.minimum(np.sum(cdf < target, axis=-1), n - 1)
    upper = np.take_along_axis(cdf, cell[..., None], axis=-1)[..., 0]
    m = np.take_along_axis(masses, cell[..., None], axis=-1)[..., 0]
    frac = np.where(m > 0, 1.0 - (upper - u * total[..., 0]) / np.where(m > 0, m, 1.0), 0.5)
    return (cell + np.clip(frac, 0.0, 1.0)) / n


def sample_stationary(mu: InvariantDensity, rng, size: int | None = None):
    """Inverse-CDF draws from the grid density with linear CDF inside each cell."""
    u = _as_generator(rng).random(size)
    out = _inverse_cdf(mu.values, np.asarray(u))
    return float(out) if size is None else out


@numba.njit(cache=True)
def _euler_kernel(x, coeffs, freqs, constant, increments, dt, out):
    out[0] = x
    for i in range(increments.size):
        bx = constant
        for k in range(coeffs.size):
            bx += coeffs[k] * math.sin(freqs[k] * x)
        x = x + bx * dt + increments[i]
        while x < 0.0 or x > 1.0:
            if x < 0.0:
                x = -x
            else:
                x = 2.0 - x
        out[i + 1] = x
    return out


@dataclass(frozen=True, eq=False)
class ReflectedPath:
    states: np.ndarray = field(repr=False)
    dt: float
    seed: int | None = None
    index: int | None = None

    @property
    def horizon(self) -> float:
        return (self.states.size - 1) * self.dt


def simulate_reflected(spec: DriftSpec, x0: float, T: float, dt: float, rng) -> ReflectedPath:
    """Euler-Maruyama for ``dX = b dt + sqrt(2) dW``, folded back into ``[0, 1]`` each step."""
    if not dt > 0:
        raise ValueError("time step must be positive")
    if dt > MAX_EULER_STEP:
        raise ValueError(f"time step must not exceed {MAX_EULER_STEP}")
    if not 0.0 <= x0 <= 1.0:
        raise DomainError("initial state outside [0, 1]")
    steps = int(round(T / dt))
    if steps < 1:
        raise ValueError("horizon shorter than one step")
    gen = _as_generator(rng)
    incr = gen.standard_normal(steps) * math.sqrt(2.0 * dt)
    coeffs = np.asarray(spec.sine, dtype=float)
    freqs = np.pi * np.arange(1, coeffs.size + 1, dtype=float)
    out = _euler_kernel(float(x0), coeffs, freqs, spec.constant, incr, float(dt), np.empty(steps + 1))
    seed = rng.seed if isinstance(rng, RngStream) else None
    index = rng.index if isinstance(rng, RngStream) else None
    return ReflectedPath(out, float(dt), seed, index)


@numba.njit(cache=True)
def _euler_endpoints(x0, coeffs, freqs, constant, normals, scale, dt, out):
    for p in range(normals.shape[0]):
        x = x0
        for i in range(normals.shape[1]):
            bx = constant
            for k in range(coeffs.size):
                bx += coeffs[k] * math.sin(freqs[k] * x)
            x = x + bx * dt + scale * normals[p, i]
            while x < 0.0 or x > 1.0:
                if x < 0.0:
                    x = -x
                else:
                    x = 2.0 - x
        out[p] = x
    return out


def euler_endpoints(spec: DriftSpec, x0: float, T: float, dt: float, m: int, rng) -> np.ndarray:
    """Final states of ``m`` independent reflected Euler paths started at ``x0``."""
    if not 0 < dt <= MAX_EULER_STEP:
        raise ValueError(f"time step must lie in (0, {MAX_EULER_STEP}]")
    steps = int(round(T / dt))
    gen = _as_generator(rng)
    coeffs = np.asarray(spec.sine, dtype=float)
    freqs = np.pi * np.arange(1, coeffs.size + 1, dtype=float)
    out = np.empty(m)
    block = max(1, 2_000_000 // max(steps, 1))
    for lo in range(0, m, block):
        z = gen.standard_normal((min(block, m - lo), steps))
        _euler_endpoints(float(x0), coeffs, freqs, spec.constant, z, math.sqrt(2.0 * dt), float(dt),
                         out[lo : lo + z.shape[0]])
    return out


def subsample(path: ReflectedPath, delta: float, n: int | None = None) -> LowFreqSample:
    """Every ``delta / dt``-th state of an Euler path."""
    ratio = delta / path.dt
    stride = int(round(ratio))
    if stride < 1 or abs(ratio - stride) > 1e-9 * max(ratio, 1.0):
        raise ValueError(f"delta={delta} is not an integer multiple of dt={path.dt}")
    available = (path.states.size - 1) // stride
    if n is None:
        n = available
    elif n > available:
        raise ValueError(f"n * delta = {n * delta} exceeds the path horizon {path.horizon}")
    states = path.states[: n * stride + 1 : stride]
    return LowFreqSample(states, float(delta), "euler", path.seed, path.index, path.dt)


def _skeleton_states(hk: HeatKernel, n: int, uniforms: np.ndarray) -> np.ndarray:
    """Chains driven by ``uniforms`` of shape ``(M, n + 1)``; column 0 seeds the start."""
    mu = hk.dec.density
    m = uniforms.shape[0]
    out = np.empty((m, n + 1))
    out[:, 0] = _inverse_cdf(mu.values, uniforms[:, 0])
    for i in range(1, n + 1):
        out[:, i] = _inverse_cdf(hk.rows(out[:, i - 1]), uniforms[:, i])
    return out


def exact_skeleton_batch(hk: HeatKernel, n: int, streams: Sequence[RngStream]) -> np.ndarray:
    """One exact skeleton per stream, shape ``(len(streams), n + 1)``."""
    if n < 0:
        raise ValueError("n must be non-negative")
    u = np.stack([s.generator().random(n + 1) for s in streams])
    return _skeleton_states(hk, n, u)


def exact_skeleton_sample(dec: SpectralDecomposition, delta: float, n: int, rng: RngStream) -> LowFreqSample:
    """Markov chain with kernel ``p_delta`` started from the invariant law; no time stepping."""
    hk = heat_kernel(dec, delta, t_min=T_MIN)
    states = exact_skeleton_batch(hk, n, [rng])[0]
    return LowFreqSample(states, float(delta), "exact", rng.seed, rng.index)


# ------------------------------------------------------------ statistical checks


def bin_probabilities(spec: DriftSpec, bins: int) -> np.ndarray:
    """Exact invariant-law mass of ``bins`` equal cells by adaptive quadrature."""
    edges = np.linspace(0.0, 1.0, bins + 1)
    f = lambda x: math.exp(float(spec.antiderivative(x)))
    mass = np.array([integrate.quad(f, a, b, epsabs=0, epsrel=1e-13)[0] for a, b in zip(edges[:-1], edges[1:])])
    return mass / mass.sum()


@dataclass
class ChiSquareResult:
    statistic: float
    critical: float
    dof: int
    samples: int

    @property
    def passed(self) -> bool:
        return self.statistic < self.critical


def occupation_chi_square(
    path: ReflectedPath, spec: DriftSpec, bins: int = 32, thin_time: float = 0.5, level: float = 0.99
) -> ChiSquareResult:
    """Chi-square of the path's occupation histogram against the invariant law.

    States are taken every ``thin_time`` time units so that successive counts
    are close to independent.
    """
    stride = max(1, int(round(thin_time / path.dt)))
    x = path.states[::stride]
    counts, _ = np.histogram(x, bins=bins, range=(0.0, 1.0))
    expected = bin_probabilities(spec, bins) * x.size
    stat = float(np.sum((counts - expected) ** 2 / expected))
    return ChiSquareResult(stat, float(stats.chi2.ppf(level, bins - 1)), bins - 1, int(x.size))


def ks_critical_99(n: int) -> float:
    return 1.63 / math.sqrt(n)


def grid_cdf(mu: InvariantDensity):
    """CDF of the grid law, linear inside each cell."""
    table = mu.cdf_table()
    edges = mu.grid.edges
    return lambda x: np.interp(x, edges, table)
