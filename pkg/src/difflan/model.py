"""Drift functions, the cell-centred grid and the invariant density.

Drifts are finite sine series ``b(x) = sum_k c_k sin(k pi x)``, which vanish at
both ends of ``[0, 1]`` and have closed-form antiderivatives.  A constant drift
is also representable; it is outside the admissible class (it does not vanish
at the boundary) and exists for closed-form oracle tests.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Any, Mapping

import numpy as np

from .errors import ConfigurationError, DomainError

#: Default radius of the C^1 ball of admissible drifts.
DEFAULT_RADIUS = 5.0


@dataclass(frozen=True)
class DriftSpec:
    """Drift ``b(x) = constant + sum_k sine[k-1] * sin(k pi x)``."""

    sine: tuple[float, ...] = ()
    constant: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "sine", tuple(float(c) for c in self.sine))
        object.__setattr__(self, "constant", float(self.constant))
        if not all(np.isfinite(self.sine)) or not np.isfinite(self.constant):
            raise ConfigurationError("drift coefficients must be finite")

    @classmethod
    def from_sine(cls, *coeffs: float) -> "DriftSpec":
        return cls(sine=tuple(coeffs))

    @classmethod
    def constant_drift(cls, c: float) -> "DriftSpec":
        """Constant drift ``b = c``; for oracle tests only."""
        return cls(constant=c)

    @classmethod
    def zero(cls) -> "DriftSpec":
        return cls()

    @classmethod
    def from_config(cls, obj: Mapping[str, Any] | "DriftSpec") -> "DriftSpec":
        """Parse ``{"sine": [c_1, ...]}`` or ``{"constant": c}`` (both keys may be combined)."""
        if isinstance(obj, DriftSpec):
            return obj
        if not isinstance(obj, Mapping):
            raise ConfigurationError(f"drift must be a JSON object, got {obj!r}")
        unknown = set(obj) - {"sine", "constant"}
        if unknown:
            raise ConfigurationError(f"unknown drift keys: {sorted(unknown)}")
        if not obj:
            raise ConfigurationError("drift needs a 'sine' or 'constant' entry")
        try:
            sine = tuple(float(c) for c in obj.get("sine", ()))
            constant = float(obj.get("constant", 0.0))
        except (TypeError, ValueError) as exc:
            raise ConfigurationError(f"bad drift coefficients: {exc}") from exc
        return cls(sine=sine, constant=constant)

    def to_config(self) -> dict:
        out: dict[str, Any] = {}
        if self.sine:
            out["sine"] = list(self.sine)
        if self.constant != 0.0 or not self.sine:
            out["constant"] = self.constant
        return out

    @property
    def is_zero(self) -> bool:
        return self.constant == 0.0 and all(c == 0.0 for c in self.sine)

    @property
    def vanishes_at_boundary(self) -> bool:
        """True for pure sine series, i.e. members of C_0^1."""
        return self.constant == 0.0

    def _freqs(self) -> np.ndarray:
        return np.pi * np.arange(1, len(self.sine) + 1)

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        out = np.full(x.shape, self.constant)
        for w, c in zip(self._freqs(), self.sine):
            if c:
                out = out + c * np.sin(w * x)
        return out

    def derivative(self, x):
        x = np.asarray(x, dtype=float)
        out = np.zeros(x.shape)
        for w, c in zip(self._freqs(), self.sine):
            if c:
                out = out + c * w * np.cos(w * x)
        return out

    def antiderivative(self, x):
        """Closed form of ``int_0^x b(y) dy``."""
        x = np.asarray(x, dtype=float)
        out = self.constant * x
        for w, c in zip(self._freqs(), self.sine):
            if c:
                out = out + c * (1.0 - np.cos(w * x)) / w
        return out

    def __add__(self, other: "DriftSpec") -> "DriftSpec":
        if not isinstance(other, DriftSpec):
            return NotImplemented
        k = max(len(self.sine), len(other.sine))
        a = np.zeros(k)
        a[: len(self.sine)] += self.sine
        a[: len(other.sine)] += other.sine
        return DriftSpec(sine=tuple(a), constant=self.constant + other.constant)

    def __mul__(self, s: float) -> "DriftSpec":
        s = float(s)
        return DriftSpec(sine=tuple(s * c for c in self.sine), constant=s * self.constant)

    __rmul__ = __mul__

    def __neg__(self) -> "DriftSpec":
        return self * -1.0

    def __sub__(self, other: "DriftSpec") -> "DriftSpec":
        return self + (-other)


def _check_unit_interval(x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if np.any(~np.isfinite(x)) or np.any(x < 0.0) or np.any(x > 1.0):
        raise DomainError("state outside [0, 1]")
    return x


def eval_drift(spec: DriftSpec, x):
    """Evaluate ``b(x)``; raises :class:`DomainError` outside ``[0, 1]``."""
    x = _check_unit_interval(x)
    out = spec(x)
    return float(out) if out.ndim == 0 else out


def drift_antiderivative(spec: DriftSpec, x):
    x = _check_unit_interval(x)
    out = spec.antiderivative(x)
    return float(out) if np.ndim(out) == 0 else out


def c1_bound(spec: DriftSpec) -> float:
    """Upper bound ``|c| + sum_k |c_k| (1 + k pi)`` on ``||b||_inf + ||b'||_inf``."""
    k = np.arange(1, len(spec.sine) + 1)
    return float(abs(spec.constant) + np.sum(np.abs(spec.sine) * (1.0 + k * np.pi)))


def check_admissible(spec: DriftSpec, radius: float = DEFAULT_RADIUS, *, allow_constant=False) -> None:
    """Raise :class:`ConfigurationError` unless ``spec`` lies in the C^1_0 ball of ``radius``."""
    if not allow_constant and not spec.vanishes_at_boundary:
        raise ConfigurationError("drift must vanish at 0 and 1 (constant part not allowed)")
    bound = c1_bound(spec)
    if bound > radius:
        raise ConfigurationError(f"C^1 bound {bound:.6g} exceeds radius {radius:.6g}")


@dataclass(frozen=True)
class Grid:
    """Uniform cell-centred grid on [0, 1] with ``n`` cells."""

    n: int

    def __post_init__(self):
        n = self.n
        if isinstance(n, bool) or int(n) != n:
            raise ConfigurationError(f"grid size must be an integer, got {n!r}")
        n = int(n)
        if n < 16 or n & (n - 1):
            raise ConfigurationError(f"grid size must be a power of two >= 16, got {n}")
        object.__setattr__(self, "n", n)

    @property
    def width(self) -> float:
        return 1.0 / self.n

    @cached_property
    def nodes(self) -> np.ndarray:
        x = (np.arange(self.n) + 0.5) / self.n
        x.setflags(write=False)
        return x

    @cached_property
    def weights(self) -> np.ndarray:
        w = np.full(self.n, 1.0 / self.n)
        w.setflags(write=False)
        return w

    @cached_property
    def edges(self) -> np.ndarray:
        e = np.arange(self.n + 1) / self.n
        e.setflags(write=False)
        return e

    def integrate(self, f, axis=-1):
        """Midpoint rule over [0, 1]."""
        return np.sum(f, axis=axis) / self.n


@dataclass(frozen=True, eq=False)
class InvariantDensity:
    """Invariant density on a grid, normalised by the midpoint rule on that grid."""

    spec: DriftSpec
    grid: Grid
    values: np.ndarray = field(repr=False)
    log_values: np.ndarray = field(repr=False)
    normalizer: float

    @property
    def lower(self) -> float:
        return float(self.values.min())

    @property
    def upper(self) -> float:
        return float(self.values.max())

    @property
    def ratio_window(self) -> tuple[float, float]:
        """``(min mu / max mu, max mu / min mu)``."""
        r = self.lower / self.upper
        return r, 1.0 / r

    def __call__(self, x):
        """Closed-form density at arbitrary states, with this grid's normaliser."""
        return np.exp(self.spec.antiderivative(x)) / self.normalizer

    def log(self, x):
        return self.spec.antiderivative(x) - np.log(self.normalizer)

    def cdf_table(self) -> np.ndarray:
        """CDF at the cell edges for the piecewise-constant cell masses."""
        return np.concatenate([[0.0], np.cumsum(self.values) / self.grid.n])


def invariant_density(spec: DriftSpec, grid: Grid) -> InvariantDensity:
    big_b = spec.antiderivative(grid.nodes)
    shift = big_b.max()
    unnorm = np.exp(big_b - shift)
    z_shifted = unnorm.sum() / grid.n
    values = unnorm / z_shifted
    # second pass removes the last rounding of the mean
    values = values / (values.sum() / grid.n)
    log_z = shift + np.log(z_shifted)
    values.setflags(write=False)
    log_values = np.log(values)
    log_values.setflags(write=False)
    return InvariantDensity(spec, grid, values, log_values, float(np.exp(log_z)))
