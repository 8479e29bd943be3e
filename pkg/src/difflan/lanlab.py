"""Exact log-likelihoods and Monte Carlo checks of the LAN expansion.

For a perturbation ``h`` and sample size ``n`` each replicate records

    loglik_ratio = l_n(b + h / sqrt(n)) - l_n(b)
    score        = n^{-1/2} sum_i A_b h(X_{i-1}, X_i)
    remainder    = loglik_ratio - score + |h|_LAN^2 / 2

The ratio is computed from two full likelihood evaluations, so the remainder
is measured rather than implied by the expansion.
"""

from __future__ import annotations

import csv
import io
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Sequence

import numpy as np
from scipy import integrate, stats

from .errors import ConfigurationError, InconsistencyError, NumericError
from .kernel import T_MIN, HeatKernel, heat_kernel
from .model import DEFAULT_RADIUS, DriftSpec, InvariantDensity, check_admissible
from .score import ScoreField, lan_norm, score_field
from .sim import LowFreqSample, RngStream, derive_seed, exact_skeleton_batch, ks_critical_99
from .spectral import SpectralDecomposition, build_decomposition, default_mode_count

MIN_CLT_REPLICATES = 500


def _chain_loglik(hk: HeatKernel, mu: InvariantDensity, states: np.ndarray) -> np.ndarray:
    """Log-likelihood of each row of ``states`` (shape ``(M, n + 1)``)."""
    states = np.atleast_2d(states)
    x, y = states[:, :-1], states[:, 1:]
    out = mu.log(states[:, 0])
    if x.shape[1]:
        ux = hk.dec.modes_at(x, hk.n_modes)
        uy = hk.dec.modes_at(y, hk.n_modes)
        p = np.einsum("mij,j,mij->mi", ux, hk.weights, uy) * mu(y)
        if not np.all(p > 0):
            raise NumericError(f"transition density {np.min(p):.3e} is not positive")
        out = out + np.log(p).sum(axis=1)
    return out


def log_likelihood(
    dec: SpectralDecomposition,
    mu: InvariantDensity,
    sample: LowFreqSample,
    n_modes: int | None = None,
) -> float:
    """``log mu(X_0) + sum_i log p_delta(X_{i-1}, X_i)`` for the drift ``dec`` was built for."""
    if mu.spec != dec.spec:
        raise ConfigurationError("density and decomposition belong to different drifts")
    hk = heat_kernel(dec, sample.delta, n_modes=n_modes)
    return float(_chain_loglik(hk, mu, sample.states)[0])


# ------------------------------------------------------------------ pipelines


@dataclass(frozen=True, eq=False)
class _Pipeline:
    dec: SpectralDecomposition
    kernel: HeatKernel

    @property
    def density(self) -> InvariantDensity:
        return self.dec.density


@lru_cache(maxsize=32)
def _pipeline(spec: DriftSpec, n_grid: int, delta: float, n_modes: int | None) -> _Pipeline:
    """Decomposition and kernel for one drift; only the leading modes are computed."""
    probe = build_decomposition(spec, n_grid, n_modes=min(n_grid, 64))
    j = default_mode_count(probe, delta) if n_modes is None else n_modes
    dec = probe if j <= probe.n_modes else build_decomposition(spec, n_grid, n_modes=j)
    return _Pipeline(dec, heat_kernel(dec, delta, n_modes=j))


@lru_cache(maxsize=8)
def _score(spec: DriftSpec, h: DriftSpec, n_grid: int, delta: float) -> tuple[ScoreField, float]:
    sf = score_field(build_decomposition(spec, n_grid), h, delta)
    return sf, lan_norm(sf)


def resolve_threads(threads: int | None = None) -> int:
    """Explicit value, else ``DIFFLAN_THREADS``, else the number of available cores."""
    if threads is None:
        env = os.environ.get("DIFFLAN_THREADS")
        threads = int(env) if env else (os.cpu_count() or 1)
    if threads < 1:
        raise ConfigurationError("threads must be at least 1")
    return int(threads)


# ------------------------------------------------------------------ experiment


@dataclass
class LanReport:
    b: DriftSpec
    h: DriftSpec
    delta: float
    n: int
    m: int
    seed: int
    n_grid: int
    loglik_ratio: np.ndarray = field(repr=False)
    score: np.ndarray = field(repr=False)
    lan_norm_sq: float

    @property
    def remainder(self) -> np.ndarray:
        return self.loglik_ratio - self.score + 0.5 * self.lan_norm_sq

    def summary(self) -> dict:
        rem = np.abs(self.remainder)
        m = self.score.size
        se = float(np.std(self.score, ddof=1) / math.sqrt(m)) if m > 1 else float("nan")
        out = {
            "median_abs_remainder": float(np.median(rem)),
            "mean_abs_remainder": float(np.mean(rem)),
            "score_mean": float(np.mean(self.score)),
            "score_mean_se": se,
            "variance_ratio": None,
            "ks_distance": None,
        }
        if self.lan_norm_sq > 0 and m > 1:
            z = self.score / math.sqrt(self.lan_norm_sq)
            out["variance_ratio"] = float(np.var(self.score, ddof=1) / self.lan_norm_sq)
            out["ks_distance"] = float(stats.kstest(z, "norm").statistic)
        return out

    def config(self) -> dict:
        return {
            "b": self.b.to_config(),
            "h": self.h.to_config(),
            "delta": self.delta,
            "n": self.n,
            "M": self.m,
            "seed": self.seed,
            "n_grid": self.n_grid,
        }

    def to_json(self) -> dict:
        return {"config": self.config(), "lan_norm_sq": self.lan_norm_sq, "summary": self.summary()}

    def records_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["replicate", "loglik_ratio", "score_sum_over_sqrt_n", "remainder"])
        for r, (a, s, q) in enumerate(zip(self.loglik_ratio, self.score, self.remainder)):
            w.writerow([r, repr(float(a)), repr(float(s)), repr(float(q))])
        return buf.getvalue()


def _replicate_block(pipe_b, pipe_p, sf, n, delta, streams):
    states = exact_skeleton_batch(pipe_b.kernel, n, streams)
    ratio = _chain_loglik(pipe_p.kernel, pipe_p.density, states) - _chain_loglik(
        pipe_b.kernel, pipe_b.density, states
    )
    score = sf(states[:, :-1], states[:, 1:]).sum(axis=1) / math.sqrt(n)
    return ratio, score


def lan_experiment(
    b: DriftSpec,
    h: DriftSpec,
    delta: float,
    n_list: Sequence[int],
    m: int,
    seed: int,
    n_grid: int = 512,
    radius: float = DEFAULT_RADIUS,
    threads: int | None = None,
    block: int = 100,
) -> list[LanReport]:
    """One :class:`LanReport` per ``n``; replicate ``r`` at size ``n`` uses stream ``(derive_seed(seed, n), r)``."""
    if delta < T_MIN:
        raise ConfigurationError(f"delta={delta} below t_min={T_MIN}")
    if m < 1:
        raise ConfigurationError("need at least one replicate")
    check_admissible(b, radius)
    if not h.vanishes_at_boundary:
        raise ConfigurationError("perturbation must vanish at 0 and 1")
    for n in n_list:
        if n < 1:
            raise ConfigurationError("n must be at least 1")
        check_admissible(b + h * (1.0 / math.sqrt(n)), radius)
    reports = []
    if h.is_zero:
        for n in n_list:
            z = np.zeros(m)
            reports.append(LanReport(b, h, float(delta), int(n), int(m), int(seed), n_grid, z, z.copy(), 0.0))
        return reports
    sf, norm = _score(b, h, n_grid, float(delta))
    pipe_b = _pipeline(b, n_grid, float(delta), None)
    workers = resolve_threads(threads)
    for n in n_list:
        pipe_p = _pipeline(b + h * (1.0 / math.sqrt(n)), n_grid, float(delta), None)
        child = derive_seed(seed, n)
        chunks = [
            [RngStream(child, r) for r in range(lo, min(lo + block, m))] for lo in range(0, m, block)
        ]
        run = lambda s: _replicate_block(pipe_b, pipe_p, sf, int(n), float(delta), s)
        if workers > 1 and len(chunks) > 1:
            with ThreadPoolExecutor(max_workers=workers) as pool:
                parts = list(pool.map(run, chunks))
        else:
            parts = [run(c) for c in chunks]
        ratio = np.concatenate([p[0] for p in parts])
        score = np.concatenate([p[1] for p in parts])
        reports.append(
            LanReport(b, h, float(delta), int(n), int(m), int(seed), n_grid, ratio, score, norm * norm)
        )
    return reports


def plot_data_csv(reports: Sequence[LanReport]) -> str:
    """``n`` against median absolute remainder, one row per report."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["n", "median_abs_remainder", "mean_abs_remainder", "score_mean", "variance_ratio"])
    for r in reports:
        s = r.summary()
        w.writerow([r.n, repr(s["median_abs_remainder"]), repr(s["mean_abs_remainder"]),
                    repr(s["score_mean"]), repr(s["variance_ratio"])])
    return buf.getvalue()


def remainder_decay_rate(reports: Sequence[LanReport]) -> float | None:
    """Fitted log-log slope of median |remainder| against ``n``; no target exponent is implied."""
    pts = [(r.n, r.summary()["median_abs_remainder"]) for r in reports]
    pts = [(n, v) for n, v in pts if v > 0]
    if len(pts) < 2:
        return None
    n, v = np.log(np.array(pts)).T
    return float(np.polyfit(n, v, 1)[0])


# ------------------------------------------------------------------ CLT


@dataclass
class CltReport:
    status: str
    n: int
    m: int
    ks_distance: float | None
    ks_critical: float
    variance_ratio: float | None
    window: tuple[float, float] = (0.9, 1.1)
    qq: list[tuple[float, float]] = field(default_factory=list, repr=False)

    @property
    def passed(self) -> bool:
        if self.status == "zero direction":
            return True
        return (
            self.ks_distance < self.ks_critical
            and self.window[0] <= self.variance_ratio <= self.window[1]
        )

    def to_json(self) -> dict:
        return {
            "status": self.status,
            "n": self.n,
            "M": self.m,
            "ks_distance": self.ks_distance,
            "ks_critical": self.ks_critical,
            "variance_ratio": self.variance_ratio,
            "variance_window": list(self.window),
            "passed": self.passed,
        }

    def qq_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["normal_quantile", "standardized_score"])
        for a, z in self.qq:
            w.writerow([repr(a), repr(z)])
        return buf.getvalue()


def clt_check(report: LanReport, min_replicates: int = MIN_CLT_REPLICATES) -> CltReport:
    """KS distance of standardized score sums to N(0, 1) and the variance ratio."""
    m = report.score.size
    if m < min_replicates:
        raise ConfigurationError(f"CLT check needs at least {min_replicates} replicates, got {m}")
    crit = ks_critical_99(m)
    if report.lan_norm_sq <= 0.0:
        if np.any(report.score != 0.0):
            raise InconsistencyError("zero LAN norm but nonzero score sums")
        return CltReport("zero direction", report.n, m, None, crit, None)
    z = np.sort(report.score / math.sqrt(report.lan_norm_sq))
    ks = float(stats.kstest(z, "norm").statistic)
    ratio = float(np.var(report.score, ddof=1) / report.lan_norm_sq)
    q = stats.norm.ppf((np.arange(m) + 0.5) / m)
    status = "pass" if ks < crit and 0.9 <= ratio <= 1.1 else "fail"
    return CltReport(status, report.n, m, ks, crit, ratio, qq=list(zip(q.tolist(), z.tolist())))


# ------------------------------------------------------------------ initial term


def invariant_start_term(b: DriftSpec, h: DriftSpec, n: float, x0):
    """``log mu_{b + h/sqrt(n)}(x0) - log mu_b(x0)`` by adaptive quadrature.

    Equal to ``H(x0)/sqrt(n) - log int mu_b exp(H/sqrt(n))`` with ``H`` the
    antiderivative of ``h``; the log-normaliser is evaluated as ``log1p`` of an
    ``expm1`` integral so that large ``n`` keeps full relative accuracy.
    """
    if n <= 0:
        raise ConfigurationError("n must be positive")
    x0 = np.asarray(x0, dtype=float)
    if h.is_zero:
        return 0.0 if x0.ndim == 0 else np.zeros_like(x0)
    s = 1.0 / math.sqrt(n)
    zb = integrate.quad(lambda x: math.exp(float(b.antiderivative(x))), 0.0, 1.0, epsabs=0, epsrel=1e-13)[0]
    rel = integrate.quad(
        lambda x: math.exp(float(b.antiderivative(x))) * math.expm1(s * float(h.antiderivative(x))),
        0.0, 1.0, epsabs=0, epsrel=1e-12,
    )[0]
    out = s * h.antiderivative(x0) - math.log1p(rel / zb)
    return float(out) if np.ndim(out) == 0 else out
