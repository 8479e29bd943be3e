import math

import numpy as np
import pytest
from scipy import stats

from difflan.errors import DomainError
from difflan.kernel import heat_kernel
from difflan.model import DriftSpec, Grid, invariant_density
from difflan.sim import (
    LowFreqSample,
    RngStream,
    derive_seed,
    euler_endpoints,
    exact_skeleton_batch,
    exact_skeleton_sample,
    grid_cdf,
    ks_critical_99,
    occupation_chi_square,
    sample_stationary,
    simulate_reflected,
    subsample,
)

from conftest import TEST_DRIFTS


def test_streams_reproducible():
    a = RngStream(11, 3).generator().random(5)
    b = RngStream(11, 3).generator().random(5)
    c = RngStream(11, 4).generator().random(5)
    assert np.array_equal(a, b) and not np.array_equal(a, c)
    assert derive_seed(1, 2) == derive_seed(1, 2) != derive_seed(1, 3)


def test_stream_counter_skips_ahead():
    full = RngStream(5).generator().random(8)
    # Philox advances in blocks of four 64-bit words
    later = RngStream(5, counter=1).generator().random(4)
    assert np.array_equal(full[4:], later)


def test_uniform_stationary_draws():
    mu = invariant_density(DriftSpec.zero(), Grid(512))
    x = sample_stationary(mu, RngStream(1), 100_000)
    assert abs(x.mean() - 0.5) < 3 * (1 / math.sqrt(12)) / math.sqrt(1e5)
    assert isinstance(sample_stationary(mu, RngStream(1)), float)


def test_constant_drift_stationary_mean():
    mu = invariant_density(DriftSpec.constant_drift(1.0), Grid(1024))
    x = sample_stationary(mu, RngStream(2), 100_000)
    assert abs(x.mean() - 1 / (math.e - 1)) < 3 * x.std() / math.sqrt(x.size)


@pytest.mark.parametrize("name", list(TEST_DRIFTS))
def test_stationary_ks(name):
    mu = invariant_density(TEST_DRIFTS[name], Grid(512))
    x = sample_stationary(mu, RngStream(3), 100_000)
    assert stats.kstest(x, grid_cdf(mu)).statistic < ks_critical_99(x.size)


def test_euler_containment_and_validation():
    path = simulate_reflected(DriftSpec.zero(), 0.5, 1000.0, 1e-3, RngStream(4))
    assert path.states.size == 1_000_001
    assert np.all((path.states >= 0.0) & (path.states <= 1.0))
    for dt in (0.0, -1e-3, 2e-3):
        with pytest.raises(ValueError):
            simulate_reflected(DriftSpec.zero(), 0.5, 1.0, dt, RngStream(4))
    with pytest.raises(DomainError):
        simulate_reflected(DriftSpec.zero(), 1.5, 1.0, 1e-3, RngStream(4))


def test_euler_reproducible():
    a = simulate_reflected(DriftSpec.from_sine(0.0, 1.0), 0.2, 5.0, 1e-3, RngStream(9, 2)).states
    b = simulate_reflected(DriftSpec.from_sine(0.0, 1.0), 0.2, 5.0, 1e-3, RngStream(9, 2)).states
    assert np.array_equal(a, b)


@pytest.mark.parametrize("name", ["zero", "sin2pi"])
def test_occupation_chi_square(name):
    spec = TEST_DRIFTS[name]
    path = simulate_reflected(spec, 0.5, 2000.0, 1e-3, RngStream(2024, 1))
    assert occupation_chi_square(path, spec).passed


def test_subsample_counts():
    path = simulate_reflected(DriftSpec.zero(), 0.5, 1000.0, 1e-3, RngStream(4))
    s = subsample(path, 0.5)
    assert s.states.size == 2001 and s.n == 2000
    assert np.array_equal(subsample(path, 1e-3).states, path.states)
    with pytest.raises(ValueError):
        subsample(path, 0.5, n=2001)
    with pytest.raises(ValueError):
        subsample(path, 0.0015)
    assert s.metadata()["method"] == "euler"


def test_sample_validation():
    with pytest.raises(DomainError):
        LowFreqSample(np.array([0.2, 1.1]), 0.5, "exact")
    with pytest.raises(ValueError):
        LowFreqSample(np.array([0.2]), 0.0, "exact")


def test_exact_skeleton_single_draw(dec_cache):
    s = exact_skeleton_sample(dec_cache(DriftSpec.zero()), 0.5, 0, RngStream(6))
    assert s.states.size == 1 and s.method == "exact"
    assert s.to_csv().startswith("state\n")


def test_equilibrated_skeleton_is_independent(dec_cache):
    s = exact_skeleton_sample(dec_cache(DriftSpec.zero()), 10.0, 10_000, RngStream(7)).states
    z = s - s.mean()
    r1 = np.sum(z[1:] * z[:-1]) / np.sum(z * z)
    assert abs(r1) < 3 / math.sqrt(1e4)


@pytest.mark.parametrize("name", ["sin2pi", "const1"])
def test_skeleton_marginal_stationary(name, dec_cache):
    dec = dec_cache(TEST_DRIFTS[name])
    hk = heat_kernel(dec, 0.5)
    s = exact_skeleton_batch(hk, 5, [RngStream(8, r) for r in range(10_000)])
    assert np.all((s >= 0) & (s <= 1))
    assert stats.kstest(s[:, 5], grid_cdf(dec.density)).statistic < ks_critical_99(10_000)


def test_skeleton_reproducible(dec_cache):
    dec = dec_cache(DriftSpec.from_sine(0.0, 1.0))
    a = exact_skeleton_sample(dec, 0.5, 50, RngStream(3, 1)).states
    b = exact_skeleton_sample(dec, 0.5, 50, RngStream(3, 1)).states
    assert np.array_equal(a, b)


@pytest.mark.parametrize("dt,m", [(1e-3, 100_000), (5e-4, 50_000)])
def test_euler_transition_law_matches_kernel(dt, m, dec_cache):
    spec = DriftSpec.from_sine(0.0, 1.0)
    dec = dec_cache(spec)
    row = heat_kernel(dec, 0.5).rows(np.array([0.3]))[0]
    cdf = np.concatenate([[0.0], np.cumsum(row) / 512])
    ends = euler_endpoints(spec, 0.3, 0.5, dt, m, RngStream(31, int(1 / dt)))
    ks = stats.kstest(ends, lambda y: np.interp(y, dec.grid.edges, cdf)).statistic
    assert ks < ks_critical_99(m)
