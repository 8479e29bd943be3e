import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from difflan.errors import ConfigurationError
from difflan.model import DriftSpec, Grid, invariant_density
from difflan.spectral import (
    assemble_generator,
    build_decomposition,
    default_mode_count,
    eigendecompose,
    richardson_eigenvalues,
    sobolev_growth_check,
    spectral_diagnostics,
)

from conftest import TEST_DRIFTS

# lambda_1 for b = sin(2 pi x) by ODE shooting (DOP853, rtol 1e-13) on u'' + b u' = lambda u,
# u'(0) = u'(1) = 0, root found with brentq.
LAMBDA1_SIN2PI = -11.535977531368555


def _gen(spec, n):
    grid = Grid(n)
    return assemble_generator(spec, invariant_density(spec, grid), grid)


def test_zero_drift_stencil():
    # Neumann Laplacian: ends -N^2, interior -2N^2, off-diagonal N^2
    n = 16
    g = _gen(DriftSpec.zero(), n)
    expected = np.full(n, -2.0 * n * n)
    expected[[0, -1]] = -n * n
    np.testing.assert_array_equal(g.diag, expected)
    np.testing.assert_array_equal(g.offdiag, np.full(n - 1, n * n))


@pytest.mark.parametrize("name", list(TEST_DRIFTS))
def test_constants_in_kernel(name):
    g = _gen(TEST_DRIFTS[name], 256)
    assert np.max(np.abs(g.apply(np.ones(256)))) <= 1e-12 * 256**2


def test_symmetrised_matrix_is_symmetric():
    g = _gen(DriftSpec.from_sine(0.0, 1.0), 256)
    dense = np.diag(g.diag) + np.diag(g.offdiag, 1) + np.diag(g.offdiag, -1)
    assert np.array_equal(dense, dense.T)


def test_grid_mismatch_rejected():
    spec = DriftSpec.from_sine(1.0)
    with pytest.raises(ConfigurationError):
        assemble_generator(spec, invariant_density(spec, Grid(32)), Grid(64))
    with pytest.raises(ConfigurationError):
        assemble_generator(spec, invariant_density(DriftSpec.zero(), Grid(32)), Grid(32))


def test_too_many_modes_rejected():
    with pytest.raises(ValueError):
        eigendecompose(_gen(DriftSpec.zero(), 32), 33)


@settings(max_examples=15, deadline=None)
@given(st.lists(st.floats(-1.0, 1.0), min_size=1, max_size=3), st.integers(0, 2**31))
def test_discrete_self_adjointness(c, seed):
    spec = DriftSpec.from_sine(*c)
    g = _gen(spec, 128)
    r = np.random.default_rng(seed)
    f, h = r.standard_normal((2, 128))
    w = g.density.values / 128
    lhs = np.sum(g.apply(f) * h * w)
    rhs = np.sum(f * g.apply(h) * w)
    assert abs(lhs - rhs) <= 1e-10 * 128**2 * np.sqrt(np.sum(f * f * w) * np.sum(h * h * w))


def test_zero_drift_spectrum_richardson():
    lam = richardson_eigenvalues(DriftSpec.zero(), 2048, 17)
    j = np.arange(1, 17)
    np.testing.assert_allclose(lam[1:], -(j * math.pi) ** 2, rtol=1e-4)
    assert abs(lam[0]) < 1e-9


@pytest.mark.parametrize("name", list(TEST_DRIFTS))
def test_null_pair(name, dec_cache):
    dec = dec_cache(TEST_DRIFTS[name], 512)
    assert abs(dec.eigenvalues[0]) < 1e-9
    np.testing.assert_allclose(dec.vectors[:, 0], 1.0, atol=1e-7)


@pytest.mark.parametrize("name", list(TEST_DRIFTS))
def test_type_invariants(name, dec_cache):
    dec = dec_cache(TEST_DRIFTS[name], 512)
    assert np.max(np.abs(dec.gram() - np.eye(dec.n_modes))) < 1e-9
    assert np.all(dec.vectors[0] > 0)
    assert np.all(np.diff(dec.eigenvalues) < 0)


def test_sin2pi_first_eigenvalue_against_shooting():
    lam = richardson_eigenvalues(DriftSpec.from_sine(0.0, 1.0), 2048, 2)
    assert lam[1] == pytest.approx(LAMBDA1_SIN2PI, rel=1e-4)


def test_partial_decomposition_matches_full(dec_cache):
    spec = DriftSpec.from_sine(0.5, 0.0, 0.25)
    full = dec_cache(spec, 512)
    part = build_decomposition(spec, 512, n_modes=20)
    np.testing.assert_allclose(part.eigenvalues, full.eigenvalues[:20], rtol=1e-10)
    np.testing.assert_allclose(part.vectors, full.vectors[:, :20], atol=1e-8)


def test_diagnostics_zero_drift():
    dec = build_decomposition(DriftSpec.zero(), 2048, n_modes=40)
    rep = spectral_diagnostics(dec, max_mode=32)
    assert rep.passed
    ratios = [r["sandwich_ratio"] for r in rep.records[1:]]
    np.testing.assert_allclose(ratios, 1.0, atol=1e-3)
    assert rep.to_csv().splitlines()[0] == "j,lambda,rayleigh_residual,sandwich_ratio"


@pytest.mark.parametrize("name", ["sin2pi", "const1", "mixed"])
def test_diagnostics_window(name, dec_cache):
    rep = spectral_diagnostics(dec_cache(TEST_DRIFTS[name], 512))
    assert rep.passed, rep.failures
    if name == "const1":
        assert rep.window[0] == pytest.approx(math.exp(-1), rel=1e-2)
        assert rep.window[1] == pytest.approx(math.e, rel=1e-2)


@pytest.mark.parametrize("name", list(TEST_DRIFTS))
def test_spectral_gap(name, dec_cache):
    dec = dec_cache(TEST_DRIFTS[name], 512)
    lo, _ = dec.density.ratio_window
    # discrete lambda_1 sits O(N^-2) above its continuum value
    assert dec.eigenvalues[1] <= -math.pi**2 * lo * (1 - 1e-5)


def test_refinement_order():
    spec = DriftSpec.from_sine(0.0, 1.0)
    l1, l2, l3 = (build_decomposition(spec, n, 9).eigenvalues for n in (256, 512, 1024))
    order = np.log2(np.abs(l1[1:] - l2[1:]) / np.abs(l2[1:] - l3[1:]))
    assert np.all(order >= 1.9)


@pytest.mark.parametrize("spec,limits", [
    (DriftSpec.zero(), (0.6, 1.1)),
    (DriftSpec.from_sine(0.0, 1.0), (0.6, 1.1)),
])
def test_sobolev_growth(spec, limits):
    rep = sobolev_growth_check(build_decomposition(spec, 1024, 64))
    assert rep.passed
    assert rep.slopes[1] <= limits[0] and rep.slopes[2] <= limits[1]
    if spec.is_zero:
        assert rep.slopes[1] == pytest.approx(0.5, abs=0.05)
        assert rep.slopes[2] == pytest.approx(1.0, abs=0.05)


def test_mode_count_truncation(dec_cache):
    dec = dec_cache(DriftSpec.from_sine(0.0, 1.0), 512)
    for t in (0.05, 0.25, 1.0):
        j = default_mode_count(dec, t)
        assert math.exp(dec.eigenvalues[j] * t) < 1e-14
        assert j <= 256
