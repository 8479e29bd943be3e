"""Acceptance suite: one test per criterion, each recording a PASS/FAIL line."""

import json
import math

import numpy as np
import pytest

from difflan.cli import COMMANDS, main
from difflan.kernel import heat_kernel, kernel_identity_checks, semigroup_apply
from difflan.lanlab import clt_check, lan_experiment
from difflan.model import DriftSpec
from difflan.parabolic import (
    cn_solve,
    derivative_limit_gap,
    phi_delta,
    remainder_recursion,
    taylor_order_study,
)
from difflan.score import derivative_field, derivative_field_quadrature, density_fd_oracle, score_field
from difflan.sim import RngStream, occupation_chi_square, simulate_reflected
from difflan.spectral import build_decomposition, richardson_eigenvalues, spectral_diagnostics

from conftest import ACCEPTANCE, PAIRS, TEST_DRIFTS

SUB = np.arange(8, 512, 16)  # 32 x 32 evaluation grid on N = 512
PB, PH, PY = DriftSpec.from_sine(0.0, 1.0), DriftSpec.from_sine(1.0), 0.3
LAN_SEED, CLT_SEED, EULER_SEED = 20240501, 20240502, 2024


def record(key, title, ok, detail):
    ACCEPTANCE[key] = (bool(ok), title, detail)
    print(f"criterion {key} {'PASS' if ok else 'FAIL'}: {title} ({detail})")
    return bool(ok)


@pytest.fixture(scope="module")
def dec0():
    return build_decomposition(DriftSpec.zero(), 512)


@pytest.fixture(scope="module")
def stack(dec0):
    return remainder_recursion(PB, PH, PY, 0.05, 2, 0.5, dec0=dec0)


def test_criterion_01_spectrum_exactness():
    lam = richardson_eigenvalues(DriftSpec.zero(), 2048, 17)
    j = np.arange(1, 17)
    rel = float(np.max(np.abs(lam[1:] / (-(j * math.pi) ** 2) - 1)))
    u0 = build_decomposition(DriftSpec.zero(), 2048, 2).vectors[:, 0]
    ok = rel < 1e-4 and abs(lam[0]) < 1e-9 and np.max(np.abs(u0 - 1)) < 1e-9
    assert record("1", "spectrum exactness", ok, f"max rel err {rel:.2e}, lambda_0 {lam[0]:.1e}")


def test_criterion_02_eigenvalue_sandwich():
    worst = []
    for name, spec in TEST_DRIFTS.items():
        dec = build_decomposition(spec, 2048, 33)
        rep = spectral_diagnostics(dec, max_mode=32, tol=0.01, residual_tol=np.inf)
        worst.append((name, rep.passed))
    ok = all(p for _, p in worst)
    assert record("2", "eigenvalue sandwich", ok, ", ".join(f"{n}={'ok' if p else 'out'}" for n, p in worst))


def test_criterion_03_kernel_identities():
    defects = {}
    for name, spec in TEST_DRIFTS.items():
        rep = kernel_identity_checks(build_decomposition(spec, 512), [0.25])
        defects[name] = max(rep.max_mass_defect, rep.max_balance_defect, rep.max_ck_defect)
    ok = max(defects.values()) < 1e-7
    assert record("3", "kernel identities", ok, f"max defect {max(defects.values()):.1e}")


def test_criterion_04_derivative_oracles():
    errs = []
    for name, (b, h) in PAIRS.items():
        dec = build_decomposition(b, 512)
        d = derivative_field(dec, h, 0.5)[np.ix_(SUB, SUB)]
        scale = np.max(np.abs(d))
        q = derivative_field_quadrature(dec, h, 0.5, 32)[np.ix_(SUB, SUB)]
        fd = density_fd_oracle(b, h, 0.5, 1e-3)[np.ix_(SUB, SUB)]
        errs.append((np.max(np.abs(d - q)) / scale, np.max(np.abs(d - fd)) / scale))
    eq, ef = max(e[0] for e in errs), max(e[1] for e in errs)
    ok = len(errs) >= 3 and eq < 1e-6 and ef < 1e-3
    assert record("4", "drift-derivative oracle equivalence", ok, f"{len(errs)} pairs, quad {eq:.1e}, fd {ef:.1e}")


def test_criterion_05_martingale_centering():
    worst = max(
        score_field(build_decomposition(b, 512), h, 0.5).centering_defect() for b, h in PAIRS.values()
    )
    assert record("5", "martingale centering", worst < 1e-6, f"sup defect {worst:.1e}")


def test_criterion_06a_cn_vs_spectral(dec0):
    rels = []
    for spec in (DriftSpec.zero(), PB, DriftSpec.from_sine(0.5, 0.0, 0.25)):
        phi = phi_delta(PY, 0.05, dec0)
        u = cn_solve(spec, phi, None, 0.5, 2048).final
        ref = semigroup_apply(build_decomposition(spec, 512), 0.5, phi)
        rels.append(np.max(np.abs(u - ref)) / np.max(np.abs(ref)))
    ok = max(rels) < 1e-4
    assert record("6.a", "Crank-Nicolson vs spectral semigroup", ok, f"max rel {max(rels):.1e}")


def test_criterion_06b_delta_limit(dec0):
    dec = build_decomposition(PB, 512)
    col = int(np.argmin(np.abs(dec.grid.nodes - PY)))
    ref = derivative_field(dec, PH, 0.5)[:, col]
    gaps = [
        derivative_limit_gap(remainder_recursion(PB, PH, PY, d, 1, 0.5, dec0=dec0), ref)
        for d in (0.2, 0.1, 0.05)
    ]
    monotone = gaps[0] > gaps[1] > gaps[2]
    ok = monotone and gaps[-1] < 1e-2
    detail = "gaps " + ", ".join(f"{g:.3f}" for g in gaps) + f" at delta 0.2/0.1/0.05, monotone={monotone}"
    assert record("6.b", "v_1 delta-limit vs derivative field", ok, detail)


def test_criterion_07_homogeneity_telescoping(stack, dec0):
    worst = 0.0
    for eta in (0.5, 0.25):
        s = remainder_recursion(PB, eta * PH, PY, 0.05, 2, 0.5, dec0=dec0)
        for k in range(3):
            worst = max(worst, float(np.max(np.abs(s.terms[k][-1] - eta**k * stack.terms[k][-1]))))
    tel = stack.telescoping_defect()
    ok = worst < 1e-8 and tel < 1e-10
    assert record("7", "homogeneity and telescoping", ok, f"homogeneity {worst:.1e}, telescoping {tel:.1e}")


def test_criterion_08_taylor_order(stack, dec0):
    slopes = [taylor_order_study(PB, PH, PY, 0.05, k, stack=stack, dec0=dec0) for k in range(3)]
    ok = all(r.passed and r.slope >= r.k + 0.2 for r in slopes)
    detail = ", ".join(f"k={r.k}: {r.slope:.2f}" for r in slopes)
    assert record("8", "Taylor remainder order", ok, detail)


def test_criterion_09_lan_remainder_decay():
    reps = lan_experiment(DriftSpec.zero(), DriftSpec.from_sine(0.5), 0.5, [100, 400, 1600], 200, LAN_SEED)
    med = [r.summary()["median_abs_remainder"] for r in reps]
    ok = med[0] > med[1] > med[2] and med[2] < 0.05
    assert record("9", "LAN remainder decay", ok, "medians " + ", ".join(f"{m:.4f}" for m in med))


def test_criterion_10_clt():
    (rep,) = lan_experiment(DriftSpec.zero(), DriftSpec.from_sine(0.5), 0.5, [500], 1000, CLT_SEED)
    clt = clt_check(rep)
    ok = clt.ks_distance < 1.63 / math.sqrt(1000) and 0.9 <= clt.variance_ratio <= 1.1
    assert record("10", "CLT", ok, f"KS {clt.ks_distance:.4f} < {clt.ks_critical:.4f}, var ratio {clt.variance_ratio:.3f}")


def test_criterion_11_simulator_physics():
    out = []
    for i, (name, spec) in enumerate(TEST_DRIFTS.items()):
        path = simulate_reflected(spec, 0.5, 2000.0, 1e-3, RngStream(EULER_SEED, i))
        chi = occupation_chi_square(path, spec)
        contained = bool(np.all((path.states >= 0.0) & (path.states <= 1.0)))
        out.append((name, chi, contained))
    ok = all(c.passed and inside for _, c, inside in out)
    detail = ", ".join(f"{n} {c.statistic:.1f}" for n, c, _ in out) + f" (critical {out[0][1].critical:.1f})"
    assert record("11", "simulator physics", ok, detail)


def test_criterion_12_determinism(tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({}))
    mismatched = []
    for command in sorted(COMMANDS):
        runs = []
        for tag in ("a", "b"):
            out = tmp_path / f"{command}-{tag}"
            main([command, str(cfg), "--out", str(out)])
            runs.append({p.name: p.read_bytes() for p in sorted(out.iterdir())})
        if runs[0] != runs[1] or "report.json" not in runs[0]:
            mismatched.append(command)
    ok = not mismatched
    assert record("12", "determinism", ok, f"{len(COMMANDS)} subcommands, mismatched: {mismatched or 'none'}")
