"""Acceptance suite: one test and one summary line per criterion.

Criteria 6 and 7 run the full desk case (2000 paths) and take roughly
twenty minutes on one core.
"""
import json
import math
import time

import numpy as np
import pytest
from scipy.special import jn_zeros

from eddyheat.cli import main
from eddyheat.eigen import RadialProblem, principal_eigenvalue, radial_lambda, theorem_bounds
from eddyheat.elliptic import DiffusivityTensor, assemble_diffusion
from eddyheat.grid import build_grid
from eddyheat.harness import ExperimentConfig, ito_refinement_study, run_decay, run_noise_sweep, run_theorem1
from eddyheat.kraichnan import (
    KraichnanParams,
    covariance_at,
    epsQ_upper_bound,
    q_lower_bound,
    torus_cross_check,
)

KAPPA = 1e-2
J01_SQ = jn_zeros(0, 1)[0] ** 2


def test_criterion_01_eigenvalue_oracles(record):
    sq = build_grid("square", 1 / 128)
    lam_sq = principal_eigenvalue(assemble_diffusion(sq, DiffusivityTensor(KAPPA))).lam
    err_sq = lam_sq / (KAPPA * 2 * math.pi**2) - 1
    disk = build_grid("disk", 1 / 128)
    lam_disk = principal_eigenvalue(assemble_diffusion(disk, DiffusivityTensor(KAPPA))).lam
    oracle = radial_lambda(RadialProblem(KAPPA, 0.0, 0.1, 2, 4096)).lam
    err_disk = lam_disk / oracle - 1
    ok = abs(err_sq) <= 0.01 and abs(err_disk) <= 0.02 and abs(oracle / (KAPPA * J01_SQ) - 1) < 1e-3
    record(1, ok, f"square rel err {err_sq:+.2e} (tol 1e-2), disk rel err {err_disk:+.2e} (tol 2e-2)")
    assert ok


def test_criterion_02_radial_bounds(record):
    sigma2 = np.logspace(-2, 4, 10)
    deltas = np.geomspace(1e-3, 0.5, 10)
    worst = np.inf
    for s2 in sigma2:
        for dl in deltas:
            lam = radial_lambda(RadialProblem(KAPPA, s2, dl, 2, 4096)).lam
            b = theorem_bounds(KAPPA, s2, dl, 2)
            worst = min(worst, lam - b["bound_asym"] + 1e-6, lam - b["bound_min"] + 1e-6)
    ok = worst >= 0
    record(2, ok, f"100 points, min(lambda - bound + 1e-6) = {worst:.3e}")
    assert ok


def test_criterion_03_eigenvalue_trend(record):
    lams = [radial_lambda(RadialProblem(KAPPA, 4.0**n, 2.0**-n, 2, 8192)).lam for n in range(1, 9)]
    ratios = [lam / (KAPPA * J01_SQ) for lam in lams]
    increasing = all(b > a for a, b in zip(lams, lams[1:]))
    ok = increasing and ratios[-1] >= 100
    record(3, ok, f"increasing={increasing}, ratio at n=8 {ratios[-1]:.2f} (needs >= 100); "
                  f"ratios {', '.join(f'{r:.1f}' for r in ratios)}")
    assert ok


def test_criterion_04_vortex_noise_estimates(record):
    rep = run_noise_sweep((200, 400), M=30, delta=0.1)
    rows = {r["N"]: r for r in rep["rows"]}
    same = all(r["same_class_max_abs"] == 0.0 for r in rows.values())
    eps_ok = all(r["eps_Q"] <= r["eps_bound"] for r in rows.values())
    past = [r for r in rows.values() if r["past_threshold"]]
    q_ok = bool(past) and all(r["min_q"] >= r["stated_floor"] for r in past)
    log_ok = rep["checks"]["log_growth"]
    C = rep["norm_w_sq_log_fit"]["C"]
    ok = len(rows) == 2 and same and eps_ok and q_ok and log_ok
    record(4, ok, f"(a) {same} (b) {eps_ok} (c) {q_ok} for N={[r['N'] for r in past]} (d) {log_ok}, fitted C={C:.4f}")
    assert ok


def test_criterion_05_ito_corrector(record):
    study = ito_refinement_study((1 / 32, 1 / 64, 1 / 128))
    orders = study["observed_orders"]
    final = study["rows"][-1]["max_abs_residual"]
    ok = all(o >= 1.7 for o in orders) and final < 1e-2
    record(5, ok, f"observed orders {', '.join(f'{o:.2f}' for o in orders)}, residual at h=1/128 {final:.2e}")
    assert ok


@pytest.fixture(scope="module")
def desk_case():
    t0 = time.perf_counter()
    rep = run_theorem1(ExperimentConfig())
    rep.pop("_ensemble")
    return rep, time.perf_counter() - t0


def test_criterion_06_theorem1_desk_case(record, desk_case):
    rep, seconds = desk_case
    tol = rep["scheme_tol"]
    cks = rep["checkpoints"]
    ok = all(c["lhs_upper95"] <= c["rhs"] * (1 + tol) for c in cks) and seconds < 1800
    worst = max(c["lhs_upper95"] / c["rhs"] for c in cks)
    record(6, ok, f"max upper95/rhs {worst:.3e}, scheme_tol {tol:.2e}, runtime {seconds / 60:.1f} min")
    assert ok


def test_criterion_07_energy_inequality_desk_case(record, desk_case):
    rep, _ = desk_case
    e = rep["energy"]
    ok = e["violations"] == 0 and e["ratio_max"] <= 1 + e["tol"]
    record(7, ok, f"violations {e['violations']}, max E(t_end)/bound {e['ratio_max']:.4f}, tol {e['tol']:.2e}")
    assert ok


def test_criterion_08_enhanced_decay(record):
    rep = run_decay(ExperimentConfig(), stochastic=False)
    eff = rep["effective"]
    ok = rep["sigma2_equivalent"] >= 10 * KAPPA * (1 - 1e-9) and eff["enhancement"] >= 2 and eff["rate_rel_error"] <= 0.10
    record(8, ok, f"sigma2-equivalent {rep['sigma2_equivalent']:.3g}, enhancement {eff['enhancement']:.3f} (>= 2), "
                  f"rate vs eigenvalue {eff['rate_rel_error']:.2%} (<= 10%)")
    assert ok


SHELLS = [(-2.0, 1.0, 16.0), (0.0, 1.0, 16.0), (1.0, 1.0, 16.0), (4 / 3, 2.0, 32.0), (2.0, 1.0, 8.0)]


def _closed_form_origin(p):
    radial = math.log(p.k1 / p.k0) if p.zeta == 0 else (1 - (p.k0 / p.k1) ** p.zeta) / p.zeta
    return p.sigma2 * math.pi * radial * np.eye(2)


def test_criterion_09_kraichnan(record):
    worst_rel, eps_ok, q_ok = 0.0, True, True
    for zeta, k0, k1 in SHELLS:
        p = KraichnanParams(1.0, zeta, k0, k1)
        Q0 = covariance_at(p, np.zeros(2))
        ref = _closed_form_origin(p)
        worst_rel = max(worst_rel, float(np.abs(Q0 - ref).max() / np.abs(ref).max()))
        eps_ok &= torus_cross_check(p)["top_eigenvalue"] <= epsQ_upper_bound(p) * (1 + 1e-9)
        q_ok &= q_lower_bound(p) <= np.linalg.eigvalsh(Q0)[0]
    ok = worst_rel <= 1e-6 and eps_ok and q_ok
    record(9, ok, f"max rel err at origin {worst_rel:.1e}, eps bound holds {eps_ok}, q bound holds {q_ok}")
    assert ok


def test_criterion_10_reproducibility(record, tmp_path):
    cfg = tmp_path / "desk.cfg"
    cfg.write_text("paths = 20\ndt_study_paths = 8\nchunk_paths = 10\n")
    codes = [main(["theorem1", "--config", str(cfg), "--out", str(tmp_path / d), "--seed", "7"]) for d in ("a", "b")]
    a = (tmp_path / "a" / "report.json").read_bytes()
    b = (tmp_path / "b" / "report.json").read_bytes()
    same = a == b
    ok = same and codes[0] == codes[1] and json.loads(a)["config"]["seed"] == 7
    record(10, ok, f"byte-identical report.json: {same} ({len(a)} bytes), exit codes {codes}")
    assert ok
