"""Acceptance criteria, each run at its stated tolerance.

Every test records a one-line PASS/FAIL verdict (printed in the terminal
summary) and then asserts it. The reconstruction criteria drive the same
``run_experiment`` entry point as ``aet run`` and read back its artifacts.

Runtime is dominated by criteria 7 and 8 (sixteen reconstructions on the
1/64 mesh); expect about 80 minutes on one core.
"""
import json
import math
import time

import numpy as np
import pytest

from aet.experiment import EXIT_CONFIG, parse_config, run_experiment
from aet.io import read_vtk
from aet.mesh import generate_disk_mesh
from aet.metrics import rel_err_l1
from aet.operator import (
    adjoint_apply,
    derivative_apply,
    forward,
    inner_x,
    norm_x,
    norm_y,
    pairing_y,
)
from aet.penalty import PenaltySpec, tv_denoise
from aet.phantom import add_noise, currents_full, geometric_phantom
from aet.tpg import AlgoConfig, run

LEVELS = (0.08, 0.04, 0.02, 0.008)
REFERENCE_E_L1_8 = 0.11


def verdict(lines, k, ok, detail):
    line = f"C{k} {'PASS' if ok else 'FAIL'}: {detail}"
    lines.append(line)
    print(line)
    assert ok, line


# ---------------------------------------------------------------- helpers

_experiments = {}


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    return tmp_path_factory.mktemp("acceptance")


def experiment(workdir, name, text):
    """Run (once) the config ``text`` into ``workdir/name``.

    Returns
    -------
    code : int
    summaries : dict of level -> summary dict
    elapsed : float
        Wall time in seconds.
    """
    key = (name, text)
    if key not in _experiments:
        cfg = parse_config(text + f"\n[output]\ndirectory = {name}\n", base_dir=workdir)
        t0 = time.perf_counter()
        code = run_experiment(cfg)
        elapsed = time.perf_counter() - t0
        assert code != EXIT_CONFIG, f"{name}: experiment failed"
        summaries = {}
        for lvl in cfg.delta_levels:
            d = cfg.output if len(cfg.delta_levels) == 1 else cfg.output / f"delta_{lvl:g}"
            summaries[lvl] = json.loads((d / "summary.json").read_text())
        _experiments[key] = (code, summaries, elapsed, cfg.output)
    return _experiments[key]


def levels_text(levels):
    return ", ".join(f"{v:g}" for v in levels)


C5_CONFIG = """
[mesh]
coarse_h = 0.0625
[noise]
delta_e = 0.08
seed = 0
[penalty]
kind = L1
[algorithm]
mode = TPG
max_sweeps = 200
"""


def sweep_config(mode, kind, max_sweeps):
    return f"""
[noise]
delta_e = {levels_text(LEVELS)}
seed = 0
[penalty]
kind = {kind}
[algorithm]
mode = {mode}
max_sweeps = {max_sweeps}
"""


# ------------------------------------------------------ operator criteria

def test_c1_adjoint_identity(verdicts):
    t0 = time.perf_counter()
    mesh = generate_disk_mesh(0.5, 1 / 16)
    rng = np.random.default_rng(11)
    n, m = mesh.n_nodes, mesh.n_triangles
    sigma = 0.5 + rng.random(n)
    currents = currents_full()
    _, cache = forward(mesh, sigma, currents)
    worst = 0.0
    for j in range(10):
        i = j % len(currents)
        k, w = rng.standard_normal(n), rng.standard_normal(m)
        lhs = pairing_y(mesh, derivative_apply(mesh, sigma, cache, i, k), w)
        rhs = inner_x(mesh, k, adjoint_apply(mesh, sigma, cache, i, w))
        worst = max(worst, abs(lhs - rhs) / abs(lhs))
    dt = time.perf_counter() - t0
    verdict(verdicts, 1, worst <= 1e-8 and dt < 10,
            f"adjoint identity on {n} nodes, worst relative gap {worst:.2e} (<= 1e-8), {dt:.1f} s (< 10 s)")


def test_c2_taylor_remainder_order(verdicts):
    t0 = time.perf_counter()
    mesh = generate_disk_mesh(0.5, 1 / 16)
    rng = np.random.default_rng(12)
    n = mesh.n_nodes
    sigma = 1 + 0.5 * rng.random(n)
    currents = currents_full()
    H, cache = forward(mesh, sigma, currents)
    ts = np.array([1e-1, 1e-2, 1e-3, 1e-4])
    orders = []
    for j in range(5):
        i = j % len(currents)
        k = rng.standard_normal(n)
        d = derivative_apply(mesh, sigma, cache, i, k)
        rem = [norm_y(mesh, forward(mesh, sigma + t * k, [currents[i]])[0][0] - H[i] - t * d, 2.2)
               for t in ts]
        orders.append(np.polyfit(np.log(ts), np.log(rem), 1)[0])
    dt = time.perf_counter() - t0
    ok = all(1.8 <= o <= 2.2 for o in orders) and dt < 30
    verdict(verdicts, 2, ok, f"Taylor remainder orders {np.round(orders, 3).tolist()} (in [1.8, 2.2]), {dt:.1f} s")


def test_c3_forward_accuracy(verdicts):
    t0 = time.perf_counter()
    x1 = currents_full()[:1]
    errs = []
    for h in (1 / 16, 1 / 32):
        mesh = generate_disk_mesh(0.5, h)
        H, _ = forward(mesh, np.ones(mesh.n_nodes), x1)
        errs.append(float(np.abs(H[0] - 0.25).max()))
    ratio = errs[0] / errs[1]
    dt = time.perf_counter() - t0
    ok = errs[0] <= 1 / 16 and 1.6 <= ratio <= 2.4 and dt < 30
    verdict(verdicts, 3, ok, f"max |H - 1/4| = {errs[0]:.3e} at h=1/16, {errs[1]:.3e} at h=1/32, "
                             f"ratio {ratio:.3f} (required in [1.6, 2.4])")


def test_c4_noise_construction(verdicts):
    mesh = generate_disk_mesh(0.5, 1 / 16)
    H, _ = forward(mesh, geometric_phantom(mesh), currents_full())
    worst = 0.0
    for level in (0.08, 0.008):
        noisy, _ = add_noise(mesh, H, level, 2.2, rng=7)
        for y, yd in zip(H, noisy):
            worst = max(worst, abs(norm_y(mesh, yd - y, 2.2) / norm_y(mesh, y, 2.2) - level))
    verdict(verdicts, 4, worst <= 1e-12, f"largest |rel. noise - delta_e| = {worst:.1e} (<= 1e-12)")


# -------------------------------------------------- reconstruction criteria

@pytest.mark.slow
def test_c5_finite_stopping(verdicts, workdir):
    code, s, elapsed, _ = experiment(workdir, "c5", C5_CONFIG)
    s = s[0.08]
    ratios = s["final_residual_over_delta"]
    ok = s["converged"] and s["n_delta"] <= 200 and max(ratios) <= 1.05 and elapsed < 300
    verdict(verdicts, 5, ok,
            f"h=1/16, 8%: converged={s['converged']} n_delta={s['n_delta']} "
            f"final |r|/delta={np.round(ratios, 4).tolist()} (<= tau=1.05), {elapsed:.0f} s; "
            f"|H(sigma_true) - y_delta|/delta={np.round(s['truth_residual_over_delta'], 4).tolist()}")


@pytest.mark.slow
def test_c6_bregman_monotone(verdicts, workdir):
    _, s, _, _ = experiment(workdir, "c5", C5_CONFIG)
    b = np.array(s[0.08]["bregman"])
    inc = np.diff(b)
    worst = float(inc.max()) if inc.size else 0.0
    first = int(np.argmax(inc > 1e-10)) if (inc > 1e-10).any() else None
    verdict(verdicts, 6, worst <= 1e-10,
            f"largest sweep-to-sweep Bregman increase {worst:.3e} (slack 1e-10) over {b.size} sweeps"
            + (f", first increase at sweep {first + 1}" if first is not None else ""))


@pytest.mark.slow
def test_c7_acceleration(verdicts, workdir):
    _, tpg, t_a, _ = experiment(workdir, "c7_tpg", sweep_config("TPG", "L1", 500))
    _, lw, t_b, _ = experiment(workdir, "c7_lw", sweep_config("LANDWEBER", "L1", 500))
    rows = [(lvl, tpg[lvl]["n_delta"], lw[lvl]["n_delta"], tpg[lvl]["converged"], lw[lvl]["converged"])
            for lvl in LEVELS]
    ordered = all(a <= b for _, a, b, _, _ in rows)
    ratio = rows[-1][2] / rows[-1][1]
    minutes = (t_a + t_b) / 60
    ok = ordered and ratio >= 1.5 and minutes < 30
    table = ", ".join(f"{lvl:g}: {a}{'' if ca else '*'} vs {b}{'' if cb else '*'}"
                      for lvl, a, b, ca, cb in rows)
    verdict(verdicts, 7, ok, f"n_delta TPG vs Landweber [{table}] (* = hit max_sweeps), "
                             f"ratio at 0.8% {ratio:.2f} (>= 1.5), {minutes:.1f} min (< 30)")


@pytest.mark.slow
def test_c8_error_noise_monotone(verdicts, workdir):
    _, l1, _, _ = experiment(workdir, "c7_tpg", sweep_config("TPG", "L1", 500))
    _, tv, _, _ = experiment(workdir, "c8_tv", sweep_config("TPG", "TV", 500))
    parts, ok = [], True
    for name, runs in (("L1", l1), ("TV", tv)):
        e = [runs[lvl]["e_L1"] for lvl in LEVELS]
        p = [runs[lvl]["PSNR"] for lvl in LEVELS]
        p = [math.inf if v == "exact" else v for v in p]
        e_mono = all(a > b for a, b in zip(e, e[1:]))
        p_mono = all(a < b for a, b in zip(p, p[1:]))
        ok = ok and e_mono and p_mono
        parts.append(f"{name} e_L1 {np.round(e, 4).tolist()} (decreasing: {e_mono}) "
                     f"PSNR {np.round(p, 2).tolist()} (increasing: {p_mono})")
    # the 0.11 reference is a published L1-penalty result at 8%
    near = REFERENCE_E_L1_8 / 3 <= l1[0.08]["e_L1"] <= 3 * REFERENCE_E_L1_8
    ok = ok and near
    parts.append(f"L1 e_L1 at 8% within 3x of {REFERENCE_E_L1_8}: {near}")
    verdict(verdicts, 8, ok, "; ".join(parts))


def test_c9_tv_prox_oracle(verdicts, tiny_mesh):
    t0 = time.perf_counter()
    mesh = tiny_mesh
    n = mesh.n_nodes
    # independent dense P1 gradient and lumped mass
    tri, xy = mesh.triangles, mesh.nodes
    G = np.zeros((2 * len(tri), n))
    area = np.zeros(len(tri))
    for t, (a, b, c) in enumerate(tri):
        P = np.array([[1.0, *xy[a]], [1.0, *xy[b]], [1.0, *xy[c]]])
        area[t] = abs(np.linalg.det(P)) / 2
        coef = np.linalg.inv(P)  # column j holds (c0, gx, gy) of hat j
        G[2 * t, [a, b, c]] = coef[1]
        G[2 * t + 1, [a, b, c]] = coef[2]
    mass = np.zeros(n)
    np.add.at(mass, tri.ravel(), np.repeat(area / 3, 3))
    B = np.repeat(area, 2)[:, None] * G

    rng = np.random.default_rng(9)
    g = geometric_phantom(mesh) + 0.3 * rng.standard_normal(n)
    worst = 0.0
    for beta in (0.01, 0.05):
        L = beta**2 * np.linalg.eigvalsh((B / mass) @ B.T).max()
        p = np.zeros(2 * len(tri))
        for _ in range(1_000_000):
            z = g - beta * (B.T @ p) / mass
            p = p + (beta / L) * (B @ z)
            p2 = p.reshape(-1, 2)
            p2 /= np.maximum(np.hypot(p2[:, 0], p2[:, 1]), 1.0)[:, None]
        z_oracle = g - beta * (B.T @ p) / mass
        z = tv_denoise(mesh, g, beta, tol=1e-10, max_iter=1_000_000)
        worst = max(worst, norm_x(mesh, z - z_oracle))
    const = np.full(n, 1.7)
    exact = np.array_equal(tv_denoise(mesh, const, 0.05), const)
    dt = time.perf_counter() - t0
    verdict(verdicts, 9, worst <= 1e-4 and exact and dt < 120,
            f"|z - z_oracle|_X = {worst:.2e} (<= 1e-4) on {n} nodes, constants exact: {exact}, {dt:.0f} s")


def test_c10_noise_free_decay(verdicts):
    mesh = generate_disk_mesh(0.5, 1 / 32)
    sigma_true = geometric_phantom(mesh)
    currents = currents_full()
    H, _ = forward(mesh, sigma_true, currents)
    res = run(mesh, currents, H, AlgoConfig(max_sweeps=51), PenaltySpec("L1"), 0.0)
    R = [s.R for s in res.sweeps]
    verdict(verdicts, 10, R[50] <= 1e-2 * R[0],
            f"exact data: R_0 = {R[0]:.4e}, R_50 = {R[50]:.4e}, ratio {R[50] / R[0]:.2e} (<= 1e-2)")


@pytest.mark.slow
def test_c11_limited_angle(verdicts, workdir):
    text = f"""
[currents]
family = limited
alpha = {math.pi!r}
[noise]
delta_e = 0.02
seed = 0
[penalty]
kind = L1
[algorithm]
max_sweeps = 300
"""
    _, s, _, out = experiment(workdir, "c11", text)
    mesh, rec, _ = read_vtk(out / "sigma_rec.vtk")
    _, true, _ = read_vtk(out / "sigma_true.vtk")
    y = mesh.nodes[:, 1]
    e_obs = rel_err_l1(mesh, rec["sigma_rec"], true["sigma_true"], mask=y > 0)
    e_occ = rel_err_l1(mesh, rec["sigma_rec"], true["sigma_true"], mask=y < 0)
    verdict(verdicts, 11, e_obs <= 0.8 * e_occ,
            f"alpha=pi, 2%: e_L1 observed half {e_obs:.4f}, occluded half {e_occ:.4f}, "
            f"ratio {e_obs / e_occ:.3f} (<= 0.8); n_delta={s[0.02]['n_delta']} converged={s[0.02]['converged']}")


@pytest.mark.slow
def test_c12_determinism(verdicts, workdir):
    _, _, _, out_a = experiment(workdir, "c5", C5_CONFIG)
    _, _, _, out_b = experiment(workdir, "c12_repeat", C5_CONFIG)

    def stripped(path):
        d = json.loads((path / "summary.json").read_text())
        d.pop("timings")
        return json.dumps(d, indent=2, sort_keys=True).encode()

    same_summary = stripped(out_a) == stripped(out_b)
    same_files = all((out_a / f).read_bytes() == (out_b / f).read_bytes()
                     for f in ("residuals.csv", "sigma_rec.vtk"))
    verdict(verdicts, 12, same_summary and same_files,
            f"repeated criterion-5 run: summary identical without timings: {same_summary}, "
            f"residuals.csv and sigma_rec.vtk identical: {same_files}")
