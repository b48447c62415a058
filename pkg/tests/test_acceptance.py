"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Criteria 3-11 share one trained agent (median of ten runs on the default
synthetic profile).  Criterion 12 runs only when ``FLOWUAP_CICIDS_CSV`` names
one or more CICIDS2018 CSV files (comma separated, >= 50k rows in total).
"""

import os
import time
import zlib

import numpy as np
import pytest

from flowuap.constraints import apply_constraints
from flowuap.data import SynthConfig, get_profile, load_csv, prepare, synth_generate
from flowuap.dqn import TrainConfig, select_median_agent, train_many
from flowuap.losses import LossKind, batch_loss_and_grad
from flowuap.network import QNetwork, forward, td_loss, weight_gradients
from flowuap.sweep import MEAN_RUN, SweepConfig, clean_baseline, default_grid, run_sweep
from oracles import kink_free, ref_input_grad, rel_err, rf_identity_report

UAP_RUNS = 20
SLACK = 0.02
GRID = default_grid()
TOP2 = GRID[-2:]
TOP = GRID[-1]


def verdict(capsys, n, ok, detail):
    with capsys.disabled():
        print(f"\n{'PASS' if ok else 'FAIL'} criterion {n}: {detail}")
    assert ok, detail


# ---- shared fixtures

def _train_median(prep, cfg=TrainConfig()):
    t0 = time.perf_counter()
    reports = train_many(prep.balanced, cfg, prep.test, jobs=min(cfg.runs, os.cpu_count() or 1))
    return reports, select_median_agent(reports), time.perf_counter() - t0


@pytest.fixture(scope="module")
def synth_prep():
    return prepare(synth_generate(SynthConfig()), get_profile("cicids2018"), seed=0)


@pytest.fixture(scope="module")
def trained(synth_prep):
    return _train_median(synth_prep)


@pytest.fixture(scope="module")
def agent(trained):
    return trained[1].agent


def _cells(records):
    """(attack, loss, eps) -> mean record."""
    return {(r.attack, r.loss, r.epsilon): r for r in records if r.run == MEAN_RUN}


def _per_input(net, prep):
    return _cells(run_sweep(net, prep.balanced, prep.test, SweepConfig(grid=GRID, losses=(), runs=1)))


def _uap(net, prep, grid, losses, runs=UAP_RUNS):
    cfg = SweepConfig(grid=grid, attacks=(), losses=losses, runs=runs)
    return _cells(run_sweep(net, prep.balanced, prep.test, cfg))


@pytest.fixture(scope="module")
def per_input(agent, synth_prep):
    return _per_input(agent, synth_prep)


@pytest.fixture(scope="module")
def uap_cells(agent, synth_prep):
    cells = {}
    cells.update(_uap(agent, synth_prep, GRID, ("ce",)))
    cells.update(_uap(agent, synth_prep, (0.0, 0.002, 0.01), ("ce",)))
    cells.update(_uap(agent, synth_prep, (0.0, 0.002, 0.01) + TOP2, ("pcc_pertu",)))
    cells.update(_uap(agent, synth_prep, (0.0, TOP), ("pd_mean", "pd_l2", "cossim_l3", "cossim_l4")))
    return cells


# ---- criterion checks shared by the synthetic and real-data runs

def check_constraint_cost(cells):
    bad = []
    for eps in GRID[1:]:
        for m in ("fgsm", "bim"):
            c, u = cells[(m, "ce", eps)].fnr, cells[(f"{m}_unconstrained", "ce", eps)].fnr
            if not u >= c:
                bad.append(f"{m}@{eps}: unconstrained {u:.3f} < constrained {c:.3f}")
    gap = cells[("bim_unconstrained", "ce", TOP)].fnr - cells[("bim", "ce", TOP)].fnr
    ok = not bad and gap > 0
    return ok, f"BIM gap at eps={TOP}: {gap:.3f}; violations: {bad or 'none'}"


def check_bim_vs_fgsm(cells):
    bad, worst = [], np.inf
    for eps in GRID:
        for sfx in ("", "_unconstrained"):
            d = cells[("bim" + sfx, "ce", eps)].fnr - cells[("fgsm" + sfx, "ce", eps)].fnr
            worst = min(worst, d)
            if d < -SLACK:
                bad.append(f"{'unconstrained' if sfx else 'constrained'}@{eps}: {d:+.3f}")
    return not bad, f"min FNR(BIM)-FNR(FGSM) over grid {worst:+.3f}; violations: {bad or 'none'}"


def check_monotone(cells, losses):
    bad, parts = [], []
    for loss in losses:
        for col in ("fooling_rate", "fnr"):
            v = [getattr(cells[("uap", loss, e)], col) for e in (0.002, 0.01, 0.04)]
            parts.append(f"{loss} {col} " + "/".join(f"{x:.3f}" for x in v))
            if not (v[1] >= v[0] - SLACK and v[2] >= v[1] - SLACK):
                bad.append(f"{loss} {col}")
    return not bad, "; ".join(parts) + (f"; violations: {bad}" if bad else "")


# ---- criteria

def test_c01_gradient_correctness(capsys):
    t0 = time.perf_counter()
    rng = np.random.default_rng(zlib.crc32(b"acceptance-gradients"))
    worst, fixtures, skipped = 0.0, 0, 0
    for kind in LossKind:
        for _ in range(20):
            net = QNetwork.initialize(int(rng.integers(2**31)))
            for b in net.biases:
                b[:] = rng.normal(0, 0.1, b.shape)
            x = rng.random(76)
            delta = rng.uniform(-0.04, 0.04, 76)
            ev = batch_loss_and_grad(net, x, delta, kind)
            if ev.degenerate[0]:
                skipped += 1
                continue
            an = ev.grad[0]
            fd = ref_input_grad(net.weights, net.biases, x + delta, x, delta, kind.value)
            keep = kink_free(net.weights, net.biases, x + delta, 1e-4) & (np.abs(an) >= 1e-8)
            worst = max(worst, rel_err(an[keep], fd[keep]).max(initial=0.0))
            fixtures += 1
    h = 1e-4
    for _ in range(20):
        net = QNetwork.initialize(int(rng.integers(2**31)))
        x = rng.random(76)
        a, target = int(rng.integers(2)), float(rng.normal())
        grads = weight_gradients(net, x, a, target)
        params = net.parameters()
        for _ in range(10):
            t = int(rng.integers(len(params)))
            idx = tuple(int(rng.integers(s)) for s in params[t].shape)
            old = params[t][idx]
            params[t][idx] = old + h
            lp, zp = td_loss(net, x, a, target), forward(net, x).preacts
            params[t][idx] = old - h
            lm, zm = td_loss(net, x, a, target), forward(net, x).preacts
            params[t][idx] = old
            if any(((p > 0) != (m > 0)).any() for p, m in zip(zp[:-1], zm[:-1])):
                continue
            if abs(grads[t][idx]) >= 1e-8:
                worst = max(worst, float(rel_err(grads[t][idx], (lp - lm) / (2 * h))))
        fixtures += 1
    dt = time.perf_counter() - t0
    ok = fixtures >= 100 and worst < 1e-4 and dt < 30
    verdict(capsys, 1, ok, f"{fixtures} fixtures (6 losses + TD), max rel err {worst:.2e}, "
                           f"{skipped} degenerate skipped, {dt:.1f}s")


def test_c02_constraint_soundness(capsys, synth_prep):
    s = synth_prep.schema
    rng = np.random.default_rng(2)
    X = synth_prep.test.features[rng.integers(len(synth_prep.test), size=10_000)]
    # half the rows get attack-scale noise, half get large out-of-box noise
    scale = np.where(np.arange(len(X)) % 2 == 0, 0.04, 0.6)[:, None]
    P = X + rng.uniform(-1.0, 1.0, X.shape) * scale
    t0 = time.perf_counter()
    out = apply_constraints(X, P, s)
    again = apply_constraints(X, out, s)
    uf_ok = np.array_equal(out[:, s.groups.uf], X[:, s.groups.uf])
    box_ok = out.min() >= 0.0 and out.max() <= 1.0
    idem = np.array_equal(again, out)
    worst, clamped, bad = rf_identity_report(s, out)
    _, clamped_small, _ = rf_identity_report(s, out[::2])
    dt = time.perf_counter() - t0
    ok = uf_ok and box_ok and idem and bad == 0 and worst < 1e-6 and dt < 10
    verdict(capsys, 2, ok, f"UF identical {uf_ok}, in [0,1] {box_ok}, idempotent {idem}, "
                           f"RF identity max rel err {worst:.1e} ({bad} violations; "
                           f"{clamped} of {8 * len(X)} RF values clamped to the fitted range, {clamped_small} "
                           f"of them in the eps<=0.04 half), {dt:.1f}s")


def test_c03_clean_model_floor(capsys, synth_prep, trained):
    from sklearn.linear_model import LogisticRegression

    reports, best, dt = trained
    lr = LogisticRegression(max_iter=2000).fit(synth_prep.balanced.features, synth_prep.balanced.labels)
    lr_acc = lr.score(synth_prep.test.features, synth_prep.test.labels)
    accs = " ".join(f"{r.test_accuracy:.3f}" for r in reports)
    ok = len(reports) == 10 and best.test_accuracy >= 0.95 and dt < 300 and lr_acc > 0.9
    verdict(capsys, 3, ok, f"median agent (run {best.run_index}) test accuracy {best.test_accuracy:.4f}; "
                           f"runs [{accs}]; logistic-regression oracle {lr_acc:.4f}; {dt:.0f}s")


def test_c04_eps_zero_collapse(capsys, agent, synth_prep):
    base = clean_baseline(agent, synth_prep.test)
    recs = run_sweep(agent, synth_prep.balanced, synth_prep.test, SweepConfig(grid=(0.0,), runs=3))
    bad = [f"{r.attack}/{r.loss}/{r.run}" for r in recs
           if (r.tp, r.tn, r.fp, r.fn) != (base["tp"], base["tn"], base["fp"], base["fn"]) or r.fooling_rate != 0]
    verdict(capsys, 4, not bad, f"{len(recs)} eps=0 rows (4 per-input attacks, 6 UAP losses x 3 runs) "
                                f"all equal the clean confusion {base['tp'], base['tn'], base['fp'], base['fn']}"
            if not bad else f"mismatching rows: {bad}")


def test_c05_constraint_cost(capsys, per_input):
    verdict(capsys, 5, *check_constraint_cost(per_input))


def test_c06_bim_not_worse_than_fgsm(capsys, per_input):
    verdict(capsys, 6, *check_bim_vs_fgsm(per_input))


def test_c07_uap_eps_monotone(capsys, uap_cells):
    verdict(capsys, 7, *check_monotone(uap_cells, ("ce", "pcc_pertu")))


def test_c08_customized_uap_dominance(capsys, uap_cells):
    parts, ok = [], True
    for eps in TOP2:
        p, c = uap_cells[("uap", "pcc_pertu", eps)], uap_cells[("uap", "ce", eps)]
        ok &= p.fnr >= c.fnr - SLACK and p.pcc_pertu >= c.pcc_pertu - SLACK
        parts.append(f"eps={eps}: FNR pcc_pertu {p.fnr:.3f} vs ce {c.fnr:.3f}, "
                     f"PCC_pertu {p.pcc_pertu:.3f} vs {c.pcc_pertu:.3f}")
    verdict(capsys, 8, bool(ok), "; ".join(parts))


def test_c09_loss_tiers(capsys, uap_cells):
    f = {l: uap_cells[("uap", l, TOP)].fnr for l in ("pcc_pertu", "pd_mean", "pd_l2", "cossim_l3", "cossim_l4")}
    ok = all(f["pcc_pertu"] >= f[p] - SLACK for p in ("pd_mean", "pd_l2"))
    ok &= all(f[p] >= f[c] - SLACK for p in ("pd_mean", "pd_l2") for c in ("cossim_l3", "cossim_l4"))
    verdict(capsys, 9, ok, f"FNR at eps={TOP}: " + ", ".join(f"{k} {v:.3f}" for k, v in f.items()))


def test_c10_pcc_fooling_comovement(capsys, uap_cells):
    rows = [uap_cells[("uap", "ce", e)] for e in GRID]
    fr = np.array([r.fooling_rate for r in rows])
    r_pert = np.corrcoef([r.pcc_pertu for r in rows], fr)[0, 1]
    r_x = np.corrcoef([r.pcc_x for r in rows], fr)[0, 1]
    ok = bool(r_pert > 0 and r_x < 0)
    verdict(capsys, 10, ok, f"CE UAP over {len(GRID)} eps: corr(PCC_pertu, fooling) {r_pert:+.3f}, "
                            f"corr(PCC_x, fooling) {r_x:+.3f}")


def test_c11_sweep_determinism(capsys, agent, synth_prep, tmp_path):
    from flowuap.cli import main
    from flowuap.persist import save_dataset, save_network

    data = tmp_path / "data"
    for name in ("balanced", "test"):
        save_dataset(data / f"{name}.npz", getattr(synth_prep, name))
    save_network(tmp_path / "agent.npz", agent, synth_prep.schema.fingerprint)
    base = ["sweep", "--agent", str(tmp_path / "agent.npz"), "--data", str(data),
            "--grid", "0:0.04:5", "--runs", "2", "--seed", "11"]
    outs = []
    for tag, jobs in (("a", 1), ("b", 1), ("c", 8)):
        assert main(base + ["--jobs", str(jobs), "--out", str(tmp_path / tag / "m")]) == 0
        outs.append((tmp_path / tag / "m.csv").read_bytes())
    ok = outs[0] == outs[1] == outs[2]
    n_lines = outs[0].count(b"\n")
    verdict(capsys, 11, ok, f"metrics CSV ({len(outs[0])} bytes, {n_lines} lines) identical "
                            f"across two --jobs 1 runs and --jobs 8: {ok}")


def test_c12_real_data_subset(capsys):
    paths = os.environ.get("FLOWUAP_CICIDS_CSV")
    if not paths:
        with capsys.disabled():
            print("\nSKIP criterion 12: set FLOWUAP_CICIDS_CSV to a CICIDS2018 subset (>= 50k rows) to run")
        pytest.skip("no CICIDS2018 subset supplied")
    profile = get_profile(os.environ.get("FLOWUAP_CICIDS_PROFILE", "cicids2018"))
    raw = load_csv(paths.split(","), profile)
    if len(raw) < 50_000:
        with capsys.disabled():
            print(f"\nSKIP criterion 12: subset has {len(raw)} rows (< 50k)")
        pytest.skip("subset too small")
    prep = prepare(raw, profile, seed=0)
    _, best, _ = _train_median(prep)
    net = best.agent
    cells = _per_input(net, prep)
    cells.update(_uap(net, prep, (0.0, 0.002, 0.01, 0.04), ("ce", "pcc_pertu")))
    results = [check_constraint_cost(cells), check_bim_vs_fgsm(cells), check_monotone(cells, ("ce", "pcc_pertu"))]
    ok = best.test_accuracy >= 0.99 and all(r[0] for r in results)
    verdict(capsys, 12, ok, f"{len(raw)} rows; median accuracy {best.test_accuracy:.4f}; "
                            + "; ".join(f"c{n} {'ok' if r[0] else 'fails'}: {r[1]}" for n, r in zip((5, 6, 7), results)))
