"""Acceptance criteria, one test each.

Every test stores ``(passed, detail)`` in ``conftest.ACCEPTANCE`` before it
asserts, and the terminal summary prints one PASS/FAIL line per criterion.
The desk-scale criteria (4-8, 10) share one trained model and cached runs.
"""
import itertools
import subprocess
import sys
import time
from dataclasses import replace

import numpy as np
import pytest

from conftest import ACCEPTANCE, small_model
from scpattack import harness
from scpattack.attack import AttackConfig
from scpattack.classifier import LossSpec
from scpattack.metrics import chamfer, emd, hausdorff
from scpattack.pointset import load_manifest
from scpattack.schur import CholeskyState, assemble_block, schur_surplus, symmetrize
from scpattack.selection import SelectionConfig, select_full_hessian, select_greedy

pytestmark = pytest.mark.acceptance

CW = LossSpec("cw_margin")
NCE = LossSpec("neg_cross_entropy")


def record(n, ok, detail):
    ACCEPTANCE[n] = (bool(ok), detail)
    print(f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}")
    assert ok, detail


# -- 1-3, 9: numerical oracles ------------------------------------------------

def _fd_grad(m, pts, y, spec, h=1e-5):
    g = np.zeros_like(pts)
    for i in range(len(pts)):
        for d in range(3):
            e = np.zeros_like(pts)
            e[i, d] = h
            g[i, d] = (m.loss(pts + e, y, spec) - m.loss(pts - e, y, spec)) / (2 * h)
    return g


def test_criterion_1_gradient():
    t0 = time.perf_counter()
    rng = np.random.default_rng(100)
    worst = 0.0
    for t in range(20):
        m = small_model(("tanh", "softplus")[t % 2], seed=t)
        pts = rng.normal(size=(16, 3))
        y = int(rng.integers(m.num_classes))
        spec = (CW, NCE)[t // 2 % 2]
        g = m.grad(pts, y, spec)
        fd = _fd_grad(m, pts, y, spec)
        worst = max(worst, np.linalg.norm(g - fd) / max(np.linalg.norm(fd), 1e-12))
    secs = time.perf_counter() - t0
    record(1, worst < 1e-4 and secs < 5, f"max relative error {worst:.2e} (< 1e-4), {secs:.2f}s (< 5s)")


def _dense_fd_hessian(m, pts, y, spec, h=1e-3):
    x0 = pts.reshape(-1)
    n = x0.size
    f = lambda x: m.loss(x.reshape(-1, 3), y, spec)
    H = np.zeros((n, n))
    for i in range(n):
        for j in range(i, n):
            ei, ej = np.zeros(n), np.zeros(n)
            ei[i] = ej[j] = h
            H[i, j] = H[j, i] = (f(x0 + ei + ej) - f(x0 + ei - ej) - f(x0 - ei + ej) + f(x0 - ei - ej)) / (4 * h * h)
    return H


def test_criterion_2_hvp_symmetry_and_blocks():
    t0 = time.perf_counter()
    rng = np.random.default_rng(200)
    sym = 0.0
    for t in range(50):
        m = small_model(("tanh", "softplus")[t % 2], seed=t)
        pts = rng.normal(size=(12, 3))
        y = int(np.argmax(m.logits(pts)))
        spec = (CW, NCE)[t // 2 % 2]
        u, v = rng.normal(size=pts.shape), rng.normal(size=pts.shape)
        hu, hv = m.hvp(pts, y, spec, u), m.hvp(pts, y, spec, v)
        scale = max(np.linalg.norm(u) * np.linalg.norm(hv), np.linalg.norm(v) * np.linalg.norm(hu), 1e-12)
        sym = max(sym, abs((u * hv).sum() - (v * hu).sum()) / scale)
    block = 0.0
    for t in range(6):
        m = small_model(("tanh", "softplus")[t % 2], seed=50 + t, point_dims=(3, 6, 10), head_dims=(6,))
        n = 4 + t % 5  # 4..8 points
        pts = rng.normal(size=(n, 3))
        y = int(np.argmax(m.logits(pts)))
        spec = (NCE, CW)[t % 2]
        H = _dense_fd_hessian(m, pts, y, spec)
        idx = sorted(rng.choice(n, size=3, replace=False).tolist())
        rows = np.concatenate([np.arange(3 * i, 3 * i + 3) for i in idx])
        blk = assemble_block(m, pts, y, spec, idx).matrix
        block = max(block, np.abs(blk - H[np.ix_(rows, rows)]).max())
    secs = time.perf_counter() - t0
    ok = sym < 1e-5 and block < 1e-3 and secs < 30
    record(2, ok, f"symmetry error {sym:.2e} (< 1e-5), block vs dense FD {block:.2e} (< 1e-3), {secs:.1f}s (< 30s)")


def test_criterion_3_schur_identity():
    t0 = time.perf_counter()
    rng = np.random.default_rng(300)
    bad = 0
    for trial in range(100):
        t = int(rng.integers(3, 13))
        a = rng.normal(size=(t, t))
        A = a @ a.T + 0.1 * np.eye(t)
        B = rng.normal(size=(t, 3))
        base = B.T @ np.linalg.solve(A, B)
        # shift the complement around zero so both signs, and near-boundary cases, occur
        C = symmetrize(base + rng.normal(scale=(1.0, 1e-3)[trial % 2], size=(3, 3)))
        lam = np.linalg.eigvalsh(np.block([[A, B], [B.T, C]]))[0]
        s = schur_surplus(CholeskyState.from_matrix(A), B, C)
        if abs(lam) <= 1e-8 or abs(s) <= 1e-8:
            continue  # inside the eigen tolerance both answers are acceptable
        bad += (lam > 0) != (s > 0)
    secs = time.perf_counter() - t0
    record(3, bad == 0 and secs < 5, f"{bad} disagreements in 100 extensions, {secs:.2f}s (< 5s)")


def test_criterion_9_metric_oracles():
    rng = np.random.default_rng(900)
    err = 0.0
    for _ in range(100):
        p = rng.normal(size=(int(rng.integers(1, 65)), 3))
        q = rng.normal(size=(int(rng.integers(1, 65)), 3))
        d = np.array([[np.sum((x - y) ** 2) for y in q] for x in p])
        cd = 0.5 * (d.min(axis=1).mean() + d.min(axis=0).mean())
        hd = np.sqrt(d.min(axis=1).max())
        err = max(err, abs(chamfer(p, q) - cd), abs(hausdorff(p, q) - hd))
    perms = np.array(list(itertools.permutations(range(8))))
    emd_err = 0.0
    for _ in range(50):
        p, q = rng.normal(size=(8, 3)), rng.normal(size=(8, 3))
        cost = np.array([[np.linalg.norm(x - y) for y in q] for x in p])
        emd_err = max(emd_err, abs(emd(p, q) - cost[np.arange(8), perms].sum(axis=1).min() / 8))
    same = rng.normal(size=(30, 3))
    shuffled = same[rng.permutation(30)]
    ident = [chamfer(same, same), hausdorff(same, same), emd(same, same), emd(same, shuffled),
             chamfer(same, shuffled), hausdorff(shuffled, same)]
    ok = err < 1e-9 and emd_err < 1e-9 and all(v == 0.0 for v in ident)
    record(9, ok, f"CD/HD error {err:.1e}, EMD error {emd_err:.1e} (< 1e-9), identities exact: "
                  f"{all(v == 0.0 for v in ident)}")


# -- desk-scale runs -----------------------------------------------------------

def desk_config(desk_data, path, out, **sel):
    return harness.RunConfig(desk_data, path, SelectionConfig(**sel), AttackConfig(), 1, None, str(out))


@pytest.fixture(scope="module")
def runs(desk_trained, desk_data, tmp_path_factory):
    """Lazily computed desk runs shared by criteria 4-8."""
    _, _, path = desk_trained
    root = tmp_path_factory.mktemp("acceptance")
    cache = {}

    def get(name, limit, **sel):
        if name not in cache:
            cfg = replace(desk_config(desk_data, path, root / name, **sel), limit=limit)
            t0 = time.perf_counter()
            records, row = harness.run_attack(cfg, method=name, figures=False)
            cache[name] = (records, row, time.perf_counter() - t0, root / name / "results.jsonl")
        return cache[name]

    return get


def test_criterion_4_desk_attack(desk_trained, runs):
    _, report, _ = desk_trained
    records, row, secs, _ = runs("greedy", 100, mode="greedy_schur", t_max=64)
    ok = (report.test_accuracy >= 0.90 and len(records) == 100 and row.asr == 100.0 and row.points <= 64
          and secs < 1800)
    record(4, ok, f"test accuracy {report.test_accuracy:.3f} (>= 0.90), ASR {row.asr:.1f}% on {len(records)} "
                  f"samples (= 100%), mean #Points {row.points:.1f} (<= 64), {secs:.0f}s (< 1800s)")


def test_criterion_5_greedy_vs_random(runs):
    _, g, _, _ = runs("greedy", 100, mode="greedy_schur", t_max=64)
    recs, r, _, _ = runs("random", 100, mode="random", t_max=64)
    # a tie in ASR at any level is settled by mean CD, so greedy has to win outright on one of the two
    ok = len(recs) >= 50 and (g.asr > r.asr or (g.asr == r.asr and g.cd < r.cd))
    record(5, ok, f"greedy ASR {g.asr:.1f}% CD {g.cd:.3e} vs random ASR {r.asr:.1f}% CD {r.cd:.3e} "
                  f"on {len(recs)} paired samples")


def test_criterion_6_full_hessian_oracle(desk_trained, desk_data):
    model, _, _ = desk_trained
    clouds = harness.pick_samples(model, load_manifest(desk_data), 20)
    sel = SelectionConfig(k=128, t_max=64)
    acfg = AttackConfig()
    t_greedy = t_full = 0.0
    close = 0
    rows = {}
    for mode in ("greedy_schur", "full_hessian"):
        recs = []
        for c in clouds:
            rec, _ = harness.attack_one(model, c, sel.with_(mode=mode), acfg)
            recs.append(rec)
        rows[mode] = (harness.report_row(mode, recs), recs)
    for c in clouds:
        t0 = time.perf_counter()
        g = select_greedy(model, c, c.label, acfg.loss, sel)
        t_greedy += time.perf_counter() - t0
        t0 = time.perf_counter()
        f = select_full_hessian(model, c, c.label, acfg.loss, sel.with_(mode="full_hessian"))
        t_full += time.perf_counter() - t0
        close += abs(len(g) - len(f)) <= 2
    g, f = rows["greedy_schur"][0], rows["full_hessian"][0]
    rel = lambda a, b: abs(a - b) / max(abs(b), 1e-12)
    frac = close / len(clouds)
    speed = t_full / max(t_greedy, 1e-12)
    ok = (len(clouds) >= 20 and frac >= 0.8 and rel(g.cd, f.cd) <= 0.1 and rel(g.hd, f.hd) <= 0.1
          and speed >= 3)
    record(6, ok, f"|t_g - t_f| <= 2 on {frac:.0%} (>= 80%), CD rel diff {rel(g.cd, f.cd):.1%}, HD rel diff "
                  f"{rel(g.hd, f.hd):.1%} (<= 10%), selection speedup {speed:.1f}x (>= 3x) on {len(clouds)} samples")


def test_criterion_7_size_trend(runs):
    asr = {}
    for t in (2, 5, 10, 20):
        asr[t] = runs(f"sweep{t}", 50, mode="greedy_schur", t_max=t)[1].asr
    greedy = runs("greedy", 100, mode="greedy_schur", t_max=64)[0][:50]
    asr[64] = harness.report_row("64", greedy).asr
    sizes = sorted(asr)
    mono = all(asr[b] >= asr[a] - 1.0 for a, b in zip(sizes, sizes[1:]))
    ok = asr[2] >= 60 and mono and asr[64] == 100
    record(7, ok, "ASR by t_max " + ", ".join(f"{t}: {asr[t]:.0f}%" for t in sizes)
           + f"; t=2 >= 60%: {asr[2] >= 60}, monotone: {mono}, 100% at 64: {asr[64] == 100}")


def test_criterion_8_cooperation(desk_trained, desk_data, runs):
    model, _, _ = desk_trained
    man = load_manifest(desk_data)
    _, _, _, g_path = runs("greedy", 100, mode="greedy_schur", t_max=64)
    _, _, _, r_path = runs("random", 100, mode="random", t_max=64)
    coop, counter = harness.coop_totals(harness.analyze_coop(g_path, model, man, CW))
    jg = harness.jensen_fractions(g_path, model, man, CW)
    jr = harness.jensen_fractions(r_path, model, man, CW)
    common = sorted(set(jg) & set(jr))
    mg = float(np.mean([jg[i] for i in common])) if common else float("nan")
    mr = float(np.mean([jr[i] for i in common])) if common else float("nan")
    ok = coop > counter and bool(common) and mg > mr
    record(8, ok, f"cooperative pairs {coop} vs counteractive {counter}; Jensen pass fraction greedy {mg:.3f} "
                  f"vs random {mr:.3f} on {len(common)} size-matched samples")


def test_criterion_10_determinism(desk_trained, desk_data, tmp_path):
    _, _, path = desk_trained
    outs = []
    for name in ("a", "b"):
        out = tmp_path / name
        cmd = [sys.executable, "-m", "scpattack", "attack", "--data", desk_data, "--model", path,
               "--limit", "5", "--workers", "1", "--seed", "0", "--no-figures", "--out", str(out)]
        subprocess.run(cmd, check=True, capture_output=True)
        outs.append((out / "results.jsonl").read_bytes())
    record(10, outs[0] == outs[1] and len(outs[0]) > 0,
           f"two CLI runs on 5 samples: results.jsonl byte-identical: {outs[0] == outs[1]}")
