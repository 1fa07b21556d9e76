"""Experiment orchestration: batch attacks, reports, size sweeps and cooperation analysis.

Per-sample records go to ``results.jsonl`` (no timings, so reruns are
byte-identical) and summaries to ``report.csv``.
"""
from __future__ import annotations

import csv
import json
import logging
import os
import time
import zlib
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .attack import AttackConfig, apply_sparse_delta, optimize_subset
from .classifier import LossSpec, is_adversarial, load_model
from .metrics import coop_histogram, cooperation_check, pairwise_coop
from .pointset import DatasetManifest, load_manifest, save_xyz
from .selection import SelectionConfig, select

log = logging.getLogger(__name__)

REPORT_COLUMNS = ("method", "asr", "cd", "hd", "l2", "emd", "points", "time_s")
SWEEP_SIZES = (2, 5, 10, 20, 64)
HIST_COLUMNS = ("count_value", "cooperative_freq", "counteractive_freq")


@dataclass
class RunConfig:
    data: str
    model: str
    selection: SelectionConfig = field(default_factory=SelectionConfig)
    attack: AttackConfig = field(default_factory=AttackConfig)
    workers: int = 1
    limit: int | None = None
    out: str = "runs"

    def __post_init__(self):
        if self.workers < 1:
            raise ValueError("workers must be >= 1")
        if self.limit is not None and self.limit < 0:
            raise ValueError("limit must be >= 0")
        for p in (self.data, self.model):
            if not os.path.exists(p):
                raise FileNotFoundError(p)


@dataclass
class ReportRow:
    method: str
    asr: float
    cd: float
    hd: float
    l2: float
    emd: float
    points: float
    time_s: float

    def as_list(self):
        return [self.method] + [f"{getattr(self, c):.6g}" for c in REPORT_COLUMNS[1:]]


def sample_seed(seed, sample_id):
    """Per-sample seed: stable across runs and independent of batch order."""
    return zlib.crc32(f"{seed}:{sample_id}".encode("utf-8"))


def interleave_by_class(samples):
    """Round-robin over classes so any prefix is roughly class balanced."""
    rank = {}
    keyed = []
    for s in samples:
        r = rank.get(s.label, 0)
        rank[s.label] = r + 1
        keyed.append((r, s.label, s))
    return [s for _, _, s in sorted(keyed, key=lambda t: (t[0], t[1]))]


def pick_samples(model, manifest: DatasetManifest, limit=None):
    """Correctly classified test samples in class-interleaved order, at most ``limit``."""
    out = []
    for s in interleave_by_class(manifest.split("test")):
        if limit is not None and len(out) >= limit:
            break
        cloud = manifest.load(s)
        if not is_adversarial(model.logits(cloud.points), cloud.label):
            out.append(cloud)
    return out


# -- one sample ---------------------------------------------------------------

def attack_one(model, cloud, sel: SelectionConfig, acfg: AttackConfig):
    """Select then attack; returns (record, seconds). Failures become error records."""
    t0 = time.perf_counter()
    cfg = replace(sel, seed=sample_seed(sel.seed, cloud.id))
    try:
        subset = select(model, cloud, cloud.label, acfg.loss, cfg)
        res = optimize_subset(model, cloud, cloud.label, subset, acfg)
    except Exception as exc:  # recorded, never fatal for the batch
        log.warning("sample %s failed: %s", cloud.id, exc)
        return {"id": cloud.id, "label": int(cloud.label), "mode": sel.mode, "success": False,
                "error": f"{type(exc).__name__}: {exc}"}, time.perf_counter() - t0
    rec = {"id": cloud.id, "label": int(cloud.label), "mode": sel.mode, "t_max": sel.t_max}
    rec.update(res.to_json())
    rec["subset"] = subset.to_json()
    return rec, time.perf_counter() - t0


_WORKER = {}


def _init_worker(model_path):
    _WORKER["model"] = load_model(model_path)


def _work(args):
    cloud, sel, acfg = args
    return attack_one(_WORKER["model"], cloud, sel, acfg)


def attack_batch(model, model_path, clouds, sel, acfg, workers=1):
    """Records and timings in input order regardless of worker count."""
    if workers == 1 or len(clouds) <= 1:
        return [attack_one(model, c, sel, acfg) for c in clouds]
    with ProcessPoolExecutor(workers, initializer=_init_worker, initargs=(model_path,)) as pool:
        return list(pool.map(_work, [(c, sel, acfg) for c in clouds]))


# -- reports ------------------------------------------------------------------

def report_row(method, records, times=()):
    """Means over attacked samples; errored samples count as failures and are left out of the means."""
    n = len(records)
    ok = [r for r in records if "metrics" in r]
    succ = sum(bool(r.get("success")) for r in records)

    def mean(key):
        vals = [r["metrics"][key] for r in ok]
        return float(np.mean(vals)) if vals else float("nan")

    return ReportRow(method, 100.0 * succ / n if n else float("nan"), mean("cd"), mean("hd"), mean("l2"),
                     mean("emd"), mean("n_modified"), float(np.mean(times)) if len(times) else float("nan"))


def write_report(path, rows, first_column="method"):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow((first_column,) + REPORT_COLUMNS[1:])
        for r in rows:
            w.writerow(r.as_list())


def write_jsonl(path, records):
    with open(path, "w") as fh:
        for r in records:
            fh.write(json.dumps(r, sort_keys=True) + "\n")


def read_jsonl(path):
    with open(path) as fh:
        return [json.loads(line) for line in fh if line.strip()]


def save_adversarial(directory, clouds, records):
    """Write each successful adversarial cloud as ``<id>.xyz``."""
    os.makedirs(directory, exist_ok=True)
    for cloud, rec in zip(clouds, records):
        if rec.get("success") and "delta" in rec:
            idx, deltas = _result_deltas(rec)
            adv = apply_sparse_delta(cloud, idx, deltas)
            save_xyz(os.path.join(directory, f"{cloud.id}.xyz"), adv)


def run_attack(cfg: RunConfig, method=None, figures=True):
    """Attack the chosen samples; writes results.jsonl and report.csv under ``cfg.out``."""
    model = load_model(cfg.model)
    manifest = load_manifest(cfg.data)
    clouds = pick_samples(model, manifest, cfg.limit)
    log.info("attacking %d samples (%s, t_max=%d)", len(clouds), cfg.selection.mode, cfg.selection.t_max)
    out = attack_batch(model, cfg.model, clouds, cfg.selection, cfg.attack, cfg.workers)
    records = [r for r, _ in out]
    times = [t for _, t in out]
    os.makedirs(cfg.out, exist_ok=True)
    write_jsonl(os.path.join(cfg.out, "results.jsonl"), records)
    save_adversarial(os.path.join(cfg.out, "adv"), clouds, records)
    row = report_row(method or cfg.selection.mode, records, times)
    write_report(os.path.join(cfg.out, "report.csv"), [row])
    if figures:
        from .plotting import plot_attack
        plot_attack(records, os.path.join(cfg.out, "report.png"))
    return records, row


def run_size_sweep(cfg: RunConfig, sizes=SWEEP_SIZES, figures=True):
    """One attack batch per subset size; rows written to sweep.csv (first column is t_max)."""
    rows = []
    base = cfg.out
    for t in sizes:
        sub = replace(cfg, selection=cfg.selection.with_(t_max=int(t)), out=os.path.join(base, f"t{t}"))
        _, row = run_attack(sub, method=str(t), figures=False)
        rows.append(row)
    os.makedirs(base, exist_ok=True)
    write_report(os.path.join(base, "sweep.csv"), rows, first_column="t_max")
    if figures:
        from .plotting import plot_sweep
        plot_sweep(rows, os.path.join(base, "sweep.png"))
    return rows


def _result_deltas(rec):
    idx = [int(i) for i in rec["delta_indices"]]
    return idx, np.asarray(rec["delta"], dtype=np.float64).reshape(len(idx), 3)


def analyze_coop(results_path, model, manifest: DatasetManifest, spec=LossSpec(), tol=1e-9):
    """Pairwise cooperation stats for every successful record with at least two subset points."""
    records = read_jsonl(results_path)
    by_id = {os.path.splitext(os.path.basename(s.path))[0]: s for s in manifest.samples}
    stats = []
    for rec in records:
        if not rec.get("success") or "delta" not in rec:
            continue
        idx, deltas = _result_deltas(rec)
        if len(idx) < 2:
            continue
        if rec["id"] not in by_id:
            raise KeyError(f"result id {rec['id']!r} not in manifest")
        cloud = manifest.load(by_id[rec["id"]])
        stats.append(pairwise_coop(model, cloud, cloud.label, spec, idx, deltas, tol))
    return stats


def jensen_fractions(results_path, model, manifest, spec=LossSpec(), m_samples=64, seed=0):
    """Jensen pass fraction per record (whole subset, its own optimized deltas)."""
    by_id = {os.path.splitext(os.path.basename(s.path))[0]: s for s in manifest.samples}
    out = {}
    for rec in read_jsonl(results_path):
        if "delta" not in rec:
            continue
        idx, deltas = _result_deltas(rec)
        if len(idx) < 2:
            continue
        cloud = manifest.load(by_id[rec["id"]])
        st = cooperation_check(model, cloud, cloud.label, spec, idx, deltas, m_samples,
                               sample_seed(seed, rec["id"]))
        out[rec["id"]] = st.jensen_pass_fraction
    return out


def write_histogram(path, stats):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(HIST_COLUMNS)
        w.writerows(coop_histogram(stats))


def coop_totals(stats):
    """(cooperative, counteractive) pair totals; each pair is counted once."""
    return (sum(sum(s.cooperative_count) for s in stats) // 2,
            sum(sum(s.counteractive_count) for s in stats) // 2)
