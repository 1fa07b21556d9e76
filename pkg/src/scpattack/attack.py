"""Joint perturbation of a selected point subset.

Minimizes ``loss + beta1 * D`` over the subset displacements with Adam, where
``D = w_cd * Chamfer + w_hd * Hausdorff`` between clean and adversarial clouds,
and binary-searches ``beta1`` across rounds in the Carlini-Wagner manner.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .classifier import LossSpec, is_adversarial, predict
from .metrics import MetricBundle, compute_metrics, sq_dists
from .pointset import PointCloud


@dataclass(frozen=True)
class AttackConfig:
    rounds: int = 10
    steps: int = 500
    lr: float = 0.01
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    beta1_init: float = 1.0
    beta1_lo: float = 0.0
    beta1_hi: float = 1e4
    w_cd: float = 1.0
    w_hd: float = 0.1
    loss: LossSpec = LossSpec()

    def __post_init__(self):
        if self.rounds < 1 or self.steps < 1:
            raise ValueError("rounds and steps must be >= 1")
        if not self.lr > 0:
            raise ValueError("lr must be > 0")
        if not 0 <= self.beta1_lo <= self.beta1_init <= self.beta1_hi:
            raise ValueError("need 0 <= beta1_lo <= beta1_init <= beta1_hi")


@dataclass
class AttackResult:
    adv_cloud: PointCloud
    indices: list
    delta: np.ndarray
    success: bool
    predicted_label: int
    metrics: MetricBundle
    beta1_final: float
    trace: list = field(default_factory=list)
    meta: dict = field(default_factory=dict)

    def to_json(self):
        return {
            "success": bool(self.success),
            "predicted_label": int(self.predicted_label),
            "metrics": self.metrics.to_json(),
            "beta1_final": float(self.beta1_final),
            "beta1_trace": self.trace,
            "delta_indices": [int(i) for i in self.indices],
            "delta": [[float(v) for v in row] for row in self.delta],
            "meta": self.meta,
        }


def apply_sparse_delta(cloud, indices, delta):
    """Add ``delta`` rows at ``indices``; every other row is returned bit-for-bit."""
    pts = cloud.points if isinstance(cloud, PointCloud) else np.asarray(cloud, dtype=np.float64)
    idx = np.asarray(indices, dtype=np.int64).reshape(-1)
    delta = np.asarray(delta, dtype=np.float64).reshape(len(idx), 3)
    if len(set(idx.tolist())) != len(idx):
        raise ValueError("duplicate indices")
    if len(idx) and (idx.min() < 0 or idx.max() >= len(pts)):
        raise IndexError("index out of range")
    out = pts.copy()
    out[idx] = np.where(delta != 0, pts[idx] + delta, pts[idx])
    if isinstance(cloud, PointCloud):
        return cloud.with_points(out)
    return out


class SubsetDistortion:
    """``w_cd * chamfer(clean, adv) + w_hd * hausdorff(adv, clean)`` when only ``indices`` move.

    Unmoved rows match themselves at distance zero, so only the moved rows and
    their clean originals need nearest-neighbour searches. Gradients hold the
    nearest-neighbour assignment fixed. Rows in ``watch`` are fixed rows the
    caller tracks: ``woken`` lists those that became the nearest adversarial
    point of a moved row's original position in the last call.
    """

    def __init__(self, clean, indices, w_cd=1.0, w_hd=0.1, watch=()):
        self.clean = np.asarray(clean, dtype=np.float64)
        self.idx = np.asarray(indices, dtype=np.int64)
        self.w_cd, self.w_hd = w_cd, w_hd
        n = len(self.clean)
        self.n = n
        self.origin = self.clean[self.idx]
        self.clean_sq = (self.clean * self.clean).sum(axis=1)
        keep = np.flatnonzero(~np.isin(np.arange(n), self.idx))
        if len(keep):
            d = sq_dists(self.origin, self.clean[keep])
            a = d.argmin(axis=1)
            self.rest = d[np.arange(len(self.idx)), a]
            self.rest_arg = keep[a]
        else:
            self.rest = np.full(len(self.idx), np.inf)
            self.rest_arg = np.full(len(self.idx), -1)
        self.watch = np.isin(self.rest_arg, np.asarray(list(watch), dtype=np.int64))
        self.woken = np.zeros(0, dtype=np.int64)

    def __call__(self, rows):
        y = np.asarray(rows, dtype=np.float64)
        n = self.n
        if not len(y):
            self.woken = np.zeros(0, dtype=np.int64)
            return 0.0, 0.0, 0.0, np.zeros((0, 3))
        # neighbours via the Gram expansion, distances recomputed exactly for the winners
        nn = (self.clean_sq[None, :] - 2.0 * (y @ self.clean.T)).argmin(axis=1)
        diff = y - self.clean[nn]
        d1 = (diff * diff).sum(axis=1)
        d_back = sq_dists(self.origin, y)
        nb = d_back.argmin(axis=1)
        d2 = d_back[np.arange(len(y)), nb]
        use_moved = d2 < self.rest
        hit = self.watch & ~use_moved
        self.woken = np.unique(self.rest_arg[hit]) if hit.any() else np.zeros(0, dtype=np.int64)
        cd = 0.5 * (d1.sum() + np.where(use_moved, d2, self.rest).sum()) / n
        grad_cd = diff / n
        if use_moved.any():
            np.add.at(grad_cd, nb[use_moved], (y[nb[use_moved]] - self.origin[use_moved]) / n)
        dist = np.sqrt(d1)
        s = int(dist.argmax())
        hd = float(dist[s])
        grad_hd = np.zeros_like(y)
        if hd > 0:
            grad_hd[s] = diff[s] / hd
        total = self.w_cd * cd + self.w_hd * hd
        return float(total), float(cd), hd, self.w_cd * grad_cd + self.w_hd * grad_hd


class _LiveSet:
    """Objective and distortion restricted to the subset rows that can move.

    A subset row with zero displacement whose point wins no pooled channel
    and is nobody's nearest neighbour has an exactly zero gradient, so Adam
    leaves it in place. Such rows are folded into the cached background and
    re-admitted the moment either condition stops holding.
    """

    def __init__(self, model, pts, indices, label, cfg):
        self.model, self.pts, self.label, self.cfg = model, pts, label, cfg
        self.indices = np.asarray(indices, dtype=np.int64)
        act = model.active_rows(pts)
        if act is None:
            self.pos = np.arange(len(indices))
        else:
            self.pos = np.flatnonzero(np.isin(self.indices, act))
        self._build()

    def _build(self):
        live = self.indices[self.pos]
        dead = np.delete(self.indices, self.pos)
        self.objective = self.model.subset_objective(self.pts, live, self.label, self.cfg.loss, watch=dead)
        self.distortion = SubsetDistortion(self.pts, live, self.cfg.w_cd, self.cfg.w_hd, watch=dead)

    def evaluate(self, rows):
        """Evaluate at the full subset ``rows``; widens the live set until it is self-consistent."""
        while True:
            y = rows[self.pos]
            loss, g_loss, logits = self.objective(y)
            dval, _, _, g_d = self.distortion(y)
            woken = np.union1d(self.objective.woken, self.distortion.woken)
            if not len(woken):
                return loss, g_loss, logits, dval, g_d
            self.pos = np.union1d(self.pos, np.flatnonzero(np.isin(self.indices, woken)))
            self._build()


def _round(live, base, label, beta, lr, cfg):
    """One fixed-length Adam run from zero; returns (candidates, final delta, finite flag)."""
    delta = np.zeros_like(base)
    m = np.zeros_like(base)
    v = np.zeros_like(base)
    b1, b2 = cfg.adam_beta1, cfg.adam_beta2
    found = []
    for step in range(cfg.steps + 1):
        loss, g_loss, logits, dval, g_d = live.evaluate(base + delta)
        if not (math.isfinite(loss) and math.isfinite(dval)):
            return found, delta, False
        if logits is not None and is_adversarial(logits, label):
            if not found or dval < found[-1][0]:
                found.append((dval, delta.copy()))
        if step == cfg.steps:
            break
        p = live.pos
        g = g_loss + beta * g_d
        mp = b1 * m[p] + (1 - b1) * g
        vp = b2 * v[p] + (1 - b2) * g * g
        m[p], v[p] = mp, vp
        t = step + 1
        delta[p] = delta[p] - lr * (mp / (1 - b1 ** t)) / (np.sqrt(vp / (1 - b2 ** t)) + 1e-8)
    return found, delta, True


def optimize_subset(model, cloud, label, subset, cfg: AttackConfig = AttackConfig()):
    """Optimize perturbations on ``subset.indices`` and return the least-distorted success.

    Success at each iterate is screened with the cached subset objective and
    confirmed with a full forward pass before a result is returned.
    """
    pts = cloud.points if isinstance(cloud, PointCloud) else np.asarray(cloud, dtype=np.float64)
    indices = [int(i) for i in getattr(subset, "indices", subset)]
    if not indices:
        raise ValueError("empty subset")
    base = pts[indices]
    meta = {"adam_reset_per_round": True, "delta_init": "zero"}

    def finish(delta, beta, trace):
        adv = apply_sparse_delta(pts, indices, delta)
        logits = model.logits(adv)
        adv_cloud = PointCloud(adv, label, getattr(cloud, "id", ""))
        return AttackResult(adv_cloud, indices, np.asarray(delta, dtype=np.float64),
                            is_adversarial(logits, label), predict(logits, label),
                            compute_metrics(pts, adv), beta, trace, meta)

    if is_adversarial(model.logits(pts), label):
        return finish(np.zeros_like(base), cfg.beta1_init, [])

    beta, lo, hi = cfg.beta1_init, cfg.beta1_lo, cfg.beta1_hi
    best = None  # (D, delta, beta)
    last = np.zeros_like(base)
    trace = []
    for r in range(cfg.rounds):
        lr = cfg.lr
        found, last, finite = _round(_LiveSet(model, pts, indices, label, cfg), base, label, beta, lr, cfg)
        if not finite:
            lr = cfg.lr / 2
            found, last, finite = _round(_LiveSet(model, pts, indices, label, cfg), base, label, beta, lr, cfg)
        if not finite:
            last = np.zeros_like(base)
        hit = None
        if finite:
            # candidates are in decreasing D; take the first one a full forward confirms
            for dval, delta in reversed(found):
                adv = apply_sparse_delta(pts, indices, delta)
                if is_adversarial(model.logits(adv), label):
                    hit = (dval, delta)
                    break
        trace.append({"round": r, "beta1": beta, "success": hit is not None,
                      "distortion": None if hit is None else hit[0], "lr": lr, "finite": finite})
        if hit is not None:
            if best is None or hit[0] < best[0]:
                best = (hit[0], hit[1], beta)
            lo = beta
            beta = 0.5 * (beta + hi)
        else:
            hi = beta
            beta = 0.5 * (lo + beta)
    if best is not None:
        return finish(best[1], best[2], trace)
    return finish(last, trace[-1]["beta1"], trace)
