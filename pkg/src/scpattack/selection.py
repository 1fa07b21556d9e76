"""Cooperative-subset selection.

``select_greedy`` is the production path: gradient screening, then a single
pass over the candidates that keeps a point only if the Hessian block of the
grown subset stays (numerically) positive definite, decided by the Schur
surplus against an incrementally bordered Cholesky factor.
``select_full_hessian`` makes the same decisions from explicitly formed
principal submatrices and serves as the reference path.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .pointset import PointCloud
from .schur import (CholeskyState, NotPositiveDefinite, assemble_block, cholesky_extend, min_eigenvalue,
                    schur_surplus, symmetrize)

MODES = ("greedy_schur", "full_hessian", "gradient_topk", "random")
FULL_HESSIAN_MAX_DIM = 768


@dataclass(frozen=True)
class SelectionConfig:
    k: int = 256
    epsilon: float = 1e-6
    t_max: int = 64
    mode: str = "greedy_schur"
    seed: int = 0

    def __post_init__(self):
        if self.k < 1 or self.t_max < 1:
            raise ValueError("k and t_max must be >= 1")
        if self.epsilon < 0:
            raise ValueError("epsilon must be >= 0")
        if self.mode not in MODES:
            raise ValueError(f"unknown selection mode {self.mode!r}")

    def with_(self, **kw):
        return replace(self, **kw)


@dataclass
class CooperativeSubset:
    indices: list
    surpluses: list = field(default_factory=list)
    rejected: list = field(default_factory=list)
    init_index: int = -1
    mode: str = "greedy_schur"
    flags: list = field(default_factory=list)
    jitter: float = 0.0

    def __len__(self):
        return len(self.indices)

    def to_json(self):
        return {
            "indices": [int(i) for i in self.indices],
            "surpluses": [float(s) for s in self.surpluses],
            "rejected": [[int(i), float(s)] for i, s in self.rejected],
            "init_index": int(self.init_index),
            "mode": self.mode,
            "flags": list(self.flags),
            "jitter": float(self.jitter),
        }

    @classmethod
    def from_json(cls, doc):
        return cls([int(i) for i in doc["indices"]], [float(s) for s in doc.get("surpluses", [])],
                   [(int(i), float(s)) for i, s in doc.get("rejected", [])], int(doc.get("init_index", -1)),
                   doc.get("mode", "greedy_schur"), list(doc.get("flags", [])), float(doc.get("jitter", 0.0)))


def _pts(cloud):
    return cloud.points if isinstance(cloud, PointCloud) else np.asarray(cloud, dtype=np.float64)


def rank_by_norm(grad, k):
    norms = np.sqrt((np.asarray(grad) ** 2).sum(axis=1))
    order = np.lexsort((np.arange(len(norms)), -norms))
    return [int(i) for i in order[:min(k, len(norms))]]


def gradient_screen(model, cloud, label, spec, k):
    """Indices of the ``k`` points with the largest loss-gradient norm, descending; ties by index."""
    if k < 1:
        raise ValueError("k must be >= 1")
    return rank_by_norm(model.grad(_pts(cloud), label, spec), k)


def _finish(subset, candidates, first_lambda):
    if not subset.indices:
        top = candidates[0]
        subset.indices = [top]
        subset.init_index = top
        subset.surpluses = [first_lambda]
        subset.rejected = [r for r in subset.rejected if r[0] != top]
        subset.flags.append("init_fallback")
    return subset


def select_greedy(model, cloud, label, spec, cfg: SelectionConfig):
    pts = _pts(cloud)
    cands = gradient_screen(model, pts, label, spec, cfg.k)
    curv = model.curvature(pts, label, spec)
    eps = cfg.epsilon
    out = CooperativeSubset([], mode="greedy_schur")
    state = None
    first_lambda = None
    for c in cands:
        if len(out.indices) >= cfg.t_max:
            break
        if state is None:
            block = symmetrize(curv.columns(c, [c]))
            lam = min_eigenvalue(block)
            if first_lambda is None:
                first_lambda = lam
            if lam > -eps:
                state = CholeskyState.from_matrix(block)
                out.indices.append(c)
                out.surpluses.append(lam)
                out.init_index = c
            else:
                out.rejected.append((c, lam))
            continue
        cols = curv.columns(c, out.indices + [c])
        t3 = 3 * len(out.indices)
        b, cc = cols[:t3], symmetrize(cols[t3:])
        s = schur_surplus(state, b, cc)
        if s > -eps:
            try:
                state = cholesky_extend(state, b, cc)
            except NotPositiveDefinite:
                out.rejected.append((c, s))
                out.flags.append(f"extend_failed:{c}")
                continue
            out.indices.append(c)
            out.surpluses.append(s)
        else:
            out.rejected.append((c, s))
    if state is not None:
        out.jitter = state.jitter
    return _finish(out, cands, first_lambda)


def select_full_hessian(model, cloud, label, spec, cfg: SelectionConfig):
    """Same single pass, but every test is an explicit eigenvalue of the extended principal block."""
    pts = _pts(cloud)
    kk = min(cfg.k, len(pts))
    if 3 * kk > FULL_HESSIAN_MAX_DIM:
        raise ValueError(f"full Hessian over {kk} candidates exceeds dimension {FULL_HESSIAN_MAX_DIM}")
    cands = gradient_screen(model, pts, label, spec, kk)
    H = assemble_block(model, pts, label, spec, cands).matrix
    eps = cfg.epsilon
    out = CooperativeSubset([], mode="full_hessian")
    pos = []
    first_lambda = None
    for p, c in enumerate(cands):
        if len(out.indices) >= cfg.t_max:
            break
        rows = np.concatenate([np.arange(3 * q, 3 * q + 3) for q in pos + [p]])
        lam = min_eigenvalue(H[np.ix_(rows, rows)])
        if not pos and first_lambda is None:
            first_lambda = lam
        if lam > -eps:
            if not pos:
                out.init_index = c
            pos.append(p)
            out.indices.append(c)
            out.surpluses.append(lam)
        else:
            out.rejected.append((c, lam))
    return _finish(out, cands, first_lambda)


def select_baseline(model, cloud, label, spec, cfg: SelectionConfig):
    """Ablation controls: top-gradient points without curvature test, or a uniform random subset."""
    pts = _pts(cloud)
    n = len(pts)
    if cfg.mode == "gradient_topk":
        idx = gradient_screen(model, pts, label, spec, cfg.k)[:cfg.t_max]
    elif cfg.mode == "random":
        rng = np.random.default_rng(cfg.seed)
        idx = [int(i) for i in rng.choice(n, size=min(cfg.t_max, n), replace=False)]
    else:
        raise ValueError(f"select_baseline does not handle mode {cfg.mode!r}")
    return CooperativeSubset(idx, init_index=idx[0], mode=cfg.mode)


def select(model, cloud, label, spec, cfg: SelectionConfig):
    if cfg.mode == "greedy_schur":
        return select_greedy(model, cloud, label, spec, cfg)
    if cfg.mode == "full_hessian":
        return select_full_hessian(model, cloud, label, spec, cfg)
    return select_baseline(model, cloud, label, spec, cfg)
