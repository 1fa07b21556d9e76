"""Distortion metrics and the cooperation analysis.

Conventions: Chamfer uses squared nearest-neighbour distances averaged over
each side and halved; Hausdorff is directed (adversarial to clean) and not
squared; EMD is the mean matched distance of an optimal bijection.

Cooperation is judged on the loss being minimized by the attack: a set of
per-point perturbations is cooperative when blending them lowers the loss
below the same blend of the losses each perturbation reaches alone, i.e. the
joint adversarial effect exceeds the averaged individual effects. This is the
direction a positive-definite Hessian guarantees locally.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.optimize import linear_sum_assignment

from .pointset import PointCloud

MODIFIED_THRESHOLD = 1e-6
EMD_MAX_POINTS = 512


def _pts(p):
    return p.points if isinstance(p, PointCloud) else np.asarray(p, dtype=np.float64)


def sq_dists(a, b):
    diff = a[:, None, :] - b[None, :, :]
    return (diff * diff).sum(axis=-1)


def chamfer(p, q):
    d = sq_dists(_pts(p), _pts(q))
    return float(0.5 * (d.min(axis=1).mean() + d.min(axis=0).mean()))


def hausdorff(p_adv, p_clean):
    """Largest distance from an adversarial point to its nearest clean point."""
    d = sq_dists(_pts(p_adv), _pts(p_clean))
    return float(np.sqrt(d.min(axis=1).max()))


def emd(p, q):
    p, q = _pts(p), _pts(q)
    if len(p) != len(q):
        raise ValueError(f"EMD needs equal sizes, got {len(p)} and {len(q)}")
    if len(p) > EMD_MAX_POINTS:
        raise ValueError(f"EMD limited to {EMD_MAX_POINTS} points")
    cost = np.sqrt(sq_dists(p, q))
    r, c = linear_sum_assignment(cost)
    return float(cost[r, c].mean())


@dataclass
class MetricBundle:
    cd: float = 0.0
    hd: float = 0.0
    l2: float = 0.0
    emd: float = 0.0
    n_modified: int = 0

    def to_json(self):
        return asdict(self)


def compute_metrics(clean, adv):
    clean, adv = _pts(clean), _pts(adv)
    disp = np.sqrt(((adv - clean) ** 2).sum(axis=1))
    return MetricBundle(
        cd=chamfer(clean, adv),
        hd=hausdorff(adv, clean),
        l2=float(np.sqrt(((adv - clean) ** 2).sum())),
        emd=emd(clean, adv) if len(clean) <= EMD_MAX_POINTS else float("nan"),
        n_modified=int((disp > MODIFIED_THRESHOLD).sum()),
    )


# -- cooperation ------------------------------------------------------------

@dataclass
class CoopStats:
    indices: list = field(default_factory=list)
    cooperative_count: list = field(default_factory=list)
    counteractive_count: list = field(default_factory=list)
    jensen_pass_fraction: float = float("nan")


def _singles(objective, base, deltas):
    out = np.empty(len(base))
    for i in range(len(base)):
        rows = base.copy()
        rows[i] += deltas[i]
        out[i] = objective(rows)[0]
    return out


def cooperation_check(model, cloud, label, spec, indices, deltas, m_samples=64, seed=0, tol=1e-9):
    """Fraction of random simplex weights under which the blended perturbation is cooperative.

    A draw passes when L(P + sum a_i d_i) < sum a_i L(P + d_i) - tol.
    """
    pts = _pts(cloud)
    deltas = np.asarray(deltas, dtype=np.float64)
    if len(indices) < 2:
        raise ValueError("cooperation needs at least two points")
    objective = model.subset_objective(pts, indices, label, spec)
    base = pts[np.asarray(indices)]
    single = _singles(objective, base, deltas)
    rng = np.random.default_rng(seed)
    passed = 0
    for _ in range(m_samples):
        a = rng.dirichlet(np.ones(len(indices)))
        joint = objective(base + a[:, None] * deltas)[0]
        if joint < float(a @ single) - tol:
            passed += 1
    return CoopStats(list(indices), jensen_pass_fraction=passed / m_samples)


def pairwise_coop(model, cloud, label, spec, indices, deltas, tol=1e-9):
    """Per-point counts of cooperative and counteractive partners at equal weights."""
    pts = _pts(cloud)
    deltas = np.asarray(deltas, dtype=np.float64)
    t = len(indices)
    if t < 2:
        raise ValueError("cooperation needs at least two points")
    objective = model.subset_objective(pts, indices, label, spec)
    base = pts[np.asarray(indices)]
    single = _singles(objective, base, deltas)
    moved = np.any(deltas != 0, axis=1)
    coop = np.zeros(t, dtype=int)
    counter = np.zeros(t, dtype=int)
    for i in range(t):
        for j in range(i + 1, t):
            if not (moved[i] or moved[j]):
                continue  # both singles and the blend are the clean cloud
            rows = base.copy()
            rows[i] += 0.5 * deltas[i]
            rows[j] += 0.5 * deltas[j]
            joint = objective(rows)[0]
            mean = 0.5 * (single[i] + single[j])
            if joint < mean - tol:
                coop[i] += 1
                coop[j] += 1
            elif joint > mean + tol:
                counter[i] += 1
                counter[j] += 1
    return CoopStats(list(indices), coop.tolist(), counter.tolist())


def coop_histogram(stats):
    """Rows (count_value, cooperative_freq, counteractive_freq) over all points of all stats."""
    coop = [c for s in stats for c in s.cooperative_count]
    counter = [c for s in stats for c in s.counteractive_count]
    if not coop:
        return []
    top = max(max(coop), max(counter))
    cf = np.bincount(coop, minlength=top + 1)
    kf = np.bincount(counter, minlength=top + 1)
    return [(v, int(cf[v]), int(kf[v])) for v in range(top + 1)]
