"""Victim classifier: per-point MLP, max-pool, classification head.

Everything is plain numpy in float64. Besides logits the model exposes the
derivatives the attack needs: the input gradient of the misclassification loss,
exact Hessian-vector products (forward-over-reverse through the network with
the max-pool routing frozen), and a cached curvature context that produces
Hessian columns restricted to a handful of rows.

Max-pool ties go to the lowest point index, matching ``np.argmax``.
"""
from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field

import numpy as np

from .pointset import DatasetManifest, PointCloud

ACTIVATIONS = ("tanh", "softplus", "relu")
LOSS_KINDS = ("neg_cross_entropy", "cw_margin")
MAGIC = b"SCPMDL01"


class ModelError(ValueError):
    pass


@dataclass(frozen=True)
class LossSpec:
    kind: str = "cw_margin"
    kappa: float = 0.0

    def __post_init__(self):
        if self.kind not in LOSS_KINDS:
            raise ModelError(f"unknown loss kind {self.kind!r}")
        if not np.isfinite(self.kappa) or self.kappa < 0:
            raise ModelError("kappa must be finite and >= 0")


def _points(cloud):
    return cloud.points if isinstance(cloud, PointCloud) else np.asarray(cloud, dtype=np.float64)


def _activate(kind, pre, second=True):
    """Return activation value and its first and second derivatives at ``pre``."""
    if kind == "tanh":
        s = np.tanh(pre)
        d1 = 1.0 - s * s
        return s, d1, (-2.0 * s * d1 if second else None)
    if kind == "softplus":
        s = np.logaddexp(0.0, pre)
        sig = 0.5 * (1.0 + np.tanh(0.5 * pre))
        return s, sig, (sig * (1.0 - sig) if second else None)
    if kind == "relu":
        d1 = (pre > 0).astype(pre.dtype)
        return pre * d1, d1, (np.zeros_like(pre) if second else None)
    raise ModelError(f"unknown activation {kind!r}")


# -- losses on logits -------------------------------------------------------

def loss_from_logits(logits, label, spec: LossSpec):
    """Misclassification loss, its logit gradient and logit Hessian.

    Lower is more adversarial. The Hessian is ``None`` when it vanishes
    (the margin loss is piecewise linear in the logits).
    """
    z = np.asarray(logits, dtype=np.float64)
    C = z.shape[0]
    if not 0 <= label < C:
        raise ModelError(f"label {label} outside [0, {C})")
    if spec.kind == "neg_cross_entropy":
        m = z.max()
        e = np.exp(z - m)
        p = e / e.sum()
        loss = z[label] - m - np.log(e.sum())
        g = -p
        g[label] += 1.0
        return float(loss), g, np.outer(p, p) - np.diag(p)
    other = z.copy()
    other[label] = -np.inf
    j = int(np.argmax(other))
    margin = z[label] - z[j]
    g = np.zeros(C)
    if margin > -spec.kappa:
        g[label], g[j] = 1.0, -1.0
        return float(margin), g, None
    return float(-spec.kappa), g, None


def predict(logits, label=None):
    """Argmax class; a tie with ``label`` is resolved against ``label``."""
    z = np.asarray(logits)
    j = int(np.argmax(z))
    if label is not None and j == label:
        other = z.copy()
        other[label] = -np.inf
        k = int(np.argmax(other))
        if other[k] >= z[label]:
            return k
    return j


def is_adversarial(logits, label):
    return predict(logits, label) != label


# -- generic victim ---------------------------------------------------------

class Victim:
    """Loss surface over point coordinates.

    Subclasses provide ``loss_and_grad``; everything else has a generic
    fallback built on it. ``ClassifierModel`` overrides the fallbacks with
    exact, cached versions.
    """

    def logits(self, points):
        raise NotImplementedError

    def loss_and_grad(self, points, label, spec):
        raise NotImplementedError

    def loss(self, points, label, spec):
        return self.loss_and_grad(points, label, spec)[0]

    def grad(self, points, label, spec):
        return self.loss_and_grad(points, label, spec)[1]

    def hvp(self, points, label, spec, v, method="fd"):
        return fd_hvp(self, points, label, spec, v)

    def curvature(self, points, label, spec):
        return _HvpCurvature(self, points, label, spec)

    def subset_objective(self, points, indices, label, spec, watch=()):
        return _GenericSubsetObjective(self, points, indices, label, spec)

    def active_rows(self, points):
        """Rows that can carry gradient at ``points``; ``None`` means all of them."""
        return None


def fd_hvp(victim, points, label, spec, v):
    """Central difference of analytic gradients along ``v``."""
    x = np.asarray(points, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    vmax = np.abs(v).max() if v.size else 0.0
    if vmax == 0.0:
        return np.zeros_like(x)
    h = 1e-4 * max(1.0, np.abs(x).max()) / max(vmax, 1e-12)
    gp = victim.grad(x + h * v, label, spec)
    gm = victim.grad(x - h * v, label, spec)
    return (gp - gm) / (2.0 * h)


class _HvpCurvature:
    """Hessian columns via whole-cloud HVPs; used for victims without structure."""

    def __init__(self, victim, points, label, spec):
        self.victim, self.label, self.spec = victim, label, spec
        self.points = np.asarray(points, dtype=np.float64)
        self.grad = victim.grad(self.points, label, spec)

    def columns(self, c, rows):
        """Rows ``rows`` of the three Hessian columns belonging to point ``c``: (3*len(rows), 3)."""
        rows = list(rows)
        out = np.empty((3 * len(rows), 3))
        for d in range(3):
            v = np.zeros_like(self.points)
            v[c, d] = 1.0
            hv = self.victim.hvp(self.points, self.label, self.spec, v)
            out[:, d] = hv[rows].reshape(-1)
        return out


class _GenericSubsetObjective:
    def __init__(self, victim, points, indices, label, spec):
        self.victim, self.label, self.spec = victim, label, spec
        self.points = np.asarray(points, dtype=np.float64)
        self.indices = np.asarray(indices, dtype=np.int64)
        self.woken = np.zeros(0, dtype=np.int64)

    def __call__(self, rows):
        pts = self.points.copy()
        pts[self.indices] = rows
        loss, g = self.victim.loss_and_grad(pts, self.label, self.spec)[:2]
        try:
            z = self.victim.logits(pts)
        except NotImplementedError:
            z = None
        return loss, g[self.indices], z


# -- the point-set network --------------------------------------------------

@dataclass
class ClassifierModel(Victim):
    point_dims: tuple
    head_dims: tuple
    num_classes: int
    activation: str = "tanh"
    weights: list = field(default_factory=list)
    biases: list = field(default_factory=list)
    classes: list = field(default_factory=list)

    def __post_init__(self):
        self.point_dims = tuple(int(d) for d in self.point_dims)
        self.head_dims = tuple(int(d) for d in self.head_dims)
        if self.activation not in ACTIVATIONS:
            raise ModelError(f"unknown activation {self.activation!r}")
        if len(self.point_dims) < 2 or self.point_dims[0] != 3:
            raise ModelError("point_dims must start at 3 and have at least one layer")
        dims = self.layer_shapes()
        if len(self.weights) != len(dims) or len(self.biases) != len(dims):
            raise ModelError(f"expected {len(dims)} layers, got {len(self.weights)} weights")
        self.weights = [np.asarray(w, dtype=np.float64) for w in self.weights]
        self.biases = [np.asarray(b, dtype=np.float64) for b in self.biases]
        for (i, o), w, b in zip(dims, self.weights, self.biases):
            if w.shape != (i, o) or b.shape != (o,):
                raise ModelError(f"layer shape mismatch: expected {(i, o)}, got {w.shape}/{b.shape}")
            if not (np.all(np.isfinite(w)) and np.all(np.isfinite(b))):
                raise ModelError("non-finite parameters")

    def layer_shapes(self):
        dims = list(self.point_dims) + list(self.head_dims) + [self.num_classes]
        return list(zip(dims[:-1], dims[1:]))

    @property
    def n_point_layers(self):
        return len(self.point_dims) - 1

    @property
    def n_params(self):
        return sum(w.size + b.size for w, b in zip(self.weights, self.biases))

    def copy(self):
        return ClassifierModel(self.point_dims, self.head_dims, self.num_classes, self.activation,
                               [w.copy() for w in self.weights], [b.copy() for b in self.biases],
                               list(self.classes))

    # forward pieces
    def _point_layers(self, x, second=True):
        d1s, d2s = [], []
        h = x
        for w, b in zip(self.weights[:self.n_point_layers], self.biases[:self.n_point_layers]):
            h, d1, d2 = _activate(self.activation, h @ w + b, second)
            d1s.append(d1)
            d2s.append(d2)
        return h, d1s, d2s

    def _head(self, z):
        layers = list(zip(self.weights[self.n_point_layers:], self.biases[self.n_point_layers:]))
        d1s, d2s = [], []
        a = z
        for i, (w, b) in enumerate(layers):
            q = a @ w + b
            if i == len(layers) - 1:
                a = q
            else:
                a, d1, d2 = _activate(self.activation, q)
                d1s.append(d1)
                d2s.append(d2)
        return a, d1s, d2s

    def _head_back(self, g, d1s):
        ws = self.weights[self.n_point_layers:]
        for i in range(len(ws) - 1, -1, -1):
            if i < len(ws) - 1:
                g = g * d1s[i]
            g = g @ ws[i].T
        return g

    def logits(self, points):
        h, _, _ = self._point_layers(_points(points), second=False)
        return self._head(h.max(axis=0))[0]

    def _cache(self, points, label, spec):
        x = _points(points)
        h, pd1, pd2 = self._point_layers(x)
        arg = h.argmax(axis=0)
        z = h[arg, np.arange(h.shape[1])]
        logits, hd1, hd2 = self._head(z)
        loss, gl, hl = loss_from_logits(logits, label, spec)
        gz = self._head_back(gl, hd1)
        return dict(x=x, h=h, pd1=pd1, pd2=pd2, arg=arg, z=z, logits=logits,
                    hd1=hd1, hd2=hd2, loss=loss, gl=gl, hl=hl, gz=gz)

    def loss_and_grad(self, points, label, spec):
        c = self._cache(points, label, spec)
        return c["loss"], self._grad_from_cache(c), c["logits"]

    def _grad_from_cache(self, c):
        x, arg, gz = c["x"], c["arg"], c["gz"]
        act, pos = np.unique(arg, return_inverse=True)
        G = np.zeros((len(act), len(gz)))
        G[pos, np.arange(len(gz))] = gz
        for i in range(self.n_point_layers - 1, -1, -1):
            G = (G * c["pd1"][i][act]) @ self.weights[i].T
        out = np.zeros_like(x)
        out[act] = G
        return out

    def _head_rop(self, zdot, c):
        """Tangent of the logit-space adjoint, pulled back to the pooled features.

        ``zdot`` has shape (k, F) for k simultaneous directions.
        """
        ws = self.weights[self.n_point_layers:]
        nl = len(ws)
        qdots = []
        a = zdot
        for i in range(nl):
            q = a @ ws[i]
            if i < nl - 1:
                qdots.append(q)
                a = c["hd1"][i] * q
            else:
                a = q
        gdot = a @ c["hl"] if c["hl"] is not None else np.zeros_like(a)
        # first-order adjoints of the head at the expansion point
        gs = [c["gl"]]
        for i in range(nl - 1, 0, -1):
            g = gs[-1] if i == nl - 1 else gs[-1] * c["hd1"][i]
            gs.append(g @ ws[i].T)
        gs = gs[::-1]  # gs[i] = adjoint of the output of head layer i
        for i in range(nl - 1, -1, -1):
            if i < nl - 1:
                gdot = gdot * c["hd1"][i] + gs[i] * c["hd2"][i] * qdots[i]
            gdot = gdot @ ws[i].T
        return gdot

    def hvp(self, points, label, spec, v, method="exact"):
        """Hessian of the loss w.r.t. flattened coordinates applied to ``v`` (n x 3)."""
        if method == "fd":
            return fd_hvp(self, points, label, spec, v)
        if method != "exact":
            raise ModelError(f"unknown hvp method {method!r}")
        c = self._cache(points, label, spec)
        return self._hvp_from_cache(c, np.asarray(v, dtype=np.float64))

    def _hvp_from_cache(self, c, v):
        arg, gz = c["arg"], c["gz"]
        F = len(gz)
        act, pos = np.unique(arg, return_inverse=True)
        chan = np.arange(F)
        nl = self.n_point_layers
        # tangents through the point MLP, active rows only
        pdots = []
        t = v[act]
        for i in range(nl):
            p = t @ self.weights[i]
            pdots.append(p)
            t = c["pd1"][i][act] * p
        zdot = t[pos, chan]
        gzdot = self._head_rop(zdot[None, :], c)[0]
        G = np.zeros((len(act), F))
        Gd = np.zeros((len(act), F))
        G[pos, chan] = gz
        Gd[pos, chan] = gzdot
        for i in range(nl - 1, -1, -1):
            d1, d2 = c["pd1"][i][act], c["pd2"][i][act]
            gp = G * d1
            gdp = Gd * d1 + G * d2 * pdots[i]
            G = gp @ self.weights[i].T
            Gd = gdp @ self.weights[i].T
        out = np.zeros_like(v)
        out[act] = Gd
        return out

    def curvature(self, points, label, spec):
        return _NetworkCurvature(self, self._cache(points, label, spec))

    def subset_objective(self, points, indices, label, spec, watch=()):
        return _NetworkSubsetObjective(self, _points(points), indices, label, spec, watch)

    def active_rows(self, points):
        h = self._point_layers(_points(points), second=False)[0]
        return np.unique(h.argmax(axis=0))


class _NetworkCurvature:
    """Hessian columns of one point, restricted to chosen rows.

    Only points that win at least one pooled channel carry gradient, so any
    other point has an identically zero Hessian row and column.
    """

    def __init__(self, model: ClassifierModel, cache):
        self.model, self.c = model, cache
        self.grad = model._grad_from_cache(cache)
        self._jac = {}

    def _masked_jacobian(self, i):
        """(F, 3) Jacobian of point i's pooled contributions w.r.t. its coordinates."""
        if i not in self._jac:
            m, c = self.model, self.c
            t = np.eye(3)
            for k in range(m.n_point_layers):
                t = c["pd1"][k][i] * (t @ m.weights[k])
            mask = c["arg"] == i
            self._jac[i] = (t * mask).T
        return self._jac[i]

    def columns(self, c_idx, rows):
        rows = list(rows)
        out = np.zeros((3 * len(rows), 3))
        m, c = self.model, self.c
        mask_c = c["arg"] == c_idx
        if not mask_c.any():
            return out
        zdot = self._masked_jacobian(c_idx).T  # (3 directions, F)
        gzdot = m._head_rop(zdot, c)
        for r, i in enumerate(rows):
            if i == c_idx:
                block = self._self_block(c_idx, gzdot, mask_c)
            elif (c["arg"] == i).any():
                block = (gzdot @ self._masked_jacobian(i)).T
            else:
                continue
            out[3 * r:3 * r + 3] = block
        return out

    def _self_block(self, i, gzdot, mask):
        m, c = self.model, self.c
        nl = m.n_point_layers
        pdots = []
        t = np.eye(3)
        for k in range(nl):
            p = t @ m.weights[k]
            pdots.append(p)
            t = c["pd1"][k][i] * p
        G = c["gz"] * mask
        Gd = gzdot * mask
        for k in range(nl - 1, -1, -1):
            d1, d2 = c["pd1"][k][i], c["pd2"][k][i]
            Gd = (Gd * d1 + G * d2 * pdots[k]) @ m.weights[k].T
            G = (G * d1) @ m.weights[k].T
        return Gd.T


class _NetworkSubsetObjective:
    """Loss and gradient when only ``indices`` rows move; other rows stay pooled from a cache.

    Rows listed in ``watch`` are fixed rows the caller wants to hear about:
    after each call ``woken`` holds those that won a pooled channel.
    """

    def __init__(self, model: ClassifierModel, points, indices, label, spec, watch=()):
        self.model, self.label, self.spec = model, label, spec
        idx = np.asarray(indices, dtype=np.int64)
        order = np.argsort(idx, kind="stable")
        self.indices, self.order = idx, order
        self.sorted_idx = idx[order]
        h = model._point_layers(points, second=False)[0]
        rest = h.copy()
        rest[idx] = -np.inf
        self.rest_idx = rest.argmax(axis=0)
        self.rest_val = rest[self.rest_idx, np.arange(h.shape[1])]
        self.watch = np.isin(self.rest_idx, np.asarray(list(watch), dtype=np.int64))
        self.woken = np.zeros(0, dtype=np.int64)

    def __call__(self, rows):
        m = self.model
        y = np.asarray(rows, dtype=np.float64)[self.order]
        h, d1s, _ = m._point_layers(y, second=False)
        F = h.shape[1]
        chan = np.arange(F)
        if len(y):
            sub_pos = h.argmax(axis=0)
            sub_val = h[sub_pos, chan]
            sub_idx = self.sorted_idx[sub_pos]
            take = (sub_val > self.rest_val) | ((sub_val == self.rest_val) & (sub_idx < self.rest_idx))
        else:  # nothing moves: the pooled features are the cached background
            sub_pos = np.zeros(F, dtype=np.int64)
            sub_val = self.rest_val
            take = np.zeros(F, dtype=bool)
        z = np.where(take, sub_val, self.rest_val)
        hit = self.watch & ~take
        self.woken = np.unique(self.rest_idx[hit]) if hit.any() else np.zeros(0, dtype=np.int64)
        logits, hd1, _ = m._head(z)
        loss, gl, _ = loss_from_logits(logits, self.label, self.spec)
        gz = m._head_back(gl, hd1)
        G = np.zeros_like(h)
        G[sub_pos[take], chan[take]] = gz[take]
        for i in range(m.n_point_layers - 1, -1, -1):
            G = (G * d1s[i]) @ m.weights[i].T
        grad = np.empty_like(G)
        grad[self.order] = G
        return loss, grad, logits


# -- construction, module-level API -----------------------------------------

def init_model(num_classes, point_dims=(3, 32, 64, 128), head_dims=(64,), activation="tanh", seed=0,
               classes=None):
    """Glorot-uniform weights, zero biases."""
    rng = np.random.default_rng(seed)
    dims = list(point_dims) + list(head_dims) + [num_classes]
    weights, biases = [], []
    for i, o in zip(dims[:-1], dims[1:]):
        lim = np.sqrt(6.0 / (i + o))
        weights.append(rng.uniform(-lim, lim, size=(i, o)))
        biases.append(np.zeros(o))
    return ClassifierModel(tuple(point_dims), tuple(head_dims), num_classes, activation, weights, biases,
                           list(classes or []))


def forward(model, cloud):
    return model.logits(_points(cloud))


def mis_loss(model, cloud, label, spec=LossSpec()):
    return model.loss(_points(cloud), label, spec)


def grad_points(model, cloud, label, spec=LossSpec()):
    return model.grad(_points(cloud), label, spec)


def hvp_points(model, cloud, label, spec, v, method=None):
    kw = {} if method is None else {"method": method}
    return model.hvp(_points(cloud), label, spec, v, **kw)


# -- training ---------------------------------------------------------------

def _batch_grads(model: ClassifierModel, X, y):
    """Mean cross-entropy over a batch (B, n, 3) and parameter gradients."""
    nl = model.n_point_layers
    hs, d1s = [X], []
    h = X
    for w, b in zip(model.weights[:nl], model.biases[:nl]):
        h, d1, _ = _activate(model.activation, h @ w + b)
        hs.append(h)
        d1s.append(d1)
    arg = h.argmax(axis=1)
    z = np.take_along_axis(h, arg[:, None, :], axis=1)[:, 0, :]
    heads = [z]
    hd1 = []
    a = z
    hw = list(zip(model.weights[nl:], model.biases[nl:]))
    for i, (w, b) in enumerate(hw):
        q = a @ w + b
        if i == len(hw) - 1:
            a = q
        else:
            a, d1, _ = _activate(model.activation, q)
            hd1.append(d1)
        heads.append(a)
    logits = a
    B = len(y)
    m = logits.max(axis=1, keepdims=True)
    e = np.exp(logits - m)
    p = e / e.sum(axis=1, keepdims=True)
    loss = float(-np.mean(np.log(p[np.arange(B), y])))
    g = p.copy()
    g[np.arange(B), y] -= 1.0
    g /= B
    gw = [None] * len(model.weights)
    gb = [None] * len(model.biases)
    for i in range(len(hw) - 1, -1, -1):
        if i < len(hw) - 1:
            g = g * hd1[i]
        gw[nl + i] = heads[i].T @ g
        gb[nl + i] = g.sum(axis=0)
        g = g @ hw[i][0].T
    G = np.zeros_like(h)
    np.put_along_axis(G, arg[:, None, :], g[:, None, :], axis=1)
    for i in range(nl - 1, -1, -1):
        gp = G * d1s[i]
        flat = gp.reshape(-1, gp.shape[-1])
        gw[i] = hs[i].reshape(-1, hs[i].shape[-1]).T @ flat
        gb[i] = flat.sum(axis=0)
        if i:
            G = gp @ model.weights[i].T
    return loss, gw, gb, logits


def batch_logits(model: ClassifierModel, X):
    nl = model.n_point_layers
    h = X
    for w, b in zip(model.weights[:nl], model.biases[:nl]):
        h = _activate(model.activation, h @ w + b)[0]
    return model._head(h.max(axis=1))[0]


def accuracy(model, clouds, labels, batch_size=64):
    if len(clouds) == 0:
        return float("nan")
    correct = 0
    for s in range(0, len(clouds), batch_size):
        X = np.stack(clouds[s:s + batch_size])
        correct += int((batch_logits(model, X).argmax(axis=1) == np.asarray(labels[s:s + batch_size])).sum())
    return correct / len(clouds)


@dataclass
class TrainReport:
    epochs: int
    final_loss: float
    train_accuracy: float
    test_accuracy: float
    history: list = field(default_factory=list)


def _load_split(manifest, split):
    items = manifest.split(split)
    clouds = [manifest.load(s).points for s in items]
    return clouds, [s.label for s in items]


def train(model: ClassifierModel, manifest: DatasetManifest, epochs=30, lr=1e-3, seed=0, batch_size=32,
          log=None):
    """Adam on mean cross-entropy; returns a new model (float32-representable) and a report.

    All clouds in a batch must have equal point counts.
    """
    if epochs < 1:
        raise ModelError("epochs must be >= 1")
    Xtr, ytr = _load_split(manifest, "train")
    if not Xtr:
        raise ModelError("manifest has no training samples")
    Xte, yte = _load_split(manifest, "test")
    model = model.copy()
    params = model.weights + model.biases
    m1 = [np.zeros_like(p) for p in params]
    m2 = [np.zeros_like(p) for p in params]
    b1, b2, eps = 0.9, 0.999, 1e-8
    rng = np.random.default_rng(seed)
    Xtr_arr = np.stack(Xtr)
    ytr_arr = np.asarray(ytr)
    step = 0
    history = []
    for epoch in range(epochs):
        order = rng.permutation(len(Xtr_arr))
        losses = []
        for s in range(0, len(order), batch_size):
            sel = order[s:s + batch_size]
            loss, gw, gb, _ = _batch_grads(model, Xtr_arr[sel], ytr_arr[sel])
            losses.append(loss)
            step += 1
            for k, (p, g) in enumerate(zip(params, gw + gb)):
                m1[k] = b1 * m1[k] + (1 - b1) * g
                m2[k] = b2 * m2[k] + (1 - b2) * g * g
                mhat = m1[k] / (1 - b1 ** step)
                vhat = m2[k] / (1 - b2 ** step)
                p -= lr * mhat / (np.sqrt(vhat) + eps)
        history.append(float(np.mean(losses)))
        if log:
            log(f"epoch {epoch + 1}/{epochs} loss {history[-1]:.4f}")
    # round through float32 so the in-memory model equals its checkpoint
    model.weights = [w.astype(np.float32).astype(np.float64) for w in model.weights]
    model.biases = [b.astype(np.float32).astype(np.float64) for b in model.biases]
    model.classes = list(manifest.classes)
    report = TrainReport(epochs, history[-1], accuracy(model, Xtr, ytr), accuracy(model, Xte, yte), history)
    return model, report


# -- checkpoint -------------------------------------------------------------

def save_model(model: ClassifierModel, path):
    header = json.dumps({
        "arch": "pointmlp-maxpool",
        "point_dims": list(model.point_dims),
        "head_dims": list(model.head_dims),
        "activation": model.activation,
        "num_classes": model.num_classes,
        "classes": list(model.classes),
    }, sort_keys=True).encode("utf-8")
    blob = b"".join(np.asarray(a, dtype="<f4").tobytes()
                    for w, b in zip(model.weights, model.biases) for a in (w, b))
    with open(path, "wb") as fh:
        fh.write(MAGIC + struct.pack("<I", len(header)) + header + blob)


def load_model(path) -> ClassifierModel:
    data = open(path, "rb").read()
    if data[:8] != MAGIC:
        raise ModelError(f"{path}: not a model checkpoint")
    (hlen,) = struct.unpack("<I", data[8:12])
    head = json.loads(data[12:12 + hlen].decode("utf-8"))
    if head.get("arch") != "pointmlp-maxpool":
        raise ModelError(f"{path}: unsupported architecture {head.get('arch')!r}")
    params = np.frombuffer(data[12 + hlen:], dtype="<f4").astype(np.float64)
    dims = list(head["point_dims"]) + list(head["head_dims"]) + [head["num_classes"]]
    weights, biases, off = [], [], 0
    for i, o in zip(dims[:-1], dims[1:]):
        weights.append(params[off:off + i * o].reshape(i, o))
        off += i * o
        biases.append(params[off:off + o].copy())
        off += o
    if off != params.size:
        raise ModelError(f"{path}: parameter blob has {params.size} values, expected {off}")
    return ClassifierModel(tuple(head["point_dims"]), tuple(head["head_dims"]), int(head["num_classes"]),
                           head["activation"], weights, biases, list(head.get("classes", [])))
