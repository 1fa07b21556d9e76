import math
import struct

import numpy as np
import pytest

from conftest import small_model
from scpattack.classifier import (MAGIC, ClassifierModel, LossSpec, ModelError, forward, grad_points, hvp_points,
                                  init_model, is_adversarial, load_model, loss_from_logits, mis_loss, predict,
                                  save_model, train)
from scpattack.pointset import DatasetManifest, PointCloud, Sample, save_xyz
from scpattack.schur import assemble_block

CW = LossSpec("cw_margin")
NCE = LossSpec("neg_cross_entropy")


def ref_logits(model, pts):
    """Loop-based re-implementation of the network (no shared code with the package)."""
    act = {"tanh": math.tanh, "softplus": lambda t: math.log1p(math.exp(-abs(t))) + max(t, 0.0),
           "relu": lambda t: max(t, 0.0)}[model.activation]
    nl = model.n_point_layers
    feats = []
    for p in pts:
        h = list(p)
        for w, b in zip(model.weights[:nl], model.biases[:nl]):
            h = [act(sum(h[i] * w[i][j] for i in range(len(h))) + b[j]) for j in range(len(b))]
        feats.append(h)
    z = [max(f[j] for f in feats) for j in range(len(feats[0]))]
    hw = list(zip(model.weights[nl:], model.biases[nl:]))
    for k, (w, b) in enumerate(hw):
        q = [sum(z[i] * w[i][j] for i in range(len(z))) + b[j] for j in range(len(b))]
        z = q if k == len(hw) - 1 else [act(t) for t in q]
    return np.array(z)


def ref_loss(z, y, spec):
    z = np.asarray(z, dtype=float)
    if spec.kind == "neg_cross_entropy":
        return math.log(math.exp(z[y]) / sum(math.exp(t) for t in z))
    other = max(z[j] for j in range(len(z)) if j != y)
    return max(z[y] - other, -spec.kappa)


def cloud(n=12, seed=0):
    return np.random.default_rng(seed).normal(size=(n, 3)) * 0.6


@pytest.mark.parametrize("act", ["tanh", "softplus", "relu"])
def test_forward_matches_reference(act):
    m = small_model(act, seed=3)
    pts = cloud(9, 1)
    np.testing.assert_allclose(forward(m, PointCloud(pts)), ref_logits(m, pts), atol=1e-10)


def test_permutation_and_duplication_invariance():
    m = small_model(seed=1)
    pts = cloud(15, 2)
    z = m.logits(pts)
    perm = np.random.default_rng(0).permutation(15)
    assert np.array_equal(m.logits(pts[perm]), z)
    assert np.array_equal(m.logits(np.vstack([pts, pts[:4]])), z)


def test_loss_examples():
    assert loss_from_logits(np.zeros(4), 2, NCE)[0] == pytest.approx(-math.log(4))
    assert loss_from_logits(np.array([5.0, 0, 0]), 0, CW)[0] == pytest.approx(5.0)
    assert loss_from_logits(np.array([0.0, 5, 0]), 0, LossSpec("cw_margin", 2.0))[0] == pytest.approx(-2.0)


def test_loss_random_against_reference():
    rng = np.random.default_rng(0)
    for _ in range(50):
        z = rng.normal(size=5) * 3
        y = int(rng.integers(5))
        for spec in (NCE, CW, LossSpec("cw_margin", 0.5)):
            assert loss_from_logits(z, y, spec)[0] == pytest.approx(ref_loss(z, y, spec), abs=1e-12)


def test_loss_spec_validation():
    with pytest.raises(ModelError):
        LossSpec("hinge")
    with pytest.raises(ModelError):
        LossSpec("cw_margin", -1.0)
    with pytest.raises(ModelError):
        LossSpec("cw_margin", float("inf"))


def test_margin_sign_matches_prediction():
    rng = np.random.default_rng(1)
    for _ in range(200):
        z = rng.integers(-2, 3, size=4).astype(float)  # many exact ties
        y = int(rng.integers(4))
        assert (loss_from_logits(z, y, CW)[0] <= 0) == is_adversarial(z, y)
    assert predict(np.array([1.0, 1.0, 0.0]), 0) == 1
    assert predict(np.array([1.0, 1.0, 0.0]), 1) == 0


def fd_grad(m, pts, y, spec, h=1e-4):
    g = np.zeros_like(pts)
    for i in range(pts.shape[0]):
        for d in range(3):
            e = np.zeros_like(pts)
            e[i, d] = h
            g[i, d] = (m.loss(pts + e, y, spec) - m.loss(pts - e, y, spec)) / (2 * h)
    return g


@pytest.mark.parametrize("act", ["tanh", "softplus"])
@pytest.mark.parametrize("spec", [CW, NCE], ids=["cw", "nce"])
def test_grad_finite_difference(act, spec):
    for seed in range(4):
        m = small_model(act, seed=seed)
        pts = cloud(10, seed)
        y = int(np.argmax(m.logits(pts)))  # margin is active
        g = grad_points(m, PointCloud(pts), y, spec)
        fd = fd_grad(m, pts, y, spec)
        assert np.abs(g - fd).max() <= 1e-4 * max(np.abs(fd).max(), 1e-8) + 1e-9


def test_grad_zero_for_dominated_point_relu():
    m = small_model("relu", seed=2)
    pts = cloud(10, 3)
    inner = pts.mean(axis=0, keepdims=True)
    pts = np.vstack([pts * 5, inner])
    h = pts
    for w, b in zip(m.weights[:m.n_point_layers], m.biases[:m.n_point_layers]):
        h = np.maximum(h @ w + b, 0)
    assert 10 not in set(h.argmax(axis=0).tolist())
    y = int(np.argmax(m.logits(pts)))
    g = m.grad(pts, y, CW)
    assert np.array_equal(g[10], np.zeros(3))


def test_grad_linearity():
    class Twice:
        def __init__(self, m):
            self.m = m

        def loss(self, p, y, s):
            return 2 * self.m.loss(p, y, s)

    m = small_model(seed=4)
    pts = cloud(8, 4)
    y = int(np.argmax(m.logits(pts)))
    np.testing.assert_allclose(fd_grad(Twice(m), pts, y, CW), 2 * m.grad(pts, y, CW), rtol=1e-5, atol=1e-9)


def test_hvp_zero_direction():
    m = small_model(seed=0)
    pts = cloud()
    for method in ("exact", "fd"):
        assert np.array_equal(hvp_points(m, pts, 0, CW, np.zeros_like(pts), method), np.zeros_like(pts))


@pytest.mark.parametrize("act", ["tanh", "softplus"])
def test_hvp_symmetry_and_exact_vs_fd(act):
    rng = np.random.default_rng(7)
    for t in range(10):
        m = small_model(act, seed=t)
        pts = cloud(10, t)
        y = int(np.argmax(m.logits(pts)))
        v, w = rng.normal(size=pts.shape), rng.normal(size=pts.shape)
        hv, hw = m.hvp(pts, y, CW, v), m.hvp(pts, y, CW, w)
        scale = np.linalg.norm(v) * np.linalg.norm(w) * max(np.abs(hv).max(), 1e-12)
        assert abs((w * hv).sum() - (v * hw).sum()) < 1e-5 * scale
        fd = m.hvp(pts, y, CW, v, method="fd")
        assert np.abs(fd - hv).max() < 1e-5 * max(np.abs(hv).max(), 1.0)


def test_hvp_method_validation():
    m = small_model()
    with pytest.raises(ModelError):
        m.hvp(cloud(), 0, CW, np.zeros((12, 3)), method="magic")


def dense_fd_hessian(m, pts, y, spec, h=1e-3):
    """Double finite differences of the loss itself."""
    x0 = pts.reshape(-1)
    n = x0.size
    f = lambda x: m.loss(x.reshape(-1, 3), y, spec)
    H = np.zeros((n, n))
    for i in range(n):
        for j in range(i, n):
            ei = np.zeros(n)
            ej = np.zeros(n)
            ei[i] = h
            ej[j] = h
            H[i, j] = H[j, i] = (f(x0 + ei + ej) - f(x0 + ei - ej) - f(x0 - ei + ej) + f(x0 - ei - ej)) / (4 * h * h)
    return H


def test_tiny_network_dense_hessian():
    # 2 points, one hidden unit per layer
    m = init_model(2, point_dims=(3, 1), head_dims=(1,), activation="tanh", seed=5)
    m.biases = [np.array([0.2]), np.array([-0.1]), np.array([0.3, -0.3])]
    pts = np.array([[0.3, -0.2, 0.5], [-0.4, 0.1, 0.2]])
    y = int(np.argmax(m.logits(pts)))
    H = dense_fd_hessian(m, pts, y, NCE)
    blk = assemble_block(m, pts, y, NCE, [0, 1]).matrix
    np.testing.assert_allclose(blk, H, atol=1e-5)


def test_curvature_columns_match_assembled_block():
    m = small_model("softplus", seed=8)
    pts = cloud(14, 8)
    y = int(np.argmax(m.logits(pts)))
    idx = [0, 3, 5, 9, 13]
    blk = assemble_block(m, pts, y, CW, idx).matrix
    curv = m.curvature(pts, y, CW)
    for p, c in enumerate(idx):
        np.testing.assert_allclose(curv.columns(c, idx), blk[:, 3 * p:3 * p + 3], atol=1e-10)


def test_subset_objective_matches_full():
    m = small_model(seed=9)
    pts = cloud(16, 9)
    y = int(np.argmax(m.logits(pts)))
    idx = [7, 2, 11]
    obj = m.subset_objective(pts, idx, y, CW)
    rows = pts[idx] + np.random.default_rng(0).normal(scale=0.3, size=(3, 3))
    full = pts.copy()
    full[idx] = rows
    loss, g, z = obj(rows)
    assert loss == pytest.approx(m.loss(full, y, CW), abs=1e-12)
    np.testing.assert_allclose(g, m.grad(full, y, CW)[idx], atol=1e-12)
    np.testing.assert_allclose(z, m.logits(full), atol=1e-12)


def test_model_validation():
    m = small_model()
    with pytest.raises(ModelError):
        ClassifierModel(m.point_dims, m.head_dims, m.num_classes, "gelu", m.weights, m.biases)
    with pytest.raises(ModelError):
        ClassifierModel(m.point_dims, m.head_dims, m.num_classes, "tanh", m.weights[:-1], m.biases[:-1])
    bad = [w.copy() for w in m.weights]
    bad[0][0, 0] = np.nan
    with pytest.raises(ModelError):
        ClassifierModel(m.point_dims, m.head_dims, m.num_classes, "tanh", bad, m.biases)


def test_checkpoint_roundtrip(tmp_path):
    m = small_model("softplus", seed=2)
    m.weights = [w.astype(np.float32).astype(np.float64) for w in m.weights]
    m.biases = [b.astype(np.float32).astype(np.float64) for b in m.biases]
    path = tmp_path / "m.scpmodel"
    save_model(m, path)
    raw = path.read_bytes()
    assert raw[:8] == MAGIC
    (hlen,) = struct.unpack("<I", raw[8:12])
    assert len(raw) == 12 + hlen + 4 * m.n_params
    back = load_model(path)
    pts = cloud()
    assert np.array_equal(back.logits(pts), m.logits(pts))
    assert back.activation == "softplus"
    path.write_bytes(b"NOTMODEL" + raw[8:])
    with pytest.raises(ModelError):
        load_model(path)
    path.write_bytes(raw[:-4])
    with pytest.raises(ModelError):
        load_model(path)


def _tiny_dataset(tmp_path, classes=2, per_class=6):
    rng = np.random.default_rng(0)
    samples = []
    for c in range(classes):
        for i in range(per_class):
            pts = rng.normal(size=(16, 3)) * (0.3 + c)
            rel = f"c{c}_{i}.xyz"
            save_xyz(tmp_path / rel, PointCloud(pts))
            samples.append(Sample(rel, c, "train" if i < per_class - 2 else "test"))
    return DatasetManifest([f"k{c}" for c in range(classes)], samples, 0, tmp_path)


def test_train_deterministic_and_one_class(tmp_path):
    man = _tiny_dataset(tmp_path)
    a, ra = train(init_model(2, (3, 8), (4,), seed=1), man, epochs=3, seed=5)
    b, rb = train(init_model(2, (3, 8), (4,), seed=1), man, epochs=3, seed=5)
    assert all(np.array_equal(x, y) for x, y in zip(a.weights + a.biases, b.weights + b.biases))
    assert ra.history == rb.history and len(ra.history) == 3
    one = DatasetManifest(["only"], [s for s in man.samples if s.label == 0], 0, tmp_path)
    _, r1 = train(init_model(1, (3, 8), (4,), seed=1), one, epochs=1)
    assert r1.train_accuracy == 1.0 and r1.test_accuracy == 1.0


def test_train_rejects_bad_input(tmp_path):
    man = _tiny_dataset(tmp_path)
    with pytest.raises(ModelError):
        train(init_model(2, (3, 8), (4,)), man, epochs=0)
    empty = DatasetManifest(man.classes, [s for s in man.samples if s.split == "test"], 0, tmp_path)
    with pytest.raises(ModelError):
        train(init_model(2, (3, 8), (4,)), empty, epochs=1)


def test_desk_model_accuracy(desk_trained):
    _, report, _ = desk_trained
    assert report.test_accuracy >= 0.90
