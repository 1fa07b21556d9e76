"""Point-cloud data model, ``.xyz`` I/O, preprocessing and the synthetic shape dataset."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

SHAPES = ("sphere", "cube", "cylinder", "cone", "torus", "pyramid", "disk", "helix")
SPLITS = ("train", "test")


class PointSetError(ValueError):
    pass


@dataclass
class PointCloud:
    points: np.ndarray
    label: int = -1
    id: str = ""

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64)
        if pts.ndim != 2 or pts.shape[1] != 3:
            raise PointSetError(f"points must be n x 3, got shape {pts.shape}")
        if pts.shape[0] < 1:
            raise PointSetError("point cloud is empty")
        if not np.all(np.isfinite(pts)):
            raise PointSetError("point cloud has non-finite coordinates")
        self.points = pts

    def __len__(self):
        return self.points.shape[0]

    def with_points(self, points):
        return PointCloud(points, self.label, self.id)


@dataclass
class Sample:
    path: str
    label: int
    split: str


@dataclass
class DatasetManifest:
    classes: list
    samples: list = field(default_factory=list)
    seed: int = 0
    root: Path = field(default=Path("."), repr=False, compare=False)

    def split(self, name):
        return [s for s in self.samples if s.split == name]

    def resolve(self, sample: Sample) -> Path:
        return self.root / sample.path

    def load(self, sample: Sample) -> PointCloud:
        cloud = load_xyz(self.resolve(sample))
        return PointCloud(cloud.points, sample.label, Path(sample.path).stem)

    def save(self, path):
        path = Path(path)
        doc = {
            "classes": list(self.classes),
            "seed": int(self.seed),
            "samples": [{"path": s.path, "label": s.label, "split": s.split} for s in self.samples],
        }
        path.write_text(json.dumps(doc, indent=1) + "\n", encoding="utf-8")


def load_manifest(path) -> DatasetManifest:
    path = Path(path)
    doc = json.loads(path.read_text(encoding="utf-8"))
    classes = [str(c) for c in doc["classes"]]
    samples = [Sample(str(s["path"]), int(s["label"]), str(s["split"])) for s in doc["samples"]]
    manifest = DatasetManifest(classes, samples, int(doc.get("seed", 0)), root=path.parent)
    for s in samples:
        if not 0 <= s.label < len(classes):
            raise PointSetError(f"sample {s.path}: label {s.label} outside [0, {len(classes)})")
        if s.split not in SPLITS:
            raise PointSetError(f"sample {s.path}: unknown split {s.split!r}")
        if not manifest.resolve(s).is_file():
            raise PointSetError(f"sample file missing: {manifest.resolve(s)}")
    return manifest


def load_xyz(path) -> PointCloud:
    """Parse an ASCII ``.xyz`` file: three numbers per line, ``#`` comments skipped."""
    rows = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            text = line.strip()
            if not text or text.startswith("#"):
                continue
            fields = text.split()
            if len(fields) != 3:
                raise PointSetError(f"{path}: line {lineno}: expected 3 fields, got {len(fields)}")
            try:
                rows.append([float(f) for f in fields])
            except ValueError:
                raise PointSetError(f"{path}: line {lineno}: cannot parse {text!r}") from None
    if not rows:
        raise PointSetError(f"{path}: no points")
    return PointCloud(np.array(rows), -1, Path(path).stem)


def save_xyz(path, cloud):
    pts = cloud.points if isinstance(cloud, PointCloud) else np.asarray(cloud, dtype=np.float64)
    lines = ["%.9g %.9g %.9g" % tuple(p) for p in pts]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def normalize(cloud: PointCloud) -> PointCloud:
    """Center on the centroid and scale the farthest point to unit norm."""
    pts = cloud.points - cloud.points.mean(axis=0)
    scale = np.sqrt((pts ** 2).sum(axis=1)).max()
    if scale <= 0 or not np.isfinite(scale):
        return cloud.with_points(np.zeros_like(pts))
    return cloud.with_points(pts / scale)


def fps_sample(cloud: PointCloud, m: int) -> PointCloud:
    """Farthest point sampling, seeded with the point farthest from the centroid."""
    pts = cloud.points
    n = len(pts)
    if not 1 <= m <= n:
        raise PointSetError(f"cannot sample {m} points from {n}")
    centroid = pts.mean(axis=0)
    first = int(np.argmax(((pts - centroid) ** 2).sum(axis=1)))
    chosen = [first]
    dist = ((pts - pts[first]) ** 2).sum(axis=1)
    for _ in range(m - 1):
        nxt = int(np.argmax(dist))
        chosen.append(nxt)
        dist = np.minimum(dist, ((pts - pts[nxt]) ** 2).sum(axis=1))
    return cloud.with_points(pts[chosen])


# -- synthetic shapes -------------------------------------------------------
# Each generator returns raw surface samples (before jitter and normalization).

def _triangle(rng, a, b, c, m):
    u = np.sqrt(rng.random(m))[:, None]
    v = rng.random(m)[:, None]
    return (1 - u) * a + u * (1 - v) * b + u * v * c


def _by_area(rng, areas, n):
    areas = np.asarray(areas, dtype=np.float64)
    return rng.multinomial(n, areas / areas.sum())


def _sphere(rng, n):
    v = rng.normal(size=(n, 3))
    return v / np.linalg.norm(v, axis=1, keepdims=True)


def _cube(rng, n):
    half = rng.uniform(0.85, 1.15, size=3) / 2
    faces = []
    areas = [half[1] * half[2]] * 2 + [half[0] * half[2]] * 2 + [half[0] * half[1]] * 2
    for f, cnt in enumerate(_by_area(rng, areas, n)):
        axis, sign = divmod(f, 2)
        p = rng.uniform(-1, 1, size=(cnt, 3)) * half
        p[:, axis] = half[axis] * (1 if sign else -1)
        faces.append(p)
    return np.concatenate(faces)


def _cylinder(rng, n):
    r, h = rng.uniform(0.4, 0.7), rng.uniform(1.2, 2.0)
    side, top, bottom = _by_area(rng, [2 * np.pi * r * h, np.pi * r * r, np.pi * r * r], n)
    t = rng.uniform(0, 2 * np.pi, side)
    parts = [np.column_stack([r * np.cos(t), r * np.sin(t), rng.uniform(-h / 2, h / 2, side)])]
    for cnt, z in ((top, h / 2), (bottom, -h / 2)):
        rad = r * np.sqrt(rng.random(cnt))
        t = rng.uniform(0, 2 * np.pi, cnt)
        parts.append(np.column_stack([rad * np.cos(t), rad * np.sin(t), np.full(cnt, z)]))
    return np.concatenate(parts)


def _cone(rng, n):
    r, h = rng.uniform(0.5, 0.9), rng.uniform(1.0, 1.6)
    slant = np.hypot(r, h)
    side, base = _by_area(rng, [np.pi * r * slant, np.pi * r * r], n)
    s = np.sqrt(rng.random(side))  # fraction of the way from apex to rim
    t = rng.uniform(0, 2 * np.pi, side)
    lateral = np.column_stack([s * r * np.cos(t), s * r * np.sin(t), h - s * h])
    rad = r * np.sqrt(rng.random(base))
    t = rng.uniform(0, 2 * np.pi, base)
    disk = np.column_stack([rad * np.cos(t), rad * np.sin(t), np.zeros(base)])
    return np.concatenate([lateral, disk])


def _torus(rng, n):
    big, small = rng.uniform(0.7, 1.0), rng.uniform(0.2, 0.35)
    out = np.empty((0, 3))
    while len(out) < n:
        u = rng.uniform(0, 2 * np.pi, 2 * n)
        v = rng.uniform(0, 2 * np.pi, 2 * n)
        keep = rng.random(2 * n) < (big + small * np.cos(v)) / (big + small)
        u, v = u[keep], v[keep]
        ring = big + small * np.cos(v)
        out = np.concatenate([out, np.column_stack([ring * np.cos(u), ring * np.sin(u), small * np.sin(v)])])
    return out[:n]


def _pyramid(rng, n):
    s, h = rng.uniform(1.0, 1.5) / 2, rng.uniform(0.8, 1.3)
    corners = np.array([[-s, -s, 0], [s, -s, 0], [s, s, 0], [-s, s, 0]])
    apex = np.array([0.0, 0.0, h])
    side_area = s * np.hypot(s, h)  # each of 4 triangles: base 2s, slant height hypot(s, h)
    counts = _by_area(rng, [side_area] * 4 + [4 * s * s], n)
    parts = [_triangle(rng, corners[i], corners[(i + 1) % 4], apex, counts[i]) for i in range(4)]
    base = rng.uniform(-s, s, size=(counts[4], 3))
    base[:, 2] = 0
    parts.append(base)
    return np.concatenate(parts)


def _disk(rng, n):
    rad = np.sqrt(rng.random(n))
    t = rng.uniform(0, 2 * np.pi, n)
    return np.column_stack([rad * np.cos(t), rad * np.sin(t), np.zeros(n)])


def _helix(rng, n):
    turns, height, tube = rng.uniform(2, 4), rng.uniform(1.5, 2.5), 0.04
    s = rng.random(n)
    t = 2 * np.pi * turns * s
    centre = np.column_stack([np.cos(t), np.sin(t), height * (s - 0.5)])
    return centre + tube * _sphere(rng, n)


_GENERATORS = {
    "sphere": _sphere, "cube": _cube, "cylinder": _cylinder, "cone": _cone,
    "torus": _torus, "pyramid": _pyramid, "disk": _disk, "helix": _helix,
}


def shape_points(name, n_points, rng):
    """Raw surface samples of one shape instance (no jitter, not normalized)."""
    try:
        gen = _GENERATORS[name]
    except KeyError:
        raise PointSetError(f"unknown shape class {name!r}; choose from {', '.join(SHAPES)}") from None
    pts = gen(rng, n_points)
    return pts[rng.permutation(len(pts))]


def gen_synthetic(out_dir, classes=SHAPES, per_class=100, n_points=256, jitter_sigma=0.01, seed=0):
    """Write a synthetic shape dataset under ``out_dir`` and return its manifest.

    Every sample draws from its own generator keyed on (seed, shape, index), so a
    class's files do not depend on which other classes are requested.
    """
    classes = list(classes)
    for name in classes:
        if name not in _GENERATORS:
            raise PointSetError(f"unknown shape class {name!r}; choose from {', '.join(SHAPES)}")
    if n_points < 16:
        raise PointSetError("n_points must be >= 16")
    if jitter_sigma < 0:
        raise PointSetError("jitter_sigma must be >= 0")
    if per_class < 1:
        raise PointSetError("per_class must be >= 1")

    out_dir = Path(out_dir)
    (out_dir / "points").mkdir(parents=True, exist_ok=True)
    n_train = int(round(0.8 * per_class))
    samples = []
    for label, name in enumerate(classes):
        shape_id = SHAPES.index(name)
        order = np.random.default_rng([seed, shape_id, 1 << 20]).permutation(per_class)
        train_ids = set(order[:n_train].tolist())
        for i in range(per_class):
            rng = np.random.default_rng([seed, shape_id, i])
            pts = shape_points(name, n_points, rng)
            if jitter_sigma > 0:
                pts = pts + rng.normal(scale=jitter_sigma, size=pts.shape)
            cloud = normalize(PointCloud(pts))
            rel = f"points/{name}_{i:04d}.xyz"
            save_xyz(out_dir / rel, cloud)
            samples.append(Sample(rel, label, "train" if i in train_ids else "test"))

    manifest = DatasetManifest(classes, samples, seed, root=out_dir)
    manifest.save(out_dir / "manifest.json")
    return manifest
