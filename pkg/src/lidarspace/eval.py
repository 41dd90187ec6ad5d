"""Normal, surface and dynamic-label metrics against simulator ground truth.

Percentages are in ``[0, 100]``. Reports are flat ``key=value`` text and
csv with one row per frame.
"""

from __future__ import annotations

import csv
import math
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
from scipy.spatial import cKDTree

from .los_field import DynamicMask, Label

DEFAULT_TAU_M = 0.2
PCA_NEIGHBOURS = 10


class MetricError(ValueError):
    pass


# normals -------------------------------------------------------------------
@dataclass
class NormalScore:
    mean_cosine: float
    per_point: np.ndarray
    n_valid: int


def normal_similarity(est, gt, valid_mask=None) -> NormalScore:
    """Sign-agnostic cosine ``|est . gt|`` over valid points.

    ``per_point`` is NaN where invalid. Rows are normalised first; a zero
    row in either input is treated as invalid.
    """
    est = np.asarray(est, dtype=np.float64).reshape(-1, 3)
    gt = np.asarray(gt, dtype=np.float64).reshape(-1, 3)
    if len(est) != len(gt):
        raise MetricError(f"{len(est)} estimated normals vs {len(gt)} ground truth")
    ne, ng = np.linalg.norm(est, axis=1), np.linalg.norm(gt, axis=1)
    valid = (ne > 0) & (ng > 0)
    if valid_mask is not None:
        valid &= np.asarray(valid_mask, dtype=bool)
    if not valid.any():
        raise MetricError("no valid normals to compare")
    cos = np.full(len(est), np.nan)
    c = np.abs(np.einsum("ij,ij->i", est[valid], gt[valid])) / (ne[valid] * ng[valid])
    cos[valid] = np.minimum(c, 1.0)
    return NormalScore(float(c.mean()), cos, int(valid.sum()))


def sequence_normal_similarity(scores) -> dict:
    """Mean of per-frame means and the point-weighted sequence mean."""
    scores = list(scores)
    if not scores:
        raise MetricError("no frames")
    per_frame = np.array([s.mean_cosine for s in scores])
    n = np.array([s.n_valid for s in scores], dtype=np.float64)
    return {"frame_mean": float(per_frame.mean()), "accumulated": float((per_frame * n).sum() / n.sum())}


def pca_normals(points, k: int = PCA_NEIGHBOURS) -> np.ndarray:
    """Baseline normals: smallest principal axis of each point's ``k`` nearest neighbours (itself included)."""
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    if len(pts) < 3:
        raise MetricError("PCA normals need at least 3 points")
    k = min(k, len(pts))
    _, idx = cKDTree(pts).query(pts, k=k)
    nb = pts[idx]
    nb = nb - nb.mean(axis=1, keepdims=True)
    cov = np.einsum("nki,nkj->nij", nb, nb)
    _, vecs = np.linalg.eigh(cov)
    return vecs[:, :, 0]


# surfaces ------------------------------------------------------------------
def nn_distances(src, dst) -> tuple[np.ndarray, np.ndarray]:
    """Distance and index of each ``src`` point's nearest ``dst`` point."""
    src = np.asarray(src, dtype=np.float64).reshape(-1, 3)
    dst = np.asarray(dst, dtype=np.float64).reshape(-1, 3)
    if len(dst) == 0:
        raise MetricError("empty target cloud")
    d, i = cKDTree(dst).query(src, k=1)
    return d, i


def brute_force_nn(src, dst, chunk: int = 512) -> tuple[np.ndarray, np.ndarray]:
    """All-pairs oracle for :func:`nn_distances`; ties go to the lowest index."""
    src = np.asarray(src, dtype=np.float64).reshape(-1, 3)
    dst = np.asarray(dst, dtype=np.float64).reshape(-1, 3)
    d = np.empty(len(src))
    idx = np.empty(len(src), dtype=np.int64)
    for a in range(0, len(src), chunk):
        diff = src[a:a + chunk, None, :] - dst[None, :, :]
        d2 = diff[..., 0] ** 2 + diff[..., 1] ** 2 + diff[..., 2] ** 2
        j = np.argmin(d2, axis=1)
        idx[a:a + chunk] = j
        d[a:a + chunk] = np.sqrt(d2[np.arange(len(j)), j])
    return d, idx


@dataclass
class CloudMetrics:
    rmse: float
    avg_hausdorff: float
    precision: float
    recall: float
    f1: float
    acc95: float
    n_recon: int
    n_gt: int
    tau_m: float

    def as_dict(self) -> dict:
        return asdict(self)


def cloud_metrics(recon, gt, tau_m: float = DEFAULT_TAU_M) -> CloudMetrics:
    """Compare reconstruction samples with ground-truth samples.

    ``rmse`` and ``acc95`` (95th percentile) use recon-to-gt nearest
    distances; ``avg_hausdorff`` averages the two directed mean distances;
    precision and recall count points within ``tau_m`` of the other cloud.
    """
    recon = np.asarray(recon, dtype=np.float64).reshape(-1, 3)
    gt = np.asarray(gt, dtype=np.float64).reshape(-1, 3)
    if len(recon) == 0 or len(gt) == 0:
        raise MetricError("cloud_metrics needs two non-empty clouds")
    if not tau_m > 0:
        raise MetricError("tau_m must be positive")
    d_rg, _ = nn_distances(recon, gt)
    d_gr, _ = nn_distances(gt, recon)
    precision = 100.0 * float(np.mean(d_rg <= tau_m))
    recall = 100.0 * float(np.mean(d_gr <= tau_m))
    f1 = 0.0 if precision + recall == 0 else 2 * precision * recall / (precision + recall)
    return CloudMetrics(
        rmse=float(np.sqrt(np.mean(d_rg ** 2))),
        avg_hausdorff=0.5 * (float(d_rg.mean()) + float(d_gr.mean())),
        precision=precision, recall=recall, f1=f1,
        acc95=float(np.percentile(d_rg, 95)),
        n_recon=len(recon), n_gt=len(gt), tau_m=float(tau_m),
    )


def sample_mesh(vertices, faces, spacing: float = 0.05, *, seed: int = 0) -> np.ndarray:
    """Uniform area-weighted surface samples, about one per ``spacing**2``.

    Vertices are included so small meshes are never under-sampled.
    """
    v = np.asarray(vertices, dtype=np.float64).reshape(-1, 3)
    f = np.asarray(faces, dtype=np.int64).reshape(-1, 3)
    if len(f) == 0:
        return v.copy()
    t = v[f]
    area = 0.5 * np.linalg.norm(np.cross(t[:, 1] - t[:, 0], t[:, 2] - t[:, 0]), axis=1)
    total = float(area.sum())
    n = int(math.ceil(total / spacing ** 2))
    if n == 0:
        return v.copy()
    rng = np.random.default_rng(seed)
    which = rng.choice(len(f), size=n, p=area / total)
    r1, r2 = rng.random(n), rng.random(n)
    s = np.sqrt(r1)
    a, b = 1 - s, s * (1 - r2)
    c = s * r2
    tri = t[which]
    pts = a[:, None] * tri[:, 0] + b[:, None] * tri[:, 1] + c[:, None] * tri[:, 2]
    return np.vstack([v, pts])


# dynamic labels ------------------------------------------------------------
@dataclass
class DynamicCounts:
    tp: int = 0
    fp: int = 0
    fn: int = 0
    tn: int = 0
    unobserved: int = 0

    def __add__(self, other: "DynamicCounts") -> "DynamicCounts":
        return DynamicCounts(*(a + b for a, b in zip(asdict(self).values(), asdict(other).values())))

    def metrics(self) -> dict:
        """Precision, recall and f1 in percent; NaN where a denominator is zero."""
        p = 100.0 * self.tp / (self.tp + self.fp) if self.tp + self.fp else math.nan
        r = 100.0 * self.tp / (self.tp + self.fn) if self.tp + self.fn else math.nan
        if math.isnan(p) or math.isnan(r):
            f = math.nan
        else:
            f = 0.0 if p + r == 0 else 2 * p * r / (p + r)
        return {"precision": p, "recall": r, "f1": f, **asdict(self)}


def dynamic_counts(mask: DynamicMask | np.ndarray, gt_labels) -> DynamicCounts:
    labels = mask.labels if isinstance(mask, DynamicMask) else np.asarray(mask)
    gt = np.asarray(gt_labels).astype(bool)
    if len(labels) != len(gt):
        raise MetricError(f"{len(labels)} predicted labels vs {len(gt)} ground truth")
    seen = labels != Label.UNOBSERVED
    pred = labels == Label.DYNAMIC
    return DynamicCounts(
        tp=int(np.sum(seen & pred & gt)), fp=int(np.sum(seen & pred & ~gt)),
        fn=int(np.sum(seen & ~pred & gt)), tn=int(np.sum(seen & ~pred & ~gt)),
        unobserved=int(np.sum(~seen)),
    )


def dynamic_metrics(mask: DynamicMask | np.ndarray, gt_labels) -> dict:
    """Point-level detection scores with "dynamic" as the positive class; unobserved points are excluded."""
    return dynamic_counts(mask, gt_labels).metrics()


# reports -------------------------------------------------------------------
def _fmt(v) -> str:
    if isinstance(v, float):
        return repr(v)
    return str(v)


def format_report(values: dict) -> str:
    return "".join(f"{k}={_fmt(v)}\n" for k, v in values.items())


def write_report(path, values: dict):
    Path(path).write_text(format_report(values))


def read_report(path) -> dict:
    out = {}
    for line in Path(path).read_text().splitlines():
        if line.strip() and not line.startswith("#"):
            k, _, v = line.partition("=")
            out[k.strip()] = v.strip()
    return out


def write_rows(path, rows: list[dict]):
    """Csv with the union of keys in first-seen order."""
    keys: list[str] = []
    for r in rows:
        keys.extend(k for k in r if k not in keys)
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=keys, lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: _fmt(v) for k, v in r.items()})
