"""SSIM and Dice evaluation with per-scenario report tables.

SSIM follows the windowed luminance/contrast/structure formulation: an 11x11
Gaussian window (sigma 1.5), K1=0.01, K2=0.03, dynamic range 1.0, computed in
2D per axial slice on reflect-padded images and aggregated as the mean of the
SSIM map over the region of interest across all slices (slice-area weighted).
Region columns: full (volume foreground), tumor (mask > 0 dilated by one
voxel), healthy (foreground minus the dilated tumor).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import ndimage

from .data import SegVolume3D, Volume3D
from .modalities import Modality

WINDOW_SIZE = 11
SIGMA = 1.5
K1 = 0.01
K2 = 0.03
DYNAMIC_RANGE = 1.0

# Table rows follow the scenario order used in the headline results
REPORT_ORDER = (Modality.T2, Modality.FLAIR, Modality.T1CE, Modality.T1)


def gaussian_window(size: int = WINDOW_SIZE, sigma: float = SIGMA) -> np.ndarray:
    ax = np.arange(size, dtype=np.float64) - (size - 1) / 2.0
    g = np.exp(-(ax ** 2) / (2.0 * sigma ** 2))
    k = np.outer(g, g)
    return k / k.sum()


def ssim_map_2d(a: np.ndarray, b: np.ndarray, drange: float = DYNAMIC_RANGE) -> np.ndarray:
    """Same-size SSIM map of two 2D images (reflect-padded Gaussian windows)."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 2:
        raise ValueError(f"expected matching 2D images, got {a.shape} and {b.shape}")
    w = gaussian_window()
    conv = lambda x: ndimage.correlate(x, w, mode="reflect")
    mu_a = conv(a)
    mu_b = conv(b)
    var_a = conv(a * a) - mu_a * mu_a
    var_b = conv(b * b) - mu_b * mu_b
    cov = conv(a * b) - mu_a * mu_b
    c1 = (K1 * drange) ** 2
    c2 = (K2 * drange) ** 2
    return ((2 * mu_a * mu_b + c1) * (2 * cov + c2)
            / ((mu_a ** 2 + mu_b ** 2 + c1) * (var_a + var_b + c2)))


def _as_voxels(v) -> np.ndarray:
    return v.voxels if isinstance(v, Volume3D) else np.asarray(v)


def unit_normalize(voxels: np.ndarray) -> np.ndarray:
    """Map the nonzero foreground min-max to [0, 1]; zeros stay 0.

    Applied identically to real and synthesized volumes so SSIM compares them
    on a shared dynamic range.
    """
    v = np.asarray(_as_voxels(voxels), dtype=np.float64)
    fg = v != 0
    out = np.zeros_like(v)
    if fg.any():
        lo, hi = float(v[fg].min()), float(v[fg].max())
        if hi > lo:
            out[fg] = (v[fg] - lo) / (hi - lo)
        else:
            out[fg] = 0.5
    return out


def ssim_volume(a, b, mask: np.ndarray | None = None) -> float | None:
    """Volume SSIM between two co-registered volumes on a shared [0, 1] range.

    With a mask, the SSIM map is averaged where mask > 0; otherwise over the
    union of both volumes' nonzero foregrounds. Returns None when the region
    is empty (undefined score).
    """
    av = _as_voxels(a)
    bv = _as_voxels(b)
    if av.shape != bv.shape:
        raise ValueError(f"volume shape mismatch: {av.shape} vs {bv.shape}")
    if mask is not None:
        region = np.asarray(mask) > 0
        if region.shape != av.shape:
            raise ValueError(f"mask shape {region.shape} != volume shape {av.shape}")
    else:
        region = (av != 0) | (bv != 0)
    n = int(region.sum())
    if n == 0:
        return None
    total = 0.0
    for k in range(av.shape[2]):
        sel = region[:, :, k]
        if not sel.any():
            continue
        smap = ssim_map_2d(av[:, :, k], bv[:, :, k])
        total += float(smap[sel].sum())
    return total / n


def dice(pred: SegVolume3D, truth: SegVolume3D, label: int) -> float:
    """Overlap 2|P∩T| / (|P| + |T|) for one tumor label; 1.0 when both empty."""
    if label not in (1, 2, 3):
        raise ValueError(f"tumor label must be 1, 2, or 3, got {label}")
    p = _as_labels(pred) == label
    t = _as_labels(truth) == label
    if p.shape != t.shape:
        raise ValueError(f"segmentation shape mismatch: {p.shape} vs {t.shape}")
    denom = int(p.sum()) + int(t.sum())
    if denom == 0:
        return 1.0
    return 2.0 * int((p & t).sum()) / denom


def _as_labels(v) -> np.ndarray:
    return v.labels if isinstance(v, SegVolume3D) else np.asarray(v)


def tumor_region(seg: SegVolume3D | np.ndarray) -> np.ndarray:
    """Tumor mask (any label) dilated by one voxel."""
    return ndimage.binary_dilation(_as_labels(seg) > 0)


def evaluation_regions(real: Volume3D | np.ndarray, seg: SegVolume3D | np.ndarray):
    """(full, tumor, healthy) region masks for the three report columns."""
    fg = _as_voxels(real) != 0
    tm = tumor_region(seg)
    return fg, tm, fg & ~tm


# ---------------------------------------------------------------------------
# Reports
# ---------------------------------------------------------------------------

@dataclass
class SubjectScores:
    subject_id: str
    full_ssim: float | None
    tumor_ssim: float | None
    healthy_ssim: float | None
    dice: dict[int, float] = field(default_factory=dict)


@dataclass
class ScenarioReport:
    scenario: str  # target modality tag
    subjects: list[SubjectScores]

    def mean(self, attr: str) -> float | None:
        vals = [getattr(s, attr) for s in self.subjects if getattr(s, attr) is not None]
        return float(np.mean(vals)) if vals else None

    def mean_dice(self) -> dict[int, float]:
        out = {}
        for label in (1, 2, 3):
            vals = [s.dice[label] for s in self.subjects if label in s.dice]
            if vals:
                out[label] = float(np.mean(vals))
        return out


def _fmt(v: float | None) -> str:
    return "n/a" if v is None else f"{v:.4f}"


def emit_report(reports: list[ScenarioReport], out_dir: str | Path) -> dict[str, Path]:
    """Write the per-scenario score table as text and JSON lines.

    The average row is the arithmetic mean of the scenario means; the JSONL
    stream additionally carries per-subject records so a subject-weighted
    average can be recomputed exactly.
    """
    if not reports:
        raise ValueError("no scenario reports to emit")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    order = {m.value: i for i, m in enumerate(REPORT_ORDER)}
    reports = sorted(reports, key=lambda r: order.get(r.scenario, 99))

    txt_path = out_dir / "report.txt"
    jsonl_path = out_dir / "report.jsonl"

    cols = ("full_ssim", "tumor_ssim", "healthy_ssim")
    lines = [f"{'scenario':<10} {'full_ssim':>10} {'tumor_ssim':>11} {'healthy_ssim':>13} {'subjects':>9}"]
    means: dict[str, list[float]] = {c: [] for c in cols}
    records = []
    for r in reports:
        row = {c: r.mean(c) for c in cols}
        for c in cols:
            if row[c] is not None:
                means[c].append(row[c])
        display = Modality.parse(r.scenario).display
        lines.append(f"{display:<10} {_fmt(row['full_ssim']):>10} {_fmt(row['tumor_ssim']):>11} "
                     f"{_fmt(row['healthy_ssim']):>13} {len(r.subjects):>9}")
        records.append({"type": "scenario", "scenario": r.scenario,
                        **row, "n_subjects": len(r.subjects),
                        "mean_dice": {str(k): v for k, v in r.mean_dice().items()}})
        for s in r.subjects:
            records.append({"type": "subject", "scenario": r.scenario,
                            "subject_id": s.subject_id, "full_ssim": s.full_ssim,
                            "tumor_ssim": s.tumor_ssim, "healthy_ssim": s.healthy_ssim,
                            "dice": {str(k): v for k, v in s.dice.items()}})
    avg = {c: (float(np.mean(means[c])) if means[c] else None) for c in cols}
    lines.append(f"{'average':<10} {_fmt(avg['full_ssim']):>10} {_fmt(avg['tumor_ssim']):>11} "
                 f"{_fmt(avg['healthy_ssim']):>13} {sum(len(r.subjects) for r in reports):>9}")
    lines.append("")
    lines.append("# average row: arithmetic mean of scenario means; a per-subject weighted")
    lines.append("# mean can differ and is recoverable from the subject records in report.jsonl")
    records.append({"type": "average", **avg})

    txt_path.write_text("\n".join(lines) + "\n")
    with open(jsonl_path, "w") as f:
        for rec in records:
            f.write(json.dumps(rec) + "\n")
    return {"text": txt_path, "jsonl": jsonl_path}


def parse_report(jsonl_path: str | Path) -> list[dict]:
    """Read back the machine-readable report records."""
    out = []
    with open(jsonl_path) as f:
        for line in f:
            line = line.strip()
            if line:
                out.append(json.loads(line))
    return out
