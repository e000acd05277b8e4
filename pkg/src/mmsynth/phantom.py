"""Synthetic multi-modal phantom volumes for desk-scale training and tests.

Each subject is built from one smooth anatomy field inside an elliptical
brain mask, plus an ellipsoidal tumor of nested label shells
(necrotic core 1, enhancing shell 3, edema 2). All four modality images are
fixed analytic functions of the anatomy and the tumor shells, so the
mapping from any three modalities to the fourth is deterministic and
learnable. Background voxels are exactly zero, mimicking skull-stripping.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np
from scipy import ndimage

from .errors import DataError
from .modalities import Modality
from .data import modality_filename, seg_filename
from .nifti import write_nifti

# foreground intensity recipes: base + gain * anatomy, then per-shell overrides
_AFFINE = {
    Modality.T1: (0.30, 0.60),
    Modality.T1CE: (0.28, 0.55),
    Modality.T2: (0.90, -0.60),
    Modality.FLAIR: (0.20, 0.55),
}
# shell overrides (label -> base level); a mild anatomy term keeps texture
_SHELL_LEVELS = {
    Modality.T1: {1: 0.22, 3: 0.48, 2: 0.40},
    Modality.T1CE: {1: 0.15, 3: 0.95, 2: 0.45},
    Modality.T2: {1: 0.78, 3: 0.55, 2: 0.88},
    Modality.FLAIR: {1: 0.25, 3: 0.60, 2: 0.92},
}
_SCANNER_SCALE = {
    Modality.T1: 800.0,
    Modality.T1CE: 820.0,
    Modality.T2: 780.0,
    Modality.FLAIR: 810.0,
}


def _anatomy_field(hw: int, depth: int, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Per-subject smooth anatomy in (0, 1] inside an elliptical brain mask.

    Deliberately low-frequency (broad cosine modes plus a few Gaussian blobs,
    intensity tapering toward the brain rim) so an autoencoder or translation
    network can overfit it within a short desk-scale schedule.
    """
    y, x = np.mgrid[0:hw, 0:hw].astype(np.float64)
    cy = cx = (hw - 1) / 2.0
    z = np.arange(depth, dtype=np.float64)
    # brain cross-section shrinks toward the first/last slices
    zc = (depth - 1) / 2.0
    z_extent = np.sqrt(np.clip(1.0 - ((z - zc) / (0.75 * depth)) ** 2, 0.2, 1.0))
    ry, rx = 0.42 * hw, 0.38 * hw

    phase = rng.uniform(0, 2 * np.pi, size=3)
    # a few broad subject-specific blobs
    n_blobs = 3
    bl_cy = rng.uniform(0.3, 0.7, n_blobs) * hw
    bl_cx = rng.uniform(0.3, 0.7, n_blobs) * hw
    bl_amp = rng.uniform(-0.22, 0.22, n_blobs)
    bl_sig = rng.uniform(0.18, 0.30, n_blobs) * hw

    anatomy = np.empty((hw, hw, depth), dtype=np.float64)
    mask = np.zeros((hw, hw, depth), dtype=bool)
    for k in range(depth):
        ell = ((y - cy) / (ry * z_extent[k])) ** 2 + ((x - cx) / (rx * z_extent[k])) ** 2
        m = ell <= 1.0
        base = (
            0.58
            + 0.22 * np.cos(2 * np.pi * (x / hw) * 0.8 + phase[0])
            * np.sin(2 * np.pi * (y / hw) * 0.7 + phase[1])
            + 0.10 * np.cos(2 * np.pi * k / max(depth, 2) + phase[2])
        )
        for j in range(n_blobs):
            base = base + bl_amp[j] * np.exp(
                -(((y - bl_cy[j]) ** 2 + (x - bl_cx[j]) ** 2) / (2 * bl_sig[j] ** 2)))
        # taper toward the rim so the brain boundary is a soft step
        rim = np.clip((1.0 - ell) * 4.0, 0.0, 1.0)
        anatomy[:, :, k] = np.clip(base, 0.05, 1.0) * (0.25 + 0.75 * rim)
        mask[:, :, k] = m
    anatomy = np.clip(anatomy, 0.02, 1.0)
    anatomy[~mask] = 0.0
    return anatomy, mask


def _tumor_labels(hw: int, depth: int, brain: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Nested-shell ellipsoid labels: 1 core, 3 enhancing shell, 2 edema."""
    y, x, z = np.mgrid[0:hw, 0:hw, 0:depth].astype(np.float64)
    cy = (hw - 1) / 2.0 + rng.uniform(-0.12, 0.12) * hw
    cx = (hw - 1) / 2.0 + rng.uniform(-0.12, 0.12) * hw
    cz = (depth - 1) / 2.0 + rng.uniform(-0.1, 0.1) * depth
    r_out = max(0.16 * hw, 4.0) * rng.uniform(0.9, 1.1)
    r_mid = 0.70 * r_out
    r_in = 0.40 * r_out
    rz = max(0.35 * depth, 0.6)

    d2 = ((y - cy) / r_out) ** 2 + ((x - cx) / r_out) ** 2 + ((z - cz) / rz) ** 2
    labels = np.zeros((hw, hw, depth), dtype=np.int16)
    labels[d2 <= 1.0] = 2  # edema
    d2_mid = ((y - cy) / r_mid) ** 2 + ((x - cx) / r_mid) ** 2 + ((z - cz) / (rz * 0.75)) ** 2
    labels[d2_mid <= 1.0] = 3  # enhancing shell
    d2_in = ((y - cy) / r_in) ** 2 + ((x - cx) / r_in) ** 2 + ((z - cz) / (rz * 0.5)) ** 2
    labels[d2_in <= 1.0] = 1  # necrotic core
    labels[brain == 0] = 0
    return labels


def _modality_image(anatomy: np.ndarray, labels: np.ndarray, brain: np.ndarray,
                    modality: Modality) -> np.ndarray:
    base, gain = _AFFINE[modality]
    img = base + gain * anatomy
    for label, level in _SHELL_LEVELS[modality].items():
        # soft-edged override keeps intensity transitions learnable by a
        # skip-less decoder while the label geometry stays crisp
        w = ndimage.gaussian_filter((labels == label).astype(np.float64),
                                    sigma=(0.9, 0.9, 0.3))
        w = np.clip(w * 1.4, 0.0, 1.0)
        img = img * (1.0 - w) + (level + 0.08 * (anatomy - 0.5)) * w
    img = np.clip(img, 0.03, 1.0)
    img[~brain.astype(bool)] = 0.0
    return (img * _SCANNER_SCALE[modality]).astype(np.float32)


def make_phantom_dataset(out_dir: str | Path, n_subjects: int, hw: int, depth: int,
                         rng_seed: int) -> list[str]:
    """Write a phantom dataset tree; returns the subject ids.

    Regeneration with the same arguments is byte-identical.
    """
    if hw < 16:
        raise DataError(f"phantom hw must be >= 16, got {hw}")
    if depth < 1:
        raise DataError(f"phantom depth must be >= 1, got {depth}")
    if n_subjects < 1:
        raise DataError(f"phantom n_subjects must be >= 1, got {n_subjects}")
    out_dir = Path(out_dir)
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise DataError(f"cannot create phantom directory {out_dir}: {exc}") from exc

    subjects = []
    for i in range(n_subjects):
        sid = f"sub-{i:03d}"
        rng = np.random.default_rng(rng_seed * 100_003 + i)
        anatomy, brain = _anatomy_field(hw, depth, rng)
        labels = _tumor_labels(hw, depth, brain, rng)
        missing = {1, 2, 3} - set(np.unique(labels).tolist())
        if missing:
            raise DataError(f"phantom tumor for {sid} lost labels {sorted(missing)}; "
                            f"hw={hw} depth={depth} too small")

        subj_dir = out_dir / sid
        subj_dir.mkdir(exist_ok=True)
        for m in Modality.canonical():
            img = _modality_image(anatomy, labels, brain, m)
            write_nifti(subj_dir / modality_filename(sid, m), img, descrip=f"phantom {m.value}")
        write_nifti(subj_dir / seg_filename(sid), labels, descrip="phantom seg")
        subjects.append(sid)
    return subjects
