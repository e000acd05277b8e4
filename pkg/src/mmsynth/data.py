"""Volume loading, normalization, axial slicing, manifests, and batch serving.

Expected file layout, one directory per subject:

    <root>/<subject>/<subject>_T1.nii.gz
    <root>/<subject>/<subject>_T1CE.nii.gz
    <root>/<subject>/<subject>_T2.nii.gz
    <root>/<subject>/<subject>_FLAIR.nii.gz
    <root>/<subject>/<subject>_seg.nii.gz

Volumes are [H, W, D] with the axial axis last. Intensities are normalized
per volume: the nonzero foreground is min-max mapped to [-1, 1] and exact-zero
(skull-stripped) background stays pinned at -1.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DataError
from .modalities import MissingScenario, Modality
from .nifti import read_nifti

SEG_SUFFIX = "seg"
N_CLASSES = 4  # background + NCR(1) + ED(2) + ET(3)


# ---------------------------------------------------------------------------
# Types
# ---------------------------------------------------------------------------

@dataclass
class Volume3D:
    """A single-modality 3D scan, [H, W, D] with axial slices along axis 2."""

    voxels: np.ndarray
    subject_id: str
    modality: Modality


@dataclass
class SegVolume3D:
    """Integer tumor label volume, labels in {0, 1, 2, 3}."""

    labels: np.ndarray
    subject_id: str


@dataclass
class MultiModalSample:
    """Aligned normalized 2D slices of all four modalities plus the mask."""

    images: dict[Modality, np.ndarray]
    mask: np.ndarray
    subject_id: str
    slice_index: int


@dataclass(frozen=True)
class ManifestEntry:
    subject_id: str
    slice_index: int
    has_tumor: bool
    paths: dict[str, str] = field(hash=False)


@dataclass
class DatasetManifest:
    """One entry per (subject, axial slice) plus per-volume normalization stats.

    stats maps "<subject>/<modality>" to the (lo, hi) foreground min-max of
    that volume, so slices can be normalized consistently with the volume.
    """

    entries: list[ManifestEntry]
    stats: dict[str, tuple[float, float]]
    warnings: list[str] = field(default_factory=list)

    def tumor_entries(self) -> list[ManifestEntry]:
        return [e for e in self.entries if e.has_tumor]

    def subjects(self) -> list[str]:
        seen: dict[str, None] = {}
        for e in self.entries:
            seen.setdefault(e.subject_id, None)
        return list(seen)


def stats_key(subject_id: str, modality: Modality) -> str:
    return f"{subject_id}/{modality.value}"


# ---------------------------------------------------------------------------
# Loading and normalization
# ---------------------------------------------------------------------------

def modality_filename(subject_id: str, modality: Modality) -> str:
    return f"{subject_id}_{modality.value}.nii.gz"


def seg_filename(subject_id: str) -> str:
    return f"{subject_id}_{SEG_SUFFIX}.nii.gz"


def load_volume(path: str | Path, modality: Modality) -> Volume3D:
    """Load one modality volume from a NIfTI file, rejecting non-3D or non-finite data."""
    path = Path(path)
    data, _ = read_nifti(path)
    if data.ndim != 3:
        raise DataError(f"expected 3D volume, got {data.ndim}D in {path}")
    bad = int(np.size(data) - np.isfinite(data).sum())
    if bad:
        raise DataError(f"{bad} non-finite voxels in {path}")
    subject_id = path.name.split("_")[0]
    return Volume3D(voxels=data.astype(np.float32, copy=False), subject_id=subject_id, modality=modality)


def load_seg(path: str | Path, subject_id: str | None = None) -> SegVolume3D:
    path = Path(path)
    data, _ = read_nifti(path)
    if data.ndim != 3:
        raise DataError(f"expected 3D segmentation, got {data.ndim}D in {path}")
    labels = np.rint(data).astype(np.int16)
    if labels.min() < 0 or labels.max() >= N_CLASSES:
        raise DataError(f"segmentation labels outside 0..{N_CLASSES - 1} in {path}")
    return SegVolume3D(labels=labels, subject_id=subject_id or path.name.split("_")[0])


def foreground_minmax(voxels: np.ndarray) -> tuple[float, float]:
    """(min, max) over the nonzero foreground; (0, 0) for an all-zero volume."""
    fg = voxels[voxels != 0]
    if fg.size == 0:
        return 0.0, 0.0
    return float(fg.min()), float(fg.max())


def normalize_array(arr: np.ndarray, lo: float, hi: float) -> np.ndarray:
    """Min-max map the nonzero foreground to [-1, 1]; zeros pinned to -1.

    A degenerate range (hi == lo) maps the whole foreground to 0.
    """
    arr = np.asarray(arr, dtype=np.float32)
    fg = arr != 0
    out = np.full(arr.shape, -1.0, dtype=np.float32)
    if hi > lo:
        scale = 2.0 / (hi - lo)
        out[fg] = (arr[fg] - lo) * scale - 1.0
    else:
        out[fg] = 0.0
    return out


def normalize_volume(v: Volume3D) -> Volume3D:
    """Per-volume foreground min-max normalization to [-1, 1]."""
    if not np.isfinite(v.voxels).all():
        raise DataError(f"non-finite voxels in volume {v.subject_id}/{v.modality.value}")
    lo, hi = foreground_minmax(v.voxels)
    return Volume3D(voxels=normalize_array(v.voxels, lo, hi), subject_id=v.subject_id, modality=v.modality)


def slice_axial(v: Volume3D) -> list[np.ndarray]:
    """Split a volume into its D axial slices; slice k is voxels[:, :, k]."""
    return [v.voxels[:, :, k] for k in range(v.voxels.shape[2])]


def stack_axial(slices: list[np.ndarray]) -> np.ndarray:
    """Inverse of slice_axial."""
    return np.stack(slices, axis=2)


# ---------------------------------------------------------------------------
# Manifest
# ---------------------------------------------------------------------------

def build_manifest(root: str | Path) -> DatasetManifest:
    """Scan a dataset tree into a manifest.

    Subjects missing any modality or the segmentation are skipped with a
    warning record. Traversal is sorted, so the result is deterministic for
    a given tree.
    """
    root = Path(root)
    if not root.is_dir():
        raise DataError(f"data root is not a directory: {root}")
    entries: list[ManifestEntry] = []
    stats: dict[str, tuple[float, float]] = {}
    warnings: list[str] = []

    for subj_dir in sorted(p for p in root.iterdir() if p.is_dir()):
        sid = subj_dir.name
        paths = {m.value: subj_dir / modality_filename(sid, m) for m in Modality.canonical()}
        paths[SEG_SUFFIX] = subj_dir / seg_filename(sid)
        missing = [tag for tag, p in paths.items() if not p.exists()]
        if missing:
            warnings.append(f"skipped subject {sid}: missing {', '.join(sorted(missing))}")
            continue

        seg = load_seg(paths[SEG_SUFFIX], sid)
        shape = seg.labels.shape
        subj_stats = {}
        for m in Modality.canonical():
            vol = load_volume(paths[m.value], m)
            if vol.voxels.shape != shape:
                raise DataError(
                    f"shape mismatch for subject {sid}: {m.value} is {vol.voxels.shape}, seg is {shape}"
                )
            subj_stats[stats_key(sid, m)] = foreground_minmax(vol.voxels)
        stats.update(subj_stats)

        path_strs = {tag: str(p) for tag, p in paths.items()}
        for k in range(shape[2]):
            has_tumor = bool((seg.labels[:, :, k] != 0).any())
            entries.append(ManifestEntry(sid, k, has_tumor, path_strs))

    return DatasetManifest(entries=entries, stats=stats, warnings=warnings)


def save_manifest(manifest: DatasetManifest, path: str | Path) -> None:
    """Persist entries as JSON lines, with stats and warnings in a sidecar."""
    path = Path(path)
    with open(path, "w") as f:
        for e in manifest.entries:
            f.write(json.dumps({
                "subject_id": e.subject_id,
                "slice_index": e.slice_index,
                "has_tumor": e.has_tumor,
                "paths": e.paths,
            }) + "\n")
    sidecar = path.with_name(path.stem + "_stats.json")
    with open(sidecar, "w") as f:
        json.dump({"stats": {k: list(v) for k, v in manifest.stats.items()},
                   "warnings": manifest.warnings}, f, indent=2)


def load_manifest(path: str | Path) -> DatasetManifest:
    path = Path(path)
    if not path.exists():
        raise DataError(f"no such manifest: {path}")
    entries = []
    seen = set()
    with open(path) as f:
        for line in f:
            line = line.strip()
            if not line:
                continue
            rec = json.loads(line)
            key = (rec["subject_id"], rec["slice_index"])
            if key in seen:
                raise DataError(f"duplicate manifest entry {key} in {path}")
            seen.add(key)
            entries.append(ManifestEntry(rec["subject_id"], int(rec["slice_index"]),
                                         bool(rec["has_tumor"]), rec["paths"]))
    sidecar = path.with_name(path.stem + "_stats.json")
    if not sidecar.exists():
        raise DataError(f"missing manifest stats sidecar: {sidecar}")
    with open(sidecar) as f:
        meta = json.load(f)
    stats = {k: (float(v[0]), float(v[1])) for k, v in meta["stats"].items()}
    return DatasetManifest(entries=entries, stats=stats, warnings=list(meta.get("warnings", [])))


# ---------------------------------------------------------------------------
# Batch serving
# ---------------------------------------------------------------------------

class VolumeCache:
    """Small in-process cache so repeated slice draws reuse decoded volumes."""

    def __init__(self, max_items: int = 64):
        self.max_items = max_items
        self._store: dict[str, np.ndarray] = {}

    def get(self, path: str) -> np.ndarray:
        arr = self._store.get(path)
        if arr is None:
            arr, _ = read_nifti(path)
            if len(self._store) >= self.max_items:
                self._store.pop(next(iter(self._store)))
            self._store[path] = arr
        return arr


def load_sample(manifest: DatasetManifest, entry: ManifestEntry,
                cache: VolumeCache | None = None) -> MultiModalSample:
    """Materialize one normalized multi-modal slice sample."""
    cache = cache or VolumeCache()
    images: dict[Modality, np.ndarray] = {}
    for m in Modality.canonical():
        vol = cache.get(entry.paths[m.value])
        key = stats_key(entry.subject_id, m)
        if key not in manifest.stats:
            raise DataError(f"manifest has no normalization stats for {key}")
        lo, hi = manifest.stats[key]
        images[m] = normalize_array(vol[:, :, entry.slice_index], lo, hi)
    seg = cache.get(entry.paths[SEG_SUFFIX])
    mask = np.rint(seg[:, :, entry.slice_index]).astype(np.int64)
    return MultiModalSample(images=images, mask=mask,
                            subject_id=entry.subject_id, slice_index=entry.slice_index)


def sample_batch(manifest: DatasetManifest, scenario: MissingScenario, batch_size: int,
                 rng_seed: int, cache: VolumeCache | None = None) -> list[MultiModalSample]:
    """Draw batch_size tumor-containing samples uniformly without replacement.

    The draw is reproducible under rng_seed. Every sample carries all four
    modality slices; the scenario decides downstream which one is the
    supervision target.
    """
    del scenario  # content is scenario-independent; kept for call-site clarity
    tumor = manifest.tumor_entries()
    if len(tumor) < batch_size:
        raise DataError(
            f"not enough tumor slices: need {batch_size}, manifest has {len(tumor)}"
        )
    rng = np.random.default_rng(rng_seed)
    idx = rng.choice(len(tumor), size=batch_size, replace=False)
    return [load_sample(manifest, tumor[int(i)], cache) for i in idx]
