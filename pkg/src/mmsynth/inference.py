"""Full-volume synthesis: per-slice generation stacked back into 3D.

Sources are normalized per volume exactly as in training; generated slices
come back in [-1, 1] and are stored in a canonical [0, 1] range (evaluation
normalizes real and synthetic volumes identically before comparing).
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from .data import SegVolume3D, Volume3D, normalize_volume
from .errors import DataError
from .modalities import Modality
from .nifti import write_nifti
from .training import ScenarioModel


@dataclass
class SynthesisResult:
    volume: Volume3D  # synthesized target modality, values in [0, 1]
    seg_volume: SegVolume3D  # argmax of the segmentation logits per slice
    provenance: dict  # scenario tag + checkpoint fingerprint


def synthesize_volume(model: ScenarioModel, sources: list[Volume3D],
                      slice_batch: int = 8) -> SynthesisResult:
    """Synthesize the missing modality volume from the three source volumes.

    Slices are processed in mini-batches for throughput; results do not
    depend on the batch size.
    """
    scenario = model.scenario
    by_modality = {v.modality: v for v in sources}
    if len(sources) != 3 or set(by_modality) != set(scenario.sources):
        have = ", ".join(sorted(v.modality.value for v in sources))
        want = ", ".join(m.value for m in scenario.sources)
        raise DataError(f"scenario {scenario.tag} needs sources [{want}], got [{have}]")
    ordered = [by_modality[m] for m in scenario.sources]
    shape = ordered[0].voxels.shape
    if any(v.voxels.shape != shape for v in ordered):
        raise DataError(f"source volumes disagree in shape: "
                        f"{[v.voxels.shape for v in ordered]}")

    normed = [normalize_volume(v).voxels for v in ordered]
    device = next(model.generator.parameters()).device
    depth = shape[2]
    gen = model.generator
    gen.eval()
    out_slices = []
    seg_slices = []
    with torch.no_grad():
        for start in range(0, depth, slice_batch):
            ks = range(start, min(start + slice_batch, depth))
            batch_sources = [
                torch.from_numpy(np.stack([vol[:, :, k] for k in ks])[:, None]).to(device)
                for vol in normed
            ]
            out = gen(batch_sources)
            img = out.image.cpu().numpy()[:, 0]  # [b, H, W] in [-1, 1]
            out_slices.extend(np.clip((img + 1.0) / 2.0, 0.0, 1.0))
            seg = out.seg_logits.argmax(dim=1).cpu().numpy()  # [b, H, W]
            seg_slices.extend(seg)
    volume = np.stack(out_slices, axis=2).astype(np.float32)
    seg_volume = np.stack(seg_slices, axis=2).astype(np.int16)

    subject_id = ordered[0].subject_id
    provenance = {"scenario": scenario.tag, "fingerprint": model.fingerprint,
                  "subject_id": subject_id}
    return SynthesisResult(
        volume=Volume3D(voxels=volume, subject_id=subject_id, modality=scenario.target),
        seg_volume=SegVolume3D(labels=seg_volume, subject_id=subject_id),
        provenance=provenance,
    )


def write_result(result: SynthesisResult, out_dir: str | Path) -> dict[str, Path]:
    """Write the '-syn' volume, segmentation, and a provenance sidecar."""
    out_dir = Path(out_dir)
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise DataError(f"cannot create output directory {out_dir}: {exc}") from exc
    sid = result.volume.subject_id
    tag = result.volume.modality.value
    paths = {
        "volume": out_dir / f"{sid}_{tag}-syn.nii.gz",
        "seg": out_dir / f"{sid}_seg-syn.nii.gz",
        "provenance": out_dir / f"{sid}_{tag}-syn.json",
    }
    write_nifti(paths["volume"], result.volume.voxels, descrip=f"synthesized {tag}")
    write_nifti(paths["seg"], result.seg_volume.labels, descrip="synthesized seg")
    with open(paths["provenance"], "w") as f:
        json.dump(result.provenance, f, indent=2, sort_keys=True)
    return paths


def load_sources(subject_dir: str | Path, scenario_sources: tuple[Modality, ...]) -> list[Volume3D]:
    """Load the three source volumes for a subject directory."""
    from .data import load_volume, modality_filename
    subject_dir = Path(subject_dir)
    sid = subject_dir.name
    vols = []
    for m in scenario_sources:
        path = subject_dir / modality_filename(sid, m)
        if not path.exists():
            raise DataError(f"missing source volume {path}")
        vols.append(load_volume(path, m))
    return vols
