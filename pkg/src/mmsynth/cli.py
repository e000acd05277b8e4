"""Command-line entry point: phantom, prepare, train, infer, eval.

Exit codes: 0 success, 1 usage/config error, 2 data error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

from . import __version__
from .config import RunConfig, load_run_config, schema_help
from .data import build_manifest, load_manifest, load_volume, load_seg, save_manifest
from .errors import ConfigError, DataError, MMSynthError, NumericalError
from .evaluation import (ScenarioReport, SubjectScores, dice, emit_report,
                         evaluation_regions, ssim_volume, unit_normalize)
from .modalities import MissingScenario, Modality
from .phantom import make_phantom_dataset


class _Parser(argparse.ArgumentParser):
    """argparse that exits 1 on usage errors (2 is reserved for data errors)."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="mmsynth",
                     description="Missing-modality brain MRI synthesis pipeline")
    parser.add_argument("--version", action="version", version=f"mmsynth {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("phantom", help="generate a synthetic phantom dataset", parents=[],
                       formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("--out", required=True, help="output directory for the phantom tree")
    p.add_argument("--subjects", type=int, default=6)
    p.add_argument("--hw", type=int, default=64, help="in-plane size (>= 16)")
    p.add_argument("--depth", type=int, default=8, help="axial slices per volume")
    p.add_argument("--seed", type=int, default=1234)

    p = sub.add_parser("prepare", help="scan a dataset tree into a slice manifest")
    p.add_argument("--data", help="dataset root (overrides config / MMSYNTH_DATA_ROOT)")
    p.add_argument("--out", required=True, help="manifest output path (.jsonl)")

    p = sub.add_parser("train", help="train one scenario model, or all four",
                       formatter_class=argparse.RawDescriptionHelpFormatter,
                       epilog=schema_help())
    p.add_argument("--config", help="YAML run configuration file")
    p.add_argument("--profile", choices=["paper", "desk"], help="configuration preset")
    p.add_argument("--scenario", help="target modality (T1, T1CE, T2, FLAIR)")
    p.add_argument("--all", action="store_true", help="dedicated training for all four scenarios")
    p.add_argument("--data", help="dataset root")
    p.add_argument("--manifest", help="reuse an existing manifest instead of scanning --data")
    p.add_argument("--out", help="output directory for checkpoints and logs")
    p.add_argument("--seed", type=int, help="base RNG seed")

    p = sub.add_parser("infer", help="synthesize the missing modality for one subject")
    p.add_argument("--checkpoint", required=True, help="trained scenario checkpoint (.pt)")
    p.add_argument("--subject-dir", required=True, help="directory with the three source volumes")
    p.add_argument("--out", required=True, help="output directory for -syn volumes")
    p.add_argument("--slice-batch", type=int, default=8)

    p = sub.add_parser("eval", help="SSIM/Dice report for synthesized volumes")
    p.add_argument("--real", required=True, help="root of real volumes (with segmentations)")
    p.add_argument("--syn", required=True, help="directory of '-syn' volumes")
    p.add_argument("--out", required=True, help="report output directory")
    p.add_argument("--scenario", default="all", help="target modality or 'all' (default)")
    return parser


def _run_config(args, need_data: bool = False) -> RunConfig:
    overrides: dict = {}
    data_root = getattr(args, "data", None) or os.environ.get("MMSYNTH_DATA_ROOT")
    if data_root:
        overrides["data"] = {"root": data_root}
    if getattr(args, "out", None):
        overrides.setdefault("data", {})["out_dir"] = args.out
    if getattr(args, "seed", None) is not None:
        overrides["seed"] = args.seed
    if getattr(args, "all", False):
        overrides["scenario"] = "all"
    elif getattr(args, "scenario", None):
        overrides["scenario"] = Modality.parse(args.scenario).value
    if os.environ.get("MMSYNTH_DEVICE"):
        overrides["device"] = os.environ["MMSYNTH_DEVICE"]
    cfg = load_run_config(getattr(args, "config", None), getattr(args, "profile", None), overrides)
    if need_data and not cfg.data_root.is_dir():
        raise DataError(f"data root is not a directory: {cfg.data_root}")
    return cfg


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------

def cmd_phantom(args) -> int:
    subjects = make_phantom_dataset(args.out, args.subjects, args.hw, args.depth, args.seed)
    print(f"wrote {len(subjects)} phantom subjects to {args.out}")
    return 0


def cmd_prepare(args) -> int:
    root = args.data or os.environ.get("MMSYNTH_DATA_ROOT")
    if not root:
        raise ConfigError("no dataset root: pass --data or set MMSYNTH_DATA_ROOT")
    manifest = build_manifest(root)
    for w in manifest.warnings:
        print(f"warning: {w}", file=sys.stderr)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_manifest(manifest, out)
    n_tumor = len(manifest.tumor_entries())
    print(f"{len(manifest.entries)} slices, {n_tumor} tumor slices "
          f"({len(manifest.subjects())} subjects) -> {out}")
    return 0


def cmd_train(args) -> int:
    from .training import pretrain_sr, train_all_scenarios, train_translation

    cfg = _run_config(args, need_data=args.manifest is None)
    if args.manifest:
        manifest = load_manifest(args.manifest)
    else:
        manifest = build_manifest(cfg.data_root)
        for w in manifest.warnings:
            print(f"warning: {w}", file=sys.stderr)
    out_dir = cfg.out_dir
    out_dir.mkdir(parents=True, exist_ok=True)

    if cfg.scenario_spec == "all":
        results = train_all_scenarios(cfg.train_config(MissingScenario(Modality.FLAIR)),
                                      cfg.arch, manifest, out_dir)
        failed = [r for r in results if r["status"] != "ok"]
        for r in results:
            print(f"{r['scenario']}: {r['status']}" + (f" ({r.get('error')})" if "error" in r else ""))
        print(f"summary -> {out_dir / 'summary.json'}")
        if failed:
            return 3 if any("NumericalError" in r.get("error", "") for r in failed) else 2
        return 0

    scenario = cfg.scenarios()[0]
    tconfig = cfg.train_config(scenario)
    sr, _ = pretrain_sr(tconfig, cfg.arch, manifest,
                        log_path=out_dir / f"log_sr_{scenario.tag}.jsonl")
    model = train_translation(tconfig, cfg.arch, manifest, sr,
                              log_path=out_dir / f"log_translation_{scenario.tag}.jsonl",
                              checkpoint_path=out_dir / f"model_{scenario.tag}.pt")
    with open(out_dir / f"summary_{scenario.tag}.json", "w") as f:
        json.dump(model.summary, f, indent=2)
    print(f"trained scenario {scenario.tag}: checkpoint {out_dir / f'model_{scenario.tag}.pt'}")
    return 0


def cmd_infer(args) -> int:
    from .inference import load_sources, synthesize_volume, write_result
    from .networks import models_from_checkpoint
    from .training import ScenarioModel, TrainConfig

    device = os.environ.get("MMSYNTH_DEVICE", "cpu")
    gen, disc, sr, payload = models_from_checkpoint(args.checkpoint, device)
    if gen is None or payload.get("scenario") is None:
        raise DataError(f"checkpoint {args.checkpoint} has no trained generator/scenario")
    scenario = MissingScenario(Modality.parse(payload["scenario"]))
    model = ScenarioModel(scenario=scenario, generator=gen, discriminator=disc, sr=sr,
                          arch=payload["arch_config"],
                          config=TrainConfig(scenario=scenario, device=device),
                          summary=payload.get("meta", {}))
    sources = load_sources(args.subject_dir, scenario.sources)
    result = synthesize_volume(model, sources, slice_batch=args.slice_batch)
    paths = write_result(result, args.out)
    print(f"wrote {paths['volume']} and {paths['seg']}")
    return 0


def cmd_eval(args) -> int:
    real_root = Path(args.real)
    syn_dir = Path(args.syn)
    if not real_root.is_dir():
        raise DataError(f"real volume root is not a directory: {real_root}")
    if not syn_dir.is_dir():
        raise DataError(f"syn directory does not exist: {syn_dir}")
    if args.scenario == "all":
        targets = list(Modality.canonical())
    else:
        targets = [Modality.parse(args.scenario)]

    reports = []
    missing: list[str] = []
    for target in targets:
        subjects = []
        for subj_dir in sorted(p for p in real_root.iterdir() if p.is_dir()):
            sid = subj_dir.name
            real_path = subj_dir / f"{sid}_{target.value}.nii.gz"
            syn_path = syn_dir / f"{sid}_{target.value}-syn.nii.gz"
            seg_path = subj_dir / f"{sid}_seg.nii.gz"
            if not real_path.exists():
                continue
            if not syn_path.exists():
                missing.append(f"{sid}/{target.value}: no {syn_path.name}")
                continue
            real = unit_normalize(load_volume(real_path, target).voxels)
            syn = unit_normalize(load_volume(syn_path, target).voxels)
            scores = SubjectScores(subject_id=sid, full_ssim=None, tumor_ssim=None,
                                   healthy_ssim=None)
            if seg_path.exists():
                seg = load_seg(seg_path, sid)
                full_m, tumor_m, healthy_m = evaluation_regions(real, seg)
                scores.full_ssim = ssim_volume(real, syn, full_m)
                scores.tumor_ssim = ssim_volume(real, syn, tumor_m)
                scores.healthy_ssim = ssim_volume(real, syn, healthy_m)
                syn_seg_path = syn_dir / f"{sid}_seg-syn.nii.gz"
                if syn_seg_path.exists():
                    pred = load_seg(syn_seg_path, sid)
                    scores.dice = {lbl: dice(pred, seg, lbl) for lbl in (1, 2, 3)}
            else:
                scores.full_ssim = ssim_volume(real, syn)
            subjects.append(scores)
        if subjects:
            reports.append(ScenarioReport(scenario=target.value, subjects=subjects))

    for m in missing:
        print(f"warning: missing pair {m}", file=sys.stderr)
    if not reports:
        raise DataError("no real/synthetic volume pairs found to evaluate")
    paths = emit_report(reports, args.out)
    print(Path(paths["text"]).read_text(), end="")
    print(f"report -> {paths['text']} and {paths['jsonl']}")
    return 0


_COMMANDS = {
    "phantom": cmd_phantom,
    "prepare": cmd_prepare,
    "train": cmd_train,
    "infer": cmd_infer,
    "eval": cmd_eval,
}


def main(argv: list[str] | None = None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 2
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3
    except MMSynthError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
