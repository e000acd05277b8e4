"""Run configuration: YAML file + profile presets, validated against a schema.

Unknown keys are rejected everywhere (typo safety). Defaults encode the
published training recipe; the `desk` profile shrinks epochs and resolution
for laptop-scale runs on phantom data.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass
from pathlib import Path

import jsonschema
import yaml

from .errors import ConfigError
from .losses import LossWeights
from .modalities import MissingScenario, Modality
from .networks import ArchConfig
from .training import TrainConfig

SCENARIO_CHOICES = [m.value for m in Modality.canonical()] + ["all"]

DEFAULTS: dict = {
    "profile": "paper",
    "seed": 0,
    "device": "cpu",
    "scenario": "FLAIR",
    "data": {"root": ".", "out_dir": "runs"},
    "arch": {
        "image_size": 256,
        "base_width": 32,
        "enc_stages": 4,
        "attn_reduction": 8,
        "disc_base_width": 64,
        "shared_branch_attention": False,
    },
    "train": {
        "lr": 1e-4,
        "adam_beta1": 0.5,
        "adam_beta2": 0.999,
        "batch_size": 4,
        "sr_epochs": 200,
        "gen_epochs": 300,
        "checkpoint_every": 50,
        "k_queries": 256,
        "freeze_sr": True,
        "warm_start_from_sr": True,
        "gan_mode": "nonsaturating",
        "kl_direction": "sr_to_gen",
        "attention_scale": False,
        "detach_attention": False,
        "grad_clip": None,
    },
    "weights": {"alpha": 0.1, "beta": 0.05, "gamma": 0.1, "delta": 0.1, "eta": 0.1, "tau": 0.07},
}

PROFILES: dict[str, dict] = {
    "paper": {},  # defaults already encode the published recipe
    "desk": {
        "arch": {"image_size": 64},
        "train": {"sr_epochs": 30, "gen_epochs": 40, "checkpoint_every": 20},
    },
}

FIELD_DOCS: dict[str, str] = {
    "profile": "preset: 'paper' (published recipe, 256x256, 200/300 epochs) or 'desk' (64x64, 30/40)",
    "seed": "base RNG seed; scenario i trains with seed + i",
    "device": "torch device for training and inference (e.g. cpu, cuda:0)",
    "scenario": "missing-modality target: T1, T1CE, T2, FLAIR, or 'all' for dedicated training",
    "data.root": "dataset root containing one directory per subject",
    "data.out_dir": "output directory for checkpoints, logs, and reports",
    "arch.image_size": "training slice size; must be divisible by 2^enc_stages",
    "arch.base_width": "channels of the first encoder stage (doubles per stage)",
    "arch.enc_stages": "number of stride-2 encoder stages (2..6)",
    "arch.attn_reduction": "channel-attention squeeze reduction factor",
    "arch.disc_base_width": "first-layer width of the patch discriminator",
    "arch.shared_branch_attention": "share one attention block across the three source branches",
    "train.lr": "Adam learning rate (> 0)",
    "train.adam_beta1": "Adam beta1 momentum term",
    "train.adam_beta2": "Adam beta2 momentum term",
    "train.batch_size": "slices per training batch",
    "train.sr_epochs": "epochs of self-representation autoencoder pretraining",
    "train.gen_epochs": "epochs of adversarial translation training",
    "train.checkpoint_every": "checkpoint interval in epochs (0 = final only)",
    "train.k_queries": "contrastive queries kept per slice (clamped to the feature map size)",
    "train.freeze_sr": "freeze the pretrained SR network during translation training",
    "train.warm_start_from_sr": "initialize generator encoders/decoders from the pretrained SR parameters",
    "train.gan_mode": "adversarial form: nonsaturating or lsgan",
    "train.kl_direction": "decoder KL direction: sr_to_gen (SR features as target) or gen_to_sr",
    "train.attention_scale": "scale attention logits by 1/sqrt(C) before the softmax",
    "train.detach_attention": "stop gradients through the attention matrix used for routing",
    "train.grad_clip": "optional gradient-norm clip (null disables)",
    "weights.alpha": "contrastive loss weight",
    "weights.beta": "segmentation cross-entropy weight",
    "weights.gamma": "decoder self-representation KL weight",
    "weights.delta": "single-modal representation MSE weight",
    "weights.eta": "multi-modal representation MSE weight",
    "weights.tau": "contrastive temperature (> 0)",
}

SCHEMA: dict = {
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "profile": {"enum": list(PROFILES)},
        "seed": {"type": "integer"},
        "device": {"type": "string"},
        "scenario": {"enum": SCENARIO_CHOICES},
        "data": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "root": {"type": "string"},
                "out_dir": {"type": "string"},
            },
        },
        "arch": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "image_size": {"type": "integer", "minimum": 16},
                "base_width": {"type": "integer", "minimum": 4},
                "enc_stages": {"type": "integer", "minimum": 2, "maximum": 6},
                "attn_reduction": {"type": "integer", "minimum": 1},
                "disc_base_width": {"type": "integer", "minimum": 4},
                "shared_branch_attention": {"type": "boolean"},
            },
        },
        "train": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "lr": {"type": "number", "exclusiveMinimum": 0},
                "adam_beta1": {"type": "number", "minimum": 0, "exclusiveMaximum": 1},
                "adam_beta2": {"type": "number", "minimum": 0, "exclusiveMaximum": 1},
                "batch_size": {"type": "integer", "minimum": 1},
                "sr_epochs": {"type": "integer", "minimum": 1},
                "gen_epochs": {"type": "integer", "minimum": 1},
                "checkpoint_every": {"type": "integer", "minimum": 0},
                "k_queries": {"type": "integer", "minimum": 1},
                "freeze_sr": {"type": "boolean"},
                "warm_start_from_sr": {"type": "boolean"},
                "gan_mode": {"enum": ["nonsaturating", "lsgan"]},
                "kl_direction": {"enum": ["sr_to_gen", "gen_to_sr"]},
                "attention_scale": {"type": "boolean"},
                "detach_attention": {"type": "boolean"},
                "grad_clip": {"type": ["number", "null"], "exclusiveMinimum": 0},
            },
        },
        "weights": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "alpha": {"type": "number", "minimum": 0},
                "beta": {"type": "number", "minimum": 0},
                "gamma": {"type": "number", "minimum": 0},
                "delta": {"type": "number", "minimum": 0},
                "eta": {"type": "number", "minimum": 0},
                "tau": {"type": "number", "exclusiveMinimum": 0},
            },
        },
    },
}


@dataclass
class RunConfig:
    """Validated, merged run configuration."""

    raw: dict
    profile: str
    seed: int
    device: str
    scenario_spec: str  # modality tag or "all"
    data_root: Path
    out_dir: Path
    arch: ArchConfig
    weights: LossWeights

    def scenarios(self) -> list[MissingScenario]:
        if self.scenario_spec == "all":
            return [MissingScenario(m) for m in Modality.canonical()]
        return [MissingScenario(Modality.parse(self.scenario_spec))]

    def train_config(self, scenario: MissingScenario, seed_offset: int = 0) -> TrainConfig:
        t = self.raw["train"]
        return TrainConfig(
            scenario=scenario,
            lr=t["lr"],
            adam_beta1=t["adam_beta1"],
            adam_beta2=t["adam_beta2"],
            batch_size=t["batch_size"],
            sr_epochs=t["sr_epochs"],
            gen_epochs=t["gen_epochs"],
            seed=self.seed + seed_offset,
            weights=self.weights,
            k_queries=t["k_queries"],
            checkpoint_every=t["checkpoint_every"],
            freeze_sr=t["freeze_sr"],
            warm_start_from_sr=t["warm_start_from_sr"],
            gan_mode=t["gan_mode"],
            kl_direction=t["kl_direction"],
            attention_scale=t["attention_scale"],
            detach_attention=t["detach_attention"],
            grad_clip=t["grad_clip"],
            device=self.device,
        )


def _deep_merge(base: dict, overlay: dict) -> dict:
    out = copy.deepcopy(base)
    for key, value in overlay.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = _deep_merge(out[key], value)
        else:
            out[key] = copy.deepcopy(value)
    return out


def validate_config(cfg: dict) -> None:
    validator = jsonschema.Draft202012Validator(SCHEMA)
    errors = sorted(validator.iter_errors(cfg), key=lambda e: list(e.absolute_path))
    if errors:
        e = errors[0]
        path = ".".join(str(p) for p in e.absolute_path) or "<root>"
        raise ConfigError(f"config field {path}: {e.message}")


def load_run_config(path: str | Path | None = None, profile: str | None = None,
                    overrides: dict | None = None) -> RunConfig:
    """Merge defaults <- profile <- file <- overrides, then validate and build."""
    file_cfg: dict = {}
    if path is not None:
        path = Path(path)
        if not path.exists():
            raise ConfigError(f"no such config file: {path}")
        try:
            file_cfg = yaml.safe_load(path.read_text()) or {}
        except yaml.YAMLError as exc:
            raise ConfigError(f"cannot parse {path}: {exc}") from exc
        if not isinstance(file_cfg, dict):
            raise ConfigError(f"config root must be a mapping, got {type(file_cfg).__name__}")

    profile_name = profile or file_cfg.get("profile") or DEFAULTS["profile"]
    if profile_name not in PROFILES:
        raise ConfigError(f"unknown profile {profile_name!r}; choose from {sorted(PROFILES)}")
    cfg = _deep_merge(DEFAULTS, PROFILES[profile_name])
    cfg = _deep_merge(cfg, file_cfg)
    if overrides:
        cfg = _deep_merge(cfg, {k: v for k, v in overrides.items() if v is not None})
    cfg["profile"] = profile_name
    validate_config(cfg)

    try:
        arch = ArchConfig(**cfg["arch"])
        weights = LossWeights(**cfg["weights"])
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    return RunConfig(
        raw=cfg,
        profile=profile_name,
        seed=cfg["seed"],
        device=cfg["device"],
        scenario_spec=cfg["scenario"],
        data_root=Path(cfg["data"]["root"]),
        out_dir=Path(cfg["data"]["out_dir"]),
        arch=arch,
        weights=weights,
    )


def schema_help() -> str:
    """One line per config field, for the CLI help epilog."""
    lines = ["configuration fields (YAML, nested sections):"]
    for key, doc in FIELD_DOCS.items():
        lines.append(f"  {key:<32} {doc}")
    return "\n".join(lines)
