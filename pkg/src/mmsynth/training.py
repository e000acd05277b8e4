"""Two-stage training: target-autoencoder pretraining, then adversarial translation.

Stage 1 trains the self-representation autoencoder to reconstruct the
scenario's target modality (L1). Stage 2 trains generator and discriminator
alternately (one D step, then one G step per batch) on the full objective;
the pretrained SR network is frozen by default and only supplies features.
"""

from __future__ import annotations

import contextlib
import json
import time
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np
import torch

from . import losses as L
from . import qsattn
from .data import DatasetManifest, MultiModalSample, VolumeCache, sample_batch
from .errors import DataError, NumericalError
from .modalities import MissingScenario, Modality
from .networks import (ArchConfig, Generator, PatchDiscriminator, SRNetwork,
                       _init_weights, arch_fingerprint, build_models, save_checkpoint)


@dataclass
class TrainConfig:
    scenario: MissingScenario
    lr: float = 1e-4
    adam_beta1: float = 0.5
    adam_beta2: float = 0.999
    batch_size: int = 4
    sr_epochs: int = 200
    gen_epochs: int = 300
    seed: int = 0
    weights: L.LossWeights = field(default_factory=L.LossWeights)
    k_queries: int = 256
    checkpoint_every: int = 50  # epochs
    freeze_sr: bool = True
    warm_start_from_sr: bool = True
    gan_mode: str = "nonsaturating"
    kl_direction: str = "sr_to_gen"
    attention_scale: bool = False
    detach_attention: bool = False
    grad_clip: float | None = None
    device: str = "cpu"

    def __post_init__(self):
        if self.lr <= 0:
            raise ValueError(f"lr must be > 0, got {self.lr}")
        for name in ("adam_beta1", "adam_beta2"):
            b = getattr(self, name)
            if not 0 <= b < 1:
                raise ValueError(f"{name} must be in [0, 1), got {b}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.sr_epochs < 1 or self.gen_epochs < 1:
            raise ValueError("epoch counts must be >= 1")
        if self.k_queries < 1:
            raise ValueError(f"k_queries must be >= 1, got {self.k_queries}")


@dataclass
class ScenarioModel:
    """A trained parameter set dedicated to one missing-modality scenario."""

    scenario: MissingScenario
    generator: Generator
    discriminator: PatchDiscriminator
    sr: SRNetwork
    arch: ArchConfig
    config: TrainConfig
    summary: dict

    @property
    def fingerprint(self) -> str:
        return arch_fingerprint(self.arch)


class JsonlLogger:
    """Line-delimited training log; records are plain dicts."""

    def __init__(self, path: str | Path | None):
        self.path = Path(path) if path else None
        self.records: list[dict] = []
        if self.path:
            self.path.parent.mkdir(parents=True, exist_ok=True)
            self._fh = open(self.path, "w")
        else:
            self._fh = None

    def write(self, record: dict) -> None:
        self.records.append(record)
        if self._fh:
            self._fh.write(json.dumps(record) + "\n")
            self._fh.flush()

    def close(self) -> None:
        if self._fh:
            self._fh.close()
            self._fh = None


def _step_seed(base_seed: int, epoch: int, step: int) -> int:
    return (base_seed * 1_000_003 + epoch * 10_007 + step) % (2 ** 31 - 1)


def _batch_tensors(batch: list[MultiModalSample], scenario: MissingScenario, device: str):
    """Stack a sample batch into (sources, target, mask) tensors."""
    srcs = []
    for m in scenario.sources:
        arr = np.stack([s.images[m] for s in batch])[:, None]  # [B, 1, H, W]
        srcs.append(torch.from_numpy(arr).to(device))
    tgt = np.stack([s.images[scenario.target] for s in batch])[:, None]
    mask = np.stack([s.mask for s in batch])
    return srcs, torch.from_numpy(tgt).to(device), torch.from_numpy(mask).to(device)


def _steps_per_epoch(manifest: DatasetManifest, batch_size: int) -> int:
    return max(1, len(manifest.tumor_entries()) // batch_size)


def set_requires_grad(module: torch.nn.Module, flag: bool) -> None:
    for p in module.parameters():
        p.requires_grad_(flag)


# ---------------------------------------------------------------------------
# Stage 1: self-representation pretraining
# ---------------------------------------------------------------------------

def pretrain_sr(config: TrainConfig, arch: ArchConfig, manifest: DatasetManifest,
                log_path: str | Path | None = None,
                sr: SRNetwork | None = None) -> tuple[SRNetwork, list[dict]]:
    """Train the SR autoencoder to reconstruct the scenario's target modality."""
    if not manifest.tumor_entries():
        raise DataError("manifest has no tumor slices to pretrain on")
    device = config.device
    torch.manual_seed(config.seed)
    if sr is None:
        sr = SRNetwork(arch).to(device)
        sr.apply(_init_weights)
    opt = torch.optim.Adam(sr.parameters(), lr=config.lr,
                           betas=(config.adam_beta1, config.adam_beta2))
    cache = VolumeCache()
    log = JsonlLogger(log_path)
    log.write({"type": "meta", "stage": "sr_pretrain", "scenario": config.scenario.tag,
               "target": config.scenario.target.value, "fingerprint": arch_fingerprint(arch),
               "seed": config.seed, "epochs": config.sr_epochs})
    steps = _steps_per_epoch(manifest, config.batch_size)
    t0 = time.monotonic()
    global_step = 0
    sr.train()
    for epoch in range(config.sr_epochs):
        for step in range(steps):
            batch = sample_batch(manifest, config.scenario, config.batch_size,
                                 _step_seed(config.seed, epoch, step), cache)
            _, y, _ = _batch_tensors(batch, config.scenario, device)
            out = sr(y)
            loss = (out.recon - y).abs().mean()
            if not torch.isfinite(loss):
                raise NumericalError(f"non-finite SR reconstruction loss at step {global_step}")
            opt.zero_grad()
            loss.backward()
            if config.grad_clip:
                torch.nn.utils.clip_grad_norm_(sr.parameters(), config.grad_clip)
            opt.step()
            log.write({"type": "step", "step": global_step, "epoch": epoch,
                       "recon_l1": float(loss.detach()),
                       "wall_time": time.monotonic() - t0})
            global_step += 1
    final_l1 = evaluate_sr_reconstruction(sr, config, manifest, cache)
    log.write({"type": "final", "recon_l1": final_l1})
    log.close()
    return sr, log.records


@torch.no_grad()
def evaluate_sr_reconstruction(sr: SRNetwork, config: TrainConfig,
                               manifest: DatasetManifest, cache: VolumeCache | None = None) -> float:
    """Mean absolute reconstruction error over every tumor slice."""
    from .data import load_sample
    cache = cache or VolumeCache()
    sr.eval()
    errs = []
    for entry in manifest.tumor_entries():
        s = load_sample(manifest, entry, cache)
        y = torch.from_numpy(s.images[config.scenario.target][None, None]).to(config.device)
        out = sr(y)
        errs.append(float((out.recon - y).abs().mean()))
    sr.train()
    return float(np.mean(errs))


# ---------------------------------------------------------------------------
# Stage 2: translation training
# ---------------------------------------------------------------------------

def warm_start_generator(gen: Generator, sr: SRNetwork) -> None:
    """Load the pretrained autoencoder parameters into the translation network.

    Every branch encoder (including the target re-encode branch) starts from
    the SR encoder, and both decoders start from the SR decoder trunk; the
    image decoder also takes the SR reconstruction head, so the generator
    begins as "decode SR-space features into a target-like image". The
    4-channel segmentation head stays freshly initialized.
    """
    enc_state = sr.encoder.state_dict()
    for branch in list(gen.branches) + [gen.target_branch]:
        branch.load_state_dict(enc_state)
    gen.decoder.load_state_dict(sr.decoder.state_dict())
    gen.seg_decoder.blocks.load_state_dict(sr.decoder.blocks.state_dict())


def contrastive_term(gen: Generator, out, config: TrainConfig) -> torch.Tensor:
    """Two-level query-selected contrastive loss between source and re-encoded features.

    One selection per batch element is computed from the source fusion feature
    (post multi-modal attention) and routes both contrastive levels: the
    attention-stage features and the post-1x1-conv features. Anchors come from
    the re-encoded generated image, positives from the source pathway.
    """
    gen_attn, gen_post = gen.encode_generated(out.image)
    src_attn = out.fusion_feature.values
    src_post = out.fusion_post_conv_feature.values
    tau = config.weights.tau
    per_element = []
    for b in range(src_attn.shape[0]):
        sel = qsattn.query_select(src_attn[b], config.k_queries,
                                  scale=config.attention_scale,
                                  detach_attention=config.detach_attention)
        lvl1 = L.contrastive_loss(qsattn.route_features(sel, gen_attn.values[b]),
                                  qsattn.route_features(sel, src_attn[b]), tau)
        lvl2 = L.contrastive_loss(qsattn.route_features(sel, gen_post.values[b]),
                                  qsattn.route_features(sel, src_post[b]), tau)
        per_element.append(0.5 * (lvl1 + lvl2))
    return torch.stack(per_element).mean()


def train_translation(config: TrainConfig, arch: ArchConfig, manifest: DatasetManifest,
                      sr: SRNetwork, log_path: str | Path | None = None,
                      checkpoint_path: str | Path | None = None,
                      generator: Generator | None = None,
                      discriminator: PatchDiscriminator | None = None) -> ScenarioModel:
    """Alternating D/G optimization of the full translation objective."""
    tumor = manifest.tumor_entries()
    if len(tumor) < config.batch_size:
        raise DataError(f"need at least batch_size={config.batch_size} tumor slices, "
                        f"manifest has {len(tumor)}")
    device = config.device
    torch.manual_seed(config.seed + 1)
    if generator is None or discriminator is None:
        g, d, _ = build_models(arch, config.seed + 1, device)
        if generator is None:
            generator = g
            if config.warm_start_from_sr:
                warm_start_generator(generator, sr)
        discriminator = discriminator or d
    sr = sr.to(device)
    if config.freeze_sr:
        set_requires_grad(sr, False)
        sr.eval()

    opt_g = torch.optim.Adam(generator.parameters(), lr=config.lr,
                             betas=(config.adam_beta1, config.adam_beta2))
    opt_d = torch.optim.Adam(discriminator.parameters(), lr=config.lr,
                             betas=(config.adam_beta1, config.adam_beta2))
    cache = VolumeCache()
    log = JsonlLogger(log_path)
    log.write({"type": "meta", "stage": "translation", "scenario": config.scenario.tag,
               "target": config.scenario.target.value, "fingerprint": arch_fingerprint(arch),
               "seed": config.seed, "epochs": config.gen_epochs,
               "weights": asdict(config.weights), "freeze_sr": config.freeze_sr})
    steps = _steps_per_epoch(manifest, config.batch_size)
    t0 = time.monotonic()
    global_step = 0
    for epoch in range(config.gen_epochs):
        for step in range(steps):
            batch = sample_batch(manifest, config.scenario, config.batch_size,
                                 _step_seed(config.seed + 1, epoch, step), cache)
            sources, y, mask = _batch_tensors(batch, config.scenario, device)

            # --- discriminator step (generator frozen via detached fake)
            with torch.no_grad():
                fake = generator(sources).image
            d_real = discriminator(y)
            d_fake = discriminator(fake)
            _, d_adv = L.adversarial_losses(d_real, d_fake, config.gan_mode)
            if not torch.isfinite(d_adv):
                raise NumericalError(f"non-finite discriminator loss at step {global_step}")
            opt_d.zero_grad()
            d_adv.backward()
            if config.grad_clip:
                torch.nn.utils.clip_grad_norm_(discriminator.parameters(), config.grad_clip)
            opt_d.step()

            # --- generator step (discriminator frozen)
            set_requires_grad(discriminator, False)
            out = generator(sources)
            g_fake_logits = discriminator(out.image)
            g_adv, _ = L.adversarial_losses(d_real.detach(), g_fake_logits, config.gan_mode)
            con = contrastive_term(generator, out, config)
            seg = L.segmentation_loss(out.seg_logits, mask)
            sr_ctx = torch.no_grad() if config.freeze_sr else contextlib.nullcontext()
            with sr_ctx:
                sro = sr(y)
            sr_dec = L.sr_decoder_loss(out.decoder_features, sro.decoder_features,
                                       config.kl_direction)
            smr = L.smr_loss(out.encoder_features, sro.encoder_features[-1])
            mmr = L.mmr_loss(out.fusion_post_conv_feature, sro.bottleneck)
            breakdown = L.total_generator_loss(g_adv, con, seg, sr_dec, smr, mmr, config.weights)
            opt_g.zero_grad()
            breakdown.total.backward()
            if config.grad_clip:
                torch.nn.utils.clip_grad_norm_(generator.parameters(), config.grad_clip)
            opt_g.step()
            set_requires_grad(discriminator, True)

            record = {"type": "step", "step": global_step, "epoch": epoch,
                      "d_adv": float(d_adv.detach()), "wall_time": time.monotonic() - t0}
            record.update(breakdown.scalars())
            log.write(record)
            global_step += 1
        if checkpoint_path and config.checkpoint_every and (epoch + 1) % config.checkpoint_every == 0:
            save_checkpoint(checkpoint_path, arch, generator=generator,
                            discriminator=discriminator, sr=sr,
                            scenario_tag=config.scenario.tag,
                            meta={"epoch": epoch + 1, "stage": "translation"})
    summary = {"steps": global_step, "epochs": config.gen_epochs,
               "final": log.records[-1] if log.records else {},
               "target": config.scenario.target.value}
    if checkpoint_path:
        save_checkpoint(checkpoint_path, arch, generator=generator,
                        discriminator=discriminator, sr=sr,
                        scenario_tag=config.scenario.tag,
                        meta={"epoch": config.gen_epochs, "stage": "final",
                              "seed": config.seed})
    log.close()
    return ScenarioModel(scenario=config.scenario, generator=generator,
                         discriminator=discriminator, sr=sr, arch=arch,
                         config=config, summary=summary)


# ---------------------------------------------------------------------------
# Dedicated training over all four scenarios
# ---------------------------------------------------------------------------

def train_all_scenarios(base_config: TrainConfig, arch: ArchConfig, manifest: DatasetManifest,
                        out_dir: str | Path) -> list[dict]:
    """Train one dedicated model per missing-modality scenario.

    Per-scenario failures are recorded and remaining scenarios still run.
    Returns one result record per scenario with the checkpoint/log paths.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    results = []
    for i, target in enumerate(Modality.canonical()):
        scenario = MissingScenario(target)
        config = replace(base_config, scenario=scenario, seed=base_config.seed + i)
        paths = {
            "checkpoint": out_dir / f"model_{scenario.tag}.pt",
            "sr_log": out_dir / f"log_sr_{scenario.tag}.jsonl",
            "translation_log": out_dir / f"log_translation_{scenario.tag}.jsonl",
        }
        record: dict = {"scenario": scenario.tag, "target": target.value,
                        "paths": {k: str(v) for k, v in paths.items()}}
        try:
            sr, _ = pretrain_sr(config, arch, manifest, log_path=paths["sr_log"])
            model = train_translation(config, arch, manifest, sr,
                                      log_path=paths["translation_log"],
                                      checkpoint_path=paths["checkpoint"])
            record["status"] = "ok"
            record["summary"] = model.summary
        except Exception as exc:  # keep going; report at the end
            record["status"] = "failed"
            record["error"] = f"{type(exc).__name__}: {exc}"
        results.append(record)
    with open(out_dir / "summary.json", "w") as f:
        json.dump(results, f, indent=2)
    return results
