"""Translation and self-representation networks.

All modules are 2D and operate on single-channel images in [-1, 1],
batched as [B, 1, H, W] (unbatched [1, H, W] is accepted and squeezed back).

Generator: one encoder per source modality with a channel-attention block,
a fusion module (concat, channel attention, 1x1 conv), an image decoder with
tanh head, and a parallel segmentation decoder with a 4-channel head.
A dedicated target-branch encoder re-encodes generated images through the
shared fusion module (its single output fills all three fusion slots) so the
generated image yields fused features comparable to the source ones. This
re-encode wiring lives entirely in `Generator.encode_generated`.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import torch
import torch.nn as nn

from .errors import DataError

N_SEG_CLASSES = 4


@dataclass(frozen=True)
class ArchConfig:
    """Architecture hyperparameters; the fingerprint hashes exactly these."""

    image_size: int = 256
    base_width: int = 32
    enc_stages: int = 4
    attn_reduction: int = 8
    disc_base_width: int = 64
    shared_branch_attention: bool = False

    def __post_init__(self):
        if self.enc_stages < 2 or self.enc_stages > 6:
            raise ValueError(f"enc_stages must be in 2..6, got {self.enc_stages}")
        if self.image_size % self.downsample_factor != 0:
            raise ValueError(f"image_size {self.image_size} not divisible by "
                             f"downsampling factor {self.downsample_factor}")

    @property
    def downsample_factor(self) -> int:
        return 2 ** self.enc_stages

    @property
    def top_width(self) -> int:
        return self.base_width * 2 ** (self.enc_stages - 1)


def arch_fingerprint(arch: ArchConfig) -> str:
    payload = json.dumps(asdict(arch), sort_keys=True).encode()
    return hashlib.sha256(payload).hexdigest()[:16]


@dataclass
class FeatureMap:
    values: torch.Tensor
    stage: str


@dataclass
class GeneratorOutput:
    image: torch.Tensor  # [B?, 1, H, W] in [-1, 1]
    seg_logits: torch.Tensor  # [B?, 4, H, W]
    fusion_feature: FeatureMap  # post multi-modal attention
    fusion_post_conv_feature: FeatureMap  # after the fusion 1x1 conv
    encoder_features: list[FeatureMap]  # per-branch top features (post attention)
    decoder_features: list[FeatureMap]  # one per image-decoder level


@dataclass
class SROutput:
    recon: torch.Tensor  # [B?, 1, H, W] in [-1, 1]
    encoder_features: list[FeatureMap]  # per encoder stage
    bottleneck: FeatureMap
    decoder_features: list[FeatureMap]  # aligned with GeneratorOutput.decoder_features


# ---------------------------------------------------------------------------
# Blocks
# ---------------------------------------------------------------------------

class ChannelAttention(nn.Module):
    """Squeeze-excitation channel gate."""

    def __init__(self, channels: int, reduction: int = 8):
        super().__init__()
        hidden = max(channels // reduction, 1)
        self.pool = nn.AdaptiveAvgPool2d(1)
        self.gate = nn.Sequential(
            nn.Conv2d(channels, hidden, 1),
            nn.ReLU(inplace=True),
            nn.Conv2d(hidden, channels, 1),
            nn.Sigmoid(),
        )

    def forward(self, x):
        return x * self.gate(self.pool(x))


def _down_block(in_ch: int, out_ch: int, norm: bool = True) -> nn.Sequential:
    layers: list[nn.Module] = [nn.Conv2d(in_ch, out_ch, 4, stride=2, padding=1)]
    if norm:
        layers.append(nn.InstanceNorm2d(out_ch))
    layers.append(nn.LeakyReLU(0.2, inplace=True))
    return nn.Sequential(*layers)


def _up_block(in_ch: int, out_ch: int) -> nn.Sequential:
    return nn.Sequential(
        nn.Upsample(scale_factor=2, mode="nearest"),
        nn.Conv2d(in_ch, out_ch, 3, padding=1),
        nn.InstanceNorm2d(out_ch),
        nn.ReLU(inplace=True),
    )


class BranchEncoder(nn.Module):
    """Stack of stride-2 blocks; width doubles per stage from base_width."""

    def __init__(self, arch: ArchConfig, in_channels: int = 1):
        super().__init__()
        widths = [arch.base_width * 2 ** i for i in range(arch.enc_stages)]
        blocks = []
        prev = in_channels
        for i, w in enumerate(widths):
            blocks.append(_down_block(prev, w, norm=i > 0))
            prev = w
        self.blocks = nn.ModuleList(blocks)

    def forward(self, x) -> tuple[torch.Tensor, list[torch.Tensor]]:
        stages = []
        for block in self.blocks:
            x = block(x)
            stages.append(x)
        return x, stages


class FusionModule(nn.Module):
    """Concat the three branch features, gate with channel attention, then a 1x1 conv.

    The conv output is left unnormalized so the multi-modal representation
    constraint (MSE against the SR bottleneck) can pin its absolute scale.
    """

    def __init__(self, arch: ArchConfig):
        super().__init__()
        top = arch.top_width
        self.attn = ChannelAttention(3 * top, arch.attn_reduction)
        self.conv = nn.Conv2d(3 * top, top, 1)

    def forward(self, feats: list[torch.Tensor]) -> tuple[torch.Tensor, torch.Tensor]:
        fused = self.attn(torch.cat(feats, dim=1))
        return fused, self.conv(fused)


class StageDecoder(nn.Module):
    """Mirror of the encoder with nearest-neighbor upsampling and a conv head."""

    def __init__(self, arch: ArchConfig, out_channels: int, tanh: bool):
        super().__init__()
        widths = [max(arch.top_width >> (i + 1), arch.base_width) for i in range(arch.enc_stages)]
        blocks = []
        prev = arch.top_width
        for w in widths:
            blocks.append(_up_block(prev, w))
            prev = w
        self.blocks = nn.ModuleList(blocks)
        self.head = nn.Conv2d(prev, out_channels, 3, padding=1)
        self.tanh = tanh

    def forward(self, x) -> tuple[torch.Tensor, list[torch.Tensor]]:
        stages = []
        for block in self.blocks:
            x = block(x)
            stages.append(x)
        out = self.head(x)
        if self.tanh:
            out = torch.tanh(out)
        return out, stages


class PatchDiscriminator(nn.Module):
    """70x70-receptive-field patch discriminator emitting a logit map."""

    def __init__(self, arch: ArchConfig, in_channels: int = 1):
        super().__init__()
        w = arch.disc_base_width
        self.net = nn.Sequential(
            nn.Conv2d(in_channels, w, 4, stride=2, padding=1),
            nn.LeakyReLU(0.2, inplace=True),
            _down_block(w, w * 2),
            _down_block(w * 2, w * 4),
            nn.Conv2d(w * 4, w * 8, 4, stride=1, padding=1),
            nn.InstanceNorm2d(w * 8),
            nn.LeakyReLU(0.2, inplace=True),
            nn.Conv2d(w * 8, 1, 4, stride=1, padding=1),
        )

    def forward(self, image: torch.Tensor) -> torch.Tensor:
        image, batched = _ensure_batched(image, "discriminator input")
        out = self.net(image)
        return out if batched else out.squeeze(0)


# ---------------------------------------------------------------------------
# Generator and self-representation networks
# ---------------------------------------------------------------------------

def _ensure_batched(x: torch.Tensor, what: str) -> tuple[torch.Tensor, bool]:
    if x.dim() == 3:
        return x.unsqueeze(0), False
    if x.dim() == 4:
        return x, True
    raise ValueError(f"{what}: expected [1, H, W] or [B, 1, H, W], got shape {tuple(x.shape)}")


class Generator(nn.Module):
    def __init__(self, arch: ArchConfig):
        super().__init__()
        self.arch = arch
        self.branches = nn.ModuleList([BranchEncoder(arch) for _ in range(3)])
        if arch.shared_branch_attention:
            shared = ChannelAttention(arch.top_width, arch.attn_reduction)
            self.branch_attn = nn.ModuleList([shared, shared, shared])
        else:
            self.branch_attn = nn.ModuleList(
                [ChannelAttention(arch.top_width, arch.attn_reduction) for _ in range(3)])
        self.target_branch = BranchEncoder(arch)
        self.target_attn = ChannelAttention(arch.top_width, arch.attn_reduction)
        self.fusion = FusionModule(arch)
        self.decoder = StageDecoder(arch, out_channels=1, tanh=True)
        self.seg_decoder = StageDecoder(arch, out_channels=N_SEG_CLASSES, tanh=False)

    def _check_spatial(self, x: torch.Tensor) -> None:
        h, w = x.shape[-2:]
        f = self.arch.downsample_factor
        if h % f or w % f:
            raise ValueError(f"spatial size {h}x{w} not divisible by downsampling factor {f}")

    def forward(self, sources) -> GeneratorOutput:
        if len(sources) != 3:
            raise ValueError(f"expected 3 source images, got {len(sources)}")
        batched_flags = []
        xs = []
        for i, s in enumerate(sources):
            x, b = _ensure_batched(s, f"source {i}")
            xs.append(x)
            batched_flags.append(b)
        if any(x.shape != xs[0].shape for x in xs):
            raise ValueError(f"source shape mismatch: {[tuple(x.shape) for x in xs]}")
        self._check_spatial(xs[0])
        batched = batched_flags[0]

        branch_tops = []
        for x, enc, attn in zip(xs, self.branches, self.branch_attn):
            top, _ = enc(x)
            branch_tops.append(attn(top))
        fused_attn, fused_post = self.fusion(branch_tops)
        image, dec_stages = self.decoder(fused_post)
        seg_logits, _ = self.seg_decoder(fused_post)

        def _maybe_squeeze(t: torch.Tensor) -> torch.Tensor:
            return t if batched else t.squeeze(0)

        return GeneratorOutput(
            image=_maybe_squeeze(image),
            seg_logits=_maybe_squeeze(seg_logits),
            fusion_feature=FeatureMap(_maybe_squeeze(fused_attn), "fusion_attn"),
            fusion_post_conv_feature=FeatureMap(_maybe_squeeze(fused_post), "fusion_post_conv"),
            encoder_features=[FeatureMap(_maybe_squeeze(t), f"branch{i}_top")
                              for i, t in enumerate(branch_tops)],
            decoder_features=[FeatureMap(_maybe_squeeze(t), f"decoder_up{i}")
                              for i, t in enumerate(dec_stages)],
        )

    def encode_generated(self, image: torch.Tensor) -> tuple[FeatureMap, FeatureMap]:
        """Re-encode a generated image through the shared fusion pathway.

        The dedicated target-branch output fills all three fusion slots, so a
        single generated image yields fused features with the same shape as
        the source ones.
        """
        x, batched = _ensure_batched(image, "generated image")
        self._check_spatial(x)
        top, _ = self.target_branch(x)
        top = self.target_attn(top)
        fused_attn, fused_post = self.fusion([top, top, top])
        if not batched:
            fused_attn, fused_post = fused_attn.squeeze(0), fused_post.squeeze(0)
        return (FeatureMap(fused_attn, "gen_fusion_attn"),
                FeatureMap(fused_post, "gen_fusion_post_conv"))


class SRNetwork(nn.Module):
    """Target-modality autoencoder providing self-representation features."""

    def __init__(self, arch: ArchConfig):
        super().__init__()
        self.arch = arch
        self.encoder = BranchEncoder(arch)
        top = arch.top_width
        # no norm here: the bottleneck is the multi-modal matching target and
        # must keep its absolute scale
        self.bottleneck = nn.Sequential(
            nn.Conv2d(top, top, 3, padding=1),
            nn.ReLU(inplace=True),
        )
        self.decoder = StageDecoder(arch, out_channels=1, tanh=True)

    def forward(self, target: torch.Tensor) -> SROutput:
        x, batched = _ensure_batched(target, "SR input")
        h, w = x.shape[-2:]
        f = self.arch.downsample_factor
        if h % f or w % f:
            raise ValueError(f"spatial size {h}x{w} not divisible by downsampling factor {f}")
        top, stages = self.encoder(x)
        bott = self.bottleneck(top)
        recon, dec_stages = self.decoder(bott)

        def _maybe_squeeze(t: torch.Tensor) -> torch.Tensor:
            return t if batched else t.squeeze(0)

        return SROutput(
            recon=_maybe_squeeze(recon),
            encoder_features=[FeatureMap(_maybe_squeeze(t), f"sr_enc{i}")
                              for i, t in enumerate(stages)],
            bottleneck=FeatureMap(_maybe_squeeze(bott), "sr_bottleneck"),
            decoder_features=[FeatureMap(_maybe_squeeze(t), f"sr_up{i}")
                              for i, t in enumerate(dec_stages)],
        )


# ---------------------------------------------------------------------------
# Construction and persistence
# ---------------------------------------------------------------------------

def _init_weights(m: nn.Module) -> None:
    if isinstance(m, nn.Conv2d):
        nn.init.normal_(m.weight, 0.0, 0.02)
        if m.bias is not None:
            nn.init.zeros_(m.bias)


def build_models(arch: ArchConfig, seed: int, device: str = "cpu"):
    """Seeded construction of (generator, discriminator, SR network)."""
    torch.manual_seed(seed)
    gen = Generator(arch).to(device)
    disc = PatchDiscriminator(arch).to(device)
    sr = SRNetwork(arch).to(device)
    for m in (gen, disc, sr):
        m.apply(_init_weights)
    return gen, disc, sr


def save_checkpoint(path: str | Path, arch: ArchConfig, *, generator: Generator | None = None,
                    discriminator: PatchDiscriminator | None = None, sr: SRNetwork | None = None,
                    scenario_tag: str | None = None, meta: dict | None = None) -> None:
    """Archive named parameter tensors with an architecture fingerprint."""
    state: dict[str, dict] = {}
    if generator is not None:
        state["generator"] = generator.state_dict()
    if discriminator is not None:
        state["discriminator"] = discriminator.state_dict()
    if sr is not None:
        state["sr"] = sr.state_dict()
    payload = {
        "fingerprint": arch_fingerprint(arch),
        "arch": asdict(arch),
        "scenario": scenario_tag,
        "meta": meta or {},
        "state": state,
    }
    torch.save(payload, Path(path))


def load_checkpoint(path: str | Path, expected_arch: ArchConfig | None = None) -> dict:
    """Load a checkpoint, verifying integrity and fingerprint compatibility."""
    path = Path(path)
    if not path.exists():
        raise DataError(f"no such checkpoint: {path}")
    try:
        payload = torch.load(path, map_location="cpu", weights_only=True)
    except Exception as exc:  # torch raises various things on corrupt archives
        raise DataError(f"corrupt checkpoint {path}: {exc}") from exc
    for key in ("fingerprint", "arch", "state"):
        if key not in payload:
            raise DataError(f"corrupt checkpoint {path}: missing {key!r}")
    arch = ArchConfig(**payload["arch"])
    fp = arch_fingerprint(arch)
    if fp != payload["fingerprint"]:
        raise DataError(f"checkpoint {path} fingerprint mismatch: header {payload['fingerprint']}, "
                        f"recomputed {fp}")
    if expected_arch is not None:
        want = arch_fingerprint(expected_arch)
        if want != payload["fingerprint"]:
            raise DataError(f"architecture fingerprint mismatch: expected {want}, "
                            f"checkpoint has {payload['fingerprint']}")
    payload["arch_config"] = arch
    return payload


def models_from_checkpoint(path: str | Path, device: str = "cpu"):
    """Rebuild (generator, discriminator, sr) from a checkpoint; missing parts are None."""
    payload = load_checkpoint(path)
    arch = payload["arch_config"]
    state = payload["state"]
    gen = disc = sr = None
    if "generator" in state:
        gen = Generator(arch).to(device)
        gen.load_state_dict(state["generator"])
    if "discriminator" in state:
        disc = PatchDiscriminator(arch).to(device)
        disc.load_state_dict(state["discriminator"])
    if "sr" in state:
        sr = SRNetwork(arch).to(device)
        sr.load_state_dict(state["sr"])
    return gen, disc, sr, payload
