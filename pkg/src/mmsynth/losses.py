"""Training objectives for the translation network.

All scalars are in nats (log-based losses) or squared feature units (MSE).
Probabilities are clamped at 1e-12 before any log.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import torch
import torch.nn.functional as F

from .errors import NumericalError

PROB_FLOOR = 1e-12
LOG_FLOOR = math.log(PROB_FLOOR)
N_SEG_CLASSES = 4


@dataclass(frozen=True)
class LossWeights:
    """Coefficients of the total generator objective, plus the contrastive temperature."""

    alpha: float = 0.1  # contrastive
    beta: float = 0.05  # segmentation
    gamma: float = 0.1  # decoder self-representation KL
    delta: float = 0.1  # single-modal representation MSE
    eta: float = 0.1  # multi-modal representation MSE
    tau: float = 0.07  # contrastive temperature

    def __post_init__(self):
        for name in ("alpha", "beta", "gamma", "delta", "eta"):
            if getattr(self, name) < 0:
                raise ValueError(f"loss weight {name} must be >= 0, got {getattr(self, name)}")
        if self.tau <= 0:
            raise ValueError(f"temperature tau must be > 0, got {self.tau}")


@dataclass
class LossBreakdown:
    """Unweighted generator loss components plus the weighted total."""

    adv: torch.Tensor
    con: torch.Tensor
    seg: torch.Tensor
    sr_decoder: torch.Tensor
    smr: torch.Tensor
    mmr: torch.Tensor
    total: torch.Tensor

    def scalars(self) -> dict[str, float]:
        return {k: float(getattr(self, k).detach()) for k in
                ("adv", "con", "seg", "sr_decoder", "smr", "mmr", "total")}


def _values(feat) -> torch.Tensor:
    """Accept raw tensors or FeatureMap-style wrappers with a .values field."""
    return feat.values if hasattr(feat, "values") else feat


def _check_finite(t: torch.Tensor, what: str) -> None:
    if not torch.isfinite(t).all():
        raise NumericalError(f"non-finite values in {what}")


# ---------------------------------------------------------------------------
# Contrastive
# ---------------------------------------------------------------------------

def contrastive_loss(anchors: torch.Tensor, positives: torch.Tensor, tau: float) -> torch.Tensor:
    """InfoNCE over K query locations.

    Rows are L2-normalized; anchor i's positive is positives[i] and its
    negatives are the remaining K-1 rows of positives. Anchors come from the
    re-encoded generated image, positives from the source fusion features.
    """
    if anchors.dim() != 2 or anchors.shape != positives.shape:
        raise ValueError(f"expected matching [K, C] inputs, got {tuple(anchors.shape)} "
                         f"and {tuple(positives.shape)}")
    k = anchors.shape[0]
    if k < 2:
        raise ValueError(f"need K >= 2 locations for negatives, got K={k}")
    _check_finite(anchors, "contrastive anchors")
    _check_finite(positives, "contrastive positives")
    a = F.normalize(anchors, dim=1, eps=PROB_FLOOR)
    p = F.normalize(positives, dim=1, eps=PROB_FLOOR)
    logits = (a @ p.transpose(0, 1)) / tau
    target = torch.arange(k, device=logits.device)
    return F.cross_entropy(logits, target)


# ---------------------------------------------------------------------------
# Segmentation
# ---------------------------------------------------------------------------

def segmentation_loss(logits: torch.Tensor, target: torch.Tensor) -> torch.Tensor:
    """Mean per-pixel cross-entropy of 4-class softmax predictions.

    Accepts [4, H, W] with [H, W] labels or batched [B, 4, H, W] / [B, H, W];
    the mean runs over every pixel (and batch element).
    """
    if logits.dim() == 3:
        logits = logits.unsqueeze(0)
        target = target.unsqueeze(0)
    if logits.dim() != 4 or logits.shape[1] != N_SEG_CLASSES:
        raise ValueError(f"expected [B, {N_SEG_CLASSES}, H, W] logits, got {tuple(logits.shape)}")
    target = target.long()
    if target.min() < 0 or target.max() >= N_SEG_CLASSES:
        raise ValueError(f"segmentation labels outside 0..{N_SEG_CLASSES - 1}: "
                         f"[{int(target.min())}, {int(target.max())}]")
    _check_finite(logits, "segmentation logits")
    logp = F.log_softmax(logits, dim=1).clamp_min(LOG_FLOOR)
    return F.nll_loss(logp, target)


# ---------------------------------------------------------------------------
# Self-representation
# ---------------------------------------------------------------------------

def _channel_softmax_kl(target_feat: torch.Tensor, input_feat: torch.Tensor) -> torch.Tensor:
    """KL(target || input) per spatial position after channel-wise softmax, averaged."""
    dim = 0 if target_feat.dim() == 3 else 1
    t = torch.softmax(target_feat, dim=dim).clamp_min(PROB_FLOOR)
    log_t = t.log()
    log_i = F.log_softmax(input_feat, dim=dim).clamp_min(LOG_FLOOR)
    return (t * (log_t - log_i)).sum(dim=dim).mean()


def sr_decoder_loss(gen_decoder_feats, sr_decoder_feats, direction: str = "sr_to_gen") -> torch.Tensor:
    """Sum over decoder stages of the channel-softmax KL between feature maps.

    direction "sr_to_gen" (default) treats the self-representation features as
    the target distribution and the generator features as the approximating
    one; "gen_to_sr" swaps the roles.
    """
    gen = [_values(f) for f in gen_decoder_feats]
    sr = [_values(f) for f in sr_decoder_feats]
    if len(gen) != len(sr):
        raise ValueError(f"decoder stage count mismatch: {len(gen)} vs {len(sr)}")
    if direction not in ("sr_to_gen", "gen_to_sr"):
        raise ValueError(f"unknown KL direction {direction!r}")
    total = None
    for i, (g, s) in enumerate(zip(gen, sr)):
        if g.shape != s.shape:
            raise ValueError(f"decoder stage {i} shape mismatch: {tuple(g.shape)} vs {tuple(s.shape)}")
        _check_finite(g, f"generator decoder stage {i}")
        _check_finite(s, f"self-representation decoder stage {i}")
        stage = _channel_softmax_kl(s, g) if direction == "sr_to_gen" else _channel_softmax_kl(g, s)
        total = stage if total is None else total + stage
    if total is None:
        raise ValueError("no decoder stages to compare")
    return total


def smr_loss(branch_feats, sr_encoder_feat) -> torch.Tensor:
    """Mean over source branches of the MSE to the self-representation encoder feature."""
    sr = _values(sr_encoder_feat)
    feats = [_values(f) for f in branch_feats]
    if not feats:
        raise ValueError("no branch features")
    losses = []
    for i, b in enumerate(feats):
        if b.shape != sr.shape:
            raise ValueError(f"branch {i} shape {tuple(b.shape)} != SR encoder {tuple(sr.shape)}")
        _check_finite(b, f"branch feature {i}")
        losses.append(F.mse_loss(b, sr))
    _check_finite(sr, "SR encoder feature")
    return torch.stack(losses).mean()


def mmr_loss(fusion_feat, sr_bottleneck) -> torch.Tensor:
    """MSE between the fused multi-modal feature and the SR bottleneck feature."""
    a, b = _values(fusion_feat), _values(sr_bottleneck)
    if a.shape != b.shape:
        raise ValueError(f"fusion shape {tuple(a.shape)} != SR bottleneck {tuple(b.shape)}")
    _check_finite(a, "fusion feature")
    _check_finite(b, "SR bottleneck")
    return F.mse_loss(a, b)


# ---------------------------------------------------------------------------
# Adversarial
# ---------------------------------------------------------------------------

def adversarial_losses(d_real_logits: torch.Tensor, d_fake_logits: torch.Tensor,
                       mode: str = "nonsaturating") -> tuple[torch.Tensor, torch.Tensor]:
    """(generator, discriminator) adversarial losses over patch logit maps.

    nonsaturating: d = E[softplus(-real)] + E[softplus(fake)], g = E[softplus(-fake)].
    lsgan: d = E[(real - 1)^2] + E[fake^2], g = E[(fake - 1)^2].
    """
    _check_finite(d_real_logits, "discriminator real logits")
    _check_finite(d_fake_logits, "discriminator fake logits")
    if mode == "nonsaturating":
        d_adv = F.softplus(-d_real_logits).mean() + F.softplus(d_fake_logits).mean()
        g_adv = F.softplus(-d_fake_logits).mean()
    elif mode == "lsgan":
        d_adv = ((d_real_logits - 1.0) ** 2).mean() + (d_fake_logits ** 2).mean()
        g_adv = ((d_fake_logits - 1.0) ** 2).mean()
    else:
        raise ValueError(f"unknown adversarial mode {mode!r}")
    return g_adv, d_adv


# ---------------------------------------------------------------------------
# Total objective
# ---------------------------------------------------------------------------

def total_generator_loss(adv, con, seg, sr_decoder, smr, mmr, weights: LossWeights) -> LossBreakdown:
    """Weighted sum of the generator objective; keeps unweighted components."""
    parts = {"adv": adv, "con": con, "seg": seg, "sr_decoder": sr_decoder, "smr": smr, "mmr": mmr}
    for name, value in parts.items():
        v = value if torch.is_tensor(value) else torch.as_tensor(float(value))
        if not torch.isfinite(v).all():
            raise NumericalError(f"non-finite {name} loss component")
        parts[name] = v
    total = (parts["adv"]
             + weights.alpha * parts["con"]
             + weights.beta * parts["seg"]
             + weights.gamma * parts["sr_decoder"]
             + weights.delta * parts["smr"]
             + weights.eta * parts["mmr"])
    return LossBreakdown(total=total, **parts)
