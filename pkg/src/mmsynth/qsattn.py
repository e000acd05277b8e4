"""Entropy-based query selection over a global feature self-attention matrix.

The fused source feature map is flattened to a [HW, C] matrix Q; the global
attention A = row_softmax(Q Q^T) says how similar each spatial position is to
every other. Rows with low entropy are the most distinctive positions, and
only the K lowest-entropy rows are kept as queries for contrastive learning.
Selection is always computed from the source-side feature map; the resulting
attention rows then route both the source and the generated feature maps.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch

from .errors import NumericalError

PROB_FLOOR = 1e-12  # clamp inside logs so 0 * log 0 == 0


@dataclass
class AttentionMatrix:
    values: torch.Tensor  # [HW, HW], rows sum to 1
    source_shape: tuple[int, int, int]  # (C, H, W)


@dataclass
class EntropyVector:
    values: torch.Tensor  # [HW], nats


@dataclass
class QuerySelection:
    indices: torch.Tensor  # [K] long, ascending entropy order
    routed_attention: torch.Tensor | None  # [K, HW] rows of A at `indices`


def _flatten_spatial(f: torch.Tensor) -> torch.Tensor:
    """[C, H, W] -> [HW, C] with position index i = h * W + w."""
    c = f.shape[0]
    return f.reshape(c, -1).transpose(0, 1)


def global_attention(f: torch.Tensor, scale: bool = False) -> AttentionMatrix:
    """Row-softmax of Q Q^T for the [HW, C] flattening Q of a feature map.

    scale=True divides the product by sqrt(C) before the softmax for
    numerical headroom at large channel counts (off by default).
    """
    if f.dim() != 3:
        raise ValueError(f"expected [C, H, W] feature map, got shape {tuple(f.shape)}")
    if not torch.isfinite(f).all():
        raise NumericalError("non-finite values in attention feature map")
    q = _flatten_spatial(f)
    logits = q @ q.transpose(0, 1)
    if scale:
        logits = logits / (q.shape[1] ** 0.5)
    attn = torch.softmax(logits, dim=1)
    return AttentionMatrix(values=attn, source_shape=tuple(f.shape))


def row_entropy(a: AttentionMatrix) -> EntropyVector:
    """Per-row Shannon entropy in nats, with probabilities clamped at 1e-12."""
    p = a.values.clamp_min(PROB_FLOOR)
    h = -(a.values * p.log()).sum(dim=1)
    return EntropyVector(values=h)


def select_queries(h: EntropyVector, k: int, attention: AttentionMatrix | None = None) -> QuerySelection:
    """Indices of the K lowest-entropy rows, ascending entropy, ties by position.

    When the attention matrix is supplied the selection also carries its rows
    at the chosen indices so features can be routed with them.
    """
    hw = h.values.shape[0]
    if not 1 <= k <= hw:
        raise ValueError(f"K={k} out of range 1..{hw}")
    order = torch.argsort(h.values, stable=True)  # stable sort -> smaller index wins ties
    idx = order[:k]
    routed = attention.values[idx] if attention is not None else None
    return QuerySelection(indices=idx, routed_attention=routed)


def route_features(sel: QuerySelection, f: torch.Tensor) -> torch.Tensor:
    """Attention-weighted aggregation of a feature map at the selected queries.

    Returns routed_attention @ Q_f, i.e. [K, C]. The selection must come from
    a feature map with the same spatial size.
    """
    if sel.routed_attention is None:
        raise ValueError("selection carries no attention rows; build it with the attention matrix")
    q = _flatten_spatial(f)
    if q.shape[0] != sel.routed_attention.shape[1]:
        raise ValueError(
            f"spatial size mismatch: attention over {sel.routed_attention.shape[1]} positions, "
            f"feature map has {q.shape[0]}"
        )
    return sel.routed_attention @ q


def query_select(f: torch.Tensor, k: int, scale: bool = False,
                 detach_attention: bool = False) -> QuerySelection:
    """Full pipeline on a source feature map: attention, entropy, selection.

    K larger than HW degrades gracefully to selecting every position (small
    desk-scale feature maps).
    """
    attn = global_attention(f, scale=scale)
    if detach_attention:
        attn = AttentionMatrix(values=attn.values.detach(), source_shape=attn.source_shape)
    ent = row_entropy(attn)
    k_eff = min(k, ent.values.shape[0])
    return select_queries(ent, k_eff, attn)
