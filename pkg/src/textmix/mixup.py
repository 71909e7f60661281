"""The interpolation engine: lambda sampling, batch pairing, pair padding,
and one augmented training step against the encoder.

One lambda per mini-batch, drawn fresh from Beta(alpha, alpha). Pairing is
a uniform random permutation of the batch (fixed points allowed; a sample
mixed with itself is just the unmixed sample). The mixing layer k is
0 for input mode, n+1 for sentence-embedding (cls) mode, and a uniform
draw from the eligible set for manifold mode, which therefore reduces
bitwise to the other two when the set is {0} or {n+1}.

Padding tokens inserted for token-level mixing stay attendable: the pad
token choice is meaningful signal, so the attention mask is extended over
the padded length. Sentence-embedding mode never pads.
"""

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from . import tensor as T
from .encoder import EncoderClassifier
from .rng import RngStreams, sample_beta
from .tensor import Tensor

MODES = ("none", "cls", "input", "manifold")
PADDING_STRATEGIES = ("none", "pair", "max")
PADDING_TOKENS = ("sep", "pad", "unused")


@dataclass(frozen=True)
class MixupConfig:
    mode: str = "none"
    alpha: float = 1.0
    layer_set: tuple = ()           # eligible layers, manifold mode only
    padding_strategy: str = "pair"
    padding_token: str = "sep"
    start_fraction: float = 0.0     # fraction of epochs trained plain first

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.alpha <= 0.0:
            raise ValueError(f"alpha must be positive, got {self.alpha}")
        if self.padding_strategy not in PADDING_STRATEGIES:
            raise ValueError(f"padding_strategy must be one of {PADDING_STRATEGIES}")
        if self.padding_token not in PADDING_TOKENS:
            raise ValueError(f"padding_token must be one of {PADDING_TOKENS}")
        if not 0.0 <= self.start_fraction <= 1.0:
            raise ValueError(f"start_fraction must be in [0, 1], got {self.start_fraction}")
        if self.mode == "manifold" and not self.layer_set:
            raise ValueError("manifold mode needs a nonempty layer_set")
        object.__setattr__(self, "layer_set", tuple(sorted(set(self.layer_set))))

    def validate_layers(self, n_layers: int) -> None:
        bad = [k for k in self.layer_set if not 0 <= k <= n_layers + 1]
        if bad:
            raise ValueError(
                f"layer_set entries {bad} outside [0, {n_layers + 1}] "
                f"for a {n_layers}-layer encoder")


@dataclass
class MixedBatch:
    mixed_repr: Tensor              # representation at the mixing layer
    mixed_labels: np.ndarray        # [B, n_classes] row distributions
    lam: float
    layer: int
    pairing: np.ndarray             # permutation j(i)


def sample_lambda(alpha: float, rng: np.random.Generator) -> float:
    """One Beta(alpha, alpha) mixing proportion."""
    if alpha <= 0.0:
        raise ValueError(f"alpha must be positive, got {alpha}")
    return sample_beta(rng, alpha, alpha)


def pair_batch(batch_size: int, rng: np.random.Generator) -> np.ndarray:
    """Uniform random permutation pairing each sample with another."""
    if batch_size < 1:
        raise ValueError(f"batch_size must be >= 1, got {batch_size}")
    return rng.permutation(batch_size)


def select_mix_layer(layer_set: Sequence[int], rng: np.random.Generator) -> int:
    """Uniform draw from the eligible layer set; always exactly one draw,
    so rng streams stay aligned across eligible-set choices."""
    layers = sorted(set(layer_set))
    if not layers:
        raise ValueError("eligible layer set is empty")
    return layers[int(rng.integers(len(layers)))]


def interpolate(a: Tensor, b: Tensor, lam: float) -> Tensor:
    """lam * a + (1 - lam) * b."""
    if not 0.0 <= lam <= 1.0:
        raise ValueError(f"lambda must be in [0, 1], got {lam}")
    return T.lerp(a, b, lam)


def pad_pair(x1: Sequence[int], x2: Sequence[int], strategy: str, pad_id: int,
             global_max: Optional[int] = None,
             max_seq_len: Optional[int] = None) -> tuple:
    """Bring two token sequences to a common length before token-level mixing.

    pair: both extended to the longer one's length. max: both extended to
    global_max. none: lengths must already agree.
    """
    x1, x2 = list(x1), list(x2)
    m, n = len(x1), len(x2)
    if m < 1 or n < 1:
        raise ValueError("sequences must be nonempty")
    if strategy == "none":
        if m != n:
            raise ValueError(f"padding strategy 'none' with unequal lengths {m} and {n}")
        return x1, x2
    if strategy == "pair":
        target = max(m, n)
    elif strategy == "max":
        if global_max is None:
            raise ValueError("padding strategy 'max' needs global_max")
        if global_max < max(m, n):
            raise ValueError(
                f"global_max {global_max} shorter than sequence lengths ({m}, {n})")
        target = global_max
    else:
        raise ValueError(f"unknown padding strategy {strategy!r}")
    if max_seq_len is not None and target > max_seq_len:
        target = max_seq_len
        x1, x2 = x1[:target], x2[:target]
    return x1 + [pad_id] * (target - len(x1)), x2 + [pad_id] * (target - len(x2))


def _resolve_layer(cfg: MixupConfig, n_layers: int, rng: np.random.Generator) -> int:
    if cfg.mode == "cls":
        return n_layers + 1
    if cfg.mode == "input":
        return 0
    cfg.validate_layers(n_layers)
    return select_mix_layer(cfg.layer_set, rng)


def _token_level(cfg: MixupConfig, n_layers: int) -> bool:
    # Mixing below the pooled embedding needs per-pair consistent masks,
    # hence pair padding up front (k is drawn after batching).
    if cfg.mode == "input":
        return True
    return cfg.mode == "manifold" and min(cfg.layer_set) <= n_layers


def build_paired_inputs(token_ids: np.ndarray, mask: np.ndarray, perm: np.ndarray,
                        strategy: str, pad_id: int, global_max: Optional[int],
                        max_seq_len: int):
    """Per-pair padded (primary, partner) id matrices and their shared mask.

    Row i of the primary is sample i padded to its pair target length; row
    i of the partner is sample j(i) padded to the same target. Padding ids
    are attendable; positions beyond the target keep the inert pad fill of
    the incoming batch and stay masked.
    """
    B, L = token_ids.shape
    lengths = mask.sum(axis=1).astype(int)
    seqs = [token_ids[i, :lengths[i]].tolist() for i in range(B)]
    global_len = int(global_max) if global_max is not None else None
    padded1, padded2 = [], []
    for i in range(B):
        a, b = pad_pair(seqs[i], seqs[int(perm[i])], strategy, pad_id,
                        global_max=global_len, max_seq_len=max_seq_len)
        padded1.append(a)
        padded2.append(b)
    width = max(L, max(len(s) for s in padded1))
    ids1 = np.full((B, width), pad_id, dtype=token_ids.dtype)
    ids2 = np.full((B, width), pad_id, dtype=token_ids.dtype)
    new_mask = np.zeros((B, width), dtype=bool)
    for i in range(B):
        t = len(padded1[i])
        ids1[i, :t] = padded1[i]
        ids2[i, :t] = padded2[i]
        new_mask[i, :t] = True
    return ids1, ids2, new_mask


def mixup_step(model: EncoderClassifier, batch, cfg: MixupConfig,
               streams: RngStreams, global_max: Optional[int] = None):
    """One augmented step: draw lambda, pairing and mixing layer, mix the
    layer-k representations of the batch against its paired permutation,
    finish the forward pass on the mixed rows only, and return the
    soft-target cross entropy plus the MixedBatch record."""
    n = model.config.n_layers
    lam = sample_lambda(cfg.alpha, streams.lam)
    B = batch.token_ids.shape[0]
    perm = pair_batch(B, streams.pairing)
    k = _resolve_layer(cfg, n, streams.layer)

    if _token_level(cfg, n):
        pad_id = batch.pad_token_ids[cfg.padding_token]
        ids1, ids2, mask = build_paired_inputs(
            batch.token_ids, batch.attention_mask, perm, cfg.padding_strategy,
            pad_id, global_max, model.config.max_seq_len)
        mask1 = mask2 = mask
    else:
        ids1, mask1 = batch.token_ids, batch.attention_mask
        ids2, mask2 = ids1[perm], mask1[perm]
        mask = mask1

    h1 = model.forward_to_layer(ids1, k, mask1)
    h2 = model.forward_to_layer(ids2, k, mask2)
    mixed = interpolate(h1, h2, lam)
    labels = batch.one_hot_labels
    mixed_labels = lam * labels + (1.0 - lam) * labels[perm]

    sentence = model.forward_from_layer(mixed, k, mask)
    logits = model.classify(sentence)
    loss = T.cross_entropy_soft(logits, mixed_labels)
    return loss, MixedBatch(mixed, mixed_labels, lam, k, perm)
