"""A small transformer encoder classifier with per-layer entry/exit points.

Layers are numbered so augmentation can hook in anywhere: 0 is the token
embedding output, 1..n are the post-norm outputs of the encoder blocks,
and n+1 is the pooled sentence embedding (affine+tanh over the position-0
hidden state). forward_to_layer / forward_from_layer split the forward
pass at any of those points and compose back to the full pass bitwise
when dropout is off.

Blocks are post-norm: h = LN(h + Drop(Attn(h))); h = LN(h + Drop(FFN(h))).
Dropout is also applied once after the embedding sum. Attention masking
adds -inf to scores of masked key positions before the softmax.
"""

import hashlib
import json
from dataclasses import asdict, dataclass
from typing import Optional, Union

import numpy as np

from . import tensor as T
from .tensor import Tensor

_CKPT_MAGIC = b"TEXTMIX-CKPT-v1\n"
_LN_EPS = 1e-5


@dataclass(frozen=True)
class EncoderConfig:
    n_layers: int = 4
    d_model: int = 64
    n_heads: int = 4
    d_ff: int = 256
    max_seq_len: int = 64
    vocab_size: int = 1000
    n_classes: int = 2
    dropout_rate: float = 0.1

    def __post_init__(self):
        if self.n_layers < 1:
            raise ValueError(f"n_layers must be >= 1, got {self.n_layers}")
        if self.d_model % self.n_heads != 0:
            raise ValueError(
                f"d_model ({self.d_model}) must be divisible by n_heads ({self.n_heads})")
        if self.max_seq_len < 2:
            raise ValueError(f"max_seq_len must be >= 2, got {self.max_seq_len}")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ValueError(f"dropout_rate must be in [0, 1), got {self.dropout_rate}")


def truncated_normal(rng: np.random.Generator, shape, std: float = 0.02) -> np.ndarray:
    """Normal(0, std) with redraws outside +-2 std."""
    v = rng.standard_normal(shape) * std
    bad = np.abs(v) > 2.0 * std
    while bad.any():
        v[bad] = rng.standard_normal(int(bad.sum())) * std
        bad = np.abs(v) > 2.0 * std
    return v


class EncoderClassifier:
    """Encoder + pooler + linear classifier head, trained as one graph.

    Parameters live in an insertion-ordered dict with canonical names
    (the checkpoint format and the optimizer both rely on that order).
    """

    def __init__(self, config: EncoderConfig, init_rng: Optional[np.random.Generator] = None):
        self.config = config
        self.training = False
        self._dropout_rng: Optional[np.random.Generator] = None
        self.params: dict[str, Tensor] = {}
        if init_rng is not None:
            self._init_params(init_rng)

    # -- parameter management ------------------------------------------------

    def _p(self, name: str, values: np.ndarray) -> None:
        self.params[name] = T.parameter(values)

    def _init_params(self, rng: np.random.Generator) -> None:
        c = self.config
        tn = lambda *shape: truncated_normal(rng, shape)
        self._p("embed.token", tn(c.vocab_size, c.d_model))
        self._p("embed.position", tn(c.max_seq_len, c.d_model))
        for i in range(c.n_layers):
            pre = f"layer{i}"
            for proj in ("q", "k", "v", "o"):
                self._p(f"{pre}.attn.w{proj}", tn(c.d_model, c.d_model))
                self._p(f"{pre}.attn.b{proj}", np.zeros(c.d_model))
            self._p(f"{pre}.ln1.gamma", np.ones(c.d_model))
            self._p(f"{pre}.ln1.beta", np.zeros(c.d_model))
            self._p(f"{pre}.ffn.w1", tn(c.d_model, c.d_ff))
            self._p(f"{pre}.ffn.b1", np.zeros(c.d_ff))
            self._p(f"{pre}.ffn.w2", tn(c.d_ff, c.d_model))
            self._p(f"{pre}.ffn.b2", np.zeros(c.d_model))
            self._p(f"{pre}.ln2.gamma", np.ones(c.d_model))
            self._p(f"{pre}.ln2.beta", np.zeros(c.d_model))
        self._p("pooler.w", tn(c.d_model, c.d_model))
        self._p("pooler.b", np.zeros(c.d_model))
        self._p("classifier.w", tn(c.d_model, c.n_classes))
        self._p("classifier.b", np.zeros(c.n_classes))

    def parameters(self) -> list:
        return list(self.params.items())

    def param_hash(self) -> str:
        h = hashlib.sha256()
        for name, p in self.params.items():
            h.update(name.encode())
            h.update(p.values.tobytes())
        return h.hexdigest()

    # -- train/eval mode -----------------------------------------------------

    def train_mode(self, dropout_rng: Optional[np.random.Generator] = None) -> None:
        self.training = True
        if dropout_rng is not None:
            self._dropout_rng = dropout_rng
        if self.config.dropout_rate > 0.0 and self._dropout_rng is None:
            raise ValueError("training with dropout requires a dropout rng stream")

    def eval_mode(self) -> None:
        self.training = False

    def _drop(self, x: Tensor) -> Tensor:
        if not self.training or self.config.dropout_rate == 0.0:
            return x
        return T.dropout(x, self.config.dropout_rate, self._dropout_rng, True)

    # -- forward pieces --------------------------------------------------------

    def embed(self, token_ids: np.ndarray, mask: Optional[np.ndarray] = None) -> Tensor:
        """Token + positional embedding; the layer-0 representation."""
        ids = np.asarray(token_ids)
        if ids.ndim != 2:
            raise ValueError(f"token_ids must be [B, L], got shape {ids.shape}")
        L = ids.shape[1]
        if L > self.config.max_seq_len:
            raise ValueError(f"sequence length {L} exceeds max_seq_len {self.config.max_seq_len}")
        tok = T.embedding(self.params["embed.token"], ids)
        pos = T.narrow_rows(self.params["embed.position"], L)
        return self._drop(T.add_rows(tok, pos))

    def _mask_bias(self, mask: np.ndarray, B: int, L: int) -> np.ndarray:
        if mask is None:
            return np.zeros((B, 1, 1, L))
        mask = np.asarray(mask, dtype=bool)
        if mask.shape != (B, L):
            raise ValueError(f"mask shape {mask.shape} does not match batch ({B}, {L})")
        bias = np.where(mask, 0.0, -np.inf)
        return bias[:, None, None, :]

    def _attention(self, i: int, h: Tensor, mask_bias: np.ndarray, B: int, L: int) -> Tensor:
        c = self.config
        H, dh = c.n_heads, c.d_model // c.n_heads
        pre = f"layer{i}.attn"
        flat = T.reshape(h, (B * L, c.d_model))

        def heads(mat, bias):
            x = T.add(T.matmul(flat, self.params[f"{pre}.{mat}"]), self.params[f"{pre}.{bias}"])
            x = T.transpose(T.reshape(x, (B, L, H, dh)), (0, 2, 1, 3))
            return T.reshape(x, (B * H, L, dh))

        q = heads("wq", "bq")
        k = heads("wk", "bk")
        v = heads("wv", "bv")
        scores = T.scale(T.matmul(q, T.transpose(k, (0, 2, 1))), 1.0 / np.sqrt(dh))
        scores = T.add_const(T.reshape(scores, (B, H, L, L)), mask_bias)
        probs = T.softmax(scores, axis=-1)
        ctx = T.matmul(T.reshape(probs, (B * H, L, L)), v)
        ctx = T.reshape(T.transpose(T.reshape(ctx, (B, H, L, dh)), (0, 2, 1, 3)),
                        (B * L, c.d_model))
        out = T.add(T.matmul(ctx, self.params[f"{pre}.wo"]), self.params[f"{pre}.bo"])
        return T.reshape(out, (B, L, c.d_model))

    def _block(self, i: int, h: Tensor, mask_bias: np.ndarray, B: int, L: int) -> Tensor:
        c = self.config
        attn = self._drop(self._attention(i, h, mask_bias, B, L))
        h = T.layer_norm(T.add(h, attn),
                         self.params[f"layer{i}.ln1.gamma"],
                         self.params[f"layer{i}.ln1.beta"], _LN_EPS)
        flat = T.reshape(h, (B * L, c.d_model))
        ff = T.gelu(T.add(T.matmul(flat, self.params[f"layer{i}.ffn.w1"]),
                          self.params[f"layer{i}.ffn.b1"]))
        ff = T.add(T.matmul(ff, self.params[f"layer{i}.ffn.w2"]),
                   self.params[f"layer{i}.ffn.b2"])
        ff = self._drop(T.reshape(ff, (B, L, c.d_model)))
        return T.layer_norm(T.add(h, ff),
                            self.params[f"layer{i}.ln2.gamma"],
                            self.params[f"layer{i}.ln2.beta"], _LN_EPS)

    def pool_cls(self, h: Tensor) -> Tensor:
        """Affine + tanh over the position-0 hidden state."""
        s = T.matmul(T.select_pos0(h), self.params["pooler.w"])
        return T.tanh(T.add(s, self.params["pooler.b"]))

    def classify(self, s: Tensor) -> Tensor:
        """Logits from a pooled sentence embedding."""
        return T.add(T.matmul(s, self.params["classifier.w"]), self.params["classifier.b"])

    # -- layer-indexed forwards ------------------------------------------------

    def _check_k(self, k: int) -> int:
        n = self.config.n_layers
        if not 0 <= k <= n + 1:
            raise ValueError(f"layer index {k} outside [0, {n + 1}]")
        return k

    def forward_to_layer(self, x: Union[np.ndarray, Tensor], k: int,
                         mask: Optional[np.ndarray] = None) -> Tensor:
        """Representation at layer k: 0 = embeddings, 1..n = block outputs,
        n+1 = pooled sentence embedding. x is a [B, L] id matrix or an
        already-embedded layer-0 tensor."""
        k = self._check_k(k)
        n = self.config.n_layers
        h = x if isinstance(x, Tensor) else self.embed(x, mask)
        if k == 0:
            return h
        B, L = h.shape[0], h.shape[1]
        bias = self._mask_bias(mask, B, L)
        for i in range(min(k, n)):
            h = self._block(i, h, bias, B, L)
        if k == n + 1:
            return self.pool_cls(h)
        return h

    def forward_from_layer(self, h: Tensor, k: int,
                           mask: Optional[np.ndarray] = None) -> Tensor:
        """Continue from a layer-k representation down to the pooled
        sentence embedding; identity when k = n+1."""
        k = self._check_k(k)
        n = self.config.n_layers
        if k == n + 1:
            if h.values.ndim != 2 or h.shape[1] != self.config.d_model:
                raise ValueError(
                    f"pooled representation must be [B, {self.config.d_model}], "
                    f"got {tuple(h.shape)}")
            return h
        if h.values.ndim != 3 or h.shape[2] != self.config.d_model:
            raise ValueError(
                f"layer-{k} representation must be [B, L, {self.config.d_model}], "
                f"got {tuple(h.shape)}")
        B, L = h.shape[0], h.shape[1]
        bias = self._mask_bias(mask, B, L)
        for i in range(k, n):
            h = self._block(i, h, bias, B, L)
        return self.pool_cls(h)

    def forward(self, token_ids: np.ndarray, mask: Optional[np.ndarray] = None) -> Tensor:
        """Full pass: ids -> logits."""
        return self.classify(self.forward_to_layer(token_ids, self.config.n_layers + 1, mask))

    # -- checkpointing ---------------------------------------------------------

    def save(self, path) -> None:
        """Single-file checkpoint: magic, JSON manifest line, then raw
        little-endian float64 blobs in manifest order."""
        manifest = {
            "config": asdict(self.config),
            "params": [{"name": n, "shape": list(p.values.shape)}
                       for n, p in self.params.items()],
        }
        with open(path, "wb") as f:
            f.write(_CKPT_MAGIC)
            f.write(json.dumps(manifest, sort_keys=True).encode() + b"\n")
            for _, p in self.params.items():
                f.write(np.ascontiguousarray(p.values, dtype="<f8").tobytes())

    @classmethod
    def load(cls, path) -> "EncoderClassifier":
        with open(path, "rb") as f:
            magic = f.read(len(_CKPT_MAGIC))
            if magic != _CKPT_MAGIC:
                raise ValueError(f"{path}: not a textmix checkpoint")
            manifest = json.loads(f.readline().decode())
            model = cls(EncoderConfig(**manifest["config"]))
            for entry in manifest["params"]:
                shape = tuple(entry["shape"])
                count = int(np.prod(shape)) if shape else 1
                buf = f.read(count * 8)
                if len(buf) != count * 8:
                    raise ValueError(f"{path}: truncated checkpoint at {entry['name']}")
                model._p(entry["name"], np.frombuffer(buf, dtype="<f8").reshape(shape).copy())
        return model
