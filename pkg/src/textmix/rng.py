"""Deterministic random-number plumbing.

Every source of randomness in a run is a named PCG64 stream derived from
one master seed. Streams are mutually independent, so e.g. a variant that
never draws a mixing layer consumes nothing from the streams a baseline
run uses: runs at equal seed share initial weights and batch order no
matter which augmentation mode is active, and mode reductions can be
checked bitwise.

The Beta sampler is built from two Gamma variates (Marsaglia-Tsang
squeeze method) normalized against each other, drawing only uniforms and
normals from the stream; draws are reproducible across platforms.
"""

import math

import numpy as np

# Fixed stream ids; appending is fine, renumbering breaks reproducibility.
_STREAMS = {
    "init": 0,
    "shuffle": 1,
    "dropout": 2,
    "lambda": 3,
    "pairing": 4,
    "layer": 5,
    "data": 6,
    "subsample": 7,
}


def make_stream(seed: int, name: str, index: int = 0) -> np.random.Generator:
    """One independent generator for (seed, stream name, optional index)."""
    if name not in _STREAMS:
        raise ValueError(f"unknown rng stream {name!r}; known: {sorted(_STREAMS)}")
    ss = np.random.SeedSequence(seed, spawn_key=(_STREAMS[name], index))
    return np.random.Generator(np.random.PCG64(ss))


class RngStreams:
    """The named streams owned by a single training run."""

    def __init__(self, seed: int):
        self.seed = int(seed)
        self.init = make_stream(seed, "init")
        self.dropout = make_stream(seed, "dropout")
        self.lam = make_stream(seed, "lambda")
        self.pairing = make_stream(seed, "pairing")
        self.layer = make_stream(seed, "layer")

    def shuffle(self, epoch: int) -> np.random.Generator:
        """Fresh epoch-indexed stream so batch order is position-independent."""
        return make_stream(self.seed, "shuffle", epoch)


def sample_gamma(rng: np.random.Generator, shape: float) -> float:
    """One Gamma(shape, 1) draw via the Marsaglia-Tsang acceptance method.

    Shapes below 1 use the boost Gamma(shape+1) * U^(1/shape).
    """
    if shape <= 0.0:
        raise ValueError(f"gamma shape must be positive, got {shape}")
    if shape < 1.0:
        u = rng.random()
        # u == 0 would underflow the power boost; probability ~2^-53
        while u == 0.0:
            u = rng.random()
        return sample_gamma(rng, shape + 1.0) * u ** (1.0 / shape)
    d = shape - 1.0 / 3.0
    c = 1.0 / math.sqrt(9.0 * d)
    while True:
        x = rng.standard_normal()
        v = 1.0 + c * x
        if v <= 0.0:
            continue
        v = v * v * v
        u = rng.random()
        if u < 1.0 - 0.0331 * x * x * x * x:
            return d * v
        if u > 0.0 and math.log(u) < 0.5 * x * x + d * (1.0 - v + math.log(v)):
            return d * v


def sample_beta(rng: np.random.Generator, a: float, b: float) -> float:
    """One Beta(a, b) draw as Ga/(Ga+Gb)."""
    if a <= 0.0 or b <= 0.0:
        raise ValueError(f"beta parameters must be positive, got ({a}, {b})")
    while True:
        ga = sample_gamma(rng, a)
        gb = sample_gamma(rng, b)
        total = ga + gb
        if total > 0.0:
            return ga / total
