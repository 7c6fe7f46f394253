"""Seeded Laplace and Gaussian noise vectors."""

from dataclasses import dataclass
from typing import Tuple

import numpy as np

# Largest magnitude strictly below 0.5; keeps log1p(-2|u|) finite.
_U_MAX = np.nextafter(0.5, 0.0)


@dataclass(frozen=True)
class RngStream:
    """
    Deterministic random stream identified by (seed, stream_id[, substream]).

    Every call to :meth:`generator` starts the same draw sequence, so the
    sampling functions below return identical vectors for identical streams.
    Distinct stream ids (or substream keys) give independent streams.
    """
    seed: int
    stream_id: int = 0
    substream: Tuple[int, ...] = ()

    def __post_init__(self):
        if self.seed < 0 or self.stream_id < 0 or any(k < 0 for k in self.substream):
            raise ValueError("seed, stream id and substream keys must be non-negative")

    def generator(self) -> np.random.Generator:
        sequence = np.random.SeedSequence(
            entropy=self.seed, spawn_key=(self.stream_id, *self.substream)
        )
        return np.random.default_rng(sequence)

    def child(self, *keys: int) -> 'RngStream':
        """Independent sub-stream, e.g. ``child(k, 1)`` for the first noise of step k."""
        return RngStream(self.seed, self.stream_id, self.substream + tuple(keys))

    @property
    def label(self) -> str:
        return '/'.join(str(part) for part in (self.seed, self.stream_id, *self.substream))


def as_generator(rng) -> np.random.Generator:
    if isinstance(rng, RngStream):
        return rng.generator()
    return rng


def sample_laplace_vec(n: int, scale: float, rng) -> np.ndarray:
    """
    Draw n i.i.d. Laplace(0, scale) values by inverting the CDF.

    ``scale`` is the Laplace scale b of the density exp(-|x|/b) / 2b, so the
    variance is 2 b^2.

    Args:
        n: Vector length
        scale: Laplace scale, strictly positive
        rng: RngStream or numpy Generator

    Returns:
        Noise vector
    """
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    if not scale > 0:
        raise ValueError(f"Laplace scale must be > 0, got {scale}")
    u = as_generator(rng).random(n) - 0.5
    magnitude = np.minimum(np.abs(u), _U_MAX)
    return -scale * np.sign(u) * np.log1p(-2.0 * magnitude)


def sample_gaussian_vec(n: int, sigma: float, rng) -> np.ndarray:
    """Draw n i.i.d. zero-mean Gaussian values with standard deviation sigma."""
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    if not sigma > 0:
        raise ValueError(f"Gaussian sigma must be > 0, got {sigma}")
    return as_generator(rng).normal(loc=0.0, scale=sigma, size=n)
