"""Executable form of the sequence-flattening construction.

A length-T sequence of 1-D point sets inside [0, 1] is compressed into one
point set by mapping frame-t values through ``p_T(x, t) = (x + t - 1) / T``,
which places frame t inside the sub-interval [(t-1)/T, t/T]. The map is
injective except on a measure-zero boundary: a value of exactly 1 in frame t
collides with a value of exactly 0 in frame t + 1.

``verify_distance_identity`` measures how far the flattened Hausdorff
distance is from ``d_seq / T``, where ``d_seq`` is the maximum per-frame
Hausdorff distance. The two agree whenever every sup-attaining point finds
its nearest flattened neighbor inside its own frame's sub-interval. They can
genuinely differ when a point near an interval boundary finds a closer
neighbor from the adjacent frame's image: adjacent sub-intervals touch, so
the combined-set infimum may undercut the within-frame one. The residual is
therefore exactly zero on mid-interval data (values in (1/4 + m, 3/4 - m)
for any margin m > 0 make the shortcut geometrically impossible) but can be
large for boundary-hugging sets; see the test suite for a minimal example.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import hausdorff_points
from .util import InputError


@dataclass(frozen=True)
class Sequence1D:
    """T frames of n values each, all inside [0, 1]."""

    frames: tuple

    def __post_init__(self):
        frames = tuple(np.asarray(f, dtype=np.float64).ravel() for f in self.frames)
        if not frames:
            raise InputError("sequence must contain at least one frame")
        n = frames[0].size
        if n < 1:
            raise InputError("frames must be nonempty")
        for f in frames:
            if f.size != n:
                raise InputError("all frames must have equal cardinality")
            if not np.isfinite(f).all():
                raise InputError("frame values must be finite")
            if (f < 0).any() or (f > 1).any():
                raise InputError("frame values must lie in [0, 1]")
        object.__setattr__(self, "frames", frames)

    @property
    def length(self) -> int:
        return len(self.frames)

    @property
    def cardinality(self) -> int:
        return self.frames[0].size


def psi_map(seq: Sequence1D) -> np.ndarray:
    """Flatten a sequence into one 1-D point set via ``(x + t - 1) / T``."""
    T = seq.length
    parts = [(f + t) / T for t, f in enumerate(seq.frames)]
    return np.concatenate(parts)


def d_seq(seq_a: Sequence1D, seq_b: Sequence1D) -> float:
    """Maximum per-frame Hausdorff distance between aligned frames."""
    if seq_a.length != seq_b.length:
        raise InputError(
            f"sequence lengths differ: {seq_a.length} vs {seq_b.length}"
        )
    return max(
        hausdorff_points(fa, fb) for fa, fb in zip(seq_a.frames, seq_b.frames)
    )


def verify_distance_identity(seq_a: Sequence1D, seq_b: Sequence1D) -> float:
    """Residual ``|d_H(psi(a), psi(b)) - d_seq(a, b) / T|``."""
    if seq_a.length != seq_b.length:
        raise InputError(
            f"sequence lengths differ: {seq_a.length} vs {seq_b.length}"
        )
    lhs = hausdorff_points(psi_map(seq_a), psi_map(seq_b))
    rhs = d_seq(seq_a, seq_b) / seq_a.length
    return abs(lhs - rhs)


def random_sequence(rng: np.random.Generator, length: int, cardinality: int,
                    lo: float = 1e-6, hi: float = 1.0 - 1e-6) -> Sequence1D:
    """Uniform random sequence with values in the open interval (lo, hi)."""
    return Sequence1D(tuple(rng.uniform(lo, hi, cardinality) for _ in range(length)))


def identity_sweep(trials: int, seed: int = 0, lo: float = 1e-6,
                   hi: float = 1.0 - 1e-6, max_length: int = 8,
                   max_cardinality: int = 16):
    """Sample random pairs and report the worst identity residual.

    Returns ``(worst_residual, violations, trials)`` where a violation is a
    residual of at least 1e-12.
    """
    if trials < 1:
        raise InputError("trials must be >= 1")
    rng = np.random.default_rng(seed)
    worst = 0.0
    violations = 0
    for _ in range(trials):
        T = int(rng.integers(2, max_length + 1))
        n = int(rng.integers(1, max_cardinality + 1))
        a = random_sequence(rng, T, n, lo, hi)
        b = random_sequence(rng, T, n, lo, hi)
        res = verify_distance_identity(a, b)
        worst = max(worst, res)
        violations += res >= 1e-12
    return worst, violations, trials
