"""Point cloud frames, sequences, and exact spatial queries.

A :class:`Frame` is one unordered 3-D point set with optional per-point
feature channels and an integer timestamp; a :class:`Sequence` is an ordered
tuple of frames with consecutive timestamps starting at 1.

Spatial queries run against a :class:`GridIndex` (uniform hash grid). The
index is an accelerator only: every query is defined to return exactly the
brute-force result, and the test suite holds it to that. Radius queries use a
strict ``distance < r`` inequality; nearest-neighbor and sampling ties break
toward the smaller point index so results are deterministic across runs.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .util import InputError, as_float_array


@dataclass(frozen=True)
class Frame:
    """One unordered point set: ``coords`` (n, 3), ``features`` (n, c), timestamp.

    Arrays are stored as float64 and treated as immutable after construction.
    """

    coords: np.ndarray
    features: np.ndarray
    timestamp: int

    def __post_init__(self):
        coords = as_float_array(self.coords, "coords", shape=(None, 3))
        if coords.shape[0] < 1:
            raise InputError("frame must contain at least one point")
        features = self.features
        if features is None:
            features = np.zeros((coords.shape[0], 0))
        features = as_float_array(features, "features")
        if features.ndim != 2:
            raise InputError("features must be a 2-D array")
        if features.shape[0] != coords.shape[0]:
            raise InputError(
                f"features row count {features.shape[0]} does not match "
                f"point count {coords.shape[0]}"
            )
        object.__setattr__(self, "coords", coords)
        object.__setattr__(self, "features", features)
        object.__setattr__(self, "timestamp", int(self.timestamp))

    @property
    def num_points(self) -> int:
        return self.coords.shape[0]

    @property
    def num_channels(self) -> int:
        return self.features.shape[1]


def frame(coords, features=None, timestamp: int = 1) -> Frame:
    """Convenience constructor accepting plain lists/arrays."""
    return Frame(np.asarray(coords, dtype=np.float64), features, timestamp)


@dataclass(frozen=True)
class Sequence:
    """Ordered tuple of frames with timestamps 1, 2, ..., T."""

    frames: tuple

    def __post_init__(self):
        frames = tuple(self.frames)
        if not frames:
            raise InputError("sequence must contain at least one frame")
        for pos, fr in enumerate(frames, start=1):
            if not isinstance(fr, Frame):
                raise InputError("sequence elements must be Frame instances")
            if fr.timestamp != pos:
                raise InputError(
                    f"frame timestamps must be 1..T consecutively; "
                    f"position {pos} has timestamp {fr.timestamp}"
                )
        object.__setattr__(self, "frames", frames)

    def __len__(self) -> int:
        return len(self.frames)

    def __iter__(self):
        return iter(self.frames)

    def frame_at(self, t: int) -> Frame:
        """Frame with timestamp ``t`` (1-based)."""
        if not 1 <= t <= len(self.frames):
            raise InputError(f"timestamp {t} outside 1..{len(self.frames)}")
        return self.frames[t - 1]

    @property
    def num_channels(self) -> int:
        return self.frames[0].num_channels


def sequence(frames_coords, frames_features=None) -> Sequence:
    """Build a Sequence from per-frame coordinate (and optional feature) arrays."""
    frames = []
    for t, coords in enumerate(frames_coords, start=1):
        feats = None if frames_features is None else frames_features[t - 1]
        frames.append(frame(coords, feats, timestamp=t))
    return Sequence(tuple(frames))


@dataclass(frozen=True)
class GridIndex:
    """Uniform hash grid over one frame's points.

    Immutable after construction; concurrent read-only queries are safe.
    """

    coords: np.ndarray
    cell_size: float
    buckets: dict = field(repr=False)
    cell_lo: np.ndarray = field(repr=False)
    cell_hi: np.ndarray = field(repr=False)


def build_grid_index(fr: Frame, cell_size: float) -> GridIndex:
    """Hash every point of ``fr`` into integer cells of side ``cell_size``."""
    if not cell_size > 0:
        raise InputError(f"cell_size must be positive, got {cell_size}")
    coords = fr.coords
    cells = np.floor(coords / cell_size).astype(np.int64)
    buckets: dict = {}
    for idx, cell in enumerate(map(tuple, cells)):
        buckets.setdefault(cell, []).append(idx)
    buckets = {cell: np.asarray(ids, dtype=np.int64) for cell, ids in buckets.items()}
    return GridIndex(
        coords=coords,
        cell_size=float(cell_size),
        buckets=buckets,
        cell_lo=cells.min(axis=0),
        cell_hi=cells.max(axis=0),
    )


def _center_vector(center) -> np.ndarray:
    center = as_float_array(center, "center")
    if center.shape != (3,):
        raise InputError(f"center must be a 3-vector, got shape {center.shape}")
    return center


def radius_query(index: GridIndex, center, r: float) -> np.ndarray:
    """Indices of points with ``||x - center|| < r``, ascending.

    The inequality is strict: a point at distance exactly ``r`` is excluded.
    """
    if not r > 0:
        raise InputError(f"radius must be positive, got {r}")
    center = _center_vector(center)
    cs = index.cell_size
    lo = np.maximum(np.floor((center - r) / cs).astype(np.int64), index.cell_lo)
    hi = np.minimum(np.floor((center + r) / cs).astype(np.int64), index.cell_hi)
    ncells = int(np.prod(np.maximum(hi - lo + 1, 0)))
    candidates = []
    if ncells >= len(index.buckets):
        # Sparser to walk the buckets than the cell box.
        for cell, ids in index.buckets.items():
            if all(lo[d] <= cell[d] <= hi[d] for d in range(3)):
                candidates.append(ids)
    else:
        for cx in range(lo[0], hi[0] + 1):
            for cy in range(lo[1], hi[1] + 1):
                for cz in range(lo[2], hi[2] + 1):
                    ids = index.buckets.get((cx, cy, cz))
                    if ids is not None:
                        candidates.append(ids)
    if not candidates:
        return np.empty(0, dtype=np.int64)
    cand = np.concatenate(candidates)
    diff = index.coords[cand] - center
    hit = cand[np.einsum("ij,ij->i", diff, diff) < r * r]
    return np.sort(hit)


def knn_query(index: GridIndex, center, k: int):
    """The ``k`` nearest points to ``center``.

    Returns ``(indices, distances)`` sorted by distance ascending with ties
    broken toward the smaller point index. If the frame holds fewer than
    ``k`` points, all of them are returned.
    """
    if k < 1:
        raise InputError(f"k must be >= 1, got {k}")
    center = _center_vector(center)
    n = index.coords.shape[0]
    if n == 0:
        raise InputError("cannot run knn_query on an empty frame")
    k = min(k, n)
    cs = index.cell_size
    c0 = np.floor(center / cs).astype(np.int64)
    max_ring = int(np.max(np.maximum(index.cell_hi - c0, c0 - index.cell_lo))) + 1

    found_idx: list[int] = []
    found_d2: list[float] = []
    ring = 0
    while ring <= max_ring:
        ids = _ring_candidates(index, c0, ring)
        if ids.size:
            diff = index.coords[ids] - center
            d2 = np.einsum("ij,ij->i", diff, diff)
            found_idx.extend(ids.tolist())
            found_d2.extend(d2.tolist())
        if len(found_idx) >= k:
            order = sorted(range(len(found_idx)), key=lambda i: (found_d2[i], found_idx[i]))
            kth = np.sqrt(found_d2[order[k - 1]])
            # Unscanned rings hold points at distance >= ring * cell_size.
            if kth < ring * cs:
                keep = order[:k]
                idx = np.array([found_idx[i] for i in keep], dtype=np.int64)
                dist = np.sqrt(np.array([found_d2[i] for i in keep]))
                return idx, dist
        ring += 1
    order = sorted(range(len(found_idx)), key=lambda i: (found_d2[i], found_idx[i]))[:k]
    idx = np.array([found_idx[i] for i in order], dtype=np.int64)
    dist = np.sqrt(np.array([found_d2[i] for i in order]))
    return idx, dist


def _ring_candidates(index: GridIndex, c0: np.ndarray, ring: int) -> np.ndarray:
    """Point indices in cells at Chebyshev cell-distance exactly ``ring``."""
    if ring == 0:
        ids = index.buckets.get(tuple(c0))
        return ids if ids is not None else np.empty(0, dtype=np.int64)
    hits = []
    shell_cells = 2 * (2 * ring + 1) ** 2 + 4 * (2 * ring - 1) * (2 * ring + 1)
    if shell_cells >= len(index.buckets):
        for cell, ids in index.buckets.items():
            if max(abs(cell[0] - c0[0]), abs(cell[1] - c0[1]), abs(cell[2] - c0[2])) == ring:
                hits.append(ids)
    else:
        for cell in _shell_cells(c0, ring):
            ids = index.buckets.get(cell)
            if ids is not None:
                hits.append(ids)
    if not hits:
        return np.empty(0, dtype=np.int64)
    return np.concatenate(hits)


def _shell_cells(c0: np.ndarray, r: int):
    """Cells at Chebyshev distance exactly ``r`` from ``c0`` (no duplicates)."""
    x0, y0, z0 = int(c0[0]), int(c0[1]), int(c0[2])
    for dx in (-r, r):
        for dy in range(-r, r + 1):
            for dz in range(-r, r + 1):
                yield (x0 + dx, y0 + dy, z0 + dz)
    for dy in (-r, r):
        for dx in range(-r + 1, r):
            for dz in range(-r, r + 1):
                yield (x0 + dx, y0 + dy, z0 + dz)
    for dz in (-r, r):
        for dx in range(-r + 1, r):
            for dy in range(-r + 1, r):
                yield (x0 + dx, y0 + dy, z0 + dz)


def farthest_point_sample(fr: Frame, k: int, seed_index: int = 0) -> np.ndarray:
    """Greedy farthest point sampling.

    The first selection is ``seed_index``; every following pick maximizes the
    minimum distance to the already-selected set, ties toward the smaller
    point index.
    """
    n = fr.num_points
    if not 1 <= k <= n:
        raise InputError(f"k must be in 1..{n}, got {k}")
    if not 0 <= seed_index < n:
        raise InputError(f"seed_index must be in 0..{n - 1}, got {seed_index}")
    coords = fr.coords
    selected = np.empty(k, dtype=np.int64)
    selected[0] = seed_index
    diff = coords - coords[seed_index]
    min_d2 = np.einsum("ij,ij->i", diff, diff)
    for s in range(1, k):
        # argmax returns the first (smallest-index) maximizer.
        nxt = int(np.argmax(min_d2))
        selected[s] = nxt
        diff = coords - coords[nxt]
        np.minimum(min_d2, np.einsum("ij,ij->i", diff, diff), out=min_d2)
    return selected


def hausdorff_points(a: np.ndarray, b: np.ndarray) -> float:
    """Hausdorff distance between two point arrays of shape (n, d) and (m, d)."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim == 1:
        a = a[:, None]
    if b.ndim == 1:
        b = b[:, None]
    if a.shape[0] == 0 or b.shape[0] == 0:
        raise InputError("hausdorff requires nonempty point sets")
    d2 = ((a[:, None, :] - b[None, :, :]) ** 2).sum(axis=2)
    forward = np.sqrt(d2.min(axis=1)).max()
    backward = np.sqrt(d2.min(axis=0)).max()
    return float(max(forward, backward))


def hausdorff(frame_a: Frame, frame_b: Frame) -> float:
    """Hausdorff distance between the coordinate sets of two frames."""
    return hausdorff_points(frame_a.coords, frame_b.coords)
