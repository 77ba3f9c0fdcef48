"""Spatiotemporal neighborhood construction for point cloud sequences.

Two grouping strategies are provided. Direct grouping widens the spatial
radius with the temporal offset: point ``j`` of frame ``t'`` joins the
neighborhood of point ``i`` of frame ``t`` when ``||x_j - x_i|| < r(|t'-t|)``
with an affine radius schedule ``r(dt) = r0 + alpha * dt``. Chained-flow
grouping instead tracks the query point backward through per-frame scene
flow: its virtual position in each earlier frame is obtained by cumulatively
chaining stored and interpolated flow vectors, and neighbors are the points
within a constant radius of that virtual position.

All radii are strict (``< r``), matching the spatial query convention in
:mod:`meteornet.geometry`. Point references are ``(t, i)`` pairs where ``t``
is the 1-based frame timestamp and ``i`` the point row within that frame.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import Frame, Sequence
from .util import InputError, as_float_array

ZERO_DISTANCE = 1e-9


@dataclass(frozen=True)
class RadiusSchedule:
    """Affine grouping radius ``r(dt) = r0 + alpha * dt`` over temporal offset."""

    r0: float
    alpha: float = 0.0

    def __post_init__(self):
        if not self.r0 > 0:
            raise InputError(f"r0 must be positive, got {self.r0}")
        if self.alpha < 0:
            raise InputError(f"alpha must be nonnegative, got {self.alpha}")

    def radius(self, dt: int) -> float:
        return self.r0 + self.alpha * abs(int(dt))


@dataclass(frozen=True)
class Neighborhood:
    """A query point reference and its spatiotemporal neighbor references.

    ``members`` are unique ``(t, i)`` pairs sorted by frame then index; the
    query point is always among them (it sits at distance zero).
    """

    query: tuple
    members: tuple


@dataclass(frozen=True)
class FlowField:
    """Backward per-point scene flow from frame ``source_t`` to ``source_t - 1``."""

    source_t: int
    vectors: np.ndarray

    def __post_init__(self):
        vectors = as_float_array(self.vectors, "flow vectors", shape=(None, 3))
        object.__setattr__(self, "vectors", vectors)
        object.__setattr__(self, "source_t", int(self.source_t))


@dataclass(frozen=True)
class VirtualTrajectory:
    """Chained virtual positions of one query point in earlier frames.

    ``positions[t']`` is the estimated corresponding position at timestamp
    ``t'``; the entry at the origin timestamp is the point's own coordinate.
    """

    origin: tuple
    positions: dict


def _check_query(seq: Sequence, query) -> tuple:
    t, i = int(query[0]), int(query[1])
    if not 1 <= t <= len(seq):
        raise InputError(f"query frame {t} outside sequence of length {len(seq)}")
    if not 0 <= i < seq.frame_at(t).num_points:
        raise InputError(f"query index {i} outside frame {t}")
    return t, i


def _frame_window(seq: Sequence, t: int, temporal_radius: int):
    if temporal_radius < 0:
        raise InputError(f"temporal_radius must be >= 0, got {temporal_radius}")
    return range(max(1, t - temporal_radius), min(len(seq), t + temporal_radius) + 1)


def _members_within(coords: np.ndarray, center: np.ndarray, radius: float,
                    t_prime: int, max_per_frame) -> list:
    diff = coords - center
    d2 = np.einsum("ij,ij->i", diff, diff)
    hit = np.flatnonzero(d2 < radius * radius)
    if max_per_frame is not None and hit.size > max_per_frame:
        order = np.lexsort((hit, d2[hit]))[:max_per_frame]
        hit = np.sort(hit[order])
    return [(t_prime, int(j)) for j in hit]


def direct_group(seq: Sequence, query, schedule: RadiusSchedule,
                 temporal_radius: int, max_per_frame: int | None = None) -> Neighborhood:
    """Neighbors of ``query`` within radius ``r(|t'-t|)`` of its position.

    The window spans ``|t' - t| <= temporal_radius``. With ``max_per_frame``
    set, only the closest that many points per frame are kept.
    """
    t, i = _check_query(seq, query)
    center = seq.frame_at(t).coords[i]
    members = []
    for t_prime in _frame_window(seq, t, temporal_radius):
        r = schedule.radius(t_prime - t)
        members.extend(
            _members_within(seq.frame_at(t_prime).coords, center, r, t_prime, max_per_frame)
        )
    return Neighborhood(query=(t, i), members=tuple(members))


def interpolate_flow(query_pos, fr: Frame, flow: FlowField,
                     k: int = 2, p: float = 2.0) -> np.ndarray:
    """Inverse-distance-weighted flow at an arbitrary position.

    Averages the flow vectors of the ``k`` nearest points of ``fr`` with
    weights ``1 / d**p``. If any of those neighbors lies closer than the
    zero-distance threshold, its flow is returned exactly (the weight formula
    is singular at d = 0).
    """
    if k < 1:
        raise InputError(f"k must be >= 1, got {k}")
    if not p > 0:
        raise InputError(f"p must be positive, got {p}")
    if flow.vectors.shape[0] != fr.num_points:
        raise InputError(
            f"flow field rows {flow.vectors.shape[0]} do not match "
            f"frame point count {fr.num_points}"
        )
    query_pos = as_float_array(query_pos, "query_pos", shape=(3,))
    diff = fr.coords - query_pos
    dist = np.sqrt(np.einsum("ij,ij->i", diff, diff))
    order = np.lexsort((np.arange(dist.size), dist))[: min(k, dist.size)]
    nearest_d = dist[order]
    if nearest_d[0] < ZERO_DISTANCE:
        return flow.vectors[order[0]].copy()
    weights = 1.0 / nearest_d**p
    return (weights[:, None] * flow.vectors[order]).sum(axis=0) / weights.sum()


def _flow_lookup(flows) -> dict:
    table = {}
    for fl in flows:
        if not isinstance(fl, FlowField):
            raise InputError("flows must be FlowField instances")
        table[fl.source_t] = fl
    return table


def chain_flow(seq: Sequence, flows, query, depth: int,
               k: int = 2, p: float = 2.0) -> VirtualTrajectory:
    """Chain backward flow to estimate a point's position in earlier frames.

    Step one applies the point's own stored flow; deeper steps interpolate
    the next frame pair's flow field at the current virtual position before
    adding it.
    """
    t, i = _check_query(seq, query)
    if depth < 0:
        raise InputError(f"depth must be >= 0, got {depth}")
    if depth > t - 1:
        raise InputError(f"depth {depth} reaches before frame 1 (query at t={t})")
    table = _flow_lookup(flows)
    pos = seq.frame_at(t).coords[i].copy()
    positions = {t: pos.copy()}
    for step in range(1, depth + 1):
        source_t = t - step + 1
        fl = table.get(source_t)
        if fl is None:
            raise InputError(f"missing flow field for frame pair ({source_t}, {source_t - 1})")
        source_frame = seq.frame_at(source_t)
        if fl.vectors.shape[0] != source_frame.num_points:
            raise InputError(
                f"flow field for frame {source_t} has {fl.vectors.shape[0]} rows, "
                f"frame has {source_frame.num_points} points"
            )
        if step == 1:
            vec = fl.vectors[i]
        else:
            vec = interpolate_flow(pos, source_frame, fl, k=k, p=p)
        pos = pos + vec
        positions[t - step] = pos.copy()
    return VirtualTrajectory(origin=(t, i), positions=positions)


def chained_group(seq: Sequence, flows, query, r: float, temporal_radius: int,
                  include_forward: bool = False,
                  max_per_frame: int | None = None) -> Neighborhood:
    """Neighbors within a constant radius of the chained virtual positions.

    Backward frames use virtual positions from :func:`chain_flow`; at the
    query's own frame the virtual position is the point itself. Forward
    frames are excluded by default (flow is defined backward only); with
    ``include_forward`` they are grouped around the query's own position.
    """
    if not r > 0:
        raise InputError(f"radius must be positive, got {r}")
    t, i = _check_query(seq, query)
    depth = min(temporal_radius, t - 1)
    trajectory = chain_flow(seq, flows, (t, i), depth)
    members = []
    for t_prime in _frame_window(seq, t, temporal_radius):
        if t_prime > t:
            if not include_forward:
                continue
            center = seq.frame_at(t).coords[i]
        else:
            center = trajectory.positions[t_prime]
        members.extend(
            _members_within(seq.frame_at(t_prime).coords, center, r, t_prime, max_per_frame)
        )
    return Neighborhood(query=(t, i), members=tuple(members))


def estimate_flow_nn(frame_t: Frame, frame_prev: Frame) -> FlowField:
    """Nearest-neighbor stand-in for a learned flow estimator.

    Each point of ``frame_t`` gets the displacement to its nearest neighbor
    in ``frame_prev`` (ties toward the smaller index).
    """
    d2 = ((frame_t.coords[:, None, :] - frame_prev.coords[None, :, :]) ** 2).sum(axis=2)
    nearest = d2.argmin(axis=1)
    vectors = frame_prev.coords[nearest] - frame_t.coords
    return FlowField(source_t=frame_t.timestamp, vectors=vectors)
