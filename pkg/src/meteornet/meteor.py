"""Meteor layers and network builders for point cloud sequences.

A Meteor layer updates every point's feature by max-pooling a shared MLP
over the point's spatiotemporal neighborhood. The ``ind`` variant feeds the
MLP each neighbor's feature plus the spatial offset and signed frame offset;
the ``rel`` variant additionally feeds the query point's own feature, letting
the layer reason about cross-frame correspondence. Neighborhoods come from
direct or chained-flow grouping (:mod:`meteornet.grouping`).

Networks are assembled from an :class:`ArchitectureSpec`: Meteor stages with
optional farthest-point downsampling, per-frame set abstraction stages for
late fusion, feature propagation stages with skip links for per-point heads,
and one of three heads (sequence classification, per-point classification,
last-frame flow regression). Named presets cover a toy classifier and the
full classification / segmentation / flow configurations.

Layer forwards are deterministic and permutation-invariant within frames:
max pooling is exact under row reordering, and farthest-point downsampling
seeds at the lexicographically smallest coordinate so the selected subset is
a function of the point set, not of its storage order.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import nncore
from .geometry import Frame, Sequence, build_grid_index, farthest_point_sample, \
    radius_query, knn_query, sequence
from .grouping import FlowField, RadiusSchedule, ZERO_DISTANCE, chained_group, \
    direct_group, estimate_flow_nn
from .nncore import MLPSpec, SharedMLP, Tensor
from .util import InputError


# ---------------------------------------------------------------------------
# configuration


@dataclass(frozen=True)
class GroupingConfig:
    """How a Meteor layer builds neighborhoods.

    ``mode`` is ``direct`` (radius schedule over temporal offset) or
    ``chained`` (constant radius around flow-chained virtual positions).
    """

    mode: str
    temporal_radius: int
    schedule: RadiusSchedule | None = None
    radius: float | None = None
    max_per_frame: int | None = None

    def __post_init__(self):
        if self.mode not in ("direct", "chained"):
            raise InputError(f"unknown grouping mode {self.mode!r}")
        if self.temporal_radius < 0:
            raise InputError("temporal_radius must be >= 0")
        if self.mode == "direct" and self.schedule is None:
            raise InputError("direct grouping needs a radius schedule")
        if self.mode == "chained" and (self.radius is None or not self.radius > 0):
            raise InputError("chained grouping needs a positive radius")


@dataclass(frozen=True)
class MeteorLayerConfig:
    mode: str  # "ind" | "rel"
    grouping: GroupingConfig
    mlp: MLPSpec

    def __post_init__(self):
        if self.mode not in ("ind", "rel"):
            raise InputError(f"unknown meteor mode {self.mode!r}")


@dataclass(frozen=True)
class MeteorStage:
    """One Meteor layer plus an optional per-frame downsampling ratio."""

    layer: MeteorLayerConfig
    downsample_ratio: float | None = None

    def __post_init__(self):
        r = self.downsample_ratio
        if r is not None and not 0 < r <= 1:
            raise InputError(f"downsample_ratio must be in (0, 1], got {r}")


@dataclass(frozen=True)
class SetAbstractionConfig:
    """Per-frame local aggregation: FPS centers, radius grouping, shared MLP."""

    ratio: float
    radius: float
    mlp: MLPSpec

    def __post_init__(self):
        if not 0 < self.ratio <= 1:
            raise InputError(f"ratio must be in (0, 1], got {self.ratio}")
        if not self.radius > 0:
            raise InputError(f"radius must be positive, got {self.radius}")


@dataclass(frozen=True)
class ArchitectureSpec:
    """Composition recipe for a full network."""

    name: str
    fusion: str  # "early" | "late"
    head: str  # "sequence-class" | "per-point-class" | "last-frame-flow"
    input_channels: int
    meteor_stages: tuple
    head_mlp: MLPSpec
    sa_stages: tuple = ()
    fp_mlps: tuple = ()
    dropout_rate: float = 0.0

    def __post_init__(self):
        if self.fusion not in ("early", "late"):
            raise InputError(f"unknown fusion {self.fusion!r}")
        if self.head not in ("sequence-class", "per-point-class", "last-frame-flow"):
            raise InputError(f"unknown head {self.head!r}")
        if not self.meteor_stages:
            raise InputError("architecture needs at least one Meteor stage")
        if self.fusion == "early" and self.sa_stages:
            raise InputError("early fusion mixes frames at the first layer; "
                             "per-frame set abstraction stages are a late-fusion feature")
        if self.fusion == "late" and not self.sa_stages:
            raise InputError("late fusion needs per-frame layers before the first Meteor layer")
        if self.head_mlp.final_activation:
            raise InputError("head MLP must emit raw outputs (final_activation=False)")
        down = sum(1 for s in self.meteor_stages if s.downsample_ratio is not None)
        if self.head == "per-point-class" and len(self.fp_mlps) != down:
            raise InputError(
                f"per-point head needs one feature propagation stage per "
                f"downsampling stage ({down}), got {len(self.fp_mlps)}"
            )
        if self.head == "last-frame-flow" and len(self.fp_mlps) != len(self.sa_stages):
            raise InputError(
                f"flow head needs one feature propagation stage per set "
                f"abstraction stage ({len(self.sa_stages)}), got {len(self.fp_mlps)}"
            )
        if not 0.0 <= self.dropout_rate < 1.0:
            raise InputError("dropout_rate must be in [0, 1)")


# ---------------------------------------------------------------------------
# batched working state


class _BatchState:
    """Flattened features of a batch of sequences at one resolution level.

    Feature rows are sequence-major, then frame-major, then point order.
    ``orig`` tracks each current point's row in its original input frame so
    externally supplied flow fields can follow downsampling.
    """

    def __init__(self, coords, features: Tensor, orig):
        self.coords = coords  # [seq][frame] -> (n, 3) float64
        self.features = features
        self.orig = orig  # [seq][frame] -> (n,) int64
        starts = []
        row = 0
        for per_seq in coords:
            frame_starts = []
            for arr in per_seq:
                frame_starts.append(row)
                row += arr.shape[0]
            starts.append(frame_starts)
        self.starts = starts
        self.num_rows = row
        if features.values.shape[0] != row:
            raise InputError("feature rows do not match point count")

    @property
    def num_sequences(self) -> int:
        return len(self.coords)

    def frames_of(self, s: int) -> int:
        return len(self.coords[s])

    def row(self, s: int, t: int, i: int) -> int:
        return self.starts[s][t - 1] + i

    def seq_offsets(self) -> np.ndarray:
        offs = [0]
        for per_seq in self.coords:
            offs.append(offs[-1] + sum(a.shape[0] for a in per_seq))
        return np.asarray(offs, dtype=np.int64)

    def geometry_sequence(self, s: int) -> Sequence:
        return sequence(self.coords[s])


def _initial_state(seqs, input_channels: int) -> _BatchState:
    coords, orig, feats = [], [], []
    for seq in seqs:
        if seq.num_channels != input_channels:
            raise InputError(
                f"model expects {input_channels} feature channels, "
                f"sequence has {seq.num_channels}"
            )
        coords.append([fr.coords for fr in seq])
        orig.append([np.arange(fr.num_points, dtype=np.int64) for fr in seq])
        feats.extend(fr.features for fr in seq)
    features = nncore.constant(np.concatenate(feats, axis=0)) if feats else None
    return _BatchState(coords, features, orig)


def canonical_seed_index(coords: np.ndarray) -> int:
    """Index of the lexicographically smallest coordinate row.

    Used to seed farthest point sampling so the selected subset does not
    depend on point storage order.
    """
    return int(np.lexsort((coords[:, 2], coords[:, 1], coords[:, 0]))[0])


def _downsample_state(state: _BatchState, ratio: float) -> _BatchState:
    new_coords, new_orig, keep_rows = [], [], []
    for s in range(state.num_sequences):
        per_coords, per_orig = [], []
        for t in range(1, state.frames_of(s) + 1):
            arr = state.coords[s][t - 1]
            n = arr.shape[0]
            k = max(1, int(np.ceil(ratio * n)))
            fr = Frame(arr, None, timestamp=1)
            sel = farthest_point_sample(fr, k, canonical_seed_index(arr))
            per_coords.append(arr[sel])
            per_orig.append(state.orig[s][t - 1][sel])
            keep_rows.append(state.starts[s][t - 1] + sel)
        new_coords.append(per_coords)
        new_orig.append(per_orig)
    keep = np.concatenate(keep_rows)
    features = nncore.gather_rows(state.features, keep)
    return _BatchState(new_coords, features, new_orig)


# ---------------------------------------------------------------------------
# layers


def _sequence_flows(state: _BatchState, s: int, flows) -> list:
    """Flow fields for sequence ``s`` at the current resolution.

    Externally supplied fields are defined on the original frames and are
    carried through downsampling by each surviving point's original row;
    without supplied flows the nearest-neighbor estimator runs on the
    current frames.
    """
    geo = state.geometry_sequence(s)
    out = []
    if flows is not None and flows[s] is not None:
        table = {fl.source_t: fl for fl in flows[s]}
        for t in range(2, state.frames_of(s) + 1):
            fl = table.get(t)
            if fl is None:
                raise InputError(f"missing flow field for frame pair ({t}, {t - 1})")
            rows = state.orig[s][t - 1]
            if rows.size and rows.max() >= fl.vectors.shape[0]:
                raise InputError(
                    f"flow field for frame {t} has {fl.vectors.shape[0]} rows, "
                    f"original frame had more points"
                )
            out.append(FlowField(source_t=t, vectors=fl.vectors[rows]))
    else:
        for t in range(2, state.frames_of(s) + 1):
            out.append(estimate_flow_nn(geo.frame_at(t), geo.frame_at(t - 1)))
    return out


class MeteorLayer:
    """Shared-MLP aggregation over spatiotemporal neighborhoods."""

    def __init__(self, rng, config: MeteorLayerConfig, in_channels: int, name: str):
        self.config = config
        self.in_channels = in_channels
        zeta_width = in_channels + 3 + 1
        if config.mode == "rel":
            zeta_width += in_channels
        self.zeta = SharedMLP(rng, zeta_width, config.mlp, name=f"{name}.zeta")
        self.out_channels = self.zeta.out_width

    def parameters(self) -> dict:
        return self.zeta.parameters()

    def forward(self, state: _BatchState, flows=None) -> Tensor:
        cfg = self.config.grouping
        query_rows, neighbor_rows, dx_parts, dt_parts, counts = [], [], [], [], []
        for s in range(state.num_sequences):
            geo = state.geometry_sequence(s)
            seq_flows = None
            if cfg.mode == "chained":
                seq_flows = _sequence_flows(state, s, flows)
            for t in range(1, state.frames_of(s) + 1):
                frame_coords = state.coords[s][t - 1]
                for i in range(frame_coords.shape[0]):
                    if cfg.mode == "direct":
                        nb = direct_group(geo, (t, i), cfg.schedule,
                                          cfg.temporal_radius, cfg.max_per_frame)
                    else:
                        nb = chained_group(geo, seq_flows, (t, i), cfg.radius,
                                           cfg.temporal_radius,
                                           max_per_frame=cfg.max_per_frame)
                    counts.append(len(nb.members))
                    base = frame_coords[i]
                    for (t2, j) in nb.members:
                        neighbor_rows.append(state.row(s, t2, j))
                        dx_parts.append(state.coords[s][t2 - 1][j] - base)
                        dt_parts.append(t2 - t)
                    query_rows.extend([state.row(s, t, i)] * len(nb.members))
        neighbor_rows = np.asarray(neighbor_rows, dtype=np.int64)
        query_rows = np.asarray(query_rows, dtype=np.int64)
        dx = np.asarray(dx_parts).reshape(-1, 3)
        dt = np.asarray(dt_parts, dtype=np.float64).reshape(-1, 1)
        offsets = np.concatenate([[0], np.cumsum(counts)]).astype(np.int64)

        parts = [nncore.gather_rows(state.features, neighbor_rows)]
        if self.config.mode == "rel":
            parts.append(nncore.gather_rows(state.features, query_rows))
        parts.extend([nncore.constant(dx), nncore.constant(dt)])
        transformed = self.zeta(nncore.concat_cols(parts))
        return nncore.segment_max(transformed, offsets)


class SetAbstractionLayer:
    """Per-frame FPS downsampling with local radius aggregation."""

    def __init__(self, rng, config: SetAbstractionConfig, in_channels: int, name: str):
        self.config = config
        self.in_channels = in_channels
        self.zeta = SharedMLP(rng, in_channels + 3, config.mlp, name=f"{name}.zeta")
        self.out_channels = self.zeta.out_width

    def parameters(self) -> dict:
        return self.zeta.parameters()

    def forward(self, state: _BatchState) -> _BatchState:
        cfg = self.config
        new_coords, new_orig = [], []
        neighbor_rows, dx_parts, counts = [], [], []
        for s in range(state.num_sequences):
            per_coords, per_orig = [], []
            for t in range(1, state.frames_of(s) + 1):
                arr = state.coords[s][t - 1]
                k = max(1, int(np.ceil(cfg.ratio * arr.shape[0])))
                fr = Frame(arr, None, timestamp=1)
                centers = farthest_point_sample(fr, k, canonical_seed_index(arr))
                index = build_grid_index(fr, cfg.radius)
                start = state.starts[s][t - 1]
                for c in centers:
                    hits = radius_query(index, arr[c], cfg.radius)
                    counts.append(hits.size)
                    neighbor_rows.extend((start + hits).tolist())
                    dx_parts.append(arr[hits] - arr[c])
                per_coords.append(arr[centers])
                per_orig.append(state.orig[s][t - 1][centers])
            new_coords.append(per_coords)
            new_orig.append(per_orig)
        neighbor_rows = np.asarray(neighbor_rows, dtype=np.int64)
        dx = np.concatenate(dx_parts, axis=0)
        offsets = np.concatenate([[0], np.cumsum(counts)]).astype(np.int64)
        zin = nncore.concat_cols([
            nncore.gather_rows(state.features, neighbor_rows),
            nncore.constant(dx),
        ])
        pooled = nncore.segment_max(self.zeta(zin), offsets)
        return _BatchState(new_coords, pooled, new_orig)


def interpolation_weights(coarse_coords: np.ndarray, fine_coords: np.ndarray,
                          k: int = 3, p: float = 2.0):
    """Inverse-distance kNN weights of coarse points for each fine point.

    Returns ``(indices, weights)`` of shape (n_fine, k'). A fine point lying
    within the zero-distance threshold of a coarse point copies that point
    exactly (weight one). Ties break toward the smaller coarse index.
    """
    fr = Frame(coarse_coords, None, timestamp=1)
    index = build_grid_index(fr, _knn_cell_size(coarse_coords))
    k = min(k, coarse_coords.shape[0])
    indices = np.zeros((fine_coords.shape[0], k), dtype=np.int64)
    weights = np.zeros((fine_coords.shape[0], k))
    for row, pos in enumerate(fine_coords):
        idx, dist = knn_query(index, pos, k)
        if dist[0] < ZERO_DISTANCE:
            indices[row, 0] = idx[0]
            weights[row, 0] = 1.0
            continue
        w = 1.0 / dist**p
        indices[row] = idx
        weights[row] = w / w.sum()
    return indices, weights


def _knn_cell_size(coords: np.ndarray) -> float:
    span = float(np.max(coords.max(axis=0) - coords.min(axis=0)))
    n = coords.shape[0]
    return max(span / max(1.0, n ** (1.0 / 3.0)), 1e-6)


class FeaturePropagationLayer:
    """Interpolate coarse features onto finer points and mix with skips."""

    def __init__(self, rng, mlp: MLPSpec, coarse_channels: int, skip_channels: int,
                 name: str, k: int = 3, p: float = 2.0):
        self.k = k
        self.p = p
        self.unit = SharedMLP(rng, coarse_channels + skip_channels, mlp, name=f"{name}.unit")
        self.out_channels = self.unit.out_width

    def parameters(self) -> dict:
        return self.unit.parameters()

    def interpolate(self, coarse_coords, coarse_features: Tensor, fine_coords) -> Tensor:
        idx, w = interpolation_weights(coarse_coords, fine_coords, self.k, self.p)
        blended = None
        for col in range(idx.shape[1]):
            part = nncore.mul(
                nncore.gather_rows(coarse_features, idx[:, col]),
                nncore.constant(w[:, col:col + 1]),
            )
            blended = part if blended is None else nncore.add(blended, part)
        return blended

    def forward(self, coarse_coords, coarse_features: Tensor, fine_coords,
                skip_features: Tensor) -> Tensor:
        interpolated = self.interpolate(coarse_coords, coarse_features, fine_coords)
        return self.unit(nncore.concat_cols([interpolated, skip_features]))


# ---------------------------------------------------------------------------
# models


class Model:
    """A built network: layers, parameters, and a head-specific forward."""

    def __init__(self, spec: ArchitectureSpec, rng: np.random.Generator):
        self.spec = spec
        self.sa_layers = []
        channels = spec.input_channels
        for pos, sa_cfg in enumerate(spec.sa_stages):
            layer = SetAbstractionLayer(rng, sa_cfg, channels, name=f"sa{pos}")
            self.sa_layers.append(layer)
            channels = layer.out_channels
        self.meteor_layers = []
        for pos, stage in enumerate(spec.meteor_stages):
            layer = MeteorLayer(rng, stage.layer, channels, name=f"meteor{pos}")
            self.meteor_layers.append(layer)
            channels = layer.out_channels
        self.fp_layers = []
        self.backbone_channels = channels
        self._build_fp(rng)
        head_in = self.fp_layers[-1].out_channels if self.fp_layers else channels
        self.head = SharedMLP(rng, head_in, spec.head_mlp, name="head")

    def _build_fp(self, rng):
        spec = self.spec
        if spec.head == "per-point-class":
            skip_channels = self._segmentation_skip_channels()
            channels = self.backbone_channels
            for pos, (mlp, skip) in enumerate(zip(spec.fp_mlps, skip_channels)):
                layer = FeaturePropagationLayer(rng, mlp, channels, skip, name=f"fp{pos}")
                self.fp_layers.append(layer)
                channels = layer.out_channels
        elif spec.head == "last-frame-flow":
            skip_channels = self._flow_skip_channels()
            channels = self.backbone_channels
            for pos, (mlp, skip) in enumerate(zip(spec.fp_mlps, skip_channels)):
                layer = FeaturePropagationLayer(rng, mlp, channels, skip, name=f"fp{pos}")
                self.fp_layers.append(layer)
                channels = layer.out_channels

    def _segmentation_skip_channels(self):
        # Skips snapshot each stage's output just before it is downsampled.
        skips = [
            stage.layer.mlp.widths[-1]
            for stage in self.spec.meteor_stages
            if stage.downsample_ratio is not None
        ]
        return list(reversed(skips))

    def _flow_skip_channels(self):
        channels = self.spec.input_channels
        skips = []
        for sa_cfg in self.spec.sa_stages:
            skips.append(channels)
            channels = sa_cfg.mlp.widths[-1]
        return list(reversed(skips))

    def parameters(self) -> dict:
        params = {}
        for layer in [*self.sa_layers, *self.meteor_layers, *self.fp_layers, self.head]:
            params.update(layer.parameters())
        return params

    # -- forward passes ----------------------------------------------------

    def forward_batch(self, seqs, flows=None, training: bool = False,
                      rng: np.random.Generator | None = None):
        if not seqs:
            raise InputError("forward_batch needs at least one sequence")
        state = _initial_state(seqs, self.spec.input_channels)
        if self.spec.head == "sequence-class":
            return self._forward_classifier(state, flows, training, rng)
        if len(seqs) != 1:
            raise InputError("per-point heads run one sequence at a time")
        if self.spec.head == "per-point-class":
            return self._forward_segmenter(state, flows, training, rng)
        return self._forward_flow(state, flows, training, rng)

    def forward(self, seq, flows=None, training: bool = False,
                rng: np.random.Generator | None = None):
        single_flows = None if flows is None else [flows]
        out = self.forward_batch([seq], flows=single_flows, training=training, rng=rng)
        if self.spec.head == "sequence-class":
            return nncore.reshape(out, (out.values.shape[1],))
        return out

    def _forward_classifier(self, state, flows, training, rng):
        for stage, layer in zip(self.spec.meteor_stages, self.meteor_layers):
            features = layer.forward(state, flows)
            state = _BatchState(state.coords, features, state.orig)
            if stage.downsample_ratio is not None:
                state = _downsample_state(state, stage.downsample_ratio)
        pooled = nncore.segment_max(state.features, state.seq_offsets())
        pooled = nncore.dropout(pooled, self.spec.dropout_rate, training, rng)
        return self.head(pooled)

    def _forward_segmenter(self, state, flows, training, rng):
        skips = []
        for stage, layer in zip(self.spec.meteor_stages, self.meteor_layers):
            features = layer.forward(state, flows)
            state = _BatchState(state.coords, features, state.orig)
            if stage.downsample_ratio is not None:
                skips.append(state)
                state = _downsample_state(state, stage.downsample_ratio)
        for layer in self.fp_layers:
            fine = skips.pop()
            features = self._propagate(layer, state, fine)
            state = _BatchState(fine.coords, features, fine.orig)
        out = nncore.dropout(state.features, self.spec.dropout_rate, training, rng)
        return self.head(out)

    def _forward_flow(self, state, flows, training, rng):
        skips = []
        for layer in self.sa_layers:
            skips.append(state)
            state = layer.forward(state)
        features = self.meteor_layers[0].forward(state, flows)
        state = _BatchState(state.coords, features, state.orig)
        # Only frame-T points continue into propagation.
        t_last = state.frames_of(0)
        start = state.starts[0][t_last - 1]
        count = state.coords[0][t_last - 1].shape[0]
        coarse_coords = state.coords[0][t_last - 1]
        coarse_features = nncore.gather_rows(
            state.features, np.arange(start, start + count, dtype=np.int64))
        for layer in self.fp_layers:
            fine = skips.pop()
            fine_start = fine.starts[0][t_last - 1]
            fine_count = fine.coords[0][t_last - 1].shape[0]
            fine_coords = fine.coords[0][t_last - 1]
            skip_features = nncore.gather_rows(
                fine.features, np.arange(fine_start, fine_start + fine_count, dtype=np.int64))
            coarse_features = layer.forward(coarse_coords, coarse_features,
                                            fine_coords, skip_features)
            coarse_coords = fine_coords
        out = nncore.dropout(coarse_features, self.spec.dropout_rate, training, rng)
        return self.head(out)

    def _propagate(self, layer, coarse_state, fine_state):
        parts = []
        for s in range(fine_state.num_sequences):
            for t in range(1, fine_state.frames_of(s) + 1):
                coarse_coords = coarse_state.coords[s][t - 1]
                c_start = coarse_state.starts[s][t - 1]
                c_count = coarse_coords.shape[0]
                coarse_features = nncore.gather_rows(
                    coarse_state.features,
                    np.arange(c_start, c_start + c_count, dtype=np.int64))
                fine_coords = fine_state.coords[s][t - 1]
                f_start = fine_state.starts[s][t - 1]
                f_count = fine_coords.shape[0]
                skip_features = nncore.gather_rows(
                    fine_state.features,
                    np.arange(f_start, f_start + f_count, dtype=np.int64))
                parts.append(layer.forward(coarse_coords, coarse_features,
                                           fine_coords, skip_features))
        if len(parts) == 1:
            return parts[0]
        return _stack_rows(parts)


def _stack_rows(parts):
    offsets = np.concatenate([[0], np.cumsum([p.values.shape[0] for p in parts])])
    values = np.concatenate([p.values for p in parts], axis=0)
    out = Tensor(values, _parents=tuple(parts))

    def backward(g):
        for part, lo, hi in zip(parts, offsets[:-1], offsets[1:]):
            if part.requires_grad:
                part.grad += g[lo:hi]

    out._backward = backward
    return out


def build_model(spec: ArchitectureSpec, seed: int = 0) -> Model:
    """Instantiate a model with deterministic parameter initialization."""
    return Model(spec, np.random.default_rng(seed))


def model_forward(model: Model, seq, flows=None) -> np.ndarray:
    """Run a model on one sequence and return plain output values."""
    return model.forward(seq, flows=flows).values


# ---------------------------------------------------------------------------
# functional layer surfaces (non-trainable convenience wrappers)


def meteor_ind_forward(seq: Sequence, neighborhoods, zeta: SharedMLP) -> np.ndarray:
    """Per-point features from explicit neighborhoods, ``ind`` variant."""
    return _meteor_functional(seq, neighborhoods, zeta, rel=False)


def meteor_rel_forward(seq: Sequence, neighborhoods, zeta: SharedMLP) -> np.ndarray:
    """Per-point features from explicit neighborhoods, ``rel`` variant."""
    return _meteor_functional(seq, neighborhoods, zeta, rel=True)


def _meteor_functional(seq: Sequence, neighborhoods, zeta, rel: bool) -> np.ndarray:
    state = _initial_state([seq], seq.num_channels)
    neighbor_rows, query_rows, dx, dt, counts = [], [], [], [], []
    for nb in neighborhoods:
        t, i = nb.query
        if not nb.members:
            raise InputError(f"neighborhood of ({t}, {i}) is empty")
        counts.append(len(nb.members))
        base = seq.frame_at(t).coords[i]
        for (t2, j) in nb.members:
            query_rows.append(state.row(0, t, i))
            neighbor_rows.append(state.row(0, t2, j))
            dx.append(seq.frame_at(t2).coords[j] - base)
            dt.append(t2 - t)
    offsets = np.concatenate([[0], np.cumsum(counts)]).astype(np.int64)
    parts = [nncore.gather_rows(state.features, np.asarray(neighbor_rows, dtype=np.int64))]
    if rel:
        parts.append(nncore.gather_rows(state.features, np.asarray(query_rows, dtype=np.int64)))
    parts.append(nncore.constant(np.asarray(dx).reshape(-1, 3)))
    parts.append(nncore.constant(np.asarray(dt, dtype=np.float64).reshape(-1, 1)))
    return nncore.segment_max(zeta(nncore.concat_cols(parts)), offsets).values


def set_abstraction(fr: Frame, n_samples: int, radius: float, zeta: SharedMLP) -> Frame:
    """Downsample a frame to FPS centers with max-pooled local features."""
    if not 1 <= n_samples <= fr.num_points:
        raise InputError(f"n_samples must be in 1..{fr.num_points}, got {n_samples}")
    if not radius > 0:
        raise InputError(f"radius must be positive, got {radius}")
    centers = farthest_point_sample(fr, n_samples, canonical_seed_index(fr.coords))
    index = build_grid_index(fr, radius)
    features = nncore.constant(fr.features)
    neighbor_rows, dx, counts = [], [], []
    for c in centers:
        hits = radius_query(index, fr.coords[c], radius)
        counts.append(hits.size)
        neighbor_rows.extend(hits.tolist())
        dx.append(fr.coords[hits] - fr.coords[c])
    offsets = np.concatenate([[0], np.cumsum(counts)]).astype(np.int64)
    zin = nncore.concat_cols([
        nncore.gather_rows(features, np.asarray(neighbor_rows, dtype=np.int64)),
        nncore.constant(np.concatenate(dx, axis=0)),
    ])
    pooled = nncore.segment_max(zeta(zin), offsets)
    return Frame(fr.coords[centers], pooled.values, fr.timestamp)


def feature_propagation(coarse: Frame, fine_coords, skip_features,
                        unit_mlp: SharedMLP, k: int = 3, p: float = 2.0) -> np.ndarray:
    """Interpolate coarse features onto fine coordinates and mix with skips."""
    fine_coords = np.asarray(fine_coords, dtype=np.float64)
    idx, w = interpolation_weights(coarse.coords, fine_coords, k, p)
    features = nncore.constant(coarse.features)
    blended = None
    for col in range(idx.shape[1]):
        part = nncore.mul(nncore.gather_rows(features, idx[:, col]),
                          nncore.constant(w[:, col:col + 1]))
        blended = part if blended is None else nncore.add(blended, part)
    skip = nncore.constant(np.asarray(skip_features, dtype=np.float64))
    return unit_mlp(nncore.concat_cols([blended, skip])).values


# ---------------------------------------------------------------------------
# presets


PRESET_NAMES = (
    "toy-cls",
    "meteornet-cls",
    "meteornet-seg-s",
    "meteornet-seg-m",
    "meteornet-seg-l",
    "meteornet-flow",
)

_SEG_WIDTHS = {
    "s": ((32, 32, 64), (64, 64, 128), (128, 128, 256), (256, 256, 512)),
    "m": ((32, 32, 128), (64, 64, 256), (128, 128, 512), (256, 256, 1024)),
    "l": ((32, 64, 128), (64, 128, 256), (128, 256, 512), (256, 512, 1024)),
}


def _direct(r0: float, alpha: float, tau: int) -> GroupingConfig:
    return GroupingConfig(mode="direct", temporal_radius=tau,
                          schedule=RadiusSchedule(r0, alpha))


def preset(name: str, *, input_channels: int | None = None,
           num_classes: int | None = None, temporal_radius: int = 3,
           grouping: str = "direct", chained_radius: float = 2.0) -> ArchitectureSpec:
    """Named architecture presets addressable from config files.

    The toy classifier widths follow the toy benchmark (shared MLP [16, 16],
    max pool, one fully-connected layer); segmentation widths follow the
    published s/m/l table. Radii, propagation widths, and the classification
    trunk are configurable defaults.
    """
    if name == "toy-cls":
        channels = 3 if input_channels is None else input_channels
        classes = 4 if num_classes is None else num_classes
        return ArchitectureSpec(
            name=name, fusion="early", head="sequence-class",
            input_channels=channels,
            meteor_stages=(
                MeteorStage(MeteorLayerConfig(
                    mode="ind",
                    grouping=_direct(260.0, 0.0, temporal_radius),
                    mlp=MLPSpec((16, 16)),
                )),
            ),
            head_mlp=MLPSpec((classes,), final_activation=False),
            dropout_rate=0.0,
        )
    if name == "meteornet-cls":
        channels = 0 if input_channels is None else input_channels
        classes = 20 if num_classes is None else num_classes
        widths = ((32, 32, 64), (64, 64, 128), (128, 128, 256), (256, 256, 512))
        stages = []
        r0 = 0.2
        for pos, w in enumerate(widths):
            stages.append(MeteorStage(
                MeteorLayerConfig(mode="ind",
                                  grouping=_direct(r0, r0 / 2.0, temporal_radius),
                                  mlp=MLPSpec(w)),
                downsample_ratio=0.5 if pos < len(widths) - 1 else None,
            ))
            r0 *= 2.0
        return ArchitectureSpec(
            name=name, fusion="early", head="sequence-class",
            input_channels=channels, meteor_stages=tuple(stages),
            head_mlp=MLPSpec((256, 128, classes), final_activation=False),
            dropout_rate=0.5,
        )
    if name.startswith("meteornet-seg-"):
        variant = name.rsplit("-", 1)[-1]
        if variant not in _SEG_WIDTHS:
            raise InputError(f"unknown architecture preset {name!r}")
        channels = 0 if input_channels is None else input_channels
        classes = 12 if num_classes is None else num_classes
        stages = []
        r0 = 0.5
        for pos, w in enumerate(_SEG_WIDTHS[variant]):
            if grouping == "chained":
                group_cfg = GroupingConfig(mode="chained", temporal_radius=temporal_radius,
                                           radius=chained_radius * 2.0**pos)
            else:
                group_cfg = _direct(r0, r0 / 2.0, temporal_radius)
            stages.append(MeteorStage(
                MeteorLayerConfig(mode="ind", grouping=group_cfg, mlp=MLPSpec(w)),
                downsample_ratio=0.5 if pos < 3 else None,
            ))
            r0 *= 2.0
        return ArchitectureSpec(
            name=name, fusion="early", head="per-point-class",
            input_channels=channels, meteor_stages=tuple(stages),
            fp_mlps=(MLPSpec((256, 256)), MLPSpec((256, 128)), MLPSpec((128, 128))),
            head_mlp=MLPSpec((128, classes), final_activation=False),
            dropout_rate=0.5,
        )
    if name == "meteornet-flow":
        channels = 0 if input_channels is None else input_channels
        if grouping == "chained":
            group_cfg = GroupingConfig(mode="chained", temporal_radius=temporal_radius,
                                       radius=chained_radius)
        else:
            group_cfg = _direct(1.0, 0.5, temporal_radius)
        return ArchitectureSpec(
            name=name, fusion="late", head="last-frame-flow",
            input_channels=channels,
            sa_stages=(
                SetAbstractionConfig(ratio=0.5, radius=0.5, mlp=MLPSpec((32, 32, 64))),
                SetAbstractionConfig(ratio=0.5, radius=1.0, mlp=MLPSpec((64, 64, 128))),
            ),
            meteor_stages=(
                MeteorStage(MeteorLayerConfig(mode="rel", grouping=group_cfg,
                                              mlp=MLPSpec((128, 128, 256)))),
            ),
            fp_mlps=(MLPSpec((256, 128)), MLPSpec((128, 128))),
            head_mlp=MLPSpec((128, 3), final_activation=False),
            dropout_rate=0.0,
        )
    raise InputError(f"unknown architecture preset {name!r}")
