"""Toy particle-speed benchmark: dataset, grid baselines, experiment runner.

Each sample is a four-frame sequence of a single particle inside a cube,
moving along one of the six axis directions with per-step distances drawn
from one of four speed classes (static, slow, medium, fast). The point-based
classifier sees raw coordinates; grid baselines see binary occupancy voxels,
either with time stacked as channels into a 3-D grid or as a dense 4-D grid.

Coarse grids collapse the slow classes into identical occupancy patterns, so
the convolution baselines hit a structural accuracy ceiling regardless of
training budget, while the point-based model separates all four classes.
"""
from __future__ import annotations

import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from . import nncore
from .geometry import Frame, Sequence, sequence
from .meteor import Model, build_model, preset
from .nncore import Adam, SharedMLP, Tensor
from .util import InputError, ResourceLimitError, TrainingError, worker_count

CLASS_NAMES = ("static", "slow", "medium", "fast")
STEP_RANGES = ((0.0, 0.0), (0.09, 0.11), (0.9, 1.1), (9.0, 11.0))
DIRECTIONS = np.array([
    [1.0, 0.0, 0.0], [-1.0, 0.0, 0.0],
    [0.0, 1.0, 0.0], [0.0, -1.0, 0.0],
    [0.0, 0.0, 1.0], [0.0, 0.0, -1.0],
])

MAX_CELLS_PER_FRAME = 10**6


@dataclass(frozen=True)
class ToyConfig:
    """Toy dataset parameters: cube size, frame count, and split sizes."""

    cube_size: float = 100.0
    num_frames: int = 4
    train_sequences: int = 2000
    val_sequences: int = 200
    seed: int = 0

    def __post_init__(self):
        if self.cube_size <= 0 or self.num_frames < 2:
            raise InputError("cube size must be positive and num_frames >= 2")
        for count, split in ((self.train_sequences, "train"), (self.val_sequences, "val")):
            if count < len(CLASS_NAMES) or count % len(CLASS_NAMES):
                raise InputError(
                    f"{split} split must be a positive multiple of {len(CLASS_NAMES)}"
                )


@dataclass
class ToyDataset:
    train: list
    train_labels: np.ndarray
    val: list
    val_labels: np.ndarray
    config: ToyConfig


def _sample_trajectory(rng: np.random.Generator, label: int, config: ToyConfig) -> np.ndarray:
    """Positions (num_frames, 3) of one particle; the whole path stays inside."""
    lo, hi = STEP_RANGES[label]
    start = rng.uniform(0.0, config.cube_size, 3)
    steps = rng.uniform(lo, hi, config.num_frames - 1) if hi > 0 else \
        np.zeros(config.num_frames - 1)
    while True:
        direction = DIRECTIONS[rng.integers(0, len(DIRECTIONS))]
        # Motion is monotone along one axis, so the endpoint decides feasibility.
        endpoint = start + steps.sum() * direction
        if (endpoint >= 0.0).all() and (endpoint <= config.cube_size).all():
            break
    positions = np.empty((config.num_frames, 3))
    positions[0] = start
    np.cumsum(steps[:, None] * direction[None, :], axis=0, out=positions[1:])
    positions[1:] += start
    return positions


def trajectory_sequence(positions: np.ndarray) -> Sequence:
    """Wrap particle positions as a sequence of single-point frames."""
    return sequence([positions[t:t + 1] for t in range(positions.shape[0])])


def classify_trajectory(positions: np.ndarray) -> int:
    """Ground-truth label from step norms; inverse of the generator."""
    steps = np.linalg.norm(np.diff(positions, axis=0), axis=1)
    if np.all(steps == 0.0):
        return 0
    for label, (lo, hi) in enumerate(STEP_RANGES[1:], start=1):
        if np.all((steps >= lo) & (steps <= hi)):
            return label
    raise InputError("step norms match no speed class")


def _split_labels(count: int) -> np.ndarray:
    return np.arange(count, dtype=np.int64) % len(CLASS_NAMES)


def _generate_split(config: ToyConfig, split: str, count: int) -> list:
    labels = _split_labels(count)

    def build(index: int) -> np.ndarray:
        rng = np.random.default_rng(
            np.random.SeedSequence((config.seed, hash(split) & 0xFFFF, index))
        )
        return _sample_trajectory(rng, int(labels[index]), config)

    workers = worker_count()
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            trajectories = list(pool.map(build, range(count)))
    else:
        trajectories = [build(i) for i in range(count)]
    return trajectories


def generate_toy_dataset(config: ToyConfig) -> ToyDataset:
    """Deterministic class-balanced dataset; identical bytes for equal seeds."""
    train_pos = _generate_split(config, "train", config.train_sequences)
    val_pos = _generate_split(config, "val", config.val_sequences)
    return ToyDataset(
        train=[trajectory_sequence(p) for p in train_pos],
        train_labels=_split_labels(config.train_sequences),
        val=[trajectory_sequence(p) for p in val_pos],
        val_labels=_split_labels(config.val_sequences),
        config=config,
    )


def normalized_input(seq: Sequence, cube_size: float = 100.0) -> Sequence:
    """Attach centered, scaled coordinates as the input feature channels.

    Features are (x - sequence centroid) / cube_size, which keeps the
    classifier exactly invariant to global translation of the scene.
    """
    coords = np.concatenate([fr.coords for fr in seq], axis=0)
    centroid = coords.mean(axis=0)
    frames = [
        Frame(fr.coords, (fr.coords - centroid) / cube_size, fr.timestamp)
        for fr in seq
    ]
    return Sequence(tuple(frames))


# ---------------------------------------------------------------------------
# occupancy grids and the dense convolution baseline


@dataclass(frozen=True)
class GridBaselineConfig:
    """Dense conv baseline: grid size, variant, two conv layers of 16 channels."""

    grid_size: float
    variant: str = "time-as-channels"  # or "dense-4d"
    channels: int = 16
    kernel: int = 3

    def __post_init__(self):
        if not self.grid_size > 0:
            raise InputError(f"grid_size must be positive, got {self.grid_size}")
        if self.variant not in ("time-as-channels", "dense-4d"):
            raise InputError(f"unknown grid variant {self.variant!r}")
        if self.channels < 1 or self.kernel < 1:
            raise InputError("channels and kernel must be positive")


def cells_per_axis(cube_size: float, grid_size: float) -> int:
    return int(np.ceil(cube_size / grid_size))


def voxelize_occupancy(seq: Sequence, grid_size: float, variant: str = "time-as-channels",
                       cube_size: float = 100.0) -> np.ndarray:
    """Binary occupancy grids for one sequence.

    ``time-as-channels`` returns (T, n, n, n) with frames stacked as channels;
    ``dense-4d`` returns (1, T, n, n, n) keeping time as a fourth grid axis.
    """
    if variant not in ("time-as-channels", "dense-4d"):
        raise InputError(f"unknown grid variant {variant!r}")
    if not grid_size > 0:
        raise InputError(f"grid_size must be positive, got {grid_size}")
    n = cells_per_axis(cube_size, grid_size)
    if n**3 > MAX_CELLS_PER_FRAME:
        raise ResourceLimitError(
            f"grid size {grid_size} produces {n ** 3} cells per frame "
            f"(limit {MAX_CELLS_PER_FRAME})"
        )
    T = len(seq)
    grid = np.zeros((T, n, n, n), dtype=np.uint8)
    for t, fr in enumerate(seq):
        cells = np.clip((fr.coords / grid_size).astype(np.int64), 0, n - 1)
        grid[t, cells[:, 0], cells[:, 1], cells[:, 2]] = 1
    if variant == "dense-4d":
        return grid[None, ...]
    return grid


def _conv_indices(in_channels: int, spatial, kernel: int):
    """Flat gather indices for same-padded convolution patches.

    Returns ``(base_indices, padded_size)`` where ``base_indices`` has shape
    (positions, in_channels * kernel**ndim) into one flattened padded sample.
    """
    padded = tuple(s + kernel - 1 for s in spatial)
    dims = (in_channels,) + padded
    strides = np.ones(len(dims), dtype=np.int64)
    for axis in range(len(dims) - 2, -1, -1):
        strides[axis] = strides[axis + 1] * dims[axis + 1]

    kernel_offsets = np.zeros(1, dtype=np.int64)
    for axis in range(1, len(dims)):
        taps = np.arange(kernel, dtype=np.int64) * strides[axis]
        kernel_offsets = (kernel_offsets[:, None] + taps[None, :]).reshape(-1)
    channel_offsets = np.arange(in_channels, dtype=np.int64) * strides[0]
    offsets = (channel_offsets[:, None] + kernel_offsets[None, :]).reshape(-1)

    base = np.zeros(1, dtype=np.int64)
    for axis, extent in enumerate(spatial, start=1):
        positions = np.arange(extent, dtype=np.int64) * strides[axis]
        base = (base[:, None] + positions[None, :]).reshape(-1)
    return base[:, None] + offsets[None, :], int(np.prod(dims))


class ConvLayer:
    """Same-padded stride-1 Nd convolution via patch extraction and a GEMM."""

    def __init__(self, rng, in_channels: int, out_channels: int, kernel: int,
                 spatial, name: str):
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.kernel = kernel
        self.spatial = tuple(int(s) for s in spatial)
        self.name = name
        taps = in_channels * kernel ** len(self.spatial)
        self.weight = nncore.parameter(nncore.glorot_uniform(rng, taps, out_channels))
        self.bias = nncore.parameter(np.zeros(out_channels))
        self.base_indices, self.padded_size = _conv_indices(in_channels, self.spatial, kernel)

    def parameters(self) -> dict:
        return {f"{self.name}.weight": self.weight, f"{self.name}.bias": self.bias}

    def __call__(self, x: Tensor) -> Tensor:
        shape = x.values.shape
        if shape[1:] != (self.in_channels, *self.spatial):
            raise InputError(
                f"{self.name}: expected input (B, {self.in_channels}, "
                f"{self.spatial}), got {shape}"
            )
        batch = shape[0]
        lo = (self.kernel - 1) // 2
        hi = self.kernel - 1 - lo
        pad_width = [(0, 0), (0, 0)] + [(lo, hi)] * len(self.spatial)
        padded = nncore.pad(x, pad_width)
        flat = nncore.reshape(padded, (padded.values.size,))
        patches = nncore.extract_patches(flat, self.base_indices, self.padded_size, batch)
        out = nncore.add(nncore.matmul(patches, self.weight), self.bias)
        positions = self.base_indices.shape[0]
        out = nncore.reshape(out, (batch, positions, self.out_channels))
        out = nncore.transpose(out, (0, 2, 1))
        return nncore.reshape(out, (batch, self.out_channels, *self.spatial))


class GridClassifier:
    """Two conv layers, global max pooling, one fully-connected layer."""

    def __init__(self, config: GridBaselineConfig, input_shape, num_classes: int = 4,
                 seed: int = 0):
        rng = np.random.default_rng(seed)
        in_channels, *spatial = input_shape
        self.config = config
        self.input_shape = tuple(input_shape)
        self.conv1 = ConvLayer(rng, in_channels, config.channels, config.kernel,
                               spatial, name="conv1")
        self.conv2 = ConvLayer(rng, config.channels, config.channels, config.kernel,
                               spatial, name="conv2")
        self.fc_weight = nncore.parameter(
            nncore.glorot_uniform(rng, config.channels, num_classes))
        self.fc_bias = nncore.parameter(np.zeros(num_classes))

    def parameters(self) -> dict:
        params = {}
        params.update(self.conv1.parameters())
        params.update(self.conv2.parameters())
        params["fc.weight"] = self.fc_weight
        params["fc.bias"] = self.fc_bias
        return params

    def forward(self, occupancy: np.ndarray) -> Tensor:
        x = nncore.constant(occupancy.astype(np.float64))
        h = nncore.relu(self.conv1(x))
        h = nncore.relu(self.conv2(h))
        batch, channels = h.values.shape[:2]
        positions = int(np.prod(h.values.shape[2:]))
        h = nncore.reshape(h, (batch * channels, positions))
        pooled = nncore.max_pool_rows(nncore.transpose(h))
        pooled = nncore.reshape(pooled, (batch, channels))
        return nncore.add(nncore.matmul(pooled, self.fc_weight), self.fc_bias)


# ---------------------------------------------------------------------------
# training


@dataclass(frozen=True)
class TrainConfig:
    """Budget and reproducibility knobs for the toy training loops."""

    learning_rate: float = 1e-3
    batch_size: int = 32
    max_epochs: int = 200
    seed: int = 0
    stop_at_perfect: bool = True
    patience: int | None = None
    eval_train_each_epoch: bool = True


@dataclass
class EpochStats:
    epoch: int
    loss: float
    train_accuracy: float | None
    val_accuracy: float

    def as_dict(self) -> dict:
        return {
            "epoch": self.epoch,
            "loss": self.loss,
            "train_accuracy": self.train_accuracy,
            "val_accuracy": self.val_accuracy,
        }


@dataclass
class ExperimentReport:
    arch: str
    seed: int
    epochs: list
    final_train_accuracy: float
    final_val_accuracy: float
    wall_time_s: float

    def as_dict(self) -> dict:
        return {
            "arch": self.arch,
            "seed": self.seed,
            "epochs": [e.as_dict() for e in self.epochs],
            "final_train_accuracy": self.final_train_accuracy,
            "final_val_accuracy": self.final_val_accuracy,
            "wall_time_s": self.wall_time_s,
        }


def _batched_accuracy(predict, labels: np.ndarray, count: int, batch_size: int) -> float:
    correct = 0
    for start in range(0, count, batch_size):
        stop = min(start + batch_size, count)
        pred = predict(np.arange(start, stop))
        correct += int((pred == labels[start:stop]).sum())
    return correct / count


def _training_loop(arch: str, cfg: TrainConfig, params: dict, num_train: int,
                   batch_loss, predict_train, predict_val,
                   train_labels: np.ndarray, val_labels: np.ndarray,
                   eval_batch: int) -> ExperimentReport:
    rng = np.random.default_rng(cfg.seed)
    optimizer = Adam(params, lr=cfg.learning_rate)
    history = []
    best_val = -1.0
    stale = 0
    started = time.time()
    train_acc = None
    for epoch in range(cfg.max_epochs):
        order = rng.permutation(num_train)
        last_loss = np.nan
        for start in range(0, num_train, cfg.batch_size):
            batch = order[start:start + cfg.batch_size]
            loss = batch_loss(batch, rng)
            last_loss = loss.item()
            if not np.isfinite(last_loss):
                raise TrainingError(f"non-finite loss at epoch {epoch}")
            loss.backward()
            optimizer.step()
        val_acc = _batched_accuracy(predict_val, val_labels, val_labels.size, eval_batch)
        train_acc = None
        if cfg.eval_train_each_epoch:
            train_acc = _batched_accuracy(predict_train, train_labels, num_train, eval_batch)
        history.append(EpochStats(epoch, last_loss, train_acc, val_acc))
        if cfg.stop_at_perfect and train_acc == 1.0 and val_acc == 1.0:
            break
        if cfg.patience is not None:
            if val_acc > best_val:
                best_val = val_acc
                stale = 0
            else:
                stale += 1
                if stale > cfg.patience:
                    break
    if train_acc is None:
        train_acc = _batched_accuracy(predict_train, train_labels, num_train, eval_batch)
        history[-1].train_accuracy = train_acc
    return ExperimentReport(
        arch=arch,
        seed=cfg.seed,
        epochs=history,
        final_train_accuracy=train_acc,
        final_val_accuracy=history[-1].val_accuracy,
        wall_time_s=time.time() - started,
    )


def train_toy_meteornet(dataset: ToyDataset, cfg: TrainConfig):
    """Train the toy point-based classifier; returns (model, report)."""
    spec = preset("toy-cls")
    model = build_model(spec, seed=cfg.seed)
    params = model.parameters()
    cube = dataset.config.cube_size
    train_inputs = [normalized_input(s, cube) for s in dataset.train]
    val_inputs = [normalized_input(s, cube) for s in dataset.val]

    def batch_loss(batch_idx, rng):
        logits = model.forward_batch([train_inputs[i] for i in batch_idx],
                                     training=True, rng=rng)
        return nncore.softmax_cross_entropy(logits, dataset.train_labels[batch_idx])

    def predict_split(inputs):
        def predict(idx):
            logits = model.forward_batch([inputs[i] for i in idx])
            return logits.values.argmax(axis=1)
        return predict

    report = _training_loop(
        "toy-meteornet", cfg, params, len(train_inputs), batch_loss,
        predict_split(train_inputs), predict_split(val_inputs),
        dataset.train_labels, dataset.val_labels, eval_batch=256,
    )
    return model, report


def train_grid_baseline(dataset: ToyDataset, grid_cfg: GridBaselineConfig,
                        cfg: TrainConfig):
    """Train a dense conv baseline on occupancy grids; returns (model, report)."""
    cube = dataset.config.cube_size
    train_grids = np.stack([
        voxelize_occupancy(s, grid_cfg.grid_size, grid_cfg.variant, cube)
        for s in dataset.train
    ])
    val_grids = np.stack([
        voxelize_occupancy(s, grid_cfg.grid_size, grid_cfg.variant, cube)
        for s in dataset.val
    ])
    model = GridClassifier(grid_cfg, train_grids.shape[1:], seed=cfg.seed)
    params = model.parameters()

    def batch_loss(batch_idx, rng):
        logits = model.forward(train_grids[batch_idx])
        return nncore.softmax_cross_entropy(logits, dataset.train_labels[batch_idx])

    def predict_on(grids):
        def predict(idx):
            return model.forward(grids[idx]).values.argmax(axis=1)
        return predict

    arch = f"grid-{grid_cfg.variant}-{grid_cfg.grid_size:g}"
    report = _training_loop(
        arch, cfg, params, train_grids.shape[0], batch_loss,
        predict_on(train_grids), predict_on(val_grids),
        dataset.train_labels, dataset.val_labels, eval_batch=cfg.batch_size,
    )
    return model, report


def run_toy_experiment(arch, toy_config: ToyConfig, train_config: TrainConfig):
    """End-to-end toy run: generate data, train, report accuracies.

    ``arch`` is the string ``"toy-meteornet"`` or a :class:`GridBaselineConfig`.
    """
    dataset = generate_toy_dataset(toy_config)
    if arch == "toy-meteornet":
        _, report = train_toy_meteornet(dataset, train_config)
        return report
    if isinstance(arch, GridBaselineConfig):
        _, report = train_grid_baseline(dataset, arch, train_config)
        return report
    raise InputError(f"unknown toy architecture {arch!r}")
