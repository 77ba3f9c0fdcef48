"""Deep learning on dynamic 3D point cloud sequences.

The package is organized around a small set of building blocks: exact spatial
queries over per-frame hash grids (:mod:`meteornet.geometry`), spatiotemporal
neighborhood construction by direct or chained-flow grouping
(:mod:`meteornet.grouping`), a self-contained reverse-mode differentiable
core (:mod:`meteornet.nncore`), Meteor layers with architecture presets
(:mod:`meteornet.meteor`), the flattening construction behind the
sequence-distance analysis (:mod:`meteornet.theory`), the toy particle-speed
benchmark with dense grid baselines (:mod:`meteornet.toybench`), evaluation
metrics (:mod:`meteornet.metrics`), and binary file formats
(:mod:`meteornet.io`). The ``meteornet`` command line ties them together.
"""

from .geometry import Frame, Sequence, build_grid_index, farthest_point_sample, \
    frame, hausdorff, knn_query, radius_query, sequence
from .grouping import FlowField, Neighborhood, RadiusSchedule, VirtualTrajectory, \
    chain_flow, chained_group, direct_group, estimate_flow_nn, interpolate_flow
from .meteor import ArchitectureSpec, GroupingConfig, MeteorLayerConfig, \
    MeteorStage, Model, SetAbstractionConfig, build_model, model_forward, preset
from .metrics import EpeReport, IouReport, accuracy, epe_stats, iou_report
from .nncore import Adam, MLPSpec, SharedMLP, Tensor, grad_check
from .theory import Sequence1D, d_seq, psi_map, verify_distance_identity
from .toybench import GridBaselineConfig, ToyConfig, TrainConfig, \
    generate_toy_dataset, run_toy_experiment, voxelize_occupancy
from .util import FormatError, InputError, ResourceLimitError, TrainingError

__version__ = "0.1.0"
