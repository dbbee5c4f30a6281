"""Per-node GNN layer selection by Mahalanobis distance to per-layer class prototypes."""

from .autodiff import Node, Tape, backward, finite_difference_check
from .encoders import EncoderConfig, GraphOperators, encode, init_encoder
from .evaluation import RunReport, SplitReport, aggregate_splits, delta_max, evaluate, micro_f1
from .graph import (
    Graph, SbmSpec, Split, SplitSet, edge_label_homophily, generate_sbm, load_dataset, make_splits,
    normalize_adjacency, save_dataset,
)
from .poison import AttackSpec, attack, hetero_greedy_attack, masked_train_labels, random_flip_attack
from .prototypes import ClassMoments, LayerMoments, MomentAccumulator, batch_moments, moments_epoch_pass
from .selection import POLICIES, layer_histogram, select
from .sparse import ShapeError, SparseCSR
from .training import TrainConfig, TrainedModel, initial_model, train

__version__ = "0.1.0"
