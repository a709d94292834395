"""Forward-Forward training with fixed and adaptive inter-layer collaboration."""

from .collab import CollabParams, NetworkState, build_network, train_network
from .dataio import Dataset, PosNegBatch, load_dataset, load_idx_images, load_idx_labels
from .evalstats import cohens_d, evaluate, paired_t_test, predict
from .ffcore import AdamConfig, DenseLayer, GoodnessConfig, forward_all
from .harness import ExperimentConfig, compare_variants, load_config, run_experiment

__version__ = "0.1.0"
