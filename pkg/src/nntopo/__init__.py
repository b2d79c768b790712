"""Topology of data as it moves through the layers of a neural network.

Submodules:

- ``simplicial``: simplicial complexes, F2 boundary matrices, Betti numbers
- ``vr``: k-NN graphs, hop-count geodesics, Vietoris-Rips complexes
- ``persistence``: filtrations and barcodes
- ``datagen``: labeled synthetic data sets and CSV input/output
- ``nn``: small fully connected classifiers trained with Adam
- ``pipeline``: scale search, per-layer homology, experiments and reports
"""

from .simplicial import (
    BettiVector,
    ComplexValidationError,
    F2Matrix,
    SimplicialComplex,
    betti_numbers,
    boundary_matrix,
    rank_f2,
    validate_complex,
)
from .vr import ParameterError, ScaleParams, geodesic_distances, knn_graph, vietoris_rips, vr_betti
from .persistence import Barcode, FilteredComplex, build_filtration, persistent_betti, reduce
from .datagen import DatasetSpec, LabeledPointCloud, generate, load_csv, sample_known_manifold, save_csv
from .nn import Mlp, TrainConfig, forward_trace, load_model, save_model, train
from .pipeline import (
    ExperimentConfig,
    pca_project,
    run_experiment,
    select_scale,
    topological_complexity,
    track_persistence,
    track_topology,
)

__version__ = "0.1.0"
