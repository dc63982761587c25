"""Correlation mode decomposition of training trajectories, with an exact-DMD baseline."""

from .clustering import ClusterConfig, Dendrogram, choose_references, cut, linkage
from .correlation import (
    STATIC_MODE,
    SampleSet,
    assign_to_modes,
    centralize,
    corr,
    corr_matrix,
    sample_representatives,
)
from .decomposition import (
    CorrelationModeDecomposition,
    ModeModel,
    decompose,
    fit_affine,
    load_model,
    reconstruct,
    reconstruct_full,
    save_model,
)
from .dmd import DmdModel, ExactDMD, dmd_fit, dmd_reconstruct, load_dmd, save_dmd
from .trajectory import (
    EpochSelection,
    Layer,
    SnapshotMatrix,
    load_trajectory,
    save_trajectory,
    subsample_epochs,
    truncate_history,
)

__version__ = "0.1.0"
