"""Subspace DOA estimation on uniform linear arrays: ESPRIT, IESPRIT and two-step KAI-ESPRIT."""

__version__ = "0.1.0"

from .array_model import (
    ArrayGeometry,
    CovarianceEstimate,
    DomainError,
    SnapshotBatch,
    SourceScenario,
    array_manifold,
    sample_covariance,
    steering_vector,
    synthesize_snapshots,
    true_covariance,
)
from .esprit import DoaEstimate, decompose, esprit
from .kai import KaiResult, iesprit, two_step_kai
from .metrics import crb_sqrt, match_errors, resolved, rmse
