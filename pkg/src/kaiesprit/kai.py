"""
Knowledge-aided iterative covariance refinement
===============================================

The sample covariance of N snapshots contains the cross terms
A {(1/N) sum s n^H} + h.c. that vanish only as N grows. Given DOA estimates
(and optionally some directions known a priori), these terms are estimated
with the projector identity

    V = Qa R Qa_perp

and a scaled version is removed from R before running ESPRIT again. The
scale mu is swept over [0, 1] and the candidate with the smallest stochastic
maximum-likelihood cost is kept.

:func:`two_step_kai` is the knowledge-aided estimator, :func:`iesprit` the
same pipeline without prior knowledge.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .array_model import (
    ArrayGeometry,
    CovarianceEstimate,
    SnapshotBatch,
    _as_matrix,
    _steering_matrix,
    hermitian_part,
    sample_covariance,
)
from .esprit import (
    ALL_DEGENERATE,
    RANK_WARNING,
    SINGULAR_LS,
    DoaEstimate,
    _pinv_with_cond,
    esprit,
)

RANK_RTOL = 1e-12
LOGDET_FLOOR = 1e-12
DEFAULT_INCREMENT = 0.05


class RankDeficiencyWarning(UserWarning):
    """A steering matrix built from estimates does not have full column rank."""


@dataclass(frozen=True)
class ProjectionPair:
    """Orthogonal projectors onto range(A) and its complement."""

    Qa: np.ndarray
    Qa_perp: np.ndarray
    rank: int
    num_columns: int

    @property
    def rank_deficient(self) -> bool:
        return self.rank < self.num_columns


@dataclass(frozen=True)
class MuSweepRecord:
    """One point of the reliability-factor sweep.

    ``candidate`` is the estimate that would be returned if this mu won
    (known DOAs merged in); ``raw`` is the plain ESPRIT output on the
    modified covariance.
    """

    mu: float
    objective: float
    candidate: DoaEstimate
    raw: DoaEstimate
    degenerate: bool


@dataclass(frozen=True)
class KaiResult:
    estimate: DoaEstimate
    sweep: tuple
    first_step: DoaEstimate

    @property
    def mu_opt(self) -> float:
        return self.estimate.mu_opt


def _data(X) -> np.ndarray:
    return X.data if isinstance(X, SnapshotBatch) else np.asarray(X)


def ls_amplitudes(A: np.ndarray, X) -> np.ndarray:
    """Least-squares source amplitudes s(i) = (A^H A)^{-1} A^H x(i) for every snapshot.

    Returns the P x N matrix of amplitude estimates. A rank-deficient ``A``
    is handled with a truncated pseudo-inverse and a
    :class:`RankDeficiencyWarning`.
    """
    X = _data(X)
    pinv, cond = _pinv_with_cond(np.asarray(A))
    if not cond < 1 / RANK_RTOL:
        warnings.warn("steering matrix is numerically rank deficient", RankDeficiencyWarning,
                      stacklevel=2)
    return pinv @ X


def noise_residual(X, A: np.ndarray, S: np.ndarray) -> np.ndarray:
    """Per-snapshot residual n(i) = x(i) - A s(i)."""
    return _data(X) - A @ S


def projections(A: np.ndarray) -> ProjectionPair:
    """Projectors Qa = A (A^H A)^{-1} A^H and Qa_perp = I - Qa.

    Qa is formed from the left singular vectors of ``A`` whose singular
    values exceed 1e-12 of the largest, which equals the textbook formula
    for full-rank ``A`` and is the pseudo-inverse version otherwise.
    """
    A = np.asarray(A)
    if A.ndim == 1:
        A = A[:, None]
    M, P = A.shape
    U, s, _ = np.linalg.svd(A, full_matrices=False)
    rank = int(np.sum(s > RANK_RTOL * s[0])) if s.size and s[0] > 0 else 0
    Ur = U[:, :rank]
    Qa = hermitian_part(Ur @ Ur.conj().T)
    return ProjectionPair(Qa, np.eye(M) - Qa, rank, P)


def perturbation_term(pair: ProjectionPair, R) -> np.ndarray:
    """Estimated signal-noise cross term V = Qa R Qa_perp."""
    return pair.Qa @ _as_matrix(R) @ pair.Qa_perp


def perturbation_term_direct(A: np.ndarray, X) -> np.ndarray:
    """V = A {(1/N) sum_i s(i) n(i)^H} from LS amplitudes and residuals.

    Same quantity as :func:`perturbation_term` computed the long way; kept
    as a cross-check of the projector identity.
    """
    X = _data(X)
    S = ls_amplitudes(A, X)
    Nres = noise_residual(X, A, S)
    return A @ (S @ Nres.conj().T) / X.shape[1]


def modified_covariance(R, V: np.ndarray, mu: float) -> CovarianceEstimate:
    """R - mu (V + V^H). ``mu = 0`` returns R itself, bit for bit."""
    if not 0.0 <= mu <= 1.0:
        raise ValueError(f"mu must lie in [0, 1], got {mu}")
    R = _as_matrix(R)
    if mu == 0:
        return CovarianceEstimate(R.copy(), "modified", 0.0)
    return CovarianceEstimate(R - mu * (V + V.conj().T), "modified", float(mu))


def sml_objective(pair: ProjectionPair, R, M: int, P: int) -> float:
    """Stochastic ML cost ln det(Qa R Qa + tr(Qa_perp R)/(M-P) Qa_perp).

    Computed as the sum of log-eigenvalues of the Hermitian argument with
    eigenvalues floored at 1e-12 times the largest one. Returns ``inf`` when
    the argument has no positive eigenvalue.
    """
    if M <= P:
        raise ValueError("need M > P")
    R = _as_matrix(R)
    noise_level = np.real(np.trace(pair.Qa_perp @ R)) / (M - P)
    G = pair.Qa @ R @ pair.Qa + noise_level * pair.Qa_perp
    w = np.linalg.eigvalsh(hermitian_part(G))
    top = w[-1]
    if not (np.isfinite(top) and top > 0):
        return math.inf
    return float(np.sum(np.log(np.maximum(w, LOGDET_FLOOR * top))))


def mu_grid(increment: float) -> np.ndarray:
    """0, increment, 2*increment, ... up to 1; floor(1/increment) + 1 points."""
    if not 0 < increment <= 1:
        raise ValueError(f"increment must lie in (0, 1], got {increment}")
    tau = int(math.floor(1.0 / increment + 1e-9)) + 1
    return np.minimum(np.arange(tau) * increment, 1.0)


def associate_known(estimates: Sequence[float], known: Sequence[float]):
    """Greedily match each known DOA (in order) to its nearest unmatched estimate.

    Returns the indices of ``estimates`` left unmatched, in ascending order.
    Ties go to the lower index.
    """
    free = list(range(len(estimates)))
    for theta in known:
        j = min(free, key=lambda k: (abs(estimates[k] - theta), k))
        free.remove(j)
    return free


def _merge(known: Sequence[float], unknown: Sequence[float], flags=()) -> DoaEstimate:
    angles = list(known) + list(unknown)
    tags = ["known"] * len(known) + ["estimated"] * len(unknown)
    order = sorted(range(len(angles)), key=lambda k: (angles[k], tags[k] != "known"))
    return DoaEstimate([angles[k] for k in order], tuple(tags[k] for k in order), flags=flags)


def _sweep_point(mu, R, V, geom, P, known) -> MuSweepRecord:
    R2 = modified_covariance(R, V, mu)
    raw = esprit(R2, P, geom)
    est = raw.angles
    unknown = [est[k] for k in associate_known(est, known)]
    flags = set(raw.flags)
    pair = projections(_steering_matrix(geom, list(known) + unknown))
    if pair.rank_deficient:
        flags.add(RANK_WARNING)
    candidate = _merge(known, unknown, flags)
    degenerate = SINGULAR_LS in flags or RANK_WARNING in flags
    U = math.inf if degenerate else sml_objective(pair, R, geom.num_sensors, P)
    if not math.isfinite(U):
        degenerate, U = True, math.inf
    return MuSweepRecord(float(mu), U, candidate, raw, degenerate)


def select_mu(records: Sequence[MuSweepRecord]) -> Optional[int]:
    """Index of the non-degenerate record with minimal cost; smallest mu wins ties."""
    best = None
    for k, rec in enumerate(records):
        if rec.degenerate:
            continue
        if best is None or (rec.objective, rec.mu) < (records[best].objective, records[best].mu):
            best = k
    return best


def two_step_kai(X, geom: ArrayGeometry, P: int, known_doas: Sequence[float] = (),
                 increment: float = DEFAULT_INCREMENT) -> KaiResult:
    """Two-step knowledge-aided iterative ESPRIT.

    Parameters
    ----------
    X : SnapshotBatch or np.ndarray
        M x N snapshots.
    geom : ArrayGeometry
    P : int
        Number of sources (assumed known).
    known_doas : sequence of float
        The q < P directions (radians) known a priori. They are returned
        unchanged in the output and marked ``"known"``.
    increment : float
        Step of the mu sweep over [0, 1].

    Returns
    -------
    KaiResult
        Final estimate (``mu_opt`` set), the full sweep and the first-step
        ESPRIT estimate.
    """
    known = [float(t) for t in known_doas]
    if len(known) >= P:
        raise ValueError(f"need fewer known DOAs than sources, got q={len(known)}, P={P}")
    grid = mu_grid(increment)

    R = sample_covariance(X).matrix
    first = esprit(R, P, geom)
    pair1 = projections(_steering_matrix(geom, first.angles))
    V = perturbation_term(pair1, R)

    sweep = tuple(_sweep_point(mu, R, V, geom, P, known) for mu in grid)
    best = select_mu(sweep)
    extra = {RANK_WARNING} if pair1.rank_deficient else set()
    if best is None:
        best = 0
        extra.add(ALL_DEGENERATE)
    chosen = sweep[best]
    final = DoaEstimate(chosen.candidate.angles, chosen.candidate.attribution,
                        mu_opt=chosen.mu, flags=chosen.candidate.flags | extra)
    return KaiResult(final, sweep, first)


def iesprit(X, geom: ArrayGeometry, P: int,
            increment: float = DEFAULT_INCREMENT) -> KaiResult:
    """Iterative ESPRIT: the two-step refinement with no prior knowledge."""
    return two_step_kai(X, geom, P, (), increment)
