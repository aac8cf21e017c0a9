"""
Standard ESPRIT for uniform linear arrays
=========================================

EVD of a covariance estimate, maximum-overlap subarray selection
(s = M - 1), least-squares solve of the shift-invariance equation

    J1 Us Psi ~= J2 Us

and conversion of the eigenvalue phases of Psi into angles.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .array_model import ArrayGeometry, _as_matrix, hermitian_part

CLAMPED_ARCSIN = "clamped_arcsin"
SINGULAR_LS = "singular_ls"
RANK_WARNING = "rank_warning"
ALL_DEGENERATE = "all_degenerate"

PINV_RTOL = 1e-12
SINGULAR_COND = 1e12


@dataclass(frozen=True)
class SubspaceDecomposition:
    """Signal/noise split of a Hermitian EVD, eigenvalues in descending order."""

    Us: np.ndarray
    Un: np.ndarray
    eig_signal: np.ndarray
    eig_noise: np.ndarray

    @property
    def eigenvectors(self) -> np.ndarray:
        return np.hstack([self.Us, self.Un])

    @property
    def eigenvalues(self) -> np.ndarray:
        return np.concatenate([self.eig_signal, self.eig_noise])


@dataclass(frozen=True)
class SelectionPair:
    """Maximum-overlap selection matrices: J1 keeps rows 0..M-2, J2 rows 1..M-1."""

    J1: np.ndarray
    J2: np.ndarray

    @classmethod
    def maximum_overlap(cls, num_sensors: int) -> "SelectionPair":
        M = num_sensors
        return cls(np.eye(M - 1, M), np.eye(M - 1, M, k=1))


@dataclass(frozen=True)
class DoaEstimate:
    """Output of a DOA estimator.

    ``angles`` are radians, sorted ascending; ``attribution[k]`` is ``"known"``
    for directions passed through from prior knowledge and ``"estimated"``
    otherwise.
    """

    angles: np.ndarray
    attribution: tuple = ()
    mu_opt: Optional[float] = None
    flags: frozenset = field(default_factory=frozenset)

    def __post_init__(self):
        angles = np.asarray(self.angles, dtype=float)
        attribution = tuple(self.attribution) or ("estimated",) * angles.size
        if len(attribution) != angles.size:
            raise ValueError("one attribution entry per angle is required")
        if np.any(np.diff(angles) < 0):
            raise ValueError("angles must be sorted ascending")
        angles.setflags(write=False)
        object.__setattr__(self, "angles", angles)
        object.__setattr__(self, "attribution", attribution)
        object.__setattr__(self, "flags", frozenset(self.flags))

    @property
    def degrees(self) -> np.ndarray:
        return np.rad2deg(self.angles)

    @property
    def estimated_angles(self) -> np.ndarray:
        mask = np.array([a == "estimated" for a in self.attribution], dtype=bool)
        return self.angles[mask]


def decompose(R, P: int) -> SubspaceDecomposition:
    """Hermitian EVD of ``R`` split into the P-dimensional signal subspace and its complement.

    Eigenvalues are sorted descending; ties keep the ascending original index
    from ``numpy.linalg.eigh`` so the split is deterministic.
    """
    R = _as_matrix(R)
    M = R.shape[0]
    if not 1 <= P < M:
        raise ValueError(f"need 1 <= P < M, got P={P}, M={M}")
    w, U = np.linalg.eigh(hermitian_part(R))
    order = np.argsort(-w, kind="stable")
    w, U = w[order], U[:, order]
    return SubspaceDecomposition(U[:, :P], U[:, P:], w[:P], w[P:])


def _pinv_with_cond(A: np.ndarray, rtol: float = PINV_RTOL):
    U, s, Vh = np.linalg.svd(A, full_matrices=False)
    if s.size == 0 or s[0] == 0:
        return np.zeros(A.shape[::-1], dtype=A.dtype), np.inf
    keep = s > rtol * s[0]
    inv_s = np.zeros_like(s)
    inv_s[keep] = 1.0 / s[keep]
    cond = s[0] / s[-1] if s[-1] > 0 else np.inf
    return (Vh.conj().T * inv_s) @ U.conj().T, cond


def shift_invariance_solve(Us: np.ndarray, pair: Optional[SelectionPair] = None):
    """Least-squares solution Psi = (J1 Us)^+ J2 Us.

    Returns
    -------
    psi : np.ndarray
        P x P operator.
    singular : bool
        True when cond(J1 Us) exceeds 1e12; the pseudo-inverse then
        truncates singular values below 1e-12 of the largest.
    """
    if pair is None:
        pair = SelectionPair.maximum_overlap(Us.shape[0])
    U1 = pair.J1 @ Us
    U2 = pair.J2 @ Us
    pinv, cond = _pinv_with_cond(U1)
    return pinv @ U2, bool(cond > SINGULAR_COND)


def angles_from_operator(psi: np.ndarray, geom: ArrayGeometry) -> DoaEstimate:
    """Map the eigenvalues of Psi to sorted angles via arcsin(arg(lambda) / (2 pi d/lambda_c)).

    Arguments outside [-1, 1] are clamped and the ``clamped_arcsin`` flag set.
    """
    psi = np.atleast_2d(psi)
    if psi.shape[0] != psi.shape[1]:
        raise ValueError("Psi must be square")
    gamma = np.angle(np.linalg.eigvals(psi))
    arg = gamma / (2 * np.pi * geom.spacing_ratio)
    flags = set()
    if np.any(np.abs(arg) > 1):
        flags.add(CLAMPED_ARCSIN)
        arg = np.clip(arg, -1.0, 1.0)
    return DoaEstimate(np.sort(np.arcsin(arg)), flags=flags)


def esprit(R, P: int, geom: ArrayGeometry) -> DoaEstimate:
    """LS-ESPRIT with maximum-overlap subarrays on covariance ``R``."""
    R = _as_matrix(R)
    if R.shape[0] != geom.num_sensors:
        raise ValueError("covariance size does not match the array")
    sub = decompose(R, P)
    psi, singular = shift_invariance_solve(sub.Us)
    est = angles_from_operator(psi, geom)
    if singular:
        return DoaEstimate(est.angles, flags=est.flags | {SINGULAR_LS})
    return est

