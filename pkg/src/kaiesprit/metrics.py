"""Error pairing, RMSE, probability of resolution and the deterministic CRB."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

import numpy as np

from .array_model import ArrayGeometry, SourceScenario, array_manifold, noise_variance_from_snr
from .esprit import DoaEstimate


@dataclass(frozen=True)
class TrialOutcome:
    """Result of one estimator on one trial: matched errors in degrees."""

    errors: np.ndarray
    resolved: bool
    mu_opt: Optional[float] = None
    flags: frozenset = field(default_factory=frozenset)


def match_errors(truth: Sequence[float], estimate, known_indices: Sequence[int] = (),
                 sources: str = "unknown") -> np.ndarray:
    """Pair estimates with true DOAs and return truth - estimate in degrees.

    Both sides are sorted and paired by position. When ``estimate`` marks
    some angles as ``"known"``, only its estimated angles are paired with
    the unknown truths; otherwise all P angles are paired with all P truths
    and the known positions are dropped afterwards. ``sources="all"`` keeps
    every source.

    Parameters
    ----------
    truth : sequence of float
        True DOAs in radians.
    estimate : DoaEstimate or sequence of float
        Estimated DOAs in radians.
    known_indices : sequence of int
        Positions (in sorted ``truth``) of the a-priori known DOAs.
    """
    truth = np.sort(np.asarray(truth, dtype=float))
    P = truth.size
    if isinstance(estimate, DoaEstimate):
        angles, tags = estimate.angles, estimate.attribution
    else:
        angles = np.asarray(estimate, dtype=float)
        tags = ("estimated",) * angles.size
    order = np.argsort(angles, kind="stable")
    angles = angles[order]
    tags = [tags[k] for k in order]
    if angles.size != P:
        raise ValueError(f"estimate has {angles.size} angles, expected {P}")

    if sources == "all":
        return np.rad2deg(truth - angles)
    if sources != "unknown":
        raise ValueError(f"sources must be 'unknown' or 'all', got {sources!r}")

    unknown = [k for k in range(P) if k not in set(known_indices)]
    if "known" in tags:
        est = np.array([a for a, t in zip(angles, tags) if t != "known"])
        if est.size != len(unknown):
            raise ValueError("number of estimated angles does not match unknown sources")
        return np.rad2deg(truth[unknown] - est)
    return np.rad2deg(truth[unknown] - angles[unknown])


def _flatten(errors) -> np.ndarray:
    parts = [np.ravel(np.asarray(e, dtype=float)) for e in errors]
    return np.concatenate(parts) if parts else np.empty(0)


def rmse(errors: Iterable) -> float:
    """Root of the mean squared error over all trials and sources (degrees in, degrees out).

    ``errors`` is an iterable of per-trial error arrays, or a flat array.
    """
    flat = _flatten(errors)
    if flat.size == 0:
        raise ValueError("no errors to aggregate")
    return float(np.sqrt(np.mean(flat ** 2)))


def rmse_standard_error(errors: Iterable) -> float:
    """Delta-method standard error of :func:`rmse` from the spread of squared errors."""
    sq = _flatten(errors) ** 2
    r = np.sqrt(sq.mean())
    if r == 0 or sq.size < 2:
        return 0.0
    return float(sq.std(ddof=1) / np.sqrt(sq.size) / (2 * r))


def min_separation(truth: Sequence[float]) -> float:
    t = np.sort(np.asarray(truth, dtype=float))
    if t.size < 2:
        raise ValueError("resolution needs at least two sources")
    return float(np.min(np.diff(t)))


def resolved(truth: Sequence[float], errors: Sequence[float]) -> bool:
    """True when every error magnitude is below half the smallest true separation.

    ``truth`` and ``errors`` must share a unit. Non-finite errors count as
    unresolved.
    """
    half = min_separation(truth) / 2
    e = np.abs(np.asarray(errors, dtype=float))
    return bool(np.all(np.isfinite(e)) and np.all(e < half))


def steering_derivatives(geom: ArrayGeometry, thetas: Sequence[float]) -> np.ndarray:
    """d a(theta) / d theta for each angle, stacked as columns."""
    thetas = np.asarray(thetas, dtype=float)
    A = array_manifold(geom, thetas)
    m = np.arange(geom.num_sensors)[:, None]
    return 1j * 2 * np.pi * geom.spacing_ratio * m * np.cos(thetas)[None, :] * A


def crb_matrix(scenario: SourceScenario, geom: ArrayGeometry,
               noise_variance: Optional[float] = None) -> np.ndarray:
    """Deterministic CRB on the DOAs (radians^2).

    CRB = sigma^2 / (2N) * Re[(D^H Pi_perp D) .* Ps^T]^{-1} with Ps the
    source covariance, here diag(source_powers).
    """
    sigma2 = scenario.noise_variance if noise_variance is None else noise_variance
    thetas = np.asarray(scenario.doas)
    A = array_manifold(geom, thetas)
    D = steering_derivatives(geom, thetas)
    Pi_perp = np.eye(geom.num_sensors) - A @ np.linalg.solve(A.conj().T @ A, A.conj().T)
    Ps = np.diag(scenario.source_powers)
    H = np.real((D.conj().T @ Pi_perp @ D) * Ps.T)
    if np.linalg.cond(H) > 1e14:
        raise np.linalg.LinAlgError("singular Fisher information (coinciding sources?)")
    return sigma2 / (2 * scenario.num_snapshots) * np.linalg.inv(H)


def crb_sqrt(scenario: SourceScenario, geom: ArrayGeometry, snr_db: Optional[float] = None,
             sources: str = "unknown") -> float:
    """Square root of the CRB averaged over the unknown (or all) sources, in degrees.

    If ``snr_db`` is given the noise variance follows from the unit-power
    SNR convention; otherwise the scenario's noise variance is used.
    """
    sigma2 = None if snr_db is None else noise_variance_from_snr(snr_db)
    diag = np.diag(crb_matrix(scenario, geom, sigma2))
    idx = list(scenario.unknown_indices) if sources == "unknown" else list(range(diag.size))
    return float(np.rad2deg(np.sqrt(np.mean(diag[idx]))))
