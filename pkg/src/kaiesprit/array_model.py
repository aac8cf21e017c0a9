"""
Uniform linear array model
==========================

Steering vectors, snapshot synthesis and covariance estimates for far-field
narrowband sources impinging on a ULA. The received snapshot model is

    x(i) = A(theta) s(i) + n(i),    i = 1, ..., N

with uncorrelated circular complex Gaussian sources and white noise.
Angles are radians everywhere in this module.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np


class DomainError(ValueError):
    """An angle or parameter falls outside the physical domain of the model."""


@dataclass(frozen=True)
class ArrayGeometry:
    """Uniform linear array geometry.

    Parameters
    ----------
    num_sensors : int
        Number of array elements M (at least 2).
    spacing : float
        Inter-element distance d, in the same length unit as ``wavelength``.
    wavelength : float
        Carrier wavelength. Only the ratio ``spacing / wavelength`` matters.
    """

    num_sensors: int
    spacing: float = 0.5
    wavelength: float = 1.0

    def __post_init__(self):
        if int(self.num_sensors) != self.num_sensors or self.num_sensors < 2:
            raise ValueError(f"num_sensors must be an integer >= 2, got {self.num_sensors}")
        if not self.wavelength > 0:
            raise ValueError("wavelength must be positive")
        # small slack so d = lambda/2 computed in floating point is accepted
        if not 0 < self.spacing <= self.wavelength / 2 * (1 + 1e-12):
            raise ValueError(
                f"spacing must satisfy 0 < d <= wavelength/2, got d={self.spacing}, "
                f"wavelength={self.wavelength}")

    @property
    def spacing_ratio(self) -> float:
        """Element spacing in carrier wavelengths, d / lambda_c."""
        return self.spacing / self.wavelength

    def spatial_frequency(self, theta):
        """Phase increment between adjacent sensors, 2*pi*(d/lambda_c)*sin(theta)."""
        return 2 * np.pi * self.spacing_ratio * np.sin(theta)


@dataclass(frozen=True)
class SourceScenario:
    """Sources, noise level and snapshot budget of one experiment.

    ``known_indices`` are 0-based positions into ``doas`` of the directions
    that are available as prior knowledge.
    """

    doas: tuple
    source_powers: tuple
    noise_variance: float
    num_snapshots: int
    known_indices: tuple = ()

    def __post_init__(self):
        doas = tuple(float(t) for t in np.atleast_1d(self.doas))
        powers = tuple(float(p) for p in np.atleast_1d(self.source_powers))
        known = tuple(sorted(int(k) for k in self.known_indices))
        object.__setattr__(self, "doas", doas)
        object.__setattr__(self, "source_powers", powers)
        object.__setattr__(self, "known_indices", known)

        if len(doas) == 0:
            raise ValueError("at least one source is required")
        if len(powers) != len(doas):
            raise ValueError("source_powers must have one entry per DOA")
        if any(not -np.pi / 2 < t < np.pi / 2 for t in doas):
            raise DomainError("DOAs must lie in (-pi/2, pi/2)")
        if any(b <= a for a, b in zip(doas, doas[1:])):
            raise ValueError("DOAs must be strictly increasing")
        if any(p < 0 for p in powers):
            raise ValueError("source powers must be non-negative")
        if self.noise_variance < 0:
            raise ValueError("noise_variance must be non-negative")
        if int(self.num_snapshots) != self.num_snapshots or self.num_snapshots < 1:
            raise ValueError("num_snapshots must be a positive integer")
        if len(set(known)) != len(known) or any(not 0 <= k < len(doas) for k in known):
            raise ValueError("known_indices must be distinct indices into doas")
        if len(known) >= len(doas):
            raise ValueError("at least one DOA must be unknown")

    @property
    def num_sources(self) -> int:
        return len(self.doas)

    @property
    def known_doas(self) -> tuple:
        return tuple(self.doas[k] for k in self.known_indices)

    @property
    def unknown_indices(self) -> tuple:
        return tuple(k for k in range(self.num_sources) if k not in self.known_indices)

    def check_geometry(self, geom: ArrayGeometry):
        if self.num_sources >= geom.num_sensors:
            raise ValueError(
                f"need fewer sources ({self.num_sources}) than sensors ({geom.num_sensors})")

    def with_noise_variance(self, noise_variance: float) -> "SourceScenario":
        return SourceScenario(self.doas, self.source_powers, noise_variance,
                              self.num_snapshots, self.known_indices)


@dataclass(frozen=True)
class SnapshotBatch:
    """M x N matrix of array snapshots plus the seed that generated it."""

    data: np.ndarray
    seed: Optional[int] = None
    scenario: Optional[SourceScenario] = field(default=None, compare=False)

    @property
    def num_sensors(self) -> int:
        return self.data.shape[0]

    @property
    def num_snapshots(self) -> int:
        return self.data.shape[1]


@dataclass(frozen=True)
class CovarianceEstimate:
    """Hermitian covariance matrix with a provenance tag.

    ``provenance`` is ``"sample"``, ``"true"`` or ``"modified"``; ``mu`` is set
    for modified estimates only.
    """

    matrix: np.ndarray
    provenance: str = "sample"
    mu: Optional[float] = None

    @property
    def size(self) -> int:
        return self.matrix.shape[0]


def hermitian_part(R: np.ndarray) -> np.ndarray:
    """Return (R + R^H) / 2, which is exactly Hermitian in floating point."""
    return 0.5 * (R + R.conj().T)


def _as_matrix(R) -> np.ndarray:
    return R.matrix if isinstance(R, CovarianceEstimate) else np.asarray(R)


def steering_vector(geom: ArrayGeometry, theta: float) -> np.ndarray:
    """Array response to a unit plane wave from direction ``theta``.

    Element m (0-based) is exp(j*2*pi*m*(d/lambda_c)*sin(theta)), so the
    first element is always 1.

    Raises
    ------
    DomainError
        If ``theta`` is not inside (-pi/2, pi/2).
    """
    theta = float(theta)
    if not -np.pi / 2 < theta < np.pi / 2:
        raise DomainError(f"angle {theta} rad outside (-pi/2, pi/2)")
    m = np.arange(geom.num_sensors)
    return np.exp(1j * m * geom.spatial_frequency(theta))


def array_manifold(geom: ArrayGeometry, thetas: Sequence[float]) -> np.ndarray:
    """Stack steering vectors column-wise into the M x P Vandermonde matrix.

    Duplicate angles are allowed; the result is then column-rank deficient
    and downstream least-squares steps flag it.
    """
    thetas = np.atleast_1d(np.asarray(thetas, dtype=float))
    if thetas.size == 0:
        raise ValueError("need at least one angle")
    return np.column_stack([steering_vector(geom, t) for t in thetas])


def _steering_matrix(geom: ArrayGeometry, thetas) -> np.ndarray:
    # no domain check: estimators may return clamped angles of exactly +-pi/2
    m = np.arange(geom.num_sensors)[:, None]
    thetas = np.atleast_1d(np.asarray(thetas, dtype=float))
    return np.exp(1j * m * geom.spatial_frequency(thetas)[None, :])


def has_duplicates(thetas, atol: float = 0.0) -> bool:
    t = np.sort(np.asarray(thetas, dtype=float))
    return bool(np.any(np.diff(t) <= atol))


def complex_gaussian(rng: np.random.Generator, shape, variance=1.0) -> np.ndarray:
    """Circular complex Gaussian draws; real and imaginary parts are N(0, var/2).

    ``variance`` may be a scalar or broadcast against ``shape`` (e.g. one
    variance per row).
    """
    scale = np.sqrt(np.asarray(variance, dtype=float) / 2)
    re = rng.standard_normal(shape)
    im = rng.standard_normal(shape)
    return scale * (re + 1j * im)


def synthesize_snapshots(scenario: SourceScenario, geom: ArrayGeometry,
                         seed: int) -> SnapshotBatch:
    """Draw N snapshots x(i) = A s(i) + n(i) with a PCG64 generator seeded by ``seed``.

    Source amplitudes are drawn before noise so that a batch with zero noise
    variance shares its signal part with the noisy batch of the same seed.
    """
    scenario.check_geometry(geom)
    rng = np.random.Generator(np.random.PCG64(seed))
    P, N = scenario.num_sources, scenario.num_snapshots
    A = array_manifold(geom, scenario.doas)
    powers = np.asarray(scenario.source_powers)[:, None]
    S = complex_gaussian(rng, (P, N), powers)
    noise = complex_gaussian(rng, (geom.num_sensors, N), scenario.noise_variance)
    return SnapshotBatch(A @ S + noise, seed=seed, scenario=scenario)


def sample_covariance(batch) -> CovarianceEstimate:
    """(1/N) * sum_i x(i) x(i)^H, symmetrized to be exactly Hermitian.

    Accepts a :class:`SnapshotBatch` or a raw M x N array.
    """
    X = batch.data if isinstance(batch, SnapshotBatch) else np.asarray(batch)
    if X.ndim != 2 or X.shape[1] < 1:
        raise ValueError("expected an M x N snapshot matrix with N >= 1")
    R = X @ X.conj().T / X.shape[1]
    return CovarianceEstimate(hermitian_part(R), "sample")


def true_covariance(scenario: SourceScenario, geom: ArrayGeometry) -> CovarianceEstimate:
    """Model covariance A Rss A^H + sigma_n^2 I for uncorrelated sources."""
    scenario.check_geometry(geom)
    A = array_manifold(geom, scenario.doas)
    Rss = np.diag(scenario.source_powers)
    R = A @ Rss @ A.conj().T + scenario.noise_variance * np.eye(geom.num_sensors)
    return CovarianceEstimate(hermitian_part(R), "true")


def noise_variance_from_snr(snr_db: float, source_power: float = 1.0) -> float:
    """Per-source SNR convention: SNR = source_power / sigma_n^2."""
    return source_power * 10.0 ** (-snr_db / 10.0)
