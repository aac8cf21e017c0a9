import numpy as np
import numpy.testing as npt
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from kaiesprit.array_model import (
    ArrayGeometry,
    DomainError,
    SourceScenario,
    array_manifold,
    complex_gaussian,
    noise_variance_from_snr,
    sample_covariance,
    steering_vector,
    synthesize_snapshots,
    true_covariance,
)

REF_DOAS = np.deg2rad([13.0, 15.0, 17.0, 19.0])


def ref_scenario(noise_variance=1.0, N=10):
    return SourceScenario(REF_DOAS, [1.0] * 4, noise_variance, N, (2, 3))


def test_steering_vector_broadside():
    npt.assert_allclose(steering_vector(ArrayGeometry(4), 0.0), np.ones(4))


def test_steering_vector_30_degrees():
    npt.assert_allclose(steering_vector(ArrayGeometry(2), np.deg2rad(30)), [1, 1j], atol=1e-15)


def test_steering_vector_minus_30_degrees():
    npt.assert_allclose(steering_vector(ArrayGeometry(3), np.deg2rad(-30)), [1, -1j, -1],
                        atol=1e-15)


@pytest.mark.parametrize("theta", [np.pi / 2, -np.pi / 2, 2.0, -3.0])
def test_steering_vector_rejects_out_of_domain(theta):
    with pytest.raises(DomainError):
        steering_vector(ArrayGeometry(4), theta)


@given(theta=st.floats(-1.5, 1.5), M=st.integers(2, 64),
       ratio=st.floats(0.05, 0.5))
def test_steering_vector_unit_modulus_and_conjugate_symmetry(theta, M, ratio):
    geom = ArrayGeometry(M, ratio)
    a = steering_vector(geom, theta)
    assert a[0] == 1
    npt.assert_allclose(np.abs(a), 1.0, rtol=0, atol=1e-12)
    npt.assert_allclose(steering_vector(geom, -theta), a.conj(), atol=1e-12)


def test_geometry_validation():
    with pytest.raises(ValueError):
        ArrayGeometry(1)
    with pytest.raises(ValueError):
        ArrayGeometry(4, spacing=0.6)
    assert ArrayGeometry(8, spacing=1.5, wavelength=3.0).spacing_ratio == 0.5


def test_scenario_validation():
    with pytest.raises(ValueError):
        SourceScenario([0.2, 0.1], [1, 1], 1.0, 10)
    with pytest.raises(ValueError):
        SourceScenario([0.1, 0.2], [1, 1], 1.0, 10, known_indices=(0, 1))
    with pytest.raises(DomainError):
        SourceScenario([0.1, 1.6], [1, 1], 1.0, 10)
    with pytest.raises(ValueError):
        ref_scenario().check_geometry(ArrayGeometry(4))


def test_manifold_single_angle_is_steering_vector():
    geom = ArrayGeometry(6)
    A = array_manifold(geom, [0.3])
    assert A.shape == (6, 1)
    npt.assert_array_equal(A[:, 0], steering_vector(geom, 0.3))


def test_manifold_ref_scenario_full_rank():
    A = array_manifold(ArrayGeometry(40), REF_DOAS)
    assert A.shape == (40, 4)
    assert np.linalg.matrix_rank(A) == 4


def test_manifold_duplicate_angles_rank_one():
    A = array_manifold(ArrayGeometry(10), [0.2, 0.2])
    assert np.linalg.matrix_rank(A) == 1


def test_noiseless_snapshots_lie_in_source_span():
    geom = ArrayGeometry(8)
    sc = SourceScenario([0.4], [1.0], 0.0, 50)
    X = synthesize_snapshots(sc, geom, seed=3).data
    a = steering_vector(geom, 0.4)[:, None]
    residual = X - a @ (np.linalg.pinv(a) @ X)
    assert np.linalg.norm(residual) < 1e-12 * np.linalg.norm(X)


def test_source_power_law_of_large_numbers():
    # recover s(i) exactly from noiseless snapshots and check E[s s^H]
    geom = ArrayGeometry(4)
    powers = [0.5, 1.0, 2.0]
    sc = SourceScenario([-0.5, 0.1, 0.7], powers, 0.0, 10 ** 6)
    X = synthesize_snapshots(sc, geom, seed=11).data
    S = np.linalg.lstsq(array_manifold(geom, sc.doas), X, rcond=None)[0]
    C = S @ S.conj().T / S.shape[1]
    npt.assert_allclose(np.diag(C).real, powers, rtol=0.01)
    off = C - np.diag(np.diag(C))
    assert np.max(np.abs(off)) < 0.01 * min(powers)


def test_complex_gaussian_has_equal_real_imag_split():
    z = complex_gaussian(np.random.default_rng(0), 200_000, 4.0)
    npt.assert_allclose([z.real.var(), z.imag.var()], [2.0, 2.0], rtol=0.02)


def test_same_seed_bit_identical():
    geom = ArrayGeometry(40)
    b1 = synthesize_snapshots(ref_scenario(), geom, 2 ** 63 + 5)
    b2 = synthesize_snapshots(ref_scenario(), geom, 2 ** 63 + 5)
    assert b1.data.tobytes() == b2.data.tobytes()
    assert b1.seed == 2 ** 63 + 5
    b3 = synthesize_snapshots(ref_scenario(), geom, 6)
    assert not np.array_equal(b1.data, b3.data)


def test_sample_covariance_single_snapshot():
    x = np.array([[1 + 2j], [3 - 1j], [0.5j]])
    R = sample_covariance(x)
    npt.assert_allclose(R.matrix, x @ x.conj().T)
    assert np.linalg.matrix_rank(R.matrix) == 1
    assert R.provenance == "sample"


def test_sample_covariance_noiseless_converges_to_rank_one_truth():
    geom = ArrayGeometry(8)
    sc = SourceScenario([0.25], [1.0], 0.0, 100_000)
    R = sample_covariance(synthesize_snapshots(sc, geom, 1)).matrix
    truth = true_covariance(sc, geom).matrix
    a = steering_vector(geom, 0.25)
    npt.assert_allclose(truth, np.outer(a, a.conj()), atol=1e-12)
    assert np.linalg.norm(R - truth) < 0.02 * np.linalg.norm(truth)


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 2 ** 32), N=st.integers(1, 30))
def test_sample_covariance_hermitian_psd(seed, N):
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((6, N)) + 1j * rng.standard_normal((6, N))
    R = sample_covariance(X).matrix
    npt.assert_array_equal(R, R.conj().T)
    assert np.trace(R).real >= 0
    assert np.linalg.eigvalsh(R).min() > -1e-12 * np.linalg.eigvalsh(R).max()


def test_sample_covariance_converges_for_ref_scenario():
    geom = ArrayGeometry(40)
    sc = ref_scenario(noise_variance=1.0, N=100_000)
    R_hat = sample_covariance(synthesize_snapshots(sc, geom, 7)).matrix
    R = true_covariance(sc, geom).matrix
    assert np.linalg.norm(R_hat - R) < 0.02 * np.linalg.norm(R)


def test_true_covariance_rank_one_spectrum():
    M, p, s2 = 7, 2.5, 0.3
    geom = ArrayGeometry(M)
    R = true_covariance(SourceScenario([0.2], [p], s2, 1), geom).matrix
    w = np.sort(np.linalg.eigvalsh(R))[::-1]
    npt.assert_allclose(w, [M * p + s2] + [s2] * (M - 1), rtol=1e-12)


def test_true_covariance_noiseless_rank_and_zero_power():
    geom = ArrayGeometry(40)
    assert np.linalg.matrix_rank(true_covariance(ref_scenario(0.0), geom).matrix) == 4
    zero = SourceScenario(REF_DOAS, [0.0] * 4, 0.7, 10)
    npt.assert_array_equal(true_covariance(zero, geom).matrix, 0.7 * np.eye(40))


def test_snr_convention():
    assert noise_variance_from_snr(0.0) == 1.0
    npt.assert_allclose(noise_variance_from_snr(20.0), 0.01)
