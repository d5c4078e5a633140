import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from motionalign.errors import ContractViolation, DegeneracyError
from motionalign.geometry import matrix_to_rot6d, random_rotations, rot6d_to_matrix


def test_identity():
    np.testing.assert_allclose(rot6d_to_matrix([1, 0, 0, 0, 1, 0]), np.eye(3), atol=1e-15)


def test_scale_and_shear_removed():
    np.testing.assert_allclose(rot6d_to_matrix([2, 0, 0, 3, 3, 0]), np.eye(3), atol=1e-15)


def test_hand_gram_schmidt():
    R = rot6d_to_matrix([1, 1, 0, 0, 1, 0])
    s = 1 / np.sqrt(2)
    np.testing.assert_allclose(R[:, 0], [s, s, 0], atol=1e-15)
    np.testing.assert_allclose(R[:, 1], [-s, s, 0], atol=1e-15)
    np.testing.assert_allclose(R[:, 2], [0, 0, 1], atol=1e-15)


def test_matrix_to_rot6d_reads_columns():
    np.testing.assert_array_equal(matrix_to_rot6d(np.eye(3)), [1, 0, 0, 0, 1, 0])
    rz = np.array([[0.0, -1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 1.0]])
    np.testing.assert_array_equal(matrix_to_rot6d(rz), [0, 1, 0, -1, 0, 0])


@pytest.mark.parametrize("v", [[0, 0, 0, 0, 1, 0], [1, 0, 0, 2, 0, 0], [1, 2, 3, -2, -4, -6]])
def test_degenerate_inputs(v):
    with pytest.raises(DegeneracyError):
        rot6d_to_matrix(v)


def test_non_orthonormal_rejected():
    with pytest.raises(ContractViolation):
        matrix_to_rot6d(np.diag([1.0, 2.0, 1.0]))
    with pytest.raises(ContractViolation):
        matrix_to_rot6d(np.diag([1.0, 1.0, -1.0]))


def test_round_trip_random_rotations():
    R = random_rotations(1000, rng=7)
    back = rot6d_to_matrix(matrix_to_rot6d(R))
    assert np.abs(back - R).max() < 1e-9


@settings(max_examples=200, deadline=None)
@given(arrays(np.float64, 6, elements=st.floats(-2, 2)))
def test_output_is_proper_rotation(v):
    a1, a2 = v[:3], v[3:]
    assume(np.linalg.norm(a1) > 1e-3)
    assume(np.linalg.norm(np.cross(a1, a2)) > 1e-3)
    R = rot6d_to_matrix(v)
    np.testing.assert_allclose(R.T @ R, np.eye(3), atol=1e-9)
    assert np.linalg.det(R) == pytest.approx(1.0, abs=1e-9)
