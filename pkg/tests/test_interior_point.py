from __future__ import annotations

import numpy as np
import pytest

from irs_seguro.interior_point import (
    INFEASIBLE,
    OPTIMAL,
    ConeDims,
    smat,
    solve_conelp,
    svec,
)


def test_svec_preserves_trace_inner_product() -> None:
    rng = np.random.default_rng(0)
    a = rng.standard_normal((4, 4))
    b = rng.standard_normal((4, 4))
    a, b = a + a.T, b + b.T

    assert svec(a) @ svec(b) == pytest.approx(np.trace(a @ b))
    np.testing.assert_allclose(smat(svec(a), 4), a)


def test_cone_dims_counts_rows_and_degree() -> None:
    dims = ConeDims(lp=3, psd=(2, 4))

    assert dims.rows == 3 + 3 + 10
    assert dims.degree == 9


def test_solves_small_lp() -> None:
    # max x1 + x2 com x1 + 2 x2 <= 4, x1 <= 2, x >= 0
    c = np.array([-1.0, -1.0])
    g = np.array([[1.0, 2.0], [1.0, 0.0], [-1.0, 0.0], [0.0, -1.0]])
    h = np.array([4.0, 2.0, 0.0, 0.0])

    result = solve_conelp(c, g, h, np.zeros((0, 2)), np.zeros(0), ConeDims(lp=4, psd=()))

    assert result.status == OPTIMAL
    np.testing.assert_allclose(result.x, [2.0, 1.0], atol=1e-6)
    assert result.pcost == pytest.approx(-3.0, abs=1e-6)


def test_solves_small_sdp_with_equality() -> None:
    # min <C, X> com Tr X = 1, X >= 0: menor autovalor de C
    cmat = np.array([[2.0, 1.0], [1.0, 2.0]])
    c = svec(cmat)
    g = -np.eye(3)
    h = np.zeros(3)
    a = svec(np.eye(2)).reshape(1, 3)
    b = np.array([1.0])

    result = solve_conelp(c, g, h, a, b, ConeDims(lp=0, psd=(2,)))

    assert result.status == OPTIMAL
    assert result.pcost == pytest.approx(1.0, abs=1e-6)


def test_detects_infeasible_lp() -> None:
    # x <= -1 e x >= 0
    result = solve_conelp(
        np.array([1.0]),
        np.array([[1.0], [-1.0]]),
        np.array([-1.0, 0.0]),
        np.zeros((0, 1)),
        np.zeros(0),
        ConeDims(lp=2, psd=()),
    )

    assert result.status == INFEASIBLE


def test_rejects_mismatched_shapes() -> None:
    with pytest.raises(ValueError):
        solve_conelp(
            np.zeros(2),
            np.zeros((3, 2)),
            np.zeros(3),
            np.zeros((0, 2)),
            np.zeros(0),
            ConeDims(lp=2, psd=()),
        )
