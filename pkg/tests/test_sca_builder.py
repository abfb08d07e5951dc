from __future__ import annotations

from dataclasses import replace
import math

import numpy as np
import pytest

from irs_seguro.beamforming import surface_vector
from irs_seguro.conic import AffineExpr, solve
from irs_seguro.interior_point import OPTIMAL
from irs_seguro.optimizer import initialize
from irs_seguro.perf_metrics import ball_samples
from irs_seguro.sca_builder import (
    BuilderError,
    ProblemOptions,
    build_f_matrices,
    build_subproblem,
    continuous_selectors,
    eve_radius,
    extract_state,
    lift_surface,
    merit,
    problem_census,
    project_psd,
    rank_gap,
    rate_terms,
    robust_min_power,
    robust_outer_bounds,
    selectors_for_modes,
    state_from_design,
    user_radius,
)
from irs_seguro.sysconfig import SystemConfig, make_instance


def _design_state(config: SystemConfig, seed: int = 0):
    instance = make_instance(config, seed)
    estimate = instance.estimate
    m_t, k_users, n = config.m_t, config.k_users, config.n_irs
    share = 0.4 * config.p_max_w / k_users
    w_mat = np.stack([share * np.eye(m_t, dtype=complex) / m_t for _ in range(k_users)])
    z_mat = 0.2 * config.p_max_w * np.eye(m_t, dtype=complex) / m_t
    mode = np.array([1] + [0] * (n - 1))
    theta = np.zeros(n, dtype=int)
    s = selectors_for_modes(mode, theta, config.phase_levels)
    v = surface_vector(mode, theta, config.phase_levels)
    return estimate, state_from_design(w_mat, z_mat, v, s, estimate, config)


def _tags(problem) -> tuple[set[str], set[str], set[str]]:
    return (
        {tag for tag, _ in problem.equalities},
        {tag for tag, _ in problem.inequalities},
        set(problem.tag_map()),
    )


def test_robust_outer_bounds_sandwich_samples() -> None:
    rng = np.random.default_rng(3)
    center = rng.standard_normal(3) + 1j * rng.standard_normal(3)
    radius = 0.4 * float(np.linalg.norm(center))
    lower, upper = robust_outer_bounds(center, radius)

    for _ in range(300):
        error = rng.standard_normal(3) + 1j * rng.standard_normal(3)
        error *= radius * rng.uniform() / np.linalg.norm(error)
        outer = np.outer(center + error, (center + error).conj())
        assert np.linalg.eigvalsh(upper - outer)[0] >= -1e-9
        assert np.linalg.eigvalsh(outer - lower)[0] >= -1e-9


def test_robust_outer_bounds_edges() -> None:
    center = np.array([1.0, 1j])

    lower, upper = robust_outer_bounds(center, 0.0)
    np.testing.assert_allclose(lower, np.outer(center, center.conj()))
    np.testing.assert_allclose(upper, lower)

    lower, upper = robust_outer_bounds(np.zeros(2), 0.5)
    np.testing.assert_allclose(lower, 0.0)
    np.testing.assert_allclose(upper, 0.25 * np.eye(2))

    lower, _ = robust_outer_bounds(center, 3.0)
    np.testing.assert_allclose(lower, 0.0)


def test_lift_surface_is_rank_one_with_unit_corner() -> None:
    v = np.array([1j, -1.0, 1.0])
    y = lift_surface(v)

    assert y.shape == (4, 4)
    assert y[-1, -1] == 1.0
    assert rank_gap(y) == pytest.approx(0.0, abs=1e-12)


def test_selectors_for_modes_layout() -> None:
    s = selectors_for_modes(np.array([1, 0, 1]), np.array([2, 0, 7]), 8)

    assert s.shape == (9, 3)
    assert (s[3, 0], s[0, 1], s[8, 2]) == (1.0, 1.0, 1.0)
    np.testing.assert_array_equal(s.sum(axis=0), [1.0, 1.0, 1.0])


def test_continuous_selectors_recover_quantized_phases() -> None:
    levels = 8
    theta = np.array([1, 5, 0])
    v = surface_vector(np.ones(3, dtype=int), theta, levels)

    s = continuous_selectors(lift_surface(v), levels)

    np.testing.assert_array_equal(s, selectors_for_modes(np.ones(3, dtype=int), theta, levels))


def test_robust_min_power() -> None:
    row = np.array([3.0, 4.0])

    assert robust_min_power(row, np.eye(2), 1.0) == pytest.approx(16.0)
    assert robust_min_power(row, np.eye(2), 6.0) == 0.0


def test_f_matrices_reproduce_effective_channel(tiny_config: SystemConfig) -> None:
    estimate = make_instance(tiny_config, seed=2).estimate
    v = surface_vector(np.array([1, 1]), np.array([3, 6]), tiny_config.phase_levels)
    f_users, f_eves = build_f_matrices(estimate)
    alpha = v[:-1].conj()

    assert f_users[0].shape == (tiny_config.m_t, tiny_config.n_irs + 1)
    assert len(f_eves) == tiny_config.j_eves
    row = estimate.hhat_d[0].conj() + alpha @ estimate.ghat_cu[0]
    np.testing.assert_allclose((f_users[0] @ v).conj(), row, rtol=1e-9, atol=1e-9 * np.abs(row).max())


def test_state_from_design_bounds(tiny_config: SystemConfig) -> None:
    _, state = _design_state(tiny_config)

    assert state.w_mat.shape == (1, 2, 2)
    assert state.y_mat.shape == (4, 4)
    assert np.all(state.xi >= 0.0) and np.all(state.iota >= 0.0)
    gap = state.psi_c10[0] - state.psi_c9[0]
    assert np.linalg.eigvalsh(gap)[0] >= -1e-9 * np.abs(gap).max()
    # um elemento colhe: ao menos o ruido da IRS entra em beta
    assert state.beta_pr >= tiny_config.sigma_irs2
    state.validate()


def test_state_validate_rejects_bad_selectors(tiny_config: SystemConfig) -> None:
    _, state = _design_state(tiny_config)

    with pytest.raises(BuilderError):
        replace(state, s=state.s * 2.0).validate()
    with pytest.raises(BuilderError):
        replace(state, xi=np.array([np.nan])).validate()


def test_problem_options_from_config() -> None:
    options = ProblemOptions.from_config(replace(SystemConfig(), ignore_c3=True), secrecy=False)

    assert options.phase_levels == 8
    assert options.energy is False
    assert options.secrecy is False
    assert options.p_irs_w == pytest.approx(1.5e-3)


def test_build_subproblem_emits_every_constraint_family(tiny_config: SystemConfig) -> None:
    estimate, state = _design_state(tiny_config)

    problem, handles = build_subproblem(state, estimate, tiny_config)
    equalities, inequalities, lmis = _tags(problem)

    assert {"ancora:Y", "ancora:V", "C4b:re:0", "Vdiag:1"} <= equalities
    assert {"C1", "C4a:0", "C4d:0,0", "C11b", "C9:0", "C10:0", "C5a:0,0", "C3a", "C3b"} <= inequalities
    assert {"C6", "C7:0", "C11a", "C12:0", "C13:0", "C5b:0", "C5c:0", "obj:log:0", "C3:exp", "C3fa:0"} <= lmis
    assert handles.tags == problem.tag_map()
    assert handles.beta_mw is not None
    assert len(handles.s) == tiny_config.phase_levels + 1

    census = problem_census(problem)
    assert census["variables"] == problem.n_vars
    assert census["lmis"] == len(problem.lmis)
    assert census["largest_lmi"] >= 2 * (tiny_config.m_t + tiny_config.n_irs + 1)


def test_build_subproblem_variants(tiny_config: SystemConfig) -> None:
    estimate, state = _design_state(tiny_config)

    no_secrecy = ProblemOptions.from_config(tiny_config, secrecy=False, energy=False)
    problem, handles = build_subproblem(state, estimate, tiny_config, no_secrecy)
    _, inequalities, lmis = _tags(problem)
    assert "C5b:0" not in lmis and "C3:exp" not in lmis
    assert "C3a" not in inequalities
    assert handles.beta_mw is None

    directions = np.array([[1.0, 0.0]], dtype=complex)
    fixed = ProblemOptions.from_config(tiny_config, fixed_directions=directions)
    problem, _ = build_subproblem(state, estimate, tiny_config, fixed)
    _, inequalities, lmis = _tags(problem)
    assert "C7:0" in inequalities and "C7:0" not in lmis

    frozen = ProblemOptions.from_config(tiny_config, fixed_beamformers=(state.w_mat, state.z_mat))
    problem, handles = build_subproblem(state, estimate, tiny_config, frozen)
    _, inequalities, lmis = _tags(problem)
    assert "C1" not in inequalities and "C6" not in lmis
    assert not handles.w[0].terms


def test_build_subproblem_continuous_phases(tiny_config: SystemConfig) -> None:
    estimate, state = _design_state(tiny_config)
    continuous = ProblemOptions.from_config(
        tiny_config, phase_levels=8, continuous_phases=True, energy=False, p_irs_w=0.0
    )

    problem, handles = build_subproblem(state, estimate, tiny_config, continuous)
    equalities, _, _ = _tags(problem)

    assert {"C4c:0", "C4c:1"} <= equalities
    assert handles.s == []
    with pytest.raises(BuilderError):
        build_subproblem(
            state, estimate, tiny_config, replace(continuous, energy=True)
        )


def test_build_subproblem_checks_shapes(tiny_config: SystemConfig) -> None:
    estimate, state = _design_state(tiny_config)

    with pytest.raises(BuilderError):
        build_subproblem(replace(state, s=state.s[:, :1]), estimate, tiny_config)
    with pytest.raises(BuilderError):
        build_subproblem(replace(state, w_mat=state.w_mat[:, :1, :1]), estimate, tiny_config)


def test_merit_subtracts_penalties(tiny_config: SystemConfig) -> None:
    _, state = _design_state(tiny_config)
    options = ProblemOptions.from_config(tiny_config)
    rates = float(rate_terms(state, tiny_config).sum())

    assert merit(state, tiny_config, options) == pytest.approx(rates, abs=1e-9)

    fuzzy = replace(state, s=np.full_like(state.s, 1.0 / state.s.shape[0]))
    expected_mode = options.mode_penalty * float(np.sum(fuzzy.s - fuzzy.s**2))
    assert merit(fuzzy, tiny_config, options) == pytest.approx(rates - expected_mode, abs=1e-9)


def test_rank_gap_and_psd_projection() -> None:
    vec = np.array([1.0, 1j, 2.0])
    other = np.array([0.0, 1.0, -1.0])
    rank_two = np.outer(vec, vec.conj()) + np.outer(other, other)

    assert rank_gap(rank_two) > 1e-6
    projected = project_psd(np.diag([2.0, -1.0, 0.5]))
    np.testing.assert_allclose(projected, np.diag([2.0, 0.0, 0.5]), atol=1e-12)


@pytest.mark.slow
def test_subproblem_solution_is_a_valid_next_point(tiny_config: SystemConfig) -> None:
    estimate = make_instance(tiny_config, seed=1).estimate
    options = ProblemOptions.from_config(tiny_config)
    start = initialize(estimate, tiny_config, options)

    problem, handles = build_subproblem(start, estimate, tiny_config, options)
    sol = solve(problem)

    assert sol.usable
    nxt = extract_state(sol, handles)
    total = float(sum(np.trace(w).real for w in nxt.w_mat) + np.trace(nxt.z_mat).real)
    assert total <= tiny_config.p_max_w * (1.0 + 1e-5)
    assert nxt.s.shape == start.s.shape


def _assign(x: np.ndarray, var, value) -> None:
    """Escreve em x o valor de uma variavel escalar ou hermitiana (sem termo constante)."""
    if isinstance(var, AffineExpr):
        (idx, coef), = var.terms.items()
        x[idx] = float(value) / coef
        return
    value = np.asarray(value, dtype=complex)
    for idx, coef in var.terms.items():
        x[idx] = float(np.sum(coef.conj() * value).real / np.sum(np.abs(coef) ** 2))


def _block_index(problem, name: str) -> int:
    return next(block.start for block in problem.variables if block.name == name)


def _inner(a: np.ndarray, b: np.ndarray) -> float:
    return float(np.sum(np.conj(a) * b).real)


def _sq(a: np.ndarray) -> float:
    return float(np.sum(np.abs(a) ** 2))


def _hermitian(rng: np.random.Generator, m: int, scale: float) -> np.ndarray:
    a = rng.standard_normal((m, m)) + 1j * rng.standard_normal((m, m))
    h = 0.5 * (a + a.conj().T)
    return h * scale / np.linalg.norm(h)


def test_product_surrogates_are_tangent_bounds(tiny_config: SystemConfig) -> None:
    config = replace(tiny_config, k_users=2)
    estimate = make_instance(config, seed=5).estimate
    options = ProblemOptions.from_config(config)
    state = initialize(estimate, config, options)
    problem, handles = build_subproblem(state, estimate, config, options)
    rows = dict(problem.inequalities)
    p0 = config.p_max_w
    user_gain, eve_gain = handles.scaling.user_gain, handles.scaling.eve_gain
    w_t = state.w_mat / p0
    z_t = state.z_mat / p0
    m_t = config.m_t
    rng = np.random.default_rng(21)

    def c9(k, w, psi):
        x = np.zeros(problem.n_vars)
        _assign(x, handles.w[k], w)
        _assign(x, handles.psi_c9[k], psi)
        x[_block_index(problem, f"t:C9:epi:{k}")] = _sq(w - psi)
        return -rows[f"C9:{k}"].value(x)

    def c10(k, ws, z, psi):
        x = np.zeros(problem.n_vars)
        for i, w in enumerate(ws):
            if i != k:
                _assign(x, handles.w[i], w)
                x[_block_index(problem, f"t:C10:epi:{k},{i}")] = _sq(w + psi)
        _assign(x, handles.z, z)
        _assign(x, handles.psi_c10[k], psi)
        x[_block_index(problem, f"t:C10:epi:{k},z")] = _sq(z + psi)
        return rows[f"C10:{k}"].value(x)

    capacity = 2.0**config.tau - 1.0

    def leakage(w, z, up, lo):
        return _inner(w, up) - capacity * _inner(z, lo)

    def c5a(k, j, w, z, up, lo):
        x = np.zeros(problem.n_vars)
        _assign(x, handles.w[k], w)
        _assign(x, handles.z, z)
        _assign(x, handles.psi_eve[j], up)
        _assign(x, handles.psi_eve_lo[j], lo)
        x[_block_index(problem, f"t:C5a:epi:z,{j}")] = _sq(z - lo)
        x[_block_index(problem, f"t:C5a:epi:{k},{j}")] = _sq(w + up)
        sigma = config.sigma_eve2 / (p0 * eve_gain[j])
        return rows[f"C5a:{k},{j}"].value(x) + capacity * sigma

    for k in range(config.k_users):
        p9 = state.psi_c9[k] / user_gain[k]
        p10 = state.psi_c10[k] / user_gain[k]
        scale = max(1.0, float(np.linalg.norm(p9)), float(np.linalg.norm(p10)))
        tol = 1e-9 * scale**2

        def interference(ws, z, psi, k=k):
            return sum(_inner(w, psi) for i, w in enumerate(ws) if i != k) + _inner(z, psi)

        assert c9(k, w_t[k], p9) == pytest.approx(_inner(w_t[k], p9), abs=tol)
        assert c10(k, w_t, z_t, p10) == pytest.approx(interference(w_t, z_t, p10), abs=tol)

        h = 1e-3
        dw, dpsi = _hermitian(rng, m_t, 1.0), _hermitian(rng, m_t, scale)
        slope = (
            c9(k, w_t[k] + h * dw, p9 + h * dpsi) - c9(k, w_t[k] - h * dw, p9 - h * dpsi)
        ) / (2 * h)
        expected = _inner(dw, p9) + _inner(w_t[k], dpsi)
        assert slope == pytest.approx(expected, rel=1e-6, abs=1e-6 * scale)
        dws = np.stack([_hermitian(rng, m_t, 1.0) for _ in range(config.k_users)])
        dz = _hermitian(rng, m_t, 1.0)
        slope = (
            c10(k, w_t + h * dws, z_t + h * dz, p10 + h * dpsi)
            - c10(k, w_t - h * dws, z_t - h * dz, p10 - h * dpsi)
        ) / (2 * h)
        expected = interference(dws, dz, p10) + interference(w_t, z_t, dpsi)
        assert slope == pytest.approx(expected, rel=1e-6, abs=1e-6 * scale)

        for _ in range(50):
            step = rng.uniform(0.1, 2.0)
            w = w_t[k] + _hermitian(rng, m_t, step)
            psi = p9 + _hermitian(rng, m_t, step * scale)
            assert c9(k, w, psi) <= _inner(w, psi) + tol
            ws = w_t + np.stack([_hermitian(rng, m_t, step) for _ in range(config.k_users)])
            z = z_t + _hermitian(rng, m_t, step)
            psi = p10 + _hermitian(rng, m_t, step * scale)
            assert c10(k, ws, z, psi) >= interference(ws, z, psi) - tol

    for j in range(config.j_eves):
        up = state.psi_eve[j] / eve_gain[j]
        lo = state.psi_eve_lo[j] / eve_gain[j]
        scale = max(1.0, float(np.linalg.norm(up)), float(np.linalg.norm(lo)))
        tol = 1e-9 * scale**2
        for k in range(config.k_users):
            assert c5a(k, j, w_t[k], z_t, up, lo) == pytest.approx(
                leakage(w_t[k], z_t, up, lo), abs=tol
            )
            for _ in range(50):
                step = rng.uniform(0.1, 2.0)
                w = w_t[k] + _hermitian(rng, m_t, step)
                z = z_t + _hermitian(rng, m_t, step)
                up_p = up + _hermitian(rng, m_t, step * scale)
                lo_p = lo + _hermitian(rng, m_t, step * scale)
                assert c5a(k, j, w, z, up_p, lo_p) >= leakage(w, z, up_p, lo_p) - tol


def test_rate_bound_is_a_tangent_minorant(tiny_config: SystemConfig) -> None:
    config = replace(tiny_config, k_users=2)
    estimate = make_instance(config, seed=5).estimate
    options = ProblemOptions.from_config(config)
    state = initialize(estimate, config, options)
    problem, handles = build_subproblem(state, estimate, config, options)
    p0 = config.p_max_w
    units = p0 * handles.scaling.user_gain
    sigma = config.sigma_user2 / units
    xi_t = state.xi / units
    iota_t = state.iota / units

    def bound(xi, iota):
        x = np.zeros(problem.n_vars)
        for k in range(config.k_users):
            _assign(x, handles.xi[k], xi[k])
            _assign(x, handles.iota[k], iota[k])
            anchor = xi_t[k] + iota_t[k] + sigma[k]
            _assign(x, handles.log_aux[k], anchor / (xi[k] + iota[k] + sigma[k]))
        return handles.rate_bound.value(x)

    def exact(xi, iota):
        return float(np.sum(np.log2(1.0 + xi / (iota + sigma))))

    assert bound(xi_t, iota_t) == pytest.approx(float(rate_terms(state, config).sum()), rel=1e-9)
    assert exact(xi_t, iota_t) == pytest.approx(float(rate_terms(state, config).sum()), rel=1e-9)

    for k in range(config.k_users):
        h = 1e-6 * (xi_t[k] + iota_t[k] + sigma[k])
        step = np.zeros(config.k_users)
        step[k] = h
        for xi, iota in ((xi_t + step, iota_t), (xi_t, iota_t + step)):
            slope = (bound(xi, iota) - bound(xi_t, iota_t)) / h
            expected = (exact(xi, iota) - exact(xi_t, iota_t)) / h
            assert slope == pytest.approx(expected, rel=1e-3, abs=1e-6)

    rng = np.random.default_rng(8)
    size = config.k_users
    for _ in range(100):
        xi = xi_t * rng.uniform(0.0, 3.0, size) + sigma * rng.uniform(0.0, 1.0, size)
        iota = iota_t * rng.uniform(0.0, 3.0, size) + sigma * rng.uniform(0.0, 1.0, size)
        assert bound(xi, iota) <= exact(xi, iota) + 1e-9


@pytest.mark.slow
def test_solved_subproblem_certificates_hold_on_sampled_errors(tiny_config: SystemConfig) -> None:
    estimate = make_instance(tiny_config, seed=1).estimate
    options = ProblemOptions.from_config(tiny_config)
    start = initialize(estimate, tiny_config, options)
    problem, handles = build_subproblem(start, estimate, tiny_config, options)

    sol = solve(problem)

    if sol.status != OPTIMAL:
        pytest.skip(f"subproblema sem solucao otima ({sol.status})")
    n = estimate.n_irs
    v_mat = sol.value(handles.y)[: n + 1, : n + 1]
    w = [sol.value(block) for block in handles.w]
    z = sol.value(handles.z)
    f_users, f_eves = build_f_matrices(estimate)
    scaling = handles.scaling
    rng = np.random.default_rng(11)
    tol = 1e-5

    # C1 em unidades de P_max
    assert sum(np.trace(block).real for block in w) + np.trace(z).real <= 1.0 + tol

    for k, f in enumerate(f_users):
        gain = float(scaling.user_gain[k])
        f_n = f / math.sqrt(gain)
        radius = user_radius(estimate, k) / math.sqrt(gain)
        psi9 = sol.value(handles.psi_c9[k])
        psi10 = sol.value(handles.psi_c10[k])
        xi = sol.value(handles.xi[k])
        iota = sol.value(handles.iota[k])
        for delta in ball_samples(rng, radius, f_n.shape, 400):
            g = (f_n + delta) @ v_mat @ (f_n + delta).conj().T
            assert np.linalg.eigvalsh(0.5 * (g - psi9 + (g - psi9).conj().T))[0] >= -tol
            assert np.linalg.eigvalsh(0.5 * (psi10 - g + (psi10 - g).conj().T))[0] >= -tol
            assert xi <= _inner(w[k], g) + tol
            leaked = sum(_inner(w[i], g) for i in range(len(w)) if i != k) + _inner(z, g)
            assert leaked <= iota + tol

    capacity = 2.0**tiny_config.tau - 1.0
    for j, f in enumerate(f_eves):
        gain = float(scaling.eve_gain[j])
        f_n = f / math.sqrt(gain)
        radius = eve_radius(estimate, j) / math.sqrt(gain)
        sigma = tiny_config.sigma_eve2 / (tiny_config.p_max_w * gain)
        for delta in ball_samples(rng, radius, f_n.shape, 400):
            g = (f_n + delta) @ v_mat @ (f_n + delta).conj().T
            for k in range(len(w)):
                # SINR da Eve <= 2^tau - 1 para o erro sorteado
                assert _inner(w[k], g) <= capacity * (_inner(z, g) + sigma) + tol
