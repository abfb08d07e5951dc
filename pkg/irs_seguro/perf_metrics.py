from __future__ import annotations

from dataclasses import dataclass, field
import math

import numpy as np

from irs_seguro.energy import harvested_power
from irs_seguro.sysconfig import (
    RNG_AUDIT,
    ChannelSet,
    CsiEstimate,
    SystemConfig,
    make_rng,
)

AUDIT_TOL = 1e-6
_BOUNDARY_FRACTION = 0.2


class MetricsError(ValueError):
    pass


@dataclass(frozen=True)
class DesignSolution:
    w: np.ndarray
    z_cov: np.ndarray
    mode: np.ndarray
    theta: np.ndarray
    phase_levels: int

    @property
    def alpha(self) -> np.ndarray:
        """Coeficientes de reflexao alpha_n = modo_n * exp(j 2 pi theta_n / B)."""
        phases = 2.0 * np.pi * np.asarray(self.theta, dtype=float) / self.phase_levels
        return np.asarray(self.mode, dtype=float) * np.exp(1j * phases)

    @property
    def v(self) -> np.ndarray:
        return np.concatenate([self.alpha.conj(), [1.0 + 0.0j]])

    @property
    def n_reflect(self) -> int:
        return int(np.sum(self.mode))

    @property
    def harvest_mask(self) -> np.ndarray:
        return 1 - np.asarray(self.mode, dtype=int)

    @property
    def total_power(self) -> float:
        return float(np.sum(np.abs(self.w) ** 2) + np.trace(self.z_cov).real)


@dataclass(frozen=True)
class AuditReport:
    worst_sum_rate: float
    worst_secrecy_rate: float
    max_eve_capacity: np.ndarray
    c3_margin_w: float
    feasible: bool
    samples_used: int
    nominal_sum_rate: float = 0.0
    nominal_secrecy_rate: float = 0.0
    harvested_w: float = 0.0
    c1_ok: bool = True
    failures: tuple[str, ...] = field(default_factory=tuple)


def effective_channel(
    h_d: np.ndarray,
    h_r: np.ndarray,
    g: np.ndarray,
    sol: DesignSolution,
) -> np.ndarray:
    return h_d.conj() + (h_r.conj() * sol.alpha) @ g


def cascaded_effective_channel(
    h_d: np.ndarray,
    g_c: np.ndarray,
    sol: DesignSolution,
) -> np.ndarray:
    """Mesmo canal efetivo a partir do canal cascateado diag(h_r^H) G."""
    return h_d.conj() + sol.alpha @ g_c


def _sinr_from_rows(rows: np.ndarray, sol: DesignSolution, sigma2: float) -> np.ndarray:
    # rows: (..., K, M_t); amplitudes[..., k, i] = h_k w_i
    amplitudes = np.abs(rows @ sol.w.T) ** 2
    signal = np.diagonal(amplitudes, axis1=-2, axis2=-1)
    interference = amplitudes.sum(axis=-1) - signal
    an_power = np.einsum("...m,mp,...p->...", rows, sol.z_cov, rows.conj()).real
    return signal / (interference + an_power + sigma2)


def _eve_capacity_from_rows(
    eve_rows: np.ndarray,
    sol: DesignSolution,
    sigma2: float,
) -> np.ndarray:
    # eve_rows: (..., J, M_t) -> (..., K, J)
    leakage = np.abs(eve_rows @ sol.w.T) ** 2
    an_power = np.einsum("...m,mp,...p->...", eve_rows, sol.z_cov, eve_rows.conj()).real
    ratio = leakage / (an_power[..., None] + sigma2)
    return np.log2(1.0 + np.swapaxes(ratio, -1, -2))


def _secrecy_sum(rates: np.ndarray, eve_caps: np.ndarray) -> np.ndarray:
    if eve_caps.shape[-1] == 0:
        return rates.sum(axis=-1)
    return np.maximum(rates - eve_caps.max(axis=-1), 0.0).sum(axis=-1)


def _user_rows(channels: ChannelSet, sol: DesignSolution) -> np.ndarray:
    return np.stack(
        [
            effective_channel(channels.h_d[k], channels.h_r[k], channels.g, sol)
            for k in range(len(channels.h_d))
        ]
    )


def _eve_rows(channels: ChannelSet, sol: DesignSolution) -> np.ndarray:
    m_t = channels.g.shape[1]
    if not len(channels.h_ed):
        return np.zeros((0, m_t), dtype=complex)
    return np.stack(
        [
            effective_channel(channels.h_ed[j], channels.h_re[j], channels.g, sol)
            for j in range(len(channels.h_ed))
        ]
    )


def sinr_user(k: int, channels: ChannelSet, sol: DesignSolution, sigma_k2: float) -> float:
    if sigma_k2 <= 0.0:
        raise MetricsError("potencia de ruido deve ser positiva")
    return float(_sinr_from_rows(_user_rows(channels, sol), sol, sigma_k2)[k])


def eve_capacity(
    k: int,
    j: int,
    channels: ChannelSet,
    sol: DesignSolution,
    sigma_eve2: float,
) -> float:
    if sigma_eve2 <= 0.0:
        raise MetricsError("potencia de ruido deve ser positiva")
    return float(_eve_capacity_from_rows(_eve_rows(channels, sol), sol, sigma_eve2)[k, j])


def secrecy_rate(
    channels: ChannelSet,
    sol: DesignSolution,
    config: SystemConfig,
) -> tuple[float, float]:
    rates = np.log2(1.0 + _sinr_from_rows(_user_rows(channels, sol), sol, config.sigma_user2))
    caps = _eve_capacity_from_rows(_eve_rows(channels, sol), sol, config.sigma_eve2)
    return float(rates.sum()), float(_secrecy_sum(rates, caps))


def ball_samples(
    rng: np.random.Generator,
    radius: float,
    shape: tuple[int, ...],
    count: int,
) -> np.ndarray:
    """Erros para auditoria: indice 0 nulo, ~20% na fronteira, resto uniforme."""
    samples = np.zeros((count, *shape), dtype=complex)
    if radius <= 0.0 or count <= 1 or not int(np.prod(shape)):
        return samples
    draws = count - 1
    direction = rng.standard_normal((draws, *shape)) + 1j * rng.standard_normal((draws, *shape))
    axes = tuple(range(1, direction.ndim))
    norms = np.sqrt(np.sum(np.abs(direction) ** 2, axis=axes, keepdims=True))
    direction = direction / np.where(norms == 0.0, 1.0, norms)
    real_dim = 2 * int(np.prod(shape))
    scale = radius * rng.uniform(size=draws) ** (1.0 / real_dim)
    boundary = rng.uniform(size=draws) < _BOUNDARY_FRACTION
    scale = np.where(boundary, radius, scale)
    samples[1:] = direction * scale.reshape((draws,) + (1,) * len(shape))
    return samples


def audit(
    sol: DesignSolution,
    estimate: CsiEstimate,
    config: SystemConfig,
    n_samples: int,
    *,
    seed: int = 0,
    check_secrecy: bool = True,
    check_energy: bool = True,
) -> AuditReport:
    """Avalia o projeto contra adversarios sorteados nas bolas de incerteza."""
    if n_samples < 1:
        raise MetricsError("n_samples deve ser >= 1")
    rng = make_rng(seed, RNG_AUDIT)
    k_users, j_eves, n = estimate.k_users, estimate.j_eves, estimate.n_irs
    m_t = estimate.m_t
    alpha = sol.alpha

    user_rows = np.empty((n_samples, k_users, m_t), dtype=complex)
    for k in range(k_users):
        d_cu = ball_samples(rng, estimate.rho_cu[k], (n, m_t), n_samples)
        d_d = ball_samples(rng, estimate.rho_d[k], (m_t,), n_samples)
        g_c = estimate.ghat_cu[k][None] + d_cu
        h_d = estimate.hhat_d[k][None] + d_d
        user_rows[:, k] = h_d.conj() + np.einsum("n,snm->sm", alpha, g_c)
    eve_rows = np.empty((n_samples, j_eves, m_t), dtype=complex)
    for j in range(j_eves):
        d_ce = ball_samples(rng, estimate.rho_ce[j], (n, m_t), n_samples)
        d_ed = ball_samples(rng, estimate.rho_ed[j], (m_t,), n_samples)
        g_c = estimate.ghat_ce[j][None] + d_ce
        h_e = estimate.hhat_ed[j][None] + d_ed
        eve_rows[:, j] = h_e.conj() + np.einsum("n,snm->sm", alpha, g_c)

    rates = np.log2(1.0 + _sinr_from_rows(user_rows, sol, config.sigma_user2))
    caps = _eve_capacity_from_rows(eve_rows, sol, config.sigma_eve2)
    sum_rates = rates.sum(axis=-1)
    secrecy = _secrecy_sum(rates, caps)
    max_caps = caps.max(axis=0) if n_samples else np.zeros((k_users, j_eves))

    failures: list[str] = []
    c1_ok = sol.total_power <= config.p_max_w * (1.0 + 1e-9) + 1e-12
    if not c1_ok:
        failures.append(f"C1: potencia {sol.total_power:.6g} W > {config.p_max_w:.6g} W")
    if check_secrecy and max_caps.size:
        worst_cap = float(max_caps.max())
        if worst_cap > config.tau + AUDIT_TOL:
            failures.append(f"C5: capacidade {worst_cap:.6g} > tau {config.tau}")

    harvest = sol.harvest_mask.astype(bool)
    nominal_harvest_w = 0.0
    margin = math.inf
    if check_energy and n:
        row_radius = estimate.rho_g / math.sqrt(n)
        rows = estimate.ghat[harvest]
        covariance = sol.z_cov + sol.w.T @ sol.w.conj()
        count = int(harvest.sum())
        d_rows = np.stack(
            [ball_samples(rng, row_radius, (m_t,), n_samples) for _ in range(count)],
            axis=1,
        ) if count else np.zeros((n_samples, 0, m_t), dtype=complex)
        true_rows = rows[None] + d_rows
        power = np.einsum("snm,mp,snp->s", true_rows, covariance, true_rows.conj()).real
        power = power + config.sigma_irs2 * count
        consumption = sol.n_reflect * config.p_irs_w + config.p_c_w
        harvested = np.array([harvested_power(max(p, 0.0), config.eh) for p in power])
        margin = float(np.min(harvested - consumption))
        nominal_harvest_w = float(harvested[0])
        if margin < -AUDIT_TOL:
            failures.append(f"C3: margem {margin:.6g} W")

    return AuditReport(
        worst_sum_rate=float(sum_rates.min()),
        worst_secrecy_rate=float(secrecy.min()),
        max_eve_capacity=max_caps,
        c3_margin_w=margin,
        feasible=not failures,
        samples_used=n_samples,
        nominal_sum_rate=float(sum_rates[0]),
        nominal_secrecy_rate=float(secrecy[0]),
        harvested_w=nominal_harvest_w,
        c1_ok=c1_ok,
        failures=tuple(failures),
    )
