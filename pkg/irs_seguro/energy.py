from __future__ import annotations

from dataclasses import dataclass
import math
from typing import Sequence

import numpy as np

from irs_seguro.sysconfig import EhParams, SystemConfig

_EXP_CLAMP = 700.0


class EnergyModelError(ValueError):
    pass


@dataclass(frozen=True)
class IrsPowerBudget:
    n_reflect: int
    p_irs_w: float
    p_c_w: float

    @property
    def consumption_w(self) -> float:
        return self.n_reflect * self.p_irs_w + self.p_c_w

    @classmethod
    def from_config(cls, config: SystemConfig, n_reflect: int) -> IrsPowerBudget:
        if not 0 <= n_reflect <= config.n_irs:
            raise EnergyModelError(
                f"n_reflect fora de 0..{config.n_irs}: {n_reflect}"
            )
        return cls(n_reflect=n_reflect, p_irs_w=config.p_irs_w, p_c_w=config.p_c_w)


def _sigmoid(p_pr: float, eh: EhParams) -> float:
    exponent = min(max(-eh.a * (p_pr - eh.q), -_EXP_CLAMP), _EXP_CLAMP)
    return eh.m_p / (1.0 + math.exp(exponent))


def harvested_power(p_pr: float, eh: EhParams) -> float:
    if p_pr < 0.0:
        raise EnergyModelError(f"potencia recebida negativa: {p_pr}")
    if p_pr == 0.0:
        return 0.0
    omega = eh.omega
    value = (_sigmoid(p_pr, eh) - eh.m_p * omega) / (1.0 - omega)
    return min(max(value, 0.0), eh.m_p)


def required_input_power(target_w: float, eh: EhParams) -> float:
    """Menor potencia RF cuja colheita atinge `target_w` (inf se inatingivel)."""
    if target_w <= 0.0:
        return 0.0
    if target_w >= eh.m_p:
        return math.inf
    omega = eh.omega
    psi = target_w * (1.0 - omega) + eh.m_p * omega
    return eh.q - math.log(eh.m_p / psi - 1.0) / eh.a


def received_rf_power(
    g: np.ndarray,
    w: Sequence[np.ndarray] | np.ndarray,
    z_cov: np.ndarray,
    harvest_mask: Sequence[int] | np.ndarray,
    sigma_a2: float,
) -> float:
    """Potencia RF total nos elementos em modo de colheita.

    `w` pode conter vetores de precodificacao (M_t) ou matrizes W_k (M_t x M_t).
    """
    mask = np.asarray(harvest_mask)
    if mask.size and not np.all((mask == 0) | (mask == 1)):
        raise EnergyModelError("mascara de colheita deve ser binaria")
    z = np.asarray(z_cov, dtype=complex)
    if not np.allclose(z, z.conj().T, atol=1e-10):
        raise EnergyModelError("covariancia do AN nao e hermitiana")
    scale = max(1.0, float(np.max(np.abs(z)))) if z.size else 1.0
    if z.size and np.linalg.eigvalsh(z).min() < -1e-9 * scale:
        raise EnergyModelError("covariancia do AN nao e semidefinida positiva")
    total = z.copy()
    for item in w:
        item = np.asarray(item, dtype=complex)
        total = total + (np.outer(item, item.conj()) if item.ndim == 1 else item)
    rows = np.asarray(g)[mask.astype(bool)]
    per_row = np.einsum("nm,mp,np->n", rows, total, rows.conj()).real
    return float(per_row.sum() + sigma_a2 * mask.sum())


def sustainability_ok(budget: IrsPowerBudget, p_ph: float) -> bool:
    return budget.consumption_w <= p_ph


def max_sustainable_reflectors(p_ph: float, p_irs_w: float, p_c_w: float) -> int:
    if p_ph < p_c_w:
        return 0
    if p_irs_w <= 0.0:
        raise EnergyModelError("p_irs_w deve ser positivo para contar refletores")
    return int(math.floor((p_ph - p_c_w) / p_irs_w))
