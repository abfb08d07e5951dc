from __future__ import annotations

from dataclasses import dataclass, field, fields, is_dataclass, replace
import math
from pathlib import Path
from typing import Any

import numpy as np

from irs_seguro.checks import Check, collect_failures
from irs_seguro.parsing import ParseNumberError, parse_bool, parse_int, parse_number

SPEED_OF_LIGHT = 299_792_458.0
REFERENCE_DISTANCE_M = 10.0

# Sub-streams do RNG: cada grandeza sorteada tem o seu, assim a ordem de uso
# em um modulo nao altera os sorteios de outro.
RNG_POSITIONS = 0
RNG_CHANNELS = 1
RNG_ERRORS = 2
RNG_AUDIT = 3
RNG_RANDOM_PHASES = 4

_DEFAULT_P_IRS_MW = {3: 1.5, 4: 4.5, 5: 6.0, 6: 7.8}


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class Geometry:
    d0: float = 60.0
    d: float = 10.0
    d_y: float = 1.0
    r: float = 1.0
    r_e1: float = 80.0
    r_e2: float = 20.0


@dataclass(frozen=True)
class PathExponents:
    # AP-usuario e AP-Eve compartilham o expoente; enlaces via IRS usam outro.
    direct: float = 3.6
    irs: float = 2.2


@dataclass(frozen=True)
class RicianFactors:
    direct: float = 0.0
    irs: float = 3.0


@dataclass(frozen=True)
class AntennaGains:
    ap: float = 20.0
    irs: float = 0.0
    rx: float = 0.0


@dataclass(frozen=True)
class EhParams:
    m_p: float = 0.080
    a: float = 1500.0
    q: float = 0.0022

    @property
    def omega(self) -> float:
        return 1.0 / (1.0 + math.exp(min(self.a * self.q, 700.0)))


@dataclass(frozen=True)
class AlgoParams:
    t_max: int = 30
    convergence_tol: float = 1e-4
    # 0 seleciona o valor automatico P_max*|G|_F^2*(1+kappa)^2*10.
    m_big: float = 0.0
    adversary_samples: int = 1000
    mode_penalty: float = 0.1
    rank_penalty: float = 0.1
    gap_tol: float = 1e-7
    feas_tol: float = 1e-7
    max_solver_iter: int = 200
    polish_iterations: int = 6
    ao_max_blocks: int = 6


@dataclass(frozen=True)
class SystemConfig:
    m_t: int = 4
    n_irs: int = 8
    k_users: int = 2
    j_eves: int = 2
    b_bits: int = 3
    p_max_dbm: float = 30.0
    noise_user_dbm: float = -90.0
    noise_eve_dbm: float = -90.0
    noise_irs_dbm: float = -90.0
    p_irs_mw: dict[int, float] = field(default_factory=lambda: dict(_DEFAULT_P_IRS_MW))
    p_c_uw: float = 2.1
    tau: float = 1.5
    kappa: float = math.sqrt(0.1)
    carrier_hz: float = 2.4e9
    ignore_c3: bool = False
    geometry: Geometry = field(default_factory=Geometry)
    path_exponents: PathExponents = field(default_factory=PathExponents)
    rician: RicianFactors = field(default_factory=RicianFactors)
    gains_dbi: AntennaGains = field(default_factory=AntennaGains)
    eh: EhParams = field(default_factory=EhParams)
    algo: AlgoParams = field(default_factory=AlgoParams)

    @property
    def phase_levels(self) -> int:
        return 2**self.b_bits

    @property
    def p_max_w(self) -> float:
        return dbm_to_watts(self.p_max_dbm)

    @property
    def sigma_user2(self) -> float:
        return dbm_to_watts(self.noise_user_dbm)

    @property
    def sigma_eve2(self) -> float:
        return dbm_to_watts(self.noise_eve_dbm)

    @property
    def sigma_irs2(self) -> float:
        return dbm_to_watts(self.noise_irs_dbm)

    @property
    def p_c_w(self) -> float:
        return self.p_c_uw * 1e-6

    @property
    def p_irs_w(self) -> float:
        """Potencia por elemento refletor para a resolucao b configurada.

        Resolucoes abaixo da menor chave do mapa usam o valor da menor chave.
        """
        if self.b_bits in self.p_irs_mw:
            return self.p_irs_mw[self.b_bits] * 1e-3
        lower = [bits for bits in self.p_irs_mw if bits <= self.b_bits]
        key = max(lower) if lower else min(self.p_irs_mw)
        return self.p_irs_mw[key] * 1e-3

    @property
    def wavelength_m(self) -> float:
        return SPEED_OF_LIGHT / self.carrier_hz

    def validate(self) -> None:
        failures = collect_failures(self, _CONFIG_CHECKS)
        if failures:
            raise ConfigError("configuracao invalida; falhas: " + " | ".join(failures))


def dbm_to_watts(value_dbm: float) -> float:
    return 10.0 ** ((value_dbm - 30.0) / 10.0)


def _check(name: str, predicate, detail: str) -> Check:
    return Check(name, lambda cfg: (bool(predicate(cfg)), detail))


_CONFIG_CHECKS = [
    _check("antenas", lambda c: c.m_t >= 1, "m_t deve ser >= 1"),
    _check("usuarios", lambda c: c.k_users >= 1, "k_users deve ser >= 1"),
    _check("eves", lambda c: c.j_eves >= 0, "j_eves deve ser >= 0"),
    _check("seguranca", lambda c: c.m_t > c.j_eves, "m_t deve ser maior que j_eves"),
    _check("irs", lambda c: c.n_irs >= 0, "n_irs deve ser >= 0"),
    _check("bits", lambda c: 1 <= c.b_bits <= 6, "b_bits fora de 1..6"),
    _check("kappa", lambda c: c.kappa >= 0.0, "kappa deve ser >= 0"),
    _check("tau", lambda c: c.tau >= 0.0, "tau deve ser >= 0"),
    _check("t_max", lambda c: c.algo.t_max >= 1, "algo.t_max deve ser >= 1"),
    _check(
        "amostras",
        lambda c: c.algo.adversary_samples >= 1,
        "algo.adversary_samples deve ser >= 1",
    ),
    _check(
        "potencias",
        lambda c: c.p_c_uw > 0.0 and all(v >= 0.0 for v in c.p_irs_mw.values()),
        "potencias do IRS devem ser positivas",
    ),
    _check(
        "eh",
        lambda c: c.eh.m_p >= 0.0 and c.eh.a > 0.0 and c.eh.q > 0.0,
        "eh exige m_p >= 0, a > 0, q > 0",
    ),
    _check(
        "geometria",
        lambda c: all(getattr(c.geometry, f.name) >= 0.0 for f in fields(Geometry))
        and c.geometry.d0 > 0.0,
        "distancias devem ser nao negativas e d0 > 0",
    ),
    _check(
        "distancia_ap_irs",
        lambda c: math.hypot(c.geometry.d, c.geometry.d_y) > 0.0,
        "IRS coincide com o AP (d = d_y = 0)",
    ),
    _check(
        "distancia_ap_eve",
        lambda c: c.j_eves == 0 or c.geometry.r_e1 > 0.0,
        "Eve 1 coincide com o AP (r_e1 = 0)",
    ),
    _check("portadora", lambda c: c.carrier_hz > 0.0, "carrier_hz deve ser > 0"),
]


def config_with(config: SystemConfig, key: str, value: Any) -> SystemConfig:
    """Retorna uma copia com `key` (pontilhada, ex. ``geometry.d``) alterada."""
    head, _, rest = key.partition(".")
    names = {f.name for f in fields(config)}
    if head not in names:
        raise ConfigError(f"chave desconhecida: {key!r}")
    current = getattr(config, head)
    if head == "p_irs_mw":
        if not rest:
            raise ConfigError("p_irs_mw exige a resolucao, ex. p_irs_mw.3")
        try:
            bits = int(rest)
        except ValueError as exc:
            raise ConfigError(f"resolucao invalida em {key!r}") from exc
        updated = dict(current)
        updated[bits] = _coerce(1.0, value, key)
        return replace(config, p_irs_mw=updated)
    if is_dataclass(current):
        if not rest:
            raise ConfigError(f"chave incompleta: {key!r}")
        nested_names = {f.name for f in fields(current)}
        if rest not in nested_names:
            raise ConfigError(f"chave desconhecida: {key!r}")
        nested_value = _coerce(getattr(current, rest), value, key)
        return replace(config, **{head: replace(current, **{rest: nested_value})})
    if rest:
        raise ConfigError(f"chave desconhecida: {key!r}")
    return replace(config, **{head: _coerce(current, value, key)})


def _coerce(current: Any, value: Any, key: str) -> Any:
    try:
        if isinstance(current, bool):
            return value if isinstance(value, bool) else parse_bool(str(value))
        if isinstance(current, int):
            if isinstance(value, (int, float)) and float(value).is_integer():
                return int(value)
            return parse_int(str(value))
        if isinstance(value, (int, float)):
            return float(value)
        return parse_number(str(value))
    except ParseNumberError as exc:
        raise ConfigError(f"{key}: {exc}") from exc


def parse_config_text(text: str, base: SystemConfig | None = None) -> SystemConfig:
    config = base or SystemConfig()
    for line_no, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise ConfigError(f"linha {line_no}: esperado 'chave = valor'")
        config = config_with(config, key.strip(), value.strip())
    config.validate()
    return config


def load_config(path: str | Path, base: SystemConfig | None = None) -> SystemConfig:
    file_path = Path(path)
    if not file_path.exists():
        raise ConfigError(f"arquivo de configuracao nao encontrado: {file_path}")
    return parse_config_text(file_path.read_text(encoding="utf-8"), base)


def config_lines(config: SystemConfig) -> list[str]:
    """Serializa a configuracao no mesmo formato `chave = valor` do arquivo."""
    lines: list[str] = []
    for item in fields(config):
        value = getattr(config, item.name)
        if item.name == "p_irs_mw":
            lines.extend(f"p_irs_mw.{bits} = {mw}" for bits, mw in sorted(value.items()))
        elif is_dataclass(value):
            lines.extend(
                f"{item.name}.{sub.name} = {getattr(value, sub.name)}"
                for sub in fields(value)
            )
        else:
            lines.append(f"{item.name} = {value}")
    return lines


def make_rng(seed: int, tag: int) -> np.random.Generator:
    return np.random.default_rng([int(seed), int(tag)])


@dataclass(frozen=True)
class NodePositions:
    ap: np.ndarray
    irs: np.ndarray
    cluster_center: np.ndarray
    users: np.ndarray
    eves: np.ndarray


def place_nodes(config: SystemConfig, seed: int) -> NodePositions:
    geo = config.geometry
    rng = make_rng(seed, RNG_POSITIONS)
    center = np.array([geo.d0, 0.0])

    def on_circle(origin: np.ndarray, radius: float, count: int) -> np.ndarray:
        angles = rng.uniform(0.0, 2.0 * np.pi, size=count)
        offsets = np.stack([np.cos(angles), np.sin(angles)], axis=1)
        return origin + radius * offsets

    users = on_circle(center, geo.r, config.k_users)
    eves = np.zeros((config.j_eves, 2))
    if config.j_eves:
        eves[0] = on_circle(np.zeros(2), geo.r_e1, 1)[0]
        eves[1:] = on_circle(center, geo.r_e2, config.j_eves - 1)
    return NodePositions(
        ap=np.zeros(2),
        irs=np.array([geo.d, geo.d_y]),
        cluster_center=center,
        users=users,
        eves=eves,
    )


def reference_gain(config: SystemConfig) -> float:
    free_space = (config.wavelength_m / (4.0 * np.pi * REFERENCE_DISTANCE_M)) ** 2
    return free_space


def path_gain(
    dist_m: float,
    exponent: float,
    config: SystemConfig,
    *,
    gains_db: float = 0.0,
) -> float:
    """Ganho linear de potencia com referencia de 10 m.

    `gains_db` soma os ganhos das antenas das duas pontas do enlace.
    """
    if not dist_m > 0.0:
        raise ConfigError(f"distancia deve ser positiva: {dist_m}")
    g_ref = reference_gain(config) * 10.0 ** (gains_db / 10.0)
    return g_ref * (dist_m / REFERENCE_DISTANCE_M) ** (-exponent)


def steering(count: int, sin_angle: float) -> np.ndarray:
    return np.exp(1j * np.pi * np.arange(count) * sin_angle)


def _sin_towards(origin: np.ndarray, target: np.ndarray) -> float:
    delta = target - origin
    return float(delta[1] / np.hypot(delta[0], delta[1]))


def complex_gaussian(rng: np.random.Generator, shape) -> np.ndarray:
    return (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / np.sqrt(2.0)


def rician_mix(
    los: np.ndarray,
    nlos: np.ndarray,
    factor: float,
    gain: float,
) -> np.ndarray:
    if math.isinf(factor):
        return np.sqrt(gain) * los
    los_weight = np.sqrt(factor / (1.0 + factor))
    nlos_weight = np.sqrt(1.0 / (1.0 + factor))
    return np.sqrt(gain) * (los_weight * los + nlos_weight * nlos)


@dataclass(frozen=True)
class ChannelSet:
    g: np.ndarray
    h_d: np.ndarray
    h_r: np.ndarray
    h_ed: np.ndarray
    h_re: np.ndarray

    @property
    def g_cu(self) -> np.ndarray:
        return self.h_r.conj()[:, :, None] * self.g[None, :, :]

    @property
    def g_ce(self) -> np.ndarray:
        return self.h_re.conj()[:, :, None] * self.g[None, :, :]


def synthesize_channels(
    config: SystemConfig,
    positions: NodePositions,
    seed: int,
) -> ChannelSet:
    rng = make_rng(seed, RNG_CHANNELS)
    gains = config.gains_dbi
    exps = config.path_exponents
    rice = config.rician
    m_t, n = config.m_t, config.n_irs

    def link_to_point(
        origin: np.ndarray,
        target: np.ndarray,
        size: int,
        exponent: float,
        factor: float,
        gains_db: float,
    ) -> np.ndarray:
        dist = float(np.linalg.norm(target - origin))
        gain = path_gain(dist, exponent, config, gains_db=gains_db)
        los = steering(size, _sin_towards(origin, target))
        return rician_mix(los, complex_gaussian(rng, size), factor, gain)

    if n:
        dist = float(np.linalg.norm(positions.irs - positions.ap))
        gain = path_gain(dist, exps.irs, config, gains_db=gains.ap + gains.irs)
        departure = steering(m_t, _sin_towards(positions.ap, positions.irs))
        arrival = steering(n, _sin_towards(positions.irs, positions.ap))
        los = np.outer(arrival, departure.conj())
        g = rician_mix(los, complex_gaussian(rng, (n, m_t)), rice.irs, gain)
    else:
        g = np.zeros((0, m_t), dtype=complex)

    def direct_and_reflected(points: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        direct = np.zeros((len(points), m_t), dtype=complex)
        reflected = np.zeros((len(points), n), dtype=complex)
        for idx, point in enumerate(points):
            direct[idx] = link_to_point(
                positions.ap, point, m_t, exps.direct, rice.direct, gains.ap + gains.rx
            )
            if n:
                reflected[idx] = link_to_point(
                    positions.irs, point, n, exps.irs, rice.irs, gains.irs + gains.rx
                )
        return direct, reflected

    h_d, h_r = direct_and_reflected(positions.users)
    h_ed, h_re = direct_and_reflected(positions.eves)
    return ChannelSet(g=g, h_d=h_d, h_r=h_r, h_ed=h_ed, h_re=h_re)


def sample_ball(
    rng: np.random.Generator,
    radius: float,
    shape: tuple[int, ...],
) -> np.ndarray:
    """Amostra uniforme na bola complexa fechada de raio `radius`."""
    if radius <= 0.0:
        return np.zeros(shape, dtype=complex)
    direction = complex_gaussian(rng, shape)
    norm = np.linalg.norm(direction)
    if norm == 0.0:
        return np.zeros(shape, dtype=complex)
    real_dim = 2 * int(np.prod(shape))
    scale = radius * rng.uniform() ** (1.0 / real_dim)
    return direction * (scale / norm)


@dataclass(frozen=True)
class CsiEstimate:
    ghat: np.ndarray
    ghat_cu: np.ndarray
    hhat_d: np.ndarray
    ghat_ce: np.ndarray
    hhat_ed: np.ndarray
    rho_g: float
    rho_cu: np.ndarray
    rho_d: np.ndarray
    rho_ce: np.ndarray
    rho_ed: np.ndarray

    @property
    def m_t(self) -> int:
        return self.ghat.shape[1]

    @property
    def n_irs(self) -> int:
        return self.ghat.shape[0]

    @property
    def k_users(self) -> int:
        return self.hhat_d.shape[0]

    @property
    def j_eves(self) -> int:
        return self.hhat_ed.shape[0]

    def zeroed(self) -> CsiEstimate:
        """Mesma estimativa tratada como CSI perfeita (raios nulos)."""
        return replace(
            self,
            rho_g=0.0,
            rho_cu=np.zeros_like(self.rho_cu),
            rho_d=np.zeros_like(self.rho_d),
            rho_ce=np.zeros_like(self.rho_ce),
            rho_ed=np.zeros_like(self.rho_ed),
        )

    def without_eves(self) -> CsiEstimate:
        m_t, n = self.m_t, self.n_irs
        return replace(
            self,
            ghat_ce=np.zeros((0, n, m_t), dtype=complex),
            hhat_ed=np.zeros((0, m_t), dtype=complex),
            rho_ce=np.zeros(0),
            rho_ed=np.zeros(0),
        )


def synthesize_estimate(truth: ChannelSet, kappa: float, seed: int) -> CsiEstimate:
    if kappa < 0.0:
        raise ConfigError(f"kappa deve ser >= 0: {kappa}")
    rng = make_rng(seed, RNG_ERRORS)
    g_cu = truth.g_cu
    g_ce = truth.g_ce
    n = truth.g.shape[0]

    rho_cu = np.array([kappa * np.linalg.norm(m) for m in g_cu])
    rho_d = np.array([kappa * np.linalg.norm(h) for h in truth.h_d])
    rho_ce = np.array([kappa * np.linalg.norm(m) for m in g_ce])
    rho_ed = np.array([kappa * np.linalg.norm(h) for h in truth.h_ed])
    candidates = [kappa * np.linalg.norm(truth.g), *rho_cu, *rho_ce]
    rho_g = float(min(candidates))

    def perturbed(values: np.ndarray, radius: float) -> np.ndarray:
        error = sample_ball(rng, radius, values.shape)
        assert np.linalg.norm(error) <= radius * (1.0 + 1e-12)
        return values - error

    ghat_cu = np.empty_like(g_cu)
    hhat_d = np.empty_like(truth.h_d)
    for k in range(len(truth.h_d)):
        ghat_cu[k] = perturbed(g_cu[k], rho_cu[k])
        hhat_d[k] = perturbed(truth.h_d[k], rho_d[k])
    row_radius = rho_g / np.sqrt(n) if n else 0.0
    ghat = np.empty_like(truth.g)
    for row in range(n):
        ghat[row] = perturbed(truth.g[row], row_radius)
    ghat_ce = np.empty_like(g_ce)
    hhat_ed = np.empty_like(truth.h_ed)
    for j in range(len(truth.h_ed)):
        ghat_ce[j] = perturbed(g_ce[j], rho_ce[j])
        hhat_ed[j] = perturbed(truth.h_ed[j], rho_ed[j])
    return CsiEstimate(
        ghat=ghat,
        ghat_cu=ghat_cu,
        hhat_d=hhat_d,
        ghat_ce=ghat_ce,
        hhat_ed=hhat_ed,
        rho_g=rho_g,
        rho_cu=rho_cu,
        rho_d=rho_d,
        rho_ce=rho_ce,
        rho_ed=rho_ed,
    )


@dataclass(frozen=True)
class Instance:
    seed: int
    positions: NodePositions
    truth: ChannelSet
    estimate: CsiEstimate


def make_instance(config: SystemConfig, seed: int) -> Instance:
    positions = place_nodes(config, seed)
    truth = synthesize_channels(config, positions, seed)
    estimate = synthesize_estimate(truth, config.kappa, seed)
    return Instance(seed=seed, positions=positions, truth=truth, estimate=estimate)
