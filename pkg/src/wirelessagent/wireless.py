"""Physical-layer numerics for the downlink MIMO SWIPT scenario.

Units are SI throughout: powers in watts, distances in metres, angles in
radians. dB quantities are marked with a ``_db`` suffix.
"""

from __future__ import annotations

import csv
import math
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from .errors import DistanceBelowReference, ShapeMismatch


def dbm_to_watt(p_dbm: float) -> float:
    return 10.0 ** (p_dbm / 10.0) / 1000.0


def watt_to_dbm(p_w: float) -> float:
    return 10.0 * math.log10(p_w * 1000.0)


@dataclass(frozen=True)
class ScenarioConfig:
    """Physical parameters of one SWIPT deployment.

    Defaults reproduce the case-study setting: 2 IRs and 2 ERs in a
    30 m x 30 m square around a 4-antenna BS at 5 m height, 28 GHz,
    -50 dBm noise, 43 dBm power budget and a 0.5e-7 W harvesting floor.
    """

    K: int = 2
    J: int = 2
    M: int = 4
    N_r: int = 3
    N_e: int = 3
    h: float = 5.0
    region: tuple[float, float] = (15.0, 15.0)
    f_c: float = 28e9
    d_0: float = 1.0
    L_0: float = 30.0
    alpha: float = 3.5
    sigma_sh: float = 6.0
    K_rician: float = 6.0
    sigma2: float = field(default_factory=lambda: dbm_to_watt(-50.0))
    P_max: float = field(default_factory=lambda: dbm_to_watt(43.0))
    E_min: float = 0.5e-7
    zeta: float = 1.0
    d_streams: int = 1
    positions: tuple[tuple[float, float], ...] | None = None

    def __post_init__(self) -> None:
        for name in ("K", "J", "M", "N_r", "N_e", "d_streams"):
            if int(getattr(self, name)) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.sigma2 <= 0 or self.P_max <= 0:
            raise ValueError("sigma2 and P_max must be positive")
        if self.E_min < 0:
            raise ValueError("E_min must be non-negative")
        if not 0.0 < self.zeta <= 1.0:
            raise ValueError("zeta must lie in (0, 1]")
        if self.d_streams > min(self.N_r, self.M):
            raise ValueError("d_streams exceeds min(N_r, M)")
        if self.sigma_sh < 0:
            raise ValueError("sigma_sh must be non-negative")
        if self.positions is not None and len(self.positions) != self.K + self.J:
            raise ValueError("positions must list K + J coordinates")

    @property
    def kappa(self) -> float:
        """Linear Rician factor (``inf`` for a pure line-of-sight link)."""
        return 10.0 ** (self.K_rician / 10.0)

    def with_overrides(self, **overrides: Any) -> ScenarioConfig:
        return replace(self, **overrides)

    def to_dict(self) -> dict[str, Any]:
        d = asdict(self)
        d["region"] = list(self.region)
        if self.positions is not None:
            d["positions"] = [list(p) for p in self.positions]
        return d

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> ScenarioConfig:
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown scenario keys: {sorted(unknown)}")
        kw = dict(data)
        if "region" in kw:
            kw["region"] = tuple(float(v) for v in kw["region"])
        if kw.get("positions") is not None:
            kw["positions"] = tuple(tuple(float(v) for v in p) for p in kw["positions"])
        return cls(**kw)


@dataclass(frozen=True)
class Scenario:
    """A placed deployment: user coordinates and link geometry.

    Users are ordered IRs first (indices ``0..K-1``) then ERs.
    """

    cfg: ScenarioConfig
    positions: np.ndarray  # (K + J, 2)
    seed: int

    @property
    def distances(self) -> np.ndarray:
        xy2 = np.sum(self.positions**2, axis=1)
        return np.sqrt(xy2 + self.cfg.h**2)

    @property
    def departure_angles(self) -> np.ndarray:
        return np.arctan2(self.positions[:, 1], self.positions[:, 0])

    @property
    def arrival_angles(self) -> np.ndarray:
        return np.arctan2(-self.positions[:, 1], -self.positions[:, 0])


@dataclass
class ChannelSet:
    H: list[np.ndarray]  # K matrices, N_r x M
    G: list[np.ndarray]  # J matrices, N_e x M
    seed: int
    shadowing_db: np.ndarray = field(default_factory=lambda: np.zeros(0))
    large_scale: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def scaled(self, c: float) -> ChannelSet:
        return ChannelSet(
            H=[c * h for h in self.H],
            G=[c * g for g in self.G],
            seed=self.seed,
            shadowing_db=self.shadowing_db.copy(),
            large_scale=self.large_scale * c**2,
        )


@dataclass
class GainMap:
    step: float
    xs: np.ndarray
    ys: np.ndarray
    values: np.ndarray  # (len(ys), len(xs)), dB

    def to_csv(self, path: str | Path) -> Path:
        path = Path(path)
        with path.open("w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["x_m", "y_m", "gain_db"])
            for iy, y in enumerate(self.ys):
                for ix, x in enumerate(self.xs):
                    writer.writerow([repr(float(x)), repr(float(y)), repr(float(self.values[iy, ix]))])
        return path


def steering_vector(n: int, theta: float, spacing_fraction: float = 0.5) -> np.ndarray:
    """ULA response ``exp(1j * 2*pi * spacing_fraction * m * sin(theta))``."""
    if n < 1:
        raise ValueError("n must be >= 1")
    m = np.arange(n)
    return np.exp(1j * 2.0 * np.pi * spacing_fraction * m * np.sin(theta))


def path_loss_db(d: float | np.ndarray, cfg: ScenarioConfig) -> float | np.ndarray:
    """Log-distance path loss ``L_0 + 10*alpha*log10(d/d_0)`` in dB."""
    d_arr = np.asarray(d, dtype=float)
    if np.any(d_arr < cfg.d_0):
        raise DistanceBelowReference(f"distance below d_0={cfg.d_0} m")
    loss = cfg.L_0 + 10.0 * cfg.alpha * np.log10(d_arr / cfg.d_0)
    return float(loss) if np.ndim(loss) == 0 else loss


def generate_scenario(cfg: ScenarioConfig, seed: int) -> Scenario:
    """Drop K + J users uniformly in the rectangle centred on the BS."""
    if cfg.positions is not None:
        pos = np.asarray(cfg.positions, dtype=float)
    else:
        rng = np.random.default_rng([seed, 0])
        hx, hy = cfg.region
        pos = np.column_stack(
            [rng.uniform(-hx, hx, cfg.K + cfg.J), rng.uniform(-hy, hy, cfg.K + cfg.J)]
        )
    return Scenario(cfg=cfg, positions=pos, seed=seed)


def _fading_weights(kappa: float) -> tuple[float, float]:
    if math.isinf(kappa):
        return 1.0, 0.0
    return math.sqrt(kappa / (1.0 + kappa)), math.sqrt(1.0 / (1.0 + kappa))


def _cn(rng: np.random.Generator, shape: tuple[int, ...]) -> np.ndarray:
    return (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / math.sqrt(2.0)


def sample_channel(scenario: Scenario, seed: int) -> ChannelSet:
    """Draw lognormal-shadowed Rician MIMO channels for every link.

    Each link gets ``sqrt(beta) * (a * a_rx a_tx^H + b * H_w)`` where
    ``beta = 10**(-(L(d) + X)/10)`` with ``X ~ N(0, sigma_sh^2)`` dB and
    ``a, b`` split the unit power between LoS and scatter by the K-factor.
    """
    cfg = scenario.cfg
    rng = np.random.default_rng([seed, 1])
    n_links = cfg.K + cfg.J
    shadow = rng.normal(0.0, cfg.sigma_sh, n_links) if cfg.sigma_sh > 0 else np.zeros(n_links)
    beta = 10.0 ** (-(np.asarray(path_loss_db(scenario.distances, cfg)) + shadow) / 10.0)
    los_w, nlos_w = _fading_weights(cfg.kappa)
    phi = scenario.departure_angles
    theta = scenario.arrival_angles

    mats = []
    for link in range(n_links):
        n_rx = cfg.N_r if link < cfg.K else cfg.N_e
        a_tx = steering_vector(cfg.M, phi[link])
        a_rx = steering_vector(n_rx, theta[link])
        hw = _cn(rng, (n_rx, cfg.M))
        small = los_w * np.outer(a_rx, a_tx.conj()) + nlos_w * hw
        mats.append(math.sqrt(beta[link]) * small)
    return ChannelSet(
        H=mats[: cfg.K], G=mats[cfg.K :], seed=seed, shadowing_db=shadow, large_scale=beta
    )


def _check_precoders(H: Sequence[np.ndarray], W: Sequence[np.ndarray]) -> None:
    if len(H) != len(W):
        raise ShapeMismatch(f"{len(H)} channels but {len(W)} precoders")
    for k, (hk, wk) in enumerate(zip(H, W)):
        if hk.ndim != 2 or wk.ndim != 2 or hk.shape[1] != wk.shape[0]:
            raise ShapeMismatch(f"user {k}: channel {hk.shape} vs precoder {wk.shape}")


def user_rates(H: Sequence[np.ndarray], W: Sequence[np.ndarray], sigma2: float) -> np.ndarray:
    """Per-IR achievable rate in bits/s/Hz with interference treated as noise."""
    _check_precoders(H, W)
    rates = np.zeros(len(H))
    for k, hk in enumerate(H):
        n = hk.shape[0]
        received = [hk @ wi for wi in W]
        signal = received[k] @ received[k].conj().T
        interf = sigma2 * np.eye(n, dtype=complex)
        for i, ri in enumerate(received):
            if i != k:
                interf = interf + ri @ ri.conj().T
        # log det(I + S N^-1) = log det(N + S) - log det(N)
        _, ld_total = np.linalg.slogdet(interf + signal)
        _, ld_noise = np.linalg.slogdet(interf)
        rates[k] = max((ld_total - ld_noise) / math.log(2.0), 0.0)
    return rates


def sum_rate(H: Sequence[np.ndarray], W: Sequence[np.ndarray], sigma2: float) -> float:
    return float(np.sum(user_rates(H, W, sigma2)))


def harvested_energy(G_j: np.ndarray, W: Sequence[np.ndarray], zeta: float) -> float:
    """Linear-EH harvested power ``zeta * sum_k ||G_j W_k||_F^2`` in watts."""
    total = 0.0
    for k, wk in enumerate(W):
        if G_j.ndim != 2 or wk.ndim != 2 or G_j.shape[1] != wk.shape[0]:
            raise ShapeMismatch(f"precoder {k}: {wk.shape} vs ER channel {G_j.shape}")
        total += float(np.linalg.norm(G_j @ wk) ** 2)
    return zeta * total


def total_power(W: Sequence[np.ndarray]) -> float:
    return float(sum(np.linalg.norm(w) ** 2 for w in W))


def gain_map(cfg: ScenarioConfig, grid_step: float, seed: int) -> GainMap:
    """Single-realisation channel gain over the deployment region.

    Every grid point gets an independent shadowing and fading draw for an
    ``N_r x M`` link; the value is ``10*log10(||H||_F^2 / (N_r*M))``.
    """
    if grid_step <= 0:
        raise ValueError("grid_step must be positive")
    hx, hy = cfg.region
    xs = _grid_axis(hx, grid_step)
    ys = _grid_axis(hy, grid_step)
    gx, gy = np.meshgrid(xs, ys)
    px, py = gx.ravel(), gy.ravel()
    n_pts = px.size

    rng = np.random.default_rng([seed, 2])
    dist = np.sqrt(px**2 + py**2 + cfg.h**2)
    shadow = rng.normal(0.0, cfg.sigma_sh, n_pts) if cfg.sigma_sh > 0 else np.zeros(n_pts)
    beta = 10.0 ** (-(np.asarray(path_loss_db(dist, cfg)) + shadow) / 10.0)

    los_w, nlos_w = _fading_weights(cfg.kappa)
    m = np.arange(cfg.M)
    n = np.arange(cfg.N_r)
    phi = np.arctan2(py, px)
    theta = np.arctan2(-py, -px)
    a_tx = np.exp(1j * np.pi * np.outer(np.sin(phi), m))  # (pts, M)
    a_rx = np.exp(1j * np.pi * np.outer(np.sin(theta), n))  # (pts, N_r)
    los = a_rx[:, :, None] * a_tx.conj()[:, None, :]
    hw = _cn(rng, (n_pts, cfg.N_r, cfg.M))
    small = los_w * los + nlos_w * hw
    power = beta * np.sum(np.abs(small) ** 2, axis=(1, 2)) / (cfg.N_r * cfg.M)
    values = 10.0 * np.log10(power).reshape(gx.shape)
    return GainMap(step=grid_step, xs=xs, ys=ys, values=values)


def _grid_axis(half_width: float, step: float) -> np.ndarray:
    n = int(math.floor(2.0 * half_width / step + 1e-9))
    return -half_width + step * np.arange(n + 1)
