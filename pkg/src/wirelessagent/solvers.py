"""Beamforming solvers and Monte-Carlo sweeps for the SWIPT downlink.

Three solvers share one result type:

* :func:`zf_bd` -- block-diagonalisation zero forcing with equal power.
* :func:`wmmse` -- the classical weighted-MMSE sum-rate iteration.
* :func:`sca_swipt` -- projected-gradient ascent on a quadratically
  penalised sum-rate that enforces the per-ER harvesting floor.

Rates are evaluated on noise-whitened channels ``H / sigma`` internally;
this leaves every rate unchanged and keeps the linear algebra well scaled
at the tiny absolute channel gains of mmWave links.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.optimize import brentq

from . import wireless
from .errors import Infeasible, NullSpaceEmpty
from .wireless import ChannelSet, ScenarioConfig

LN2 = math.log(2.0)
POWER_RTOL = 1e-6
EH_ATOL = 1e-12

SOLVER_IDS = ("ZF", "WMMSE", "SCA")


@dataclass
class BeamformerSolution:
    W: list[np.ndarray]
    iterations: int
    objective_trace: list[float]
    feasible_eh: bool
    solver_id: str
    sum_rate: float = 0.0
    harvested: list[float] = field(default_factory=list)
    # SCA only: (rho, f_rho trace) for every penalty round
    penalty_rounds: list[tuple[float, list[float]]] = field(default_factory=list)

    @property
    def total_power(self) -> float:
        return wireless.total_power(self.W)


def _finish(
    W: list[np.ndarray],
    channels: ChannelSet,
    cfg: ScenarioConfig,
    solver_id: str,
    iterations: int,
    trace: list[float],
) -> BeamformerSolution:
    harvested = [wireless.harvested_energy(g, W, cfg.zeta) for g in channels.G]
    return BeamformerSolution(
        W=W,
        iterations=iterations,
        objective_trace=trace,
        feasible_eh=all(e >= cfg.E_min - EH_ATOL for e in harvested),
        solver_id=solver_id,
        sum_rate=wireless.sum_rate(channels.H, W, cfg.sigma2),
        harvested=harvested,
    )


def _project_ball(W: list[np.ndarray], p_max: float) -> list[np.ndarray]:
    p = wireless.total_power(W)
    if p <= p_max:
        return W
    s = math.sqrt(p_max / p)
    return [s * w for w in W]


# --------------------------------------------------------------------------
# zero forcing / block diagonalisation
# --------------------------------------------------------------------------


def null_space_basis(A: np.ndarray) -> np.ndarray:
    """Orthonormal basis (columns) of the right null space of ``A``."""
    n_cols = A.shape[1]
    if A.shape[0] == 0:
        return np.eye(n_cols, dtype=complex)
    _, s, vh = np.linalg.svd(A)
    tol = max(A.shape) * np.finfo(float).eps * (s[0] if s.size else 0.0)
    rank = int(np.sum(s > tol))
    return vh[rank:].conj().T


def zf_bd(channels: ChannelSet, cfg: ScenarioConfig) -> BeamformerSolution:
    """Block-diagonalisation precoding with equal power per stream.

    Each IR's precoder lives in the null space of the stacked channels of
    all other IRs and steers along the strongest right singular directions
    of the projected channel.
    """
    H = channels.H
    K = len(H)
    M = H[0].shape[1]
    bases = []
    for k in range(K):
        others = [H[i] for i in range(K) if i != k]
        n_other = sum(h.shape[0] for h in others)
        if M <= n_other:
            raise NullSpaceEmpty(
                f"M={M} antennas cannot null {n_other} interfering receive antennas"
            )
        stacked = np.vstack(others) if others else np.zeros((0, M), dtype=complex)
        bases.append(null_space_basis(stacked))

    directions = []
    for k in range(K):
        B = bases[k]
        d_eff = min(cfg.d_streams, B.shape[1])
        _, _, vh = np.linalg.svd(H[k] @ B)
        directions.append(B @ vh[:d_eff].conj().T)

    per_stream = cfg.P_max / sum(d.shape[1] for d in directions)
    W = [math.sqrt(per_stream) * d for d in directions]
    return _finish(W, channels, cfg, "ZF", 1, [wireless.sum_rate(H, W, cfg.sigma2)])


def zf_residual(H: Sequence[np.ndarray], W: Sequence[np.ndarray]) -> float:
    """Worst normalised leakage ``||H_i W_k|| / (||H_i|| ||W_k||)`` over i != k."""
    worst = 0.0
    for i, hi in enumerate(H):
        for k, wk in enumerate(W):
            if i == k:
                continue
            denom = np.linalg.norm(hi) * np.linalg.norm(wk)
            if denom > 0:
                worst = max(worst, float(np.linalg.norm(hi @ wk) / denom))
    return worst


# --------------------------------------------------------------------------
# WMMSE
# --------------------------------------------------------------------------


def _eigen_init(Hn: Sequence[np.ndarray], d: int, p_max: float) -> list[np.ndarray]:
    W = []
    for h in Hn:
        _, _, vh = np.linalg.svd(h)
        W.append(vh[:d].conj().T.copy())
    per_stream = p_max / (len(Hn) * d)
    return [math.sqrt(per_stream) * w for w in W]


def _power_multiplier(A: np.ndarray, B: np.ndarray, p_max: float) -> np.ndarray:
    """Solve ``min tr(V^H A V) - 2 Re tr(B^H V)`` s.t. ``||V||_F^2 <= p_max``.

    Returns ``V = (A + mu I)^-1 B`` with the smallest feasible ``mu >= 0``.
    """
    lam, Q = np.linalg.eigh(A)
    lam = np.clip(lam, 0.0, None)
    C = Q.conj().T @ B
    c2 = np.sum(np.abs(C) ** 2, axis=1)
    total = float(np.sum(c2))
    if total == 0.0:
        return np.zeros_like(B)

    floor = 1e-12 * max(float(lam[-1]), 1e-300)
    pos = lam > floor
    # components outside range(A) carry no signal energy -> pseudo-inverse at mu = 0
    if float(np.sum(c2[~pos])) <= 1e-24 * total:
        p0 = float(np.sum(c2[pos] / lam[pos] ** 2))
        if p0 <= p_max:
            coef = np.where(pos, 1.0 / np.where(pos, lam, 1.0), 0.0)
            return Q @ (C * coef[:, None])

    def excess(mu: float) -> float:
        return float(np.sum(c2 / (lam + mu) ** 2)) - p_max

    hi = math.sqrt(total / p_max)
    while excess(hi) > 0:  # rounding guard
        hi *= 2.0
    lo = hi
    while excess(lo) <= 0 and lo > 1e-300:
        lo *= 0.5
    mu = brentq(excess, lo, hi, xtol=1e-300, rtol=4 * np.finfo(float).eps) if lo < hi else hi
    V = Q @ (C / (lam + mu)[:, None])
    p = float(np.sum(np.abs(V) ** 2))
    if p > p_max:
        V *= math.sqrt(p_max / p)
    return V


def _wmmse_step(Hn: Sequence[np.ndarray], V: Sequence[np.ndarray], p_max: float) -> list[np.ndarray]:
    """One receiver / weight / precoder block-coordinate pass."""
    K = len(Hn)
    M = Hn[0].shape[1]
    d = V[0].shape[1]
    A = np.zeros((M, M), dtype=complex)
    Bs = []
    for k in range(K):
        hk = Hn[k]
        cov = np.eye(hk.shape[0], dtype=complex)
        for vi in V:
            r = hk @ vi
            cov += r @ r.conj().T
        U = np.linalg.solve(cov, hk @ V[k])
        E = np.eye(d) - U.conj().T @ hk @ V[k]
        Wt = np.linalg.inv(0.5 * (E + E.conj().T))
        Wt = 0.5 * (Wt + Wt.conj().T)
        HU = hk.conj().T @ U
        A += HU @ Wt @ HU.conj().T
        Bs.append(HU @ Wt)
    Vcat = _power_multiplier(0.5 * (A + A.conj().T), np.hstack(Bs), p_max)
    return [Vcat[:, k * d : (k + 1) * d] for k in range(K)]


def wmmse(
    channels: ChannelSet,
    cfg: ScenarioConfig,
    max_iters: int = 200,
    tol: float = 1e-6,
    init: Sequence[np.ndarray] | None = None,
    accelerate: bool = True,
) -> BeamformerSolution:
    """Weighted-MMSE sum-rate maximisation under the total power budget.

    Alternates MMSE receivers, MSE weights and a power-constrained
    precoder update whose multiplier is found by root bracketing on the
    eigen-decomposed power equation. Stops when the sum-rate gain drops
    below ``tol`` and returns the best iterate seen.

    With ``accelerate`` each pass also tries an extrapolated point
    ``V_new + beta * (V_new - V_old)`` (projected onto the power ball) and
    keeps it only if it raises the sum-rate. Since a WMMSE pass never
    lowers the rate from any feasible start, the trace stays monotone;
    the extrapolation only shortens the slow high-SNR tail.
    """
    Hn = [h / math.sqrt(cfg.sigma2) for h in channels.H]

    if init is None:
        V = _eigen_init(Hn, cfg.d_streams, cfg.P_max)
    else:
        V = _project_ball([np.array(w, dtype=complex) for w in init], cfg.P_max)

    rate = wireless.sum_rate(Hn, V, 1.0)
    trace = [rate]
    best_V, best_rate = V, rate
    beta = 1.0
    iterations = 0
    for it in range(1, max_iters + 1):
        iterations = it
        V_new = _wmmse_step(Hn, V, cfg.P_max)
        new_rate = wireless.sum_rate(Hn, V_new, 1.0)
        if accelerate:
            V_ext = _project_ball([vn + beta * (vn - v) for vn, v in zip(V_new, V)], cfg.P_max)
            ext_rate = wireless.sum_rate(Hn, V_ext, 1.0)
            if ext_rate > new_rate:
                V_new, new_rate = V_ext, ext_rate
                beta = min(1.5 * beta, 20.0)
            else:
                beta = max(0.5 * beta, 0.5)
        trace.append(new_rate)
        if new_rate > best_rate:
            best_V, best_rate = V_new, new_rate
        converged = abs(new_rate - rate) < tol
        V, rate = V_new, new_rate
        if converged:
            break

    return _finish([w.copy() for w in best_V], channels, cfg, "WMMSE", iterations, trace)


# --------------------------------------------------------------------------
# SCA-penalty SWIPT solver
# --------------------------------------------------------------------------


def eh_upper_bounds(channels: ChannelSet, cfg: ScenarioConfig) -> np.ndarray:
    """Per-ER ceiling ``zeta * P_max * lambda_max(G_j^H G_j)`` on harvested power."""
    return np.array(
        [cfg.zeta * cfg.P_max * float(np.linalg.eigvalsh(g.conj().T @ g)[-1]) for g in channels.G]
    )


def _rate_and_grad(
    Hn: Sequence[np.ndarray], W: Sequence[np.ndarray], want_grad: bool
) -> tuple[float, list[np.ndarray] | None]:
    K = len(Hn)
    total = 0.0
    grads = [np.zeros_like(w) for w in W] if want_grad else None
    for k in range(K):
        hk = Hn[k]
        n = hk.shape[0]
        received = [hk @ w for w in W]
        S = np.eye(n, dtype=complex)
        for r in received:
            S += r @ r.conj().T
        N = S - received[k] @ received[k].conj().T
        _, ld_s = np.linalg.slogdet(S)
        _, ld_n = np.linalg.slogdet(N)
        total += (ld_s - ld_n) / LN2
        if want_grad:
            S_inv_h = np.linalg.solve(S, hk)
            N_inv_h = np.linalg.solve(N, hk)
            gs = hk.conj().T @ S_inv_h
            gn = hk.conj().T @ N_inv_h
            for i, w in enumerate(W):
                g = gs @ w
                if i != k:
                    g = g - gn @ w
                grads[i] += (2.0 / LN2) * g
    return total, grads


def _penalty_terms(
    G: Sequence[np.ndarray], W: Sequence[np.ndarray], zeta: float, e_min: float
) -> tuple[np.ndarray, np.ndarray]:
    harvested = np.array([zeta * sum(float(np.linalg.norm(g @ w) ** 2) for w in W) for g in G])
    deficit = np.maximum(0.0, e_min - harvested)
    return harvested, deficit


def sca_objective(
    W: Sequence[np.ndarray], channels: ChannelSet, cfg: ScenarioConfig, rho: float
) -> float:
    """Penalised objective ``sum_rate(W) - rho * sum_j max(0, E_min - E_j(W))**2``."""
    Hn = [h / math.sqrt(cfg.sigma2) for h in channels.H]
    rate, _ = _rate_and_grad(Hn, W, want_grad=False)
    _, deficit = _penalty_terms(channels.G, W, cfg.zeta, cfg.E_min)
    return rate - rho * float(np.sum(deficit**2))


def sca_gradient(
    W: Sequence[np.ndarray], channels: ChannelSet, cfg: ScenarioConfig, rho: float
) -> list[np.ndarray]:
    """Real-coordinate gradient of :func:`sca_objective`.

    Returned as complex arrays ``G`` with ``df = Re tr(G^H dW)``, i.e. the
    real part holds the derivative along ``Re W`` and the imaginary part
    the derivative along ``Im W``.
    """
    Hn = [h / math.sqrt(cfg.sigma2) for h in channels.H]
    _, grads = _rate_and_grad(Hn, W, want_grad=True)
    _, deficit = _penalty_terms(channels.G, W, cfg.zeta, cfg.E_min)
    for j, g in enumerate(channels.G):
        if deficit[j] <= 0:
            continue
        gram = g.conj().T @ g
        for k, w in enumerate(W):
            grads[k] += 2.0 * rho * deficit[j] * 2.0 * cfg.zeta * (gram @ w)
    return grads


def _inner_product(a: Sequence[np.ndarray], b: Sequence[np.ndarray]) -> float:
    return float(sum(np.real(np.vdot(x, y)) for x, y in zip(a, b)))


def sca_swipt(
    channels: ChannelSet,
    cfg: ScenarioConfig,
    init: BeamformerSolution | Sequence[np.ndarray] | None = None,
    max_outer: int = 20,
    max_inner: int = 200,
    inner_rtol: float = 1e-10,
) -> BeamformerSolution:
    """Penalty-continuation projected-gradient solver for rate-max SWIPT.

    Each round ascends ``f_rho`` from the previous round's point with
    Armijo backtracking (initial step 1, shrink 0.5, constant 1e-4) and
    projection onto the power ball, then multiplies ``rho`` by 10 unless
    every ER already meets ``E_min``. ``rho`` starts at ``1 / E_min**2``.

    Raises
    ------
    Infeasible
        If some ER cannot reach ``E_min`` even with the whole budget
        steered at it.
    """
    bounds = eh_upper_bounds(channels, cfg)
    if bounds.size and cfg.E_min > float(bounds.min()):
        raise Infeasible(cfg.E_min, float(bounds.min()))

    if init is None:
        init = wmmse(channels, cfg)
    W0 = init.W if isinstance(init, BeamformerSolution) else init
    W = _project_ball([np.array(w, dtype=complex) for w in W0], cfg.P_max)

    Hn = [h / math.sqrt(cfg.sigma2) for h in channels.H]
    rho = 1.0 / cfg.E_min**2 if cfg.E_min > 0 else 0.0

    def f_and_grad(Wc, want_grad):
        rate, grads = _rate_and_grad(Hn, Wc, want_grad)
        harvested, deficit = _penalty_terms(channels.G, Wc, cfg.zeta, cfg.E_min)
        val = rate - rho * float(np.sum(deficit**2))
        if want_grad:
            for j, g in enumerate(channels.G):
                if deficit[j] > 0:
                    gram = g.conj().T @ g
                    for k, w in enumerate(Wc):
                        grads[k] += 4.0 * rho * deficit[j] * cfg.zeta * (gram @ w)
        return val, grads, harvested

    rounds: list[tuple[float, list[float]]] = []
    iterations = 0
    for _ in range(max_outer):
        f, grad, harvested = f_and_grad(W, True)
        trace = [f]
        for _ in range(max_inner):
            step = 1.0
            accepted = None
            while step > 1e-20:
                cand = _project_ball([w + step * g for w, g in zip(W, grad)], cfg.P_max)
                diff = [c - w for c, w in zip(cand, W)]
                predicted = _inner_product(grad, diff)
                f_new, _, _ = f_and_grad(cand, False)
                if f_new >= f + 1e-4 * predicted:
                    accepted = (cand, f_new)
                    break
                step *= 0.5
            if accepted is None:
                break
            cand, f_new = accepted
            iterations += 1
            gain = f_new - f
            W = cand
            f, grad, harvested = f_and_grad(W, True)
            trace.append(f)
            if gain <= inner_rtol * max(1.0, abs(f)):
                break
        rounds.append((rho, trace))
        if np.all(harvested >= cfg.E_min - EH_ATOL) or rho == 0.0:
            break
        rho *= 10.0

    sol = _finish(W, channels, cfg, "SCA", iterations, rounds[-1][1])
    sol.penalty_rounds = rounds
    return sol


# --------------------------------------------------------------------------
# Monte-Carlo sweeps
# --------------------------------------------------------------------------


@dataclass
class SolverStats:
    mean_rate: float
    stderr: float
    eh_violation_rate: float
    n_solved: int


@dataclass
class SweepPoint:
    value: float
    stats: dict[str, SolverStats]


@dataclass
class SweepResult:
    axis: str  # "power" | "antennas"
    points: list[SweepPoint]
    drops: int
    base_seed: int

    def mean_rates(self, solver_id: str) -> np.ndarray:
        return np.array([p.stats[solver_id].mean_rate for p in self.points])

    def stderrs(self, solver_id: str) -> np.ndarray:
        return np.array([p.stats[solver_id].stderr for p in self.points])

    def rows(self) -> list[dict[str, object]]:
        out = []
        for p in self.points:
            for sid in SOLVER_IDS:
                st = p.stats[sid]
                out.append(
                    {
                        "axis": self.axis,
                        "value": p.value,
                        "solver": sid,
                        "mean_rate_bps_hz": st.mean_rate,
                        "stderr": st.stderr,
                        "eh_violation_rate": st.eh_violation_rate,
                        "drops": self.drops,
                    }
                )
        return out

    def to_csv(self, path: str | Path) -> Path:
        path = Path(path)
        header = ["axis", "value", "solver", "mean_rate_bps_hz", "stderr", "eh_violation_rate", "drops"]
        with path.open("w", newline="", encoding="utf-8") as fh:
            writer = csv.DictWriter(fh, fieldnames=header)
            writer.writeheader()
            for row in self.rows():
                writer.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in row.items()})
        return path


def drop_seed(base_seed: int, drop: int) -> int:
    return base_seed * 10**6 + drop


def solve_drop(cfg: ScenarioConfig, seed: int) -> dict[str, BeamformerSolution | None]:
    """Run all three solvers on one random drop; ``None`` marks SCA infeasibility."""
    scenario = wireless.generate_scenario(cfg, seed)
    channels = wireless.sample_channel(scenario, seed)
    zf = zf_bd(channels, cfg)
    wm = wmmse(channels, cfg)
    try:
        sca = sca_swipt(channels, cfg, init=wm)
    except Infeasible:
        sca = None
    return {"ZF": zf, "WMMSE": wm, "SCA": sca}


def _stats(solutions: list[BeamformerSolution | None]) -> SolverStats:
    rates = np.array([s.sum_rate for s in solutions if s is not None])
    violations = sum(1 for s in solutions if s is None or not s.feasible_eh)
    n = rates.size
    mean = float(rates.mean()) if n else float("nan")
    stderr = float(rates.std(ddof=1) / math.sqrt(n)) if n > 1 else 0.0
    return SolverStats(mean, stderr, violations / len(solutions), int(n))


def _sweep(axis: str, configs: list[tuple[float, ScenarioConfig]], drops: int, base_seed: int) -> SweepResult:
    if drops < 1:
        raise ValueError("drops must be >= 1")
    points = []
    for value, cfg in configs:
        per_solver: dict[str, list[BeamformerSolution | None]] = {sid: [] for sid in SOLVER_IDS}
        for drop in range(drops):
            result = solve_drop(cfg, drop_seed(base_seed, drop))
            for sid in SOLVER_IDS:
                per_solver[sid].append(result[sid])
        points.append(SweepPoint(value=value, stats={sid: _stats(v) for sid, v in per_solver.items()}))
    points.sort(key=lambda p: p.value)
    return SweepResult(axis=axis, points=points, drops=drops, base_seed=base_seed)


def sweep_power(
    cfg: ScenarioConfig,
    p_grid_dbm: Sequence[float] = tuple(range(30, 44)),
    drops: int = 50,
    base_seed: int = 0,
) -> SweepResult:
    """Average sum-rate versus the BS power budget (dBm grid).

    Every grid point reuses the same drop seeds, so the curves compare
    identical user layouts and channel draws.
    """
    configs = [(float(p), cfg.with_overrides(P_max=wireless.dbm_to_watt(p))) for p in p_grid_dbm]
    return _sweep("power", configs, drops, base_seed)


def sweep_antennas(
    cfg: ScenarioConfig,
    m_grid: Sequence[int] = tuple(range(4, 9)),
    drops: int = 50,
    base_seed: int = 0,
    p_max_dbm: float = 43.0,
) -> SweepResult:
    """Average sum-rate versus the number of BS antennas at a fixed budget."""
    configs = []
    for m in m_grid:
        if m <= (cfg.K - 1) * cfg.N_r:
            raise NullSpaceEmpty(f"M={m} violates the zero-forcing antenna condition")
        configs.append(
            (float(m), cfg.with_overrides(M=int(m), P_max=wireless.dbm_to_watt(p_max_dbm)))
        )
    return _sweep("antennas", configs, drops, base_seed)
