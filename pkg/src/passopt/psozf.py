"""Particle swarm search over PA positions with zero-forcing beams.

Every particle is a complete ``(L, N)`` position matrix.  Its fitness is the
transmit power of the zero-forcing solution at those positions: beams null
inter-cluster interference at the strongest user of each cluster, and the
per-user NOMA powers are the smallest ones meeting every SINR target.
Positions that cannot meet the targets get a graded penalty above ``1e6`` W.
"""

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import isotonic_regression

from .channel import GeometryError, Scenario, WaveguideLayout, channel_rows_batch, uniform_positions
from .metrics import (
    BeamAllocation,
    SolverResult,
    apply_order,
    check_feasibility,
    min_power_for_beams,
    min_sinr,
    sic_order,
)

log = logging.getLogger(__name__)

__all__ = [
    "PsoConfig",
    "Particle",
    "SwarmState",
    "ZfAllocation",
    "SingularChannelError",
    "update_velocity",
    "repair_column",
    "repair_positions",
    "update_position",
    "random_positions",
    "chain_powers",
    "zf_directions",
    "zf_beamforming",
    "zf_power_allocation",
    "evaluate_positions",
    "fitness",
    "fixed_uniform",
    "run_pso_zf",
]

COND_LIMIT = 1e12


class SingularChannelError(np.linalg.LinAlgError):
    """Representative channels are (numerically) rank deficient."""


@dataclass
class PsoConfig:
    population: int = 30
    T: int = 100
    a0: float = 0.7
    inertia_decay: bool = False
    a0_max: float = 0.9
    a0_min: float = 0.4
    a1: float = 1.5
    a2: float = 1.5
    v_max: float | None = None  # defaults to x_max / 5
    penalty: float = 1e6
    power_mode: str = "exact"
    interference: str = "representative"
    seed: int = 0

    def __post_init__(self):
        if self.population < 1:
            raise ValueError("population must be at least 1")
        if self.T < 0:
            raise ValueError("T must be non-negative")
        if self.power_mode not in ("exact", "literal"):
            raise ValueError(f"unknown power_mode {self.power_mode!r}")

    def inertia(self, t: int) -> float:
        if not self.inertia_decay:
            return self.a0
        frac = t / max(self.T - 1, 1)
        return self.a0_max - (self.a0_max - self.a0_min) * frac


@dataclass
class Particle:
    x: np.ndarray
    v: np.ndarray
    x_best: np.ndarray
    f_best: float = np.inf


@dataclass
class SwarmState:
    particles: list
    global_best: np.ndarray
    f_global: float
    t: int = 0
    trace: list = field(default_factory=list)


@dataclass
class ZfAllocation:
    """Zero-forcing solution at fixed positions.

    ``p`` holds per-cluster delivered powers, ``P0`` the per-user delivered
    powers ``p_q * alpha_{q,k}`` (SIC order), ``order`` the SIC permutation.
    """

    W: np.ndarray
    alpha: np.ndarray
    p: np.ndarray
    P0: np.ndarray
    order: np.ndarray
    feasible: bool


def update_velocity(p: Particle, J, O, config: PsoConfig, rng, a0: float | None = None, v_max=None):
    """Inertia plus attraction to the personal best ``J`` and global best ``O``."""
    a0 = config.a0 if a0 is None else a0
    x = np.asarray(p.x, dtype=float)
    r1 = rng.random(x.shape)
    r2 = rng.random(x.shape)
    v = a0 * p.v + config.a1 * r1 * (J - x) + config.a2 * r2 * (O - x)
    vm = config.v_max if v_max is None else v_max
    if vm is not None:
        v = np.clip(v, -vm, vm)
    return v


def repair_column(col, layout: WaveguideLayout) -> np.ndarray:
    """Closest (least squares) sorted column meeting spacing and bounds.

    Subtracting ``l * delta`` turns the spacing constraints into plain
    monotonicity, so the projection is an isotonic regression followed by a
    clip to the shrunken box.
    """
    col = np.sort(np.clip(np.asarray(col, dtype=float), 0.0, layout.x_max))
    L, d = len(col), layout.delta
    if (L - 1) * d > layout.x_max:
        raise GeometryError("L PAs do not fit on the waveguide at the minimum spacing")
    if L == 1 or np.all(np.diff(col) >= d):
        return col
    off = d * np.arange(L)
    y = isotonic_regression(col - off).x
    y = np.clip(y, 0.0, layout.x_max - (L - 1) * d)
    return y + off


def repair_positions(X, layout: WaveguideLayout) -> np.ndarray:
    """Repair every column of ``X`` (any leading batch dims)."""
    X = np.asarray(X, dtype=float)
    flat = np.moveaxis(X, -1, -2).reshape(-1, X.shape[-2])
    out = np.stack([repair_column(c, layout) for c in flat])
    return np.moveaxis(out.reshape(X.shape[:-2] + (X.shape[-1], X.shape[-2])), -1, -2)


def update_position(x, v, layout: WaveguideLayout) -> np.ndarray:
    return repair_positions(np.asarray(x) + np.asarray(v), layout)


def random_positions(layout: WaveguideLayout, rng) -> np.ndarray:
    """Uniformly drawn, repaired ``(L, N)`` positions."""
    X = np.sort(rng.uniform(0.0, layout.x_max, size=(layout.L, layout.N)), axis=0)
    return repair_positions(X, layout)


def chain_powers(a, sinr_min) -> np.ndarray:
    """Per-user powers from the SIC chain in unrolled form.

    With ``C_i = prod_{p<i} (1 + s_p)`` the tail sums are
    ``T_k = sum_{i>=k} a_i C_i / C_k`` and ``x_k = T_k - T_{k+1}``.
    """
    a = np.asarray(a, dtype=float)
    s = np.broadcast_to(np.asarray(sinr_min, dtype=float), a.shape)
    C = np.concatenate([np.ones(a.shape[:-1] + (1,)), np.cumprod(1.0 + s[..., :-1], axis=-1)], axis=-1)
    T = np.cumsum((a * C)[..., ::-1], axis=-1)[..., ::-1] / C
    T_next = np.concatenate([T[..., 1:], np.zeros(a.shape[:-1] + (1,))], axis=-1)
    return T - T_next


def zf_directions(U_rep):
    """Right pseudo-inverse of the ``(Q, N)`` representative rows (batched).

    Returns ``(V, cond)`` with ``U_rep @ V = I``.
    """
    U_rep = np.asarray(U_rep)
    gram = U_rep @ np.conj(np.swapaxes(U_rep, -1, -2))
    cond = np.linalg.cond(gram)
    with np.errstate(all="ignore"):
        try:
            V = np.conj(np.swapaxes(U_rep, -1, -2)) @ np.linalg.inv(gram)
        except np.linalg.LinAlgError:
            V = np.full(U_rep.shape[:-2] + U_rep.shape[-1:] + U_rep.shape[-2:-1], np.nan + 0j)
    return V, cond


def _ordered_channels(scenario: Scenario, X):
    U = channel_rows_batch(X, scenario.users.flat, scenario.consts, scenario.layout)
    U3 = U.reshape(U.shape[:-2] + (scenario.Q, scenario.K, -1))
    order = sic_order(U3)
    return apply_order(U3, order), order


def zf_beamforming(X, scenario: Scenario, clustering=None, p_diag=None, order=None) -> np.ndarray:
    """ZF beams ``W = U~^H (U~ U~^H)^-1 diag(sqrt(p))`` at positions ``X``.

    ``U~`` stacks the strongest user of each cluster.  ``clustering`` is
    accepted for interface symmetry; clusters are the scenario's user groups.
    """
    U3, o = _ordered_channels(scenario, X)
    if order is not None:
        U3 = apply_order(apply_order(U3, np.argsort(o, axis=-1)), order)
    V, cond = zf_directions(U3[..., -1, :])
    if cond > COND_LIMIT or not np.all(np.isfinite(V)):
        raise SingularChannelError(f"representative channels are singular (cond = {cond:.3g})")
    p = np.ones(scenario.Q) if p_diag is None else np.asarray(p_diag, dtype=float)
    return V * np.sqrt(p)


def _as_qos(scenario, qos):
    if qos is None:
        return scenario.sinr_min, scenario.noise_power
    s = getattr(qos, "sinr_min", qos)
    noise = getattr(qos, "noise_power", scenario.noise_power)
    return np.broadcast_to(np.asarray(s, dtype=float), (scenario.Q, scenario.K)), noise


def _allocate(U3, order, s_sc, noise, mode, cap, interference):
    """Batched ZF allocation on SIC-ordered channels."""
    s = apply_order(np.broadcast_to(s_sc, order.shape), order)
    V, cond = zf_directions(U3[..., -1, :])
    ok = (cond <= COND_LIMIT) & np.all(np.isfinite(V), axis=(-1, -2))
    V = np.where(ok[..., None, None], V, 0.0)
    if mode == "exact":
        P, feas = min_power_for_beams(U3, V, s, noise, power_cap=cap, interference=interference)
    else:
        P = chain_powers(s * noise, s)
        P = np.broadcast_to(P, U3.shape[:-1]).copy()
        feas = np.ones(U3.shape[:-3], dtype=bool)
    feas = feas & ok
    return V, P, feas, s


def zf_power_allocation(scenario: Scenario, clustering=None, X=None, qos=None, mode: str = "exact",
                        interference: str = "representative") -> ZfAllocation:
    """Minimal NOMA powers for the ZF beams at ``X``.

    ``mode="literal"`` solves the chain seen by the representative user,
    where ZF leaves only noise: ``P_K = s_K sigma^2`` and
    ``P_k = s_k (sum_{i>k} P_i + sigma^2)``.  ``mode="exact"`` (default)
    returns the smallest powers meeting every user's SINR under the chosen
    ``interference`` model, accounting for the weaker users' own gains and,
    with ``interference="all"``, the residual interference they receive
    from other clusters' beams.
    """
    s_sc, noise = _as_qos(scenario, qos)
    U3, order = _ordered_channels(scenario, X)
    V, P, feas, _ = _allocate(U3, order, s_sc, noise, mode, np.inf, interference)
    if not np.all(np.isfinite(V)) or not np.any(V):
        raise SingularChannelError("representative channels are singular")
    if not feas:
        return ZfAllocation(np.zeros_like(V), np.full(P.shape, 1.0 / scenario.K), np.full(scenario.Q, np.inf),
                            P, order, False)
    p = P.sum(axis=-1)
    return ZfAllocation(V * np.sqrt(p), P / p[:, None], p, P, order, True)


def evaluate_positions(scenario: Scenario, X, qos=None, mode: str = "exact", penalty: float = 1e6,
                       interference: str = "representative"):
    """Fitness of a batch of position matrices ``X`` (shape ``(..., L, N)``).

    Returns ``(f, power, feasible)``.  Feasible positions score their transmit
    power; the rest score ``penalty`` plus the summed linear SINR shortfall of
    the representative-chain solution.
    """
    s_sc, noise = _as_qos(scenario, qos)
    X = np.asarray(X, dtype=float)
    U3, order = _ordered_channels(scenario, X)
    V, P, feas, s = _allocate(U3, order, s_sc, noise, mode, penalty, interference)
    p = P.sum(axis=-1)
    vn2 = np.sum(np.abs(V) ** 2, axis=-2)
    with np.errstate(all="ignore"):
        power = np.sum(p * vn2, axis=-1)
        if mode != "exact":
            W = V * np.sqrt(p)[..., None, :]
            ms = min_sinr(U3, W, P / p[..., None], noise, interference)
            feas = feas & np.all(ms >= s * (1 - 1e-9), axis=(-1, -2)) & (power < penalty)
    power = np.where(feas, power, np.inf)
    if np.all(feas):
        return power, power, feas
    # graded penalty from the representative chain
    Pr = chain_powers(s * noise, s)
    pr = Pr.sum(axis=-1)
    with np.errstate(all="ignore"):
        Wr = V * np.sqrt(pr)[..., None, :]
        ms = min_sinr(U3, Wr, Pr / pr[..., None], noise, interference)
    short = np.sum(np.maximum(s - np.nan_to_num(ms, nan=0.0), 0.0), axis=(-1, -2))
    short = np.where(np.isfinite(short), short, 1e300)
    f = np.where(feas, power, penalty + short)
    return f, power, feas


def fitness(X, scenario: Scenario, clustering=None, qos=None, config: PsoConfig | None = None) -> float:
    """Fitness of one position matrix, lower is better (W)."""
    cfg = PsoConfig() if config is None else config
    f, _, _ = evaluate_positions(scenario, X, qos, cfg.power_mode, cfg.penalty, cfg.interference)
    return float(f)


def _finish(scenario, X, qos, mode, interference, trace, iters):
    try:
        za = zf_power_allocation(scenario, None, X, qos, mode, interference)
    except SingularChannelError:
        za = None
    if za is None or not za.feasible:
        Q, K = scenario.Q, scenario.K
        ba = BeamAllocation(np.zeros((scenario.layout.N, Q), complex), np.full((Q, K), 1.0 / K))
        rep = check_feasibility(scenario, X, ba, interference=interference)
        return SolverResult(X, ba, np.inf, False, iters, trace, rep)
    ba = BeamAllocation(za.W, za.alpha, za.order)
    rep = check_feasibility(scenario, X, ba, interference=interference)
    power = float(np.sum(np.abs(za.W) ** 2))
    return SolverResult(X, ba, power, rep.feasible, iters, trace, rep)


def fixed_uniform(scenario: Scenario, qos=None, mode: str = "exact",
                  interference: str = "representative") -> SolverResult:
    """Baseline: evenly spaced PAs, ZF beams and minimal NOMA powers."""
    X = uniform_positions(scenario.layout)
    return _finish(scenario, X, qos, mode, interference, {"power": []}, 0)


def run_pso_zf(scenario: Scenario, clustering=None, config: PsoConfig | None = None, qos=None) -> SolverResult:
    """Swarm search over PA positions; returns the ZF solution at the global best.

    ``trace["power"][t]`` is the global-best fitness after iteration ``t``
    (entry 0 is the initial population).
    """
    cfg = PsoConfig() if config is None else config
    lay = scenario.layout
    v_max = cfg.v_max if cfg.v_max is not None else lay.x_max / 5.0
    rngs = [np.random.default_rng(s) for s in np.random.SeedSequence(cfg.seed).spawn(cfg.population)]

    X = np.stack([random_positions(lay, r) for r in rngs])
    V = np.stack([r.uniform(-v_max, v_max, size=(lay.L, lay.N)) for r in rngs]) * 0.1
    f, _, _ = evaluate_positions(scenario, X, qos, cfg.power_mode, cfg.penalty, cfg.interference)
    J, fJ = X.copy(), f.copy()
    g = int(np.argmin(fJ))
    O, fO = J[g].copy(), float(fJ[g])
    trace = [fO]

    for t in range(cfg.T):
        a0 = cfg.inertia(t)
        for i in range(cfg.population):
            p = Particle(X[i], V[i], J[i], fJ[i])
            V[i] = update_velocity(p, J[i], O, cfg, rngs[i], a0=a0, v_max=v_max)
            X[i] = update_position(X[i], V[i], lay)
        f, _, _ = evaluate_positions(scenario, X, qos, cfg.power_mode, cfg.penalty, cfg.interference)
        better = f < fJ
        J[better] = X[better]
        fJ[better] = f[better]
        g = int(np.argmin(fJ))
        if fJ[g] < fO:
            O, fO = J[g].copy(), float(fJ[g])
        trace.append(fO)
        log.debug("pso iter %d best %.6g", t, fO)

    if fO >= cfg.penalty:
        log.info("pso: every particle is penalized")
    return _finish(scenario, O, qos, cfg.power_mode, cfg.interference, {"power": trace}, cfg.T)
