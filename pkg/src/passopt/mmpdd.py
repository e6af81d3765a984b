"""Block-coordinate penalty dual decomposition (MM-PDD) solver.

The solver relaxes the beam products ``u_{q,k} w_j`` into free auxiliaries
``beta_{q,k,j}`` and the PA-to-user geometry into distances ``dpu`` and
phases ``theta``.  Each outer iteration sweeps

A. transmit beams ``W`` (closed-form minimizer of the beam AL),
B. PA positions ``X``, then ``dpu`` and ``theta``, then the free pinching
   vectors ``u`` and ``beta`` by least squares,
C. ``beta`` and the power fractions ``alpha`` against the SINR constraints,

followed by a dual ascent or penalty tightening step.  Users are handled in
SIC order (weakest first within a cluster); all per-user arrays in the
state follow that order.

Shapes: ``W`` (N, Q); ``X`` (L, N); ``alpha`` (Q, K); ``beta`` and
``lambda_beta`` (Q, K, Q); ``u`` (Q, K, N); ``dpu``, ``theta``,
``lambda_u``, ``lambda_theta`` (Q, K, L, N).
"""

import logging
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.optimize import lsq_linear

from .channel import Scenario, channel_rows_batch, pa_user_distances, uniform_positions
from .metrics import (
    BeamAllocation,
    SolverResult,
    _mask_gains,
    apply_order,
    backward_recursion,
    check_feasibility,
    min_power_for_beams,
    sic_order,
)
from .psozf import repair_positions, zf_directions

log = logging.getLogger(__name__)

__all__ = [
    "MmPddConfig",
    "MmPddState",
    "NumericalFailure",
    "init_state",
    "al_objective_w",
    "grad_w",
    "lipschitz_w",
    "update_transmit_beam",
    "channel_derivatives",
    "position_al",
    "position_al_grad",
    "reduced_position_residuals",
    "update_positions",
    "refresh_distance",
    "update_phase_distance",
    "update_pinching_vectors",
    "power_allocation_from_beta",
    "update_power_allocation",
    "project_beta",
    "update_duals_penalty",
    "residuals",
    "run_mm_pdd",
]

COND_LIMIT = 1e14


class NumericalFailure(RuntimeError):
    """A linear system is too ill conditioned to trust."""


@dataclass
class MmPddConfig:
    """Outer-loop settings.

    ``eps`` is the residual tolerance, ``rho0`` the initial penalty and
    ``c_rho`` the shrink factor applied when the violation misses its
    target; ``target0`` is the first violation target, halved after every
    dual step.  The position trust region is capped at
    ``tr_max * (rho / rho0) ** tr_rho_exp``; an exponent below one lets the
    antennas keep travelling while the penalty tightens.
    """

    T: int = 200
    eps: float = 1e-6
    rho0: float = 1e-4
    c_rho: float = 0.85
    rho_min: float = 1e-12
    target0: float = 1e-2
    dual_update: bool = True
    beam_mode: str = "closed"  # or "lgs"
    p4_rounds: int = 3
    tr_init: float | None = None  # defaults to lambda_g / 4
    tr_max: float | None = None  # defaults to x_max / 10
    pos_rtol: float = 1e-10
    tr_rho_exp: float = 0.5
    interference: str = "representative"
    polish_zf: bool = False
    seed: int = 0

    def __post_init__(self):
        if not 0 < self.c_rho < 1:
            raise ValueError("c_rho must lie in (0, 1)")
        if self.tr_rho_exp < 0:
            raise ValueError("tr_rho_exp must be non-negative")
        if self.eps <= 0 or self.rho0 <= 0:
            raise ValueError("eps and rho0 must be positive")
        if self.beam_mode not in ("closed", "lgs"):
            raise ValueError(f"unknown beam_mode {self.beam_mode!r}")


@dataclass
class MmPddState:
    W: np.ndarray
    X: np.ndarray
    alpha: np.ndarray
    beta: np.ndarray
    dpu: np.ndarray
    theta: np.ndarray
    u: np.ndarray
    lambda_beta: np.ndarray
    lambda_u: np.ndarray
    lambda_theta: np.ndarray
    rho: float
    target: float = 1e-2
    order: np.ndarray | None = None
    users: np.ndarray | None = None  # SIC-ordered positions (Q, K, 3)
    tr: float = 0.0
    diag: dict = field(default_factory=dict)

    @property
    def Q(self):
        return self.beta.shape[0]

    @property
    def K(self):
        return self.beta.shape[1]

    @property
    def U(self):
        """Free pinching vectors stacked as ``(Q*K, N)``."""
        return self.u.reshape(-1, self.u.shape[-1])

    @property
    def B(self):
        return self.beta.reshape(-1, self.beta.shape[-1])

    @property
    def LB(self):
        return self.lambda_beta.reshape(-1, self.lambda_beta.shape[-1])

    def copy(self):
        out = replace(self)
        for k, v in vars(self).items():
            if isinstance(v, np.ndarray):
                setattr(out, k, v.copy())
        out.diag = dict(self.diag)
        return out


# -- geometry helpers -------------------------------------------------------

def _geometry(scenario: Scenario, users, X):
    """Distances and per-PA channel terms for SIC-ordered users."""
    c, lay = scenario.consts, scenario.layout
    Q, K = users.shape[:2]
    d = pa_user_distances(X, users.reshape(-1, 3), lay).reshape(Q, K, *X.shape)
    phase = c.wavenumber * (d + c.n_eff * X)
    t = c.eta * np.exp(-1j * phase) / (d * np.sqrt(X.shape[0]))
    return d, t


def _channels(scenario, users, X):
    Q, K = users.shape[:2]
    U = channel_rows_batch(X, users.reshape(-1, 3), scenario.consts, scenario.layout)
    return U.reshape(Q, K, -1)


def channel_derivatives(scenario: Scenario, users, X):
    """Effective channels and their derivatives in the PA positions.

    Returns ``(u, du)`` where ``u`` has shape ``(Q, K, N)`` and
    ``du[q, k, l, n]`` is ``d u_{q,k,n} / d x_{l,n}``.
    """
    c = scenario.consts
    d, t = _geometry(scenario, users, X)
    dd = (X - users[..., 0, None, None]) / d  # d(distance)/dx
    du = t * (-1j * c.wavenumber * (dd + c.n_eff) - dd / d)
    return t.sum(axis=-2), du


# -- transmit beams ---------------------------------------------------------

def al_objective_w(state: MmPddState, W=None) -> float:
    """Beam AL: ``||W||^2 + (1/2 rho) ||U W - beta + rho lambda||^2``."""
    W = state.W if W is None else W
    R = state.U @ W - state.B + state.rho * state.LB
    return float(np.sum(np.abs(W) ** 2) + np.sum(np.abs(R) ** 2) / (2 * state.rho))


def grad_w(state: MmPddState, q: int | None = None, W=None):
    """Gradient of the beam AL with respect to ``w_q`` (all columns if ``q`` is None).

    Convention: ``dL/dRe(w) + 1j * dL/dIm(w)``, so a step against it
    decreases the AL.
    """
    W = state.W if W is None else W
    U = state.U
    G = 2 * W + U.conj().T @ (U @ W - state.B + state.rho * state.LB) / state.rho
    return G if q is None else G[:, q]


def lipschitz_w(state: MmPddState) -> float:
    """Spectral norm of ``2 I + U^H U / rho``."""
    U = state.U
    if U.size == 0:
        return 2.0
    return 2.0 + np.linalg.norm(U, 2) ** 2 / state.rho


def update_transmit_beam(state: MmPddState, mode: str = "closed") -> np.ndarray:
    """New ``W`` minimizing the beam AL (``closed``) or one LGS step (``lgs``).

    The closed form solves ``(2 rho I + U^H U) w_q = U^H (beta_q - rho lambda_q)``
    for every column at once.
    """
    U = state.U
    if mode == "lgs":
        return state.W - grad_w(state) / lipschitz_w(state)
    A = 2 * state.rho * np.eye(U.shape[1]) + U.conj().T @ U
    cond = np.linalg.cond(A)
    if not np.isfinite(cond) or cond > COND_LIMIT:
        raise NumericalFailure(f"beam system condition number {cond:.3g}")
    return np.linalg.solve(A, U.conj().T @ (state.B - state.rho * state.LB))


# -- positions --------------------------------------------------------------

def _distance_residuals(scenario, state, X):
    c = scenario.consts
    d, _ = _geometry(scenario, state.users, X)
    bU = state.dpu - d
    bT = state.theta - c.wavenumber * (state.dpu + c.n_eff * X)
    return bU, bT, d


def _beta_target(state):
    """``beta - rho lambda_beta``: what ``u(X) W`` is asked to match."""
    return state.beta - state.rho * state.lambda_beta


def position_al(scenario: Scenario, state: MmPddState, X=None) -> float:
    """Position AL: channel error plus distance and phase penalty terms.

    ``sum |u(X) W - beta + rho lam_beta|^2 + (1/2 rho) sum [(b^U + rho lam_U)^2 + (b^theta + rho lam_theta)^2]``
    """
    X = state.X if X is None else np.asarray(X, dtype=float)
    u = _channels(scenario, state.users, X)
    r = np.einsum("qkn,nj->qkj", u, state.W) - _beta_target(state)
    bU, bT, _ = _distance_residuals(scenario, state, X)
    pen = np.sum((bU + state.rho * state.lambda_u) ** 2) + np.sum((bT + state.rho * state.lambda_theta) ** 2)
    return float(np.sum(np.abs(r) ** 2) + pen / (2 * state.rho))


def position_al_grad(scenario: Scenario, state: MmPddState, X=None) -> np.ndarray:
    """Analytic gradient of :func:`position_al` with respect to ``X``."""
    c = scenario.consts
    X = state.X if X is None else np.asarray(X, dtype=float)
    u, du = channel_derivatives(scenario, state.users, X)
    r = np.einsum("qkn,nj->qkj", u, state.W) - _beta_target(state)
    # d r_{qkj} / d x_{ln} = du[q,k,l,n] W[n,j]
    g_c = 2 * np.real(np.einsum("qkj,qkln,nj->ln", r.conj(), du, state.W))
    bU, bT, d = _distance_residuals(scenario, state, X)
    dd = (X - state.users[..., 0, None, None]) / d
    g_u = np.sum((bU + state.rho * state.lambda_u) * (-dd), axis=(0, 1)) / state.rho
    g_t = np.sum((bT + state.rho * state.lambda_theta) * (-c.wavenumber * c.n_eff), axis=(0, 1)) / state.rho
    return g_c + g_u + g_t


def reduced_position_residuals(scenario: Scenario, state: MmPddState, X=None, jac: bool = False):
    """Magnitude residuals ``|u(X) w_j| - |beta_{q,k,j} - rho lambda_{q,k,j}|`` (flattened).

    The SINR constraints only see ``|beta|``, so with the beta phases left
    free the channel error reduces to these magnitude mismatches.  The dual
    shift carries the price of the coupling, which is what drives the PAs
    past mere consistency toward lower power.
    """
    X = state.X if X is None else np.asarray(X, dtype=float)
    target = np.abs(_beta_target(state))
    if not jac:
        u = _channels(scenario, state.users, X)
        a = np.einsum("qkn,nj->qkj", u, state.W)
        return (np.abs(a) - target).ravel()
    u, du = channel_derivatives(scenario, state.users, X)
    a = np.einsum("qkn,nj->qkj", u, state.W)
    mag = np.abs(a)
    da = np.einsum("qkln,nj->qkjln", du, state.W)
    with np.errstate(invalid="ignore", divide="ignore"):
        J = np.real(a.conj()[..., None, None] * da) / mag[..., None, None]
    J = np.nan_to_num(J)
    return (mag - target).ravel(), J.reshape(mag.size, -1)


def update_positions(scenario: Scenario, state: MmPddState, config: MmPddConfig | None = None, max_tries: int = 4):
    """Trust-region Gauss-Newton step on the magnitude residuals.

    The linearized least-squares model is minimized inside the box
    ``|dx| <= radius`` intersected with ``[0, x_max]``; the result is
    projected onto the spacing constraints and accepted only if it lowers
    the true residual.  The radius grows after predictive steps and shrinks
    after poor ones, and never exceeds ``tr_max * min(1, rho / rho0) ** tr_rho_exp``.
    Returns the new ``X`` (unchanged when no step helps).
    """
    cfg = MmPddConfig() if config is None else config
    lay = scenario.layout
    X0 = state.X
    r0, J = reduced_position_residuals(scenario, state, X0, jac=True)
    if not (np.all(np.isfinite(r0)) and np.all(np.isfinite(J))):
        state.diag["position_skipped"] = state.diag.get("position_skipped", 0) + 1
        return X0
    scale = max(np.linalg.norm(np.abs(state.beta)), 1e-300)
    r0, J = r0 / scale, J / scale
    f0 = 0.5 * float(r0 @ r0)
    g = J.T @ r0
    if not np.any(g) or f0 == 0.0:
        return X0
    # the distance penalty acts as a proximal term: tighter penalty, shorter moves
    tr_max = (cfg.tr_max if cfg.tr_max is not None else lay.x_max / 10) * min(1.0, state.rho / cfg.rho0) ** cfg.tr_rho_exp
    state.tr = min(state.tr, tr_max)
    x0 = X0.ravel()
    for _ in range(max_tries):
        lo = np.maximum(-state.tr, -x0)
        hi = np.minimum(state.tr, lay.x_max - x0)
        step = lsq_linear(J, -r0, bounds=(lo, hi + 1e-300), method="bvls").x
        X1 = repair_positions((x0 + step).reshape(X0.shape), lay)
        dx = (X1 - X0).ravel()
        pred = f0 - 0.5 * float(np.sum((r0 + J @ dx) ** 2))
        if pred <= cfg.pos_rtol * f0:
            return X0
        r1 = reduced_position_residuals(scenario, state, X1) / scale
        actual = f0 - 0.5 * float(r1 @ r1)
        ratio = actual / pred
        if ratio > 0.75 and np.max(np.abs(dx)) > 0.9 * state.tr:
            state.tr = min(2 * state.tr, tr_max)
        elif ratio < 0.25:
            state.tr = max(state.tr / 4, 1e-12)
        if actual > 0:
            return X1
    return X0


def refresh_distance(scenario: Scenario, state: MmPddState, X_new=None):
    """Distance block: ``dpu = d(X) - rho lambda_U`` minimizes the distance penalty exactly."""
    X = state.X if X_new is None else np.asarray(X_new, dtype=float)
    d = pa_user_distances(X, state.users.reshape(-1, 3), scenario.layout).reshape(state.dpu.shape)
    return d - state.rho * state.lambda_u


def update_phase_distance(scenario: Scenario, state: MmPddState, X_new=None, dpu_prev=None):
    """Closed-form phase update and the matching distance.

    ``theta`` blends the geometric phase ``kappa (dpu + n_eff x)`` (weight
    ``1/rho``) with the previous phase (weight ``eta/sqrt(L) |c|``), where
    ``c = lambda_theta + eta exp(-1j theta) / (sqrt(L) rho)``; then
    ``dpu = theta / kappa - n_eff x``.  ``dpu_prev`` overrides the distance
    anchoring the geometric phase (defaults to ``state.dpu``).
    """
    cst = scenario.consts
    X = state.X if X_new is None else np.asarray(X_new, dtype=float)
    dprev = state.dpu if dpu_prev is None else dpu_prev
    L = X.shape[0]
    a = cst.eta / np.sqrt(L)
    cc = state.lambda_theta + a * np.exp(-1j * state.theta) / state.rho
    w = a * np.abs(cc)
    num = cst.wavenumber * (dprev + cst.n_eff * X) / state.rho + w * state.theta \
        - a * np.imag(cc * np.exp(1j * state.theta))
    theta = num / (1.0 / state.rho + w)
    dpu = theta / cst.wavenumber - cst.n_eff * X
    return theta, dpu


def update_pinching_vectors(state: MmPddState):
    """Least-squares pinching vectors ``u_{q,k} = argmin |u W - beta_{q,k}|`` and ``beta = u W``.

    Uses the minimum-norm solution; ``state.diag["rank_deficient"]`` is set
    when ``W W^H`` is singular.
    """
    W = state.W
    sol, _, rank, _ = np.linalg.lstsq(W.T, state.B.T, rcond=None)
    if rank < W.shape[0]:
        state.diag["rank_deficient"] = True
    u = sol.T
    beta = u @ W
    return u.reshape(state.u.shape), beta.reshape(state.beta.shape)


# -- power allocation -------------------------------------------------------

def power_allocation_from_beta(beta, sinr_min, noise_power, interference: str = "all"):
    """Fractions ``alpha`` meeting the SINR constraints written in ``beta``.

    ``a_{q,k} = max_{k' >= k} s_k (sum_{j != q} |beta_{q,k',j}|^2 + sigma^2) / |beta_{q,k',q}|^2``
    feeds the backward recursion; the result is normalized per cluster.

    Returns ``(alpha, alpha_tilde)``; ``alpha_tilde`` is the unnormalized
    recursion output.
    """
    g = _mask_gains(np.abs(np.asarray(beta)) ** 2, interference)
    Q, K = g.shape[:2]
    s = np.broadcast_to(np.asarray(sinr_min, dtype=float), (Q, K))
    own = g[np.arange(Q), :, np.arange(Q)]  # (Q, K)
    inter = g.sum(axis=-1) - own
    with np.errstate(divide="ignore", invalid="ignore"):
        r = (inter + noise_power) / own
    r = np.maximum.accumulate(r[:, ::-1], axis=1)[:, ::-1]
    a = s * r
    at = backward_recursion(a, s)
    if K == 1:
        return np.ones((Q, 1)), at
    with np.errstate(divide="ignore", invalid="ignore"):
        alpha = at / at.sum(axis=1, keepdims=True)
    return alpha, at


def update_power_allocation(state: MmPddState, sinr_min, noise_power, interference: str = "all"):
    """Normalized fractions from the current ``beta`` (see :func:`power_allocation_from_beta`)."""
    alpha, at = power_allocation_from_beta(state.beta, sinr_min, noise_power, interference)
    if not np.all(np.isfinite(at)) or np.any(at < 0):
        state.diag["alpha_infeasible"] = True
        return state.alpha
    return alpha


def _row_margin(alpha, s):
    """``c_{q,k'} = min_{k <= k'} (alpha_k - s_k sum_{i>k} alpha_i) / s_k``."""
    tail = np.cumsum(alpha[:, ::-1], axis=1)[:, ::-1] - alpha
    with np.errstate(divide="ignore", invalid="ignore"):
        m = np.where(s > 0, (alpha - s * tail) / s, np.inf)
    return np.minimum.accumulate(m, axis=1)


def project_beta(z, alpha, sinr_min, noise_power, interference: str = "all", iters: int = 100):
    """Nearest ``beta`` to ``z`` meeting every decoding constraint for fixed ``alpha``.

    For row ``(q, k')`` the constraints reduce to
    ``c |b_q|^2 >= sum_{j != q} |b_j|^2 + sigma^2``; the projection scales
    the own entry up by ``1/(1 - mu c)`` and the others down by
    ``1/(1 + mu)`` with ``mu`` found by bisection.
    """
    z = np.asarray(z, dtype=complex)
    Q, K, _ = z.shape
    s = np.broadcast_to(np.asarray(sinr_min, dtype=float), (Q, K))
    c = _row_margin(np.asarray(alpha, dtype=float), s)  # (Q, K)
    own_mask = np.zeros((Q, K, Q), dtype=bool)
    own_mask[np.arange(Q), :, np.arange(Q)] = True
    if interference == "representative":
        other_on = np.broadcast_to((np.arange(K) == K - 1)[None, :, None], z.shape) & ~own_mask
    else:
        other_on = ~own_mask
    r = np.abs(z)
    r_own = np.maximum(r[own_mask].reshape(Q, K), 1e-300)
    other2 = np.sum(np.where(other_on, r, 0.0) ** 2, axis=-1)

    def g(mu):
        return c * r_own**2 / (1 - mu * c) ** 2 - other2 / (1 + mu) ** 2 - noise_power

    active = np.isfinite(c) & (c > 0) & (g(np.zeros((Q, K))) < 0)
    lo = np.zeros((Q, K))
    hi = np.where(active, 1.0 / np.where(c > 0, c, 1.0), 0.0)
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        ok = g(mid) >= 0
        hi = np.where(active & ok, mid, hi)
        lo = np.where(active & ~ok, mid, lo)
    mu = np.where(active, hi, 0.0)
    phase = np.where(r > 0, z / np.where(r > 0, r, 1.0), 1.0)
    own_val = r_own / (1 - mu * c)
    b = np.where(other_on, z / (1 + mu[..., None]), z)
    b = np.where(own_mask, phase * own_val[..., None], b)
    return b


def _p4(z, alpha, s, noise, interference, rounds):
    beta = z
    for _ in range(rounds):
        a_new, at = power_allocation_from_beta(beta, s, noise, interference)
        if np.all(np.isfinite(at)) and np.all(at >= 0):
            alpha = a_new
        beta = project_beta(z, alpha, s, noise, interference)
    return beta, alpha


# -- duals ------------------------------------------------------------------

def residuals(scenario: Scenario, state: MmPddState, u_phys=None):
    """``(b^U, b^theta, beta residual)`` at the current state."""
    bU, bT, _ = _distance_residuals(scenario, state, state.X)
    if u_phys is None:
        u_phys = _channels(scenario, state.users, state.X)
    rb = np.einsum("qkn,nj->qkj", u_phys, state.W) - state.beta
    return bU, bT, rb


def update_duals_penalty(state: MmPddState, config: MmPddConfig, bU, bT, rb=None):
    """Dual ascent when the violation meets its target, else shrink ``rho``.

    The violation is the largest of ``|b^U|``, ``|b^theta|`` and the relative
    beta residual ``||u W - beta|| / ||beta||``.  Once ``rho`` sits at its
    floor the duals keep ascending on every iteration.

    Returns ``(lambda_u, lambda_theta, lambda_beta, rho, target)``.
    """
    viol = max(float(np.max(np.abs(bU), initial=0.0)), float(np.max(np.abs(bT), initial=0.0)))
    if rb is not None:
        nb = np.linalg.norm(state.beta)
        viol = max(viol, float(np.linalg.norm(rb) / nb) if nb > 0 else 0.0)
    lu, lt, lb = state.lambda_u, state.lambda_theta, state.lambda_beta
    rho, target = state.rho, state.target
    at_floor = rho <= config.rho_min
    if viol <= target or at_floor:
        # at the floor the penalty cannot tighten further, so keep ascending
        if config.dual_update and viol > 0:
            lu = lu + bU / rho
            lt = lt + bT / rho
            if rb is not None:
                lb = lb + rb / rho
        if viol <= target:
            target = 0.5 * target
    else:
        rho = max(config.c_rho * rho, config.rho_min)
    return lu, lt, lb, rho, target


# -- driver -----------------------------------------------------------------

def _min_power(U3, V, s, noise, interference):
    P, ok = min_power_for_beams(U3, V, s, noise, power_cap=np.inf, interference=interference)
    if not ok:
        return None
    p = P.sum(axis=1)
    W = V * np.sqrt(p)
    return float(np.sum(np.abs(W) ** 2)), W, P / p[:, None]


def _polish(U3, W, s, noise, interference, zf: bool = False):
    """Minimal-power allocation along the beam directions of ``W`` (and the ZF directions if ``zf``)."""
    cands = []
    if W is not None and np.all(np.isfinite(W)) and np.all(np.linalg.norm(W, axis=0) > 0):
        cands.append(W)
    V, cond = zf_directions(U3[:, -1, :])
    if (zf or not cands) and cond < 1e12 and np.all(np.isfinite(V)):
        cands.append(V)
    best = None
    for V in cands:
        out = _min_power(U3, V, s, noise, interference)
        if out is not None and (best is None or out[0] < best[0]):
            best = out
    return best


def init_state(scenario: Scenario, config: MmPddConfig | None = None, X0=None) -> MmPddState:
    """Uniform PAs, ZF beams with minimal powers, uniform fractions, geometric auxiliaries."""
    cfg = MmPddConfig() if config is None else config
    c, lay = scenario.consts, scenario.layout
    X = uniform_positions(lay) if X0 is None else np.asarray(X0, dtype=float)
    U3 = channel_rows_batch(X, scenario.users.flat, c, lay).reshape(scenario.Q, scenario.K, -1)
    order = sic_order(U3)
    users = apply_order(scenario.users.positions, order)
    u = apply_order(U3, order)
    s = apply_order(scenario.sinr_min, order)
    Q, K, N = u.shape
    pol = _polish(u, None, s, scenario.noise_power, cfg.interference)
    W = pol[1] if pol is not None else zf_directions(u[:, -1, :])[0] * np.sqrt(scenario.noise_power)
    d = pa_user_distances(X, users.reshape(-1, 3), lay).reshape(Q, K, *X.shape)
    zeros = np.zeros_like(d)
    return MmPddState(
        W=W, X=X, alpha=np.full((Q, K), 1.0 / K),
        beta=np.einsum("qkn,nj->qkj", u, W),
        dpu=d, theta=c.wavenumber * (d + c.n_eff * X), u=u,
        lambda_beta=np.zeros((Q, K, Q), complex), lambda_u=zeros, lambda_theta=zeros.copy(),
        rho=cfg.rho0, target=cfg.target0, order=order, users=users,
        tr=cfg.tr_init if cfg.tr_init is not None else c.guided_wavelength / 4,
    )


def _reorder(state: MmPddState, scenario: Scenario, new_order):
    """Permute every per-user array to a new SIC order."""
    inv = np.argsort(state.order, axis=1)
    perm = np.take_along_axis(inv, new_order, axis=1)  # old position of each new slot
    for name in ("alpha", "beta", "dpu", "theta", "u", "lambda_beta", "lambda_u", "lambda_theta"):
        setattr(state, name, apply_order(getattr(state, name), perm))
    state.order = new_order
    state.users = apply_order(scenario.users.positions, new_order)


def run_mm_pdd(scenario: Scenario, clustering=None, config: MmPddConfig | None = None,
               state: MmPddState | None = None) -> SolverResult:
    """Run the MM-PDD sweeps and return the best feasible iterate.

    Every iterate is evaluated by the smallest power that meets the SINR
    targets along its beam directions (or the ZF directions at its PA
    positions, whichever is lower); the best such point is returned.  The
    trace holds per-iteration ``power`` (best so far), ``iterate_power``,
    ``violation``, ``b_u``, ``b_theta``, ``rho`` and the beam AL before and
    after the beam update.  ``clustering`` is accepted for interface
    symmetry; clusters are the scenario's user groups.
    """
    cfg = MmPddConfig() if config is None else config
    c = scenario.consts
    noise = scenario.noise_power
    st = init_state(scenario, cfg) if state is None else state.copy()
    trace = {k: [] for k in ("power", "iterate_power", "violation", "b_u", "b_theta", "b_beta",
                             "rho", "al_w_pre", "al_w_post", "w_power")}

    def evaluate(st):
        U3 = _channels(scenario, st.users, st.X)
        s = apply_order(scenario.sinr_min, st.order)
        return _polish(U3, st.W, s, noise, cfg.interference, cfg.polish_zf)

    best = evaluate(st)
    best_X, best_order = st.X.copy(), st.order.copy()
    prev_power = float(np.sum(np.abs(st.W) ** 2))
    it = 0
    for it in range(1, cfg.T + 1):
        # synchronize with the physical channel and refresh the SIC order
        u_phys = channel_rows_batch(st.X, scenario.users.flat, c, scenario.layout).reshape(st.Q, st.K, -1)
        new_order = sic_order(u_phys)
        if not np.array_equal(new_order, st.order):
            _reorder(st, scenario, new_order)
        st.u = apply_order(u_phys, st.order)
        s = apply_order(scenario.sinr_min, st.order)

        # A: transmit beams
        pre = al_objective_w(st)
        st.W = update_transmit_beam(st, cfg.beam_mode)
        post = al_objective_w(st)

        # B: positions, phases/distances, pinching vectors
        st.X = update_positions(scenario, st, cfg)
        st.theta, st.dpu = update_phase_distance(scenario, st, dpu_prev=refresh_distance(scenario, st))
        u_phys = _channels(scenario, st.users, st.X)
        st.u, _ = update_pinching_vectors(st)

        # C: beta and alpha against the SINR constraints
        z = np.einsum("qkn,nj->qkj", u_phys, st.W) + st.rho * st.lambda_beta
        st.beta, st.alpha = _p4(z, st.alpha, s, noise, cfg.interference, cfg.p4_rounds)

        # D: duals / penalty
        bU, bT, rb = residuals(scenario, st, u_phys)
        viol_rel = float(np.linalg.norm(rb) / max(np.linalg.norm(st.beta), 1e-300))
        st.lambda_u, st.lambda_theta, st.lambda_beta, st.rho, st.target = update_duals_penalty(st, cfg, bU, bT, rb)

        # E: evaluate the iterate
        out = evaluate(st)
        if out is not None and (best is None or out[0] < best[0]):
            best, best_X, best_order = out, st.X.copy(), st.order.copy()
        w_power = float(np.sum(np.abs(st.W) ** 2))
        b_u, b_t = float(np.max(np.abs(bU))), float(np.max(np.abs(bT)))
        viol = max(b_u, b_t, viol_rel)
        trace["power"].append(best[0] if best is not None else np.inf)
        trace["iterate_power"].append(out[0] if out is not None else np.inf)
        trace["violation"].append(viol)
        trace["b_u"].append(b_u)
        trace["b_theta"].append(b_t)
        trace["b_beta"].append(viol_rel)
        trace["rho"].append(st.rho)
        trace["al_w_pre"].append(pre)
        trace["al_w_post"].append(post)
        trace["w_power"].append(w_power)
        log.debug("mmpdd iter %d power %.6g viol %.3g rho %.3g", it, trace["power"][-1], viol, st.rho)

        change = abs(w_power - prev_power) / max(prev_power, 1e-300)
        prev_power = w_power
        if viol <= cfg.eps and change <= cfg.eps:
            break

    trace["state"] = st
    Q, K = scenario.Q, scenario.K
    if best is None:
        ba = BeamAllocation(np.zeros((scenario.layout.N, Q), complex), np.full((Q, K), 1.0 / K), st.order)
        rep = check_feasibility(scenario, st.X, ba, interference=cfg.interference)
        return SolverResult(st.X, ba, np.inf, False, it, trace, rep)
    power, W, alpha = best
    ba = BeamAllocation(W, alpha, best_order)
    rep = check_feasibility(scenario, best_X, ba, interference=cfg.interference)
    return SolverResult(best_X, ba, power, rep.feasible, it, trace, rep)
