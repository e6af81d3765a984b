"""NOMA performance quantities: SINR under SIC, rates, power, feasibility.

Channel arrays are handled per cluster with shape ``(Q, K, N)``.  Inside a
cluster, users are indexed weakest-first so that user ``k`` is decoded by
every user ``k' >= k``; :func:`sic_order` produces that ordering.
"""

from dataclasses import dataclass, field

import numpy as np

from .channel import Scenario, channel_rows, validate_positions

__all__ = [
    "BeamAllocation",
    "QosRequirements",
    "FeasibilityReport",
    "SolverResult",
    "sic_order",
    "apply_order",
    "sinr",
    "sinr_matrix",
    "min_sinr",
    "achievable_rate",
    "total_transmit_power",
    "rate_to_sinr_threshold",
    "backward_recursion",
    "min_power_for_beams",
    "check_feasibility",
]


@dataclass
class BeamAllocation:
    """Transmit beams ``W`` (N x Q), power fractions ``alpha`` (Q x K).

    ``order[q]`` lists the scenario's user indices of cluster ``q`` in SIC
    order (weakest first); row ``k`` of ``alpha`` belongs to user
    ``order[q, k]``.
    """

    W: np.ndarray
    alpha: np.ndarray
    order: np.ndarray | None = None

    def __post_init__(self):
        self.W = np.asarray(self.W, dtype=complex)
        self.alpha = np.asarray(self.alpha, dtype=float)
        if self.order is None:
            Q, K = self.alpha.shape
            self.order = np.tile(np.arange(K), (Q, 1))
        self.order = np.asarray(self.order, dtype=int)


@dataclass
class QosRequirements:
    """Per-user SINR targets (linear) and noise power (W).

    ``r_min`` is kept for reference when the targets come from rates; see
    :meth:`from_rates`.
    """

    sinr_min: np.ndarray
    noise_power: float
    r_min: np.ndarray | None = None

    def __post_init__(self):
        self.sinr_min = np.asarray(self.sinr_min, dtype=float)
        if self.noise_power <= 0:
            raise ValueError("noise_power must be positive")
        if np.any(self.sinr_min < 0):
            raise ValueError("sinr_min must be non-negative")

    @classmethod
    def from_rates(cls, r_min, noise_power):
        r = np.asarray(r_min, dtype=float)
        return cls(rate_to_sinr_threshold(r), noise_power, r)


@dataclass
class FeasibilityReport:
    feasible: bool
    worst_sinr_slack: float
    spacing_slack: float
    alpha_slack: float
    min_sinr: np.ndarray
    min_sinr_slack_db: float = float("nan")
    violations: list = field(default_factory=list)


@dataclass
class SolverResult:
    """Output of an optimizer run."""

    X: np.ndarray
    allocation: BeamAllocation
    power: float
    feasible: bool
    iterations: int
    trace: dict
    report: FeasibilityReport | None = None

    @property
    def W(self):
        return self.allocation.W

    @property
    def alpha(self):
        return self.allocation.alpha


def sic_order(U3: np.ndarray) -> np.ndarray:
    """Per-cluster permutation sorting users by ascending channel norm.

    Ties keep the original index order.
    """
    norms = np.linalg.norm(U3, axis=-1)
    return np.argsort(norms, axis=-1, kind="stable")


def apply_order(A: np.ndarray, order: np.ndarray) -> np.ndarray:
    """Reorder the user axis of ``A`` with a permutation from :func:`sic_order`.

    ``order`` has shape ``(..., Q, K)`` and ``A`` shape ``(..., Q, K, *rest)``
    with the same leading dimensions.
    """
    A = np.asarray(A)
    order = np.asarray(order)
    idx = order.reshape(order.shape + (1,) * (A.ndim - order.ndim))
    return np.take_along_axis(A, idx, axis=order.ndim - 1)


INTERFERENCE_MODELS = ("all", "representative")


def _mask_gains(gain, interference):
    """Drop inter-cluster gains seen by non-strongest users when requested.

    ``gain[..., q, kp, j]`` is ``|u_{q,kp} w_j|^2``.  Under the
    ``"representative"`` model only the strongest user of each cluster (the
    one zero-forcing nulls at) sees other clusters' beams; weaker users are
    treated as interference free, as in the idealized ZF analysis.
    """
    if interference == "all":
        return gain
    if interference != "representative":
        raise ValueError(f"unknown interference model {interference!r}")
    Q, K = gain.shape[-3], gain.shape[-2]
    keep = np.eye(Q, dtype=bool)[:, None, :] | (np.arange(K) == K - 1)[None, :, None]
    return np.where(keep, gain, 0.0)


def sinr_matrix(U3, W, alpha, noise_power, interference: str = "all") -> np.ndarray:
    """All decoding SINRs.

    Returns ``S`` of shape ``(..., Q, K, K)`` where ``S[q, k, kp]`` is the SINR
    of user ``k``'s stream measured at user ``kp``; entries with ``kp < k``
    are ``nan``.  Leading batch dimensions are broadcast.  ``interference``
    selects the inter-cluster model, see :func:`_mask_gains`.
    """
    U3 = np.asarray(U3)
    W = np.asarray(W)
    alpha = np.asarray(alpha, dtype=float)
    # gain[..., q, kp, j] = |u_{q,kp} w_j|^2
    gain = _mask_gains(np.abs(np.einsum("...qkn,...nj->...qkj", U3, W)) ** 2, interference)
    Q, K = U3.shape[-3], U3.shape[-2]
    own = np.diagonal(gain, axis1=-3, axis2=-1)  # (..., K, Q)
    own = np.swapaxes(own, -1, -2)  # (..., Q, K)
    inter = gain.sum(axis=-1) - own
    # tail[..., q, k] = sum_{i>k} alpha_{q,i}
    tail = np.cumsum(alpha[..., ::-1], axis=-1)[..., ::-1] - alpha
    num = own[..., :, None, :] * alpha[..., :, :, None]
    den = own[..., :, None, :] * tail[..., :, :, None] + inter[..., :, None, :] + noise_power
    S = num / den
    mask = np.tril(np.ones((K, K), dtype=bool), k=-1)  # kp < k
    return np.where(mask, np.nan, S)


def sinr(q: int, k: int, k_prime: int, U3, ba: BeamAllocation, noise_power: float,
         interference: str = "all") -> float:
    """SINR of user ``k``'s stream of cluster ``q`` decoded at user ``k_prime``."""
    if k_prime < k:
        raise ValueError("a stream is only decoded by users at or above its SIC position")
    w = ba.W
    u = U3[q, k_prime]
    g = np.abs(u @ w) ** 2
    signal = g[q]
    inter = g.sum() - signal
    if interference == "representative" and k_prime < U3.shape[1] - 1:
        inter = 0.0
    tail = ba.alpha[q, k + 1:].sum()
    return float(signal * ba.alpha[q, k] / (signal * tail + inter + noise_power))


def min_sinr(U3, W, alpha, noise_power, interference: str = "all") -> np.ndarray:
    """Worst decoding SINR of every user, shape ``(..., Q, K)``."""
    with np.errstate(all="ignore"):
        S = sinr_matrix(U3, W, alpha, noise_power, interference)
    S = np.where(np.isnan(S), np.inf, S)
    return np.min(S, axis=-1)


def achievable_rate(q: int, k: int, U3, ba: BeamAllocation, noise_power: float) -> float:
    """Rate in bps/Hz of user ``k`` in cluster ``q`` (worst decoder)."""
    K = U3.shape[1]
    worst = min(sinr(q, k, kp, U3, ba, noise_power) for kp in range(k, K))
    return float(np.log2(1.0 + worst))


def total_transmit_power(W) -> float:
    return float(np.sum(np.abs(np.asarray(W)) ** 2))


def rate_to_sinr_threshold(r_min):
    """Linear SINR that supports ``r_min`` bps/Hz."""
    r = np.asarray(r_min, dtype=float)
    if np.any(r < 0):
        raise ValueError("rate requirement must be non-negative")
    out = np.exp2(r) - 1.0
    return float(out) if out.ndim == 0 else out


def backward_recursion(a, sinr_min) -> np.ndarray:
    """Smallest per-user powers meeting the SIC chain, last axis = users.

    Solves ``x_K = a_K`` and ``x_k = a_k + s_k * sum_{i>k} x_i`` from the
    strongest user down.
    """
    a = np.asarray(a, dtype=float)
    s = np.broadcast_to(np.asarray(sinr_min, dtype=float), a.shape)
    x = np.empty_like(a)
    tail = np.zeros(a.shape[:-1])
    for k in range(a.shape[-1] - 1, -1, -1):
        x[..., k] = a[..., k] + s[..., k] * tail
        tail = tail + x[..., k]
    return x


def _gains(U3, V):
    return np.abs(np.einsum("...qkn,...nj->...qkj", U3, V)) ** 2


def _requirements(g, p, s, noise):
    """Per-user power floors given cluster powers ``p`` (before the chain)."""
    own = np.swapaxes(np.diagonal(g, axis1=-3, axis2=-1), -1, -2)  # (..., Q, K)
    inter = np.einsum("...qkj,...j->...qk", g, p) - own * p[..., :, None]
    with np.errstate(divide="ignore", invalid="ignore"):
        r = (inter + noise) / own
    # worst decoder among kp >= k
    r = np.maximum.accumulate(r[..., ::-1], axis=-1)[..., ::-1]
    return s * r


def min_power_for_beams(U3, V, sinr_min, noise_power, power_cap: float = 1e6, interference: str = "all"):
    """Minimal NOMA powers for fixed beam directions.

    With ``W = V diag(sqrt(p))``, finds the componentwise smallest per-user
    delivered powers ``P[q, k] = p_q alpha_{q,k}`` such that every decoding
    SINR meets ``sinr_min``.  Inter-cluster coupling makes this a fixed point
    ``p = F(p)`` with ``F`` a maximum of affine maps; it is solved exactly by
    policy iteration on the worst-decoder pattern.

    Parameters
    ----------
    U3 : ndarray, shape (..., Q, K, N)
        SIC-ordered effective channels.
    V : ndarray, shape (..., N, Q)
        Beam directions (any scaling).
    sinr_min : array_like, shape (Q, K)
    noise_power : float
    power_cap : float
        Solutions whose transmit power exceeds this are reported infeasible.
    interference : {"all", "representative"}
        Inter-cluster interference model.

    Returns
    -------
    P : ndarray, shape (..., Q, K)
        Per-user powers (``inf`` where infeasible).
    feasible : ndarray of bool, shape (...)
    """
    with np.errstate(all="ignore"):
        return _min_power(np.asarray(U3), np.asarray(V), sinr_min, noise_power, power_cap, interference)


def _solve_batched(A, b):
    try:
        return np.linalg.solve(A, b[..., None])[..., 0]
    except np.linalg.LinAlgError:
        out = np.full(b.shape, np.inf)
        for i in np.ndindex(b.shape[:-1]):
            try:
                out[i] = np.linalg.solve(A[i], b[i])
            except np.linalg.LinAlgError:
                pass
        return out


def _min_power(U3, V, sinr_min, noise_power, power_cap, interference):
    Q, K = U3.shape[-3], U3.shape[-2]
    s_in = np.asarray(sinr_min, dtype=float)
    batch = np.broadcast_shapes(U3.shape[:-3], V.shape[:-2], s_in.shape[:-2])
    s = np.broadcast_to(s_in, batch + (Q, K))
    g = np.broadcast_to(_mask_gains(_gains(U3, V), interference), batch + (Q, K, Q))
    vnorm2 = np.broadcast_to(np.sum(np.abs(V) ** 2, axis=-2), batch + (Q,))
    own = np.swapaxes(np.diagonal(g, axis1=-3, axis2=-1), -1, -2)
    # chain weights: p_q = sum_k c_{q,k} a_{q,k}, c_{q,k} = prod_{p<k}(1 + s_p)
    c = np.concatenate([np.ones(batch + (Q, 1)), np.cumprod(1 + s[..., :-1], axis=-1)], axis=-1)

    p = np.zeros(batch + (Q,))
    feasible = np.all(own > 0, axis=(-1, -2))
    eye = np.eye(Q)
    pattern_prev = None
    for _ in range(4 * K + 8):
        # worst-decoder index kp*(q, k) for the current p
        with np.errstate(divide="ignore", invalid="ignore"):
            inter = np.einsum("...qkj,...j->...qk", g, p) - own * p[..., :, None]
            ratio = (inter + noise_power) / own
        ratio = np.where(np.isfinite(ratio), ratio, np.inf)
        idx = np.empty(batch + (Q, K), dtype=int)
        best = np.full(batch + (Q,), -np.inf)
        bidx = np.full(batch + (Q,), K - 1)
        for k in range(K - 1, -1, -1):
            upd = ratio[..., k] > best
            best = np.where(upd, ratio[..., k], best)
            bidx = np.where(upd, k, bidx)
            idx[..., k] = bidx
        if pattern_prev is not None and np.array_equal(idx, pattern_prev):
            break
        pattern_prev = idx
        # gather g[q, kp*(q,k), :] -> (..., Q, K, Q)
        gsel = np.take_along_axis(g, idx[..., None], axis=-2)
        osel = np.take_along_axis(own, idx, axis=-1)
        with np.errstate(divide="ignore", invalid="ignore"):
            wgt = (c * s) / osel  # (..., Q, K)
            A = np.einsum("...qk,...qkj->...qj", wgt, gsel) * (1 - eye)
            b = noise_power * wgt.sum(axis=-1)
        ok = np.all(np.isfinite(A), axis=(-1, -2)) & np.all(np.isfinite(b), axis=-1)
        A = np.where(ok[..., None, None], A, 0.0)
        b = np.where(ok[..., None], b, 1.0)
        p_new = _solve_batched(eye - A, b)
        feasible = feasible & ok & np.all(np.isfinite(p_new) & (p_new >= 0), axis=-1)
        p = np.where(feasible[..., None], p_new, 0.0)

    # per-user powers from the chain at the final cluster powers
    with np.errstate(divide="ignore", invalid="ignore"):
        a = _requirements(g, p, s, noise_power)
    P = backward_recursion(a, s)
    # the pattern loop must have reached a fixed point p = F(p)
    settled = np.all(np.abs(P.sum(axis=-1) - p) <= 1e-8 * np.maximum(p, 1e-300), axis=-1)
    feasible = feasible & settled
    power = np.sum(P.sum(axis=-1) * vnorm2, axis=-1)
    feasible = feasible & np.all(np.isfinite(P), axis=(-1, -2)) & (power <= power_cap)
    P = np.where(feasible[..., None, None], P, np.inf)
    return P, feasible


def check_feasibility(scenario: Scenario, X, ba: BeamAllocation, rel_tol: float = 1e-9,
                      interference: str = "all") -> FeasibilityReport:
    """Evaluate every constraint of the power-minimization problem.

    Slacks are linear and negative when violated: ``worst_sinr_slack`` is
    ``min(min_sinr - sinr_min)``, ``spacing_slack`` the smallest margin of the
    spacing and boundary constraints (m), ``alpha_slack`` the smallest margin
    of the power-fraction constraints.
    """
    X = np.asarray(X, dtype=float)
    lay = scenario.layout
    U3 = apply_order(channel_rows(scenario, X), ba.order)
    s = apply_order(scenario.sinr_min, ba.order)
    ms = min_sinr(U3, ba.W, ba.alpha, scenario.noise_power, interference)
    sinr_slack = float(np.min(ms - s))

    gaps = np.diff(X, axis=0) - lay.delta if X.shape[0] > 1 else np.array([np.inf])
    spacing_slack = float(min(np.min(gaps), np.min(X), np.min(lay.x_max - X)))

    al = ba.alpha
    alpha_slack = -float(np.max(np.abs(al.sum(axis=1) - 1.0)))
    if al.shape[1] >= 2:
        alpha_slack = min(alpha_slack, float(np.min(al)), float(np.min(1.0 - al)))

    ok = (
        bool(np.all(ms >= s * (1.0 - rel_tol)))
        and spacing_slack >= -rel_tol * lay.x_max
        and alpha_slack >= -rel_tol
    )
    with np.errstate(divide="ignore"):
        slack_db = np.where(s > 0, 10 * np.log10(np.maximum(ms, 1e-300) / np.where(s > 0, s, 1.0)), np.inf)
    return FeasibilityReport(
        feasible=ok,
        worst_sinr_slack=sinr_slack,
        spacing_slack=spacing_slack,
        alpha_slack=alpha_slack,
        min_sinr=ms,
        min_sinr_slack_db=float(np.min(slack_db)),
        violations=validate_positions(X, lay, tol=rel_tol * lay.x_max),
    )
