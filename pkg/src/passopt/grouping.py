"""User grouping by joint channel and location correlation.

A K-means-like loop: pick one head per cluster, attach every other user to
the head it correlates with most, then move each head to the member that is
least correlated with the users outside its cluster.  Stops as soon as a head
set repeats.
"""

from dataclasses import dataclass

import numpy as np

from .channel import PhysConstants, Scenario, WaveguideLayout

__all__ = [
    "CorrelationWeights",
    "Clustering",
    "estimated_channels",
    "joint_correlation",
    "correlation_table",
    "assign_users",
    "update_heads",
    "balance_clusters",
    "group_users",
]


@dataclass(frozen=True)
class CorrelationWeights:
    """Mixing weight ``varpi`` of the channel term and spatial scale.

    The location term is ``exp(-dist / sigma_loc**2)``.  With
    ``magnitude=True`` the channel term uses ``|cos|`` instead of
    ``Re{cos}``.
    """

    varpi: float = 0.3
    sigma_loc: float = 3.0
    magnitude: bool = False

    def __post_init__(self):
        if not 0.0 <= self.varpi <= 1.0:
            raise ValueError("varpi must lie in [0, 1]")
        if self.sigma_loc <= 0:
            raise ValueError("sigma_loc must be positive")


@dataclass
class Clustering:
    """``assignment[k]`` is the cluster of user ``k``; ``heads[q]`` a user index."""

    assignment: np.ndarray
    heads: np.ndarray

    def __post_init__(self):
        self.assignment = np.asarray(self.assignment, dtype=int)
        self.heads = np.asarray(self.heads, dtype=int)

    @property
    def Q(self) -> int:
        return len(self.heads)

    def members(self, q: int) -> np.ndarray:
        return np.flatnonzero(self.assignment == q)

    def sizes(self) -> np.ndarray:
        return np.bincount(self.assignment, minlength=self.Q)

    def is_valid(self) -> bool:
        return bool(
            np.all(self.sizes() > 0)
            and np.all(self.assignment[self.heads] == np.arange(self.Q))
        )


def estimated_channels(positions, consts: PhysConstants, layout: WaveguideLayout) -> np.ndarray:
    """Channel rows from a virtual array with one PA above every user on every waveguide.

    Returns shape ``(U, U * N)``.  Only relative phases between users matter for
    the correlation, so the in-waveguide phase is left out.
    """
    P = np.asarray(positions, dtype=float)
    xs = P[:, 0]
    pa = np.stack(np.broadcast_arrays(xs[:, None], layout.y[None, :], layout.dz), axis=-1).reshape(-1, 3)
    d = np.linalg.norm(P[:, None, :] - pa[None, :, :], axis=-1)
    return consts.eta * np.exp(-1j * consts.wavenumber * d) / d


def joint_correlation(h_k, h_i, pos_k, pos_i, w: CorrelationWeights = CorrelationWeights()) -> float:
    """Correlation of two users, 1 for identical users."""
    h_k = np.asarray(h_k)
    h_i = np.asarray(h_i)
    nk, ni = np.linalg.norm(h_k), np.linalg.norm(h_i)
    if nk == 0 or ni == 0:
        raise ValueError("zero-norm channel")
    cos = np.vdot(h_k, h_i) / (nk * ni)
    chan = abs(cos) if w.magnitude else cos.real
    dist = np.linalg.norm(np.asarray(pos_k, dtype=float) - np.asarray(pos_i, dtype=float))
    return float(w.varpi * chan + (1.0 - w.varpi) * np.exp(-dist / w.sigma_loc**2))


def correlation_table(H, positions, w: CorrelationWeights = CorrelationWeights()) -> np.ndarray:
    """All pairwise correlations, a symmetric ``(U, U)`` table."""
    H = np.asarray(H)
    norms = np.linalg.norm(H, axis=1)
    if np.any(norms == 0):
        raise ValueError("zero-norm channel")
    Hn = H / norms[:, None]
    cos = Hn.conj() @ Hn.T
    chan = np.abs(cos) if w.magnitude else cos.real
    P = np.asarray(positions, dtype=float)
    dist = np.linalg.norm(P[:, None, :] - P[None, :, :], axis=-1)
    C = w.varpi * chan + (1.0 - w.varpi) * np.exp(-dist / w.sigma_loc**2)
    return 0.5 * (C + C.T)


def assign_users(C, heads) -> Clustering:
    """Attach every user to its most correlated head; ties go to the lower cluster."""
    C = np.asarray(C)
    heads = np.asarray(heads, dtype=int)
    if len(set(heads.tolist())) != len(heads):
        raise ValueError("heads must be distinct")
    assignment = np.argmax(C[:, heads], axis=1)
    assignment[heads] = np.arange(len(heads))
    return Clustering(assignment, heads.copy())


def update_heads(clustering: Clustering, C) -> np.ndarray:
    """New head per cluster: the member with the least correlation to outsiders."""
    C = np.asarray(C)
    heads = clustering.heads.copy()
    for q in range(clustering.Q):
        mem = clustering.members(q)
        if len(mem) == 0:
            continue
        outside = clustering.assignment != q
        score = C[np.ix_(mem, outside)].sum(axis=1)
        heads[q] = mem[np.argmin(score)]
    return heads


def _repair_empty(clustering: Clustering, C) -> Clustering:
    # move the worst-fitting user of a multi-member cluster into each empty one
    a = clustering.assignment.copy()
    heads = clustering.heads.copy()
    for q in np.flatnonzero(np.bincount(a, minlength=len(heads)) == 0):
        sizes = np.bincount(a, minlength=len(heads))
        movable = np.flatnonzero((sizes[a] > 1) & ~np.isin(np.arange(len(a)), heads))
        fit = C[movable, heads[a[movable]]]
        k = movable[np.argmin(fit)]
        a[k] = q
        heads[q] = k
    return Clustering(a, heads)


def balance_clusters(clustering: Clustering, C, size: int) -> Clustering:
    """Reassign users so that every cluster has exactly ``size`` members.

    Overflow users, least correlated with their head first, move to the best
    cluster that still has room.  Heads never move.
    """
    C = np.asarray(C)
    a = clustering.assignment.copy()
    heads = clustering.heads
    Q = len(heads)
    if len(a) != Q * size:
        raise ValueError(f"{len(a)} users cannot form {Q} clusters of {size}")
    is_head = np.zeros(len(a), dtype=bool)
    is_head[heads] = True
    while True:
        sizes = np.bincount(a, minlength=Q)
        if np.all(sizes == size):
            break
        over = np.flatnonzero(sizes > size)
        cand = np.flatnonzero(np.isin(a, over) & ~is_head)
        k = cand[np.argmin(C[cand, heads[a[cand]]])]
        room = np.flatnonzero(sizes < size)
        a[k] = room[np.argmax(C[k, heads[room]])]
    return Clustering(a, heads.copy())


def _initial_heads(C, Q, positions, init, rng):
    U = C.shape[0]
    if init == "random":
        return np.sort(rng.choice(U, size=Q, replace=False))
    if init == "farthest":
        P = np.asarray(positions, dtype=float)
        heads = [int(np.argmin(P[:, 0] + 1e-9 * P[:, 1]))]
        dmin = np.linalg.norm(P - P[heads[0]], axis=1)
        for _ in range(Q - 1):
            k = int(np.argmax(dmin))
            heads.append(k)
            dmin = np.minimum(dmin, np.linalg.norm(P - P[k], axis=1))
        return np.array(heads)
    raise ValueError(f"unknown init {init!r}")


def group_users(
    positions,
    Q: int | None = None,
    consts: PhysConstants | None = None,
    layout: WaveguideLayout | None = None,
    weights: CorrelationWeights = CorrelationWeights(),
    est_positions=None,
    max_iters: int = 100,
    seed=0,
    init: str = "random",
    heads=None,
    balance: int | None = None,
) -> Clustering:
    """Group users into ``Q`` clusters.

    Parameters
    ----------
    positions : array_like (U, 3) or Scenario
        True user positions; a :class:`Scenario` supplies ``Q``, constants and
        layout as well.
    est_positions : array_like, optional
        Estimated positions used for both metric terms (defaults to the true
        positions).
    init : {"random", "farthest"}
        Initial head selection, ``"random"`` draws from ``seed``.
    heads : array_like, optional
        Explicit initial heads (overrides ``init``).
    balance : int, optional
        Force exactly this many users per cluster after convergence.
    """
    if isinstance(positions, Scenario):
        sc = positions
        positions = sc.users.flat
        Q = sc.Q if Q is None else Q
        consts = sc.consts if consts is None else consts
        layout = sc.layout if layout is None else layout
    if Q is None or consts is None or layout is None:
        raise ValueError("Q, consts and layout are required")
    P = np.asarray(positions if est_positions is None else est_positions, dtype=float)
    U = P.shape[0]
    if U < Q:
        raise ValueError(f"{U} users cannot fill {Q} clusters")
    C = correlation_table(estimated_channels(P, consts, layout), P, weights)
    if heads is None:
        heads = _initial_heads(C, Q, P, init, np.random.default_rng(seed))
    heads = np.asarray(heads, dtype=int)

    seen = {tuple(heads)}
    cl = assign_users(C, heads)
    for _ in range(max_iters):
        new = update_heads(cl, C)
        if tuple(new) in seen:
            if not np.array_equal(new, cl.heads):
                cl = assign_users(C, new)
            break
        seen.add(tuple(new))
        cl = assign_users(C, new)
    if not cl.is_valid():
        cl = _repair_empty(cl, C)
    if balance is not None:
        cl = balance_clusters(cl, C, balance)
    return cl
