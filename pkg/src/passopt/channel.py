"""Geometry and channel model for pinching-antenna waveguide arrays.

Waveguide ``n`` (0-based here) runs along the x-axis at ``y = n * d0y`` and
height ``dz``, fed at ``x = 0``.  Each waveguide carries ``L`` pinching
antennas (PAs) whose x-coordinates form one column of the ``(L, N)`` position
matrix ``X``.  Users sit on the ground plane (``z = 0``).

Every PA radiates a line-of-sight spherical wave,

    h = eta * exp(-1j * kappa * d) / d,

and the in-waveguide response from the feed to a PA at ``x`` is

    g = exp(-1j * 2 * pi * x / lambda_g) / sqrt(L).

The effective (pinching) channel of a user is the N-vector ``u = h^H G``.
"""

from dataclasses import dataclass, field

import numpy as np

SPEED_OF_LIGHT = 2.998e8  # m/s

__all__ = [
    "SPEED_OF_LIGHT",
    "PhysConstants",
    "WaveguideLayout",
    "UserLayout",
    "Scenario",
    "PinchingConfig",
    "EffectiveChannel",
    "Violation",
    "free_space_channel",
    "in_waveguide_response",
    "build_waveguide_matrix",
    "effective_channel",
    "channel_rows",
    "channel_rows_batch",
    "pa_user_distances",
    "validate_positions",
    "uniform_positions",
    "GeometryError",
]


class GeometryError(ValueError):
    """Raised for singular geometry or an infeasible antenna layout."""


@dataclass(frozen=True)
class PhysConstants:
    """Carrier-dependent constants.

    Parameters
    ----------
    carrier_frequency : float
        Carrier frequency in Hz.
    n_eff : float
        Effective refractive index of the dielectric waveguide.
    c : float
        Speed of light used for all derived quantities.
    """

    carrier_frequency: float = 15e9
    n_eff: float = 1.4
    c: float = SPEED_OF_LIGHT

    def __post_init__(self):
        if self.carrier_frequency <= 0 or self.n_eff <= 0 or self.c <= 0:
            raise ValueError("carrier_frequency, n_eff and c must be positive")

    @property
    def wavelength(self) -> float:
        return self.c / self.carrier_frequency

    @property
    def wavenumber(self) -> float:
        return 2.0 * np.pi / self.wavelength

    @property
    def eta(self) -> float:
        return self.c / (4.0 * np.pi * self.carrier_frequency)

    @property
    def guided_wavelength(self) -> float:
        return self.wavelength / self.n_eff


@dataclass(frozen=True)
class WaveguideLayout:
    """Waveguide array geometry.

    ``delta`` is the minimum spacing between neighbouring PAs on a waveguide.
    """

    N: int = 4
    L: int = 4
    d0y: float = 3.0
    dz: float = 10.0
    x_max: float = 30.0
    delta: float = 0.01

    def __post_init__(self):
        if self.N < 1 or self.L < 1:
            raise GeometryError("need at least one waveguide and one PA per waveguide")
        if self.x_max <= 0 or self.dz < 0 or self.d0y < 0 or self.delta < 0:
            raise GeometryError("lengths must be non-negative and x_max positive")
        if (self.L - 1) * self.delta > self.x_max:
            raise GeometryError(
                f"{self.L} PAs with spacing {self.delta} m do not fit in x_max={self.x_max} m"
            )

    @property
    def M(self) -> int:
        return self.N * self.L

    @property
    def y(self) -> np.ndarray:
        """y-coordinate of every waveguide."""
        return np.arange(self.N) * self.d0y

    @property
    def y_span(self) -> float:
        return (self.N - 1) * self.d0y


@dataclass(frozen=True)
class UserLayout:
    """User positions grouped by cluster, shape ``(Q, K, 3)``."""

    positions: np.ndarray

    def __post_init__(self):
        pos = np.asarray(self.positions, dtype=float)
        if pos.ndim != 3 or pos.shape[2] != 3:
            raise ValueError("positions must have shape (Q, K, 3)")
        object.__setattr__(self, "positions", pos)

    @property
    def Q(self) -> int:
        return self.positions.shape[0]

    @property
    def K(self) -> int:
        return self.positions.shape[1]

    @property
    def flat(self) -> np.ndarray:
        return self.positions.reshape(-1, 3)

    def check_bounds(self, layout: WaveguideLayout, tol: float = 1e-12):
        p = self.positions
        ok = (
            np.all(np.abs(p[..., 2]) <= tol)
            and np.all(p[..., 0] >= -tol)
            and np.all(p[..., 0] <= layout.x_max + tol)
            and np.all(p[..., 1] >= -tol)
            and np.all(p[..., 1] <= layout.y_span + tol)
        )
        return bool(ok)


@dataclass(frozen=True)
class Scenario:
    """Immutable problem instance.

    ``sinr_min`` is per-user, shape ``(Q, K)``, linear scale; ``noise_power``
    is in watts.
    """

    consts: PhysConstants
    layout: WaveguideLayout
    users: UserLayout
    sinr_min: np.ndarray
    noise_power: float
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        s = np.broadcast_to(np.asarray(self.sinr_min, dtype=float), (self.Q, self.K)).copy()
        if np.any(s < 0):
            raise ValueError("sinr_min must be non-negative")
        if self.noise_power <= 0:
            raise ValueError("noise_power must be positive")
        object.__setattr__(self, "sinr_min", s)

    @property
    def Q(self) -> int:
        return self.users.Q

    @property
    def K(self) -> int:
        return self.users.K


class PinchingConfig:
    """PA x-coordinates, an ``(L, N)`` matrix with sorted, well-spaced columns.

    The constructor sorts every column and then validates, so proposals from
    the optimizers may arrive unordered.
    """

    __slots__ = ("X",)

    def __init__(self, X, layout: WaveguideLayout | None = None, tol: float = 1e-9):
        X = np.sort(np.array(X, dtype=float, ndmin=2), axis=0)
        if layout is not None:
            if X.shape != (layout.L, layout.N):
                raise GeometryError(f"X has shape {X.shape}, expected {(layout.L, layout.N)}")
            bad = validate_positions(X, layout, tol=tol)
            if bad:
                raise GeometryError("infeasible PA positions: " + "; ".join(map(str, bad)))
        self.X = X

    def __array__(self, dtype=None, copy=None):
        return self.X if dtype is None else self.X.astype(dtype)

    def __repr__(self):
        return f"PinchingConfig({self.X.tolist()})"

    @classmethod
    def uniform(cls, layout: WaveguideLayout) -> "PinchingConfig":
        return cls(uniform_positions(layout), layout)


@dataclass(frozen=True)
class EffectiveChannel:
    """Effective channel rows ``U`` (shape ``(Q*K, N)``) plus raw pieces."""

    U: np.ndarray
    h: np.ndarray | None = None
    G: np.ndarray | None = None
    Q: int = 1
    K: int = 1

    @property
    def by_cluster(self) -> np.ndarray:
        return self.U.reshape(self.Q, self.K, -1)


@dataclass(frozen=True)
class Violation:
    kind: str  # "spacing" or "bound"
    waveguide: int
    index: int
    magnitude: float

    def __str__(self):
        return f"{self.kind} violation at waveguide {self.waveguide}, PA {self.index}: {self.magnitude:.3g} m"


def free_space_channel(user, pa, consts: PhysConstants) -> complex:
    """Line-of-sight coefficient between one user and one PA."""
    d = float(np.linalg.norm(np.asarray(user, float) - np.asarray(pa, float)))
    if d <= 0.0:
        raise GeometryError("user and PA coincide; channel is singular")
    return consts.eta * np.exp(-1j * consts.wavenumber * d) / d


def in_waveguide_response(x, L: int, consts: PhysConstants):
    """Feed-to-PA response for a PA at distance ``x`` along its waveguide."""
    x = np.asarray(x, dtype=float)
    if np.any(x < 0):
        raise GeometryError("PA position along the waveguide must be non-negative")
    if L < 1:
        raise ValueError("L must be at least 1")
    out = np.exp(-2j * np.pi * x / consts.guided_wavelength) / np.sqrt(L)
    return complex(out) if out.ndim == 0 else out


def build_waveguide_matrix(X, consts: PhysConstants, layout: WaveguideLayout) -> np.ndarray:
    """Block-diagonal ``(M, N)`` matrix of in-waveguide responses."""
    X = np.asarray(X, dtype=float)
    L, N = X.shape
    G = np.zeros((L * N, N), dtype=complex)
    for n in range(N):
        G[n * L:(n + 1) * L, n] = in_waveguide_response(X[:, n], L, consts)
    return G


def pa_user_distances(X, users, layout: WaveguideLayout) -> np.ndarray:
    """Distances from every user to every PA.

    ``users`` has shape ``(U, 3)`` and ``X`` shape ``(..., L, N)``; the result
    has shape ``(..., U, L, N)``.
    """
    X = np.asarray(X, dtype=float)
    users = np.asarray(users, dtype=float)
    dx = X[..., None, :, :] - users[:, 0, None, None]
    dy = layout.y[None, None, :] - users[:, 1, None, None]
    dzz = layout.dz - users[:, 2, None, None]
    return np.sqrt(dx * dx + dy * dy + dzz * dzz)


def channel_rows_batch(X, users, consts: PhysConstants, layout: WaveguideLayout) -> np.ndarray:
    """Effective channel rows for a batch of position matrices.

    Returns shape ``(..., U, N)`` for ``X`` of shape ``(..., L, N)``.
    """
    X = np.asarray(X, dtype=float)
    d = pa_user_distances(X, users, layout)
    if np.any(d <= 0):
        raise GeometryError("a user coincides with a PA")
    L = X.shape[-2]
    phase = consts.wavenumber * (d + consts.n_eff * X[..., None, :, :])
    terms = consts.eta * np.exp(-1j * phase) / (d * np.sqrt(L))
    return terms.sum(axis=-2)


def channel_rows(scenario: Scenario, X) -> np.ndarray:
    """Effective channel of every user, shape ``(Q, K, N)``."""
    U = channel_rows_batch(X, scenario.users.flat, scenario.consts, scenario.layout)
    return U.reshape(scenario.Q, scenario.K, -1)


def effective_channel(scenario: Scenario, X, keep_raw: bool = False) -> EffectiveChannel:
    """Effective channel ``U = h^H G`` of all users at positions ``X``.

    With ``keep_raw`` the stacked per-PA rows ``h`` (shape ``(Q*K, M)``,
    waveguide-major) and the waveguide matrix ``G`` are returned as well and
    ``U`` is formed as their product.
    """
    X = np.asarray(X, dtype=float)
    Q, K = scenario.Q, scenario.K
    if not keep_raw:
        U = channel_rows(scenario, X).reshape(Q * K, -1)
        return EffectiveChannel(U=U, Q=Q, K=K)
    c, lay = scenario.consts, scenario.layout
    d = pa_user_distances(X, scenario.users.flat, lay)  # (QK, L, N)
    if np.any(d <= 0):
        raise GeometryError("a user coincides with a PA")
    h = c.eta * np.exp(-1j * c.wavenumber * d) / d
    h = np.transpose(h, (0, 2, 1)).reshape(Q * K, -1)  # waveguide-major
    G = build_waveguide_matrix(X, c, lay)
    return EffectiveChannel(U=h @ G, h=h, G=G, Q=Q, K=K)


def validate_positions(X, layout: WaveguideLayout, tol: float = 0.0) -> list:
    """List every spacing and bound violation of ``X`` (empty when feasible).

    Spacing violations carry the shortfall ``delta - gap``; bound violations
    carry the distance outside ``[0, x_max]``.
    """
    X = np.asarray(X, dtype=float)
    out = []
    L, N = X.shape
    for n in range(N):
        col = X[:, n]
        for l in range(L):
            if col[l] < -tol:
                out.append(Violation("bound", n, l, float(-col[l])))
            elif col[l] > layout.x_max + tol:
                out.append(Violation("bound", n, l, float(col[l] - layout.x_max)))
        for l in range(1, L):
            gap = col[l] - col[l - 1]
            if gap < layout.delta - tol:
                out.append(Violation("spacing", n, l, float(layout.delta - gap)))
    return out


def uniform_positions(layout: WaveguideLayout) -> np.ndarray:
    """Evenly spaced PAs at the centres of ``L`` equal cells of ``[0, x_max]``."""
    step = max(layout.x_max / layout.L, layout.delta)
    start = max(0.0, 0.5 * (layout.x_max - (layout.L - 1) * step))
    col = start + np.arange(layout.L) * step
    return np.repeat(col[:, None], layout.N, axis=1)
