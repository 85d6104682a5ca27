"""System configuration, user geometry, and spherical-wave channel generation.

Geometry convention: a uniform linear array of N elements along the y-axis,
centered at the origin, element spacing d. The n-th element (1-based) sits at
y = nd_tilde * d with nd_tilde = (2n - N - 1) / 2. A user at distance r and
angle theta (measured from broadside) has coordinates (r cos(theta),
r sin(theta)).

All powers are linear watts internally; dBm conversion happens once at config
parse time (see `dbm_to_watt`).
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
import numpy as np

SPEED_OF_LIGHT = 2.99792458e8  # m/s


def dbm_to_watt(x_dbm: float) -> float:
    """Convert a dBm value to linear watts (20 dBm -> 0.1 W)."""
    return 10.0 ** (x_dbm / 10.0) * 1e-3


def watt_to_dbm(x_watt: float) -> float:
    if x_watt <= 0:
        raise ValueError("dBm undefined for nonpositive power")
    return 10.0 * np.log10(x_watt / 1e-3)


@dataclass
class SystemConfig:
    """All scalar parameters of one system instance.

    Loop tolerances map to the three nested loops of the penalty solver:
    `tol_sca` stops the surrogate-refresh iteration (relative objective
    increment), `tol_inner` stops the fixed-penalty block-descent loop,
    and `tol_penalty` (absolute, on the squared coupling gap) terminates
    the penalty continuation. `tol_outer` is the increment threshold for
    single-loop drivers (two-stage digital stage, full-digital reference).
    """

    N: int = 128            # antennas
    L: int = 8              # RF chains; must divide N
    K: int = 4              # users
    f_c: float = 30e9       # carrier frequency, Hz
    d: float | None = None  # element spacing, m; default half wavelength
    P_th: float = dbm_to_watt(20.0)      # transmit power budget, W
    sigma2: float | tuple = dbm_to_watt(-84.0)  # noise power, W (shared or per user)
    eps_factor: float = 0.005     # CSI error energy fraction: eps_k^2 = eps_factor*||h_k||^2
    delta: float | tuple = 0.05   # residual common-signal fraction after SIC, in [0,1]
    rho0: float = 100.0           # initial penalty factor
    alpha: float = 0.5            # penalty reduction factor, in (0,1)
    tol_sca: float = 1e-4         # surrogate-refresh loop, relative objective increment
    tol_inner: float = 1e-4       # fixed-penalty block-descent loop, relative increment
    tol_outer: float = 1e-4       # single-loop drivers, relative increment
    tol_penalty: float | None = None   # ||P - FW||_F^2 threshold; default 1e-6*P_th
    max_sca: int = 30             # surrogate-refresh iteration cap
    max_inner: int = 50           # block-descent pass cap per penalty level
    max_outer: int = 30           # penalty continuation cap
    max_stage2: int = 200         # iteration cap for single-loop drivers
    seed: int = 0                 # base RNG seed
    r_min: float = 10.0           # user distance bounds, m
    r_max: float = 20.0
    theta_min: float = -np.pi / 3  # user angular sector, rad
    theta_max: float = np.pi / 3
    enforce_fresnel: bool = False  # clip the distance bounds to the Fresnel region

    def __post_init__(self):
        if self.N <= 0 or self.L <= 0 or self.K <= 0:
            raise ValueError("N, L, K must be positive")
        if self.N % self.L != 0:
            raise ValueError(f"L={self.L} must divide N={self.N}")
        if self.f_c <= 0:
            raise ValueError("carrier frequency must be positive")
        if self.d is None:
            self.d = self.wavelength / 2.0
        if self.d <= 0:
            raise ValueError("element spacing must be positive")
        if self.P_th <= 0:
            raise ValueError("power budget must be positive")
        if np.any(np.asarray(self.sigma2) <= 0):
            raise ValueError("noise power must be positive")
        if self.eps_factor < 0:
            raise ValueError("eps_factor must be nonnegative")
        dl = np.asarray(self.delta)
        if np.any(dl < 0) or np.any(dl > 1):
            raise ValueError("delta must lie in [0, 1]")
        if not 0 < self.alpha < 1:
            raise ValueError("alpha must lie in (0, 1)")
        if self.tol_penalty is None:
            self.tol_penalty = 1e-6 * self.P_th
        for name in ("tol_sca", "tol_inner", "tol_outer", "tol_penalty"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        for name in ("max_sca", "max_inner", "max_outer", "max_stage2"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be at least 1")
        if self.r_min <= 0 or self.r_max < self.r_min:
            raise ValueError("need 0 < r_min <= r_max")

    @property
    def M(self) -> int:
        """Antennas per sub-array."""
        return self.N // self.L

    @property
    def wavelength(self) -> float:
        return SPEED_OF_LIGHT / self.f_c

    @property
    def aperture(self) -> float:
        """Array aperture D = (N - 1) d."""
        return (self.N - 1) * self.d

    @property
    def rayleigh_distance(self) -> float:
        """Far-field boundary 2 D^2 / lambda."""
        return 2.0 * self.aperture ** 2 / self.wavelength

    @property
    def fresnel_min(self) -> float:
        """Inner Fresnel bound 1.2 D."""
        return 1.2 * self.aperture

    def sigma2_vec(self) -> np.ndarray:
        """Per-user noise powers, shape (K,)."""
        return np.broadcast_to(np.asarray(self.sigma2, float), (self.K,)).copy()

    def delta_vec(self) -> np.ndarray:
        """Per-user SIC imperfection factors, shape (K,)."""
        return np.broadcast_to(np.asarray(self.delta, float), (self.K,)).copy()

    def with_updates(self, **kw) -> "SystemConfig":
        """Copy with fields replaced (re-validates).

        A tol_penalty that still sits at its power-derived default is
        re-derived, so sweeping P_th rescales the termination threshold.
        """
        if "tol_penalty" not in kw and self.tol_penalty == 1e-6 * self.P_th:
            kw["tol_penalty"] = None
        return replace(self, **kw)


@dataclass
class UserGeometry:
    """Polar user positions: distances r (m) and angles theta (rad)."""

    r: np.ndarray
    theta: np.ndarray

    def __post_init__(self):
        self.r = np.asarray(self.r, float)
        self.theta = np.asarray(self.theta, float)
        if self.r.shape != self.theta.shape:
            raise ValueError("r and theta must have matching shapes")
        if np.any(self.r <= 0):
            raise ValueError("distances must be positive")

    def in_fresnel(self, cfg: SystemConfig) -> np.ndarray:
        """Boolean mask: 1.2 D <= r_k <= 2 D^2 / lambda."""
        return (self.r >= cfg.fresnel_min) & (self.r <= cfg.rayleigh_distance)


@dataclass
class ChannelSet:
    """Estimated channels and error bounds for one realization.

    h_hat[k] = beta[k] * a(r_k, theta_k), so ||h_hat[k]||^2 = N |beta[k]|^2.
    eps[k] bounds the norm of the (never materialized) estimation error.
    """

    h_hat: np.ndarray      # (K, N) complex
    eps: np.ndarray        # (K,) nonnegative error-norm bounds
    geometry: UserGeometry
    beta: np.ndarray       # (K,) complex gains

    def __post_init__(self):
        self.h_hat = np.asarray(self.h_hat, complex)
        self.eps = np.asarray(self.eps, float)
        self.beta = np.asarray(self.beta, complex)
        if self.h_hat.ndim != 2:
            raise ValueError("h_hat must be (K, N)")
        if np.any(self.eps < 0):
            raise ValueError("error bounds must be nonnegative")

    @property
    def K(self) -> int:
        return self.h_hat.shape[0]

    @property
    def N(self) -> int:
        return self.h_hat.shape[1]

    def response(self, k: int) -> np.ndarray:
        """Unit-modulus array response of user k (channel with gain removed)."""
        return self.h_hat[k] / self.beta[k]

    def validate(self, rtol: float = 1e-9):
        """Check ||h_hat_k||^2 = N |beta_k|^2 within rtol."""
        lhs = np.linalg.norm(self.h_hat, axis=1) ** 2
        rhs = self.N * np.abs(self.beta) ** 2
        if not np.allclose(lhs, rhs, rtol=rtol):
            raise ValueError("channel norms inconsistent with gains")


def _nd_tilde(N: int) -> np.ndarray:
    """Symmetric element indices (2n - N - 1)/2, n = 1..N."""
    return (2.0 * np.arange(1, N + 1) - N - 1) / 2.0


def near_field_response(cfg: SystemConfig, r: float, theta: float) -> np.ndarray:
    """Spherical-wave array response at distance r and angle theta.

    Entry n is exp(j 2 pi / lambda * delta_n) with the second-order phase
    delta_n = nd * d * sin(theta) - (nd * d)^2 cos^2(theta) / (2 r),
    nd = (2n - N - 1)/2. All entries have unit modulus.
    """
    if r <= 0:
        raise ValueError("distance must be positive")
    nd = _nd_tilde(cfg.N) * cfg.d
    phase = nd * np.sin(theta) - nd ** 2 * np.cos(theta) ** 2 / (2.0 * r)
    return np.exp(1j * 2.0 * np.pi / cfg.wavelength * phase)


def far_field_response(cfg: SystemConfig, theta: float) -> np.ndarray:
    """Planar-wave response: the r -> inf limit of `near_field_response`."""
    nd = _nd_tilde(cfg.N) * cfg.d
    return np.exp(1j * 2.0 * np.pi / cfg.wavelength * nd * np.sin(theta))


def channel_gain(cfg: SystemConfig, r: float) -> complex:
    """Free-space gain of the central link: (c / (4 pi f r)) e^{-j 2 pi r / lambda}.

    The amplitude uses the central-link pathloss, uniform across the array
    within the Fresnel region.
    """
    if r <= 0:
        raise ValueError("distance must be positive")
    amp = SPEED_OF_LIGHT / (4.0 * np.pi * cfg.f_c * r)
    return amp * np.exp(-1j * 2.0 * np.pi * r / cfg.wavelength)


def channel_rng(seed: int, *keys: int) -> np.random.Generator:
    """Derive an independent generator from a base seed and integer keys.

    Deterministic across runs and platforms; used to give every
    (sweep value, trial) its own stream.
    """
    return np.random.default_rng([int(seed) & 0xFFFFFFFFFFFFFFFF, *[int(k) for k in keys]])


def sample_channels(cfg: SystemConfig, rng: np.random.Generator) -> ChannelSet:
    """Draw user geometry and build the estimated channel set.

    Distances are uniform on [r_min, r_max] (clipped to the Fresnel region
    when `enforce_fresnel` is set), angles uniform on the configured sector.
    eps_k = sqrt(eps_factor) * ||h_hat_k||.
    """
    if cfg.K <= 0:
        raise ValueError("need at least one user")
    lo, hi = cfg.r_min, cfg.r_max
    if cfg.enforce_fresnel:
        lo = max(lo, cfg.fresnel_min)
        hi = min(hi, cfg.rayleigh_distance)
        if lo > hi:
            raise ValueError("distance bounds do not intersect the Fresnel region")
    r = rng.uniform(lo, hi, cfg.K)
    theta = rng.uniform(cfg.theta_min, cfg.theta_max, cfg.K)
    geom = UserGeometry(r=r, theta=theta)
    beta = np.array([channel_gain(cfg, rk) for rk in r])
    h_hat = np.stack([beta[k] * near_field_response(cfg, r[k], theta[k])
                      for k in range(cfg.K)])
    eps = np.sqrt(cfg.eps_factor) * np.linalg.norm(h_hat, axis=1)
    return ChannelSet(h_hat=h_hat, eps=eps, geometry=geom, beta=beta)


def sample_error_ball(ch: ChannelSet, k: int, rng: np.random.Generator) -> np.ndarray:
    """Diagnostic draw of an error vector uniform in the eps_k ball.

    Direction uniform on the complex sphere, radius eps_k * U^(1/(2N))
    (2N real dimensions). Not used by the optimizer; the reported rates
    are worst-case bounds that never materialize the true channel.
    """
    n = ch.N
    v = rng.standard_normal(n) + 1j * rng.standard_normal(n)
    v /= np.linalg.norm(v)
    radius = ch.eps[k] * rng.uniform() ** (1.0 / (2 * n))
    return radius * v
