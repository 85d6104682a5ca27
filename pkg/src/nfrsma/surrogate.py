"""Concave quadratic minorizers of the stream-rate bounds.

Each rate bound log2(1 + |h^H p_s|^2 / (sum_j w_j |h^H p_j|^2 + noise)) admits
a quadratic lower bound that is tight at a chosen expansion point and shares
its gradient there. Writing g_j = h^H p_j and freezing the effective noise at
the expansion point, the bound is

    f(P) = -kappa * sum_j q_j |g_j|^2 + 2 Re(y^H p_s) + z,

with scalar auxiliaries u = g_s / (D + noise), v = 1 - conj(u) g_s evaluated
at the expansion (D sums q_j |g_j|^2 there), kappa = |u|^2 / (v ln 2),
y = (u / (v ln 2)) h, and z collecting the constants plus -log2(v). q_j are
the quadratic weights: all ones for the common stream; for a private stream
the common column is damped by the SIC residual factor and the own column
keeps weight one.

The effective noise is re-frozen every time coefficients are rebuilt, so the
minorization and gradient-consistency properties hold against the rate with
the noise held at the expansion level.
"""

from __future__ import annotations

from dataclasses import dataclass
import numpy as np

from .model import ChannelSet
from .rates import effective_noise, stream_rate

LN2 = float(np.log(2.0))

COMMON = "common"
PRIVATE = "private"


def quad_weights(n_streams: int, stream: str, k: int, delta_k: float) -> np.ndarray:
    """Quadratic weights q_j of the surrogate denominator sum.

    Unlike the interference weights of `rates.stream_rate`, the signal
    column is included with weight one.
    """
    if stream == COMMON:
        return np.ones(n_streams)
    q = np.ones(n_streams)
    q[0] = delta_k
    q[k] = 1.0  # own column stays (the bound tracks the full MSE denominator)
    return q


@dataclass
class SurrogateCoeffs:
    """Coefficients of one quadratic minorizer, frozen at `expansion`."""

    h: np.ndarray          # (n,) channel used in the rank-1 quadratic
    u: complex             # scalar auxiliary at the expansion
    v: float               # scalar auxiliary in (0, 1]
    kappa: float           # |u|^2 / (v ln 2), scales the rank-1 quadratic
    y: np.ndarray          # (n,) linear coefficient: term 2 Re(y^H p_signal)
    z: float               # constant term (includes -log2(v))
    weights: np.ndarray    # (S,) quadratic weights q_j
    signal_col: int
    noise: float           # frozen effective noise at the expansion
    expansion: np.ndarray  # (n, S) precoder the coefficients were built at

    @property
    def x(self) -> np.ndarray:
        """The (n, n) negative-semidefinite rank-1 quadratic coefficient."""
        return -(self.kappa) * np.outer(self.h, self.h.conj())

    def interference_weights(self) -> np.ndarray:
        w = self.weights.copy()
        w[self.signal_col] = 0.0
        return w

    def frozen_rate(self, P: np.ndarray) -> float:
        """Rate bound at P with the noise frozen at the expansion level."""
        return stream_rate(self.h, P, self.signal_col,
                           self.interference_weights(), self.noise)


def build_surrogate_raw(h: np.ndarray, P_tilde: np.ndarray, signal_col: int,
                        weights: np.ndarray, noise: float) -> SurrogateCoeffs:
    """Build minorizer coefficients from raw arrays (any dimension).

    `noise` is the effective noise already evaluated at the expansion point.
    Raises FloatingPointError when the auxiliaries are numerically invalid
    (only possible for non-finite input).
    """
    P_tilde = np.asarray(P_tilde, complex)
    g = h.conj() @ P_tilde
    D = float(weights @ (np.abs(g) ** 2))
    denom = D + noise
    if not np.isfinite(denom) or denom <= 0:
        raise FloatingPointError("invalid surrogate denominator")
    u = g[signal_col] / denom
    v = 1.0 - float(np.real(np.conj(u) * g[signal_col]))
    if not np.isfinite(v) or v <= 0:
        raise FloatingPointError("auxiliary v left (0, 1]; input must be non-finite")
    kappa = abs(u) ** 2 / (v * LN2)
    y = (u / (v * LN2)) * h
    z = 1.0 / LN2 - (noise * abs(u) ** 2 + 1.0) / (v * LN2) - float(np.log2(v))
    return SurrogateCoeffs(h=h, u=complex(u), v=v, kappa=kappa, y=y, z=z,
                           weights=np.asarray(weights, float).copy(),
                           signal_col=signal_col, noise=noise,
                           expansion=P_tilde.copy())


def build_surrogate(ch: ChannelSet, P_tilde: np.ndarray, delta, k: int,
                    stream: str, sigma2) -> SurrogateCoeffs:
    """Minorizer of user k's common or private rate bound, expanded at P_tilde."""
    if stream not in (COMMON, PRIVATE):
        raise ValueError(f"unknown stream kind {stream!r}")
    dl = np.broadcast_to(np.asarray(delta, float), (ch.K,))
    sig = np.broadcast_to(np.asarray(sigma2, float), (ch.K,))
    noise = effective_noise(P_tilde, ch.eps[k], sig[k])
    S = P_tilde.shape[1]
    col = 0 if stream == COMMON else k + 1
    w = quad_weights(S, stream, k + 1, dl[k])
    return build_surrogate_raw(ch.h_hat[k], P_tilde, col, w, noise)


def eval_surrogate(s: SurrogateCoeffs, P: np.ndarray) -> float:
    """Value of the quadratic minorizer at P (bits/s/Hz)."""
    g = s.h.conj() @ P
    quad = -s.kappa * float(s.weights @ (np.abs(g) ** 2))
    lin = 2.0 * float(np.real(np.vdot(s.y, P[:, s.signal_col])))
    return quad + lin + s.z


def surrogate_gradient(s: SurrogateCoeffs, P: np.ndarray) -> np.ndarray:
    """Conjugate (Wirtinger) gradient of the minorizer, shape like P."""
    g = s.h.conj() @ P
    grad = -s.kappa * s.weights[None, :] * np.outer(s.h, g)
    grad[:, s.signal_col] += s.y
    return grad


def check_gradient_consistency(ch: ChannelSet, P_tilde: np.ndarray, delta,
                               k: int, stream: str, sigma2,
                               step: float = 1e-6,
                               max_dirs: int | None = 64,
                               rng: np.random.Generator | None = None) -> float:
    """Max relative gradient mismatch between minorizer and rate at P_tilde.

    Both sides are differenced centrally over real and imaginary coordinate
    directions (the frozen-noise rate on one side, the surrogate on the
    other); the step is relative to each coordinate's magnitude. Returns
    max |df - dR| / (|dR| + 1e-12) over the sampled directions.
    """
    s = build_surrogate(ch, P_tilde, delta, k, stream, sigma2)
    n, S = P_tilde.shape
    dirs = [(i, j, part) for i in range(n) for j in range(S) for part in (1.0, 1j)]
    if max_dirs is not None and len(dirs) > max_dirs:
        rng = rng or np.random.default_rng(0)
        idx = rng.choice(len(dirs), size=max_dirs, replace=False)
        dirs = [dirs[i] for i in idx]
    worst = 0.0
    for (i, j, part) in dirs:
        h_ij = step * max(1.0, abs(P_tilde[i, j]))
        E = np.zeros_like(P_tilde)
        E[i, j] = part * h_ij
        df = (eval_surrogate(s, P_tilde + E) - eval_surrogate(s, P_tilde - E)) / (2 * h_ij)
        dr = (s.frozen_rate(P_tilde + E) - s.frozen_rate(P_tilde - E)) / (2 * h_ij)
        worst = max(worst, abs(df - dr) / (abs(dr) + 1e-12))
    return worst
