"""Achievable-rate lower bounds for common and private streams.

Streams are the columns of a precoder matrix P of shape (N, K+1): column 0
carries the common stream, column k the private stream of user k. All rates
are base-2 logarithms (bits/s/Hz). The bounds replace the channel-error
contribution by a worst-case Gaussian term, giving the closed-form
effective noise eps_k^2 ||P||_F^2 + sigma2_k.
"""

from __future__ import annotations

from dataclasses import dataclass
import numpy as np

from .model import ChannelSet


def effective_noise(P: np.ndarray, eps_k: float, sigma2_k: float) -> float:
    """Worst-case noise power eps_k^2 * ||P||_F^2 + sigma2_k (watts)."""
    return float(eps_k) ** 2 * float(np.linalg.norm(P) ** 2) + float(sigma2_k)


def stream_rate(h: np.ndarray, P: np.ndarray, signal_col: int,
                interference_weights: np.ndarray, noise: float) -> float:
    """log2(1 + SINR) for one stream against weighted interference.

    Parameters
    ----------
    h : (n,) complex
        Channel (inner products are h^H p_j).
    P : (n, S) complex
        Precoder columns.
    signal_col : int
        Column carrying the desired stream.
    interference_weights : (S,) float
        Per-column interference weights; the signal column must carry 0.
    noise : float
        Total noise power in the denominator.
    """
    g = h.conj() @ P
    num = abs(g[signal_col]) ** 2
    den = float(interference_weights @ (np.abs(g) ** 2)) + noise
    return float(np.log2(1.0 + num / den))


def common_weights(n_streams: int) -> np.ndarray:
    """Interference weights seen when decoding the common stream."""
    w = np.ones(n_streams)
    w[0] = 0.0
    return w


def private_weights(n_streams: int, k: int, delta_k: float) -> np.ndarray:
    """Interference weights after imperfect SIC for user k's private stream.

    The common column survives with weight delta_k; the own column carries 0.
    """
    w = np.ones(n_streams)
    w[0] = delta_k
    w[k] = 0.0
    return w


def common_rate_lb(ch: ChannelSet, P: np.ndarray, k: int, sigma2) -> float:
    """Common-stream rate lower bound of user k at precoder P."""
    sig = np.broadcast_to(np.asarray(sigma2, float), (ch.K,))
    noise = effective_noise(P, ch.eps[k], sig[k])
    return stream_rate(ch.h_hat[k], P, 0, common_weights(P.shape[1]), noise)


def private_rate_lb(ch: ChannelSet, P: np.ndarray, delta_k: float, k: int,
                    sigma2) -> float:
    """Private-stream rate lower bound of user k under imperfect SIC."""
    sig = np.broadcast_to(np.asarray(sigma2, float), (ch.K,))
    noise = effective_noise(P, ch.eps[k], sig[k])
    return stream_rate(ch.h_hat[k], P, k + 1,
                       private_weights(P.shape[1], k + 1, delta_k), noise)


@dataclass
class RateAllocation:
    """Common-rate split c (one entry per user) and the max-min value."""

    c: np.ndarray
    R_hat: float

    def __post_init__(self):
        self.c = np.asarray(self.c, float)


@dataclass
class MaxminReport:
    """Evaluation of the max-min objective at a given (P, c)."""

    value: float                 # min_k (c_k + private rate k)
    per_user: np.ndarray         # c_k + private rate k, shape (K,)
    common_rates: np.ndarray     # common-stream bounds per user
    private_rates: np.ndarray
    feasible: bool               # sum(c) <= min_k common rate (within tol)
    common_slack: float          # min_k common rate - sum(c)


def maxmin_objective(ch: ChannelSet, P: np.ndarray, alloc: RateAllocation,
                     delta, sigma2, tol_feas: float = 1e-9) -> MaxminReport:
    """Evaluate min-user total rate and check the common-rate split.

    An infeasible split (sum of c exceeding the worst common rate by more
    than tol_feas) is flagged but still evaluated.
    """
    dl = np.broadcast_to(np.asarray(delta, float), (ch.K,))
    rc = np.array([common_rate_lb(ch, P, k, sigma2) for k in range(ch.K)])
    rp = np.array([private_rate_lb(ch, P, dl[k], k, sigma2) for k in range(ch.K)])
    per_user = alloc.c + rp
    slack = float(rc.min() - alloc.c.sum())
    return MaxminReport(
        value=float(per_user.min()),
        per_user=per_user,
        common_rates=rc,
        private_rates=rp,
        feasible=bool(slack >= -tol_feas and np.all(alloc.c >= -tol_feas)),
        common_slack=slack,
    )


@dataclass
class HybridBeamfocuser:
    """Sub-connected analog stage plus digital stage.

    F_blocks[l] holds the M unit-modulus phase coefficients of RF chain l;
    the implied analog matrix is blkdiag(F_blocks[0], ..., F_blocks[L-1])
    of shape (N, L) with F^H F = M I. W has one column per stream.
    """

    F_blocks: np.ndarray   # (L, M) complex, unit modulus
    W: np.ndarray          # (L, S) complex

    def __post_init__(self):
        self.F_blocks = np.asarray(self.F_blocks, complex)
        self.W = np.asarray(self.W, complex)
        if self.F_blocks.ndim != 2 or self.W.ndim != 2:
            raise ValueError("F_blocks must be (L, M), W must be (L, S)")
        if self.F_blocks.shape[0] != self.W.shape[0]:
            raise ValueError("F_blocks and W disagree on the RF-chain count")

    @property
    def L(self) -> int:
        return self.F_blocks.shape[0]

    @property
    def M(self) -> int:
        return self.F_blocks.shape[1]

    @property
    def N(self) -> int:
        return self.L * self.M

    def validate_unit_modulus(self, tol: float = 1e-9):
        dev = np.max(np.abs(np.abs(self.F_blocks) - 1.0))
        if dev > tol:
            raise ValueError(f"phase coefficients deviate from unit modulus by {dev:.2e}")

    def full_matrix(self) -> np.ndarray:
        """Materialize the (N, L) block-diagonal analog matrix."""
        L, M = self.F_blocks.shape
        F = np.zeros((L * M, L), complex)
        for l in range(L):
            F[l * M:(l + 1) * M, l] = self.F_blocks[l]
        return F

    def materialize(self) -> np.ndarray:
        """The full precoder F W, shape (N, S), without building F."""
        L, M = self.F_blocks.shape
        P = np.empty((L * M, self.W.shape[1]), complex)
        for l in range(L):
            P[l * M:(l + 1) * M, :] = np.outer(self.F_blocks[l], self.W[l, :])
        return P

    def equivalent_channel(self, h: np.ndarray) -> np.ndarray:
        """F^H h, the L-dimensional channel seen by the digital stage."""
        L, M = self.F_blocks.shape
        hb = h.reshape(L, M)
        return np.einsum("lm,lm->l", self.F_blocks.conj(), hb)

    def power(self) -> float:
        """||F W||_F^2 = M ||W||_F^2 (block structure)."""
        return self.M * float(np.linalg.norm(self.W) ** 2)


def hybrid_rates(ch: ChannelSet, hb: HybridBeamfocuser, delta, k: int,
                 sigma2) -> tuple[float, float]:
    """(common, private) rate bounds of user k at the hybrid precoder.

    Computed through the equivalent channel F^H h_hat and the block
    identity ||F w_i||^2 = M ||w_i||^2, so the values coincide with the
    full-precoder bounds at P = F W.
    """
    dl = np.broadcast_to(np.asarray(delta, float), (ch.K,))
    sig = np.broadcast_to(np.asarray(sigma2, float), (ch.K,))
    hbar = hb.equivalent_channel(ch.h_hat[k])
    noise = ch.eps[k] ** 2 * hb.power() + sig[k]
    S = hb.W.shape[1]
    rc = stream_rate(hbar, hb.W, 0, common_weights(S), noise)
    rp = stream_rate(hbar, hb.W, k + 1, private_weights(S, k + 1, dl[k]), noise)
    return rc, rp
