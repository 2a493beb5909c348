"""Link-quality math and classical downlink beamformers.

Channels and beamformers are row-stacked: ``H[k]`` is device k's channel,
``W[k]`` its transmit beamformer.  All solvers emit solutions using the
full power budget.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class LinkConfig:
    noise_power: float
    total_power: float

    def __post_init__(self):
        if self.noise_power <= 0 or self.total_power <= 0:
            raise ValueError("noise and total power must be positive")


class WmmseError(Exception):
    """Raised when the power-multiplier search cannot bracket the budget."""


def sinr(H: np.ndarray, W: np.ndarray, noise_power: float) -> np.ndarray:
    """Per-device SINR: |h_k^H w_k|^2 / (sum_{j!=k} |h_k^H w_j|^2 + sigma^2)."""
    H = np.asarray(H)
    W = np.asarray(W)
    if H.shape != W.shape:
        raise ValueError("H and W must both be [K, N]")
    cross = np.abs(H.conj() @ W.T) ** 2  # cross[k, j] = |h_k^H w_j|^2
    signal = np.diag(cross)
    interference = cross.sum(axis=1) - signal
    return signal / (interference + noise_power)


def sum_rate(H: np.ndarray, W: np.ndarray, noise_power: float) -> float:
    """Achievable sum rate in bits/s/Hz."""
    return float(np.sum(np.log2(1.0 + sinr(H, W, noise_power))))


def mrt(H: np.ndarray, total_power: float) -> np.ndarray:
    """Maximum ratio transmission with equal per-device power."""
    H = np.asarray(H)
    k = H.shape[0]
    norms = np.linalg.norm(H, axis=1, keepdims=True)
    if np.any(norms == 0):
        raise ValueError("zero channel row")
    return np.sqrt(total_power / k) * H / norms


def zero_forcing(H: np.ndarray, total_power: float) -> np.ndarray:
    """Interference-nulling beamformer with equal per-device power.

    Requires K <= N and full row rank; columns of the right pseudo-inverse
    are normalized then scaled to sqrt(P_T/K).
    """
    H = np.asarray(H)
    k, n = H.shape
    if k > n:
        raise ValueError("zero forcing requires K <= N")
    gram = H.conj() @ H.T
    if np.linalg.matrix_rank(gram) < k or np.linalg.cond(gram) > 1e12:
        raise np.linalg.LinAlgError("rank-deficient channel matrix")
    # Right pseudo-inverse of conj(H): h_j^H w_k = 0 for j != k.
    pinv = H.T @ np.linalg.inv(gram)  # [N, K]
    cols = pinv / np.linalg.norm(pinv, axis=0, keepdims=True)
    return np.sqrt(total_power / k) * cols.T


def _wmmse_w_update(H, lam, u, total_power, inner_tol=1e-13):
    """Weighted-MMSE transmit update with a bisection on the power multiplier."""
    k, n = H.shape
    A = np.zeros((n, n), dtype=complex)
    for j in range(k):
        A += lam[j] * abs(u[j]) ** 2 * np.outer(H[j], H[j].conj())
    B = (lam * np.conj(u))[:, None] * H  # [K, N] right-hand sides

    # Diagonalize once so each multiplier probe costs O(K*N).
    evals, Q = np.linalg.eigh(A)
    Bq = B @ Q.conj()  # rows are Q^H b_i

    def solve(mu):
        return (Bq / (evals + mu)) @ Q.T

    def power(mu):
        return float(np.sum(np.abs(Bq) ** 2 / (evals + mu) ** 2))

    # Interior solution: already within budget at mu = 0.
    if evals.min() > 1e-14 and power(0.0) <= total_power:
        return solve(0.0)

    lo, hi = 0.0, 1.0
    for _ in range(200):
        if power(hi) <= total_power:
            break
        hi *= 2.0
    else:
        raise WmmseError(f"cannot bracket power multiplier, hi={hi}")
    for _ in range(400):
        mid = 0.5 * (lo + hi)
        if power(mid) > total_power:
            lo = mid
        else:
            hi = mid
        if hi - lo < inner_tol * max(1.0, hi):
            break
    return solve(hi)


def wmmse(
    H: np.ndarray,
    total_power: float,
    noise_power: float,
    init: np.ndarray | None = None,
    tol: float = 1e-5,
    max_iter: int = 200,
) -> tuple[np.ndarray, list[float]]:
    """Alternating WMMSE ascent on the sum rate of problem max sum log2(1+SINR).

    Returns the beamforming matrix and the per-iteration rate trace (which
    is non-decreasing up to numerical noise).  The final solution is scaled
    to use the full budget, which can only improve every device's SINR.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    H = np.asarray(H)
    k, _ = H.shape
    W = mrt(H, total_power) if init is None else np.array(init, dtype=complex)

    trace = [sum_rate(H, W, noise_power)]
    for _ in range(max_iter):
        hw = H.conj() @ W.T  # hw[k, j] = h_k^H w_j
        denom = np.sum(np.abs(hw) ** 2, axis=1) + noise_power
        u = np.conj(np.diag(hw)) / denom
        mse = 1.0 - u * np.diag(hw)
        lam = 1.0 / np.real(mse)
        W = _wmmse_w_update(H, lam, u, total_power)
        trace.append(sum_rate(H, W, noise_power))
        if abs(trace[-1] - trace[-2]) < tol:
            break

    power = float(np.sum(np.abs(W) ** 2))
    if power < total_power * (1.0 - 1e-12):
        W = W * np.sqrt(total_power / power)
        trace[-1] = max(trace[-1], sum_rate(H, W, noise_power))
    return W, trace
