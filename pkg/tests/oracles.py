"""Independent pricing oracles used only by the test suite.

These deliberately share no code with the solver: the tree is a plain CRR
backward induction, the closed form uses math.erf.
"""

import math

import numpy as np


def norm_cdf(z: float) -> float:
    return 0.5 * (1.0 + math.erf(z / math.sqrt(2.0)))


def black_scholes_put(S0: float, K: float, r: float, sigma: float, T: float) -> float:
    if T <= 0:
        return max(K - S0, 0.0)
    d1 = (math.log(S0 / K) + (r + 0.5 * sigma**2) * T) / (sigma * math.sqrt(T))
    d2 = d1 - sigma * math.sqrt(T)
    return K * math.exp(-r * T) * norm_cdf(-d2) - S0 * norm_cdf(-d1)


def binomial_put(S0: float, K: float, r: float, sigma: float, T: float,
                 steps: int, american: bool = True) -> float:
    """CRR tree value of a put; American by default."""
    dt = T / steps
    u = math.exp(sigma * math.sqrt(dt))
    d = 1.0 / u
    q = (math.exp(r * dt) - d) / (u - d)
    disc = math.exp(-r * dt)
    j = np.arange(steps + 1)
    S = S0 * u**j * d ** (steps - j)
    V = np.maximum(K - S, 0.0)
    for n in range(steps - 1, -1, -1):
        V = disc * (q * V[1:] + (1.0 - q) * V[:-1])
        if american:
            S = S0 * u ** np.arange(n + 1) * d ** (n - np.arange(n + 1))
            V = np.maximum(V, K - S)
    return float(V[0])


def binomial_exercise_boundary(S0: float, K: float, r: float, sigma: float, T: float,
                               steps: int) -> np.ndarray:
    """Largest early-exercise stock price per tree level (diagnostic only)."""
    dt = T / steps
    u = math.exp(sigma * math.sqrt(dt))
    d = 1.0 / u
    q = (math.exp(r * dt) - d) / (u - d)
    disc = math.exp(-r * dt)
    j = np.arange(steps + 1)
    S = S0 * u**j * d ** (steps - j)
    V = np.maximum(K - S, 0.0)
    boundary = np.full(steps + 1, np.nan)
    boundary[steps] = K
    for n in range(steps - 1, -1, -1):
        V = disc * (q * V[1:] + (1.0 - q) * V[:-1])
        S = S0 * u ** np.arange(n + 1) * d ** (n - np.arange(n + 1))
        intrinsic = K - S
        exercised = intrinsic >= V + 1e-12
        V = np.maximum(V, intrinsic)
        if exercised.any():
            boundary[n] = S[exercised].max()
    return boundary
