"""Relational coefficients on the probability simplex.

Given per-relation smoothness scores ``s`` the coefficients minimise

    sum_r mu_r * s_r + (lambda2 / lambda1) * ||mu||^2   over the simplex,

solved with entropic mirror descent. The exact Euclidean-projection
minimiser and the two limiting regimes are provided for checking.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import kernels
from .errors import ValidationError

ZERO_RATIO = "zero-ratio"
INFINITE_RATIO = "infinite-ratio"


@dataclass(frozen=True)
class RclSettings:
    max_iters: int = 1000
    tol: float = 1e-8
    warm_start: bool = False

    def __post_init__(self):
        if int(self.max_iters) < 1:
            raise ValidationError(f"rcl.max_iters must be >= 1, got {self.max_iters}")
        if not self.tol > 0:
            raise ValidationError(f"rcl.tol must be > 0, got {self.tol}")


def _scores(s) -> np.ndarray:
    s = np.asarray(s, dtype=np.float64).ravel()
    if s.size == 0:
        raise ValidationError("score vector is empty")
    if not np.all(np.isfinite(s)):
        raise ValidationError("score vector has non-finite entries")
    return s


def is_simplex_point(mu, atol: float = 1e-9) -> bool:
    mu = np.asarray(mu, dtype=np.float64)
    return bool(mu.ndim == 1 and mu.size >= 1 and np.all(mu >= 0) and abs(mu.sum() - 1.0) <= atol)


def objective(mu, s, ratio: float) -> float:
    """Coefficient subproblem objective for ``ratio = lambda2 / lambda1``."""
    mu = np.asarray(mu, dtype=np.float64)
    return float(mu @ np.asarray(s, dtype=np.float64) + ratio * (mu @ mu))


def lipschitz_constant(s, lambda1: float, lambda2: float) -> float:
    """``2 * lambda2 / lambda1 + ||s||_1``, an l1 bound on the objective gradient."""
    if not lambda1 > 0:
        raise ValidationError(f"lambda1 must be > 0, got {lambda1}")
    s = _scores(s)
    return 2.0 * lambda2 / lambda1 + float(np.abs(s).sum())


def limit_case(s, regime: str) -> np.ndarray:
    s = _scores(s)
    if regime == ZERO_RATIO:
        mu = np.zeros(s.size)
        mu[int(np.argmin(s))] = 1.0  # argmin returns the lowest index on ties
        return mu
    if regime == INFINITE_RATIO:
        return np.full(s.size, 1.0 / s.size)
    raise ValidationError(f"unknown regime {regime!r}")


def emda_solve(s, lambda1: float, lambda2: float, settings: RclSettings | None = None,
               init=None, return_info: bool = False):
    """Entropic mirror descent over the simplex.

    Starts at the uniform point (or ``init`` when warm-starting) and applies
    ``mu_r <- mu_r exp(-T_t g_r) / Z`` with ``g_r = 2 (lambda2/lambda1) mu_r + s_r``
    and ``T_t = sqrt(2 ln R / (t phi^2))`` until the l1 change drops below
    ``settings.tol`` or ``settings.max_iters`` is reached.

    ``lambda2 == 0`` returns the one-hot argmin and ``lambda2 == inf`` the
    uniform point. With ``return_info`` the result is ``(mu, iterations, converged)``.
    """
    settings = settings or RclSettings()
    s = _scores(s)
    if not lambda1 > 0:
        raise ValidationError(f"lambda1 must be > 0, got {lambda1}")
    if not lambda2 >= 0:
        raise ValidationError(f"lambda2 must be >= 0, got {lambda2}")
    R = s.size

    def done(mu, iters=0, converged=True):
        return (mu, iters, converged) if return_info else mu

    if R == 1:
        return done(np.ones(1))
    if math.isinf(lambda2):
        return done(limit_case(s, INFINITE_RATIO))
    phi = lipschitz_constant(s, lambda1, lambda2)
    if phi == 0.0:
        # lambda2 == 0 and s == 0: the objective is constant on the simplex
        return done(np.full(R, 1.0 / R))
    if lambda2 == 0.0:
        return done(limit_case(s, ZERO_RATIO))

    if init is None:
        mu0 = np.full(R, 1.0 / R)
    else:
        mu0 = np.asarray(init, dtype=np.float64)
        if mu0.shape != (R,) or not is_simplex_point(mu0, atol=1e-6):
            raise ValidationError("warm-start point is not on the simplex")
    mu, iters, converged = kernels.emda_loop(
        s, lambda2 / lambda1, phi, np.ascontiguousarray(mu0), int(settings.max_iters), float(settings.tol)
    )
    mu = np.asarray(mu)
    mu /= mu.sum()
    return done(mu, int(iters), bool(converged))


def project_simplex(v) -> np.ndarray:
    """Euclidean projection onto the probability simplex (sort and threshold)."""
    v = np.asarray(v, dtype=np.float64).ravel()
    u = np.sort(v)[::-1]
    css = np.cumsum(u) - 1.0
    k = np.arange(1, v.size + 1)
    rho = int(np.count_nonzero(u - css / k > 0))
    theta = css[rho - 1] / rho
    return np.maximum(v - theta, 0.0)


def qp_oracle(s, lambda1: float, lambda2: float) -> np.ndarray:
    """Exact minimiser for ``lambda2 > 0``: project ``-(lambda1 / (2 lambda2)) s``."""
    s = _scores(s)
    if not lambda1 > 0:
        raise ValidationError(f"lambda1 must be > 0, got {lambda1}")
    if not lambda2 > 0:
        raise ValidationError("qp_oracle needs lambda2 > 0; use limit_case for lambda2 == 0")
    return project_simplex(-(lambda1 / (2.0 * lambda2)) * s)
