"""Ensemble message passing.

One layer runs the relational-coefficient step (scores -> simplex weights)
and then the propagation step

    Z' = H / (1 + lambda1) + lambda1 / (1 + lambda1) * sum_r mu_r A_r Z,

where ``A_r`` are the normalised relation operators. Dense solvers for the
fixed point and the personalised-PageRank matrix are kept here as oracles;
they refuse graphs above ``dense_cap`` nodes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .coefficients import RclSettings, emda_solve, is_simplex_point
from .errors import NumericalError, ValidationError
from .graph import NormalizedRelation, _as_features, smoothness_score, spmm

LEARNED = "learned"
FIXED = "fixed"
UNIFORM = "uniform"
DENSE_CAP = 2000


@dataclass(frozen=True)
class EnmpHyper:
    """Propagation hyperparameters.

    ``fixed_mu`` is used with ``coefficient_mode="fixed"``; it is either one
    length-R vector applied at every layer or a (K, R) array of per-layer
    vectors.
    """

    lambda1: float = 4.0
    lambda2: float = 1.0
    K: int = 8
    rcl: RclSettings = field(default_factory=RclSettings)
    coefficient_mode: str = LEARNED
    fixed_mu: np.ndarray | None = None

    def __post_init__(self):
        if not self.lambda1 > 0:
            raise ValidationError(f"lambda1 must be > 0, got {self.lambda1}")
        if not self.lambda2 >= 0:
            raise ValidationError(f"lambda2 must be >= 0, got {self.lambda2}")
        if int(self.K) < 1:
            raise ValidationError(f"K must be >= 1, got {self.K}")
        if self.coefficient_mode not in (LEARNED, FIXED, UNIFORM):
            raise ValidationError(f"unknown coefficient_mode {self.coefficient_mode!r}")
        if self.coefficient_mode == FIXED:
            if self.fixed_mu is None:
                raise ValidationError("coefficient_mode 'fixed' needs fixed_mu")
            mu = np.atleast_2d(np.asarray(self.fixed_mu, dtype=np.float64))
            if mu.shape[0] not in (1, self.K):
                raise ValidationError(f"fixed_mu has {mu.shape[0]} rows; expected 1 or K={self.K}")
            for row in mu:
                if not is_simplex_point(row):
                    raise ValidationError(f"fixed_mu row {row} is not on the simplex")
            object.__setattr__(self, "fixed_mu", mu)

    @property
    def teleport(self) -> float:
        """Restart probability ``1 / (1 + lambda1)`` of the matching PageRank scheme."""
        return 1.0 / (1.0 + self.lambda1)

    def mu_for_layer(self, k: int, R: int) -> np.ndarray | None:
        if self.coefficient_mode == UNIFORM:
            return np.full(R, 1.0 / R)
        if self.coefficient_mode == FIXED:
            mu = self.fixed_mu[k if self.fixed_mu.shape[0] > 1 else 0]
            if mu.size != R:
                raise ValidationError(f"fixed_mu has {mu.size} entries for {R} relations")
            return mu.copy()
        return None


@dataclass
class PropagationTrace:
    z_per_layer: list[np.ndarray]
    mu_per_layer: list[np.ndarray]
    scores_per_layer: list[np.ndarray]

    @property
    def output(self) -> np.ndarray:
        return self.z_per_layer[-1]

    @property
    def K(self) -> int:
        return len(self.mu_per_layer)


def _check_rels(rels: Sequence[NormalizedRelation]) -> int:
    if len(rels) == 0:
        raise ValidationError("no relations given")
    n = rels[0].n
    if any(r.n != n for r in rels):
        raise ValidationError("relations disagree on node count")
    return n


def _layer(Z, H, rels, hyper: EnmpHyper, k: int, prev_mu=None):
    products = [spmm(rel, Z) for rel in rels]
    scores = np.array([smoothness_score(rel, Z, p) for rel, p in zip(rels, products)])
    mu = hyper.mu_for_layer(k, len(rels))
    if mu is None:
        init = prev_mu if (hyper.rcl.warm_start and prev_mu is not None) else None
        mu = emda_solve(scores, hyper.lambda1, hyper.lambda2, hyper.rcl, init=init)
    a = 1.0 / (1.0 + hyper.lambda1)
    b = hyper.lambda1 / (1.0 + hyper.lambda1)
    mixed = np.zeros_like(Z)
    for w, p in zip(mu, products):
        mixed += w * p
    return a * H + b * mixed, mu, scores


def enmp_layer(Z, H, rels: Sequence[NormalizedRelation], hyper: EnmpHyper, layer: int = 0,
               prev_mu=None) -> tuple[np.ndarray, np.ndarray]:
    """One coefficient step followed by one propagation step; returns ``(Z', mu)``."""
    n = _check_rels(rels)
    Z = _as_features(Z, n)
    H = _as_features(H, n)
    if Z.shape != H.shape:
        raise ValidationError(f"Z {Z.shape} and H {H.shape} differ in shape")
    Znew, mu, _ = _layer(Z, H, rels, hyper, layer, prev_mu)
    return Znew, mu


def propagate(H, rels: Sequence[NormalizedRelation], hyper: EnmpHyper) -> PropagationTrace:
    """Apply ``hyper.K`` layers starting from ``Z0 = H``."""
    n = _check_rels(rels)
    H = _as_features(H, n)
    Z = H
    zs, mus, scores = [H], [], []
    prev = None
    for k in range(int(hyper.K)):
        Z, prev, s = _layer(Z, H, rels, hyper, k, prev)
        zs.append(Z)
        mus.append(prev)
        scores.append(s)
    return PropagationTrace(zs, mus, scores)


def propagate_adjoint(G, rels: Sequence[NormalizedRelation], mus: Sequence[np.ndarray],
                      lambda1: float) -> np.ndarray:
    """Gradient w.r.t. ``H`` of ``<G, Z_K>`` for the realised coefficients ``mus``.

    Every relation operator is symmetric, so the adjoint of a layer reuses the
    forward products.
    """
    a = 1.0 / (1.0 + lambda1)
    b = lambda1 / (1.0 + lambda1)
    g = np.ascontiguousarray(G, dtype=np.float64)
    gH = np.zeros_like(g)
    for mu in reversed(mus):
        gH += a * g
        nxt = np.zeros_like(g)
        for w, rel in zip(mu, rels):
            if w != 0.0:
                nxt += w * spmm(rel, g)
        g = b * nxt
    return gH + g


def mixed_dense(rels: Sequence[NormalizedRelation], mu, dense_cap: int = DENSE_CAP) -> np.ndarray:
    n = _check_rels(rels)
    if n > dense_cap:
        raise ValidationError(f"n={n} exceeds the dense cap of {dense_cap}")
    mu = np.asarray(mu, dtype=np.float64)
    if mu.shape != (len(rels),) or not is_simplex_point(mu):
        raise ValidationError("mu must be a simplex point with one entry per relation")
    out = np.zeros((n, n))
    for w, rel in zip(mu, rels):
        out += w * rel.to_dense()
    return out


def closed_form_solve(H, rels: Sequence[NormalizedRelation], mu, lambda1: float,
                      dense_cap: int = DENSE_CAP, residual_tol: float = 1e-10) -> np.ndarray:
    """Fixed point of the propagation step via one dense linear solve."""
    if not lambda1 > 0:
        raise ValidationError(f"lambda1 must be > 0, got {lambda1}")
    A = mixed_dense(rels, mu, dense_cap)
    n = A.shape[0]
    H = _as_features(H, n)
    b = lambda1 / (1.0 + lambda1)
    M = np.eye(n) - b * A
    try:
        Z = np.linalg.solve(M, H) / (1.0 + lambda1)
    except np.linalg.LinAlgError as exc:  # the system is provably nonsingular
        raise NumericalError(f"dense solve failed: {exc}") from exc
    # residual of (I + lambda1 * sum_r mu_r L_r) Z = H
    resid = Z + lambda1 * (Z - A @ Z) - H
    hnorm = np.linalg.norm(H)
    rel_res = np.linalg.norm(resid) / hnorm if hnorm > 0 else np.linalg.norm(resid)
    if not rel_res <= residual_tol * (1.0 + lambda1):
        raise NumericalError(f"closed-form residual {rel_res:.3e} above tolerance")
    return Z


def ppr_matrix(rels: Sequence[NormalizedRelation], mu, alpha: float,
               dense_cap: int = DENSE_CAP) -> np.ndarray:
    """Personalised PageRank matrix ``alpha (I - (1 - alpha) sum_r mu_r A_r)^-1``."""
    if not (0.0 < alpha <= 1.0) or math.isnan(alpha):
        raise ValidationError(f"alpha must lie in (0, 1], got {alpha}")
    A = mixed_dense(rels, mu, dense_cap)
    n = A.shape[0]
    return np.linalg.solve(np.eye(n) - (1.0 - alpha) * A, alpha * np.eye(n))


def gcn_averaged(Z, rels: Sequence[NormalizedRelation]) -> np.ndarray:
    """One propagation step over the relation-averaged operator, ``(1/R) sum_r A_r Z``."""
    n = _check_rels(rels)
    Z = _as_features(Z, n)
    out = np.zeros_like(Z)
    for rel in rels:
        out += spmm(rel, Z)
    return out / len(rels)


def appnp_averaged(H, rels: Sequence[NormalizedRelation], K: int, alpha: float) -> np.ndarray:
    """``K`` personalised-PageRank power steps on the averaged graph from ``Z0 = H``."""
    if not (0.0 < alpha <= 1.0):
        raise ValidationError(f"alpha must lie in (0, 1], got {alpha}")
    if int(K) < 1:
        raise ValidationError(f"K must be >= 1, got {K}")
    n = _check_rels(rels)
    H = _as_features(H, n)
    Z = H
    for _ in range(int(K)):
        Z = alpha * H + (1.0 - alpha) * gcn_averaged(Z, rels)
    return Z


def gcn_stack(H, rels: Sequence[NormalizedRelation], K: int) -> list[np.ndarray]:
    """Snapshots of ``K`` repeated :func:`gcn_averaged` steps (index 0 is ``H``)."""
    n = _check_rels(rels)
    zs = [_as_features(H, n)]
    for _ in range(int(K)):
        zs.append(gcn_averaged(zs[-1], rels))
    return zs


def energy(Z, H, rels: Sequence[NormalizedRelation], mu, lambda1: float) -> float:
    """``||Z - H||_F^2 + lambda1 * sum_r mu_r tr(Z^T L_r Z)`` for a fixed ``mu``."""
    D = np.asarray(Z) - np.asarray(H)
    return float(np.vdot(D, D) + lambda1 * sum(w * smoothness_score(r, Z) for w, r in zip(mu, rels)))
