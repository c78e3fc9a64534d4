"""(mu/mu_w, lambda)-CMA-ES on normalized [0, 1] coordinates.

Strategy constants and the update follow the standard defaults: log-rank
weights over the better half, cumulative step-size adaptation and
rank-one plus rank-mu covariance updates.
"""
import logging
import math
from typing import List, Optional, Sequence

import numpy as np
from pydantic import BaseModel, ConfigDict

from flowforge.core.exceptions import AllCandidatesFailedError, DimensionMismatchError, InvalidConfigError
from flowforge.core.rng import SeedPath

logger = logging.getLogger(__name__)

MIN_EIGENVALUE_RATIO = 1e-14


class CmaParameters(BaseModel):
    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    dim: int
    population: int
    mu: int
    weights: np.ndarray # length population, zeros past mu
    mueff: float
    cc: float
    cs: float
    c1: float
    cmu: float
    damps: float

    @classmethod
    def default(cls, dim: int, population: int) -> "CmaParameters":
        mu = population // 2
        raw = np.array([math.log(population / 2 + 0.5) - math.log(i + 1) if i < mu else 0.0 for i in range(population)])
        weights = raw / raw[:mu].sum()
        mueff = weights[:mu].sum() ** 2 / (weights[:mu] ** 2).sum()
        n = dim
        c1 = 2 / ((n + 1.3) ** 2 + mueff)
        cs = (mueff + 2) / (n + mueff + 5)
        return cls(
            dim=dim,
            population=population,
            mu=mu,
            weights=weights,
            mueff=mueff,
            cc=(4 + mueff / n) / (n + 4 + 2 * mueff / n),
            cs=cs,
            c1=c1,
            cmu=min(1 - c1, 2 * (mueff - 2 + 1 / mueff) / ((n + 2) ** 2 + mueff)),
            damps=2 * mueff / population + 0.3 + cs,
        )


class CmaState(BaseModel):
    """Sampler state on the active coordinates; `base` holds the full incumbent vector."""
    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    params: CmaParameters
    base: np.ndarray
    active_dims: List[int]
    mean: np.ndarray
    sigma: float
    C: np.ndarray
    p_sigma: np.ndarray
    p_c: np.ndarray
    generation: int = 0
    evaluations: int = 0

    @property
    def dim(self) -> int:
        return len(self.active_dims)

    @property
    def population(self) -> int:
        return self.params.population

    def full_vector(self, active_values: np.ndarray) -> np.ndarray:
        x = np.array(self.base, dtype=np.float64)
        x[self.active_dims] = active_values
        return x


def cma_init(
    dim: int,
    mean0: Sequence[float],
    sigma0: float,
    population: int,
    base: Optional[Sequence[float]] = None,
    active_dims: Optional[Sequence[int]] = None,
) -> CmaState:
    if dim < 1:
        raise InvalidConfigError(f"CMA-ES needs dim >= 1, got {dim}")
    if not sigma0 > 0:
        raise InvalidConfigError(f"CMA-ES needs sigma0 > 0, got {sigma0}")
    if population < 2:
        raise InvalidConfigError(f"CMA-ES needs population >= 2, got {population}")
    mean = np.asarray(mean0, dtype=np.float64)
    if mean.shape != (dim,):
        raise DimensionMismatchError(f"mean0 has length {mean.size}, expected {dim}")
    active = list(range(dim)) if active_dims is None else [int(i) for i in active_dims]
    full = mean.copy() if base is None else np.asarray(base, dtype=np.float64).copy()
    if len(active) != dim or (active and max(active) >= full.size):
        raise DimensionMismatchError(f"active_dims {active} do not fit a base of length {full.size}")
    return CmaState(
        params=CmaParameters.default(dim, population),
        base=full,
        active_dims=active,
        mean=mean,
        sigma=float(sigma0),
        C=np.eye(dim),
        p_sigma=np.zeros(dim),
        p_c=np.zeros(dim),
    )


def _eigensystem(C: np.ndarray):
    eigvals, B = np.linalg.eigh(C)
    return np.maximum(eigvals, MIN_EIGENVALUE_RATIO * max(float(eigvals.max()), 1e-300)), B


def cma_ask(state: CmaState, rng: SeedPath) -> List[np.ndarray]:
    """population full-length vectors: mean + sigma * N(0, C) on active dims, clamped to [0, 1]."""
    eigvals, B = _eigensystem(state.C)
    z = rng.generator().standard_normal((state.population, state.dim))
    y = (z * np.sqrt(eigvals)) @ B.T
    xs = np.clip(state.mean + state.sigma * y, 0.0, 1.0)
    return [state.full_vector(x) for x in xs]


def rank_weights(scores: np.ndarray, vectors: np.ndarray, weights: np.ndarray) -> np.ndarray:
    """Weight per candidate from its rank; tied scores share the average of their rank weights.

    Ranking breaks ties on the vectors themselves so completion order never matters.
    """
    keys = tuple(vectors[:, i] for i in reversed(range(vectors.shape[1]))) + (scores,)
    order = np.lexsort(keys)
    ranked = np.empty_like(weights)
    start = 0
    sorted_scores = scores[order]
    while start < len(order):
        stop = start + 1
        while stop < len(order) and sorted_scores[stop] == sorted_scores[start]:
            stop += 1
        ranked[start:stop] = weights[start:stop].mean()
        start = stop
    out = np.empty_like(weights)
    out[order] = ranked
    return out


def cma_tell(state: CmaState, candidates: Sequence[Sequence[float]], scores: Sequence[float]) -> CmaState:
    """Rank-based update; depends on the ordering of scores only. NaN counts as +inf."""
    par = state.params
    full = np.asarray(candidates, dtype=np.float64)
    f = np.asarray(scores, dtype=np.float64)
    if full.shape[0] != par.population or f.shape != (par.population,):
        raise DimensionMismatchError(f"Expected {par.population} candidates and scores, got {full.shape[0]}/{f.size}")
    f = np.where(np.isnan(f), np.inf, f)
    if np.all(np.isinf(f) & (f > 0)):
        raise AllCandidatesFailedError(f"All {par.population} candidates of generation {state.generation} failed")

    x = full[:, state.active_dims]
    n = state.dim
    w = rank_weights(f, x, par.weights)
    old = state.mean
    mean = w @ x
    y = (x - old) / state.sigma
    y_w = (mean - old) / state.sigma

    eigvals, B = _eigensystem(state.C)
    c_invsqrt = (B / np.sqrt(eigvals)) @ B.T
    evaluations = state.evaluations + par.population
    p_sigma = (1 - par.cs) * state.p_sigma + math.sqrt(par.cs * (2 - par.cs) * par.mueff) * (c_invsqrt @ y_w)
    # Rank-one accumulation pauses while sigma grows quickly
    hsig = float(
        (p_sigma @ p_sigma) / n / (1 - (1 - par.cs) ** (2 * evaluations / par.population)) < 2 + 4.0 / (n + 1)
    )
    p_c = (1 - par.cc) * state.p_c + hsig * math.sqrt(par.cc * (2 - par.cc) * par.mueff) * y_w

    c1a = par.c1 * (1 - (1 - hsig ** 2) * par.cc * (2 - par.cc))
    C = (1 - c1a - par.cmu * w.sum()) * state.C + par.c1 * np.outer(p_c, p_c) + par.cmu * (y.T * w) @ y
    C = (C + C.T) / 2.0
    vals, vecs = np.linalg.eigh(C)
    if vals.min() <= 0:
        floor = MIN_EIGENVALUE_RATIO * max(float(vals.max()), 1e-300)
        C = (vecs * np.maximum(vals, floor)) @ vecs.T
        C = (C + C.T) / 2.0
        logger.debug(f"Covariance repaired at generation {state.generation}")

    sigma = state.sigma * math.exp(min(1.0, par.cs / par.damps * ((p_sigma @ p_sigma) / n - 1) / 2))
    return state.model_copy(update={
        "mean": mean,
        "sigma": sigma,
        "C": C,
        "p_sigma": p_sigma,
        "p_c": p_c,
        "generation": state.generation + 1,
        "evaluations": evaluations,
    })
