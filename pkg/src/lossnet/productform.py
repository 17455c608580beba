"""Product-form quantities of the multiclass M/M/C/C queue.

Everything here goes through the occupancy recursion

    j * u_j = sum_k A_k rho_k u_{j - A_k},   u_0 = 1,

where ``u_j`` is the unnormalised weight of states using exactly ``j``
capacity units. ``Z(rho) = sum_j u_j``. The recursion is run with periodic
rescaling so that loads in the hundreds do not overflow; the accumulated
scale is tracked in log space.

``nu_rho`` is the one function that enumerates the lattice; it is the
independent route used to cross-check the recursion.
"""

from __future__ import annotations

import math

import numpy as np
from scipy.special import logsumexp

from .model import NetworkParams, StateSpace

_RESCALE_AT = 1e200


def as_rho(rho, params: NetworkParams) -> np.ndarray:
    rho = np.atleast_1d(np.asarray(rho, dtype=float))
    if rho.shape != (params.K,):
        raise ValueError(f"rho must have length K={params.K}, got shape {rho.shape}")
    if not np.all(np.isfinite(rho)) or np.any(rho <= 0):
        raise ValueError(f"rho must be strictly positive and finite, got {rho}")
    return rho


def _log_weights(rho: np.ndarray, params: NetworkParams) -> tuple[np.ndarray, float]:
    """Occupancy weights ``u`` and ``log_scale`` with ``u_true = u * exp(log_scale)``."""
    C = params.C
    A = params.A
    coef = A * rho
    u = np.zeros(C + 1)
    u[0] = 1.0
    log_scale = 0.0
    for j in range(1, C + 1):
        s = 0.0
        for a, c in zip(A, coef):
            if a <= j:
                s += c * u[j - a]
        u[j] = s / j
        if u[j] > _RESCALE_AT:
            log_scale += math.log(u[j])
            u[: j + 1] /= u[j]
    return u, log_scale


def log_partition(rho, params: NetworkParams) -> float:
    rho = as_rho(rho, params)
    u, log_scale = _log_weights(rho, params)
    return math.log(u.sum()) + log_scale


def partition_function(rho, params: NetworkParams) -> float:
    """``Z(rho) = sum_{n in X} rho^n / n!``. Use :func:`log_partition` for huge loads."""
    logz = log_partition(rho, params)
    if logz > 709.0:
        raise OverflowError(f"log Z = {logz:.6g} does not fit in a float; use log_partition")
    return math.exp(logz)


def occupancy_distribution(rho, params: NetworkParams) -> np.ndarray:
    """``q_j``: probability under ``nu_rho`` that exactly ``j`` capacity units are used."""
    rho = as_rho(rho, params)
    u, _ = _log_weights(rho, params)
    return u / u.sum()


def _cdf(q: np.ndarray):
    cum = np.cumsum(q)

    def at_most(m: int) -> float:
        if m < 0:
            return 0.0
        return float(cum[min(m, q.size - 1)])

    return at_most


def blocking_probabilities(rho, params: NetworkParams) -> np.ndarray:
    """``B_k(rho)`` for every class: the mass of occupancies above ``C - A_k``."""
    q = occupancy_distribution(rho, params)
    # summing the tail directly keeps relative accuracy when B_k is tiny
    return np.array([q[params.C - a + 1:].sum() for a in params.A])


def blocking_probability(rho, k: int, params: NetworkParams) -> float:
    return float(blocking_probabilities(rho, params)[k])


def product_form_moments(rho, params: NetworkParams) -> tuple[np.ndarray, np.ndarray]:
    """First and second class moments under ``nu_rho`` without enumerating ``X``.

    Uses the truncated-Poisson identities
    ``E[n_k] = rho_k P(occ <= C - A_k)`` and
    ``E[n_k n_l] = rho_k rho_l P(occ <= C - A_k - A_l) + 1{k=l} E[n_k]``.
    """
    rho = as_rho(rho, params)
    q = occupancy_distribution(rho, params)
    at_most = _cdf(q)
    A, C, K = params.A, params.C, params.K
    first = np.array([rho[k] * at_most(C - A[k]) for k in range(K)])
    second = np.empty((K, K))
    for k in range(K):
        for l in range(k, K):
            v = rho[k] * rho[l] * at_most(C - A[k] - A[l])
            if k == l:
                v += first[k]
            second[k, l] = second[l, k] = v
    return first, second


def class_covariance(rho, params: NetworkParams) -> np.ndarray:
    first, second = product_form_moments(rho, params)
    return second - np.outer(first, first)


def nu_rho(rho, space: StateSpace) -> np.ndarray:
    """The distribution ``nu_rho(n) proportional to rho^n / n!`` on the enumerated lattice."""
    rho = as_rho(rho, space.params)
    logw = space.states @ np.log(rho) - space.log_factorial
    return np.exp(logw - logsumexp(logw))


def log_partition_enumerated(rho, space: StateSpace) -> float:
    rho = as_rho(rho, space.params)
    logw = space.states @ np.log(rho) - space.log_factorial
    return float(logsumexp(logw))


def poisson_tail_ratio(rho, params: NetworkParams, a: int) -> float:
    """``P(C - sum A_k P_k >= a) / P(C - sum A_k P_k >= 0)`` for independent Poisson ``P_k``.

    The common factor ``exp(-sum rho_k)`` cancels, leaving a ratio of partial
    sums of the occupancy weights.
    """
    if not 0 <= a <= params.C:
        raise ValueError(f"a must lie in [0, C={params.C}], got {a}")
    q = occupancy_distribution(rho, params)
    return float(q[: params.C - a + 1].sum() / q.sum())


def erlang_b(load: float, C: int) -> float:
    """Single-class Erlang-B blocking probability by the standard recursion."""
    e = 1.0
    for c in range(1, C + 1):
        e = load * e / (c + load * e)
    return e
