"""Large-capacity limit: capacity ``C`` with arrival rates ``lambda_k C``.

Loads grow linearly in ``C`` and ``rho_k(C) / C`` tends to
``lambda_k / (mu_k + gamma_k - gamma_k exp(-omega A_k))``, where ``omega``
is the smallest ``x >= 0`` with ``f(x) <= 1`` for

    f(x) = sum_k lambda_k A_k exp(-x A_k) / (mu_k + gamma_k - gamma_k exp(-x A_k)).

Here ``params.lam`` holds the per-capacity rates; ``params.C`` is ignored
by :func:`kelly_omega`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .equilibrium import picard_solve
from .model import NetworkParams, UnsupportedModelError
from .productform import poisson_tail_ratio

BISECTION_TOL = 1e-12


@dataclass(frozen=True)
class KellyLimit:
    omega: float
    rho_bar: np.ndarray

    def to_dict(self) -> dict:
        return {"omega": self.omega, "rho_bar": [float(x) for x in self.rho_bar]}


def _require_service(params: NetworkParams) -> None:
    if np.any(params.mu <= 0):
        k = int(np.argmax(params.mu <= 0))
        raise UnsupportedModelError(
            f"the large-capacity limit assumes mu_k > 0 for every class; class {k} has mu = 0",
            key="mu",
        )


def kelly_objective(x: float, params: NetworkParams) -> float:
    e = np.exp(-x * params.A)
    return float(np.sum(params.lam * params.A * e / (params.mu + params.gamma - params.gamma * e)))


def kelly_omega(params: NetworkParams) -> KellyLimit:
    _require_service(params)
    lam, A, mu, gam = params.lam, params.A, params.mu, params.gamma
    if kelly_objective(0.0, params) <= 1.0:
        omega = 0.0
    else:
        lo, hi = 0.0, 1.0
        while kelly_objective(hi, params) > 1.0:
            lo, hi = hi, 2.0 * hi
        # f is strictly decreasing, so f(lo) > 1 >= f(hi) throughout
        while hi - lo >= BISECTION_TOL:
            mid = 0.5 * (lo + hi)
            if kelly_objective(mid, params) > 1.0:
                lo = mid
            else:
                hi = mid
        omega = 0.5 * (lo + hi)
    rho_bar = lam / (mu + gam - gam * np.exp(-omega * A))
    return KellyLimit(omega=float(omega), rho_bar=rho_bar)


@dataclass(frozen=True)
class KellyRow:
    C: int
    rho: np.ndarray
    ratio: np.ndarray
    error: float
    tail_ratio: np.ndarray
    tail_limit: np.ndarray

    def to_dict(self) -> dict:
        return {
            "C": self.C,
            "rho": [float(x) for x in self.rho],
            "rho_over_C": [float(x) for x in self.ratio],
            "error": self.error,
            "tail_ratio": [float(x) for x in self.tail_ratio],
            "tail_limit": [float(x) for x in self.tail_limit],
        }


def scaled_params(params: NetworkParams, C: int) -> NetworkParams:
    return params.replace(C=C, lam=params.lam * C)


def finite_capacity_load(params: NetworkParams, C: int, limit: KellyLimit | None = None) -> np.ndarray:
    """Fixed point of the capacity-``C`` system with rates ``lambda_k C``, started at ``C rho_bar``."""
    limit = kelly_omega(params) if limit is None else limit
    scaled = scaled_params(params, C)
    start = np.maximum(C * limit.rho_bar, 1e-6)
    return picard_solve(scaled, start, tol=1e-12 * max(1.0, C))


def kelly_table(params: NetworkParams, capacities) -> tuple[KellyLimit, list[KellyRow]]:
    """Finite-``C`` loads against the limit, with the tail ratio at ``a = A_k``."""
    limit = kelly_omega(params)
    rows = []
    for C in capacities:
        C = int(C)
        rho = finite_capacity_load(params, C, limit)
        scaled = scaled_params(params, C)
        ratio = rho / C
        tails = np.array([poisson_tail_ratio(rho, scaled, int(a)) for a in params.A])
        rows.append(KellyRow(
            C=C, rho=rho, ratio=ratio,
            error=float(np.max(np.abs(ratio - limit.rho_bar))),
            tail_ratio=tails,
            tail_limit=np.exp(-limit.omega * params.A.astype(float)),
        ))
    return limit, rows
