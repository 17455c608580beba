"""Mean-field vector field, RK4 integration, the Lyapunov function and Hessian signatures.

The field is written in flux form. For class ``k`` and state ``n`` let

    F_n^k(y) = (mu_k + gamma_k) n_k y_n - (lambda_k + gamma_k <I_k, y>) y_{n - f_k}

(zero when ``n_k = 0``); then ``V_n = sum_k F_{n+f_k}^k - F_n^k`` with
``F = 0`` outside the lattice. Mass conservation is exact by telescoping.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy.special import xlogy

from .equilibrium import CRITICAL_TOL, DEGENERACY_REL, NotCriticalError, grad_phi, hessian_phi
from .model import ModelError, NetworkParams, StateSpace, check_distribution
from .productform import as_rho, nu_rho

logger = logging.getLogger(__name__)

NEGATIVE_CLAMP_LIMIT = 1e-9


class StepSizeError(RuntimeError):
    """RK4 produced a negative coordinate beyond roundoff; retry with a smaller step."""


def _effective_rates(y: np.ndarray, params: NetworkParams, space: StateSpace) -> np.ndarray:
    return params.lam + params.gamma * (y @ space.states)


def class_fluxes(y: np.ndarray, params: NetworkParams, space: StateSpace) -> np.ndarray:
    """``F[n, k]``: net downward class-``k`` flux out of state ``n``."""
    y = np.asarray(y, dtype=float)
    eff = _effective_rates(y, params, space)
    nk = space.states
    down = space.down
    below = np.where(down >= 0, y[np.maximum(down, 0)], 0.0)
    return (params.mu + params.gamma) * nk * y[:, None] - eff * below


def vector_field(y, params: NetworkParams, space: StateSpace) -> np.ndarray:
    F = class_fluxes(y, params, space)
    up = space.up
    above = np.where(up >= 0, F[np.maximum(up, 0), np.arange(params.K)], 0.0)
    return (above - F).sum(axis=1)


# ---------------------------------------------------------------- Lyapunov function


def _integral_term(m: np.ndarray, params: NetworkParams) -> np.ndarray:
    """``int_0^{m_k} log((lambda_k + gamma_k x) / (mu_k + gamma_k)) dx`` per class."""
    lam, gam, mu = params.lam, params.gamma, params.mu
    out = np.empty(params.K)
    for k in range(params.K):
        if gam[k] > 0:
            s = mu[k] + gam[k]

            def antideriv(u):
                a = lam[k] + gam[k] * u
                return (xlogy(a, a / s) - a) / gam[k]

            out[k] = antideriv(m[k]) - antideriv(0.0)
        elif m[k] == 0:
            out[k] = 0.0
        elif lam[k] == 0:
            raise ModelError(f"class {k}: lambda = gamma = 0 with positive mean occupancy; log 0")
        else:
            out[k] = m[k] * np.log(lam[k] / mu[k])
    return out


def lyapunov_g(y, params: NetworkParams, space: StateSpace) -> float:
    """``sum_n y_n log(n! y_n) - sum_k int_0^{<I_k,y>} log((lambda_k+gamma_k x)/(mu_k+gamma_k)) dx``.

    Boundary points are allowed (``0 log 0 = 0``).
    """
    y = np.asarray(y, dtype=float)
    entropy = float(np.sum(xlogy(y, y) + y * space.log_factorial))
    return entropy - float(_integral_term(y @ space.states, params).sum())


def _require_interior(y: np.ndarray) -> None:
    if np.any(y <= 0):
        raise ValueError("gradient and dissipation of g are defined on the interior only (all y_n > 0)")


def grad_g(y, params: NetworkParams, space: StateSpace) -> np.ndarray:
    y = np.asarray(y, dtype=float)
    _require_interior(y)
    eff = _effective_rates(y, params, space)
    return 1.0 + space.log_factorial + np.log(y) - space.states @ np.log(eff / (params.mu + params.gamma))


def hessian_g(y, params: NetworkParams, space: StateSpace) -> np.ndarray:
    """``1{n=m}/y_n - sum_k n_k m_k gamma_k / (lambda_k + gamma_k <I_k, y>)``."""
    y = np.asarray(y, dtype=float)
    _require_interior(y)
    eff = _effective_rates(y, params, space)
    X = space.states.astype(float)
    return np.diag(1.0 / y) - (X * (params.gamma / eff)) @ X.T


def dissipation(y, params: NetworkParams, space: StateSpace) -> float:
    """``<V(y), grad g(y)>`` in the manifestly nonpositive flux-log form."""
    y = np.asarray(y, dtype=float)
    _require_interior(y)
    eff = _effective_rates(y, params, space)
    F = class_fluxes(y, params, space)
    total = 0.0
    for k in range(params.K):
        rows = space.down[:, k] >= 0
        nk = space.states[rows, k]
        ratio = eff[k] * y[space.down[rows, k]] / ((params.mu[k] + params.gamma[k]) * nk * y[rows])
        total += float(F[rows, k] @ np.log(ratio))
    return total


# ---------------------------------------------------------------- integration


@dataclass
class Trajectory:
    times: np.ndarray
    points: np.ndarray
    g_values: np.ndarray | None
    converged: bool
    step: float

    @property
    def final(self) -> np.ndarray:
        return self.points[-1]


def _rk4(y, h, field, k1):
    k2 = field(y + 0.5 * h * k1)
    k3 = field(y + 0.5 * h * k2)
    k4 = field(y + h * k3)
    return y + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)


def _integrate_once(y0, params, space, T, step, output_interval, stop_tol):
    field = lambda y: vector_field(y, params, space)  # noqa: E731
    per_output = max(1, int(round(output_interval / step)))
    n_steps = int(round(T / step))
    y = y0.copy()
    times = [0.0]
    points = [y.copy()]
    converged = False
    for i in range(1, n_steps + 1):
        k1 = field(y)
        if np.max(np.abs(k1)) < stop_tol:
            converged = True
            if times[-1] != (i - 1) * step:
                times.append((i - 1) * step)
                points.append(y.copy())
            break
        y = _rk4(y, step, field, k1)
        lowest = y.min()
        if lowest < 0:
            if lowest < -NEGATIVE_CLAMP_LIMIT:
                raise StepSizeError(
                    f"coordinate went to {lowest:.3e} at t = {i * step:g}; use a smaller step"
                )
            y = np.maximum(y, 0.0)
        if abs(y.sum() - 1.0) > 1e-12:
            y = y / y.sum()
        if i % per_output == 0 or i == n_steps:
            times.append(i * step)
            points.append(y.copy())
    else:
        converged = bool(np.max(np.abs(field(y))) < stop_tol)
    return np.array(times), np.array(points), converged


def integrate_ode(
    y0,
    params: NetworkParams,
    space: StateSpace,
    T: float,
    step: float = 0.01,
    output_interval: float | None = None,
    stop_tol: float = 1e-10,
    record_g: bool = True,
    max_halvings: int = 3,
) -> Trajectory:
    """Fixed-step classical RK4 for ``y' = V(y)`` on the simplex.

    Points are recorded every ``output_interval`` (default: every step).
    Integration stops early once ``sup |V(y)| < stop_tol``. A negative
    coordinate below ``-1e-9`` triggers up to ``max_halvings`` restarts with
    half the step before :class:`StepSizeError` propagates.
    """
    if step <= 0 or T <= 0:
        raise ValueError("T and step must be positive")
    y0 = check_distribution(y0, space)
    output_interval = step if output_interval is None else output_interval
    h = step
    for attempt in range(max_halvings + 1):
        try:
            times, points, converged = _integrate_once(y0, params, space, T, h, output_interval, stop_tol)
            break
        except StepSizeError:
            if attempt == max_halvings:
                raise
            logger.info("negative coordinate with step %g; retrying with %g", h, h / 2)
            h /= 2
    g_values = None
    if record_g:
        try:
            g_values = np.array([lyapunov_g(p, params, space) for p in points])
        except ModelError:
            g_values = None
    return Trajectory(times=times, points=points, g_values=g_values, converged=converged, step=h)


# ---------------------------------------------------------------- Hessian signatures


@dataclass(frozen=True)
class Signature:
    positive: int
    negative: int
    degenerate: int

    @classmethod
    def of(cls, eigenvalues: np.ndarray, rel: float = DEGENERACY_REL) -> "Signature":
        eigs = np.asarray(eigenvalues, dtype=float)
        delta = rel * np.max(np.abs(eigs)) if eigs.size else 0.0
        deg = np.abs(eigs) <= delta
        return cls(int(np.sum((eigs > 0) & ~deg)), int(np.sum((eigs < 0) & ~deg)), int(np.sum(deg)))


@dataclass(frozen=True)
class SignatureReport:
    w_eigenvalues: np.ndarray
    identity_minus_w: Signature
    phi_signature: Signature
    g_signature: Signature
    g_change_of_variable: Signature
    consistent: bool

    def to_dict(self) -> dict:
        return {
            "w_eigenvalues": [float(x) for x in self.w_eigenvalues],
            "identity_minus_w": vars(self.identity_minus_w),
            "phi_signature": vars(self.phi_signature),
            "g_signature": vars(self.g_signature),
            "consistent": self.consistent,
        }


def w_matrix(rho, params: NetworkParams, space: StateSpace) -> np.ndarray:
    """Rate-scaled covariance of the class counts under ``nu_rho``.

    Entry ``(k, l)`` is ``s_k s_l Cov(n_k, n_l)`` with
    ``s_k = sqrt(gamma_k / (lambda_k + gamma_k <I_k, nu_rho>))``.
    """
    y = nu_rho(rho, space)
    X = space.states.astype(float)
    m = y @ X
    D = X - m
    cov = (D * y[:, None]).T @ D
    s = np.sqrt(params.gamma / (params.lam + params.gamma * m))
    W = cov * np.outer(s, s)
    return 0.5 * (W + W.T)


def restricted_hessian_g(y, params: NetworkParams, space: StateSpace) -> np.ndarray:
    """Hessian of ``g`` on ``{h : sum h = 0}`` in a well-scaled basis.

    The basis is ``sqrt(y_i) (e_i - e_r)`` for ``i != r``, with ``r`` the state
    of largest mass. It spans the tangent space, so by Sylvester's law the
    inertia equals that of the orthogonal projection, but the matrix stays
    well conditioned even when ``y`` spans many orders of magnitude (an
    orthonormal projection of ``diag(1/y)`` loses the small eigenvalues to
    roundoff).
    """
    y = np.asarray(y, dtype=float)
    _require_interior(y)
    r = int(np.argmax(y))
    keep = np.arange(space.size) != r
    eff = _effective_rates(y, params, space)
    X = space.states.astype(float)
    D = X[keep] - X[r]
    s = np.sqrt(y[keep])
    M = np.eye(keep.sum()) + np.outer(s, s) / y[r]
    Ds = D * s[:, None]
    M -= (Ds * (params.gamma / eff)) @ Ds.T
    return 0.5 * (M + M.T)


def _change_of_variable_signature(y: np.ndarray, params: NetworkParams, space: StateSpace) -> Signature:
    """Inertia of ``G_y(h) = |h|^2 - sum_k <w_k, h>^2`` on ``{h : sum sqrt(y_n) h_n = 0}``."""
    X = space.states.astype(float)
    m = y @ X
    s = np.sqrt(params.gamma / (params.lam + params.gamma * m))
    Wk = (np.sqrt(y)[:, None] * (X - m)) * s
    G = np.eye(space.size) - Wk @ Wk.T
    r = np.sqrt(y)
    # orthonormal basis of the complement of r
    M = np.eye(space.size) - np.outer(r, r)
    U, sv, _ = np.linalg.svd(M)
    B = U[:, : space.size - 1]
    return Signature.of(np.linalg.eigvalsh(B.T @ G @ B))


def signature_crosscheck(rho, params: NetworkParams, space: StateSpace,
                         grad_tol: float = CRITICAL_TOL) -> SignatureReport:
    """Compare three views of stability at a critical point of ``phi``.

    The inertia of ``I - W``, of the Hessian of ``phi``, and of the Hessian of
    ``g`` at ``nu_rho`` restricted to the tangent space of the simplex must
    agree on the number of negative directions (and, for the two
    ``K``-dimensional views, on positive directions too).
    """
    rho = as_rho(rho, params)
    gn = float(np.max(np.abs(grad_phi(rho, params))))
    if gn >= grad_tol:
        raise NotCriticalError(f"|grad phi| = {gn:.3e} at rho = {rho}; not a critical point")
    W = w_matrix(rho, params, space)
    w_eigs = np.linalg.eigvalsh(W)
    iw = Signature.of(1.0 - w_eigs)
    ph = Signature.of(np.linalg.eigvalsh(hessian_phi(rho, params)))
    y = nu_rho(rho, space)
    gs = Signature.of(np.linalg.eigvalsh(restricted_hessian_g(y, params, space)))
    gy = _change_of_variable_signature(y, params, space)
    degenerate = iw.degenerate or ph.degenerate or gs.degenerate
    if degenerate:
        consistent = bool(iw.degenerate and ph.degenerate and gs.degenerate)
    else:
        consistent = (
            iw.negative == ph.negative == gs.negative == gy.negative
            and iw.positive == ph.positive
        )
    return SignatureReport(w_eigenvalues=w_eigs, identity_minus_w=iw, phi_signature=ph,
                           g_signature=gs, g_change_of_variable=gy, consistent=consistent)
