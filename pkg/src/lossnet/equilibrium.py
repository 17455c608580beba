"""Fixed points of the mean-field dynamics and the energy function ``phi``.

Equilibria of the limiting ODE are the product-form laws ``nu_rho`` with
``lambda_k = rho_k (mu_k + gamma_k B_k(rho))``. When every transfer rate is
positive those loads are exactly the critical points of

    phi(rho) = -log Z(rho) + sum_k (beta_k rho_k - alpha_k log rho_k),

and the inertia of the Hessian of ``phi`` decides stability.
"""

from __future__ import annotations

import itertools
import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import brentq

from .model import ModelError, NetworkParams, UnsupportedModelError
from .productform import (
    as_rho,
    blocking_probabilities,
    erlang_b,
    log_partition,
    product_form_moments,
)

logger = logging.getLogger(__name__)

LABELS = ("minimum", "saddle", "maximum", "degenerate")
DEGENERACY_REL = 1e-8
DEDUP_REL = 1e-6
CRITICAL_TOL = 1e-8


class SolverError(RuntimeError):
    """A fixed-point iteration did not converge; ``last`` holds the final iterate."""

    def __init__(self, message: str, last: np.ndarray, trace: list | None = None):
        super().__init__(message)
        self.last = last
        self.trace = trace or []


class NotCriticalError(ValueError):
    pass


class DesignConditionError(ValueError):
    pass


@dataclass(frozen=True)
class CriticalPoint:
    rho: np.ndarray
    grad_norm: float
    hessian_eigenvalues: np.ndarray
    label: str
    phi_value: float

    def to_dict(self) -> dict:
        return {
            "rho": [float(x) for x in self.rho],
            "phi": float(self.phi_value),
            "grad_norm": float(self.grad_norm),
            "eigenvalues": [float(x) for x in self.hessian_eigenvalues],
            "label": self.label,
        }


def _require_transfers(params: NetworkParams) -> None:
    if not params.has_transfers:
        raise UnsupportedModelError(
            "phi needs gamma_k > 0 for every class (alpha_k = lambda_k / gamma_k); "
            "use the Picard solver for models without transfers"
        )


def fixed_point_residual(rho, params: NetworkParams) -> np.ndarray:
    """``lambda_k - rho_k (mu_k + gamma_k B_k(rho))``; zero exactly at equilibria."""
    rho = as_rho(rho, params)
    B = blocking_probabilities(rho, params)
    return params.lam - rho * (params.mu + params.gamma * B)


def picard_map(rho, params: NetworkParams) -> np.ndarray:
    rho = as_rho(rho, params)
    B = blocking_probabilities(rho, params)
    return (params.lam + params.gamma * rho * (1.0 - B)) / (params.mu + params.gamma)


def picard_solve(
    params: NetworkParams,
    rho0,
    damping: float = 0.5,
    tol: float = 1e-12,
    max_iter: int = 100_000,
) -> np.ndarray:
    """Damped iteration of ``rho -> (lambda + gamma <I, nu_rho>) / (mu + gamma)``.

    Raises :class:`SolverError` carrying the last iterate after ``max_iter``
    sweeps; callers typically hand that iterate to :func:`newton_refine`.
    """
    if not 0 < damping <= 1:
        raise ValueError("damping must lie in (0, 1]")
    rho = as_rho(rho0, params)
    # loads with lambda_k = 0 may decay towards 0; keep them representable
    floor = 1e-300
    for _ in range(max_iter):
        new = (1.0 - damping) * rho + damping * picard_map(rho, params)
        new = np.maximum(new, floor)
        change = np.max(np.abs(new - rho))
        rho = new
        if change < tol:
            return rho
    raise SolverError(f"Picard iteration did not converge in {max_iter} steps", last=rho)


# ---------------------------------------------------------------- phi


def phi(rho, params: NetworkParams) -> float:
    _require_transfers(params)
    rho = as_rho(rho, params)
    lin = params.beta @ rho
    # alpha_k log rho_k is 0 when lambda_k = 0, whatever rho_k
    logs = np.where(params.alpha > 0, params.alpha * np.log(rho), 0.0)
    return float(-log_partition(rho, params) + lin - logs.sum())


def grad_phi(rho, params: NetworkParams) -> np.ndarray:
    """``mu_k/gamma_k - lambda_k/(rho_k gamma_k) + B_k(rho)``."""
    _require_transfers(params)
    rho = as_rho(rho, params)
    B = blocking_probabilities(rho, params)
    return params.mu / params.gamma - params.lam / (rho * params.gamma) + B


def hessian_phi(rho, params: NetworkParams) -> np.ndarray:
    _require_transfers(params)
    rho = as_rho(rho, params)
    first, second = product_form_moments(rho, params)
    H = (np.outer(first, first) - second + np.diag(first)) / np.outer(rho, rho)
    H += np.diag(params.alpha / rho**2)
    return 0.5 * (H + H.T)


def label_from_eigenvalues(eigs: np.ndarray) -> str:
    eigs = np.asarray(eigs, dtype=float)
    delta = DEGENERACY_REL * np.max(np.abs(eigs))
    if np.any(np.abs(eigs) <= delta):
        return "degenerate"
    if np.all(eigs > 0):
        return "minimum"
    if np.all(eigs < 0):
        return "maximum"
    return "saddle"


def classify_critical_point(rho, params: NetworkParams, grad_tol: float = CRITICAL_TOL) -> CriticalPoint:
    rho = as_rho(rho, params)
    g = grad_phi(rho, params)
    gn = float(np.max(np.abs(g)))
    if gn >= grad_tol:
        raise NotCriticalError(f"|grad phi| = {gn:.3e} >= {grad_tol:g} at rho = {rho}")
    eigs = np.linalg.eigvalsh(hessian_phi(rho, params))
    return CriticalPoint(rho=rho, grad_norm=gn, hessian_eigenvalues=np.sort(eigs),
                         label=label_from_eigenvalues(eigs), phi_value=phi(rho, params))


def newton_refine(
    params: NetworkParams,
    rho0,
    tol: float = 1e-11,
    max_iter: int = 200,
) -> CriticalPoint:
    """Damped Newton on ``grad phi = 0`` in logarithmic coordinates ``z = log rho``.

    The Jacobian in ``z`` is ``H diag(rho)``. Steps are backtracked on the
    sup-norm of the gradient; a singular or unhelpful Newton direction is
    replaced by a steepest-descent step on ``|grad phi|^2``.
    """
    _require_transfers(params)
    z = np.log(as_rho(rho0, params))
    zmax = math.log(np.max((params.lam + params.gamma * params.C / params.A)
                           / (params.mu + params.gamma)) * 1e3)
    trace = []

    def residual(z):
        return grad_phi(np.exp(z), params)

    F = residual(z)
    fn = np.max(np.abs(F))
    for it in range(max_iter):
        trace.append((it, np.exp(z), fn))
        if fn < tol:
            return classify_critical_point(np.exp(z), params, grad_tol=max(tol, CRITICAL_TOL))
        rho = np.exp(z)
        J = hessian_phi(rho, params) * rho[None, :]
        directions = []
        try:
            if np.linalg.cond(J) < 1e14:
                directions.append(np.linalg.solve(J, -F))
        except np.linalg.LinAlgError:
            pass
        sd = -J.T @ F
        if np.linalg.norm(sd) > 0:
            directions.append(sd / np.linalg.norm(sd) * min(1.0, np.linalg.norm(F)))
        accepted = False
        for d in directions:
            step_norm = np.max(np.abs(d))
            if step_norm > 2.0:
                d = d * (2.0 / step_norm)
            t = 1.0
            for _ in range(40):
                zt = np.minimum(z + t * d, zmax)
                Ft = residual(zt)
                ft = np.max(np.abs(Ft))
                if np.isfinite(ft) and ft < (1.0 - 1e-4 * t) * fn:
                    z, F, fn = zt, Ft, ft
                    accepted = True
                    break
                t *= 0.5
            if accepted:
                break
        if not accepted:
            break
    if fn < CRITICAL_TOL:
        # stalled at roundoff level above the requested tolerance
        return classify_critical_point(np.exp(z), params)
    raise SolverError(f"Newton refinement stalled at |grad phi| = {fn:.3e}",
                      last=np.exp(z), trace=trace)


def multistart_box(params: NetworkParams) -> np.ndarray:
    """Upper bounds ``(lambda_k + gamma_k C / A_k) / (mu_k + gamma_k)`` containing every fixed point."""
    return (params.lam + params.gamma * params.C / params.A) / (params.mu + params.gamma)


def _same_point(a: np.ndarray, b: np.ndarray, rel: float = DEDUP_REL) -> bool:
    scale = max(np.max(np.abs(a)), np.max(np.abs(b)))
    return np.max(np.abs(a - b)) <= rel * scale


@dataclass
class SearchReport:
    """Bookkeeping of a multistart sweep."""

    starts: int = 0
    failures: list = field(default_factory=list)


def find_all_critical_points(
    params: NetworkParams,
    grid_per_axis: int = 7,
    report: SearchReport | None = None,
    picard_iter: int = 2000,
    tol: float = 1e-11,
) -> list[CriticalPoint]:
    """Multistart search for every critical point of ``phi``.

    Starts form a log-spaced grid on ``prod_k [1e-4 rho_max_k, rho_max_k]``.
    Each start is pushed by Picard towards an attracting point and polished
    by Newton; Newton is also launched from the raw start and from
    arithmetic and geometric midpoints of every pair of distinct limits,
    since saddles repel the Picard iteration. Duplicates within relative
    sup-distance 1e-6 are merged. The result is sorted by ``phi``.
    """
    _require_transfers(params)
    if grid_per_axis < 1:
        raise ValueError("grid_per_axis must be >= 1")
    report = report if report is not None else SearchReport()
    hi = multistart_box(params)
    axes = [np.geomspace(1e-4 * h, h, grid_per_axis) for h in hi]
    found: list[CriticalPoint] = []

    def add(cp: CriticalPoint) -> None:
        for other in found:
            if _same_point(cp.rho, other.rho):
                return
        found.append(cp)

    def launch(start, use_picard: bool) -> None:
        report.starts += 1
        x = np.asarray(start, dtype=float)
        try:
            if use_picard:
                try:
                    x = picard_solve(params, x, tol=1e-13, max_iter=picard_iter)
                except SolverError as exc:
                    x = exc.last
            add(newton_refine(params, x, tol=tol))
        except (SolverError, NotCriticalError, ValueError, FloatingPointError) as exc:
            report.failures.append((np.asarray(start, dtype=float), str(exc)))
            logger.debug("start %s failed: %s", start, exc)

    for start in itertools.product(*axes):
        launch(start, use_picard=True)
        launch(start, use_picard=False)
    limits = [cp.rho for cp in found]
    for a, b in itertools.combinations(limits, 2):
        launch(0.5 * (a + b), use_picard=False)
        launch(np.sqrt(a * b), use_picard=False)
    return sorted(found, key=lambda cp: cp.phi_value)


def picard_fixed_points(params: NetworkParams, grid_per_axis: int = 7, tol: float = 1e-12) -> list[np.ndarray]:
    """Distinct Picard limits from the multistart grid; works without transfers."""
    hi = multistart_box(params)
    hi = np.where(hi > 0, hi, 1.0)
    axes = [np.geomspace(1e-4 * h, h, grid_per_axis) for h in hi]
    out: list[np.ndarray] = []
    for start in itertools.product(*axes):
        try:
            x = picard_solve(params, start, tol=tol)
        except SolverError:
            continue
        if not any(_same_point(x, y) for y in out):
            out.append(x)
    return out


def equal_requirement_load(params: NetworkParams) -> np.ndarray:
    """Unique fixed point when every ``A_k`` is equal.

    Blocking then depends only on ``S = sum rho_k`` through the single-class
    Erlang formula with capacity ``floor(C / A)``, and ``S`` solves the
    scalar equation ``S = sum_k lambda_k / (mu_k + gamma_k B_1(S))``.
    """
    if np.any(params.A != params.A[0]):
        raise ModelError("equal_requirement_load needs identical capacity requirements")
    cap = params.C // int(params.A[0])
    lam, gam, mu = params.lam, params.gamma, params.mu
    if lam.sum() == 0:
        raise ModelError("all arrival rates are zero: the equilibrium is the empty node")

    def rhs(S):
        return np.sum(lam / (mu + gam * erlang_b(S, cap)))

    lo, hi = 1e-300, max(rhs(1e-300), 1.0)
    while rhs(hi) - hi > 0:
        hi *= 2.0
    S = brentq(lambda s: rhs(s) - s, lo, hi, xtol=1e-15, rtol=1e-15, maxiter=500)
    return lam / (mu + gam * erlang_b(S, cap))


# ---------------------------------------------------------------- design


@dataclass(frozen=True)
class BistableDesign:
    params: NetworkParams
    rho_bar: np.ndarray
    hessian: np.ndarray

    @property
    def second_derivative_signs(self) -> tuple[int, int]:
        d = np.diag(self.hessian)
        return int(np.sign(d[0])), int(np.sign(d[1]))


def saddle_condition(rho_bar) -> bool:
    r1, r2 = float(rho_bar[0]), float(rho_bar[1])
    return r2 < (r1 - 1.0) * math.exp(r1)


def design_bistable(rho_bar, C: int) -> BistableDesign:
    """Two-class instance (``A = (1, C)``, unit transfers, no service) with ``rho_bar`` critical.

    Arrival rates are ``lambda_k = rho_k - <I_k, nu_rho> = rho_k B_k(rho)``,
    which zero the gradient of ``phi`` at ``rho_bar`` by construction.
    """
    rho_bar = np.asarray(rho_bar, dtype=float)
    if rho_bar.shape != (2,) or np.any(rho_bar <= 0):
        raise ValueError("rho_bar must be two positive loads")
    if not saddle_condition(rho_bar):
        r1, r2 = rho_bar
        raise DesignConditionError(
            f"saddle condition rho_2 < (rho_1 - 1) exp(rho_1) fails: "
            f"{r2:g} >= ({r1:g} - 1) * exp({r1:g}) = {(r1 - 1) * math.exp(r1):g}"
        )
    template = NetworkParams(A=np.array([1, C]), C=C, lam=np.ones(2),
                             gamma=np.ones(2), mu=np.zeros(2))
    B = blocking_probabilities(rho_bar, template)
    params = template.replace(lam=rho_bar * B)
    return BistableDesign(params=params, rho_bar=rho_bar, hessian=hessian_phi(rho_bar, params))
