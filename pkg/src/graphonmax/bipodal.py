"""Exact bipodal optimality system and Newton continuation off the ER curve.

For a weight polynomial h the entropy-maximizing bipodal graphon with edge
density e0 and weighted star density tau0 solves four equations in the
unknowns (p11, p12, p22, c):

    f1 = S0'(p11) - 2 S0'(p12) + S0'(p22)              = 0
    f2 = ds/dc - alpha de/dc - beta dtau/dc            = 0
    f3 = E(g)                                          = e0
    f4 = c h(d1) + (1-c) h(d2)                         = tau0

with the multipliers eliminated through

    beta  = 2 [S0'(p22) - S0'(p12)] / [h'(d2) - h'(d1)]
    alpha = [2 h'(d2) S0'(p12) - S0'(p22)(h'(d2) + h'(d1))] / [h'(d2) - h'(d1)].

At tau0 = h(e0) the known root is (p11*, zeta(e0), e0, c=0), and the family
continues analytically in tau; this module follows it with a damped Newton
predictor-corrector.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .core import MultipodalGraphon, s0, s0_deriv, s0_prime_inv
from .errors import (
    BadDensityError,
    ConvergenceError,
    DomainError,
    EliminationSingularError,
    PathEndError,
)
from .stars import PsiProfile, StarWeights, bad_value_scan, zeta

__all__ = [
    "BipodalSolution",
    "ContinuationPath",
    "residual",
    "jacobian",
    "multipliers",
    "limit_solution",
    "solve_at",
    "continue_path",
    "default_tau_window",
]

NEWTON_TOL = 1e-11
NEWTON_MAX_ITER = 50
FD_STEP = 1e-7
P_BOX = 1e-9
C_MAX = 0.5
MIN_TAU_STEP = 1e-12


@dataclass(frozen=True)
class BipodalSolution:
    """One point on the analytic bipodal family.  Cluster 1 is the small one."""

    e: float
    tau: float
    c: float
    p11: float
    p12: float
    p22: float
    alpha: float
    beta: float
    s: float
    newton_iters: int
    resid: float

    def params(self) -> tuple:
        return (self.c, self.p11, self.p12, self.p22)

    def as_graphon(self) -> MultipodalGraphon:
        return MultipodalGraphon.bipodal(self.c, self.p11, self.p12, self.p22)

    def f1(self) -> float:
        return float(
            s0_deriv(self.p11, 1) - 2.0 * s0_deriv(self.p12, 1) + s0_deriv(self.p22, 1)
        )


def _degrees(state):
    p11, p12, p22, c = state
    d1 = c * p11 + (1.0 - c) * p12
    d2 = c * p12 + (1.0 - c) * p22
    return d1, d2


def multipliers(state, weights: StarWeights) -> tuple:
    """(alpha, beta) from the second and third optimality equations."""
    p11, p12, p22, c = state
    d1, d2 = _degrees(state)
    h1 = float(weights.h_deriv(d1, 1))
    h2 = float(weights.h_deriv(d2, 1))
    den = h2 - h1
    if abs(den) < 1e-12 * max(1.0, abs(h1) + abs(h2)):
        raise EliminationSingularError(
            f"h'(d1) = h'(d2) = {h1:.6g}: multiplier elimination is singular"
        )
    sp12 = float(s0_deriv(p12, 1))
    sp22 = float(s0_deriv(p22, 1))
    beta = 2.0 * (sp22 - sp12) / den
    alpha = (2.0 * h2 * sp12 - sp22 * (h2 + h1)) / den
    return alpha, beta


def residual(state, weights: StarWeights, targets) -> np.ndarray:
    """The 4-vector (f1, f2, f3 - e0, f4 - tau0) at state = (p11, p12, p22, c)."""
    e0, tau0 = targets
    p11, p12, p22, c = state
    d1, d2 = _degrees(state)
    alpha, beta = multipliers(state, weights)
    f1 = float(s0_deriv(p11, 1) - 2.0 * s0_deriv(p12, 1) + s0_deriv(p22, 1))
    s11, s12, s22 = float(s0(p11)), float(s0(p12)), float(s0(p22))
    ds_dc = 2.0 * c * s11 + 2.0 * (1.0 - 2.0 * c) * s12 - 2.0 * (1.0 - c) * s22
    de_dc = 2.0 * c * p11 + 2.0 * (1.0 - 2.0 * c) * p12 - 2.0 * (1.0 - c) * p22
    dt_dc = (
        float(weights.h(d1))
        - float(weights.h(d2))
        + c * float(weights.h_deriv(d1, 1)) * (p11 - p12)
        + (1.0 - c) * float(weights.h_deriv(d2, 1)) * (p12 - p22)
    )
    f2 = ds_dc - alpha * de_dc - beta * dt_dc
    f3 = c * c * p11 + 2.0 * c * (1.0 - c) * p12 + (1.0 - c) ** 2 * p22
    f4 = c * float(weights.h(d1)) + (1.0 - c) * float(weights.h(d2))
    return np.array([f1, f2, f3 - e0, f4 - tau0])


def jacobian(state, weights: StarWeights, targets, step: float = FD_STEP) -> np.ndarray:
    """Finite-difference Jacobian of the residual, columns (p11, p12, p22, c).

    Central differences except for c near 0, where a one-sided second-order
    stencil keeps c >= 0.
    """
    x = np.asarray(state, dtype=float)
    jac = np.zeros((4, 4))
    for j in range(4):
        h = step
        if j < 3:
            h = min(step, 0.25 * x[j], 0.25 * (1.0 - x[j]))
        if j == 3 and x[j] < step:
            xp = x.copy()
            xp[j] += h
            xpp = x.copy()
            xpp[j] += 2.0 * h
            jac[:, j] = (
                -3.0 * residual(x, weights, targets)
                + 4.0 * residual(xp, weights, targets)
                - residual(xpp, weights, targets)
            ) / (2.0 * h)
        else:
            xp = x.copy()
            xp[j] += h
            xm = x.copy()
            xm[j] -= h
            jac[:, j] = (residual(xp, weights, targets) - residual(xm, weights, targets)) / (
                2.0 * h
            )
    return jac


def limit_solution(weights: StarWeights, e0: float):
    """The c = 0 root on the ER curve: (p11*, zeta(e0), e0, 0) and its PsiMax."""
    pm = zeta(PsiProfile(weights, e0))
    p12 = pm.e_tilde
    p11 = s0_prime_inv(2.0 * float(s0_deriv(p12, 1)) - float(s0_deriv(e0, 1)))
    return np.array([p11, p12, e0, 0.0]), pm


def _assert_not_bad(weights: StarWeights, e0: float):
    scan = bad_value_scan(weights, [e0])
    row = scan.rows[0]
    if row.flagged:
        raise BadDensityError(
            f"e = {e0} rejected by the bad-value gate ({', '.join(row.reasons)})"
        )
    return row


def _clip(x: np.ndarray) -> np.ndarray:
    out = x.copy()
    out[:3] = np.clip(out[:3], P_BOX, 1.0 - P_BOX)
    out[3] = min(max(out[3], 0.0), C_MAX)
    return out


def _newton(x0, weights, targets, tol=NEWTON_TOL, max_iter=NEWTON_MAX_ITER):
    x = _clip(np.asarray(x0, dtype=float))
    r = residual(x, weights, targets)
    norm = float(np.max(np.abs(r)))
    for it in range(1, max_iter + 1):
        if norm < tol:
            return x, norm, it - 1
        jac = jacobian(x, weights, targets)
        try:
            delta = np.linalg.solve(jac, -r)
        except np.linalg.LinAlgError as exc:
            raise ConvergenceError(f"singular Jacobian at iteration {it}") from exc
        lam = 1.0
        accepted = False
        while lam >= 2.0**-16:
            xn = _clip(x + lam * delta)
            try:
                rn = residual(xn, weights, targets)
            except (EliminationSingularError, ArithmeticError):
                lam *= 0.5
                continue
            nn = float(np.max(np.abs(rn)))
            if nn < (1.0 - 1e-4 * lam) * norm:
                x, r, norm = xn, rn, nn
                accepted = True
                break
            lam *= 0.5
        if not accepted:
            raise ConvergenceError(
                f"damped Newton stalled at residual {norm:.3e} (iteration {it})"
            )
    if norm < tol:
        return x, norm, max_iter
    raise ConvergenceError(
        f"no convergence in {max_iter} iterations (residual {norm:.3e}); continuation required"
    )


def _make_solution(x, weights, targets, iters, norm) -> BipodalSolution:
    p11, p12, p22, c = (float(v) for v in x)
    alpha, beta = multipliers(x, weights)
    g = MultipodalGraphon.bipodal(c, p11, p12, p22)
    return BipodalSolution(
        e=targets[0],
        tau=targets[1],
        c=c,
        p11=p11,
        p12=p12,
        p22=p22,
        alpha=alpha,
        beta=beta,
        s=g.entropy(),
        newton_iters=iters,
        resid=norm,
    )


def solve_at(
    weights: StarWeights,
    e0: float,
    tau0: float,
    x0=None,
    check_bad: bool = True,
) -> BipodalSolution:
    """Solve the optimality system at (e0, tau0), tau0 >= h(e0).

    Without a warm start the asymptotic seed is used: p22 = e0,
    p12 = zeta(e0), p11 from the f1 identity, and c = dtau / D(e0, zeta(e0))
    from the leading-order tau expansion.
    """
    if check_bad:
        _assert_not_bad(weights, e0)
    er = weights.er_value(e0)
    dtau = tau0 - er
    if dtau < 0.0:
        raise DomainError(f"tau0 = {tau0} below the ER curve value {er}")
    if x0 is None:
        x0, _ = limit_solution(weights, e0)
        x0 = x0.copy()
        profile = PsiProfile(weights, e0)
        dval = profile.d_value(x0[1])
        x0[3] = min(dtau / dval, 0.4) if dval > 0 else 0.0
    x, norm, iters = _newton(x0, weights, (e0, tau0))
    return _make_solution(x, weights, (e0, tau0), iters, norm)


class ContinuationPath:
    """Ordered bipodal solutions at strictly increasing tau, plus metadata."""

    def __init__(self, weights: StarWeights, e0: float):
        self.weights = weights
        self.e = e0
        self.er_tau = weights.er_value(e0)
        self.solutions: list[BipodalSolution] = []
        self.step_sizes: list[float] = []

    def append(self, sol: BipodalSolution):
        prev = self.solutions[-1].tau if self.solutions else self.er_tau
        self.solutions.append(sol)
        self.step_sizes.append(sol.tau - prev)

    def __len__(self):
        return len(self.solutions)

    def taus(self) -> np.ndarray:
        return np.array([s.tau for s in self.solutions])

    def delta_taus(self) -> np.ndarray:
        return self.taus() - self.er_tau

    def column(self, name: str) -> np.ndarray:
        return np.array([getattr(s, name) for s in self.solutions])

    def fit_c_linear(self) -> tuple:
        """Least-squares c = slope * dtau + intercept; returns (slope, intercept, r2)."""
        x = self.delta_taus()
        y = self.column("c")
        slope, intercept = np.polyfit(x, y, 1)
        pred = slope * x + intercept
        ss_res = float(np.sum((y - pred) ** 2))
        ss_tot = float(np.sum((y - np.mean(y)) ** 2))
        r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else 1.0
        return float(slope), float(intercept), r2

    def beta_consistency(self) -> float:
        """Worst relative mismatch between finite-difference ds/dtau on
        adjacent solutions and the stored multiplier at the midpoint."""
        worst = 0.0
        sols = self.solutions
        for a, b in zip(sols, sols[1:]):
            fd = (b.s - a.s) / (b.tau - a.tau)
            mid = 0.5 * (a.beta + b.beta)
            worst = max(worst, abs(fd - mid) / abs(mid))
        return worst

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(
                ["e", "tau", "c", "p11", "p12", "p22", "alpha", "beta", "s", "newton_iters"]
            )
            for s in self.solutions:
                writer.writerow(
                    [format(v, ".17g") for v in (s.e, s.tau, s.c, s.p11, s.p12, s.p22, s.alpha, s.beta, s.s)]
                    + [s.newton_iters]
                )


def default_tau_window(weights: StarWeights, e0: float) -> float:
    """Diagnostic upper tau for scans: h(e0) plus 0.02 of the leading-order
    tau-per-unit-c scale D(e0, zeta(e0)).  Not a claim about the true window."""
    profile = PsiProfile(weights, e0)
    pm = zeta(profile)
    return weights.er_value(e0) + 0.02 * float(profile.d_value(pm.e_tilde))


def continue_path(
    weights: StarWeights,
    e0: float,
    tau_max: float | None = None,
    n_steps: int = 25,
    delta_tau_min: float = 1e-6,
    spacing: str = "log",
    targets: Sequence[float] | None = None,
    check_bad: bool = True,
) -> ContinuationPath:
    """Follow the bipodal family from the ER curve up to tau_max.

    The first step is solved from the asymptotic seed; later steps warm-start
    from linear extrapolation of the previous two solutions.  A failing step
    is halved toward the last accepted tau and aborts below 1e-12, raising
    PathEndError with the partial path attached.
    """
    if check_bad:
        _assert_not_bad(weights, e0)
    er = weights.er_value(e0)
    if targets is None:
        if tau_max is None:
            tau_max = default_tau_window(weights, e0)
        dt_max = tau_max - er
        if dt_max <= 0:
            raise DomainError(f"tau_max = {tau_max} is not above the ER value {er}")
        if spacing == "log":
            dts = np.geomspace(delta_tau_min, dt_max, n_steps)
        elif spacing == "linear":
            dts = np.linspace(dt_max / n_steps, dt_max, n_steps)
        else:
            raise ValueError(f"spacing must be 'log' or 'linear', got {spacing!r}")
        targets = er + dts
    targets = sorted(float(t) for t in targets)

    path = ContinuationPath(weights, e0)
    pending = list(targets)
    while pending:
        tau_t = pending[0]
        tau_last = path.solutions[-1].tau if path.solutions else er
        if len(path.solutions) >= 2:
            a, b = path.solutions[-2], path.solutions[-1]
            frac = (tau_t - b.tau) / (b.tau - a.tau) if b.tau > a.tau else 0.0
            xa = np.array([a.p11, a.p12, a.p22, a.c])
            xb = np.array([b.p11, b.p12, b.p22, b.c])
            x0 = xb + frac * (xb - xa)
        elif len(path.solutions) == 1:
            b = path.solutions[0]
            x0 = np.array([b.p11, b.p12, b.p22, b.c])
        else:
            x0 = None
        try:
            sol = solve_at(weights, e0, tau_t, x0=x0, check_bad=False)
        except ConvergenceError as exc:
            if tau_t - tau_last < MIN_TAU_STEP:
                raise PathEndError(
                    f"continuation step underflow at tau = {tau_t}", partial=path
                ) from exc
            # halve the step: retry at the midpoint first (kept on the path)
            pending.insert(0, 0.5 * (tau_last + tau_t))
            continue
        path.append(sol)
        pending.pop(0)
    return path
