"""Psi-profile machinery for star models and positive polynomial mixtures.

For a weight polynomial h(x) = sum_k a_k x^k (a_k >= 0, degree >= 2) and a
base density e, the profile

    psi(e, et) = N(e, et) / D(e, et)
    N = 2 [S0(et) - S0(e) - S0'(e) (et - e)]
    D = h(et) - h(e) - h'(e) (et - e)

measures the second-order entropy cost per unit of extra weighted star
density carried by a vanishing cluster with degree et.  Its global maximizer
zeta(e) is the limiting off-diagonal block value of the optimal bipodal
graphon, and the maximum value is the tau-multiplier beta.

Numerics: N is evaluated through the binary relative-entropy form
    N = -2 [ et ln(et/e) + (1-et) ln((1-et)/(1-e)) ]
with log1p, and D through the exact finite series
    D = sum_{m>=2} h^(m)(e) (et-e)^m / m!,
both of which avoid the catastrophic cancellation of the textbook
expressions near et = e.  Inside |et - e| < 1e-5 all quantities switch to
degree-4 Taylor rationals about e.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Callable, Mapping, Sequence

import numpy as np

from . import core
from .core import MultipodalGraphon, coupling_matrix, s0, s0_deriv
from .errors import DomainError, ProfileError, SingularityError

__all__ = [
    "StarWeights",
    "PsiProfile",
    "PsiMax",
    "psi",
    "psi_prime",
    "psi_grid",
    "zeta",
    "beta_sensitivity",
    "degeneracy_value",
    "BadValueRow",
    "BadValueScan",
    "bad_value_scan",
    "write_badscan_csv",
    "poly_density",
    "poly_gradients",
]

#: below this |et - e| every profile quantity is evaluated by Taylor expansion
TAYLOR_SWITCH = 1e-5

ZETA_GRID = 2048
GOLDEN_TOL = 1e-12
UNIQUE_GAP_TOL = 1e-9
SENSITIVITY_TOL = 1e-8
DEGENERACY_TOL = 1e-8

_INVPHI = (math.sqrt(5.0) - 1.0) / 2.0


# ---------------------------------------------------------------------------
# Weight polynomials
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class StarWeights:
    """h(x) = sum_k a_k x^k with non-negative coefficients and degree >= 2."""

    coeffs: tuple

    def __init__(self, coeffs: Mapping[int, float]):
        items = tuple(sorted((int(k), float(a)) for k, a in coeffs.items() if a != 0.0))
        if not items:
            raise DomainError("empty weight polynomial")
        for k, a in items:
            if k < 1:
                raise DomainError(f"star weights need k >= 1, got k={k}")
            if a < 0.0:
                raise DomainError(f"star weights must be non-negative, got a_{k}={a}")
        if max(k for k, _ in items) < 2:
            raise DomainError("weight polynomial must have degree >= 2")
        object.__setattr__(self, "coeffs", items)

    @classmethod
    def kstar(cls, k: int) -> "StarWeights":
        return cls({k: 1.0})

    @property
    def degree(self) -> int:
        return self.coeffs[-1][0]

    def h(self, x):
        out = 0.0
        for k, a in self.coeffs:
            out = out + a * np.asarray(x, dtype=float) ** k
        return out

    def h_deriv(self, x, order: int = 1):
        """order-th derivative of h; identically zero past the degree."""
        x = np.asarray(x, dtype=float)
        out = np.zeros_like(x)
        for k, a in self.coeffs:
            if k >= order:
                out = out + a * math.perm(k, order) * x ** (k - order)
        return float(out) if out.ndim == 0 else out

    def er_value(self, e: float) -> float:
        """Weighted star density of the constant graphon: h(e)."""
        return float(self.h(e))

    def describe(self) -> str:
        return " + ".join(f"{a:g} x^{k}" for k, a in self.coeffs)


def poly_density(g: MultipodalGraphon, w: StarWeights) -> float:
    """Weighted star density sum_i c_i h(d_i)."""
    d = g.degrees()
    return float(g.widths @ w.h(d))


def poly_gradients(g: MultipodalGraphon, w: StarWeights):
    """Partials of the weighted star density with respect to p_ij and c_i."""
    c, p = g.widths, g.blocks
    d = core.degrees_cp(c, p)
    hp = w.h_deriv(d, 1)
    a = coupling_matrix(c)
    dt_dp = 0.5 * (hp[:, None] + hp[None, :]) * a
    dt_dc = w.h(d) + p @ (c * hp)
    return dt_dp, dt_dc


# ---------------------------------------------------------------------------
# Profiles
# ---------------------------------------------------------------------------

class PsiProfile:
    """N, D and psi = N/D for a weight polynomial at base density e."""

    def __init__(self, weights: StarWeights, e: float):
        e = float(e)
        if not 0.0 < e < 1.0:
            raise DomainError(f"base density must lie in (0,1), got {e}")
        self.weights = weights
        self.e = e
        self.s0_e = float(s0(e))
        self.s0p_e = float(s0_deriv(e, 1))
        # D(e, e+t) = sum_{m>=2} h^(m)(e) t^m / m!   (exact for polynomials)
        kmax = weights.degree
        self._d_series = np.array(
            [weights.h_deriv(e, m) / math.factorial(m) for m in range(2, kmax + 1)]
        )
        # Taylor rationals about t = 0, through t^4 past the double root.
        n_ser = [2.0 * s0_deriv(e, m) / math.factorial(m) for m in range(2, 7)]
        d_ser = [
            weights.h_deriv(e, m) / math.factorial(m) if m <= kmax else 0.0
            for m in range(2, 7)
        ]
        self._taylor_num = np.array(n_ser)
        self._taylor_den = np.array(d_ser)

    # -- stable primitives (scalar or ndarray in the second slot) ----------

    def n_value(self, et):
        # N = 2[S0(et) - S0(e) - S0'(e)(et-e)] collapses to minus the binary
        # relative entropy of et against e; log1p keeps it stable near et = e.
        et = np.asarray(et, dtype=float)
        t = et - self.e
        val = -(et * np.log1p(t / self.e) + (1.0 - et) * np.log1p(-t / (1.0 - self.e)))
        return float(val) if val.ndim == 0 else val

    def d_value(self, et):
        t = np.asarray(et, dtype=float) - self.e
        acc = np.zeros_like(t)
        for coef in self._d_series[::-1]:
            acc = acc * t + coef
        out = acc * t * t
        return float(out) if out.ndim == 0 else out

    def n_prime(self, et):
        et = np.asarray(et, dtype=float)
        t = et - self.e
        out = np.log1p(-t / (et * (1.0 - self.e)))
        return float(out) if out.ndim == 0 else out

    def d_prime(self, et):
        t = np.asarray(et, dtype=float) - self.e
        acc = np.zeros_like(t)
        for m, coef in zip(range(len(self._d_series) + 1, 1, -1), self._d_series[::-1]):
            acc = acc * t + m * coef
        out = acc * t
        return float(out) if out.ndim == 0 else out

    def n_pp(self, et):
        et = np.asarray(et, dtype=float)
        out = -1.0 / (et * (1.0 - et))
        return float(out) if out.ndim == 0 else out

    def d_pp(self, et):
        return self.weights.h_deriv(et, 2)

    def n_ppp(self, et):
        et = np.asarray(et, dtype=float)
        out = 1.0 / et**2 - 1.0 / (1.0 - et) ** 2
        return float(out) if out.ndim == 0 else out

    def d_ppp(self, et):
        return self.weights.h_deriv(et, 3)

    # -- Taylor branch ------------------------------------------------------

    def _taylor_eval(self, t: float, order: int) -> float:
        a = self._taylor_num
        b = self._taylor_den
        pa = np.polynomial.polynomial.polyval
        A, B = pa(t, a), pa(t, b)
        if order == 0:
            return float(A / B)
        da = np.polynomial.polynomial.polyder(a)
        db = np.polynomial.polynomial.polyder(b)
        A1, B1 = pa(t, da), pa(t, db)
        first = (A1 * B - A * B1) / B**2
        if order == 1:
            return float(first)
        A2 = pa(t, np.polynomial.polynomial.polyder(da))
        B2 = pa(t, np.polynomial.polynomial.polyder(db))
        return float((A2 * B - A * B2) / B**2 - 2.0 * B1 * first / B)

    def _beta_fn_deriv_taylor(self, t: float) -> float:
        # N'/D' = PN(t)/PD(t) with PN = sum n_m t^(m-2)/(m-1)!, likewise PD.
        m = np.arange(2, 7)
        pn = self._taylor_num * m  # n_m / (m-1)!
        pd = self._taylor_den * m
        pa = np.polynomial.polynomial.polyval
        A, B = pa(t, pn), pa(t, pd)
        A1 = pa(t, np.polynomial.polynomial.polyder(pn))
        B1 = pa(t, np.polynomial.polynomial.polyder(pd))
        return float((A1 * B - A * B1) / B**2)


@dataclass(frozen=True)
class PsiMax:
    """Global maximizer of psi(e, .) with the critical value beta."""

    e_tilde: float
    beta: float
    unique: bool
    second_max_gap: float


def _check_et(et: float):
    if not 0.0 < et < 1.0:
        raise DomainError(f"e_tilde must lie in (0,1), got {et}")


def psi(profile: PsiProfile, e_tilde: float) -> float:
    """psi(e, e_tilde), with the removable singularity at e_tilde = e filled
    by 2 S0''(e) / h''(e)."""
    _check_et(e_tilde)
    t = e_tilde - profile.e
    if abs(t) < TAYLOR_SWITCH:
        return profile._taylor_eval(t, 0)
    return profile.n_value(e_tilde) / profile.d_value(e_tilde)


def psi_prime(profile: PsiProfile, e_tilde: float, order: int = 1) -> float:
    """First or second derivative of psi with respect to e_tilde."""
    if order not in (1, 2):
        raise DomainError(f"order must be 1 or 2, got {order}")
    _check_et(e_tilde)
    t = e_tilde - profile.e
    if abs(t) < TAYLOR_SWITCH:
        return profile._taylor_eval(t, order)
    n, d = profile.n_value(e_tilde), profile.d_value(e_tilde)
    n1, d1 = profile.n_prime(e_tilde), profile.d_prime(e_tilde)
    first = (d * n1 - n * d1) / d**2
    if order == 1:
        return first
    n2, d2 = profile.n_pp(e_tilde), profile.d_pp(e_tilde)
    return (d * n2 - n * d2) / d**2 - 2.0 * d1 * first / d


def psi_grid(profile: PsiProfile, ets: np.ndarray) -> np.ndarray:
    """Vectorized psi over an array of e_tilde values in (0,1)."""
    ets = np.asarray(ets, dtype=float)
    if np.any(ets <= 0.0) or np.any(ets >= 1.0):
        raise DomainError("e_tilde grid must lie in (0,1)")
    t = ets - profile.e
    near = np.abs(t) < TAYLOR_SWITCH
    with np.errstate(divide="ignore", invalid="ignore"):
        out = profile.n_value(ets) / profile.d_value(ets)
    if np.any(near):
        out[near] = [profile._taylor_eval(float(ti), 0) for ti in t[near]]
    return out


def beta_sensitivity(profile: PsiProfile, e_tilde: float) -> float:
    """d(N'/D')/d e_tilde = (D' N'' - N' D'') / D'^2.

    Singular exactly at e_tilde = e (D' = 0); close to it the limit value
    (N''' D'' - N'' D''') / (2 D''^2) is returned via the Taylor branch.
    """
    _check_et(e_tilde)
    t = e_tilde - profile.e
    if t == 0.0:
        raise SingularityError("beta sensitivity is singular at e_tilde = e")
    if abs(t) < TAYLOR_SWITCH:
        return profile._beta_fn_deriv_taylor(t)
    n1, d1 = profile.n_prime(e_tilde), profile.d_prime(e_tilde)
    n2, d2 = profile.n_pp(e_tilde), profile.d_pp(e_tilde)
    return (d1 * n2 - n1 * d2) / d1**2


def degeneracy_value(weights: StarWeights, e_tilde: float) -> float:
    """D''(et) N'''(et) - D'''(et) N''(et); zeros mark degenerate profiles.

    Depends on et only (not on the base density), so its roots bound the
    possible degenerate maximizers.
    """
    _check_et(e_tilde)
    n2 = 2.0 * s0_deriv(e_tilde, 2)
    n3 = 2.0 * s0_deriv(e_tilde, 3)
    return float(weights.h_deriv(e_tilde, 2) * n3 - weights.h_deriv(e_tilde, 3) * n2)


# ---------------------------------------------------------------------------
# Global maximization
# ---------------------------------------------------------------------------

def _golden_max(f, lo: float, hi: float, tol: float) -> float:
    a, b = lo, hi
    x1 = b - _INVPHI * (b - a)
    x2 = a + _INVPHI * (b - a)
    f1, f2 = f(x1), f(x2)
    while b - a > tol:
        if f1 >= f2:
            b, x2, f2 = x2, x1, f1
            x1 = b - _INVPHI * (b - a)
            f1 = f(x1)
        else:
            a, x1, f1 = x1, x2, f2
            x2 = a + _INVPHI * (b - a)
            f2 = f(x2)
    return 0.5 * (a + b)


def _newton_polish(profile: PsiProfile, x0: float, lo: float, hi: float) -> float:
    x = x0
    for _ in range(20):
        g1 = psi_prime(profile, x, 1)
        g2 = psi_prime(profile, x, 2)
        if not math.isfinite(g1) or not math.isfinite(g2) or g2 >= 0.0:
            return x
        step = -g1 / g2
        xn = x + step
        if not lo < xn < hi:
            return x
        x = xn
        if abs(step) < 1e-16:
            break
    return x


def zeta(profile: PsiProfile, grid_size: int = ZETA_GRID, gap_tol: float = UNIQUE_GAP_TOL) -> PsiMax:
    """Global maximizer of psi(e, .) over (0, 1).

    Dense uniform scan, golden-section refinement of every local-max bracket
    down to width 1e-12, then a safeguarded Newton polish on psi'.  Reports
    non-uniqueness when the top two local maxima agree within gap_tol.
    """
    grid = np.linspace(0.0, 1.0, grid_size + 2)[1:-1]
    vals = psi_grid(profile, grid)
    n = grid.size
    cand_idx = [
        i
        for i in range(n)
        if (i == 0 or vals[i] >= vals[i - 1]) and (i == n - 1 or vals[i] >= vals[i + 1])
    ]
    if not cand_idx:
        raise ProfileError("psi profile has no local maximum on the scan grid")

    f = lambda x: psi(profile, x)
    refined = []
    for i in cand_idx:
        lo = grid[i - 1] if i > 0 else grid[0] * 1e-3
        hi = grid[i + 1] if i < n - 1 else 0.5 * (grid[-1] + 1.0)
        x = _golden_max(f, lo, hi, GOLDEN_TOL)
        x = _newton_polish(profile, x, lo, hi)
        refined.append(x)

    # collapse duplicates produced by plateau brackets
    refined.sort()
    merged: list[float] = []
    for x in refined:
        if merged and abs(x - merged[-1]) < 5e-9:
            if psi(profile, x) > psi(profile, merged[-1]):
                merged[-1] = x
        else:
            merged.append(x)
    scored = sorted(((psi(profile, x), x) for x in merged), reverse=True)
    best_val, best_x = scored[0]
    if abs(psi_prime(profile, best_x, 1)) > 1e-5:
        raise ProfileError(
            f"maximizer at {best_x} is not critical (psi'={psi_prime(profile, best_x, 1):.3e})"
        )
    if len(scored) > 1:
        gap = best_val - scored[1][0]
    else:
        gap = math.inf
    return PsiMax(e_tilde=best_x, beta=best_val, unique=gap > gap_tol, second_max_gap=gap)


# ---------------------------------------------------------------------------
# Bad-value scan
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class BadValueRow:
    e: float
    unique_max: bool
    e_tilde: float
    beta: float
    beta_sens: float
    degeneracy: float
    flagged: bool
    reasons: tuple


@dataclass(frozen=True)
class BadValueScan:
    rows: tuple
    window: tuple
    flagged_e: tuple

    def is_flagged(self, e: float, atol: float = 1e-12) -> bool:
        return any(abs(e - x) <= atol for x in self.flagged_e)


WeightsSource = StarWeights | Callable[[float], StarWeights]


def _weights_at(source: WeightsSource, e: float) -> StarWeights:
    return source(e) if callable(source) else source


def bad_value_scan(
    source: WeightsSource,
    grid: Sequence[float],
    sens_tol: float = SENSITIVITY_TOL,
    degen_tol: float = DEGENERACY_TOL,
) -> BadValueScan:
    """Flag base densities where the profile machinery degenerates.

    A density e is flagged when (a) psi has numerically tied global maxima,
    (b) |d(N'/D')/d e_tilde| at the maximizer falls below sens_tol, or
    (c) the degeneracy value D''N''' - D'''N'' vanishes at the maximizer
    within degen_tol.  `source` is either a fixed weight polynomial or a
    callable e -> StarWeights (e.g. the reduction of a fixed subgraph).
    """
    rows = []
    kmax = 2
    for e in grid:
        w = _weights_at(source, float(e))
        kmax = max(kmax, w.degree)
        profile = PsiProfile(w, float(e))
        pm = zeta(profile)
        t = pm.e_tilde - profile.e
        if t == 0.0:
            bs = profile._beta_fn_deriv_taylor(0.0)
        else:
            bs = beta_sensitivity(profile, pm.e_tilde)
        degen = degeneracy_value(w, pm.e_tilde)
        reasons = []
        if not pm.unique:
            reasons.append("multiple_maxima")
        if abs(bs) < sens_tol:
            reasons.append("beta_sensitivity")
        if abs(degen) < degen_tol:
            reasons.append("degenerate")
        rows.append(
            BadValueRow(
                e=float(e),
                unique_max=pm.unique,
                e_tilde=pm.e_tilde,
                beta=pm.beta,
                beta_sens=bs,
                degeneracy=degen,
                flagged=bool(reasons),
                reasons=tuple(reasons),
            )
        )
    window = (0.5, (kmax - 1.0) / kmax)
    flagged = tuple(r.e for r in rows if r.flagged)
    return BadValueScan(rows=tuple(rows), window=window, flagged_e=flagged)


def write_badscan_csv(result: BadValueScan, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["e", "unique_max", "e_tilde", "beta", "beta_sens", "flagged"])
        for r in result.rows:
            writer.writerow(
                [
                    format(r.e, ".17g"),
                    int(r.unique_max),
                    format(r.e_tilde, ".17g"),
                    format(r.beta, ".17g"),
                    format(r.beta_sens, ".17g"),
                    int(r.flagged),
                ]
            )
