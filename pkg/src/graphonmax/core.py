"""Multipodal step-function graphons: densities, entropy, analytic gradients.

A multipodal graphon is described by cluster widths c_i (summing to 1) and a
symmetric block matrix p_ij of edge probabilities.  Everything downstream
(psi profiles, the bipodal solver, the constrained optimizer) is built on the
closed-form densities and gradients in this module:

    E(g)     = sum_ij c_i c_j p_ij
    d_i      = sum_j  c_j p_ij
    tau_k(g) = sum_i  c_i d_i^k
    s(g)     = sum_ij c_i c_j S0(p_ij),   S0(w) = -[w ln w + (1-w) ln(1-w)]/2
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, NamedTuple

import numpy as np

from .errors import DomainError, FormatError, SingularityError

__all__ = [
    "S0_MAX",
    "s0",
    "s0_deriv",
    "s0_prime_inv",
    "MultipodalGraphon",
    "GradientSet",
    "gradients",
    "effective_podality",
    "merge_clusters",
    "read_graphon",
    "write_graphon",
]

#: Maximum of the entropy density: S0(1/2) = (ln 2)/2.
S0_MAX = 0.5 * math.log(2.0)

WIDTH_SUM_TOL = 1e-12


# ---------------------------------------------------------------------------
# Entropy density S0 and its derivatives
# ---------------------------------------------------------------------------

def s0(w):
    """Entropy density S0(w) = -[w ln w + (1-w) ln(1-w)] / 2.

    Accepts a float or an ndarray in [0, 1].  The endpoint values are the
    limits, i.e. 0.
    """
    w = np.asarray(w, dtype=float)
    if np.any(w < 0.0) or np.any(w > 1.0):
        raise DomainError(f"s0 requires w in [0, 1], got {w}")
    out = np.zeros_like(w)
    interior = (w > 0.0) & (w < 1.0)
    wi = w[interior]
    out[interior] = -0.5 * (wi * np.log(wi) + (1.0 - wi) * np.log1p(-wi))
    return float(out) if out.ndim == 0 else out


def s0_deriv(w, order: int = 1):
    """m-th derivative of S0 at w, for w strictly inside (0, 1).

    Closed forms:
        S0'(w)   = [ln(1-w) - ln w] / 2
        S0^(m)(w) = -((m-2)!/2) [(-1)^m / w^(m-1) + 1 / (1-w)^(m-1)],  m >= 2
    """
    if order < 1:
        raise DomainError(f"derivative order must be >= 1, got {order}")
    w = np.asarray(w, dtype=float)
    if np.any(w <= 0.0) or np.any(w >= 1.0):
        raise SingularityError(f"S0 derivatives are singular outside (0,1): w={w}")
    if order == 1:
        out = 0.5 * (np.log1p(-w) - np.log(w))
    else:
        m = order
        fac = math.factorial(m - 2) / 2.0
        out = -fac * ((-1.0) ** m / w ** (m - 1) + 1.0 / (1.0 - w) ** (m - 1))
    return float(out) if np.ndim(out) == 0 else out


def s0_prime_inv(t: float) -> float:
    """Unique w in (0,1) with S0'(w) = t; logistic closed form w = 1/(1+e^{2t})."""
    return 1.0 / (1.0 + math.exp(2.0 * t))


# ---------------------------------------------------------------------------
# Array-level kernels (no validation; used by the solvers on raw parameters)
# ---------------------------------------------------------------------------

def degrees_cp(c: np.ndarray, p: np.ndarray) -> np.ndarray:
    return p @ c


def edge_density_cp(c: np.ndarray, p: np.ndarray) -> float:
    return float(c @ p @ c)


def kstar_density_cp(c: np.ndarray, p: np.ndarray, k: int) -> float:
    d = p @ c
    return float(c @ d**k)


def entropy_cp(c: np.ndarray, p: np.ndarray) -> float:
    return float(c @ s0(p) @ c)


def coupling_matrix(c: np.ndarray) -> np.ndarray:
    """A_ij = 2 c_i c_j off the diagonal, c_i^2 on it (one parameter per block)."""
    a = 2.0 * np.outer(c, c)
    np.fill_diagonal(a, c * c)
    return a


# ---------------------------------------------------------------------------
# The graphon value object
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class MultipodalGraphon:
    """An M-podal graphon: widths c_i (normalized to sum 1) and blocks p_ij.

    Immutable after construction; the arrays are marked read-only so instances
    can be shared freely.
    """

    widths: np.ndarray
    blocks: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.widths, dtype=float).copy()
        p = np.asarray(self.blocks, dtype=float).copy()
        if c.ndim != 1 or c.size < 1:
            raise DomainError("widths must be a non-empty 1-d vector")
        m = c.size
        if p.shape != (m, m):
            raise DomainError(f"blocks must be {m}x{m}, got {p.shape}")
        if np.any(c < -WIDTH_SUM_TOL):
            raise DomainError(f"negative cluster width in {c}")
        c = np.clip(c, 0.0, None)
        total = c.sum()
        if total <= 0.0:
            raise DomainError("cluster widths sum to zero")
        c /= total
        if np.any(p < -1e-12) or np.any(p > 1.0 + 1e-12):
            raise DomainError("block values must lie in [0, 1]")
        if np.max(np.abs(p - p.T)) > 1e-12:
            raise DomainError("block matrix must be symmetric")
        p = np.clip(0.5 * (p + p.T), 0.0, 1.0)
        c.flags.writeable = False
        p.flags.writeable = False
        object.__setattr__(self, "widths", c)
        object.__setattr__(self, "blocks", p)

    # -- constructors ------------------------------------------------------

    @classmethod
    def constant(cls, p: float) -> "MultipodalGraphon":
        return cls(np.array([1.0]), np.array([[float(p)]]))

    @classmethod
    def bipodal(cls, c: float, p11: float, p12: float, p22: float) -> "MultipodalGraphon":
        return cls(
            np.array([c, 1.0 - c]),
            np.array([[p11, p12], [p12, p22]], dtype=float),
        )

    # -- basic queries -----------------------------------------------------

    @property
    def podality(self) -> int:
        return self.widths.size

    def degrees(self) -> np.ndarray:
        """Degree function values d_i = sum_j c_j p_ij."""
        return degrees_cp(self.widths, self.blocks)

    def edge_density(self) -> float:
        return edge_density_cp(self.widths, self.blocks)

    def kstar_density(self, k: int) -> float:
        if k < 1:
            raise DomainError(f"k-star density needs k >= 1, got {k}")
        return kstar_density_cp(self.widths, self.blocks, k)

    def entropy(self) -> float:
        return entropy_cp(self.widths, self.blocks)

    def value_at(self, x, y):
        """Evaluate g(x, y) on the unit square (vectorized)."""
        edges = np.cumsum(self.widths)[:-1]
        i = np.searchsorted(edges, np.asarray(x, dtype=float), side="right")
        j = np.searchsorted(edges, np.asarray(y, dtype=float), side="right")
        return self.blocks[i, j]

    # -- structural operations ---------------------------------------------

    def permuted(self, perm: Iterable[int]) -> "MultipodalGraphon":
        perm = np.asarray(list(perm), dtype=int)
        return MultipodalGraphon(self.widths[perm], self.blocks[np.ix_(perm, perm)])

    def canonical(self) -> "MultipodalGraphon":
        """Clusters sorted by descending width, ties broken by descending degree."""
        d = self.degrees()
        perm = np.lexsort((-d, -self.widths))
        return self.permuted(perm)

    def params_tuple(self) -> tuple:
        return (tuple(self.widths), tuple(map(tuple, self.blocks)))


class GradientSet(NamedTuple):
    """All partials of (E, tau_k, s, C) with respect to p_ij and c_i.

    p-gradients are symmetric MxM matrices whose (i, j) entry is the partial
    with respect to the single block parameter p_ij.
    """

    de_dp: np.ndarray
    de_dc: np.ndarray
    dt_dp: np.ndarray
    dt_dc: np.ndarray
    ds_dp: np.ndarray
    ds_dc: np.ndarray
    dC_dc: np.ndarray


def gradients(g: MultipodalGraphon, k: int) -> GradientSet:
    """Analytic partials of edge density, k-star density, entropy and total mass.

    Requires all blocks strictly inside (0, 1), since dS/dp involves S0'.
    """
    c, p = g.widths, g.blocks
    if np.any(p <= 0.0) or np.any(p >= 1.0):
        raise SingularityError("entropy gradient requires interior block values")
    d = degrees_cp(c, p)
    a = coupling_matrix(c)
    dk1 = d ** (k - 1)
    de_dp = a.copy()
    de_dc = 2.0 * d
    dt_dp = 0.5 * k * (dk1[:, None] + dk1[None, :]) * a
    dt_dc = d**k + k * (p @ (c * dk1))
    ds_dp = s0_deriv(p, 1) * a
    ds_dc = 2.0 * (s0(p) @ c)
    dC_dc = np.ones_like(c)
    return GradientSet(de_dp, de_dc, dt_dp, dt_dc, ds_dp, ds_dc, dC_dc)


# ---------------------------------------------------------------------------
# Cluster merging / effective podality
# ---------------------------------------------------------------------------

def drop_null_clusters(g: MultipodalGraphon, width_tol: float = 1e-6) -> MultipodalGraphon:
    """Remove clusters of width <= width_tol (their blocks are unconstrained)."""
    keep = np.flatnonzero(g.widths > width_tol)
    if keep.size == 0 or keep.size == g.podality:
        return g
    return MultipodalGraphon(g.widths[keep], g.blocks[np.ix_(keep, keep)])


def _rows_match(p: np.ndarray, i: int, j: int, tol: float) -> bool:
    m = p.shape[0]
    others = [k for k in range(m) if k not in (i, j)]
    if others and np.max(np.abs(p[i, others] - p[j, others])) > tol:
        return False
    return abs(p[i, i] - p[i, j]) <= tol and abs(p[j, j] - p[i, j]) <= tol


def merge_clusters(g: MultipodalGraphon, row_tol: float = 1e-4) -> MultipodalGraphon:
    """Merge clusters whose block rows agree within row_tol (width-weighted)."""
    c = np.array(g.widths)
    p = np.array(g.blocks)
    changed = True
    while changed and c.size > 1:
        changed = False
        m = c.size
        for i in range(m):
            for j in range(i + 1, m):
                if _rows_match(p, i, j, row_tol):
                    wi, wj = c[i], c[j]
                    tot = wi + wj
                    if tot > 0:
                        # width-weighted row; the merged diagonal keeps the
                        # quadratic form (hence edge density) exact
                        pii, pij, pjj = p[i, i], p[i, j], p[j, j]
                        row = (wi * p[i] + wj * p[j]) / tot
                        diag = (wi * wi * pii + 2 * wi * wj * pij + wj * wj * pjj) / tot**2
                    else:
                        row, diag = p[i].copy(), p[i, i]
                    p[i] = row
                    p[:, i] = row
                    p[i, i] = diag
                    c[i] = tot
                    keep = [k for k in range(m) if k != j]
                    c = c[keep]
                    p = p[np.ix_(keep, keep)]
                    changed = True
                    break
            if changed:
                break
    return MultipodalGraphon(c, p)


def effective_podality(
    g: MultipodalGraphon, row_tol: float = 1e-4, width_tol: float = 1e-6
) -> int:
    """Number of clusters after dropping vanishing widths and merging
    near-identical rows."""
    merged = merge_clusters(drop_null_clusters(g, width_tol), row_tol)
    return int(np.sum(merged.widths > width_tol))


# ---------------------------------------------------------------------------
# Text format
# ---------------------------------------------------------------------------

def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def write_graphon(g: MultipodalGraphon, path=None) -> str:
    """Serialize in the plain text format.

    Line 1 is M, line 2 the widths, then M lines with the upper triangle of
    the block matrix row by row.  Round-trips to within 1e-15 (in fact
    exactly, via 17-significant-digit decimals).
    """
    m = g.podality
    lines = [str(m), " ".join(_fmt(w) for w in g.widths)]
    for i in range(m):
        lines.append(" ".join(_fmt(v) for v in g.blocks[i, i:]))
    text = "\n".join(lines) + "\n"
    if path is not None:
        with open(path, "w") as fh:
            fh.write(text)
    return text


def read_graphon(source) -> MultipodalGraphon:
    """Parse the text format; accepts a path or a string.

    Blank lines and lines starting with '#' (metadata footers) are ignored.
    """
    if isinstance(source, str) and "\n" in source:
        raw = source
    else:
        with open(source) as fh:
            raw = fh.read()
    rows = [ln.strip() for ln in raw.splitlines()]
    rows = [ln for ln in rows if ln and not ln.startswith("#")]
    if not rows:
        raise FormatError("empty graphon file")
    try:
        m = int(rows[0])
    except ValueError as exc:
        raise FormatError(f"first line must be the podality M, got {rows[0]!r}") from exc
    if m < 1 or len(rows) < 2 + m:
        raise FormatError(f"graphon file truncated: expected {2 + m} content lines")
    widths = np.array([float(t) for t in rows[1].split()])
    if widths.size != m:
        raise FormatError(f"expected {m} widths, got {widths.size}")
    p = np.zeros((m, m))
    for i in range(m):
        vals = [float(t) for t in rows[2 + i].split()]
        if len(vals) != m - i:
            raise FormatError(f"row {i}: expected {m - i} entries, got {len(vals)}")
        p[i, i:] = vals
        p[i:, i] = vals
    return MultipodalGraphon(widths, p)
