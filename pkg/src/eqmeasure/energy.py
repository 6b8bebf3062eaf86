"""Pair energies, potentials and Gram matrices.

The quadratic energy of a weighted node set is w^T G w where G holds
kernel evaluations at pairwise distances.  Radial problems reduce to one
dimension through the shell kernel, the angular average of g between two
concentric spheres; Newton's theorem (g = 1/t in three dimensions) is the
special case where that average is 1/max(r, s).  Diagonal entries, where
the kernel may blow up, follow an explicit regularization rule.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from typing import Optional, Sequence

import numpy as np
from scipy import integrate

from .kernels import GeometryConstants, RadialKernel


class EnergyDivergenceError(RuntimeError):
    """Raised when a requested quantity is provably infinite."""


class DiagonalKind(str, Enum):
    CELL_AVERAGE = "CellAverage"
    FINITE_VALUE = "FiniteValue"
    INFINITE = "Infinite"


@dataclass(frozen=True)
class DiagonalRule:
    """How the singular diagonal of a Gram matrix is filled.

    CellAverage represents each node as a small uniform ball of the given
    radius: the diagonal is the ball average of the kernel, finite exactly
    when the kernel is locally integrable.  cell_radius=None means half the
    minimal node spacing.  FiniteValue uses g(0+); Infinite marks the
    diagonal as +inf so any weight there flags a divergent energy.
    """

    kind: DiagonalKind
    cell_radius: Optional[float] = None

    @staticmethod
    def cell_average(cell_radius: Optional[float] = None) -> "DiagonalRule":
        return DiagonalRule(DiagonalKind.CELL_AVERAGE, cell_radius)

    @staticmethod
    def finite_value() -> "DiagonalRule":
        return DiagonalRule(DiagonalKind.FINITE_VALUE)

    @staticmethod
    def infinite() -> "DiagonalRule":
        return DiagonalRule(DiagonalKind.INFINITE)


def cell_average_diagonal(kernel: RadialKernel, n: int, cell_radius: float) -> float:
    """(N / h^N) int_0^h g(t) t^(N-1) dt, the kernel averaged over a ball."""
    if cell_radius <= 0:
        raise ValueError("cell radius must be positive")
    closed = kernel.integral_t_power(n - 1.0, 0.0, cell_radius)
    if closed is not None:
        val = float(closed)
    else:
        if kernel.singularity_exponent() <= -n:
            return math.inf
        pts = [b for b in kernel.breakpoints() if 0 < b < cell_radius]
        val, _ = integrate.quad(lambda t: float(kernel.value(t)) * t ** (n - 1.0),
                                0.0, cell_radius, points=pts or None, limit=200)
    if not math.isfinite(val):
        return math.inf
    return n * val / cell_radius ** n


# --------------------------------------------------------------------------
# shell kernel: angular average of g between spheres of radii r and s
# --------------------------------------------------------------------------


def _sin_power_integral(n: int):
    """int_0^pi sin^(N-2) theta dtheta for N >= 2."""
    return math.sqrt(math.pi) * math.gamma((n - 1) / 2.0) / math.gamma(n / 2.0)


def shell_kernel(kernel: RadialKernel, n: int, r: float, s: float) -> float:
    """Average of g(|r e1 - s omega|) over directions omega on the sphere.

    Exact closed forms in one and three dimensions, sin^(N-2)-weighted
    quadrature otherwise.  Returns +inf when the induced one-dimensional
    integral diverges (a shell self-interaction that is too singular).
    """
    if r < 0 or s < 0:
        raise ValueError("radii must be nonnegative")
    if r == 0.0 and s == 0.0:
        return kernel.value_at_zero()
    if r == 0.0 or s == 0.0:
        return float(kernel.value(max(r, s)))
    if n == 1:
        return 0.5 * (float(kernel.value(abs(r - s)) if r != s else kernel.value_at_zero())
                      + float(kernel.value(r + s)))
    p0 = kernel.singularity_exponent()
    if r == s and p0 <= -(n - 1.0):
        return math.inf
    if n == 3:
        lo, hi = abs(r - s), r + s
        closed = kernel.integral_t_power(1.0, lo, hi)
        if closed is not None:
            val = float(closed)
        else:
            pts = [b for b in kernel.breakpoints() if lo < b < hi]
            val, _ = integrate.quad(lambda t: float(kernel.value(t)) * t,
                                    lo, hi, points=pts or None, limit=200)
        if not math.isfinite(val):
            return math.inf
        return val / (2.0 * r * s)
    # generic dimension: theta quadrature with the sphere surface weight
    norm = _sin_power_integral(n)

    def integrand(theta):
        d = math.sqrt(max(r * r + s * s - 2.0 * r * s * math.cos(theta), 0.0))
        d = max(d, 1e-300)
        return float(kernel.value(d)) * math.sin(theta) ** (n - 2)

    val, _ = integrate.quad(integrand, 0.0, math.pi, limit=300, points=[0.0])
    if not math.isfinite(val):
        return math.inf
    return val / norm


def shell_kernel_matrix(kernel: RadialKernel, n: int, radii: np.ndarray) -> np.ndarray:
    """Shell kernel on a radii grid, vectorized when closed forms exist.

    Diagonal entries are exact shell self-interactions (finite whenever the
    kernel singularity is milder than t^-(N-1)); zero radii delegate to the
    caller's diagonal handling and are returned as +inf placeholders only
    when truly divergent.
    """
    radii = np.asarray(radii, dtype=float)
    m = radii.size
    R = np.broadcast_to(radii[:, None], (m, m))
    S = np.broadcast_to(radii[None, :], (m, m))
    if n == 3:
        lo, hi = np.abs(R - S), R + S
        closed = kernel.integral_t_power(1.0, lo, hi)
        if closed is not None:
            with np.errstate(divide="ignore", invalid="ignore"):
                out = np.asarray(closed, dtype=float) / (2.0 * R * S)
            return _fix_zero_radii(kernel, radii, out)
    if n == 1:
        with np.errstate(divide="ignore", invalid="ignore"):
            near = np.abs(R - S)
            g_near = np.where(near > 0, _safe_value(kernel, near), kernel.value_at_zero())
            far = R + S
            g_far = np.where(far > 0, _safe_value(kernel, far), kernel.value_at_zero())
        return 0.5 * (g_near + g_far)
    out = np.empty((m, m))
    for i in range(m):
        for j in range(i, m):
            out[i, j] = out[j, i] = shell_kernel(kernel, n, radii[i], radii[j])
    return out


def _safe_value(kernel, arr):
    arr = np.asarray(arr, dtype=float)
    safe = np.where(arr > 0, arr, 1.0)
    vals = np.asarray(kernel.value(safe), dtype=float)
    return np.where(arr > 0, vals, np.nan)


def _fix_zero_radii(kernel, radii, out):
    zero = np.nonzero(radii == 0.0)[0]
    if zero.size:
        for i in zero:
            vals = np.where(radii > 0, _safe_value(kernel, radii), kernel.value_at_zero())
            out[i, :] = vals
            out[:, i] = vals
    bad = ~np.isfinite(out)
    if np.any(bad):
        out[bad] = np.inf
    return out


# --------------------------------------------------------------------------
# Gram matrices
# --------------------------------------------------------------------------


@dataclass
class GramMatrix:
    """Symmetric kernel matrix over fixed nodes with a regularized diagonal."""

    nodes: np.ndarray            # (m, N) positions, or (m,) radii when radial
    entries: np.ndarray          # (m, m), +inf allowed on the diagonal
    diagonal_rule: DiagonalRule
    radial: bool
    dimension: int

    @property
    def size(self) -> int:
        return self.entries.shape[0]

    @property
    def finite_diagonal(self) -> np.ndarray:
        return np.isfinite(np.diag(self.entries))


def _min_spacing(nodes: np.ndarray, radial: bool) -> float:
    if radial:
        r = np.sort(np.asarray(nodes, dtype=float))
        gaps = np.diff(r)
        gaps = gaps[gaps > 0]
        return float(gaps.min()) if gaps.size else 1.0
    pts = np.asarray(nodes, dtype=float)
    if pts.ndim == 1:
        pts = pts[:, None]
    d = np.linalg.norm(pts[:, None, :] - pts[None, :, :], axis=-1)
    d = d + np.diag(np.full(len(pts), np.inf))
    val = float(d.min())
    return val if math.isfinite(val) and val > 0 else 1.0


def gram(kernel: RadialKernel, nodes, diagonal_rule: Optional[DiagonalRule] = None,
         n: Optional[int] = None, radial: bool = False) -> GramMatrix:
    """Assemble the kernel Gram matrix over particle positions or shell radii.

    Radial diagonals are exact shell self-energies whenever those are
    finite; the diagonal rule then only decides genuinely singular entries
    (zero radius, or a kernel too singular for shells).  Particle diagonals
    always follow the rule.
    """
    nodes = np.asarray(nodes, dtype=float)
    if radial:
        if nodes.ndim != 1:
            raise ValueError("radial nodes must be a radii vector")
        if n is None:
            raise ValueError("radial problems need the ambient dimension")
    else:
        if nodes.ndim == 1:
            nodes = nodes[:, None]
        n = n if n is not None else nodes.shape[1]
    rule = diagonal_rule or DiagonalRule.cell_average()
    h = rule.cell_radius
    if rule.kind == DiagonalKind.CELL_AVERAGE and h is None:
        h = 0.5 * _min_spacing(nodes, radial)

    def rule_value() -> float:
        if rule.kind == DiagonalKind.INFINITE:
            return math.inf
        if rule.kind == DiagonalKind.FINITE_VALUE:
            v = kernel.value_at_zero()
            return v if math.isfinite(v) else math.inf
        return cell_average_diagonal(kernel, n, h)

    if radial:
        entries = shell_kernel_matrix(kernel, n, nodes)
        diag = np.diag(entries).copy()
        for i, r in enumerate(nodes):
            if r == 0.0 or not math.isfinite(diag[i]):
                diag[i] = rule_value() if r > 0 else (
                    kernel.value_at_zero() if rule.kind == DiagonalKind.FINITE_VALUE
                    and math.isfinite(kernel.value_at_zero()) else
                    (cell_average_diagonal(kernel, n, h) if rule.kind == DiagonalKind.CELL_AVERAGE
                     else math.inf))
        np.fill_diagonal(entries, diag)
    else:
        diff = nodes[:, None, :] - nodes[None, :, :]
        dist = np.linalg.norm(diff, axis=-1)
        m = len(nodes)
        entries = np.empty((m, m))
        off = ~np.eye(m, dtype=bool)
        entries[off] = np.asarray(kernel.value(dist[off]), dtype=float)
        np.fill_diagonal(entries, rule_value())
    entries = 0.5 * (entries + entries.T)
    return GramMatrix(nodes=nodes, entries=entries, diagonal_rule=rule,
                      radial=radial, dimension=int(n))


def energy(gram_matrix: GramMatrix, weights) -> float:
    """w^T G w; +inf if weight sits on an infinite diagonal entry."""
    w = np.asarray(weights, dtype=float)
    diag = np.diag(gram_matrix.entries)
    on_inf = ~np.isfinite(diag) & (w > 0)
    if np.any(on_inf):
        return math.inf
    G = np.where(np.isfinite(gram_matrix.entries), gram_matrix.entries, 0.0)
    return float(w @ (G @ w))


def potential_vector(gram_matrix: GramMatrix, weights) -> np.ndarray:
    """G w with zero-weight infinite diagonals contributing nothing.

    This is the potential sampled at the nodes along the same arithmetic
    path the energy uses, so sum(w * potential_vector) == energy exactly.
    """
    w = np.asarray(weights, dtype=float)
    G = gram_matrix.entries
    finite = np.isfinite(G)
    if finite.all():
        return G @ w
    Gz = np.where(finite, G, 0.0)
    p = Gz @ w
    bad = ~finite & (w[None, :] > 0)
    p[np.any(bad, axis=1)] = math.inf
    return p


@dataclass
class PotentialField:
    """Potential values psi(x) = sum_j w_j g(|x - y_j|) on query points."""

    query_points: np.ndarray
    values: np.ndarray

    def to_rows(self):
        pts = np.atleast_2d(self.query_points.astype(float))
        if pts.shape[0] != len(self.values):
            pts = pts.T
        return [list(map(float, pts[i])) + [float(self.values[i])] for i in range(len(self.values))]


def potential(kernel: RadialKernel, positions, weights, query_points,
              n: Optional[int] = None, radial: bool = False,
              self_value: Optional[float] = None) -> PotentialField:
    """Sample the potential of a weighted node set at arbitrary points.

    A query point that coincides with a node uses `self_value` for that
    node's contribution (defaults to g(0+), which may be +inf); pass the
    Gram diagonal value to stay consistent with a discrete solve.
    """
    pos = np.asarray(positions, dtype=float)
    w = np.asarray(weights, dtype=float)
    q = np.asarray(query_points, dtype=float)
    if radial:
        qr = np.atleast_1d(q).astype(float)
        pos_r = pos.ravel()
        K = shell_kernel_matrix(kernel, int(n), np.concatenate([qr, pos_r]))
        block = K[: qr.size, qr.size:].copy()
        if self_value is not None:
            block[~np.isfinite(block)] = self_value
        finite = np.isfinite(block)
        vals = np.where(finite, block, 0.0) @ w
        poisoned = np.any(~finite & (w[None, :] > 0), axis=1)
        vals = np.where(poisoned, np.inf, vals)
        return PotentialField(qr, np.asarray(vals, dtype=float))
    if pos.ndim == 1:
        pos = pos[:, None]
    qp = np.atleast_2d(q)
    if qp.shape[1] != pos.shape[1]:
        qp = qp.reshape(-1, pos.shape[1])
    d = np.linalg.norm(qp[:, None, :] - pos[None, :, :], axis=-1)
    sval = kernel.value_at_zero() if self_value is None else self_value
    hit = d <= 1e-12 * (1.0 + np.abs(d))
    vals = np.where(hit, sval, _safe_value(kernel, np.where(hit, 1.0, d)))
    out = vals @ w
    return PotentialField(qp, np.asarray(out, dtype=float))


def cross_energy(kernel: RadialKernel, mu_positions, mu_weights,
                 nu_positions, nu_weights, n: Optional[int] = None,
                 mu_radial: bool = False, nu_radial: bool = False) -> float:
    """Bilinear pair energy between two weighted node sets.

    Either side may be radial (shell radii); a shell interacts with a point
    through the shell kernel, which is exact.  Coincident point atoms across
    the two measures contribute g(0+), hence +inf for singular kernels.
    """
    wa = np.asarray(mu_weights, dtype=float)
    wb = np.asarray(nu_weights, dtype=float)
    if mu_radial or nu_radial:
        if n is None:
            raise ValueError("radial cross energies need the ambient dimension")
        # a point at radius |x| sees a shell through the shell kernel, so a
        # mixed particle/radial pair is still exact after taking radii
        ra = np.asarray(mu_positions, dtype=float) if mu_radial else np.linalg.norm(
            np.atleast_2d(np.asarray(mu_positions, dtype=float)), axis=-1)
        rb = np.asarray(nu_positions, dtype=float) if nu_radial else np.linalg.norm(
            np.atleast_2d(np.asarray(nu_positions, dtype=float)), axis=-1)
        K = shell_kernel_matrix(kernel, int(n), np.concatenate([ra, rb]))
        block = K[: ra.size, ra.size:]
        if not np.all(np.isfinite(block[np.outer(wa > 0, wb > 0)])):
            return math.inf
        return float(wa @ np.where(np.isfinite(block), block, 0.0) @ wb)
    pa = np.atleast_2d(np.asarray(mu_positions, dtype=float))
    pb = np.atleast_2d(np.asarray(nu_positions, dtype=float))
    if pa.ndim == 1:
        pa = pa[:, None]
    if pb.ndim == 1:
        pb = pb[:, None]
    d = np.linalg.norm(pa[:, None, :] - pb[None, :, :], axis=-1)
    zero = d == 0.0
    vals = np.where(zero, kernel.value_at_zero(), _safe_value(kernel, np.where(zero, 1.0, d)))
    mask = np.outer(wa > 0, wb > 0)
    if not np.all(np.isfinite(vals[mask])):
        return math.inf
    return float(wa @ np.where(np.isfinite(vals), vals, 0.0) @ wb)


# --------------------------------------------------------------------------
# energies of gridded densities
# --------------------------------------------------------------------------


def radial_cell_masses(radii: np.ndarray, values: np.ndarray, spacing: float, n: int) -> np.ndarray:
    """Masses of radial density cells: value times exact shell-layer volume."""
    wn = GeometryConstants(n).omega_n
    lo = np.maximum(radii - spacing / 2.0, 0.0)
    hi = radii + spacing / 2.0
    return values * wn * (hi ** n - lo ** n)


def radial_density_energy(kernel: RadialKernel, radii, values, spacing, n: int) -> float:
    """Energy of a radial density profile via the shell Gram matrix."""
    radii = np.asarray(radii, dtype=float)
    values = np.asarray(values, dtype=float)
    masses = radial_cell_masses(radii, values, spacing, n)
    keep = masses > 0
    if not np.any(keep):
        return 0.0
    gm = gram(kernel, radii[keep], DiagonalRule.cell_average(spacing / 2.0), n=n, radial=True)
    return energy(gm, masses[keep])


def grid_density_energy(kernel: RadialKernel, origin, spacing: float, cells: np.ndarray,
                        n: Optional[int] = None) -> float:
    """Energy of a cartesian density grid, cells collapsed to their centers."""
    cells = np.asarray(cells, dtype=float)
    n = n if n is not None else cells.ndim
    idx = np.argwhere(cells > 0)
    if idx.size == 0:
        return 0.0
    pts = np.asarray(origin, dtype=float) + (idx + 0.5) * spacing
    w = cells[tuple(idx.T)] * spacing ** n
    gm = gram(kernel, pts, DiagonalRule.cell_average(spacing / 2.0), n=n)
    return energy(gm, w)
