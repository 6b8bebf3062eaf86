"""Discrete probability measures and the transformations acting on them.

Three representations: weighted particle clouds, radial shell measures,
and gridded densities (cartesian or radial).  Transformations cover
recentering, dilation pushforward, mollification onto a grid, exact
rotation averaging by radius binning, and the mollification schedule that
approximates a measure in energy.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Union

import numpy as np
from scipy import integrate, optimize

from .kernels import GeometryConstants, RadialKernel

WEIGHT_FLOOR = 1e-10  # weights below this count as numerical zeros


class MeasureError(ValueError):
    pass


def _merge_close(positions: np.ndarray, weights: np.ndarray, atol: float):
    if len(positions) > 1:
        d = np.linalg.norm(positions[:, None, :] - positions[None, :, :], axis=-1)
        d = d + np.diag(np.full(len(positions), np.inf))
        if float(d.min()) > atol:
            return positions, weights  # all distinct: keep caller order
    # merge coincident atoms; canonical lexicographic order as a side effect
    order = np.lexsort(positions.T[::-1])
    pos = positions[order]
    w = weights[order]
    keep_pos = [pos[0]]
    keep_w = [w[0]]
    for x, wi in zip(pos[1:], w[1:]):
        if np.linalg.norm(x - keep_pos[-1]) <= atol:
            keep_w[-1] += wi
        else:
            keep_pos.append(x)
            keep_w.append(wi)
    return np.array(keep_pos), np.array(keep_w)


@dataclass(frozen=True)
class ParticleMeasure:
    """Atoms x_i with nonnegative weights summing to one.

    Coincident atoms are merged on construction; arrays are frozen.
    """

    positions: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        pos = np.atleast_2d(np.asarray(self.positions, dtype=float))
        if pos.shape[0] == 1 and pos.shape[1] > 1 and np.asarray(self.weights).size == pos.shape[1]:
            pos = pos.T
        w = np.asarray(self.weights, dtype=float).ravel()
        if pos.shape[0] != w.size:
            raise MeasureError("positions and weights disagree in length")
        if np.any(w < 0):
            raise MeasureError("weights must be nonnegative")
        if abs(w.sum() - 1.0) > 1e-12:
            raise MeasureError(f"weights must sum to 1 (got {w.sum()!r})")
        scale = float(np.max(np.abs(pos))) if pos.size else 0.0
        pos, w = _merge_close(pos, w, atol=1e-10 * (1.0 + scale))
        pos.setflags(write=False)
        w.setflags(write=False)
        object.__setattr__(self, "positions", pos)
        object.__setattr__(self, "weights", w)

    @property
    def dimension(self) -> int:
        return self.positions.shape[1]

    @property
    def size(self) -> int:
        return self.positions.shape[0]

    def support(self, floor: float = WEIGHT_FLOOR) -> "ParticleMeasure":
        keep = self.weights > floor
        w = self.weights[keep]
        return ParticleMeasure(self.positions[keep], w / w.sum())

    def radii(self) -> np.ndarray:
        return np.linalg.norm(self.positions, axis=1)


@dataclass(frozen=True)
class RadialMeasure:
    """Spherical shells: strictly increasing radii with masses summing to one."""

    radii: np.ndarray
    shell_masses: np.ndarray

    def __post_init__(self):
        r = np.asarray(self.radii, dtype=float).ravel()
        m = np.asarray(self.shell_masses, dtype=float).ravel()
        if r.size != m.size:
            raise MeasureError("radii and masses disagree in length")
        if np.any(r < 0):
            raise MeasureError("radii must be nonnegative")
        if np.any(m < 0):
            raise MeasureError("masses must be nonnegative")
        if abs(m.sum() - 1.0) > 1e-12:
            raise MeasureError(f"masses must sum to 1 (got {m.sum()!r})")
        order = np.argsort(r)
        r, m = r[order], m[order]
        # merge radii equal up to the binning tolerance
        out_r = [r[0]]
        out_m = [m[0]]
        for ri, mi in zip(r[1:], m[1:]):
            if ri - out_r[-1] <= 1e-9 * (1.0 + ri):
                out_m[-1] += mi
            else:
                out_r.append(ri)
                out_m.append(mi)
        r, m = np.array(out_r), np.array(out_m)
        r.setflags(write=False)
        m.setflags(write=False)
        object.__setattr__(self, "radii", r)
        object.__setattr__(self, "shell_masses", m)

    @property
    def size(self) -> int:
        return self.radii.size

    def support(self, floor: float = WEIGHT_FLOOR) -> "RadialMeasure":
        keep = self.shell_masses > floor
        m = self.shell_masses[keep]
        return RadialMeasure(self.radii[keep], m / m.sum())


Measure = Union[ParticleMeasure, RadialMeasure]


@dataclass(frozen=True)
class GridDensity:
    """Cartesian density grid: cell value = mass per unit volume."""

    origin: np.ndarray
    spacing: float
    cells: np.ndarray

    def __post_init__(self):
        origin = np.asarray(self.origin, dtype=float).ravel()
        cells = np.asarray(self.cells, dtype=float)
        if self.spacing <= 0:
            raise MeasureError("spacing must be positive")
        if np.any(cells < 0):
            raise MeasureError("densities must be nonnegative")
        origin.setflags(write=False)
        cells.setflags(write=False)
        object.__setattr__(self, "origin", origin)
        object.__setattr__(self, "cells", cells)

    @property
    def dimension(self) -> int:
        return self.cells.ndim

    def total_mass(self) -> float:
        return float(self.cells.sum() * self.spacing ** self.dimension)

    def sup_density(self) -> float:
        return float(self.cells.max()) if self.cells.size else 0.0

    def cell_centers(self) -> np.ndarray:
        idx = np.argwhere(np.ones_like(self.cells, dtype=bool))
        return self.origin + (idx + 0.5) * self.spacing


@dataclass(frozen=True)
class RadialDensityProfile:
    """Radial density samples: value = volumetric density at that radius."""

    radii: np.ndarray
    values: np.ndarray
    spacing: float
    dimension: int

    def total_mass(self) -> float:
        wn = GeometryConstants(self.dimension).omega_n
        lo = np.maximum(self.radii - self.spacing / 2.0, 0.0)
        hi = self.radii + self.spacing / 2.0
        return float(np.sum(self.values * wn * (hi ** self.dimension - lo ** self.dimension)))

    def sup_density(self) -> float:
        return float(self.values.max()) if self.values.size else 0.0


# --------------------------------------------------------------------------
# mollifier
# --------------------------------------------------------------------------


def _smoothstep(x):
    """C-infinity step: 0 for x <= 0, 1 for x >= 1."""
    x = np.clip(np.asarray(x, dtype=float), 0.0, 1.0)
    with np.errstate(divide="ignore", over="ignore"):
        a = np.where(x > 0, np.exp(-1.0 / np.maximum(x, 1e-300)), 0.0)
        b = np.where(x < 1, np.exp(-1.0 / np.maximum(1.0 - x, 1e-300)), 0.0)
    return a / (a + b)


@dataclass(frozen=True)
class Mollifier:
    """Smooth radial bump supported in the ball of the given radius.

    The profile is flat on a central plateau and decays through a smooth
    step, which keeps the sup norm at roughly 1.26/(omega_N rho^N), safely
    under the required 2/(omega_N rho^N) while remaining C-infinity.
    A plain exponential bump would violate that bound for N >= 2.
    """

    radius: float
    dimension: int

    def __post_init__(self):
        if self.radius <= 0 or self.dimension < 1:
            raise MeasureError("mollifier needs radius > 0 and dimension >= 1")

    @property
    def plateau_fraction(self) -> float:
        return 0.62 ** (1.0 / self.dimension)

    def raw_profile(self, t):
        """Unnormalized profile in [0, 1] as a function of |x|."""
        u = np.asarray(t, dtype=float) / self.radius
        q = self.plateau_fraction
        return np.where(u <= q, 1.0,
                        np.where(u < 1.0, _smoothstep((1.0 - u) / (1.0 - q)), 0.0))

    def normalization(self) -> float:
        """Value c with integral of c * raw_profile over R^N equal to 1."""
        n = self.dimension
        q = self.plateau_fraction
        wn = GeometryConstants(n).omega_n
        tail, _ = integrate.quad(
            lambda u: float(_smoothstep((1.0 - u) / (1.0 - q))) * n * u ** (n - 1.0),
            q, 1.0, limit=200)
        unit_ball_integral = q ** n + tail  # divided by omega_N
        return 1.0 / (wn * unit_ball_integral * self.radius ** n)

    def sup_bound(self) -> float:
        """The required ceiling 2/(omega_N rho^N)."""
        wn = GeometryConstants(self.dimension).omega_n
        return 2.0 / (wn * self.radius ** self.dimension)

    def value(self, t):
        return self.normalization() * self.raw_profile(t)


def barycenter(mu: ParticleMeasure) -> np.ndarray:
    """Mass-weighted mean position."""
    return np.asarray(mu.weights @ mu.positions, dtype=float)


def recenter(mu: ParticleMeasure) -> ParticleMeasure:
    """Translate so the barycenter is the origin; idempotent."""
    return ParticleMeasure(mu.positions - barycenter(mu)[None, :], mu.weights)


def dilate(mu: Measure, eps: float) -> Measure:
    """Pushforward under x -> (1 + eps) x; weights are untouched."""
    if eps <= -1:
        raise MeasureError("dilation needs eps > -1")
    if isinstance(mu, RadialMeasure):
        return RadialMeasure(mu.radii * (1.0 + eps), mu.shell_masses)
    return ParticleMeasure(mu.positions * (1.0 + eps), mu.weights)


def rotation_average(mu: ParticleMeasure, sample_count: int = 0,
                     seed: int = 0) -> RadialMeasure:
    """Average over all rotations about the origin, exactly.

    For radial kernels the energy of the rotation average depends only on
    the distribution of radii, so the average is realized exactly by
    binning atom weights by |x_i|; sample_count and seed are kept for
    callers that also want a particle-cloud rendering (see
    radial_to_particles) and are not used here.
    """
    del sample_count, seed
    b = barycenter(mu)
    scale = 1.0 + float(np.max(np.abs(mu.positions))) if mu.positions.size else 1.0
    if np.linalg.norm(b) > 1e-9 * scale:
        raise MeasureError("rotation averaging is about the origin; recenter first")
    return RadialMeasure(mu.radii(), mu.weights)


def radial_to_particles(mu: RadialMeasure, n: int, per_shell: int = 64,
                        seed: int = 0) -> ParticleMeasure:
    """Monte Carlo particle rendering of a radial measure."""
    rng = np.random.default_rng(seed)
    pos = []
    w = []
    for r, m in zip(mu.radii, mu.shell_masses):
        if r == 0.0:
            pos.append(np.zeros((1, n)))
            w.append(np.array([m]))
            continue
        dirs = rng.normal(size=(per_shell, n))
        dirs /= np.linalg.norm(dirs, axis=1)[:, None]
        pos.append(r * dirs)
        w.append(np.full(per_shell, m / per_shell))
    return ParticleMeasure(np.vstack(pos), np.concatenate(w))


def mollify(mu: ParticleMeasure, rho: float,
            grid_spacing: Optional[float] = None) -> GridDensity:
    """Convolve a particle measure with the standard mollifier onto a grid.

    Each atom's stamp is renormalized on the grid so total mass is exact;
    the per-cell densities then satisfy the mollifier sup bound up to grid
    quadrature of the profile.  The grid must resolve the bump:
    spacing <= rho/4.
    """
    if rho <= 0:
        raise MeasureError("mollification radius must be positive")
    h = grid_spacing if grid_spacing is not None else rho / 4.0
    if h > rho / 4.0 + 1e-12 * rho:
        raise MeasureError("grid too coarse: spacing must be <= rho/4")
    n = mu.dimension
    moll = Mollifier(rho, n)
    lo = mu.positions.min(axis=0) - (rho + h)
    hi = mu.positions.max(axis=0) + (rho + h)
    counts = np.maximum(np.ceil((hi - lo) / h).astype(int), 1)
    if int(np.prod(counts)) > 50_000_000:
        raise MeasureError("mollification grid would exceed 5e7 cells; "
                           "use a coarser spacing or a radial measure")
    cells = np.zeros(tuple(counts))
    axes = [lo[d] + (np.arange(counts[d]) + 0.5) * h for d in range(n)]
    reach = int(math.ceil(rho / h)) + 1
    for x, wgt in zip(mu.positions, mu.weights):
        center_idx = np.floor((x - lo) / h).astype(int)
        slices = []
        local_axes = []
        for d in range(n):
            a = max(center_idx[d] - reach, 0)
            b = min(center_idx[d] + reach + 1, counts[d])
            slices.append(slice(a, b))
            local_axes.append(axes[d][a:b] - x[d])
        mesh = np.meshgrid(*local_axes, indexing="ij")
        dist = np.sqrt(sum(m * m for m in mesh))
        stamp = moll.raw_profile(dist)
        total = stamp.sum() * h ** n
        if total <= 0:
            raise MeasureError("mollifier stamp missed the grid")
        cells[tuple(slices)] += stamp * (wgt / total)
    return GridDensity(origin=lo, spacing=h, cells=cells)


def _shell_average_profile(moll: Mollifier, s: float, a: float) -> float:
    """Average of the normalized mollifier over the sphere of radius a, at s.

    This is the convolution (mollifier * uniform_sphere_a)(s e1), evaluated
    with the same angular reduction the shell kernel uses.
    """
    n = moll.dimension
    rho = moll.radius
    c = moll.normalization()
    if a == 0.0:
        return float(c * moll.raw_profile(s))
    if s == 0.0:
        return float(c * moll.raw_profile(a))
    lo, hi = abs(s - a), min(s + a, rho)
    if hi <= lo:
        return 0.0
    if n == 3:
        val, _ = integrate.quad(lambda t: float(moll.raw_profile(t)) * t, lo, hi, limit=100)
        return c * val / (2.0 * s * a)
    if n == 1:
        return 0.5 * c * (float(moll.raw_profile(abs(s - a))) + float(moll.raw_profile(s + a)))
    norm = math.sqrt(math.pi) * math.gamma((n - 1) / 2.0) / math.gamma(n / 2.0)

    def integrand(theta):
        d = math.sqrt(max(s * s + a * a - 2.0 * s * a * math.cos(theta), 0.0))
        return float(moll.raw_profile(d)) * math.sin(theta) ** (n - 2)

    val, _ = integrate.quad(integrand, 0.0, math.pi, limit=200)
    return c * val / norm


def mollify_radial(mu: RadialMeasure, n: int, rho: float,
                   grid_spacing: Optional[float] = None) -> RadialDensityProfile:
    """Mollified density of a radial measure, sampled on a radial grid.

    Exact in the angular variables (shell averaging), discretized only in
    the radius; the profile is renormalized to unit mass after sampling.
    """
    if rho <= 0:
        raise MeasureError("mollification radius must be positive")
    h = grid_spacing if grid_spacing is not None else rho / 16.0
    if h > rho / 4.0 + 1e-12 * rho:
        raise MeasureError("radial grid too coarse: spacing must be <= rho/4")
    moll = Mollifier(rho, n)
    lo = max(float(mu.radii.min()) - rho, 0.0)
    hi = float(mu.radii.max()) + rho
    count = int(math.ceil((hi - lo) / h))
    radii = lo + (np.arange(count) + 0.5) * h
    values = np.zeros(count)
    for a, m in zip(mu.radii, mu.shell_masses):
        band = np.abs(radii - a) < rho
        for i in np.nonzero(band)[0]:
            values[i] += m * _shell_average_profile(moll, float(radii[i]), float(a))
    prof = RadialDensityProfile(radii=radii, values=values, spacing=h, dimension=n)
    mass = prof.total_mass()
    if mass <= 0:
        raise MeasureError("mollified profile lost all mass")
    if abs(mass - 1.0) > 1e-3:
        raise MeasureError(f"radial quadrature defect too large: mass={mass!r}")
    return RadialDensityProfile(radii=radii, values=values / mass, spacing=h, dimension=n)


# --------------------------------------------------------------------------
# smooth approximation schedule
# --------------------------------------------------------------------------


class ApproximationError(RuntimeError):
    pass


def _decreasing_radius(kernel: RadialKernel, t_max: float = 10.0) -> float:
    """Largest scanned radius below which the kernel is nonincreasing."""
    grid = np.geomspace(1e-8, t_max, 800)
    d = np.asarray(kernel.deriv(grid), dtype=float)
    ok = d <= 1e-9 * (1.0 + np.abs(d))
    if not ok[0]:
        return 0.0
    first_bad = int(np.argmin(ok)) if not ok.all() else ok.size
    return float(grid[first_bad - 1])


def mollification_radius(kernel: RadialKernel, alpha: float, eps: float, j: int) -> float:
    """Radius rho(j) solving g(3 rho/eps) (3 rho/eps)^alpha = 1/j.

    The bracket is (0, eps*r/3] with r the kernel's nonincreasing radius;
    there h(t) = g(t) t^alpha runs from 0 to h(r), so a root exists exactly
    when 1/j <= h(r).  rho(j) is nonincreasing in j.
    """
    if eps <= 0:
        raise ApproximationError("eps must be positive")
    if j < 1:
        raise ApproximationError("j must be a positive integer")
    r = _decreasing_radius(kernel)
    if r <= 0:
        raise ApproximationError("kernel is not decreasing near 0")
    target = 1.0 / j

    def h(t):
        return float(kernel.value(t)) * t ** alpha

    # verify h -> 0 numerically on a dyadic scan
    probes = r * 2.0 ** (-np.arange(8, 28, dtype=float))
    vals = np.array([h(t) for t in probes])
    if not (np.all(np.isfinite(vals)) and vals[-1] < vals[0] and vals[-1] < 0.5):
        raise ApproximationError("g(t) t^alpha does not vanish at 0 on the scan")
    if h(r) < target:
        raise ApproximationError("j too small for this kernel")
    # smallest root: scan upward from a tiny radius for the first crossing
    ts = np.geomspace(r * 1e-14, r, 600)
    hs = np.array([h(t) for t in ts])
    above = hs >= target
    if not above.any():
        raise ApproximationError("j too small for this kernel")
    k = int(np.argmax(above))
    if k == 0:
        t_root = float(ts[0])
    else:
        t_root = optimize.brentq(lambda t: h(t) - target,
                                 float(ts[k - 1]), float(ts[k]), maxiter=200)
    return eps * t_root / 3.0


def approximate_smooth(mu: Measure, kernel: RadialKernel, alpha: float,
                       eps: float, j: int, n: Optional[int] = None):
    """Dilate by (1 + eps) and mollify at the schedule radius rho(j).

    Returns a GridDensity for particle input, a RadialDensityProfile for
    radial input.  The energy of the result approaches the energy of the
    dilated measure as j grows.
    """
    rho = mollification_radius(kernel, alpha, eps, j)
    pushed = dilate(mu, eps)
    if isinstance(pushed, RadialMeasure):
        if n is None:
            raise ApproximationError("radial input needs the ambient dimension")
        return mollify_radial(pushed, n, rho)
    return mollify(pushed, rho)


# --------------------------------------------------------------------------
# support structure
# --------------------------------------------------------------------------


@dataclass
class SupportReport:
    diameter: float
    radius: float
    gaps: list

    def to_json_dict(self):
        return {"diameter": self.diameter, "radius": self.radius,
                "gaps": [[a, b] for a, b in self.gaps]}


def support_structure(mu: Measure, gap_tolerance: float,
                      floor: float = WEIGHT_FLOOR) -> SupportReport:
    """Diameter, outer radius, and gaps of the numerically retained support.

    Gaps are reported for one-dimensional particle measures (between
    consecutive atoms) and radial measures (between consecutive shells and
    between 0 and the innermost shell, since a ball support starts at 0).
    """
    if gap_tolerance <= 0:
        raise MeasureError("gap tolerance must be positive")
    if isinstance(mu, RadialMeasure):
        keep = mu.shell_masses > floor
        r = np.sort(mu.radii[keep])
        if r.size == 0:
            return SupportReport(0.0, 0.0, [])
        gaps = []
        if r[0] > gap_tolerance:
            gaps.append((0.0, float(r[0])))
        for a, b in zip(r[:-1], r[1:]):
            if b - a > gap_tolerance:
                gaps.append((float(a), float(b)))
        return SupportReport(diameter=float(2 * r[-1]), radius=float(r[-1]), gaps=gaps)
    keep = mu.weights > floor
    pts = mu.positions[keep]
    if pts.shape[0] == 0:
        return SupportReport(0.0, 0.0, [])
    radius = float(np.max(np.linalg.norm(pts, axis=1)))
    d = np.linalg.norm(pts[:, None, :] - pts[None, :, :], axis=-1)
    diameter = float(d.max())
    gaps = []
    if mu.dimension == 1:
        xs = np.sort(pts[:, 0])
        for a, b in zip(xs[:-1], xs[1:]):
            if b - a > gap_tolerance:
                gaps.append((float(a), float(b)))
    return SupportReport(diameter=diameter, radius=radius, gaps=gaps)


# --------------------------------------------------------------------------
# CSV serialization
# --------------------------------------------------------------------------


def measure_to_csv(mu, path) -> None:
    """One row per atom/shell/cell; the header names the representation."""
    import csv

    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        if isinstance(mu, ParticleMeasure):
            writer.writerow([f"x{d+1}" for d in range(mu.dimension)] + ["weight"])
            for x, w in zip(mu.positions, mu.weights):
                writer.writerow([repr(float(v)) for v in x] + [repr(float(w))])
        elif isinstance(mu, RadialMeasure):
            writer.writerow(["radius", "shell_mass"])
            for r, m in zip(mu.radii, mu.shell_masses):
                writer.writerow([repr(float(r)), repr(float(m))])
        elif isinstance(mu, GridDensity):
            n = mu.dimension
            writer.writerow([f"x{d+1}" for d in range(n)] + ["density"])
            idx = np.argwhere(np.ones_like(mu.cells, dtype=bool))
            centers = mu.origin + (idx + 0.5) * mu.spacing
            flat = mu.cells.ravel()
            for row, v in zip(centers, flat):
                writer.writerow([repr(float(c)) for c in row] + [repr(float(v))])
        elif isinstance(mu, RadialDensityProfile):
            writer.writerow(["radius", "density"])
            for r, v in zip(mu.radii, mu.values):
                writer.writerow([repr(float(r)), repr(float(v))])
        else:
            raise MeasureError(f"cannot serialize {type(mu).__name__}")
