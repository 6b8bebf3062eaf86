"""Minimization of the pair energy w^T G w over the probability simplex.

Conditional-gradient (Frank-Wolfe) methods fit this problem exactly: the
linear minimization oracle is the node of least potential, so the
Frank-Wolfe gap is twice the defect in the first-order optimality
conditions of the continuous problem (potential constant on the support,
no smaller anywhere else).  A pairwise variant with an active-set polish
reaches machine-precision gaps on convex instances; multistart plus
vertex enumeration covers the nonconvex ones.  Also here: the confinement
radius that bounds the support of every minimizer, and a position-space
gradient descent for particle clouds.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Optional

import numpy as np
from scipy import integrate, special

from .energy import DiagonalRule, GramMatrix, energy, gram, potential_vector
from .kernels import GeometryConstants, RadialKernel
from .measures import ParticleMeasure

WEIGHT_FLOOR = 1e-10


class SolverError(RuntimeError):
    pass


class Stationarity(str, Enum):
    GLOBAL_CERTIFIED = "GlobalCertified"
    STATIONARY_ONLY = "StationaryOnly"


class ConvexityHint(str, Enum):
    CONVEX_CERTIFIED = "ConvexCertified"
    UNKNOWN = "Unknown"


def certify_convexity(gram_matrix: GramMatrix) -> ConvexityHint:
    """PSD check of the Gram form on the mass-neutral subspace.

    Positive definiteness of the kernel form against differences of
    probability measures on the nodes is exactly positive semidefiniteness
    of the Gram matrix restricted to vectors summing to zero.  Nodes with
    an infinite diagonal never carry weight and are excluded.
    """
    G = gram_matrix.entries
    keep = np.isfinite(np.diag(G))
    Gf = G[np.ix_(keep, keep)]
    m = Gf.shape[0]
    if m <= 1:
        return ConvexityHint.CONVEX_CERTIFIED
    proj = np.eye(m) - np.full((m, m), 1.0 / m)
    sym = proj @ Gf @ proj
    eigs = np.linalg.eigvalsh(0.5 * (sym + sym.T))
    scale = float(np.max(np.abs(Gf))) + 1e-30
    return (ConvexityHint.CONVEX_CERTIFIED if eigs[0] >= -1e-8 * scale
            else ConvexityHint.UNKNOWN)


@dataclass
class SimplexProblem:
    gram: GramMatrix
    convexity_hint: ConvexityHint = ConvexityHint.UNKNOWN

    @staticmethod
    def from_gram(gram_matrix: GramMatrix, certify: bool = True) -> "SimplexProblem":
        hint = certify_convexity(gram_matrix) if certify else ConvexityHint.UNKNOWN
        return SimplexProblem(gram_matrix, hint)


@dataclass
class SolveReport:
    """Result of a simplex minimization run."""

    weights: np.ndarray
    energy: float
    fw_gap: float
    iterations: int
    restarts_used: int
    stationarity: Stationarity
    nodes: np.ndarray = field(default=None, repr=False)
    radial: bool = False
    dimension: int = 0
    gram: GramMatrix = field(default=None, repr=False)

    def __post_init__(self):
        if self.fw_gap < -1e-10:
            raise SolverError(f"negative Frank-Wolfe gap {self.fw_gap!r}")
        s = float(np.sum(self.weights))
        if abs(s - 1.0) > 1e-12:
            raise SolverError(f"weights left the simplex (sum {s!r})")

    def support_indices(self, floor: float = WEIGHT_FLOOR) -> np.ndarray:
        return np.nonzero(self.weights > floor)[0]

    def to_json_dict(self, weights_csv_path: Optional[str] = None) -> dict:
        out = {
            "energy": self.energy,
            "fw_gap": self.fw_gap,
            "iterations": self.iterations,
            "restarts_used": self.restarts_used,
            "stationarity": self.stationarity.value,
        }
        if weights_csv_path is not None:
            out["weights_csv_path"] = weights_csv_path
        return out


def _masked_fields(G: np.ndarray):
    diag = np.diag(G)
    allowed = np.isfinite(diag)
    if not np.any(allowed):
        raise SolverError("every node has infinite self-energy")
    Gz = np.where(np.isfinite(G), G, 0.0)
    return allowed, Gz


def _uniform_start(allowed: np.ndarray) -> np.ndarray:
    w = np.where(allowed, 1.0, 0.0)
    return w / w.sum()


def frank_wolfe(problem: SimplexProblem, start: Optional[np.ndarray] = None,
                tol: Optional[float] = None, max_iter: Optional[int] = None) -> SolveReport:
    """Plain Frank-Wolfe with exact line search toward the best vertex.

    Ties in the linear oracle break toward the lowest node index.  The
    returned gap is 2 (w^T G w - min_j (Gw)_j), recomputed at the final
    iterate.  Stationarity is GlobalCertified only for certified convex
    problems, where the gap bounds the suboptimality.
    """
    G = problem.gram.entries
    m = G.shape[0]
    allowed, Gz = _masked_fields(G)
    w = _uniform_start(allowed) if start is None else np.asarray(start, dtype=float).copy()
    if np.any(w[~allowed] > 0):
        raise SolverError("start places weight on an infinite diagonal")
    p = Gz @ w
    E = float(w @ p)
    if tol is None:
        tol = 1e-8 * (1.0 + abs(E))
    if max_iter is None:
        max_iter = 50 * m
    iterations = 0
    for iterations in range(1, max_iter + 1):
        j = int(np.argmin(np.where(allowed, p, np.inf)))
        gap = 2.0 * (E - p[j])
        if gap <= tol:
            iterations -= 1
            break
        num = E - p[j]
        den = E - 2.0 * p[j] + G[j, j]
        if den > 0:
            gamma = min(max(num / den, 0.0), 1.0)
        else:
            # concave along this segment: the optimum is an endpoint
            gamma = 1.0 if G[j, j] < E else 0.0
        if gamma <= 0.0:
            break
        w *= (1.0 - gamma)
        w[j] += gamma
        p = (1.0 - gamma) * p + gamma * Gz[:, j]
        E = float(w @ p)
    w = np.maximum(w, 0.0)
    w /= w.sum()
    p = Gz @ w
    E = float(w @ p)
    gap = max(2.0 * (E - float(np.min(np.where(allowed, p, np.inf)))), 0.0)
    hint = problem.convexity_hint
    return SolveReport(
        weights=w, energy=E, fw_gap=gap, iterations=iterations, restarts_used=0,
        stationarity=(Stationarity.GLOBAL_CERTIFIED
                      if hint == ConvexityHint.CONVEX_CERTIFIED
                      else Stationarity.STATIONARY_ONLY),
        nodes=problem.gram.nodes, radial=problem.gram.radial,
        dimension=problem.gram.dimension, gram=problem.gram)


def _kkt_polish(G: np.ndarray, Gz: np.ndarray, allowed: np.ndarray,
                w: np.ndarray, max_rounds: Optional[int] = None):
    """Active-set refinement: equalize the potential on the support.

    Solves the equality-constrained optimality system on the current
    support, dropping negative weights and admitting violated nodes until
    the first-order conditions hold to solver precision.
    """
    m = G.shape[0]
    max_rounds = max_rounds if max_rounds is not None else 3 * m + 10
    support = set(np.nonzero(w > max(WEIGHT_FLOOR, float(w.max()) * 1e-9))[0].tolist())
    if not support:
        return None
    for _ in range(max_rounds):
        idx = np.array(sorted(support), dtype=int)
        k = idx.size
        A = np.zeros((k + 1, k + 1))
        A[:k, :k] = G[np.ix_(idx, idx)]
        A[:k, k] = 1.0
        A[k, :k] = 1.0
        rhs = np.zeros(k + 1)
        rhs[k] = 1.0
        try:
            sol = np.linalg.solve(A, rhs)
        except np.linalg.LinAlgError:
            return None
        wS, lam = sol[:k], sol[k]
        if np.min(wS) < -1e-12:
            support.discard(int(idx[int(np.argmin(wS))]))
            if not support:
                return None
            continue
        w_new = np.zeros(m)
        w_new[idx] = np.maximum(wS, 0.0)
        w_new /= w_new.sum()
        p = Gz @ w_new
        off = allowed & (w_new <= 0)
        viol = off & (p < lam - 1e-12 * (1.0 + abs(lam)))
        if np.any(viol):
            cand = int(np.argmin(np.where(viol, p, np.inf)))
            if cand in support:
                return w_new
            support.add(cand)
            continue
        return w_new
    return None


def _pairwise_run(G: np.ndarray, Gz: np.ndarray, allowed: np.ndarray,
                  w0: np.ndarray, tol: float, max_iter: int):
    """Pairwise Frank-Wolfe: shift mass from the worst to the best node."""
    w = w0.copy()
    p = Gz @ w
    E = float(w @ p)
    it = 0
    since_refresh = 0
    while it < max_iter:
        it += 1
        since_refresh += 1
        j = int(np.argmin(np.where(allowed, p, np.inf)))
        gap = 2.0 * (E - p[j])
        if gap <= tol:
            break
        active = w > 1e-15
        k = int(np.argmax(np.where(active, p, -np.inf)))
        if k == j or not active.any():
            break
        den = G[j, j] + G[k, k] - 2.0 * G[j, k]
        gamma_max = float(w[k])
        if den > 0:
            gamma = min(max((p[k] - p[j]) / den, 0.0), gamma_max)
        else:
            gamma = gamma_max if p[j] - p[k] < 0 else 0.0
        if gamma <= 0:
            break
        E = E + 2.0 * gamma * (p[j] - p[k]) + gamma * gamma * den
        w[j] += gamma
        w[k] = max(w[k] - gamma, 0.0)
        p += gamma * (Gz[:, j] - Gz[:, k])
        if since_refresh >= 64:
            since_refresh = 0
            w = np.maximum(w, 0.0)
            w /= w.sum()
            p = Gz @ w
            E = float(w @ p)
    w = np.maximum(w, 0.0)
    w /= w.sum()
    p = Gz @ w
    E = float(w @ p)
    gap = max(2.0 * (E - float(np.min(np.where(allowed, p, np.inf)))), 0.0)
    return w, E, gap, it


def _best_vertex_pair(G: np.ndarray, allowed: np.ndarray):
    """Exact optimum over single vertices and two-node faces (small n)."""
    idx = np.nonzero(allowed)[0]
    best_w = None
    best_E = math.inf
    for i in idx:
        if G[i, i] < best_E:
            best_E = float(G[i, i])
            best_w = (int(i), int(i), 1.0)
    for a_pos in range(idx.size):
        for b_pos in range(a_pos + 1, idx.size):
            i, j = int(idx[a_pos]), int(idx[b_pos])
            den = G[i, i] + G[j, j] - 2.0 * G[i, j]
            if den > 0:
                lam = (G[j, j] - G[i, j]) / den
                lam = min(max(lam, 0.0), 1.0)
                E = (lam * lam * G[i, i] + 2 * lam * (1 - lam) * G[i, j]
                     + (1 - lam) * (1 - lam) * G[j, j])
                if E < best_E:
                    best_E = float(E)
                    best_w = (i, j, lam)
    return best_w, best_E


def away_step_descent(problem: SimplexProblem, start: Optional[np.ndarray] = None,
                      tol: Optional[float] = None, max_iter: Optional[int] = None,
                      restarts: int = 5, seed: int = 0,
                      polish: bool = True) -> SolveReport:
    """Pairwise Frank-Wolfe from several starts, with an active-set polish.

    Runs from the uniform start, `restarts` random simplex starts, and (for
    at most 12 admissible nodes) the best vertex or two-node face.  The
    polish solves the first-order system on the final support and is kept
    only when it does not increase the energy.  Nonconvex problems report
    StationaryOnly regardless of how many starts agreed.
    """
    G = problem.gram.entries
    m = G.shape[0]
    allowed, Gz = _masked_fields(G)
    if tol is None:
        w0 = _uniform_start(allowed)
        tol = 1e-8 * (1.0 + abs(float(w0 @ (Gz @ w0))))
    if max_iter is None:
        max_iter = 50 * m
    rng = np.random.default_rng(seed)
    starts = []
    if start is not None:
        starts.append(np.asarray(start, dtype=float).copy())
    starts.append(_uniform_start(allowed))
    n_allowed = int(np.sum(allowed))
    for _ in range(max(0, restarts)):
        raw = np.zeros(m)
        raw[allowed] = rng.dirichlet(np.ones(n_allowed))
        starts.append(raw)
    if n_allowed <= 12:
        vert, _ = _best_vertex_pair(G, allowed)
        if vert is not None:
            i, j, lam = vert
            w = np.zeros(m)
            w[i] += lam
            w[j] += 1.0 - lam
            starts.append(w)
    best = None
    total_iters = 0
    for w0 in starts:
        w, E, gap, it = _pairwise_run(G, Gz, allowed, w0, tol, max_iter)
        total_iters += it
        if polish:
            w_pol = _kkt_polish(G, Gz, allowed, w)
            if w_pol is not None:
                E_pol = float(w_pol @ (Gz @ w_pol))
                if E_pol <= E + 1e-12 * (1.0 + abs(E)):
                    p = Gz @ w_pol
                    gap_pol = max(2.0 * (E_pol - float(np.min(np.where(allowed, p, np.inf)))), 0.0)
                    w, E, gap = w_pol, E_pol, gap_pol
        if best is None or E < best[1]:
            best = (w, E, gap)
    w, E, gap = best
    hint = problem.convexity_hint
    return SolveReport(
        weights=w, energy=E, fw_gap=gap, iterations=total_iters,
        restarts_used=len(starts) - 1,
        stationarity=(Stationarity.GLOBAL_CERTIFIED
                      if hint == ConvexityHint.CONVEX_CERTIFIED
                      else Stationarity.STATIONARY_ONLY),
        nodes=problem.gram.nodes, radial=problem.gram.radial,
        dimension=problem.gram.dimension, gram=problem.gram)


# --------------------------------------------------------------------------
# confinement radius
# --------------------------------------------------------------------------


def ball_pair_distance_density(n: int, radius: float):
    """Density of |X - Y| for X, Y uniform in a ball of the given radius."""
    def p(t):
        t = np.asarray(t, dtype=float)
        u = t / (2.0 * radius)
        x = np.clip(1.0 - u * u, 0.0, 1.0)
        return (n * t ** (n - 1) / radius ** n) * special.betainc((n + 1) / 2.0, 0.5, x)
    return p


def unit_ball_energy(kernel: RadialKernel, n: int) -> float:
    """Energy of the uniform probability measure on the ball of unit volume.

    Reduced to a single integral against the exact pair-distance density;
    +inf when the kernel is not locally integrable in dimension n.
    """
    if kernel.singularity_exponent() <= -n:
        return math.inf
    radius = GeometryConstants(n).omega_n ** (-1.0 / n)
    p = ball_pair_distance_density(n, radius)
    pts = [b for b in kernel.breakpoints() if 0 < b < 2 * radius]
    val, _ = integrate.quad(lambda t: float(kernel.value(t)) * float(p(t)),
                            0.0, 2.0 * radius, points=pts + [0.0], limit=400)
    return float(val)


def unit_ball_energy_mc(kernel: RadialKernel, n: int, samples: int = 200_000,
                        seed: int = 0) -> tuple:
    """Monte Carlo estimate (mean, standard error) of the unit ball energy."""
    rng = np.random.default_rng(seed)
    radius = GeometryConstants(n).omega_n ** (-1.0 / n)

    def draw(count):
        x = rng.normal(size=(count, n))
        x /= np.linalg.norm(x, axis=1)[:, None]
        return x * (radius * rng.random(count) ** (1.0 / n))[:, None]

    d = np.linalg.norm(draw(samples) - draw(samples), axis=1)
    vals = np.asarray(kernel.value(d), dtype=float)
    return float(vals.mean()), float(vals.std(ddof=1) / math.sqrt(samples))


def support_radius_bound(kernel: RadialKernel, n: int, t_cap: float = 1e9) -> float:
    """Radius R with every minimizer supported in the ball of radius R.

    R = 4 T where beyond T the kernel exceeds 24 times the unit-volume ball
    energy.  Requires a confining kernel (g grows past that level); found
    by scan plus bisection on the last crossing.
    """
    e_ball = unit_ball_energy(kernel, n)
    if not math.isfinite(e_ball):
        raise SolverError("unit ball energy diverges; no confinement bound")
    level = 24.0 * e_ball
    t_hi = 1.0
    while float(kernel.value(t_hi)) <= level:
        t_hi *= 2.0
        if t_hi > t_cap:
            raise SolverError("no confining radius: kernel stays below the level")
    grid = np.geomspace(t_hi * 1e-6, t_hi, 4000)
    vals = np.asarray(kernel.value(grid), dtype=float)
    below = vals <= level
    if not below.any():
        return 4.0 * float(grid[0])
    last = int(np.nonzero(below)[0][-1])
    if last == grid.size - 1:
        raise SolverError("no confining radius on the scanned range")
    lo, hi = float(grid[last]), float(grid[last + 1])
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if float(kernel.value(mid)) <= level:
            lo = mid
        else:
            hi = mid
        if hi - lo <= 1e-12 * max(hi, 1.0):
            break
    return 4.0 * hi


def radial_minimize(kernel: RadialKernel, n: int, radii_grid,
                    tol: Optional[float] = None, max_iter: Optional[int] = None,
                    restarts: int = 0, seed: int = 0,
                    certify: bool = True) -> SolveReport:
    """Minimize over shell masses on a fixed radii grid."""
    radii = np.asarray(radii_grid, dtype=float)
    gm = gram(kernel, radii, DiagonalRule.cell_average(), n=n, radial=True)
    problem = SimplexProblem.from_gram(gm, certify=certify)
    return away_step_descent(problem, tol=tol, max_iter=max_iter,
                             restarts=restarts, seed=seed)


# --------------------------------------------------------------------------
# particle position descent
# --------------------------------------------------------------------------


def potential_gradient_field(kernel: RadialKernel, mu: ParticleMeasure) -> np.ndarray:
    """grad psi_mu at each atom, self-interaction excluded."""
    pos, w = mu.positions, mu.weights
    diff = pos[:, None, :] - pos[None, :, :]
    dist = np.linalg.norm(diff, axis=-1)
    off = dist > 0
    slope = np.zeros_like(dist)
    slope[off] = np.asarray(kernel.deriv(dist[off]), dtype=float) / dist[off]
    return np.einsum("j,ij,ijd->id", w, slope, diff)


def energy_position_gradient(kernel: RadialKernel, mu: ParticleMeasure) -> np.ndarray:
    """Gradient of the pair energy with respect to atom positions."""
    return 2.0 * mu.weights[:, None] * potential_gradient_field(kernel, mu)


def _offdiag_energy(kernel: RadialKernel, pos: np.ndarray, w: np.ndarray) -> float:
    diff = pos[:, None, :] - pos[None, :, :]
    dist = np.linalg.norm(diff, axis=-1)
    off = dist > 0
    vals = np.zeros_like(dist)
    vals[off] = np.asarray(kernel.value(dist[off]), dtype=float)
    return float(w @ vals @ w)


def particle_descent(kernel: RadialKernel, mu: ParticleMeasure, step: float,
                     iters: int) -> ParticleMeasure:
    """Move atoms along -grad psi with per-atom backtracking.

    The energy (diagonal excluded, which is position-independent) never
    increases; an atom whose step cannot be made productive within 30
    halvings is frozen for that iteration.  Atoms that collide are merged
    by the measure constructor.
    """
    if step <= 0 or iters < 0:
        raise SolverError("need step > 0 and iters >= 0")
    pos = mu.positions.copy()
    w = mu.weights.copy()
    for _ in range(iters):
        current = _offdiag_energy(kernel, pos, w)
        grad = potential_gradient_field(kernel, ParticleMeasure(pos, w))
        for i in range(pos.shape[0]):
            g = grad[i]
            norm = float(np.linalg.norm(g))
            if norm == 0.0:
                continue
            s = step
            for _ in range(30):
                trial = pos.copy()
                trial[i] = pos[i] - s * g
                e_trial = _offdiag_energy(kernel, trial, w)
                if e_trial <= current:
                    pos = trial
                    current = e_trial
                    break
                s *= 0.5
    return ParticleMeasure(pos, w)
