"""Kernel (bifurcation) equation: critical points of the reduced action.

The range solve leaves an n-torus of candidate initial phases phi0; the
reduced action S_n(phi0) is the full action evaluated on the solved loop,
and its critical points give true periodic orbits.  The search runs on a
transverse slice of the torus (the time-shift direction is quotiented
out via the integer lattice orthogonal to k), locates zeros of the
projected gradient, and deduplicates by orbit distance after an optimal
time shift.  Degenerate landscapes, where the gradient sits below the
resolvable floor everywhere, are reported as a single cluster and
representatives are returned instead of artificially split points.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .loops import Loop, coeff_to_samples
from .model import mode_weights
from .rangesolve import (ContractionConfig, chart_point_batch, default_grid,
                         eval_N, solve_range)


@dataclass
class ReducedActionPoint:
    phi0: np.ndarray
    S_value: float
    grad: np.ndarray              # <R_phi(zeta(phi0))>, length n
    loop_ref: Loop
    cluster: int = -1
    s_param: np.ndarray | None = None


def action_functional(loop, phi0, selection, form, trunc, B, N_t=None):
    """Action of the full trajectory determined by (phi0, loop).

    Quadrature of int_0^T (I . phi' + i sum_j z_j zbar_j' - H) dt on the
    oversampled grid; spectral accuracy for band-limited integrands.
    """
    n, M = loop.n, loop.M
    eta = selection.eta
    N_t = N_t or default_grid(loop.L)
    samples = loop.to_samples(N_t)
    psi_s, J_s, z_s, zbar_s = samples
    dsamples = loop.derivative().to_samples(N_t)
    dpsi, _, _, dzbar = dsamples
    vals, I, _ = chart_point_batch(samples, phi0, selection, N_t)
    omega = selection.omega_tilde - eta ** 2 * (form.A @ selection.I0)
    Omega = selection.Omega_tilde - eta ** 2 * (B @ selection.I0)
    Z = (z_s * zbar_s).real
    phidot = selection.omega_tilde[:, None] + dpsi.real
    sympl = np.sum(I * phidot, axis=0) + np.sum(1j * z_s * dzbar, axis=0).real
    W = form.nonlinear_part()
    wvals = W.evaluate_batch(vals).real if W.nterms else 0.0
    ham = (omega @ I + Omega @ Z
           + eta ** 2 * (0.5 * np.sum(I * (form.A @ I), axis=0)
                         + np.sum((B @ I) * Z, axis=0))
           + wvals / eta ** 2)
    # exactly rounded accumulation: the kernel landscape can sit many
    # orders below the bulk of the integrand
    return selection.T * math.fsum(sympl - ham) / N_t


def reduced_action(phi0, selection, form, trunc, B, config=None, initial=None,
                   L_max=None):
    """Solve the range equation at phi0 and evaluate the restricted action.

    grad is the pre-projection time average <R_phi>; by the variational
    splitting it equals grad S_n / T up to the range-solve tolerance.
    """
    res = solve_range(phi0, selection, form, trunc, B, config=config,
                      initial=initial, L_max=L_max)
    S = action_functional(res.loop, np.asarray(phi0, float), selection, form,
                          trunc, B)
    return ReducedActionPoint(np.asarray(phi0, float), S, res.mean_Rphi,
                              res.loop)


def fd_gradient(phi0, selection, form, trunc, B, h=4e-3, config=None,
                L_max=None, richardson=True, warm=None):
    """Central finite differences of S_n, optionally Richardson-refined."""
    phi0 = np.asarray(phi0, float)
    n = len(phi0)

    def S(p):
        return reduced_action(p, selection, form, trunc, B, config=config,
                              initial=warm, L_max=L_max).S_value

    def central(hh):
        g = np.zeros(n)
        for i in range(n):
            e = np.zeros(n)
            e[i] = hh
            g[i] = (S(phi0 + e) - S(phi0 - e)) / (2 * hh)
        return g

    g1 = central(h)
    if not richardson:
        return g1
    g2 = central(h / 2)
    return (4 * g2 - g1) / 3


# ----------------------------------------------------------------------
# the transverse slice of the phase torus
# ----------------------------------------------------------------------
def integer_kernel_basis(k):
    """Lattice basis of {d in Z^n : k . d = 0} via unimodular reduction."""
    k = np.asarray(k, np.int64)
    n = len(k)
    U = np.eye(n, dtype=np.int64)
    v = k.copy()
    while np.count_nonzero(v) > 1:
        nz = np.flatnonzero(v)
        i, j = sorted(nz, key=lambda t: abs(v[t]))[:2]
        q = v[j] // v[i]
        v[j] -= q * v[i]
        U[:, j] -= q * U[:, i]
    pivot = int(np.flatnonzero(v)[0])
    cols = [c for c in range(n) if c != pivot]
    return U[:, cols]


def slice_point(s, basis):
    """phi0 on the transverse slice: 2 pi * basis @ s."""
    return 2 * np.pi * (basis @ np.asarray(s, float))


@dataclass
class CriticalSearchResult:
    points: list
    degenerate: bool
    landscape_amplitude: float
    floor: float
    n_expected: int

    @property
    def enough(self):
        return len(self.points) >= self.n_expected


class RangeEvaluator:
    """Reduced-action evaluation through the seminormal-form contraction."""

    def __init__(self, selection, form, trunc, B, config=None, L_max=None):
        self.selection, self.form, self.trunc, self.B = selection, form, trunc, B
        self.config = config or ContractionConfig()
        self.L_max = L_max

    def point(self, phi0, warm=None):
        return reduced_action(phi0, self.selection, self.form, self.trunc,
                              self.B, config=self.config, initial=warm,
                              L_max=self.L_max)

    def trajectory(self, pt, N_t=None):
        return trajectory_samples(pt, self.selection, self.trunc, N_t=N_t)


class OrbitEvaluator:
    """Reduced-action evaluation through the original-coordinate solver."""

    def __init__(self, selection, form, trunc, spec, tol=1e-11, L_max=None,
                 max_iters=80):
        from .model import grid_model
        self.selection, self.form, self.trunc = selection, form, trunc
        self.spec, self.tol, self.L_max = spec, tol, L_max
        self.max_iters = max_iters
        self.gm = grid_model(spec, trunc)

    def point(self, phi0, warm=None):
        from .orbitsolve import solve_orbit, orbit_action
        res = solve_orbit(phi0, self.selection, self.form, self.trunc,
                          self.spec, tol=self.tol, max_iters=self.max_iters,
                          L_max=self.L_max, initial=warm)
        S = orbit_action(res, self.selection, self.gm)
        return ReducedActionPoint(np.asarray(phi0, float), S, res.mean_Rphi,
                                  res.loop)

    def trajectory(self, pt, N_t=None):
        from .orbitsolve import chart_trajectory
        N_t = N_t or default_grid(pt.loop_ref.L, degree=2)
        Y, _, _ = chart_trajectory(pt.loop_ref, pt.phi0, self.selection, N_t)
        return Y


def find_critical_points(selection, form, trunc, B, grid_per_dim=16,
                         newton_tol=1e-11, config=None, L_max=None,
                         orbit_tol=1e-6, cluster_tol=1e-10, evaluator=None):
    """Locate >= n critical points of S_n on the transverse slice.

    Grid-seeds the projected gradient on Gamma = E / (Z^n cap E); when the
    sampled gradient is everywhere below the resolvable floor, the whole
    slice is one degenerate critical manifold: n evenly spaced
    representatives are returned in a single cluster.  Otherwise zeros are
    refined (bisection on sign changes for the one-dimensional slice,
    damped Newton elsewhere), deduplicated by orbit distance after an
    optimal time shift, and sorted by action value.
    """
    n = trunc.n
    basis = integer_kernel_basis(selection.k)
    dim = basis.shape[1]
    if evaluator is None:
        evaluator = RangeEvaluator(selection, form, trunc, B, config=config,
                                   L_max=L_max)

    cache = {}

    def eval_point(s):
        key = tuple(np.round(np.mod(s, 1.0), 12))
        if key not in cache:
            phi0 = slice_point(np.mod(s, 1.0), basis)
            warm = next(iter(cache.values()))[2] if cache else None
            pt = evaluator.point(phi0, warm=warm)
            g = 2 * np.pi * (basis.T @ pt.grad)
            cache[key] = (pt, g, pt.loop_ref)
        return cache[key][:2]

    grid = [np.arange(grid_per_dim) / grid_per_dim for _ in range(dim)]
    mesh = np.stack(np.meshgrid(*grid, indexing="ij"), axis=-1).reshape(-1, dim)
    gvals = []
    for s in mesh:
        _, g = eval_point(s)
        gvals.append(g)
    gvals = np.array(gvals)
    amp = float(np.abs(gvals).max())
    floor = max(newton_tol, 0.0)

    if amp <= floor:
        pts = []
        for j in range(n):
            s = np.zeros(dim)
            s[0] = j / n
            pt, g = eval_point(s)
            pt.cluster = 0
            pt.s_param = s.copy()
            pts.append(pt)
        pts = _dedup(pts, evaluator, trunc, orbit_tol)
        return CriticalSearchResult(pts, True, amp, floor, n)

    roots = []
    if dim == 1:
        g1 = gvals[:, 0]
        for i in range(grid_per_dim):
            a, b = i / grid_per_dim, (i + 1) / grid_per_dim
            ga, gb = g1[i], g1[(i + 1) % grid_per_dim]
            if ga == 0.0:
                roots.append(np.array([a]))
            elif ga * gb < 0:
                roots.append(np.array([_bisect(lambda s: eval_point([s])[1][0],
                                               a, b, ga, gb, newton_tol)]))
    else:
        for s0 in mesh:
            r = _newton(lambda s: eval_point(s)[1], s0, newton_tol)
            if r is not None:
                roots.append(np.mod(r, 1.0))

    pts = []
    for s in roots:
        pt, g = eval_point(s)
        if np.max(np.abs(g)) <= 10 * max(newton_tol, amp * 1e-6):
            pt.s_param = np.mod(np.asarray(s, float), 1.0)
            pts.append(pt)
    pts = _dedup(pts, evaluator, trunc, orbit_tol)
    pts.sort(key=lambda p: p.S_value)
    _assign_clusters(pts, cluster_tol)
    return CriticalSearchResult(pts, False, amp, floor, n)


def _bisect(f, a, b, fa, fb, tol, iters=80):
    for _ in range(iters):
        m = 0.5 * (a + b)
        fm = f(m)
        if abs(fm) <= tol or (b - a) < 1e-14:
            return m
        if fa * fm <= 0:
            b, fb = m, fm
        else:
            a, fa = m, fm
    return 0.5 * (a + b)


def _newton(f, s0, tol, iters=40, fd=1e-6):
    s = np.asarray(s0, float).copy()
    for _ in range(iters):
        g = f(s)
        if np.max(np.abs(g)) <= tol:
            return s
        m = len(s)
        Jac = np.zeros((m, m))
        for i in range(m):
            e = np.zeros(m)
            e[i] = fd
            Jac[:, i] = (f(s + e) - f(s - e)) / (2 * fd)
        try:
            step = np.linalg.solve(Jac, g)
        except np.linalg.LinAlgError:
            return None
        if np.max(np.abs(step)) > 0.5:
            step *= 0.5 / np.max(np.abs(step))
        s = s - step
    return None


# ----------------------------------------------------------------------
# orbit equivalence
# ----------------------------------------------------------------------
def trajectory_samples(point, selection, trunc, N_t=None):
    """Unrescaled phase trajectory (z rows) of a solved critical point."""
    N_t = N_t or default_grid(point.loop_ref.L)
    samples = point.loop_ref.to_samples(N_t)
    vals, _, _ = chart_point_batch(samples, point.phi0, selection, N_t)
    K = trunc.n + trunc.M
    return vals[:K]


def orbit_distance(traj_a, traj_b, weights, refine=True):
    """min over time shifts of the L2-mean weighted distance of trajectories.

    The shift scan uses the FFT cross-correlation over the common sample
    grid, followed by parabolic refinement of the best lag.
    """
    wa = weights[:, None] ** 2
    na = np.sum(np.abs(traj_a) ** 2 * wa) / traj_a.shape[1]
    nb = np.sum(np.abs(traj_b) ** 2 * wa) / traj_b.shape[1]
    fa = np.fft.fft(traj_a, axis=1)
    fb = np.fft.fft(traj_b, axis=1)
    corr = np.fft.ifft(np.sum(np.conj(fa) * fb * weights[:, None] ** 2, axis=0))
    corr = corr.real / traj_a.shape[1]
    d2 = na + nb - 2 * corr
    i = int(np.argmin(d2))
    best = d2[i]
    if refine:
        dm = d2[(i - 1) % len(d2)]
        dp = d2[(i + 1) % len(d2)]
        denom = dm - 2 * best + dp
        if denom > 0:
            off = 0.5 * (dm - dp) / denom
            best = best - 0.125 * (dm - dp) * off
    return float(math.sqrt(max(best, 0.0)))


def _dedup(points, evaluator, trunc, orbit_tol):
    weights = mode_weights(trunc)
    kept = []
    trajs = []
    for p in points:
        t = evaluator.trajectory(p)
        dup = False
        for q in trajs:
            if orbit_distance(t, q, weights) < orbit_tol:
                dup = True
                break
        if not dup:
            kept.append(p)
            trajs.append(t)
    return kept


def _assign_clusters(points, cluster_tol):
    cid = -1
    last = None
    for p in points:
        if last is None or abs(p.S_value - last) > cluster_tol * max(1.0, abs(last)):
            cid += 1
        p.cluster = cid
        last = p.S_value
