"""Production orbit solver: the range system in original coordinates.

At production truncations the degree-six polynomial remainder K carries
hundreds of thousands of terms, while the original vector field costs a
sine transform.  This engine therefore iterates the same Lyapunov-Schmidt
range system with the original field evaluated pseudo-spectrally: the
unknown loop lives in the action-angle chart around the selected torus,
residuals of the equations of motion are mapped into the (J', psi', tail)
slots, and the seminormal-form operator L serves as the preconditioner.
The fixed point is a genuine periodic trajectory of the truncated model,
so no transformation is applied afterwards.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .loops import Loop, samples_to_coeff
from .model import mode_weights, grid_model
from .rangesolve import LinearSolveData, invert_L, ChartError
from ._fastmath import poly_value_and_grad


class OrbitSolveDiverged(RuntimeError):
    pass


def field_samples(gm, Y):
    """X_H at a (K, N_t) batch of z-points, pseudo-spectrally."""
    if gm.kind == 0:
        q = math.sqrt(2.0) * Y.real
        u = (q / gm.weights[:, None]).T @ gm.sinmat          # (N_t, NX)
        fu = np.zeros_like(u)
        for c, p in zip(gm.coefs, gm.powers):
            fu += c * u ** p
        F = (gm.sinmat @ fu.T) * gm.wquad / (gm.weights[:, None] * math.sqrt(2.0))
        return 1j * gm.omega[:, None] * Y + 1j * F
    w = (gm.weights[:, None] * Y).T @ gm.sinmat              # (N_t, NX) complex
    y = (w * np.conj(w)).real
    dP = np.zeros_like(y)
    for c, p in zip(gm.coefs, gm.powers):
        dP += c * p * y ** (p - 1)
    G = (gm.sinmat @ (dP * w).T) * gm.wquad * gm.weights[:, None]
    return 1j * gm.omega[:, None] * Y + 1j * G


def energy_samples(gm, Y):
    """H at a (K, N_t) batch of z-points."""
    h = gm.omega @ (np.abs(Y) ** 2)
    if gm.kind == 0:
        q = math.sqrt(2.0) * Y.real
        u = (q / gm.weights[:, None]).T @ gm.sinmat
        gu = np.zeros_like(u)
        for c, p in zip(gm.energy_coefs, gm.energy_powers):
            gu += c * u ** p
        return h + gm.wquad * gu.sum(axis=1)
    w = (gm.weights[:, None] * Y).T @ gm.sinmat
    y = (w * np.conj(w)).real
    pv = np.zeros_like(y)
    for c, p in zip(gm.energy_coefs, gm.energy_powers):
        pv += c * y ** p
    return h + gm.wquad * pv.sum(axis=1)


def chart_trajectory(loop, phi0, selection, N_t):
    """Original-coordinate trajectory and its exact time derivative.

    Y_k = eta sqrt(I0 + J) e^{i theta} for the tangential block and
    Y_j = eta z_j for the tail; the derivative uses the chart identities
    so no extra spectral differentiation of Y is needed.
    """
    n = loop.n
    psi_s, J_s, z_s, zbar_s = loop.to_samples(N_t)
    d = loop.derivative()
    dpsi, dJ, dz, _ = d.to_samples(N_t)
    eta = selection.eta
    t_frac = np.arange(N_t) / N_t
    I = selection.I0[:, None] + J_s.real
    if I.min() <= 0.0:
        raise ChartError("action I0 + J left the positive cone at a sample")
    theta = (np.asarray(phi0, float)[:, None]
             + 2 * np.pi * selection.k[:, None] * t_frac[None, :] + psi_s.real)
    x = eta * np.sqrt(I) * np.exp(1j * theta)
    thetadot = selection.omega_tilde[:, None] + dpsi.real
    xdot = (dJ.real / (2 * I) + 1j * thetadot) * x
    Y = np.vstack([x, eta * z_s])
    Ydot = np.vstack([xdot, eta * dz])
    return Y, Ydot, I


def residual_slots(loop, phi0, selection, gm, N_t):
    """Defects of the equations of motion in the range-system slots.

    Returns (rhs container for invert_L, kernel gradient <R_phi>, defect
    norm data).  The J'-slot mean is the unprojected kernel gradient with
    sign reversed; it is removed before inversion.
    """
    n, M, L, T = loop.n, loop.M, loop.L, loop.T
    eta = selection.eta
    Y, Ydot, I = chart_trajectory(loop, phi0, selection, N_t)
    r = Ydot - field_samples(gm, Y)
    x = Y[:n]
    s1 = 2.0 * (np.conj(x) * r[:n]).real / eta ** 2
    s2 = (r[:n] / x).imag
    s3 = r[n:] / eta
    s4 = np.conj(s3)
    mean_Rphi = -s1.mean(axis=1)
    s1 = s1 - s1.mean(axis=1, keepdims=True)
    rhs = Loop(T, n, M, L, samples_to_coeff(s1, L), samples_to_coeff(s2, L),
               samples_to_coeff(s3, L), samples_to_coeff(s4, L))
    return rhs, mean_Rphi


@dataclass
class OrbitResult:
    loop: Loop
    phi0: np.ndarray
    iterations: int
    residuals: list
    factors: list
    mean_Rphi: np.ndarray
    converged: bool

    @property
    def contraction_factor(self):
        good = [f for f in self.factors[1:] if np.isfinite(f)]
        return float(np.median(good)) if good else float("nan")


def default_orbit_grid(L, k_max, degree=3):
    """Alias-free grid: kept harmonics |l| <= L with field degree `degree`."""
    need = (degree + 1) * L + (degree + 1) * k_max + 8
    N_t = 1
    while N_t < need:
        N_t *= 2
    return N_t


def solve_orbit(phi0, selection, form, trunc, spec, tol=1e-11, max_iters=80,
                L_max=None, initial=None, N_t=None, ball_factor=50.0):
    """Solve the projected range system in original coordinates.

    Preconditioned defect iteration: the loop defect is mapped into the
    slots of the linear operator L of the seminormal form and removed by
    its diagonal inverse.  Converges to a trajectory of the truncated
    model that is T-periodic up to the (projected-out) kernel gradient.
    """
    phi0 = np.asarray(phi0, float)
    n, M = trunc.n, trunc.M
    L = L_max if L_max is not None else trunc.L_max
    gm = grid_model(spec, trunc)
    data = LinearSolveData.from_selection(form.A, selection)
    w = mode_weights(trunc)[n:]
    N_t = N_t or default_orbit_grid(L, int(np.max(np.abs(selection.k))),
                                    degree=int(gm.powers.max()) if gm.kind == 0
                                    else 2 * int(gm.powers.max()) - 1)
    zeta = initial.copy() if initial is not None else Loop(selection.T, n, M, L)
    residuals, factors = [], []
    ball = 0.0
    mean_Rphi = np.zeros(n)
    best = None
    for it in range(max_iters):
        rhs, mean_Rphi = residual_slots(zeta, phi0, selection, gm, N_t)
        delta = invert_L(rhs, data)
        step = delta.norm_Tas(w)
        residuals.append(step)
        if len(residuals) > 1 and residuals[-2] > 0:
            factors.append(step / residuals[-2])
        if best is None or step < best[0]:
            best = (step, zeta, mean_Rphi)
        if step <= tol:
            return OrbitResult(zeta, phi0, it + 1, residuals, factors,
                               mean_Rphi, True)
        # measurement floor: steps stop shrinking while tiny
        if (len(factors) >= 3 and all(f > 0.9 for f in factors[-3:])
                and step <= 1e4 * tol):
            s, z, m = best
            return OrbitResult(z, phi0, it + 1, residuals, factors, m, True)
        zeta = zeta - delta
        nz = zeta.norm_Tas(w)
        if ball == 0.0:
            ball = ball_factor * max(nz, 1e-300)
        if nz > ball or not np.isfinite(nz):
            raise OrbitSolveDiverged(
                f"defect iteration left the trust ball (|zeta| = {nz:.3e})")
    raise OrbitSolveDiverged(
        f"no convergence in {max_iters} iterations "
        f"(step {residuals[-1]:.3e}, factor {factors[-1] if factors else float('nan'):.3f})")


def orbit_initial_point(result, selection, N_t=None):
    """Original-coordinate initial point Y(0) of a solved orbit."""
    N_t = N_t or max(4 * result.loop.L + 4, 64)
    Y, _, _ = chart_trajectory(result.loop, result.phi0, selection, N_t)
    return Y[:, 0].copy()


def orbit_trajectory(result, selection, N_t):
    Y, _, _ = chart_trajectory(result.loop, result.phi0, selection, N_t)
    return Y


def orbit_action(result, selection, gm, N_t=None):
    """Action int (i sum_j z_j zbar_j' - H) dt of the original trajectory."""
    loop = result.loop
    N_t = N_t or max(4 * loop.L + 4, 64)
    Y, Ydot, _ = chart_trajectory(loop, result.phi0, selection, N_t)
    sympl = np.sum((1j * Y * np.conj(Ydot)), axis=0).real
    ham = energy_samples(gm, Y)
    return selection.T * math.fsum(sympl - ham) / N_t
