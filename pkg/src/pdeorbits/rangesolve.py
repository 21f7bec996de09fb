"""Range equation: diagonal Fourier inversion of L and the contraction L o N.

The linear operator of the rescaled system,

    L (psi, J, z, zbar) = (J', psi' - eta^2 A J, z' - i W~ z, zbar' + i W~ zbar),

is inverted per harmonic in the eigenbasis of A.  Right-hand-side
containers reuse the Loop layout with the paper's slot naming: the .psi
block holds the rhs of the J' equation, the .J block the rhs of the
psi' equation, and the tail blocks their own equations.

eval_N assembles the nonlinear right-hand side from the seminormal form:
the eta^2 B^T Z and eta^2 (B J)_j z_j couplings plus the gradients of
Ghat + K evaluated along the loop in the action-angle chart, with the
time mean of the J'-slot projected out.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .loops import Loop, coeff_to_samples, samples_to_coeff
from .model import mode_weights


class H2Violation(RuntimeError):
    def __init__(self, j, l, value):
        self.j, self.l, self.value = j, l, value
        super().__init__(f"(H2) violated in inversion: |2 pi l - W~_j T| = "
                         f"{value:.3e} at (j={j}, l={l})")


class SingularA(RuntimeError):
    pass


class ChartError(RuntimeError):
    """An action left the positive cone during evaluation."""


@dataclass
class LinearSolveData:
    """Spectral data of A plus the shifted tail frequencies and guards."""
    lam: np.ndarray               # eigenvalues of A
    E: np.ndarray                 # orthonormal eigenvectors (columns)
    Omega_tilde: np.ndarray
    T: float
    eta: float
    guard: float

    @classmethod
    def from_selection(cls, A, selection, guard=None):
        lam, E = np.linalg.eigh(A)
        if np.min(np.abs(lam)) < 1e-12:
            raise SingularA("eigenvalue of A below tolerance")
        if guard is None:
            nM = len(selection.omega_tilde) + len(selection.Omega_tilde)
            guard = selection.delta / nM ** selection.tau
        return cls(lam=lam, E=E, Omega_tilde=np.asarray(selection.Omega_tilde),
                   T=selection.T, eta=selection.eta, guard=guard)


def invert_L(rhs, data):
    """Unique solution of L zeta = rhs in the range space (psi mean-free).

    rhs is a Loop-layout container; its .psi block (the J' slot) must be
    mean-free.  Denominators 2 pi l -+ W~_j T below the guard raise
    H2Violation with the offending (j, l).
    """
    n, M, L, T = rhs.n, rhs.M, rhs.L, rhs.T
    eta2 = data.eta ** 2
    l = np.arange(-L, L + 1).astype(float)
    r1 = data.E.T @ rhs.psi        # J' equation rhs, eigenbasis
    r2 = data.E.T @ rhs.J          # psi' equation rhs
    scale = max(np.abs(r1).max(initial=0.0), np.abs(r2).max(initial=0.0), 1e-300)
    if np.abs(r1[:, L]).max(initial=0.0) > 1e-9 * max(scale, 1.0):
        raise ValueError("rhs of the J' slot must be mean-free")

    il = 1j * 2 * np.pi * l
    J = np.zeros_like(r1)
    psi = np.zeros_like(r2)
    nz = l != 0
    J[:, nz] = T * r1[:, nz] / il[nz]
    J[:, L] = -r2[:, L] / (eta2 * data.lam)
    psi[:, nz] = T * (r2[:, nz] + eta2 * data.lam[:, None] * J[:, nz]) / il[nz]

    dz = 1j * (2 * np.pi * l[None, :] - data.Omega_tilde[:, None] * T)
    dzb = 1j * (2 * np.pi * l[None, :] + data.Omega_tilde[:, None] * T)
    for name, d in (("z", dz), ("zbar", dzb)):
        small = np.abs(d) < data.guard
        if small.any():
            j_, l_ = np.argwhere(small)[0]
            raise H2Violation(n + 1 + int(j_), int(l_) - L,
                              float(np.abs(d[j_, l_])))
    z = T * rhs.z / dz
    zbar = T * rhs.zbar / dzb
    return Loop(T, n, M, L, data.E @ psi, data.E @ J, z, zbar)


def apply_L(loop, data):
    """Forward operator; exact inverse check of invert_L."""
    n, M, L, T = loop.n, loop.M, loop.L, loop.T
    d = loop.derivative()
    A = data.E @ np.diag(data.lam) @ data.E.T
    r1 = d.J
    r2 = d.psi - data.eta ** 2 * (A @ loop.J)
    r3 = d.z - 1j * data.Omega_tilde[:, None] * loop.z
    r4 = d.zbar + 1j * data.Omega_tilde[:, None] * loop.zbar
    return Loop(T, n, M, L, r1, r2, r3, r4)


def operator_norm_probe(data, n, M, L, trunc, samples, rng, tau=None):
    """Empirical sup of ||invert_L(r)||_{T,a,s} / ||r||_{T,a,s+tau}."""
    tau = trunc.s + (tau if tau is not None else 1.5)
    w_s = mode_weights(trunc)[n:]
    w_st = mode_weights(trunc, s=tau)[n:]
    best = 0.0
    for _ in range(samples):
        rhs = Loop(data.T, n, M, L)
        rhs.psi = rng.normal(size=rhs.psi.shape) + 1j * rng.normal(size=rhs.psi.shape)
        rhs.J = rng.normal(size=rhs.J.shape) + 1j * rng.normal(size=rhs.J.shape)
        rhs.z = rng.normal(size=rhs.z.shape) + 1j * rng.normal(size=rhs.z.shape)
        rhs.zbar = np.conj(rhs.z[:, ::-1])
        rhs.psi[:, L] = 0.0
        sol = invert_L(rhs, data)
        num = sol.norm_Tas(w_s)
        den = rhs.norm_Tas(w_st)
        if den > 0:
            best = max(best, num / den)
    return float(best)


# ----------------------------------------------------------------------
# the nonlinear right-hand side from the seminormal form
# ----------------------------------------------------------------------
def default_grid(L, degree=6):
    """Alias-free sample count for polynomial evaluations of the gradient."""
    need = degree * L + 8
    N_t = 1
    while N_t < need:
        N_t *= 2
    return N_t


def chart_point_batch(loop_samples, phi0, selection, N_t):
    """Unrescaled phase points along the loop in the action-angle chart.

    Returns vals (2(n+M), N_t) with z rows first, plus the rescaled
    actions I(t) = I0 + J(t) and angles theta(t).
    """
    psi_s, J_s, z_s, zbar_s = loop_samples
    eta = selection.eta
    phi0 = np.asarray(phi0, float)
    n = len(selection.I0)
    t_frac = np.arange(N_t) / N_t        # t / T
    I = selection.I0[:, None] + J_s.real
    if I.min() <= 0.0:
        raise ChartError("action I0 + J left the positive cone at a sample")
    theta = (phi0[:, None] + 2 * np.pi * selection.k[:, None] * t_frac[None, :]
             + psi_s.real)
    x = eta * np.sqrt(I) * np.exp(1j * theta)
    M = z_s.shape[0]
    K = n + M
    out = np.empty((2 * K, N_t), complex)
    out[:n] = x
    out[n:K] = eta * z_s
    out[K:K + n] = np.conj(x)
    out[K + n:] = eta * zbar_s
    return out, I, theta


def eval_N(loop, phi0, selection, form, trunc, B, N_t=None):
    """Nonlinear rhs of the range system at the loop, as harmonic tables.

    Assembles, on an oversampled grid, the eta^2 B^T Z and eta^2 (B J) z
    couplings and the chain-rule gradients of Ghat + K in the chart
    (angles phi0 + omega~ t + psi, actions I0 + J, tail eta z), subtracts
    the time mean of the J'-slot, and projects back to harmonics.

    Returns (rhs Loop-container, mean_Rphi) with mean_Rphi the
    pre-projection time average of the J'-slot (the kernel gradient).
    """
    n, M, L = loop.n, loop.M, loop.L
    eta = selection.eta
    N_t = N_t or default_grid(L)
    samples = loop.to_samples(N_t)
    psi_s, J_s, z_s, zbar_s = samples
    vals, I, _ = chart_point_batch(samples, phi0, selection, N_t)
    K = n + M
    W = form.nonlinear_part()
    if W.nterms:
        _, grad = W.value_and_gradient_batch(vals)
        gz, gzb = grad[:K], grad[K:]
    else:
        gz = np.zeros((K, N_t), complex)
        gzb = np.zeros((K, N_t), complex)
    x = vals[:n]
    xb = vals[K:K + n]
    Z = (z_s * zbar_s)
    BJ = B @ J_s.real
    BtZ = B.T @ Z

    A_tan = x * gz[:n]
    r1 = (-1j * (A_tan - xb * gzb[:n]) / eta ** 2)
    r2 = eta ** 2 * BtZ + (A_tan + xb * gzb[:n]) / (2 * I * eta ** 2)
    r3 = 1j * eta ** 2 * BJ * z_s + 1j * gzb[n:] / eta
    r4 = -1j * eta ** 2 * BJ * zbar_s - 1j * gz[n:] / eta

    mean_Rphi = r1.mean(axis=1).real.copy()
    r1 = r1 - r1.mean(axis=1, keepdims=True)
    rhs = Loop(loop.T, n, M, L,
               samples_to_coeff(r1, L), samples_to_coeff(r2, L),
               samples_to_coeff(r3, L), samples_to_coeff(r4, L))
    return rhs, mean_Rphi


@dataclass
class ContractionConfig:
    tol: float = 1e-12
    max_iters: int = 60
    ball_factor: float = 10.0     # ball radius = factor * first-iterate norm
    ball_radius: float = 0.0      # explicit override when > 0
    N_t: int = 0                  # explicit sample grid when > 0


@dataclass
class RangeResult:
    loop: Loop
    iterations: int
    residuals: list
    factors: list
    mean_Rphi: np.ndarray
    converged: bool

    @property
    def contraction_factor(self):
        good = [f for f in self.factors[1:] if np.isfinite(f)]
        return float(np.median(good)) if good else float("nan")


class ContractionDiverged(RuntimeError):
    def __init__(self, msg, lipschitz=None):
        super().__init__(msg)
        self.lipschitz = lipschitz


def solve_range(phi0, selection, form, trunc, B, config=None, initial=None,
                L_max=None):
    """Fixed point of Phi = L o N by direct iteration.

    Returns the solved loop with the iteration history (residuals and
    stepwise contraction factors).  Raises ContractionDiverged when the
    iterate leaves the trust ball or the budget is exhausted, reporting
    the measured Lipschitz estimate.
    """
    config = config or ContractionConfig()
    phi0 = np.asarray(phi0, float)
    n, M = trunc.n, trunc.M
    L = L_max if L_max is not None else trunc.L_max
    data = LinearSolveData.from_selection(_A_from_form(form), selection)
    w = mode_weights(trunc)[n:]
    zeta = initial.copy() if initial is not None else Loop(selection.T, n, M, L)
    N_t = config.N_t or default_grid(L)
    residuals, factors = [], []
    prev = None
    ball = config.ball_radius
    mean_Rphi = np.zeros(n)
    for it in range(config.max_iters):
        rhs, mean_Rphi = eval_N(zeta, phi0, selection, form, trunc, B, N_t=N_t)
        new = invert_L(rhs, data)
        diff = (new - zeta).norm_Tas(w)
        residuals.append(diff)
        if prev is not None and prev > 0:
            factors.append(diff / prev)
        prev = diff
        zeta = new
        norm = zeta.norm_Tas(w)
        if ball == 0.0:
            ball = config.ball_factor * max(norm, 1e-300)
        if norm > ball:
            raise ContractionDiverged(
                f"iterate left the ball (|zeta| = {norm:.3e} > {ball:.3e})",
                lipschitz=factors[-1] if factors else None)
        if diff <= config.tol * max(1.0, norm):
            return RangeResult(zeta, it + 1, residuals, factors, mean_Rphi, True)
    raise ContractionDiverged(
        f"no convergence in {config.max_iters} iterations "
        f"(last residual {residuals[-1]:.3e})",
        lipschitz=factors[-1] if factors else None)


def _A_from_form(form):
    return form.A


def range_residual(loop, phi0, selection, form, trunc, B, N_t=None):
    """||L zeta - N(zeta)|| in the loop norm (projected system)."""
    data = LinearSolveData.from_selection(form.A, selection)
    rhs, mean_Rphi = eval_N(loop, phi0, selection, form, trunc, B, N_t=N_t)
    lhs = apply_L(loop, data)
    w = mode_weights(trunc)[trunc.n:]
    return (lhs - rhs).norm_Tas(w), mean_Rphi
