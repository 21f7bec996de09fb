"""Compiled kernels: batched polynomial gradients, generator flows, integrators.

Everything here is numerics plumbing shared by the solver and verification
paths.  The packed term layout is

    nact  (T,)     number of active variables of the term
    idx   (T, A)   variable column of each active slot
    expo  (T, A)   exponent of each active slot (1..max_degree)
    coef  (T,)     complex coefficient

with A the widest active count in the polynomial.
"""

from __future__ import annotations

import numpy as np
from numba import njit, prange

_NJIT = dict(cache=True, fastmath=False)


def pack_poly(poly):
    T = poly.nterms
    if T == 0:
        return (np.zeros(0, np.int64), np.zeros((0, 1), np.int64),
                np.zeros((0, 1), np.int64), np.zeros(0, np.complex128))
    active = [np.flatnonzero(e) for e in poly.exps]
    A = max(1, max(len(a) for a in active))
    nact = np.zeros(T, np.int64)
    idx = np.zeros((T, A), np.int64)
    expo = np.zeros((T, A), np.int64)
    for t, a in enumerate(active):
        nact[t] = len(a)
        idx[t, :len(a)] = a
        expo[t, :len(a)] = poly.exps[t, a]
    return nact, idx, expo, poly.coeffs.astype(np.complex128)


@njit(parallel=True, **_NJIT)
def _value_and_grad_kernel(nact, idx, expo, coef, vals, value, grad):
    T = nact.shape[0]
    P = vals.shape[1]
    A = idx.shape[1]
    for p in prange(P):
        pw = np.empty(A, np.complex128)       # v^e per active slot
        pwm = np.empty(A, np.complex128)      # v^(e-1)
        pre = np.empty(A + 1, np.complex128)
        suf = np.empty(A + 1, np.complex128)
        acc = 0.0 + 0.0j
        for t in range(T):
            a = nact[t]
            c = coef[t]
            for i in range(a):
                v = vals[idx[t, i], p]
                e = expo[t, i]
                q = 1.0 + 0.0j
                for _ in range(e - 1):
                    q *= v
                pwm[i] = q
                pw[i] = q * v
            pre[0] = 1.0 + 0.0j
            for i in range(a):
                pre[i + 1] = pre[i] * pw[i]
            suf[a] = 1.0 + 0.0j
            for i in range(a - 1, -1, -1):
                suf[i] = pw[i] * suf[i + 1]
            acc += c * pre[a]
            for i in range(a):
                grad[idx[t, i], p] += c * expo[t, i] * pre[i] * pwm[i] * suf[i + 1]
        value[p] = acc


def poly_value_and_grad(packed, vals):
    """Value and full gradient of a packed polynomial at P points.

    vals : (2K, P) complex; returns (value (P,), grad (2K, P)).
    """
    nact, idx, expo, coef = packed
    P = vals.shape[1]
    value = np.zeros(P, np.complex128)
    grad = np.zeros((vals.shape[0], P), np.complex128)
    if nact.shape[0]:
        _value_and_grad_kernel(nact, idx, expo, coef, vals, value, grad)
    return value, grad


@njit(parallel=True, **_NJIT)
def _value_kernel(nact, idx, expo, coef, vals, value):
    T = nact.shape[0]
    P = vals.shape[1]
    for p in prange(P):
        acc = 0.0 + 0.0j
        for t in range(T):
            v = coef[t]
            for i in range(nact[t]):
                x = vals[idx[t, i], p]
                for _ in range(expo[t, i]):
                    v *= x
            acc += v
        value[p] = acc


def poly_value(packed, vals):
    nact, idx, expo, coef = packed
    value = np.zeros(vals.shape[1], np.complex128)
    if nact.shape[0]:
        _value_kernel(nact, idx, expo, coef, vals, value)
    return value


# ----------------------------------------------------------------------
# generator flows: z' = sign * i dchi/dzbar on the reality slice
# ----------------------------------------------------------------------
@njit(parallel=True, **_NJIT)
def _chi_flow_kernel(nact, idx, expo, coef, pts, sign, nsteps, out):
    """RK4 time-1 flow of sign * X_chi for a batch of points.

    pts : (K, P) complex, z-components only; zbar = conj(z) is maintained.
    The stage derivative is dz_k = sign * i * dchi/dzbar_k evaluated at
    (z, conj z).
    """
    K, P = pts.shape
    T = nact.shape[0]
    A = idx.shape[1]
    h = 1.0 / nsteps
    for p in prange(P):
        z = np.empty(K, np.complex128)
        for k in range(K):
            z[k] = pts[k, p]
        vals = np.empty(2 * K, np.complex128)
        gzb = np.empty(K, np.complex128)
        k1 = np.empty(K, np.complex128)
        k2 = np.empty(K, np.complex128)
        k3 = np.empty(K, np.complex128)
        k4 = np.empty(K, np.complex128)
        zs = np.empty(K, np.complex128)
        pw = np.empty(A, np.complex128)
        pwm = np.empty(A, np.complex128)
        pre = np.empty(A + 1, np.complex128)
        suf = np.empty(A + 1, np.complex128)
        for _ in range(nsteps):
            for stage in range(4):
                if stage == 0:
                    for k in range(K):
                        zs[k] = z[k]
                elif stage == 1:
                    for k in range(K):
                        zs[k] = z[k] + 0.5 * h * k1[k]
                elif stage == 2:
                    for k in range(K):
                        zs[k] = z[k] + 0.5 * h * k2[k]
                else:
                    for k in range(K):
                        zs[k] = z[k] + h * k3[k]
                for k in range(K):
                    vals[k] = zs[k]
                    vals[K + k] = np.conj(zs[k])
                for k in range(K):
                    gzb[k] = 0.0 + 0.0j
                for t in range(T):
                    a = nact[t]
                    c = coef[t]
                    for i in range(a):
                        v = vals[idx[t, i]]
                        e = expo[t, i]
                        q = 1.0 + 0.0j
                        for _ in range(e - 1):
                            q *= v
                        pwm[i] = q
                        pw[i] = q * v
                    pre[0] = 1.0 + 0.0j
                    for i in range(a):
                        pre[i + 1] = pre[i] * pw[i]
                    suf[a] = 1.0 + 0.0j
                    for i in range(a - 1, -1, -1):
                        suf[i] = pw[i] * suf[i + 1]
                    for i in range(a):
                        col = idx[t, i]
                        if col >= K:
                            gzb[col - K] += (c * expo[t, i] * pre[i] * pwm[i]
                                             * suf[i + 1])
                dst = k1 if stage == 0 else (k2 if stage == 1
                                             else (k3 if stage == 2 else k4))
                for k in range(K):
                    dst[k] = sign * 1j * gzb[k]
            for k in range(K):
                z[k] += (h / 6.0) * (k1[k] + 2.0 * k2[k] + 2.0 * k3[k] + k4[k])
        for k in range(K):
            out[k, p] = z[k]


def chi_flow(packed, pts, sign=1.0, nsteps=12):
    """Time-1 flow of sign*X_chi applied to a batch of z-points (K, P)."""
    nact, idx, expo, coef = packed
    pts = np.ascontiguousarray(pts, np.complex128)
    out = np.empty_like(pts)
    if nact.shape[0] == 0:
        out[:] = pts
        return out
    _chi_flow_kernel(nact, idx, expo, coef, pts, float(sign), int(nsteps), out)
    return out


# ----------------------------------------------------------------------
# pseudo-spectral beam / NLS right-hand sides and a fixed-step RK4 orbit
# integrator in the rotating frame (exact linear part).
# ----------------------------------------------------------------------
@njit(**_NJIT)
def _beam_nonlin(z, sqw, fcoef, fpow, sinmat, wquad, F):
    """F_j = (1/sqrt(2)) * int f(u) phi_j / sqrt(w_j), pseudo-spectrally."""
    K, NX = sinmat.shape
    u = np.zeros(NX, np.float64)
    for k in range(K):
        qk = np.sqrt(2.0) * z[k].real / sqw[k]
        for i in range(NX):
            u[i] += qk * sinmat[k, i]
    fu = np.zeros(NX, np.float64)
    for c in range(fcoef.shape[0]):
        a = fcoef[c]
        pw = fpow[c]
        for i in range(NX):
            v = u[i]
            q = a
            for _ in range(pw):
                q *= v
            fu[i] += q
    for k in range(K):
        s = 0.0
        for i in range(NX):
            s += sinmat[k, i] * fu[i]
        F[k] = s * wquad / (sqw[k] * np.sqrt(2.0))


@njit(**_NJIT)
def _beam_energy(z, omega, sqw, gcoef, gpow, sinmat, wquad):
    K, NX = sinmat.shape
    h = 0.0
    for k in range(K):
        h += omega[k] * (z[k].real ** 2 + z[k].imag ** 2)
    u = np.zeros(NX, np.float64)
    for k in range(K):
        qk = np.sqrt(2.0) * z[k].real / sqw[k]
        for i in range(NX):
            u[i] += qk * sinmat[k, i]
    for i in range(NX):
        gu = 0.0
        v = u[i]
        for c in range(gcoef.shape[0]):
            q = gcoef[c]
            for _ in range(gpow[c]):
                q *= v
            gu += q
        h += wquad * gu
    return h


@njit(**_NJIT)
def _nls_nonlin(z, rho, pcoef, ppow, sinmat, wquad, F):
    """F_j = rho_j * int P'(|w|^2) w phi_j, with w_j = rho_j z_j."""
    K, NX = sinmat.shape
    w = np.zeros(NX, np.complex128)
    for k in range(K):
        ck = rho[k] * z[k]
        for i in range(NX):
            w[i] += ck * sinmat[k, i]
    pw_ = np.zeros(NX, np.complex128)
    for i in range(NX):
        y = (w[i] * np.conj(w[i])).real
        dp = 0.0
        for c in range(pcoef.shape[0]):
            q = pcoef[c] * ppow[c]
            for _ in range(ppow[c] - 1):
                q *= y
            dp += q
        pw_[i] = dp * w[i]
    for k in range(K):
        s = 0.0 + 0.0j
        for i in range(NX):
            s += sinmat[k, i] * pw_[i]
        F[k] = rho[k] * s * wquad


@njit(**_NJIT)
def _nls_energy(z, omega, rho, pcoef, ppow, sinmat, wquad):
    K, NX = sinmat.shape
    h = 0.0
    for k in range(K):
        h += omega[k] * (z[k].real ** 2 + z[k].imag ** 2)
    w = np.zeros(NX, np.complex128)
    for k in range(K):
        ck = rho[k] * z[k]
        for i in range(NX):
            w[i] += ck * sinmat[k, i]
    for i in range(NX):
        y = (w[i] * np.conj(w[i])).real
        pv = 0.0
        for c in range(pcoef.shape[0]):
            q = pcoef[c]
            for _ in range(ppow[c]):
                q *= y
            pv += q
        h += wquad * pv
    return h


@njit(**_NJIT)
def _integrate_rotating(kind, z0, omega, sqw_or_rho, c1, p1, ce, pe, sinmat,
                        wquad, t_end, nsteps, snap_times, energy_every):
    """Fixed-step RK4 on the envelope xi = exp(-i w t) z (linear part exact).

    Returns (endpoint, snapshots, energy extrema).  Nonlinear stage
    evaluations rotate back to physical coordinates, so the scheme
    integrates the original truncated Hamiltonian field.
    """
    K = z0.shape[0]
    dt = t_end / nsteps
    xi = z0.copy()
    ph_half = np.empty(K, np.complex128)
    ph_full = np.empty(K, np.complex128)
    for k in range(K):
        ph_half[k] = np.exp(1j * omega[k] * 0.5 * dt)
        ph_full[k] = ph_half[k] * ph_half[k]
    F = np.empty(K, np.complex128)
    zt = np.empty(K, np.complex128)
    k1 = np.empty(K, np.complex128)
    k2 = np.empty(K, np.complex128)
    k3 = np.empty(K, np.complex128)
    k4 = np.empty(K, np.complex128)
    nsnap = snap_times.shape[0]
    snaps = np.zeros((nsnap, K), np.complex128)
    isnap = 0
    if kind == 0:
        e0 = _beam_energy(z0, omega, sqw_or_rho, ce, pe, sinmat, wquad)
    else:
        e0 = _nls_energy(z0, omega, sqw_or_rho, ce, pe, sinmat, wquad)
    emin = e0
    emax = e0
    t = 0.0
    for step in range(nsteps):
        # stage derivatives for the envelope: xi' = e^{-iwt} F(e^{iwt} xi)
        for stage in range(4):
            if stage == 0:
                tau = 0.0
            elif stage == 3:
                tau = dt
            else:
                tau = 0.5 * dt
            for k in range(K):
                rot = np.exp(1j * omega[k] * (t + tau))
                if stage == 0:
                    zt[k] = rot * xi[k]
                elif stage == 1:
                    zt[k] = rot * (xi[k] + 0.5 * dt * k1[k])
                elif stage == 2:
                    zt[k] = rot * (xi[k] + 0.5 * dt * k2[k])
                else:
                    zt[k] = rot * (xi[k] + dt * k3[k])
            if kind == 0:
                _beam_nonlin(zt, sqw_or_rho, c1, p1, sinmat, wquad, F)
            else:
                _nls_nonlin(zt, sqw_or_rho, c1, p1, sinmat, wquad, F)
            for k in range(K):
                rot = np.exp(-1j * omega[k] * (t + tau))
                d = rot * (1j * F[k])
                if stage == 0:
                    k1[k] = d
                elif stage == 1:
                    k2[k] = d
                elif stage == 2:
                    k3[k] = d
                else:
                    k4[k] = d
        for k in range(K):
            xi[k] += (dt / 6.0) * (k1[k] + 2.0 * k2[k] + 2.0 * k3[k] + k4[k])
        t = (step + 1) * dt
        while isnap < nsnap and snap_times[isnap] <= t + 1e-12:
            # snapshot by linear interpolation of the envelope over the step
            frac = (snap_times[isnap] - (t - dt)) / dt
            for k in range(K):
                xi_s = xi[k] * frac + (xi[k] - (dt / 6.0) * (k1[k] + 2 * k2[k]
                        + 2 * k3[k] + k4[k])) * (1.0 - frac)
                snaps[isnap, k] = np.exp(1j * omega[k] * snap_times[isnap]) * xi_s
            isnap += 1
        if energy_every > 0 and (step + 1) % energy_every == 0:
            for k in range(K):
                zt[k] = np.exp(1j * omega[k] * t) * xi[k]
            if kind == 0:
                e = _beam_energy(zt, omega, sqw_or_rho, ce, pe, sinmat, wquad)
            else:
                e = _nls_energy(zt, omega, sqw_or_rho, ce, pe, sinmat, wquad)
            if e < emin:
                emin = e
            if e > emax:
                emax = e
    for k in range(K):
        zt[k] = np.exp(1j * omega[k] * t_end) * xi[k]
    return zt, snaps, e0, emin, emax


def integrate_rotating(kind, z0, omega, weights, coefs, powers, sinmat, wquad,
                       t_end, nsteps, snap_times=None, energy_every=64,
                       energy_coefs=None, energy_powers=None):
    if snap_times is None:
        snap_times = np.zeros(0, np.float64)
    if energy_coefs is None:
        energy_coefs, energy_powers = coefs, powers
    return _integrate_rotating(
        int(kind), np.ascontiguousarray(z0, np.complex128),
        np.ascontiguousarray(omega, np.float64),
        np.ascontiguousarray(weights, np.float64),
        np.ascontiguousarray(coefs, np.float64),
        np.ascontiguousarray(powers, np.int64),
        np.ascontiguousarray(energy_coefs, np.float64),
        np.ascontiguousarray(energy_powers, np.int64),
        np.ascontiguousarray(sinmat, np.float64), float(wquad),
        float(t_end), int(nsteps),
        np.ascontiguousarray(snap_times, np.float64), int(energy_every))
