"""T-periodic trajectories as time-Fourier data.

A Loop holds the components zeta_R = (psi, J, zhat) of a T-periodic
trajectory, each as a table of harmonics c_l, l = -L..L, with

    f(t) = sum_l c_l exp(2 pi i l t / T).

The conjugate tail block is stored explicitly: the zbar equation is
generated from the Hamiltonian, never assumed, and conjugacy
zbar_h[j, l] = conj(z_h[j, -l]) is a checkable invariant rather than a
built-in constraint.  psi is mean-free (the range space).
"""

from __future__ import annotations

import json

import numpy as np


class UndersampledError(ValueError):
    pass


class Loop:
    """Harmonic tables for (psi, J, zhat, zhatbar) plus the period."""

    __slots__ = ("T", "n", "M", "L", "psi", "J", "z", "zbar")

    def __init__(self, T, n, M, L, psi=None, J=None, z=None, zbar=None):
        self.T = float(T)
        self.n, self.M, self.L = int(n), int(M), int(L)
        w = 2 * self.L + 1
        self.psi = np.zeros((n, w), complex) if psi is None else np.asarray(psi, complex)
        self.J = np.zeros((n, w), complex) if J is None else np.asarray(J, complex)
        self.z = np.zeros((M, w), complex) if z is None else np.asarray(z, complex)
        self.zbar = np.zeros((M, w), complex) if zbar is None else np.asarray(zbar, complex)
        for name in ("psi", "J"):
            if getattr(self, name).shape != (n, w):
                raise ValueError(f"{name} table must be ({n}, {w})")
        for name in ("z", "zbar"):
            if getattr(self, name).shape != (M, w):
                raise ValueError(f"{name} table must be ({M}, {w})")

    # ------------------------------------------------------------------
    @property
    def l_values(self):
        return np.arange(-self.L, self.L + 1)

    def copy(self):
        return Loop(self.T, self.n, self.M, self.L, self.psi.copy(),
                    self.J.copy(), self.z.copy(), self.zbar.copy())

    def blocks(self):
        return (self.psi, self.J, self.z, self.zbar)

    def __add__(self, other):
        return Loop(self.T, self.n, self.M, self.L, self.psi + other.psi,
                    self.J + other.J, self.z + other.z, self.zbar + other.zbar)

    def __sub__(self, other):
        return Loop(self.T, self.n, self.M, self.L, self.psi - other.psi,
                    self.J - other.J, self.z - other.z, self.zbar - other.zbar)

    def __mul__(self, s):
        return Loop(self.T, self.n, self.M, self.L, s * self.psi, s * self.J,
                    s * self.z, s * self.zbar)

    __rmul__ = __mul__

    def scale_like(self):
        return max(np.abs(self.psi).max(initial=0.0),
                   np.abs(self.J).max(initial=0.0),
                   np.abs(self.z).max(initial=0.0),
                   np.abs(self.zbar).max(initial=0.0))

    # ------------------------------------------------------------------
    # invariants
    # ------------------------------------------------------------------
    def mean_free_defect(self):
        return float(np.abs(self.psi[:, self.L]).max(initial=0.0))

    def reality_defect(self):
        """Hermitian defect of psi, J plus conjugacy defect of the tail pair."""
        d = 0.0
        for b in (self.psi, self.J):
            d = max(d, float(np.abs(b - np.conj(b[:, ::-1])).max(initial=0.0)))
        d = max(d, float(np.abs(self.zbar - np.conj(self.z[:, ::-1])).max(initial=0.0)))
        return d

    def derivative(self):
        """Coefficientwise d/dt: harmonic l multiplied by 2 pi i l / T."""
        f = 2j * np.pi * self.l_values / self.T
        return Loop(self.T, self.n, self.M, self.L, self.psi * f, self.J * f,
                    self.z * f, self.zbar * f)

    def time_shift(self, sigma):
        """The loop t -> f(t + sigma)."""
        ph = np.exp(2j * np.pi * self.l_values * sigma / self.T)
        return Loop(self.T, self.n, self.M, self.L, self.psi * ph, self.J * ph,
                    self.z * ph, self.zbar * ph)

    # ------------------------------------------------------------------
    # sampling
    # ------------------------------------------------------------------
    def to_samples(self, N_t):
        """Values on the uniform grid t_m = m T / N_t; exact for band-limited data."""
        if N_t < 2 * self.L + 2:
            raise UndersampledError(f"need N_t >= {2 * self.L + 2}")
        return tuple(coeff_to_samples(b, self.L, N_t) for b in self.blocks())

    @classmethod
    def from_samples(cls, T, n, M, L, psi_s, J_s, z_s, zbar_s):
        N_t = psi_s.shape[1]
        if N_t < 2 * L + 2:
            raise UndersampledError(f"need N_t >= {2 * L + 2}")
        return cls(T, n, M, L,
                   samples_to_coeff(psi_s, L), samples_to_coeff(J_s, L),
                   samples_to_coeff(z_s, L), samples_to_coeff(zbar_s, L))

    # ------------------------------------------------------------------
    # norms
    # ------------------------------------------------------------------
    def norm_L2T(self, weights):
        """|J| + |psi| + ||w|| with (1/T) int |.|^2 dt per component (Parseval)."""
        nj = np.sqrt(np.sum(np.abs(self.J) ** 2))
        np_ = np.sqrt(np.sum(np.abs(self.psi) ** 2))
        nw = np.sqrt(np.sum(np.abs(self.z) ** 2 * weights[:, None] ** 2))
        return float(nj + np_ + nw)

    def norm_Tas(self, weights):
        """||.||_{L2,T,a,s} + T ||d/dt .||_{L2,T,a,s}."""
        return self.norm_L2T(weights) + self.T * self.derivative().norm_L2T(weights)

    def sup_phase_norm(self, weights, N_t=None):
        """max_t of the weighted tail phase-space norm along the loop."""
        N_t = N_t or max(4 * self.L + 4, 64)
        zs = coeff_to_samples(self.z, self.L, N_t)
        return float(np.sqrt(np.sum(np.abs(zs) ** 2 * weights[:, None] ** 2,
                                    axis=0)).max())

    # ------------------------------------------------------------------
    # serialization: binary-free JSON with [re, im] pairs per harmonic
    # ------------------------------------------------------------------
    def to_json(self):
        def enc(b):
            return [[[float(v.real), float(v.imag)] for v in row] for row in b]
        return json.dumps({
            "T": self.T, "n": self.n, "M": self.M, "L_max": self.L,
            "psi": enc(self.psi), "J": enc(self.J),
            "z": enc(self.z), "zbar": enc(self.zbar),
        })

    @classmethod
    def from_json(cls, text):
        d = json.loads(text)

        def dec(rows):
            return np.array([[complex(re, im) for re, im in row] for row in rows],
                            dtype=complex) if rows else np.zeros((0, 2 * d["L_max"] + 1))
        return cls(d["T"], d["n"], d["M"], d["L_max"], dec(d["psi"]),
                   dec(d["J"]), dec(d["z"]), dec(d["zbar"]))


def coeff_to_samples(table, L, N_t):
    """Evaluate sum_l c_l e^{2 pi i l t/T} on the N_t-point uniform grid."""
    table = np.atleast_2d(table)
    spec = np.zeros((table.shape[0], N_t), complex)
    l = np.arange(-L, L + 1)
    spec[:, l % N_t] = table
    return np.fft.ifft(spec, axis=1) * N_t


def samples_to_coeff(samples, L):
    """Harmonics -L..L of uniformly sampled data (exact when band-limited)."""
    samples = np.atleast_2d(samples)
    N_t = samples.shape[1]
    spec = np.fft.fft(samples, axis=1) / N_t
    l = np.arange(-L, L + 1)
    return spec[:, l % N_t]


def product_bound_check(loop_a, loop_b, weights):
    """Empirical algebra constant: ||a * b||_{T,a,s} / (||a|| ||b||).

    The product is taken componentwise on an oversampled grid, so the
    estimate covers exactly the products the range equation forms.
    """
    N_t = 4 * max(loop_a.L, loop_b.L) + 4
    sa = loop_a.to_samples(N_t)
    sb = loop_b.to_samples(N_t)
    prod = tuple(x * y for x, y in zip(sa, sb))
    lp = Loop.from_samples(loop_a.T, loop_a.n, loop_a.M,
                           min(2 * loop_a.L, N_t // 2 - 1), *prod)
    na = loop_a.norm_Tas(weights)
    nb = loop_b.norm_Tas(weights)
    if na == 0.0 or nb == 0.0:
        return 0.0
    return lp.norm_Tas(weights) / (na * nb)
