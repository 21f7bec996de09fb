"""Truncated PDE models: frequencies, nonlinearity expansion, hypothesis checks.

Two models are supported.  The hinged beam

    u_tt + u_xxxx + m u = f(u),   f(u) = a u^3 + f5 u^5 + ...

on (0, pi) with mode frequencies w_j = sqrt(j^4 + m), and a Schroedinger
equation with a smoothing convolution nonlinearity whose Hamiltonian is
|u_x|^2 + P(|Gamma u|^2), Gamma acting on Fourier coefficients as
multiplication by rho_j, with w_j = j^2.

The nonlinear part is Taylor-expanded to total degree <= 6 in the 2(n+M)
truncated complex coordinates.  Products of sine modes are integrated by
closed-form selection rules, never by quadrature, so coefficient-vanishing
statements are exact.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np

from .poly import SparsePoly

NR_ZERO_TOL = 1e-9


class ModelError(ValueError):
    pass


@dataclass(frozen=True)
class ModelSpec:
    """PDE model: kind, mass/nonlinearity data, smoothing order."""
    kind: str                      # "beam" | "nls"
    m: float = 0.0                 # beam mass parameter
    nonlinearity_coeffs: tuple = (1.0,)   # beam: (a, f5, f7, ..); nls: (c2, c3, ..)
    rho: tuple = ()                # nls smoothing weights rho_j, j = 1..n+M
    smoothing_d: float = 2.0

    def __post_init__(self):
        if self.kind not in ("beam", "nls"):
            raise ModelError(f"unknown model kind {self.kind!r}")
        if self.kind == "beam":
            if self.m < 0:
                raise ModelError("beam requires m >= 0")
            if not self.nonlinearity_coeffs or self.nonlinearity_coeffs[0] == 0:
                raise ModelError("beam requires a != 0")
        else:
            if not self.rho:
                raise ModelError("nls requires a rho sequence")
            if any(r == 0 for r in self.rho):
                raise ModelError("nls requires rho_j != 0 for all stored j")
            # |rho_j| <= C j^{-d/2} verifiable on the stored range
            js = np.arange(1, len(self.rho) + 1)
            c = np.abs(np.asarray(self.rho)) * js ** (self.smoothing_d / 2.0)
            if np.max(c) > 100.0 * max(np.min(c), 1e-300):
                raise ModelError("rho decay inconsistent with declared d")


@dataclass(frozen=True)
class TruncationParams:
    n: int
    M: int
    L_max: int
    s: float = 1.0
    a_weight: float = 0.0
    eta: float = 0.05

    def __post_init__(self):
        if self.n < 2:
            raise ModelError("need n >= 2 tangential modes")
        if self.M < 1:
            raise ModelError("need M >= 1 tail modes")
        if self.L_max < 1:
            raise ModelError("need L_max >= 1")
        if self.s < 0 or self.a_weight < 0:
            raise ModelError("norm exponents must be nonnegative")
        if not (0 < self.eta < 1):
            raise ModelError("need 0 < eta < 1")


@dataclass
class FrequencyTable:
    omega: np.ndarray              # tangential w_1..w_n
    Omega: np.ndarray              # tail w_{n+1}..w_{n+M}
    growth: tuple = (1.0, 2.0)     # (a_const, d1) with w_j ~ a_const j^{d1}

    @property
    def n(self):
        return len(self.omega)

    @property
    def M(self):
        return len(self.Omega)

    def all(self):
        return np.concatenate([self.omega, self.Omega])


def mode_weights(trunc, s=None, a=None):
    """Norm weights j^s e^{j a} for modes 1..n+M."""
    s = trunc.s if s is None else s
    a = trunc.a_weight if a is None else a
    j = np.arange(1, trunc.n + trunc.M + 1, dtype=float)
    return j ** s * np.exp(j * a)


def frequencies(spec, trunc):
    """Linear frequencies of the truncated model.

    beam: w_j = sqrt(j^4 + m);  nls: w_j = j^2.  Growth exponent d1 = 2
    for both.
    """
    j = np.arange(1, trunc.n + trunc.M + 1, dtype=float)
    if spec.kind == "beam":
        w = np.sqrt(j ** 4 + spec.m)
    else:
        if len(spec.rho) < trunc.n + trunc.M:
            raise ModelError("rho sequence shorter than n + M")
        w = j ** 2
    return FrequencyTable(omega=w[:trunc.n], Omega=w[trunc.n:], growth=(1.0, 2.0))


def smoothing_order(spec):
    """Smoothing gain d of the nonlinear vector field (beam: 2)."""
    if spec.kind == "beam":
        return 2.0
    return float(spec.smoothing_d)


def check_nonresonance(freqs, tail_cutoff, max_order=5, zero_tol=NR_ZERO_TOL):
    """Exhaustive scan for violations of w.k + W.l != 0.

    k runs over Z^n with |k|_1 <= max_order - |l|_1, l over tail indices
    n+1..tail_cutoff with |l|_1 <= 2.  Returns all (k, l) pairs, excluding
    (0, 0), with |w.k + W.l| below zero_tol.  l is reported as a dict
    {mode index: multiplicity}.
    """
    n = freqs.n
    if tail_cutoff > n + freqs.M:
        raise ModelError("tail_cutoff exceeds stored frequencies")
    tail_idx = list(range(n + 1, tail_cutoff + 1))
    l_choices = [{}]
    l_choices += [{j: sgn} for j in tail_idx for sgn in (1, -1)]
    l_choices += [{j: 2 * sgn} for j in tail_idx for sgn in (1, -1)]
    for j, jp in itertools.combinations(tail_idx, 2):
        for s1 in (1, -1):
            for s2 in (1, -1):
                l_choices.append({j: s1, jp: s2})
    out = []
    allw = freqs.all()
    for l in l_choices:
        l1 = sum(abs(v) for v in l.values())
        kmax = max_order - l1
        if kmax < 0:
            continue
        lsum = sum(v * allw[j - 1] for j, v in l.items())
        for k in _k_box(n, kmax):
            if not l and all(v == 0 for v in k):
                continue
            val = float(np.dot(k, freqs.omega)) + lsum
            if abs(val) < zero_tol:
                out.append((tuple(k), dict(l)))
    return out


def _k_box(n, kmax):
    """Integer vectors k in Z^n with |k|_1 <= kmax."""
    rng = range(-kmax, kmax + 1)
    for k in itertools.product(rng, repeat=n):
        if sum(abs(v) for v in k) <= kmax:
            yield k


def sine_product_integral(indices):
    """Closed form of int_0^pi prod_i sin(j_i x) dx for an even count of sines.

    Nonzero only when the index sum is even and some signed combination
    of the indices vanishes; then the value is pi/(2i)^N times the signed
    count of vanishing combinations.
    """
    idx = list(indices)
    N = len(idx)
    if N % 2 != 0:
        raise ModelError("odd sine-product integrals are not used by these models")
    if sum(idx) % 2 != 0:
        return 0.0
    total = 0
    for signs in itertools.product((1, -1), repeat=N - 1):
        mu = idx[0] + sum(s * j for s, j in zip(signs, idx[1:]))
        if mu == 0:
            prod = 1
            for s in signs:
                prod *= s
            total += prod
    # sign vectors come in +-pairs; fixing the first sign counts each once
    # and contributes a factor 2 relative to the full (2i)^{-N} sum.
    # i^N = (-1)^{N/2} exactly for even N.
    sign = -1.0 if (N // 2) % 2 else 1.0
    return math.pi * 2.0 * total * sign / (2.0 ** N)


def hamiltonian_polynomial(spec, trunc, max_order=6):
    """H0 + Taylor(P) through degree max_order in the truncated coordinates.

    The output satisfies the reality constraint
    coeff(j1,j2,j3,j4) = conj(coeff(j2,j1,j4,j3)) exactly.
    """
    if max_order > 6:
        raise ModelError("orders above 6 are not supported")
    freqs = frequencies(spec, trunc)
    K = trunc.n + trunc.M
    h = SparsePoly.h0(trunc.n, trunc.M, freqs.omega, freqs.Omega,
                      max_degree=max_order)
    if spec.kind == "beam":
        h = h + _beam_terms(spec, trunc, freqs, max_order)
    else:
        if len(spec.rho) < K:
            raise ModelError("rho sequence shorter than n + M")
        h = h + _nls_terms(spec, trunc, max_order)
    return h


def _beam_terms(spec, trunc, freqs, max_order):
    """Quartic (a u^4/4) and, when present, sextic (f5 u^6/6) contributions."""
    K = trunc.n + trunc.M
    allw = freqs.all()
    terms = []
    a = spec.nonlinearity_coeffs[0]
    if max_order >= 4:
        _beam_block(terms, K, allw, a / 4.0, 4)
    f5 = spec.nonlinearity_coeffs[1] if len(spec.nonlinearity_coeffs) > 1 else 0.0
    if f5 and max_order >= 6:
        _beam_block(terms, K, allw, f5 / 6.0, 6)
    return SparsePoly.from_terms(trunc.n, trunc.M, terms, max_degree=max_order)


def _beam_block(terms, K, allw, gcoef, N):
    """Expand gcoef * int u^N dx over mode multisets with nonzero integrals."""
    inv_sqw = 1.0 / np.sqrt(allw)
    phi_norm = math.sqrt(2.0 / math.pi) ** N
    for combo in itertools.combinations_with_replacement(range(1, K + 1), N):
        integral = sine_product_integral(combo)
        if integral == 0.0:
            continue
        mult = _multiset_count(combo)
        base = gcoef * mult * phi_norm * integral
        for j in combo:
            base *= inv_sqw[j - 1]
        # expand prod q_j^{m_j} with q = (z + zbar)/sqrt(2)
        modes, counts = np.unique(combo, return_counts=True)
        base /= math.sqrt(2.0) ** N
        for alphas in itertools.product(*[range(c + 1) for c in counts]):
            coeff = base
            e = np.zeros(2 * K, np.int8)
            for mode, c, al in zip(modes, counts, alphas):
                coeff *= math.comb(int(c), int(al))
                e[mode - 1] = al
                e[K + mode - 1] = c - al
            terms.append((e, coeff))


def _multiset_count(combo):
    """Number of ordered tuples realizing the multiset."""
    total = math.factorial(len(combo))
    for c in np.unique(combo, return_counts=True)[1]:
        total //= math.factorial(int(c))
    return total


def _nls_terms(spec, trunc, max_order):
    """int P(|Gamma u|^2) dx with Gamma acting as rho_j on coefficients."""
    K = trunc.n + trunc.M
    rho = np.asarray(spec.rho[:K], float)
    phi = math.sqrt(2.0 / math.pi)
    terms = []
    for order_idx, ck in enumerate(spec.nonlinearity_coeffs):
        k = order_idx + 2          # P(y) = sum_k c_k y^k, k >= 2
        if ck == 0.0 or 2 * k > max_order:
            continue
        for zs in itertools.combinations_with_replacement(range(1, K + 1), k):
            mult_z = _multiset_count(zs)
            for zbs in itertools.combinations_with_replacement(range(1, K + 1), k):
                integral = sine_product_integral(zs + zbs)
                if integral == 0.0:
                    continue
                mult = mult_z * _multiset_count(zbs)
                coeff = ck * mult * integral * phi ** (2 * k)
                for j in zs + zbs:
                    coeff *= rho[j - 1]
                e = np.zeros(2 * K, np.int8)
                for j in zs:
                    e[j - 1] += 1
                for j in zbs:
                    e[K + j - 1] += 1
                terms.append((e, coeff))
    return SparsePoly.from_terms(trunc.n, trunc.M, terms, max_degree=max_order)


# ----------------------------------------------------------------------
# pseudo-spectral data for the independent verification integrator
# ----------------------------------------------------------------------
@dataclass
class GridModel:
    """Collocation-grid form of the truncated model (verification path)."""
    kind: int                     # 0 beam, 1 nls
    omega: np.ndarray
    weights: np.ndarray           # beam: sqrt(w_j); nls: rho_j
    coefs: np.ndarray             # beam: f-coefficients; nls: P-coefficients
    powers: np.ndarray
    energy_coefs: np.ndarray      # beam: g-coefficients; nls: same as coefs
    energy_powers: np.ndarray
    sinmat: np.ndarray            # (K, NX) orthonormal sine modes on the grid
    wquad: float


def grid_model(spec, trunc):
    freqs = frequencies(spec, trunc)
    K = trunc.n + trunc.M
    if spec.kind == "beam":
        deg = 3 + 2 * (len(spec.nonlinearity_coeffs) - 1)
    else:
        deg = 2 * (len(spec.nonlinearity_coeffs) + 1) - 1
    mmax = (deg + 1) * K
    NX = 1
    while 2 * NX <= mmax + 2:
        NX *= 2
    NX *= 2
    x = np.arange(1, NX) * math.pi / NX
    j = np.arange(1, K + 1)
    sinmat = math.sqrt(2.0 / math.pi) * np.sin(np.outer(j, x))
    wq = math.pi / NX
    if spec.kind == "beam":
        fc = np.asarray(spec.nonlinearity_coeffs, float)
        fp = np.arange(3, 3 + 2 * len(fc), 2)
        gc = fc / (fp + 1.0)
        gp = fp + 1
        return GridModel(0, freqs.all(), np.sqrt(freqs.all()), fc, fp, gc, gp,
                         sinmat, wq)
    rho = np.asarray(spec.rho[:K], float)
    pc = np.asarray(spec.nonlinearity_coeffs, float)
    pp = np.arange(2, 2 + len(pc))
    return GridModel(1, freqs.all(), rho, pc, pp, pc, pp, sinmat, wq)
