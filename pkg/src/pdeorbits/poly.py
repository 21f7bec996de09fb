"""Sparse polynomial algebra over truncated complex mode coordinates.

A polynomial lives in the 2(n+M) variables

    z_1 .. z_{n+M},  zbar_1 .. zbar_{n+M}

where the first n modes are tangential and the remaining M are tail modes.
Terms are held as an integer exponent matrix together with a complex
coefficient vector; column k < n+M carries the exponent of z_{k+1} and
column (n+M)+k the exponent of zbar_{k+1}.  All arithmetic canonicalizes
its result: duplicate monomials merged, coefficients below PRUNE_TOL
dropped, rows sorted in graded lexicographic order.
"""

from __future__ import annotations

import numpy as np

# Absolute coefficient pruning threshold applied after every arithmetic
# pass.  Coefficient assertions elsewhere must use a tolerance above this.
PRUNE_TOL = 1e-14

# Pair-product chunk limit for multiplication/bracket accumulation.
_CHUNK = 1 << 21


class ModeCountMismatch(ValueError):
    pass


class SparsePoly:
    """Truncated polynomial in (x, xbar, zhat, zhatbar) coordinates.

    Parameters
    ----------
    n, M : int
        Tangential and tail mode counts.
    exps : (T, 2(n+M)) integer array
        Exponents per term.
    coeffs : (T,) complex array
    max_degree : int
        Hard truncation degree carried by the polynomial.  Arithmetic
        results are cut at the combined cap of the operands.
    """

    __slots__ = ("n", "M", "exps", "coeffs", "max_degree", "_packed_cache")

    def __init__(self, n, M, exps, coeffs, max_degree, canonical=False):
        self.n = int(n)
        self.M = int(M)
        K2 = 2 * (self.n + self.M)
        exps = np.asarray(exps, dtype=np.int8).reshape(-1, K2)
        coeffs = np.asarray(coeffs, dtype=np.complex128).reshape(-1)
        if exps.shape[0] != coeffs.shape[0]:
            raise ValueError("exponent/coefficient length mismatch")
        self.exps = exps
        self.coeffs = coeffs
        self.max_degree = int(max_degree)
        if not canonical:
            self._canonicalize()

    # ------------------------------------------------------------------
    # construction helpers
    # ------------------------------------------------------------------
    @classmethod
    def zero(cls, n, M, max_degree=6):
        K2 = 2 * (n + M)
        return cls(n, M, np.zeros((0, K2), np.int8), np.zeros(0, complex),
                   max_degree, canonical=True)

    @classmethod
    def from_terms(cls, n, M, terms, max_degree=6):
        """Build from an iterable of (exponent_sequence, coefficient)."""
        K2 = 2 * (n + M)
        rows, cs = [], []
        for e, c in terms:
            e = np.asarray(e, dtype=np.int8)
            if e.shape != (K2,):
                raise ValueError("exponent record of wrong length")
            rows.append(e)
            cs.append(c)
        if not rows:
            return cls.zero(n, M, max_degree)
        return cls(n, M, np.array(rows, np.int8), np.array(cs, complex),
                   max_degree)

    @classmethod
    def monomial(cls, n, M, exp, coeff=1.0, max_degree=6):
        return cls.from_terms(n, M, [(exp, coeff)], max_degree)

    @classmethod
    def h0(cls, n, M, omega, Omega, max_degree=6):
        """Quadratic part sum_j w_j z_j zbar_j."""
        K = n + M
        w = np.concatenate([np.asarray(omega, float), np.asarray(Omega, float)])
        exps = np.zeros((K, 2 * K), np.int8)
        for j in range(K):
            exps[j, j] = 1
            exps[j, K + j] = 1
        return cls(n, M, exps, w.astype(complex), max_degree)

    def copy(self):
        return SparsePoly(self.n, self.M, self.exps.copy(), self.coeffs.copy(),
                          self.max_degree, canonical=True)

    # ------------------------------------------------------------------
    # basic structure
    # ------------------------------------------------------------------
    @property
    def nmodes(self):
        return self.n + self.M

    @property
    def nterms(self):
        return self.coeffs.shape[0]

    def degrees(self):
        """Total degree of every stored term."""
        return self.exps.sum(axis=1).astype(np.int64)

    def tail_degrees(self):
        """Tail degree j3+j4 of every stored term."""
        K = self.nmodes
        t = self.exps[:, self.n:K].sum(axis=1) + self.exps[:, K + self.n:].sum(axis=1)
        return t.astype(np.int64)

    def _canonicalize(self):
        if self.nterms == 0:
            return
        deg = self.exps.sum(axis=1)
        keep = deg <= self.max_degree
        exps, coeffs = self.exps[keep], self.coeffs[keep]
        if exps.shape[0] == 0:
            self.exps, self.coeffs = exps, coeffs
            return
        uniq, inv = np.unique(exps, axis=0, return_inverse=True)
        inv = inv.reshape(-1)
        cr = np.bincount(inv, weights=coeffs.real, minlength=uniq.shape[0])
        ci = np.bincount(inv, weights=coeffs.imag, minlength=uniq.shape[0])
        c = cr + 1j * ci
        keep = np.abs(c) > PRUNE_TOL
        uniq, c = uniq[keep], c[keep]
        order = _graded_lex_order(uniq)
        self.exps, self.coeffs = uniq[order], c[order]

    def _check_compatible(self, other):
        if self.n != other.n or self.M != other.M:
            raise ModeCountMismatch(
                f"mode counts differ: ({self.n},{self.M}) vs ({other.n},{other.M})")

    # ------------------------------------------------------------------
    # arithmetic
    # ------------------------------------------------------------------
    def __add__(self, other):
        if isinstance(other, SparsePoly):
            self._check_compatible(other)
            cap = max(self.max_degree, other.max_degree)
            return SparsePoly(self.n, self.M,
                              np.vstack([self.exps, other.exps]),
                              np.concatenate([self.coeffs, other.coeffs]), cap)
        return NotImplemented

    def __sub__(self, other):
        return self + (-1.0) * other

    def __neg__(self):
        return (-1.0) * self

    def __mul__(self, scalar):
        if isinstance(scalar, (int, float, complex)):
            return SparsePoly(self.n, self.M, self.exps.copy(),
                              self.coeffs * scalar, self.max_degree,
                              canonical=(scalar != 0) and abs(scalar) > PRUNE_TOL
                              and not _can_underflow(self.coeffs, scalar))
        return NotImplemented

    __rmul__ = __mul__

    def mul(self, other, max_degree=None):
        """Polynomial product truncated at max_degree (default: combined cap)."""
        self._check_compatible(other)
        cap = max_degree if max_degree is not None else max(self.max_degree,
                                                            other.max_degree)
        if self.nterms == 0 or other.nterms == 0:
            return SparsePoly.zero(self.n, self.M, cap)
        chunks = _pair_products(self.exps, self.coeffs, other.exps, other.coeffs,
                                cap)
        return _assemble(self.n, self.M, chunks, cap)

    def partial(self, var):
        """Derivative with respect to variable column `var`."""
        sel = self.exps[:, var] > 0
        if not sel.any():
            return SparsePoly.zero(self.n, self.M, max(self.max_degree - 1, 0))
        e = self.exps[sel].copy()
        c = self.coeffs[sel] * e[:, var]
        e[:, var] -= 1
        return SparsePoly(self.n, self.M, e, c, max(self.max_degree - 1, 0),
                          canonical=True)

    def degree_part(self, d):
        sel = self.degrees() == d
        return SparsePoly(self.n, self.M, self.exps[sel], self.coeffs[sel],
                          self.max_degree, canonical=True)

    def degree_range(self, lo, hi):
        deg = self.degrees()
        sel = (deg >= lo) & (deg <= hi)
        return SparsePoly(self.n, self.M, self.exps[sel], self.coeffs[sel],
                          self.max_degree, canonical=True)

    def split_tail_degree(self, cut):
        """Partition into (low, high): low has tail degree <= cut.

        low + high recombines to the original coefficient-exactly.
        """
        t = self.tail_degrees()
        sel = t <= cut
        low = SparsePoly(self.n, self.M, self.exps[sel], self.coeffs[sel],
                         self.max_degree, canonical=True)
        high = SparsePoly(self.n, self.M, self.exps[~sel], self.coeffs[~sel],
                          self.max_degree, canonical=True)
        return low, high

    def prune(self, tol):
        keep = np.abs(self.coeffs) > tol
        return SparsePoly(self.n, self.M, self.exps[keep], self.coeffs[keep],
                          self.max_degree, canonical=True)

    # ------------------------------------------------------------------
    # reality / conjugation
    # ------------------------------------------------------------------
    def conj_swap(self):
        """The polynomial with z <-> zbar swapped and coefficients conjugated.

        Real-valued polynomials (on the reality slice zbar = conj(z)) are
        fixed points of this map.
        """
        K = self.nmodes
        e = np.hstack([self.exps[:, K:], self.exps[:, :K]])
        return SparsePoly(self.n, self.M, e, np.conj(self.coeffs),
                          self.max_degree)

    def reality_defect(self):
        """max |coeff(m) - conj(coeff(swap m))| over stored monomials."""
        diff = self - self.conj_swap()
        if diff.nterms == 0:
            return 0.0
        return float(np.max(np.abs(diff.coeffs)))

    # ------------------------------------------------------------------
    # evaluation
    # ------------------------------------------------------------------
    def evaluate(self, vals):
        """Value at a single point; vals has length 2(n+M)."""
        return complex(self.evaluate_batch(np.asarray(vals, complex)[:, None])[0])

    def evaluate_batch(self, vals):
        """Values at P points; vals is (2(n+M), P) complex."""
        vals = np.asarray(vals, dtype=np.complex128)
        P = vals.shape[1]
        if self.nterms == 0:
            return np.zeros(P, complex)
        out = np.zeros(P, complex)
        rows_per = max(1, _CHUNK // max(P, 1))
        for start in range(0, self.nterms, rows_per):
            sl = slice(start, min(start + rows_per, self.nterms))
            exps = self.exps[sl]
            acc = np.repeat(self.coeffs[sl][:, None], P, axis=1)
            for c in np.flatnonzero(exps.any(axis=0)):
                e = exps[:, c]
                nz = e > 0
                acc[nz] *= vals[c][None, :] ** e[nz, None]
            out += acc.sum(axis=0)
        return out

    def gradient_batch(self, vals):
        """All 2(n+M) partial derivatives at P points -> (2(n+M), P)."""
        from ._fastmath import poly_value_and_grad
        _, g = poly_value_and_grad(self.packed(), np.asarray(vals, np.complex128))
        return g

    def value_and_gradient_batch(self, vals):
        from ._fastmath import poly_value_and_grad
        return poly_value_and_grad(self.packed(), np.asarray(vals, np.complex128))

    def packed(self):
        """Packed term table consumed by the numba kernels (cached)."""
        cached = getattr(self, "_packed_cache", None)
        if cached is None:
            from ._fastmath import pack_poly
            cached = pack_poly(self)
            self._packed_cache = cached
        return cached

    # ------------------------------------------------------------------
    # dump format: one term per line, "j1|j2|j3|j4 re im", graded lex order
    # ------------------------------------------------------------------
    def dumps(self):
        K, n = self.nmodes, self.n
        lines = []
        for e, c in zip(self.exps, self.coeffs):
            j1 = ",".join(str(int(v)) for v in e[:n])
            j2 = ",".join(str(int(v)) for v in e[K:K + n])
            j3 = ",".join(str(int(v)) for v in e[n:K])
            j4 = ",".join(str(int(v)) for v in e[K + n:])
            lines.append(f"{j1}|{j2}|{j3}|{j4} {float(c.real)!r} {float(c.imag)!r}")
        return "\n".join(lines)

    @classmethod
    def loads(cls, text, n, M, max_degree=6):
        terms = []
        K = n + M
        for line in text.splitlines():
            line = line.strip()
            if not line:
                continue
            head, re_, im_ = line.rsplit(" ", 2)
            j1, j2, j3, j4 = head.split("|")
            e = np.zeros(2 * K, np.int8)
            e[:n] = [int(v) for v in j1.split(",")] if j1 else []
            e[K:K + n] = [int(v) for v in j2.split(",")] if j2 else []
            if M:
                e[n:K] = [int(v) for v in j3.split(",")]
                e[K + n:] = [int(v) for v in j4.split(",")]
            terms.append((e, float(re_) + 1j * float(im_)))
        return cls.from_terms(n, M, terms, max_degree)

    def __repr__(self):
        return (f"SparsePoly(n={self.n}, M={self.M}, terms={self.nterms}, "
                f"max_degree={self.max_degree})")


def _can_underflow(coeffs, scalar):
    if coeffs.shape[0] == 0:
        return False
    return bool(np.min(np.abs(coeffs)) * abs(scalar) <= PRUNE_TOL)


def _graded_lex_order(exps):
    deg = exps.sum(axis=1)
    keys = [exps[:, c] for c in range(exps.shape[1] - 1, -1, -1)]
    keys.append(deg)
    return np.lexsort(keys)


def _pair_products(ea, ca, eb, cb, cap):
    """All exponent sums / coefficient products, chunked and degree-capped."""
    Ta = ea.shape[0]
    dega = ea.sum(axis=1)
    degb = eb.sum(axis=1)
    chunks = []
    rows_per = max(1, _CHUNK // max(eb.shape[0], 1))
    for start in range(0, Ta, rows_per):
        sa = slice(start, min(start + rows_per, Ta))
        dsum = dega[sa][:, None] + degb[None, :]
        mask = dsum <= cap
        if not mask.any():
            continue
        ia, ib = np.nonzero(mask)
        e = ea[sa][ia].astype(np.int8) + eb[ib]
        c = ca[sa][ia] * cb[ib]
        chunks.append((e, c))
    return chunks


def _assemble(n, M, chunks, cap):
    if not chunks:
        return SparsePoly.zero(n, M, cap)
    e = np.vstack([c[0] for c in chunks])
    c = np.concatenate([c[1] for c in chunks])
    return SparsePoly(n, M, e, c, cap)


def poisson_bracket(f, g, max_degree=None):
    """Canonical bracket {f, g} = i sum_j (df/dz_j dg/dzbar_j - df/dzbar_j dg/dz_j).

    The result is truncated at `max_degree` (default: the natural degree
    cap of the operands).  Bilinear and antisymmetric; {h, h} = 0 exactly.
    """
    f._check_compatible(g)
    K = f.nmodes
    cap = max_degree if max_degree is not None else max(f.max_degree, g.max_degree)
    chunks = []
    for j in range(K):
        fz = f.partial(j)
        gzb = g.partial(K + j)
        if fz.nterms and gzb.nterms:
            chunks.extend(_pair_products(fz.exps, 1j * fz.coeffs,
                                         gzb.exps, gzb.coeffs, cap))
        fzb = f.partial(K + j)
        gz = g.partial(j)
        if fzb.nterms and gz.nterms:
            chunks.extend(_pair_products(fzb.exps, -1j * fzb.coeffs,
                                         gz.exps, gz.coeffs, cap))
        # keep intermediate storage bounded
        if sum(ch[0].shape[0] for ch in chunks) > 4 * _CHUNK:
            merged = _assemble(f.n, f.M, chunks, cap)
            chunks = [(merged.exps, merged.coeffs)]
    return _assemble(f.n, f.M, chunks, cap)


def vector_field(h, point):
    """Hamiltonian vector field (i dh/dzbar_j, -i dh/dz_j) at one point."""
    point = np.asarray(point, complex)
    K = h.nmodes
    if point.shape[0] != 2 * K:
        raise ValueError("point dimension must be 2(n+M)")
    grad = h.gradient_batch(point[:, None])[:, 0]
    dz = 1j * grad[K:]
    dzb = -1j * grad[:K]
    return np.concatenate([dz, dzb])


def lie_transform(h, chi, order):
    """exp(ad_chi) h = sum_k ad_chi^k h / k!, truncated at total degree `order`.

    chi must have no terms of degree < 3; each bracket with chi then raises
    the minimum degree, so the series terminates at the truncation order.
    """
    if chi.nterms and int(chi.degrees().min()) < 3:
        raise ValueError("generator must have degree >= 3")
    result = h.degree_range(0, order)
    term = result
    if chi.nterms == 0:
        return result
    k = 1
    while term.nterms:
        term = poisson_bracket(chi, term, max_degree=order) * (1.0 / k)
        if term.nterms == 0:
            break
        result = result + term
        k += 1
        if k > order + 2:
            break
    return result
