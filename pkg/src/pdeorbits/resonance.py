"""Resonant-torus selection: period, actions, and small-denominator control.

Given the matrices (A, B) and linear frequencies, pick a period T in
[eta^-2, 2 eta^-2] and an action point I0 so that the shifted tangential
frequencies are completely resonant (omega~ T = 2 pi k) while the shifted
tail frequencies stay clear of the integer lattice by delta / j^tau.
The admissible periods are found by an exact interval scanner; the measure
of the excluded set is audited against its linear-in-delta bound.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np


class SelectionError(RuntimeError):
    pass


class DegenerateSlope(SelectionError):
    """Omega-hat_j vanished; the affine bad-set construction needs it."""


@dataclass
class TorusSelection:
    eta: float
    T: float
    k: np.ndarray                  # integer vector, omega~ T = 2 pi k
    I0: np.ndarray                 # positive actions
    omega_tilde: np.ndarray
    Omega_tilde: np.ndarray
    Omega_hat: np.ndarray
    delta: float
    tau: float
    h2_margin: float = 0.0         # min_j j^tau dist(Omega~_j T, 2 pi Z)
    i0_norm: float = 0.0

    def resonance_defect(self):
        return float(np.max(np.abs(self.omega_tilde * self.T
                                   - 2 * np.pi * self.k))
                     / np.max(np.abs(2 * np.pi * self.k)))

    def to_json(self):
        return json.dumps({
            "eta": self.eta, "T": self.T,
            "k": [int(v) for v in self.k],
            "I0": self.I0.tolist(),
            "omega_tilde": self.omega_tilde.tolist(),
            "Omega_tilde": self.Omega_tilde.tolist(),
            "Omega_hat": self.Omega_hat.tolist(),
            "delta": self.delta, "tau": self.tau,
            "h2_margin": self.h2_margin, "i0_norm": self.i0_norm,
        }, indent=1)

    @classmethod
    def from_json(cls, text):
        d = json.loads(text)
        return cls(d["eta"], d["T"], np.array(d["k"], int), np.array(d["I0"]),
                   np.array(d["omega_tilde"]), np.array(d["Omega_tilde"]),
                   np.array(d["Omega_hat"]), d["delta"], d["tau"],
                   d.get("h2_margin", 0.0), d.get("i0_norm", 0.0))


@dataclass
class BadSet:
    j: int                         # absolute tail mode index
    l: int
    T_lo: float
    T_hi: float


def k_of_T(omega, T):
    """Componentwise integer part of omega T / 2 pi."""
    return np.floor(np.asarray(omega) * T / (2 * np.pi)).astype(np.int64)


def I0_of_T(A, omega, T, eta):
    """Actions enforcing exact resonance: omega T + T eta^2 A I0 = 2 pi k."""
    omega = np.asarray(omega, float)
    x = omega * T / (2 * np.pi)
    k = np.floor(x)
    return (2 * np.pi / (eta ** 2 * T)) * np.linalg.solve(A, k - x)


def omega_hat(A, B, omega, Omega):
    return np.asarray(Omega, float) - B @ np.linalg.solve(A, np.asarray(omega, float))


def breakpoints(omega, eta, window=None):
    """Sorted T values in the period window where some [w_i T / 2pi] jumps."""
    lo, hi = window if window is not None else (eta ** -2, 2 * eta ** -2)
    pts = []
    for w in np.asarray(omega, float):
        start = math.ceil(w * lo / (2 * np.pi))
        stop = math.floor(w * hi / (2 * np.pi))
        for m in range(start, stop + 1):
            t = 2 * np.pi * m / w
            if lo < t < hi:
                pts.append(t)
    return np.unique(np.array(sorted(pts)))


def constancy_intervals(omega, eta, window=None):
    """Maximal intervals on which k(T) is constant."""
    lo, hi = window if window is not None else (eta ** -2, 2 * eta ** -2)
    bps = breakpoints(omega, eta, (lo, hi))
    edges = np.concatenate([[lo], bps, [hi]])
    return [(edges[i], edges[i + 1]) for i in range(len(edges) - 1)
            if edges[i + 1] - edges[i] > 1e-12]


def _tail_affine(A, B, omega, Omega, k0):
    """On a constancy interval, Omega~_j T = Ohat_j T + c_j with c_j constant."""
    Ohat = omega_hat(A, B, omega, Omega)
    c = 2 * np.pi * (B @ np.linalg.solve(A, k0.astype(float)))
    return Ohat, c


def bad_sets(interval, A, B, omega, Omega, n, delta, tau,
             slope_tol=1e-10):
    """Excluded sub-intervals B_jl of one constancy interval.

    On the interval, Omega~_j T is affine in T with slope Ohat_j, so each
    B_jl = {T : |Omega~_j T - 2 pi l| < delta / j^tau} is one interval in
    closed form.  Only the l values whose lattice points fall inside the
    affine image (widened by the margin) are enumerated.
    """
    lo, hi = interval
    k0 = k_of_T(omega, 0.5 * (lo + hi))
    Ohat, c = _tail_affine(A, B, omega, Omega, k0)
    out = []
    for jj, (sl, cc) in enumerate(zip(Ohat, c)):
        j = n + 1 + jj
        if abs(sl) < slope_tol:
            raise DegenerateSlope(f"Omega-hat_{j} below tolerance")
        margin = delta / j ** tau
        va, vb = sl * lo + cc, sl * hi + cc
        vlo, vhi = min(va, vb), max(va, vb)
        l_lo = math.ceil((vlo - margin) / (2 * np.pi))
        l_hi = math.floor((vhi + margin) / (2 * np.pi))
        for l in range(l_lo, l_hi + 1):
            t0 = (2 * np.pi * l - margin - cc) / sl
            t1 = (2 * np.pi * l + margin - cc) / sl
            t0, t1 = min(t0, t1), max(t0, t1)
            t0, t1 = max(t0, lo), min(t1, hi)
            if t1 > t0:
                out.append(BadSet(j, l, t0, t1))
    return out


def all_bad_sets(A, B, omega, Omega, n, eta, delta, tau, window=None):
    sets = []
    for iv in constancy_intervals(omega, eta, window):
        sets.extend(bad_sets(iv, A, B, omega, Omega, n, delta, tau))
    return sets


def union_measure(sets):
    """Lebesgue measure of the union of the (T_lo, T_hi) intervals."""
    ivs = sorted((b.T_lo, b.T_hi) for b in sets)
    total = 0.0
    cur_lo, cur_hi = None, None
    for lo, hi in ivs:
        if cur_hi is None or lo > cur_hi:
            if cur_hi is not None:
                total += cur_hi - cur_lo
            cur_lo, cur_hi = lo, hi
        else:
            cur_hi = max(cur_hi, hi)
    if cur_hi is not None:
        total += cur_hi - cur_lo
    return total


def measure_audit(A, B, omega, Omega, n, eta, tau, deltas, window=None):
    """Table (delta, total bad measure) over a delta sweep.

    Requires tau > 1, matching the summability needed for the linear
    bound measure <= C delta.
    """
    if tau <= 1:
        raise SelectionError("measure audit requires tau > 1")
    rows = []
    for delta in deltas:
        sets = all_bad_sets(A, B, omega, Omega, n, eta, delta, tau, window)
        rows.append((float(delta), union_measure(sets)))
    return rows


def h2_margin(T, Omega_tilde, n, tau):
    """min over tail modes of j^tau * dist(Omega~_j T, 2 pi Z).

    Covers every integer l at once: only the lattice point nearest to
    Omega~_j T can violate (H2) when delta / j^tau < pi.
    """
    j = np.arange(n + 1, n + 1 + len(Omega_tilde), dtype=float)
    v = np.asarray(Omega_tilde) * T
    dist = np.abs(v - 2 * np.pi * np.round(v / (2 * np.pi)))
    return float(np.min(dist * j ** tau))


def classify_T(T, A, B, omega, Omega, n, eta, delta, tau):
    """Pointwise (H2) test of a single period (brute-force oracle hook)."""
    x = np.asarray(omega) * T / (2 * np.pi)
    I0 = (2 * np.pi / (eta ** 2 * T)) * np.linalg.solve(A, np.floor(x) - x)
    Ot = np.asarray(Omega) + eta ** 2 * (B @ I0)
    return h2_margin(T, Ot, n, tau) >= delta


def select_torus(A, B, omega, Omega, eta, delta, tau, d_smoothing,
                 window=None, i0_floor_frac=0.05, policy="widest",
                 target_I0=None):
    """Pick an admissible (T, I0) and assemble the torus data.

    Scans the constancy intervals, removes the (H2)-excluded sub-intervals,
    and evaluates candidate midpoints.  Candidates failing the action
    positivity floor I0_j >= floor_frac * max(I0) are rejected.  policy
    "widest" takes the midpoint of the widest good sub-interval;
    "match_I0" takes the admissible candidate closest to target_I0 (used
    by eta sweeps to keep the action point comparable across eta).
    """
    omega = np.asarray(omega, float)
    Omega = np.asarray(Omega, float)
    n = len(omega)
    if abs(np.linalg.det(A)) < 1e-12:
        raise SelectionError("detA-zero: action-to-frequency map degenerate")
    if not (1.0 < tau < d_smoothing):
        raise SelectionError(f"need 1 < tau < d = {d_smoothing}, got {tau}")
    Ohat = omega_hat(A, B, omega, Omega)
    if np.min(np.abs(Ohat)) < 1e-10:
        raise SelectionError("Omega-hat-zero: degenerate shifted tail frequency")
    lo, hi = window if window is not None else (eta ** -2, 2 * eta ** -2)

    candidates = []
    for iv in constancy_intervals(omega, eta, (lo, hi)):
        piv = _positivity_interval(iv, A, omega, i0_floor_frac)
        if piv is None:
            continue
        sets = bad_sets(iv, A, B, omega, Omega, n, delta, tau)
        for glo, ghi in _subtract(piv, sets):
            T = 0.5 * (glo + ghi)
            I0 = I0_of_T(A, omega, T, eta)
            if I0.min() <= 0 or I0.min() < i0_floor_frac * I0.max():
                continue
            candidates.append((ghi - glo, T, I0))
    if not candidates:
        best = _largest_feasible_delta(A, B, omega, Omega, n, eta, tau,
                                       (lo, hi), i0_floor_frac)
        raise SelectionError(
            f"no admissible T in [{lo:.6g}, {hi:.6g}] at delta={delta}; "
            f"largest achievable delta ~ {best:.3e}")
    if policy == "match_I0" and target_I0 is not None:
        width, T, I0 = min(candidates,
                           key=lambda c: float(np.linalg.norm(c[2] - target_I0)))
    else:
        width, T, I0 = max(candidates, key=lambda c: c[0])

    k = k_of_T(omega, T)
    wt = omega + eta ** 2 * (A @ I0)
    Ot = Omega + eta ** 2 * (B @ I0)
    sel = TorusSelection(eta=eta, T=float(T), k=k, I0=I0, omega_tilde=wt,
                         Omega_tilde=Ot, Omega_hat=Ohat, delta=delta, tau=tau)
    sel.h2_margin = h2_margin(T, Ot, n, tau)
    sel.i0_norm = float(np.linalg.norm(I0))
    if sel.h2_margin < delta:
        raise SelectionError("selected midpoint lost the (H2) margin")
    return sel


def _positivity_interval(interval, A, omega, floor_frac, pad=1e-9):
    """T-range of the constancy interval where I0(T) clears the action floor.

    On the interval, I0(T) is (2 pi / eta^2 T) g(T) with g affine in T, so
    positivity and the floor I0_j >= floor * max(I0) reduce to affine
    inequalities g_j - floor * g_i >= 0; their intersection is one
    sub-interval (or empty).
    """
    lo, hi = interval
    k0 = k_of_T(omega, 0.5 * (lo + hi)).astype(float)
    base = np.linalg.solve(A, k0)
    slope = -np.linalg.solve(A, np.asarray(omega, float)) / (2 * np.pi)
    t_lo, t_hi = lo, hi
    n = len(k0)
    for j in range(n):
        for i in range(n):
            # g_j(T) - floor * g_i(T) >= 0 with g(T) = base + slope T
            c0 = base[j] - (floor_frac * base[i] if i != j else 0.0)
            c1 = slope[j] - (floor_frac * slope[i] if i != j else 0.0)
            if i == j:
                c0, c1 = base[j], slope[j]
            if abs(c1) < 1e-300:
                if c0 <= 0:
                    return None
                continue
            root = -c0 / c1
            if c1 > 0:
                t_lo = max(t_lo, root)
            else:
                t_hi = min(t_hi, root)
    if t_hi - t_lo <= 2 * pad:
        return None
    return (t_lo + pad, t_hi - pad)


def _subtract(interval, sets):
    """Good sub-intervals of `interval` after removing the bad sets."""
    lo, hi = interval
    marks = [(lo, 0)]
    events = []
    for b in sets:
        events.append((b.T_lo, 1))
        events.append((b.T_hi, -1))
    events.sort()
    out = []
    depth = 0
    cur = lo
    for t, dm in events:
        if depth == 0 and t > cur:
            out.append((cur, min(t, hi)))
        depth += dm
        if depth == 0:
            cur = t
    if depth == 0 and cur < hi:
        out.append((cur, hi))
    return [(a, b) for a, b in out if b > a + 1e-12]


def _largest_feasible_delta(A, B, omega, Omega, n, eta, tau, window,
                            floor_frac):
    """Best achievable (H2) margin over positivity-admissible midpoints."""
    best = 0.0
    for iv in constancy_intervals(omega, eta, window):
        for frac in (0.25, 0.5, 0.75):
            T = iv[0] + frac * (iv[1] - iv[0])
            I0 = I0_of_T(A, omega, T, eta)
            if I0.min() <= 0 or I0.min() < floor_frac * I0.max():
                continue
            Ot = np.asarray(Omega) + eta ** 2 * (B @ I0)
            best = max(best, h2_margin(T, Ot, n, tau))
    return best
