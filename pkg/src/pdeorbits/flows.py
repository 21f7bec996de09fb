"""Pointwise application of the normalizing transformation.

The coordinate change behind the seminormal form is the composition of
time-1 generator flows.  Going from normalized to original coordinates
applies the flows of -chi5, -chi4, -chi3 in that order; the inverse
composition runs +chi3, +chi4, +chi5.  Points are batches of z-components
on the reality slice (the conjugate block follows by conjugation, which
every real generator preserves).
"""

from __future__ import annotations

import numpy as np

from ._fastmath import chi_flow


def pullback_points(pts, form, nsteps=12):
    """Normalized -> original coordinates for a (K, P) batch of z-points."""
    out = np.ascontiguousarray(pts, np.complex128)
    for chi in reversed(form.generators):          # chi5 first
        if chi.nterms:
            out = chi_flow(chi.packed(), out, sign=-1.0, nsteps=nsteps)
    return out

def pushforward_points(pts, form, nsteps=12):
    """Original -> normalized coordinates (inverse of pullback_points)."""
    out = np.ascontiguousarray(pts, np.complex128)
    for chi in form.generators:                    # chi3 first
        if chi.nterms:
            out = chi_flow(chi.packed(), out, sign=+1.0, nsteps=nsteps)
    return out


def displacement_ratio(pts, form, weights_s, weights_sd, nsteps=12):
    """||z - T(z)||_{a,s+d} / ||z||_{a,s}^2 per point (near-identity check)."""
    moved = pullback_points(pts, form, nsteps=nsteps)
    num = np.sqrt(np.sum(np.abs(moved - pts) ** 2 * weights_sd[:, None] ** 2,
                         axis=0))
    den = np.sum(np.abs(pts) ** 2 * weights_s[:, None] ** 2, axis=0)
    return num / den
