"""Run configuration: one JSON document drives every pipeline stage.

The model block uses the fixed field names kind, m, a, fk, n, M, Lmax, s,
aw, eta; the Schroedinger variant adds rho (or rho_pow for rho_j = j^p),
d, and pk (Taylor coefficients of P).  Resonance, solver, and
verification knobs have defaults matching the bundled configurations.
All randomness downstream derives from the single 64-bit seed.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .model import ModelSpec, TruncationParams


class ConfigError(ValueError):
    def __init__(self, field_name, msg):
        self.field_name = field_name
        super().__init__(f"config field {field_name!r}: {msg}")


_REQUIRED = ("kind", "n", "M", "Lmax", "s", "aw", "eta")


@dataclass
class RunConfig:
    kind: str
    n: int
    M: int
    Lmax: int
    s: float
    aw: float
    eta: float
    m: float = 0.0
    a: float = 0.0
    fk: tuple = ()
    rho: tuple = ()
    rho_pow: float | None = None
    d: float = 2.0
    pk: tuple = ()
    delta: float = 0.05
    tau: float = 1.5
    window: tuple | None = None
    i0_floor: float = 0.05
    policy: str = "widest"
    tol: float = 1e-11
    max_iters: int = 80
    ball_factor: float = 10.0
    newton_tol: float = 1e-11
    grid_per_dim: int = 16
    orbit_tol: float = 1e-6
    cluster_tol: float = 1e-10
    drift_tol: float = 1e-8
    closure_tol: float = 1e-6
    seed: int = 20338491

    @classmethod
    def from_dict(cls, d):
        for name in _REQUIRED:
            if name not in d:
                raise ConfigError(name, "missing")
        kind = d["kind"]
        if kind not in ("beam", "nls"):
            raise ConfigError("kind", f"unknown model kind {kind!r}")
        kw = {}
        types = {f.name: f.type for f in cls.__dataclass_fields__.values()}
        for key, val in d.items():
            if key not in cls.__dataclass_fields__:
                raise ConfigError(key, "unknown field")
            kw[key] = val
        if kind == "beam":
            if "a" not in d:
                raise ConfigError("a", "missing (beam cubic coefficient)")
            if d["a"] == 0:
                raise ConfigError("a", "beam requires a != 0")
        else:
            if "rho" not in d and "rho_pow" not in d:
                raise ConfigError("rho", "missing (nls smoothing weights)")
            if not d.get("pk"):
                raise ConfigError("pk", "missing (nls Taylor coefficients)")
        for name in ("n", "M", "Lmax", "seed", "max_iters", "grid_per_dim"):
            if name in kw:
                try:
                    kw[name] = int(kw[name])
                except (TypeError, ValueError):
                    raise ConfigError(name, "must be an integer")
        for name in ("fk", "rho", "pk"):
            if name in kw:
                kw[name] = tuple(float(v) for v in kw[name])
        if kw.get("window") is not None:
            win = kw["window"]
            if len(win) != 2 or not win[0] < win[1]:
                raise ConfigError("window", "must be [T_lo, T_hi] with T_lo < T_hi")
            kw["window"] = (float(win[0]), float(win[1]))
        try:
            cfg = cls(**kw)
        except TypeError as e:
            raise ConfigError("<config>", str(e))
        cfg.truncation()    # validates n, M, Lmax, s, aw, eta ranges
        cfg.model_spec()
        return cfg

    @classmethod
    def from_json(cls, text):
        try:
            d = json.loads(text)
        except json.JSONDecodeError as e:
            raise ConfigError("<document>", f"invalid JSON: {e}")
        if not isinstance(d, dict):
            raise ConfigError("<document>", "top level must be an object")
        return cls.from_dict(d)

    @classmethod
    def from_file(cls, path):
        with open(path, "r", encoding="utf-8") as fh:
            return cls.from_json(fh.read())

    def model_spec(self):
        if self.kind == "beam":
            return ModelSpec("beam", m=self.m,
                             nonlinearity_coeffs=(self.a,) + tuple(self.fk))
        rho = self.rho
        if not rho:
            j = np.arange(1, self.n + self.M + 1, dtype=float)
            rho = tuple(j ** self.rho_pow)
        return ModelSpec("nls", nonlinearity_coeffs=tuple(self.pk) or (1.0,),
                         rho=rho, smoothing_d=self.d)

    def truncation(self):
        try:
            return TruncationParams(n=self.n, M=self.M, L_max=self.Lmax,
                                    s=self.s, a_weight=self.aw, eta=self.eta)
        except ValueError as e:
            raise ConfigError("n/M/Lmax/s/aw/eta", str(e))

    def rng(self):
        return np.random.default_rng(self.seed)
