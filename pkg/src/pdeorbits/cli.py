"""Command-line pipeline: spectrum, normal form, scans, solves, verification.

Every subcommand takes a JSON configuration (see config.RunConfig) and
writes CSV/JSON artifacts with full float precision and LF line endings.
Stage failures carry the violated-hypothesis tag in the message
(NR-violation, H2-violation, detA-zero, Omega-hat-zero).  `pipeline`
chains all stages and exits 0 exactly when every acceptance clause holds.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

import numpy as np

from .config import RunConfig, ConfigError
from .model import (frequencies, hamiltonian_polynomial, check_nonresonance,
                    smoothing_order, mode_weights, grid_model)
from .normalform import seminormalize, NRViolation, SeminormalForm
from .resonance import (select_torus, all_bad_sets, measure_audit,
                        SelectionError, DegenerateSlope)
from .rangesolve import solve_range, ContractionConfig, H2Violation, SingularA
from .kernel import (find_critical_points, OrbitEvaluator, RangeEvaluator,
                     integer_kernel_basis, slice_point)
from .orbitsolve import solve_orbit, orbit_trajectory, orbit_action
from .verify import check_theorem_clauses, sup_norm_constants, ClauseReport


def _fmt(x):
    return repr(float(x))


def _write_csv(path, header, rows):
    with open(path, "w", newline="\n", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([_fmt(v) if isinstance(v, float) else v for v in r])


def _out(args, name):
    d = Path(args.out)
    d.mkdir(parents=True, exist_ok=True)
    return d / name


def cmd_spectrum(cfg, args):
    spec, tr = cfg.model_spec(), cfg.truncation()
    fr = frequencies(spec, tr)
    rows = [(j + 1, w) for j, w in enumerate(fr.all())]
    _write_csv(_out(args, "spectrum.csv"), ["mode", "omega"], rows)
    viol = check_nonresonance(fr, tr.n + tr.M)
    vrows = [(" ".join(map(str, k)),
              " ".join(f"{j}:{m}" for j, m in sorted(l.items())))
             for k, l in viol]
    _write_csv(_out(args, "nr_violations.csv"), ["k", "l"], vrows)
    print(f"modes: {tr.n}+{tr.M}, d = {smoothing_order(spec)}, "
          f"(NR) violations: {len(viol)}")
    return 0


def _normal_form(cfg):
    spec, tr = cfg.model_spec(), cfg.truncation()
    fr = frequencies(spec, tr)
    h = hamiltonian_polynomial(spec, tr)
    form = seminormalize(h, fr, resonant_variant=(spec.kind == "nls"))
    return spec, tr, fr, form


def cmd_normalform(cfg, args):
    spec, tr, fr, form = _normal_form(cfg)
    with open(_out(args, "seminormalform.json"), "w", encoding="utf-8") as fh:
        fh.write(form.to_json())
    rows = sorted(form.audit.items())
    _write_csv(_out(args, "nf_audit.csv"), ["quantity", "value"], rows)
    print(f"A diag: {np.diag(form.A)}, detA = {np.linalg.det(form.A):.6e}")
    for k, v in rows:
        print(f"  {k} = {v:.3e}")
    return 0


def cmd_scan_denominators(cfg, args):
    spec, tr, fr, form = _normal_form(cfg)
    sets = all_bad_sets(form.A, form.B, fr.omega, fr.Omega, tr.n, tr.eta,
                        cfg.delta, cfg.tau, window=cfg.window)
    _write_csv(_out(args, "bad_sets.csv"), ["T_lo", "T_hi", "j", "l"],
               [(b.T_lo, b.T_hi, b.j, b.l) for b in sets])
    deltas = [cfg.delta, cfg.delta / 10, cfg.delta / 100]
    table = measure_audit(form.A, form.B, fr.omega, fr.Omega, tr.n, tr.eta,
                          cfg.tau, deltas, window=cfg.window)
    _write_csv(_out(args, "measure_audit.csv"), ["delta", "measure"], table)
    for d, m in table:
        print(f"delta = {d:.2e}: excluded measure = {m:.6e} (ratio {m / d:.3f})")
    return 0


def cmd_select_torus(cfg, args):
    spec, tr, fr, form = _normal_form(cfg)
    sel = select_torus(form.A, form.B, fr.omega, fr.Omega, tr.eta, cfg.delta,
                       cfg.tau, smoothing_order(spec), window=cfg.window,
                       i0_floor_frac=cfg.i0_floor, policy=cfg.policy)
    with open(_out(args, "selection.json"), "w", encoding="utf-8") as fh:
        fh.write(sel.to_json())
    print(f"T = {sel.T!r}, k = {list(sel.k)}, |I0| = {sel.i0_norm:.4f}, "
          f"(H2) margin = {sel.h2_margin:.4e}")
    return 0


def cmd_solve(cfg, args):
    spec, tr, fr, form = _normal_form(cfg)
    sel = select_torus(form.A, form.B, fr.omega, fr.Omega, tr.eta, cfg.delta,
                       cfg.tau, smoothing_order(spec), window=cfg.window,
                       i0_floor_frac=cfg.i0_floor, policy=cfg.policy)
    phi0 = np.array([float(v) for v in args.phi0.split(",")])
    if len(phi0) != tr.n:
        raise ConfigError("phi0", f"need {tr.n} angles")
    ccfg = ContractionConfig(tol=cfg.tol, max_iters=cfg.max_iters,
                             ball_factor=cfg.ball_factor)
    res = solve_range(phi0, sel, form, tr, form.B, config=ccfg)
    with open(_out(args, "zeta_R.json"), "w", encoding="utf-8") as fh:
        fh.write(res.loop.to_json())
    rows = [(i, r, f) for i, (r, f) in
            enumerate(zip(res.residuals, [float("nan")] + res.factors))]
    _write_csv(_out(args, "iterations.csv"),
               ["iter", "residual", "contraction_factor"], rows)
    print(f"converged in {res.iterations} iterations, "
          f"median factor {res.contraction_factor:.4f}")
    return 0


def cmd_kernel_solve(cfg, args):
    spec, tr, fr, form = _normal_form(cfg)
    sel = select_torus(form.A, form.B, fr.omega, fr.Omega, tr.eta, cfg.delta,
                       cfg.tau, smoothing_order(spec), window=cfg.window,
                       i0_floor_frac=cfg.i0_floor, policy=cfg.policy)
    ev = OrbitEvaluator(sel, form, tr, spec, tol=cfg.tol,
                        max_iters=cfg.max_iters)
    out = find_critical_points(sel, form, tr, form.B,
                               grid_per_dim=cfg.grid_per_dim,
                               newton_tol=cfg.newton_tol,
                               orbit_tol=cfg.orbit_tol,
                               cluster_tol=cfg.cluster_tol, evaluator=ev)
    rows = []
    for i, p in enumerate(out.points):
        rows.append([*map(float, p.phi0), p.S_value,
                     float(np.max(np.abs(p.grad))), p.cluster])
        with open(_out(args, f"orbit_{i}.json"), "w", encoding="utf-8") as fh:
            fh.write(json.dumps({"phi0": list(map(float, p.phi0)),
                                 "selection": json.loads(sel.to_json()),
                                 "loop": json.loads(p.loop_ref.to_json())}))
    hdr = [f"phi0_{i + 1}" for i in range(tr.n)] + ["S_value", "grad_max",
                                                    "cluster"]
    _write_csv(_out(args, "critical_points.csv"), hdr, rows)
    tag = "degenerate family" if out.degenerate else "isolated"
    print(f"{len(out.points)} geometrically distinct orbit(s), {tag}; "
          f"landscape amplitude {out.landscape_amplitude:.3e}")
    return 0 if out.enough else 3


def cmd_verify(cfg, args):
    from .loops import Loop
    from .resonance import TorusSelection
    spec, tr = cfg.model_spec(), cfg.truncation()
    with open(args.orbit, "r", encoding="utf-8") as fh:
        bundle = json.load(fh)
    sel = TorusSelection.from_json(json.dumps(bundle["selection"]))
    loop = Loop.from_json(json.dumps(bundle["loop"]))
    phi0 = np.array(bundle["phi0"], float)
    from .orbitsolve import chart_trajectory, default_orbit_grid
    N_t = default_orbit_grid(loop.L, int(np.max(np.abs(sel.k))))
    traj, _, _ = chart_trajectory(loop, phi0, sel, N_t)
    report = check_theorem_clauses(spec, tr, sel, traj,
                                   drift_tol=cfg.drift_tol,
                                   closure_tol=cfg.closure_tol)
    with open(_out(args, "verify_report.json"), "w", encoding="utf-8") as fh:
        fh.write(report.to_json())
    for key, c in report.clauses.items():
        print(f"{key}: {'pass' if c.get('pass', True) else 'FAIL'} {c}")
    return 0 if report.ok() else 4


def run_pipeline(cfg, outdir=None, verbose=True):
    """All stages end to end; returns (ok, report dict)."""
    def log(msg):
        if verbose:
            print(msg)

    report = {}
    spec, tr = cfg.model_spec(), cfg.truncation()
    fr = frequencies(spec, tr)
    viol = check_nonresonance(fr, tr.n + tr.M)
    report["nr_violations"] = len(viol)
    if spec.kind == "beam" and viol:
        raise NRViolation(viol[0][0], viol[0][1], 0.0)
    log(f"[1/6] spectrum ok ((NR) violations: {len(viol)})")

    h = hamiltonian_polynomial(spec, tr)
    form = seminormalize(h, fr, resonant_variant=(spec.kind == "nls"))
    report["nf_audit"] = {k: float(v) for k, v in form.audit.items()}
    audit_ok = max(form.audit.get(f"order{r}_offres_rel", 0.0)
                   for r in (3, 4, 5)) <= 1e-10 \
        and form.audit.get("leftover_rel", 0.0) <= 1e-10
    report["nf_audit_ok"] = bool(audit_ok)
    log(f"[2/6] seminormal form ok (audit max "
        f"{max(form.audit.get(f'order{r}_offres_rel', 0.0) for r in (3, 4, 5)):.2e})")

    sel = select_torus(form.A, form.B, fr.omega, fr.Omega, tr.eta, cfg.delta,
                       cfg.tau, smoothing_order(spec), window=cfg.window,
                       i0_floor_frac=cfg.i0_floor, policy=cfg.policy)
    report["selection"] = json.loads(sel.to_json())
    sel_ok = (sel.resonance_defect() <= 1e-10
              and tr.eta ** -2 - 1e-9 <= sel.T <= 2 * tr.eta ** -2 + 1e-9
              and sel.h2_margin >= sel.delta)
    report["selection_ok"] = bool(sel_ok)
    log(f"[3/6] torus selected: T = {sel.T:.4f}, k = {list(sel.k)}, "
        f"margin = {sel.h2_margin:.3e}")

    ev = OrbitEvaluator(sel, form, tr, spec, tol=cfg.tol,
                        max_iters=cfg.max_iters)
    found = find_critical_points(sel, form, tr, form.B,
                                 grid_per_dim=cfg.grid_per_dim,
                                 newton_tol=cfg.newton_tol,
                                 orbit_tol=cfg.orbit_tol,
                                 cluster_tol=cfg.cluster_tol, evaluator=ev)
    report["orbits_found"] = len(found.points)
    report["kernel_degenerate"] = bool(found.degenerate)
    report["landscape_amplitude"] = float(found.landscape_amplitude)
    log(f"[4/6] kernel solve: {len(found.points)} distinct orbit(s)"
        f"{' (degenerate family)' if found.degenerate else ''}")

    # companion run at eta/2 for the stability clauses
    half = _companion_constants(cfg, spec, form, fr, sel, tr, log)

    from .orbitsolve import chart_trajectory, default_orbit_grid
    clause_reports = []
    all_ok = found.enough and audit_ok and sel_ok
    for i, p in enumerate(found.points[:max(tr.n, 2)]):
        N_t = default_orbit_grid(p.loop_ref.L, int(np.max(np.abs(sel.k))))
        traj, _, _ = chart_trajectory(p.loop_ref, p.phi0, sel, N_t)
        rep = check_theorem_clauses(spec, tr, sel, traj,
                                    drift_tol=cfg.drift_tol,
                                    closure_tol=cfg.closure_tol, halved=half)
        clause_reports.append(rep.clauses)
        all_ok = all_ok and rep.ok()
        log(f"[5/6] orbit {i}: closure = "
            f"{rep.clauses['i_closure']['value']:.3e}, drift = "
            f"{rep.clauses['drift']['value']:.3e}"
            f" -> {'pass' if rep.ok() else 'FAIL'}")
    report["clauses"] = clause_reports
    report["pass"] = bool(all_ok)
    log(f"[6/6] pipeline {'PASS' if all_ok else 'FAIL'}")

    if outdir is not None:
        with open(Path(outdir) / "pipeline_report.json", "w",
                  encoding="utf-8") as fh:
            fh.write(json.dumps(report, indent=1, default=float))
    return all_ok, report


def _companion_constants(cfg, spec, form, fr, sel, tr, log):
    from .model import TruncationParams
    from .orbitsolve import chart_trajectory, default_orbit_grid
    eta2 = tr.eta / 2
    # the period quadruples under eta halving, so the torus winding numbers
    # and with them the harmonic content scale by ~4
    tr2 = TruncationParams(n=tr.n, M=tr.M, L_max=4 * tr.L_max, s=tr.s,
                           a_weight=tr.a_weight, eta=eta2)
    try:
        sel2 = select_torus(form.A, form.B, fr.omega, fr.Omega, eta2,
                            cfg.delta, cfg.tau, smoothing_order(spec),
                            i0_floor_frac=cfg.i0_floor, policy="match_I0",
                            target_I0=sel.I0)
        res2 = solve_orbit(np.zeros(tr.n), sel2, form, tr2, spec, tol=cfg.tol,
                           max_iters=cfg.max_iters)
        N_t = default_orbit_grid(res2.loop.L, int(np.max(np.abs(sel2.k))))
        traj2, _, _ = chart_trajectory(res2.loop, res2.phi0, sel2, N_t)
        consts = sup_norm_constants(tr2, sel2, traj2)
        log(f"      companion eta/2 run: T = {sel2.T:.2f}, "
            f"C_tail = {consts['C_tail']:.4f}")
        return consts
    except Exception as e:     # companion failures only disable the ratios
        log(f"      companion eta/2 run unavailable: {e}")
        return None


def cmd_pipeline(cfg, args):
    ok, report = run_pipeline(cfg, outdir=Path(args.out))
    return 0 if ok else 5


_TAGS = {
    NRViolation: "NR-violation",
    H2Violation: "H2-violation",
    DegenerateSlope: "Omega-hat-zero",
    SingularA: "detA-zero",
}


def main(argv=None):
    ap = argparse.ArgumentParser(prog="pdeorbits",
                                 description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)
    for name, fn in (("spectrum", cmd_spectrum),
                     ("normalform", cmd_normalform),
                     ("scan-denominators", cmd_scan_denominators),
                     ("select-torus", cmd_select_torus),
                     ("solve", cmd_solve),
                     ("kernel-solve", cmd_kernel_solve),
                     ("verify", cmd_verify),
                     ("pipeline", cmd_pipeline)):
        p = sub.add_parser(name)
        p.add_argument("config")
        p.add_argument("--out", default="out")
        if name == "solve":
            p.add_argument("--phi0", required=True,
                           help="comma-separated initial angles")
        if name == "verify":
            p.add_argument("--orbit", required=True)
        p.set_defaults(func=fn)
    args = ap.parse_args(argv)
    try:
        cfg = RunConfig.from_file(args.config)
        return args.func(cfg, args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 2
    except tuple(_TAGS) as e:
        tag = next(t for c, t in _TAGS.items() if isinstance(e, c))
        print(f"stage failure [{tag}]: {e}", file=sys.stderr)
        return 2
    except SelectionError as e:
        print(f"stage failure [selection]: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
