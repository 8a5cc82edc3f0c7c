"""Command line driver: ``vnls groundstate|spectrum|evolve|track|fgr|report --config FILE``.

Every command validates the whole configuration first, writes its artifacts
into the run directory with the configuration hash embedded, records a
``<command>.run.json`` summary and merges its hypothesis verdicts into
``ledger.json``.  A command whose summary already carries the current hash
is skipped unless ``--force`` is given.

Exit codes: 0 success, 2 validation error, 3 numerical failure,
4 hypothesis-check failure.
"""
from __future__ import annotations

import argparse
import json
import sys
import warnings
from functools import cached_property
from pathlib import Path

import numpy as np

from . import __version__
from .config import ConfigError, config_hash, load_config
from .evolution import (BlowUpError, ConstraintError, EvolutionConfig, PerturbationSpec, Sponge, evolve,
                        prepare_initial_data)
from .fgr import (BelowEdgeError, NonStrictError, check_h9, fgr_decay_prediction, leading_source_coefficients,
                  radiation_reentry_time, resonant_sets)
from .fields import Grid3, RadialGrid, load_field, save_field
from .groundstate import (NoGroundStateError, ProfileFamily, ToleranceError, build_family, check_h4, residual_norm,
                          save_profile, solve_ground_state, virial_balances)
from .linearization import (SpectrumError, build_operator, check_h6_h7_h8, count_negative_eigenvalues,
                            discrete_ground_state, generalized_kernel_dimension, grid_modes, internal_modes)
from .modulation import BasisError, DecompositionError, LiftedFamily, TangentBasis, fit_decay, track
from .symmetry import SolitonParams, nonlinearity_from_config

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_HYPOTHESIS = 0, 2, 3, 4
COMMANDS = ("groundstate", "spectrum", "evolve", "track", "fgr", "report")
NUMERICAL_ERRORS = (NoGroundStateError, ToleranceError, SpectrumError, BlowUpError, ConstraintError,
                    DecompositionError, BasisError, BelowEdgeError, NonStrictError, np.linalg.LinAlgError)


class RunError(RuntimeError):
    """Failure with a specific exit code."""

    def __init__(self, message: str, code: int):
        super().__init__(message)
        self.code = code


def _dump(path: Path, data: dict) -> None:
    path.write_text(json.dumps(data, indent=2, sort_keys=True, default=_json_default) + "\n")


def _json_default(x):
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, (np.floating,)):
        return float(x)
    if isinstance(x, np.ndarray):
        return x.tolist()
    if isinstance(x, complex):
        return [x.real, x.imag]
    raise TypeError(f"not serializable: {type(x).__name__}")


def _entry(status: str, evidence, **margins) -> dict:
    return {"status": status, "evidence": list(evidence), "margins": margins}


# --- shared computations -------------------------------------------------------

class Context:
    """Lazily built objects shared by the commands of one invocation."""

    def __init__(self, cfg: dict, out: Path):
        self.cfg = cfg
        self.out = out
        self.hash = config_hash(cfg)
        self.nl = nonlinearity_from_config(cfg["nonlinearity"])
        self.omega0 = float(cfg["soliton"]["omega0"])

    @property
    def header(self) -> dict:
        return {"config_hash": self.hash, "vnls_version": __version__}

    @cached_property
    def grid(self) -> Grid3:
        return Grid3(self.cfg["grid"]["n"], float(self.cfg["grid"]["box_length"]))

    @cached_property
    def radial_grid(self) -> RadialGrid:
        rc = self.cfg["radial"]
        return RadialGrid(float(rc["r_max"]), int(rc["n_points"]))

    @cached_property
    def profile(self):
        return solve_ground_state(self.omega0, self.nl, grid=self.radial_grid)

    @cached_property
    def discrete_profile(self):
        return discrete_ground_state(self.profile, self.omega0, self.nl)

    @cached_property
    def spectrum(self):
        return internal_modes(self.discrete_profile, self.omega0, self.nl, ell_max=self.cfg["radial"]["ell_max"])

    @cached_property
    def lifted(self) -> LiftedFamily:
        sc = self.cfg["soliton"]
        hw = float(sc["family_halfwidth"])
        fam = ProfileFamily(self.omega0 * (1 - hw), self.omega0 * (1 + hw), self.nl, n_cheb=int(sc["n_cheb"]))
        return LiftedFamily(fam, self.grid)

    @cached_property
    def params0(self) -> SolitonParams:
        return self.lifted.params(self.omega0)

    @cached_property
    def modes(self) -> list:
        phi = self.lifted.phi(self.omega0)
        return grid_modes(self.spectrum, phi, self.omega0, self.nl, self.grid)

    @property
    def first_block(self) -> list:
        return [m for m in self.modes if m.block == "first"]


# --- commands -----------------------------------------------------------------

def cmd_groundstate(ctx: Context) -> dict:
    out, cfg = ctx.out, ctx.cfg
    prof = ctx.profile
    res = residual_norm(prof, ctx.omega0, ctx.nl)
    nrm = float(np.sqrt(prof.l2_norm_sq()))
    vir = virial_balances(prof, ctx.omega0, ctx.nl)
    save_profile(out / "profile.csv", prof, {**ctx.header, "omega": ctx.omega0, "residual": res})
    fs = cfg["family_scan"]
    fam = build_family((fs["omega_min"], fs["omega_max"]), fs["n_samples"], ctx.nl)
    h4 = check_h4(fam)
    # slope at the operating frequency by a centered difference
    d = 1e-3 * ctx.omega0
    m_hi = solve_ground_state(ctx.omega0 + d, ctx.nl, grid=ctx.radial_grid).l2_norm_sq()
    m_lo = solve_ground_state(ctx.omega0 - d, ctx.nl, grid=ctx.radial_grid).l2_norm_sq()
    slope0 = (m_hi - m_lo) / (2 * d)
    with (out / "mass_curve.csv").open("w") as fh:
        fh.write(f"# config_hash: {ctx.hash}\nomega,mass,slope\n")
        for o, m, s in zip(h4["omegas"], h4["masses"], h4["slopes"]):
            fh.write(f"{o!r},{m!r},{s!r}\n")
    _dump(out / "h4.json", {**ctx.header, **h4, "slope_at_omega0": slope0, "omega0": ctx.omega0,
                            "failed_samples": fam.failed})
    chk = ctx.nl.check()
    h1 = _entry("pass" if chk["H1"] and chk["B_matches_beta"] else "fail", ["groundstate.run.json"],
                beta0=chk["beta0"], B0=chk["B0"], antiderivative_error=chk["antiderivative_error"])
    # the growth bound is sharp only below the energy-critical power; report it without gating
    h2 = _entry("pass" if chk["H2"] else "flagged", ["groundstate.run.json"], alpha_min=chk["growth_exponent_alpha_min"])
    ok3 = res < 1e-8 * nrm
    h3 = _entry("pass" if ok3 else "fail", ["profile.csv"], residual_rel=res / nrm, virial=list(vir))
    h4e = _entry("pass" if slope0 > 0 else "fail", ["h4.json", "mass_curve.csv"], slope_at_omega0=slope0,
                 window=h4["window"], min_slope_in_window=h4["min_slope_in_window"])
    return {
        "summary": {"omega0": ctx.omega0, "residual": res, "norm": nrm, "virial": list(vir),
                    "phi0": prof.origin_value, "mass": prof.l2_norm_sq(), "slope_at_omega0": slope0,
                    "h4_window": h4["window"], "nonlinearity_check": chk},
        "ledger": {"H1": h1, "H2": h2, "H3": h3, "H4": h4e},
        "outputs": ["profile.csv", "mass_curve.csv", "h4.json"],
    }


def spectrum_ledger(spec, checks: dict, kernel_dim: int, neg: dict) -> dict:
    """Ledger entries (H5)-(H8) from a spectrum and its checks."""
    ev = ["spectrum.json"]
    h5 = neg.get(0) == 1 and all(neg[k] == 0 for k in neg if k > 0) and kernel_dim == 10
    return {
        "H5": _entry("pass" if h5 else "fail", ev, negative_counts={str(k): v for k, v in neg.items()},
                     kernel_dimension=kernel_dim),
        "H6": _entry("pass" if checks["H6"]["pass"] else "fail", ev, max_residual=checks["H6"]["max_residual"]),
        "H7": _entry("pass" if checks["H7"]["pass"] else "fail", ev, e=checks["H7"]["e"], n_modes=len(spec.modes),
                     edge_gap=float(spec.omega0 - max(checks["H7"]["e"])) if checks["H7"]["e"] else None),
        "H8": _entry("pass" if checks["H8"]["pass"] else "fail", ev, bigN=checks["H8"]["bigN"],
                     offending_mu=checks["H8"]["offending_mu"]),
    }


def cmd_spectrum(ctx: Context) -> dict:
    spec = ctx.spectrum
    prof = ctx.discrete_profile
    kdim, detail = generalized_kernel_dimension(prof, ctx.omega0, ctx.nl, return_detail=True)
    neg = {ell: count_negative_eigenvalues(build_operator(prof, ctx.omega0, ell, "Lplus", ctx.nl))
           for ell in (0, 1, 2)}
    checks = check_h6_h7_h8(spec)
    modes = ctx.modes
    listing = [{"index": i, "e": m.e, "block": m.block, "ell": m.ell, "m": m.m, "residual": m.residual}
               for i, m in enumerate(modes)]
    data = {**ctx.header, **spec.to_json(), "kernel_dimension": kdim, "kernel_detail": detail,
            "lplus_negative": {str(k): v for k, v in neg.items()}, "grid_modes": listing, "checks": checks}
    _dump(ctx.out / "spectrum.json", data)
    spec.save_eigenfunctions(ctx.out / "eigenfunctions.csv")
    return {
        "summary": {"e": spec.distinct_e.tolist(), "kernel_dimension": kdim, "n_grid_modes": len(modes),
                    "lplus_negative": {str(k): v for k, v in neg.items()}},
        "ledger": spectrum_ledger(spec, checks, kdim, neg),
        "outputs": ["spectrum.json", "eigenfunctions.csv"],
    }


def _perturbation(ctx: Context) -> PerturbationSpec:
    pc = ctx.cfg["perturbation"]
    kicks = {int(k["mode"]): complex(k.get("re", 0.0), k.get("im", 0.0)) for k in pc["kicks"]}
    return PerturbationSpec(kicks, float(pc["radiation_amplitude"]), float(pc["radiation_width"]), int(ctx.cfg["seed"]))


def _evolution_config(cfg: dict) -> EvolutionConfig:
    ec = cfg["evolution"]
    sponge = Sponge(float(ec["sponge_strength"]), float(ec["sponge_width"])) if ec["sponge_strength"] > 0 else None
    return EvolutionConfig(float(ec["dt"]), float(ec["t_final"]), int(ec["output_every"]), sponge=sponge)


def cmd_evolve(ctx: Context, resume: bool = True) -> dict:
    out, cfg = ctx.out, ctx.cfg
    pert = _perturbation(ctx)
    modes = ctx.modes if pert.kicks else []
    prep = prepare_initial_data(ctx.params0, pert, modes, ctx.lifted)
    fdir = out / "frames"
    fdir.mkdir(exist_ok=True)
    ck = out / "checkpoint"
    ck.mkdir(exist_ok=True)
    owner = ck / "owner.json"
    resume = resume and (ck / "state.json").exists() and owner.exists() \
        and json.loads(owner.read_text()).get("config_hash") == ctx.hash
    if not resume:
        (ck / "state.json").unlink(missing_ok=True)
        for f in fdir.glob("frame_*"):
            f.unlink()
        _dump(owner, ctx.header)
    stride = int(cfg["evolution"]["snapshot_every"])
    count = {"n": 0}
    index_path = fdir / "index.json"
    index = json.loads(index_path.read_text())["frames"] if resume and index_path.exists() else []

    def snapshot(t, u):
        k = count["n"]
        count["n"] += 1
        if k % stride or any(abs(f["t"] - t) < 1e-12 for f in index):
            return
        name = f"frame_{len(index):05d}.bin"
        digest = save_field(fdir / name, u, {**ctx.header, "t": t})
        index.append({"t": t, "file": name, "sha256": digest})
        _dump(index_path, {**ctx.header, "frames": index})

    ecfg = _evolution_config(cfg)
    if resume:
        done = json.loads((ck / "state.json").read_text())["steps_done"]
        count["n"] = done // ecfg.output_every + 1
    try:
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always")
            traj = evolve(prep.u0, ecfg, ctx.nl, observers=(snapshot,), checkpoint_dir=ck,
                          checkpoint_every=int(cfg["evolution"]["checkpoint_every"]), resume=resume)
    except BlowUpError as exc:
        if exc.last_field is not None:
            save_field(out / "blowup_last_good.bin", exc.last_field, {**ctx.header, "t": exc.last_time})
        raise
    traj.write_invariants(out / "invariants.csv", ctx.header)
    final_hash = save_field(out / "final.bin", traj.final, {**ctx.header, "t": traj.times[-1]})
    drift = traj.drift()
    p = prep.params
    _dump(out / "initial_data.json", {**ctx.header, "omega": p.omega, "v": p.v.tolist(), "p4": p.p4,
                                      "p0": ctx.params0.p.tolist(), "adjusted": prep.adjusted,
                                      "constraint_residual": prep.residual.tolist(),
                                      "kicks": {str(k): [z.real, z.imag] for k, z in pert.kicks.items()}})
    _dump(out / "trajectory.json", {**ctx.header, "times": traj.times, "hashes": traj.hashes,
                                    "final_sha256": final_hash, "drift": drift,
                                    "warnings": [str(w.message) for w in caught]})
    return {
        "summary": {"t_final": traj.times[-1], "drift": drift, "final_sha256": final_hash,
                    "n_frames": len(index), "constraint_newton_iterations": prep.iterations},
        "ledger": {},
        "outputs": ["invariants.csv", "final.bin", "initial_data.json", "trajectory.json", "frames/index.json"],
    }


def trusted_window(ctx: Context) -> float:
    """Time before outgoing radiation re-enters the periodic box (infinite with a sponge)."""
    if ctx.cfg["evolution"]["sponge_strength"] > 0 or not ctx.first_block:
        return float("inf")
    e_min = min(m.e for m in ctx.first_block)
    return radiation_reentry_time(ctx.grid.box_length, (ctx.spectrum.bigN + 1) * e_min, ctx.omega0)


def _frames(out: Path):
    index = json.loads((out / "frames" / "index.json").read_text())["frames"]
    for f in index:
        yield f["t"], load_field(out / "frames" / f["file"])


def cmd_track(ctx: Context) -> dict:
    out = ctx.out
    if not (out / "frames" / "index.json").exists():
        raise RunError("track: no stored trajectory (run 'evolve' first)", EXIT_CONFIG)
    init = json.loads((out / "initial_data.json").read_text())
    p0 = SolitonParams(float(init["omega"]), np.array(init["v"]), float(init["p4"]))
    trusted = trusted_window(ctx)
    series = track(_frames(out), ctx.lifted, ctx.modes, p0, trusted_until=trusted)
    series.to_csv(out / "stability.csv", ctx.header)
    w = series.window()
    fits = fit_decay(series.t[w], series.lyapunov[w]) if np.any(w) else {"n": 0}
    lyap = series.lyapunov[w]
    trend = None
    if lyap.size >= 2:
        trend = "decreasing" if lyap[-1] < lyap[0] else ("flat" if lyap[-1] == lyap[0] else "increasing")
    om = series.omega[w]
    data = {**ctx.header, "trusted_until": trusted, "failures": series.failures, "fits": fits, "trend": trend,
            "omega_plus": series.omega_plus() if om.size else None,
            "omega_drift": float(om[-1] - om[0]) if om.size else None,
            "max_certificate": float(series.certificate.max()) if series.certificate.size else None}
    _dump(out / "track.json", data)
    if series.failures:
        raise RunError(f"track: decomposition failed at t={series.failures[0]['t']:.6g}: "
                       f"{series.failures[0]['error']}", EXIT_NUMERIC)
    return {"summary": {k: data[k] for k in ("trusted_until", "trend", "omega_plus", "max_certificate")},
            "ledger": {}, "outputs": ["stability.csv", "track.json"]}


def cmd_fgr(ctx: Context) -> dict:
    out, fc = ctx.out, ctx.cfg["fgr"]
    if not ctx.spectrum.modes:
        _dump(out / "fgr.json", {**ctx.header, "vacuous": True, "reason": "no internal modes"})
        return {"summary": {"vacuous": True}, "ledger": {}, "vacuous": ["H9"], "outputs": ["fgr.json"]}
    first = ctx.first_block
    notes = []
    if len(first) < len(ctx.modes):
        notes.append("second-block modes excluded: the constraint keeps the second component identically zero")
    if not first:
        raise RunError("fgr: internal modes exist but none in the first block", EXIT_NUMERIC)
    sets = resonant_sets([m.e for m in first], ctx.omega0)
    Phi = ctx.lifted.soliton(ctx.params0)
    basis = TangentBasis(ctx.params0, ctx.lifted)
    src = leading_source_coefficients(Phi, first, ctx.nl, sets, basis=basis)
    rep = check_h9(src, ctx.omega0, ctx.grid, n_theta=int(fc["n_theta"]), kappa_tol=float(fc["kappa_tol"]),
                   delta_rel=float(fc["delta_rel"]), label="first block")
    rep.notes += notes
    first_idx = [i for i, m in enumerate(ctx.modes) if m.block == "first"]
    kicks = _perturbation(ctx).kicks
    z0 = np.array([kicks.get(i, 0j) for i in first_idx], complex)
    pred = fgr_decay_prediction(rep, z0) if rep.strict else None
    unit = np.zeros(len(first), complex)
    unit[0] = 1.0
    gamma = -fgr_decay_prediction(rep, unit) / first[0].e if rep.strict else None
    _dump(out / "fgr.json", {**ctx.header, **rep.to_json(), "resonant_sets": sets.to_json(),
                             "prediction_d_dt_lyapunov": pred, "gamma_single_copy": gamma})
    h9 = _entry("pass" if rep.strict else "fail", ["fgr.json"], margin=rep.margin, delta_fgr=rep.delta_fgr,
                positive_excursion=rep.positive_excursion)
    return {"summary": {"strict": rep.strict, "margin": rep.margin, "delta_fgr": rep.delta_fgr,
                        "prediction_d_dt_lyapunov": pred, "gamma_single_copy": gamma},
            "ledger": {"H9": h9}, "outputs": ["fgr.json"]}


SECTIONS = ("groundstate", "spectrum", "evolve", "track", "fgr")


def cmd_report(ctx: Context) -> dict:
    out = ctx.out
    present = {s: json.loads((out / f"{s}.run.json").read_text()) for s in SECTIONS if (out / f"{s}.run.json").exists()}
    if not present:
        raise RunError(f"report: no command outputs in {out}", EXIT_CONFIG)
    ledger = _read_ledger(out)
    report = {**ctx.header, "sections": {s: present.get(s, "missing") for s in SECTIONS}, "ledger": ledger}
    _dump(out / "report.json", report)
    lines = [f"# vnls run report", "", f"- config hash: `{ctx.hash}`", f"- vnls version: {__version__}", "",
             "## Hypotheses", "", "| hypothesis | status | evidence |", "|---|---|---|"]
    for h, e in sorted(ledger.get("hypotheses", {}).items()):
        lines.append(f"| {h} | {e['status']} | {', '.join(e['evidence'])} |")
    for h in ledger.get("vacuous", []):
        lines.append(f"| {h} | vacuous | no internal modes |")
    for s in SECTIONS:
        lines += ["", f"## {s}", ""]
        if s not in present:
            lines.append("missing")
            continue
        for k, v in sorted(present[s].get("summary", {}).items()):
            lines.append(f"- {k}: {json.dumps(v, default=_json_default)}")
    (out / "report.md").write_text("\n".join(lines) + "\n")
    return {"summary": {"sections": sorted(present)}, "ledger": {}, "outputs": ["report.json", "report.md"]}


# --- ledger and dispatch ----------------------------------------------------------

def _read_ledger(out: Path) -> dict:
    path = out / "ledger.json"
    return json.loads(path.read_text()) if path.exists() else {}


def update_ledger(out: Path, header: dict, entries: dict, vacuous=()) -> dict:
    """Merge ``entries`` into ``ledger.json``; the (H9) entry needs (H7) to have found modes."""
    led = _read_ledger(out)
    if led.get("config_hash") not in (None, header["config_hash"]):
        led = {}
    hyp = led.get("hypotheses", {})
    hyp.update(entries)
    vac = sorted(set(led.get("vacuous", [])) | set(vacuous))
    if "H9" in vac:
        hyp.pop("H9", None)
    if "H9" in hyp and not hyp.get("H7", {}).get("margins", {}).get("n_modes", 1):
        hyp.pop("H9")
    led = {**header, "hypotheses": dict(sorted(hyp.items())), "vacuous": vac}
    _dump(out / "ledger.json", led)
    return led


HANDLERS = {"groundstate": cmd_groundstate, "spectrum": cmd_spectrum, "evolve": cmd_evolve,
            "track": cmd_track, "fgr": cmd_fgr, "report": cmd_report}


def run(command: str, config_path, out=None, force: bool = False) -> int:
    """Run one command; return the exit code."""
    try:
        cfg = load_config(config_path)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    out = Path(out if out is not None else cfg["output_dir"])
    out.mkdir(parents=True, exist_ok=True)
    ctx = Context(cfg, out)
    meta_path = out / f"{command}.run.json"
    if command != "report" and not force and meta_path.exists():
        old = json.loads(meta_path.read_text())
        if old.get("config_hash") == ctx.hash:
            print(f"{command}: up to date ({meta_path})")
            return int(old.get("exit_code", EXIT_OK))
    try:
        result = HANDLERS[command](ctx)
    except RunError as exc:
        print(f"{command}: {exc}", file=sys.stderr)
        return exc.code
    except NUMERICAL_ERRORS as exc:
        print(f"{command}: numerical failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        _dump(out / f"{command}.failed.json", {**ctx.header, "error": type(exc).__name__, "message": str(exc)})
        return EXIT_NUMERIC
    entries = result.get("ledger", {})
    if entries or result.get("vacuous"):
        update_ledger(out, ctx.header, entries, result.get("vacuous", ()))
    code = EXIT_HYPOTHESIS if any(e["status"] == "fail" for e in entries.values()) else EXIT_OK
    _dump(meta_path, {**ctx.header, "command": command, "exit_code": code, "summary": result["summary"],
                      "outputs": result["outputs"], "ledger": entries})
    print(f"{command}: {'ok' if code == EXIT_OK else 'hypothesis check failed'} -> {out}")
    return code


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(prog="vnls", description=__doc__.splitlines()[0])
    ap.add_argument("command", choices=COMMANDS)
    ap.add_argument("--config", required=True, help="TOML run configuration")
    ap.add_argument("--out", default=None, help="run directory (overrides output_dir)")
    ap.add_argument("--force", action="store_true", help="recompute even if outputs are up to date")
    ap.add_argument("--version", action="version", version=f"vnls {__version__}")
    args = ap.parse_args(argv)
    return run(args.command, args.config, args.out, args.force)


if __name__ == "__main__":
    sys.exit(main())
