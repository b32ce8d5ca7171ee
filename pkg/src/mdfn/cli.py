"""Command-line interface: ``mdfn {simulate,sweep,optimize,benchmark,cycle}``.

Exit codes: 0 success, 2 usage error, 3 configuration error, 4 solver
failure, 5 infeasible study (equalisation target out of reach).
"""
from __future__ import annotations

import argparse
import hashlib
import json
import logging
import sys
from dataclasses import replace

from . import __version__, presets, studio
from .config import ConfigError, RunConfig, StudyConfig, load_config, preset_config
from .electrochem import ConfigurationError
from .io import ResultBundle, output_directory, step_summary, write_result
from .protocol import (
    SPECIFIC_RATE,
    Protocol,
    charge,
    current_for_capacity,
    cycling_protocol,
    discharge,
    energy_density,
    nominal_1c_current,
    run_protocol,
)
from .solver import SolverError

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_CONFIG = 3
EXIT_SOLVER = 4
EXIT_INFEASIBLE = 5

BENCHMARK_SET = ("default-bilayer", "nmc-only-72um", "lfp-only-113um")
UM = 1e-6

def _parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    src = common.add_mutually_exclusive_group()
    src.add_argument("--config", help="YAML run configuration")
    src.add_argument("--preset", choices=sorted(presets.DESIGNS), help="built-in design instead of a config file")
    common.add_argument("--c-rate", type=float, help="C-rate of the constant-current step or study")
    common.add_argument("--direction", choices=("charge", "discharge"), default="charge")
    common.add_argument("--out", help="output directory (default $MDFN_OUTPUT_DIR/<command>)")
    common.add_argument("--threads", type=int, default=1, help="worker processes for sweeps")
    common.add_argument("--snapshot-count", type=int, help="spatial snapshots per cc step")

    p = argparse.ArgumentParser(prog="mdfn", description="Multilayer DFN half-cell simulator.")
    p.add_argument("--version", action="version", version=f"mdfn {__version__}")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("simulate", parents=[common], help="one constant-current step or the configured protocol")
    sub.add_parser("sweep", parents=[common], help="sensitivity, thickness, ratio or mass sweep")
    sub.add_parser("optimize", parents=[common], help="staged coordinate search")
    sub.add_parser("benchmark", parents=[common], help="equalise a design set and compare at a C-rate")
    cyc = sub.add_parser("cycle", parents=[common], help="multi-step cycling protocol")
    cyc.add_argument("--protocol", help="cycling preset name (overrides the config's protocol)")
    return p


def _load(args) -> RunConfig:
    cfg = load_config(args.config) if args.config else preset_config(args.preset or "default-bilayer")
    if args.snapshot_count is not None:
        if args.snapshot_count < 1:
            raise ConfigError("--snapshot-count must be at least 1")
        cfg = replace(cfg, output=replace(cfg.output, snapshot_count=args.snapshot_count))
    if args.c_rate is not None and not args.c_rate > 0:
        raise ConfigError("--c-rate must be positive")
    if args.threads < 1:
        raise ConfigError("--threads must be at least 1")
    return cfg


def _run_hash(cfg: RunConfig, args) -> str:
    doc = {"config": cfg.to_dict(), "command": args.command, "c_rate": args.c_rate,
           "direction": args.direction, "protocol": getattr(args, "protocol", None)}
    return hashlib.sha256(json.dumps(doc, sort_keys=True, default=str).encode()).hexdigest()[:16]


def _specific(design, cfg):
    return studio.cached_specific_capacity(design, cfg.solver)


# ---- commands ----------------------------------------------------------------

def cmd_simulate(cfg: RunConfig, args, bundle: ResultBundle) -> tuple[int, dict]:
    d = cfg.design
    snaps = cfg.output.snapshot_count
    if args.c_rate is None and cfg.protocol is not None:
        return _run_and_write(cfg, cfg.protocol, bundle)
    rate = args.c_rate if args.c_rate is not None else 1.0
    step = charge(rate) if args.direction == "charge" else discharge(rate)
    if rate == SPECIFIC_RATE and args.direction == "charge":
        # this run is the specific-capacity definition itself
        res = run_protocol(d, Protocol((step,), nominal_1c_current(d)), cfg.solver, snaps)
        specific = res.capacity
    else:
        specific = _specific(d, cfg)
        I_1C = cfg.protocol.I_1C if cfg.protocol and cfg.protocol.I_1C else current_for_capacity(specific, d.area)
        res = run_protocol(d, Protocol((step,), I_1C), cfg.solver, snaps)
    write_result(bundle, res)
    s = res.last
    row = {
        "design": d.name, "direction": args.direction, "c_rate": rate,
        "specific_capacity_mAh_cm2": specific, "I_1C_A": abs(s.current) / rate,
        "achieved_capacity_mAh_cm2": s.capacity, "retention": s.capacity / specific if specific else float("nan"),
        "energy_density_Wh_g": energy_density(s, d.cathode_mass()) if len(s.t) > 1 else 0.0,
        "cathode_mass_g": d.cathode_mass(), "time_to_cutoff_min": s.duration / 60.0,
        "termination": s.termination, "min_c_e_mol_m3": s.min_c_e, "min_c_e_x_m": s.min_c_e_x,
        "depletion_flag": s.depletion is not None,
    }
    bundle.write_table("summary.csv", [row])
    code = EXIT_SOLVER if res.failure else EXIT_OK
    return code, {"design": d.name, "result": row, "steps": [step_summary(x) for x in res.steps],
                  "failure": res.failure}


def _run_and_write(cfg: RunConfig, protocol: Protocol, bundle: ResultBundle):
    d = cfg.design
    if protocol.I_1C is None:
        protocol = replace(protocol, I_1C=current_for_capacity(_specific(d, cfg), d.area))
    res = run_protocol(d, protocol, cfg.solver, cfg.output.snapshot_count)
    write_result(bundle, res)
    steps = [step_summary(s) for s in res.steps]
    bundle.write_table("steps.csv", [{k: v for k, v in s.items() if k != "depletion"} for s in steps])
    code = EXIT_SOLVER if res.failure else EXIT_OK
    return code, {"design": d.name, "protocol": protocol.name, "I_1C_A": protocol.I_1C,
                  "capacities_mAh_cm2": res.capacities, "steps": steps, "failure": res.failure}


def cmd_cycle(cfg: RunConfig, args, bundle: ResultBundle):
    if getattr(args, "protocol", None):
        try:
            protocol = cycling_protocol(args.protocol)
        except KeyError as exc:
            raise ConfigError(str(exc.args[0])) from None
    elif cfg.protocol is not None:
        protocol = cfg.protocol
    else:
        raise ConfigError("cycle needs a protocol section or --protocol")
    return _run_and_write(cfg, protocol, bundle)


def _study_code(cases) -> int:
    if any(c.status == "failed" for c in cases):
        return EXIT_SOLVER
    if any(c.status == "infeasible" for c in cases):
        return EXIT_INFEASIBLE
    return EXIT_OK


def _case_summary(c) -> dict:
    return {"case_id": c.case_id, "status": c.status, "message": c.message or None,
            "achieved_capacity_mAh_cm2": c.capacity, "retention": c.retention,
            "specific_capacity_mAh_cm2": c.specific_capacity}


def cmd_sweep(cfg: RunConfig, args, bundle: ResultBundle):
    s = cfg.study
    if s is None or s.kind not in ("sensitivity", "thickness", "ratio", "mass"):
        raise ConfigError("sweep needs a study section with kind sensitivity, thickness, ratio or mass")
    rate = args.c_rate if args.c_rate is not None else s.c_rate
    w, d, sc = args.threads, cfg.design, cfg.solver
    best = None
    if s.kind == "sensitivity":
        space = studio.DesignSpace(d, target=s.target)
        cases = studio.sensitivity_sweep(space, list(s.cases), rate, sc, w)
        best = studio.best_case(cases, "retention")
    elif s.kind == "thickness":
        r = studio.thickness_sweep(d, s.totals, s.ratio, rate, sc, w)
        cases, best = r.cases, r.best
    elif s.kind == "ratio":
        r = studio.ratio_sweep(d, s.fractions, s.target, rate, sc, w, s.single_layer_fallback)
        cases, best = r.cases, r.best
    else:
        designs = [presets.design_preset(n) for n in s.designs] or [d]
        cases = studio.mass_sweep(designs, rate, sc, w)
        best = studio.best_case(cases, "capacity")
    bundle.write_table("cases.csv", [c.row() for c in cases])
    summary = {"study": s.kind, "c_rate": rate, "target_mAh_cm2": s.target,
               "best_case": best.case_id if best else None, "cases": [_case_summary(c) for c in cases]}
    return _study_code(cases), summary


def design_parameters(design) -> dict:
    out = {}
    for k, layer in enumerate(design.electrodes, start=1):
        out.update({f"L_p{k}_um": layer.L / UM, f"eps_e_p{k}": layer.eps_e,
                    f"eps_cbd_p{k}": layer.eps_cbd, f"b_p{k}": layer.b})
    return out


def cmd_optimize(cfg: RunConfig, args, bundle: ResultBundle):
    s = cfg.study
    if s is None:
        # the reference staged search over the published candidate grids
        s = StudyConfig(kind="optimize", grids=tuple(studio.DEFAULT_GRIDS.items()),
                        totals=studio.THICKNESS_GRID, fractions=studio.RATIO_GRID)
    elif s.kind != "optimize":
        raise ConfigError(f"optimize needs study.kind optimize, got {s.kind!r}")
    rate = args.c_rate if args.c_rate is not None else s.c_rate
    space = studio.DesignSpace(cfg.design, dict(s.grids), s.target)
    res = studio.optimize(space, rate, cfg.solver, list(s.totals) or None, list(s.fractions) or None,
                          args.threads, s.budget)
    bundle.write_table("trace.csv", res.rows())
    params = design_parameters(res.design)
    bundle.write_table("optimum.csv", [{**params, **(res.metrics.row() if res.metrics else {})}])
    summary = {"c_rate": rate, "objective_retention": res.objective, "design": params,
               "cases_evaluated": len(res.trace), "warnings": res.warnings}
    if res.metrics is not None:
        summary["metrics"] = {k: v for k, v in res.metrics.row().items() if not isinstance(v, dict)}
    return EXIT_OK, summary


def cmd_benchmark(cfg: RunConfig, args, bundle: ResultBundle):
    s = cfg.study
    names = s.designs if s is not None and s.designs else BENCHMARK_SET
    rate = args.c_rate if args.c_rate is not None else (s.c_rate if s is not None else 3.0)
    designs = [presets.design_preset(n) for n in names]
    target = s.target if s is not None and s.target is not None else _specific(designs[0], cfg)
    jobs = [(n, {}, d, target, None, rate, cfg.solver) for n, d in zip(names, designs)]
    cases = studio.run_cases(jobs, args.threads)
    rows = []
    for c in cases:
        row = {"design": c.case_id, "status": c.status, "message": c.message,
               "specific_capacity_mAh_cm2": c.specific_capacity, "I_1C_mA": c.I_1C * 1e3}
        if c.design is not None:
            row.update({f"L_p{k}_um": layer.L / UM for k, layer in enumerate(c.design.electrodes, start=1)})
            row["chemistries"] = "/".join(layer.chemistry.name for layer in c.design.electrodes)
        if c.metrics is not None:
            m = c.metrics
            row.update({"achieved_capacity_mAh_cm2": m.achieved_capacity, "retention": m.retention,
                        "energy_density_Wh_g": m.energy_density, "cathode_mass_mg": m.cathode_mass * 1e3,
                        "time_to_cutoff_min": m.time_to_cutoff, "termination": m.termination})
        rows.append(row)
    bundle.write_table("benchmark.csv", rows)
    summary = {"c_rate": rate, "target_mAh_cm2": target, "designs": [_case_summary(c) for c in cases]}
    return _study_code(cases), summary


COMMANDS = {"simulate": cmd_simulate, "sweep": cmd_sweep, "optimize": cmd_optimize,
            "benchmark": cmd_benchmark, "cycle": cmd_cycle}


def main(argv=None) -> int:
    parser = _parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse exits 2 on usage errors, 0 on --help
        return int(exc.code or 0)
    console = logging.StreamHandler()
    console.setLevel(logging.INFO if args.verbose else logging.WARNING)
    console.setFormatter(logging.Formatter("%(levelname)s %(name)s: %(message)s"))
    logging.getLogger("mdfn").addHandler(console)
    try:
        cfg = _load(args)
        out = output_directory(args.out, cfg.output.directory, args.command)
    except (ConfigError, ConfigurationError) as exc:
        print(f"mdfn: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    bundle = ResultBundle(out, _run_hash(cfg, args), args.command)
    try:
        try:
            code, summary = COMMANDS[args.command](cfg, args, bundle)
        except (ConfigError, ConfigurationError) as exc:
            print(f"mdfn: configuration error: {exc}", file=sys.stderr)
            code, summary = EXIT_CONFIG, {"error": {"category": "config", "message": str(exc)}}
        except studio.EqualizationError as exc:
            print(f"mdfn: study infeasible: {exc}", file=sys.stderr)
            code, summary = EXIT_INFEASIBLE, {"error": {"category": "infeasible", "message": str(exc)}}
        except SolverError as exc:
            print(f"mdfn: solver failure: {exc}", file=sys.stderr)
            code, summary = EXIT_SOLVER, {"error": {"category": "solver", "message": str(exc)}}
        bundle.write_summary(summary, code)
    finally:
        bundle.close()
        logging.getLogger("mdfn").removeHandler(console)
    if code == EXIT_SOLVER and "error" not in summary:
        print("mdfn: one or more runs failed; see summary.yaml", file=sys.stderr)
    elif code == EXIT_INFEASIBLE and "error" not in summary:
        print("mdfn: one or more cases infeasible; see summary.yaml", file=sys.stderr)
    print(f"mdfn: wrote {bundle.directory}", file=sys.stderr)
    return code


if __name__ == "__main__":
    sys.exit(main())
