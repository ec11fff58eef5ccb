"""Command-line front end.

Exit codes: 0 pass or certified, 2 falsified or failed, 3 inconclusive or
skipped, 1 usage or runtime error.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from . import catalog as cat
from . import harness
from .consistency import (CERTIFIED, FALSIFIED, default_T_grid, estimate_epc, estimate_stc, estimate_stl,
                          estimate_stlc)
from .dtmodels import DtModelKind, OpenLoopModel, close_loop, sampled_ct_loop, simulate
from .dynamics import CtLaw, DtLaw, Plant
from .sampling import parse_seq_arg
from .stability import CT_PROPERTIES, VSR_PROPERTIES, BatchSpec, certify_ct, certify_vsr
from .sysdsl import DSLError, ParseError, SystemDef, parse_system, pretty

EXIT_OK, EXIT_ERROR, EXIT_FALSIFIED, EXIT_INCONCLUSIVE = 0, 1, 2, 3
_STATUS_EXIT = {CERTIFIED: EXIT_OK, harness.PASS: EXIT_OK, FALSIFIED: EXIT_FALSIFIED,
                harness.FAIL: EXIT_FALSIFIED}


class UsageError(Exception):
    pass


def status_exit(status: str) -> int:
    return _STATUS_EXIT.get(status, EXIT_INCONCLUSIVE)


def _floats(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise UsageError(f"expected comma-separated numbers, got {text!r}") from None


# -- output ------------------------------------------------------------------

def _emit(args, name: str, json_text: str, csv_text: str | None = None):
    """Print the result, and also write it to ``--out`` when given."""
    text = csv_text if args.format == "csv" and csv_text is not None else json_text
    ext = "csv" if text is csv_text else "json"
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / f"{name}.{ext}").write_text(text)
    sys.stdout.write(text if text.endswith("\n") else text + "\n")


def _rows_csv(header: list[str], rows: list[list]) -> str:
    return "\n".join([",".join(header)] + [",".join(str(v) for v in r) for r in rows]) + "\n"


# -- system resolution ---------------------------------------------------------

def _load(args) -> tuple[SystemDef, cat.CatalogEntry | None]:
    if getattr(args, "file", None):
        text = Path(args.file).read_text()
        return parse_system(text, Path(args.file).stem), None
    if getattr(args, "system", None):
        try:
            e = cat.get(args.system)
        except KeyError as exc:
            raise UsageError(exc.args[0]) from None
        return e.system, e
    raise UsageError("give --system NAME or --file PATH")


def _radius(args, entry, default: float | None = None) -> float:
    if args.M is not None:
        return args.M
    if entry is not None:
        return entry.M
    if default is not None:
        return default
    raise UsageError("--M is required for systems given as files")


def _dt_law(sysdef: SystemDef, name: str | None) -> DtLaw:
    if name in ("uc", "u_c"):
        return DtLaw.constant_in_T(CtLaw.from_system(sysdef))
    if not sysdef.U and sysdef.u_c is not None:
        return DtLaw.constant_in_T(CtLaw.from_system(sysdef))
    return DtLaw.from_system(sysdef, name)


def _model(name: str) -> DtModelKind:
    try:
        return {"euler": DtModelKind.euler, "rk4": DtModelKind.rk4, "exact": DtModelKind.exact}[name]()
    except KeyError:
        raise UsageError(f"unknown model {name!r}; expected euler, rk4 or exact") from None


def _closed_map(sysdef: SystemDef, model: str, law: str | None):
    p = Plant.from_system(sysdef)
    if model == "flow":
        return sampled_ct_loop(p, CtLaw.from_system(sysdef))
    return close_loop(_model(model), p, _dt_law(sysdef, law))


def _batch(args) -> BatchSpec:
    vals = [int(v) for v in _floats(args.batch)]
    if len(vals) != 3 or min(vals) < 1:
        raise UsageError("--batch takes STATES,SEQUENCES,STEPS")
    return BatchSpec(n_states=vals[0], n_seqs=vals[1], n_steps=vals[2], seed=args.seed)


# -- subcommands -------------------------------------------------------------

def cmd_parse(args) -> int:
    text = Path(args.path).read_text()
    try:
        s = parse_system(text, Path(args.path).stem)
    except ParseError as exc:
        d = exc.diagnostic
        print(f"{args.path}:{d.line}:{d.column}: {d.message}", file=sys.stderr)
        return EXIT_ERROR
    info = {"name": s.name, "n": s.n, "m": s.m, "f": [pretty(e) for e in s.f],
            "u_c": [pretty(e) for e in s.u_c] if s.u_c is not None else None,
            "U": {k: [pretty(e) for e in v] for k, v in s.U.items()}, "params": dict(s.params)}
    rows = [[f"f{i + 1}", pretty(e)] for i, e in enumerate(s.f)]
    rows += [[f"uc{i + 1}", pretty(e)] for i, e in enumerate(s.u_c or ())]
    rows += [[f"U.{k}{i + 1}", pretty(e)] for k, v in s.U.items() for i, e in enumerate(v)]
    _emit(args, "system", harness.dumps(info), _rows_csv(["name", "expression"], rows))
    return EXIT_OK


def cmd_simulate(args) -> int:
    sysdef, _ = _load(args)
    cmap = _closed_map(sysdef, args.model, args.law)
    x0 = _floats(args.x0)
    if len(x0) != sysdef.n:
        raise UsageError(f"--x0 needs {sysdef.n} values, got {len(x0)}")
    spec = parse_seq_arg(args.seq)
    if spec.kind == "random" and "seed=" not in args.seq:
        spec = type(spec)(spec.kind, spec.t_bar, spec.n, args.seed, spec.params)
    traj = simulate(cmap, np.asarray(x0), spec.generate())
    _emit(args, "trajectory", traj.to_json(), traj.to_csv())
    return EXIT_OK


def cmd_consistency(args) -> int:
    sysdef, entry = _load(args)
    M = _radius(args, entry)
    p = Plant.from_system(sysdef)
    T = default_T_grid(args.tmax)
    kw = dict(T_grid=T, samples=args.samples, seed=args.seed)
    prop = args.property.lower()
    if prop == "epc":
        a, b = args.models.split(",") if args.models else ("euler", "exact")
        cert = estimate_epc(_closed_map(sysdef, a, args.law), _closed_map(sysdef, b, args.law), M, **kw)
    elif prop == "stc":
        names = args.laws.split(",") if args.laws else ["uc", args.law]
        if len(names) != 2:
            raise UsageError("--laws takes two law names")
        cert = estimate_stc(_dt_law(sysdef, names[0]), _dt_law(sysdef, names[1]), M, **kw)
    elif prop == "stl":
        cert = estimate_stl(_dt_law(sysdef, args.law), M, **kw)
    else:
        E = args.E if args.E is not None else M
        cert = estimate_stlc(OpenLoopModel(_model(args.model), p), M, E, **kw)
    d = cert.to_dict()
    rows = [[t, r] for t, r in zip(d["T_grid"], d["table"].get("rho_hat", d["table"].get("K_hat_T", [])))]
    _emit(args, cert.property.lower(), harness.dumps(d), _rows_csv(["T", "value"], rows))
    return status_exit(cert.status)


def cmd_stability(args) -> int:
    sysdef, entry = _load(args)
    M = _radius(args, entry)
    prop = args.property.upper()
    batch = _batch(args)
    if prop in CT_PROPERTIES:
        v = certify_ct(Plant.from_system(sysdef), CtLaw.from_system(sysdef), prop, M, batch,
                       T_bar=max(_floats(args.Tbar)), R=args.R)
    elif prop in VSR_PROPERTIES:
        cmap = _closed_map(sysdef, args.model, args.law)
        v = certify_vsr(cmap, prop, M, args.R, _floats(args.Tbar), batch)
    else:
        raise UsageError(f"unknown property {args.property!r}")
    d = v.to_dict()
    row = [d["property"], d["status"], d["M"], d["K"], d["lam"], d["T_bar"], d["T_star"]]
    _emit(args, "verdict", harness.dumps(d),
          _rows_csv(["property", "status", "M", "K", "lam", "T_bar", "T_star"], [row]))
    return status_exit(v.status)


def cmd_verify(args) -> int:
    if args.all and args.system:
        raise UsageError("give either --system or --all")
    systems = None if args.all or not args.system else [args.system]
    if args.system and args.system not in cat.CATALOG:
        raise UsageError(f"no catalog system {args.system!r}")
    checks = [args.theorem] if args.theorem else list(harness.CHECKS)
    try:
        checks = [harness.normalize_check(c) for c in checks]
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    config = harness.HarnessConfig(seed=args.seed, samples=args.samples, batch=_batch(args))
    reports = harness.run(checks, systems, config, args.out)
    if len(reports) == 1:
        text = harness.dumps(reports[0].to_dict())
    else:
        text = harness.dumps(harness.summary(reports, config))
    rows = [[r.system, r.theorem, r.status] for r in reports]
    csv_text = _rows_csv(["system", "check", "status"], rows)
    sys.stdout.write(csv_text if args.format == "csv" else text)
    statuses = {r.status for r in reports}
    if harness.FAIL in statuses:
        return EXIT_FALSIFIED
    return EXIT_OK if harness.PASS in statuses else EXIT_INCONCLUSIVE


def cmd_catalog(args) -> int:
    entries = [e.to_dict() for e in cat.CATALOG.values()]
    rows = [[e["name"], e["n"], e["m"], " ".join(e["laws"]), e["description"].replace(",", ";")] for e in entries]
    _emit(args, "catalog", harness.dumps(entries), _rows_csv(["name", "n", "m", "laws", "description"], rows))
    return EXIT_OK


# -- parser -------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=0, help="master seed (default 0)")
    common.add_argument("--out", metavar="DIR", help="also write results under DIR")
    common.add_argument("--format", choices=("json", "csv"), default="json")

    system = argparse.ArgumentParser(add_help=False)
    src = system.add_mutually_exclusive_group()
    src.add_argument("--system", help="catalog system name")
    src.add_argument("--file", help="system description file")
    system.add_argument("--law", help="name of the U.<name> law (default: the first; 'uc' for emulation)")

    ap = argparse.ArgumentParser(prog="vsrcheck", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("parse", parents=[common], help="validate a system description file")
    p.add_argument("path")
    p.set_defaults(func=cmd_parse)

    p = sub.add_parser("simulate", parents=[common, system], help="simulate a closed loop")
    p.add_argument("--model", default="exact", help="euler, rk4, exact, or flow (continuously applied u_c)")
    p.add_argument("--x0", required=True, help="initial state, comma separated")
    p.add_argument("--seq", default="random:tbar=0.1,n=200", help="sequence as kind:key=value,...")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("consistency", parents=[common, system], help="consistency certificate")
    p.add_argument("--property", required=True, choices=("epc", "stc", "stl", "stlc"), type=str.lower)
    p.add_argument("--M", type=float, help="state-ball radius (catalog default)")
    p.add_argument("--E", type=float, help="input-ball radius for stlc (default M)")
    p.add_argument("--models", help="model pair for epc, e.g. euler,exact")
    p.add_argument("--model", default="euler", help="model for stlc")
    p.add_argument("--laws", help="law pair for stc, e.g. uc,redesigned")
    p.add_argument("--samples", type=int, default=4096)
    p.add_argument("--tmax", type=float, default=0.5, help="largest sampling period of the grid")
    p.set_defaults(func=cmd_consistency)

    p = sub.add_parser("stability", parents=[common, system], help="stability verdict")
    p.add_argument("--property", required=True,
                   help="sps-vsr, les-vsr, sles-vsr, ss-vsr, ses-vsr, or gas, les, gales, ges")
    p.add_argument("--M", type=float, help="radius of initial states (catalog default)")
    p.add_argument("--R", type=float, help="local radius (default M/10)")
    p.add_argument("--Tbar", default="0.1", help="sampling bound, or a comma-separated grid")
    p.add_argument("--model", default="exact")
    p.add_argument("--batch", default="64,16,200", help="STATES,SEQUENCES,STEPS")
    p.set_defaults(func=cmd_stability)

    p = sub.add_parser("verify", parents=[common], help="theorem concordance checks over the catalog")
    p.add_argument("--theorem", help="1, 2, 3, L1, L2, L3, L4 or P1 (default: all)")
    p.add_argument("--system")
    p.add_argument("--all", action="store_true", help="every catalog system")
    p.add_argument("--samples", type=int, default=harness.HarnessConfig.samples)
    p.add_argument("--batch", default="16,8,200", help="STATES,SEQUENCES,STEPS")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("catalog", parents=[common], help="built-in systems")
    p.add_argument("action", choices=("list",))
    p.set_defaults(func=cmd_catalog)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_ERROR
    try:
        return args.func(args)
    except (UsageError, DSLError, KeyError, ValueError, OSError) as exc:
        msg = exc.args[0] if isinstance(exc, KeyError) and exc.args else str(exc)
        print(f"vsrcheck: error: {msg}", file=sys.stderr)
        return EXIT_ERROR
    except ArithmeticError as exc:
        print(f"vsrcheck: runtime error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
