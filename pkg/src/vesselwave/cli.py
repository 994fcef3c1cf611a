"""Command-line interface.  Exit status: 0 success, 1 numerical failure,
2 configuration error.  Every run writes ``manifest_<command>.json`` next to
its outputs."""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .config import Config, default_config, parse_config
from .laminar import laminar_profile
from .model import ConfigurationError, ModelParams, validate_body_force
from .nonlinear import HeightField, NewtonError, StagnationError, continue_branch
from .reconstruct import (ReconstructionError, diagnostics, field_table, physical_fields,
                          surface_table)
from .spectral import (NoCrossingError, ShootingError, depth_condition, find_xi_star,
                       kernel_report, mu_matrix, mu_shooting, sl_problem, transversality)

NUMERICAL_ERRORS = (NoCrossingError, ShootingError, NewtonError, StagnationError,
                    ReconstructionError, np.linalg.LinAlgError)


def fmt(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return str(bool(x)).lower()
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return "%.17g" % float(x)


def write_csv(path: Path, header, rows) -> None:
    with open(path, "w", newline="\n") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(fmt(v) for v in row) + "\n")


def _clean(obj):
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        return float(obj)
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    return obj


def write_json(path: Path, obj) -> None:
    with open(path, "w") as fh:
        json.dump(_clean(obj), fh, indent=2, sort_keys=True)
        fh.write("\n")


# ---------------------------------------------------------------------------
# checkpoints

def write_checkpoint(path: Path, field: HeightField, extra: dict | None = None) -> None:
    """Field CSV ``w,z,h`` (w-major) plus a JSON sidecar with Q, z0 and the grid."""
    W = np.broadcast_to(field.w[:, None], field.h.shape)
    Z = np.broadcast_to(field.z[None, :], field.h.shape)
    write_csv(path, ("w", "z", "h"), zip(W.ravel(), Z.ravel(), field.h.ravel()))
    meta = {"Q": field.Q, "z0": field.z0, "eps": field.eps, "nw": field.nw, "nz": field.nz,
            "params": field.params.as_dict()}
    meta.update(extra or {})
    write_json(path.with_suffix(".json"), meta)


def read_checkpoint(path) -> HeightField:
    path = Path(path)
    side = path.with_suffix(".json")
    if not path.exists() or not side.exists():
        raise ConfigurationError(f"checkpoint {path} or its sidecar {side.name} is missing")
    meta = json.loads(side.read_text())
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    nw, nz = int(meta["nw"]), int(meta["nz"])
    if data.shape != ((nw + 1) * (nz + 1), 3):
        raise ConfigurationError(f"checkpoint {path} does not match its grid {nw}x{nz}")
    params = ModelParams(**meta["params"])
    return HeightField(data[:, 2].reshape(nw + 1, nz + 1), float(meta["Q"]),
                       float(meta["z0"]), params, float(meta.get("eps", 0.0)))


# ---------------------------------------------------------------------------
# commands

def _xi_star(cfg: Config, args) -> float:
    if getattr(args, "xi", None) is not None:
        return float(args.xi)
    return find_xi_star(cfg.params, n_scan=cfg.options["n_scan"], N=cfg.options["n_eig"],
                        convention=cfg.options["convention"]).xi_star


def cmd_validate_force(cfg, args, out):
    report = validate_body_force(cfg.force, cfg.params)
    write_json(out / "validate_force.json", report.as_dict())
    return ["validate_force.json"], (0 if report.passed else 2)


def cmd_laminar(cfg, args, out):
    prof = laminar_profile(args.xi, args.n, cfg.params)
    write_csv(out / "laminar.csv", ("z", "H", "Hz", "a"),
              zip(prof.z, prof.H, prof.Hz, prof.a))
    return ["laminar.csv"], 0


def cmd_mu_scan(cfg, args, out):
    lo = cfg.params.epsilon0 if args.xi_from is None else args.xi_from
    hi = cfg.params.xi_max if args.xi_to is None else args.xi_to
    if not 0 < lo < hi or args.points < 2:
        raise ConfigurationError("need 0 < --from < --to and --points >= 2")
    rows = []
    for xi in np.linspace(lo, hi, args.points):
        prob = sl_problem(xi, cfg.params, N=cfg.options["n_eig"],
                          convention=cfg.options["convention"])
        m = mu_matrix(prob).mu
        rows.append((xi, m, abs(m - mu_shooting(prob).mu)))
    write_csv(out / "mu_scan.csv", ("xi", "mu", "method_gap"), rows)
    return ["mu_scan.csv"], 0


def cmd_check_depth(cfg, args, out):
    dc = depth_condition(cfg.params)
    write_json(out / "depth.json", {"lhs": dc.lhs, "rhs": dc.rhs, "holds": dc.holds})
    return ["depth.json"], 0


def cmd_locate(cfg, args, out):
    rng = None
    if args.xi_from is not None or args.xi_to is not None:
        rng = (cfg.params.epsilon0 if args.xi_from is None else args.xi_from,
               cfg.params.xi_max if args.xi_to is None else args.xi_to)
    rep = find_xi_star(cfg.params, xi_range=rng, n_scan=args.points or cfg.options["n_scan"],
                       N=cfg.options["n_eig"], convention=cfg.options["convention"])
    write_json(out / "locate.json", rep.as_dict())
    return ["locate.json"], 0


def cmd_kernel(cfg, args, out):
    rep = kernel_report(_xi_star(cfg, args), args.kmax, cfg.params, N=cfg.options["n_eig"],
                        convention=cfg.options["convention"])
    write_json(out / "kernel.json", rep.as_dict())
    return ["kernel.json"], 0


def cmd_transversality(cfg, args, out):
    xi = _xi_star(cfg, args)
    eig = mu_shooting(sl_problem(xi, cfg.params, N=cfg.options["n_eig"],
                                 convention=cfg.options["convention"]))
    rep = transversality(xi, eig, cfg.params)
    write_json(out / "transversality.json", {**rep.as_dict(), "xi_star": xi, "mu": eig.mu})
    return ["transversality.json"], 0


def cmd_bifurcate(cfg, args, out):
    nw = args.nw or cfg.options["nw"]
    nz = args.nz or cfg.options["nz"]
    xi = _xi_star(cfg, args)
    branch = continue_branch(xi, args.steps, args.deps, cfg.params, nw=nw, nz=nz,
                             force=cfg.force, tol=cfg.options["newton_tol"])
    write_csv(out / "branch.csv",
              ("step", "eps", "Q", "surf_min", "surf_max", "newton_iters", "residual", "z0"),
              (r.row() for r in branch.records))
    outputs = ["branch.csv"]
    ckdir = out / "checkpoints"
    ckdir.mkdir(exist_ok=True)
    for rec, fld in zip(branch.records, branch.fields):
        if rec.step % args.checkpoint_every and rec.step != branch.records[-1].step:
            continue
        name = f"checkpoint_{rec.step:04d}.csv"
        write_checkpoint(ckdir / name, fld, {"step": rec.step, "xi_onset": branch.onset.xi})
        outputs += [f"checkpoints/{name}", f"checkpoints/{Path(name).with_suffix('.json')}"]
    return outputs, 0


def cmd_reconstruct(cfg, args, out):
    fld = read_checkpoint(args.checkpoint)
    pf = physical_fields(fld, force=cfg.force if args.config else None)
    write_csv(out / "fields.csv", ("x", "y", "u", "v", "p"), field_table(pf))
    write_csv(out / "surface.csv", ("x", "omega"), surface_table(pf))
    return ["fields.csv", "surface.csv"], 0


def cmd_verify(cfg, args, out):
    fld = read_checkpoint(args.checkpoint)
    pf = physical_fields(fld, force=cfg.force if args.config else None)
    rep = diagnostics(pf, fld)
    write_json(out / "diagnostics.json", {**rep.as_dict(), "Q": fld.Q, "z0": fld.z0,
                                          "p0": pf.p0, "eps": fld.eps})
    return ["diagnostics.json"], 0


COMMANDS = {
    "validate-force": cmd_validate_force,
    "laminar": cmd_laminar,
    "mu-scan": cmd_mu_scan,
    "check-depth": cmd_check_depth,
    "locate": cmd_locate,
    "kernel": cmd_kernel,
    "transversality": cmd_transversality,
    "bifurcate": cmd_bifurcate,
    "reconstruct": cmd_reconstruct,
    "verify": cmd_verify,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="vesselwave", description=__doc__.split("\n")[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, help_):
        p = sub.add_parser(name, help=help_)
        p.add_argument("--config", help="key = value file (default: reference configuration)")
        p.add_argument("--out-dir", default=".", help="directory for outputs and manifest")
        return p

    add("validate-force", "check the structural assumptions on the body force")
    p = add("laminar", "sample the laminar profile")
    p.add_argument("--xi", type=float, required=True)
    p.add_argument("--n", type=int, default=1000)
    p = add("mu-scan", "lowest eigenvalue over a range of xi")
    p.add_argument("--from", dest="xi_from", type=float)
    p.add_argument("--to", dest="xi_to", type=float)
    p.add_argument("--points", type=int, default=50)
    add("check-depth", "evaluate the depth condition")
    p = add("locate", "find xi* where mu = -1")
    p.add_argument("--from", dest="xi_from", type=float)
    p.add_argument("--to", dest="xi_to", type=float)
    p.add_argument("--points", type=int)
    p = add("kernel", "per-mode kernel table at xi*")
    p.add_argument("--xi", type=float)
    p.add_argument("--kmax", type=int, default=4)
    p = add("transversality", "transversality integral at xi*")
    p.add_argument("--xi", type=float)
    p = add("bifurcate", "continue the bifurcating branch")
    p.add_argument("--xi", type=float)
    p.add_argument("--steps", type=int, default=20)
    p.add_argument("--deps", type=float, default=5e-5)
    p.add_argument("--nw", type=int)
    p.add_argument("--nz", type=int)
    p.add_argument("--checkpoint-every", type=int, default=1)
    for name in ("reconstruct", "verify"):
        p = add(name, "physical fields from a checkpoint" if name == "reconstruct"
                else "conservation audits of a checkpoint")
        p.add_argument("--checkpoint", required=True)
    return parser


def _limit_threads():
    n = os.environ.get("VESSELWAVE_THREADS")
    if not n:
        return None
    try:
        from threadpoolctl import threadpool_limits
    except ImportError:
        return None
    return threadpool_limits(int(n))


def _input_hash(cfg: Config, argv, args) -> str:
    h = hashlib.sha256()
    h.update(cfg.source.encode())
    h.update("\0".join(argv).encode())
    ck = getattr(args, "checkpoint", None)
    if ck:
        for p in (Path(ck), Path(ck).with_suffix(".json")):
            if p.exists():
                h.update(p.read_bytes())
    return h.hexdigest()


def dispatch(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code == 0 else 2
    out = Path(args.out_dir)
    start = time.perf_counter()
    status, outputs, error = 0, [], None
    cfg = None
    limiter = _limit_threads()
    try:
        cfg = parse_config(args.config) if args.config else default_config()
        out.mkdir(parents=True, exist_ok=True)
        outputs, status = COMMANDS[args.command](cfg, args, out)
    except (ConfigurationError, ValueError) as exc:
        status, error = 2, str(exc)
    except NUMERICAL_ERRORS as exc:
        status, error = 1, str(exc)
    finally:
        if limiter is not None:
            limiter.restore_original_limits()
    if error:
        print(f"vesselwave {args.command}: {error}", file=sys.stderr)
    if out.is_dir():
        manifest = {
            "command": args.command,
            "argv": argv,
            "version": __version__,
            "config": cfg.as_dict() if cfg else None,
            "grid": {"n_eig": cfg.options["n_eig"], "nw": getattr(args, "nw", None)
                     or cfg.options["nw"], "nz": getattr(args, "nz", None) or cfg.options["nz"]}
            if cfg else None,
            "tolerances": {"model": cfg.params.tol, "newton": cfg.options["newton_tol"]}
            if cfg else None,
            "outputs": outputs,
            "exit_code": status,
            "error": error,
            "wall_clock_s": time.perf_counter() - start,
            "threads": os.environ.get("VESSELWAVE_THREADS"),
            "input_sha256": _input_hash(cfg, argv, args) if cfg else None,
        }
        write_json(out / f"manifest_{args.command}.json", manifest)
    return status


def main() -> None:
    sys.exit(dispatch())


if __name__ == "__main__":
    main()
