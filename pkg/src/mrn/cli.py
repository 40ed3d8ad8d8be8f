"""``mrn`` command line interface.

Every command validates its inputs and computes its results before writing
anything.  Report payloads are deterministic; the wall-clock timestamp lives
only in the ``<out>.manifest.json`` written beside the primary output.

Exit codes::

    0  success
    1  unexpected internal error
    2  usage error (unknown flag, missing argument)
    3  malformed input file or config
    4  shape mismatch
    5  resolution / depth out of range
    6  non-finite values or missing gradients
    7  file system error (missing input, unwritable output)
    8  invalid argument value

Errors are printed to stderr as one line:
``mrn: error code=<n> kind=<name> msg=<message>``.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import math
import os
import sys
from datetime import datetime, timezone

import numpy as np

from . import __version__
from . import diffusion as df
from . import filterbank as fb
from . import mrf
from . import triangle as tri
from . import unet as un
from .errors import FormatError, MRNError, ResolutionError, ShapeError
from .spaces import MultiResFunction, elliptic_exact, galerkin_solve_elliptic, h01_function_eval, to_basis
from .training import (
    SyntheticConfig,
    TrainConfig,
    identity_dataset,
    staged_train,
    synthetic_experiment,
    theorem1_dataset,
    theorem1_suite,
)

EXIT_USAGE = 2
EXIT_IO = 7
EXIT_VALUE = 8


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


# --------------------------------------------------------------------- output helpers


class Outputs:
    """Collects output payloads; nothing touches disk until :meth:`commit`."""

    def __init__(self):
        self.files = []

    def add(self, path, data):
        if isinstance(data, str):
            data = data.encode()
        self.files.append((path, data))

    def json(self, path, obj):
        self.add(path, json.dumps(obj, indent=2, sort_keys=True, allow_nan=False) + "\n")

    def csv(self, path, header, rows):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow(["" if v is None else (repr(float(v)) if isinstance(v, (float, np.floating)) else v) for v in r])
        self.add(path, buf.getvalue())

    def commit(self):
        for path, _ in self.files:
            parent = os.path.dirname(os.path.abspath(path))
            if not os.path.isdir(parent):
                raise FileNotFoundError(f"output directory does not exist: {parent}")
        for path, data in self.files:
            with open(path, "wb") as fh:
                fh.write(data)


def _manifest(args, primary, seed):
    config = {k: v for k, v in sorted(vars(args).items()) if k != "func"}
    return {
        "command": args.command,
        "config": config,
        "version": __version__,
        "seed": seed,
        "threads": df.max_workers(),
        "outputs": primary,
        "created": datetime.now(timezone.utc).isoformat(),
    }


def _csv_mirror(path):
    root, _ = os.path.splitext(path)
    return root + ".csv"


def _read_json(path):
    try:
        with open(path) as fh:
            return json.load(fh)
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: invalid JSON ({exc.msg} at line {exc.lineno})") from None


def _check_keys(d, allowed, where):
    extra = set(d) - set(allowed)
    if extra:
        raise FormatError(f"{where}: unknown keys {sorted(extra)}")


# --------------------------------------------------------------------- commands


def cmd_dwt(args, out):
    f = to_basis(mrf.read_mrf(args.input), "pixel")
    if f.domain not in ("interval", "square"):
        raise ShapeError("dwt", f.coeffs.shape, detail=f"domain {f.domain} has no separable DWT")
    rows, pyramids = [], []
    for c in range(f.channels):
        pyr = fb.multilevel_dwt(f.grid[c], args.levels, args.bank)
        pyramids.append(pyr.to_dict())
        prefix = f"c{c}:" if f.channels > 1 else ""
        rows += [(prefix + b, k, v) for b, k, v in pyr.rows()]
    report = pyramids[0] if f.channels == 1 else {"channels": pyramids}
    out.json(args.out, report)
    out.csv(args.csv or _csv_mirror(args.out), ("band", "index", "value"), rows)
    return None


def cmd_pde(args, out):
    f = mrf.read_mrf(args.rhs)
    if f.domain != "interval":
        raise ShapeError("pde", f.coeffs.shape, detail="right-hand side must live on the interval")
    u = galerkin_solve_elliptic(f, args.resolution)
    out.add(args.out, mrf.dumps(u))
    if args.report:
        x = np.linspace(0.0, 1.0, args.points)
        uh = h01_function_eval(u, x)
        uh = uh if uh.ndim == 1 else uh[0]
        ex = elliptic_exact(f, x)
        out.csv(args.report, ("x", "u", "exact", "abs_error"),
                [(float(a), float(b), float(c), float(abs(b - c))) for a, b, c in zip(x, uh, ex)])
    return None


def cmd_tri(args, out):
    if args.action == "synth":
        if args.kind is None or args.depth is None:
            raise UsageError("tri synth needs --kind and --depth")
        out.add(args.out, mrf.dumps(tri.tri_synth(args.kind, args.depth)))
        return None
    if args.input is None:
        raise UsageError(f"tri {args.action} needs --input")
    f = mrf.read_mrf(args.input)
    if args.action == "decode":
        if f.domain != "square" or f.basis != "pixel":
            raise ShapeError("tri decode", f.coeffs.shape, detail="expects a square pixel grid")
        d = f.resolution
        vals = tri.decode(f.grid, d)
        g = MultiResFunction("triangle", d, vals.reshape(-1), channels=f.channels)
    else:
        if f.domain != "triangle" or f.basis != "pixel":
            raise ShapeError(f"tri {args.action}", f.coeffs.shape, detail="expects a triangle pixel function")
        d = f.resolution
        if args.action == "encode":
            g = MultiResFunction("square", d, tri.encode(f.grid, d), channels=f.channels)
        elif args.action == "pool":
            if args.depth is None:
                raise UsageError("tri pool needs --depth")
            if not 0 <= args.depth <= d:
                raise ResolutionError(f"tri pool: depth {args.depth} outside [0, {d}]")
            g = tri.tri_avg_pool(f, args.depth)
        else:
            g = to_basis(f, "haar")
    out.add(args.out, mrf.dumps(g))
    return None


def cmd_unet_eval(args, out):
    state = un.load_unet(args.net)
    f = mrf.read_mrf(args.input)
    f = to_basis(f, "pixel") if f.basis != "pixel" else f
    spec = state.spec
    level = spec.level_of_resolution(args.resolution)
    have = f.resolution
    if spec.domain != "triangle" and have != args.resolution:
        raise ResolutionError(f"unet-eval: input resolution {have} does not match --resolution {args.resolution}")
    w = un.unet_forward(state, f, level)
    out.add(args.out, mrf.dumps(w))
    return None


def cmd_train_synth(args, out):
    cfg = SyntheticConfig(target=args.target, pre=args.pre, steps=args.steps, depth=args.depth)
    res = synthetic_experiment(cfg, seed=args.seed)
    out.json(args.report, {
        "target": args.target,
        "pre": args.pre,
        "seed": args.seed,
        "steps": args.steps,
        "depth": args.depth,
        "mse": res["mse"],
        "max_weight_norm": res["max_weight_norm"],
        "trace": res["trace"],
    })
    return args.seed


_RUN_KEYS = ("spec", "data", "train", "init_seed")
_DATA_KEYS = ("kind", "samples", "resolution", "seed")


def _staged_setup(cfg):
    _check_keys(cfg, _RUN_KEYS, "run config")
    try:
        spec = un.UNetSpec.from_dict(cfg.get("spec", {}))
        tcfg = TrainConfig.from_dict(cfg.get("train", {}))
    except TypeError as exc:
        raise FormatError(f"run config: {exc}") from None
    data_cfg = cfg.get("data", {})
    _check_keys(data_cfg, _DATA_KEYS, "run config data")
    if data_cfg.get("kind", "identity") != "identity":
        raise FormatError(f"run config data: unknown kind {data_cfg['kind']!r}")
    res = int(data_cfg.get("resolution", spec.grid_resolution(spec.J)))
    if res != spec.grid_resolution(spec.J):
        raise ResolutionError(f"run config: data resolution {res} differs from the finest level grid")
    domain = "interval" if spec.domain == "interval" else "square"
    data = identity_dataset(int(data_cfg.get("samples", 64)), res, domain, spec.in_channels,
                            int(data_cfg.get("seed", 0)))
    return spec, tcfg, data, int(cfg.get("init_seed", 0))


def cmd_train_staged(args, out):
    cfg = _read_json(args.config)
    if not isinstance(cfg, dict):
        raise FormatError("run config: top level must be an object")
    spec, tcfg, data, init_seed = _staged_setup(cfg)
    if args.freeze:
        tcfg.freeze = True
    if spec.domain == "triangle":
        raise ValueError("train-staged: identity data is generated on the interval or square only")
    if spec.in_channels != spec.out_channels:
        raise ShapeError("train-staged", (spec.in_channels,), (spec.out_channels,), detail="identity task")
    state = un.build_unet(spec, init_seed)
    state, traces = staged_train(state, data, tcfg)
    out.add(args.out, un.dumps(state))
    rows = [(lvl, k, loss) for lvl in sorted(traces) for k, loss in enumerate(traces[lvl])]
    out.csv(args.trace, ("stage", "step", "loss"), rows)
    return tcfg.seed


_THM1_KEYS = ("samples", "resolution", "target", "levels", "seed", "resolutions", "measurable_levels")


def cmd_thm1(args, out):
    cfg = _read_json(args.config)
    if not isinstance(cfg, dict):
        raise FormatError("suite config: top level must be an object")
    _check_keys(cfg, _THM1_KEYS, "suite config")
    res = int(cfg.get("resolution", 3))
    if not 0 <= res <= 10:
        raise ResolutionError(f"thm1: resolution {res} outside [0, 10]")
    data = theorem1_dataset(int(cfg.get("samples", 200)), res, cfg.get("target", "identity"),
                            tuple(cfg.get("levels", (0, 1))), int(cfg.get("seed", 0)))
    resolutions = cfg.get("resolutions")
    if resolutions is not None and any(not 0 <= r <= res for r in resolutions):
        raise ResolutionError(f"thm1: resolutions {resolutions} outside [0, {res}]")
    measurable = cfg.get("measurable_levels")
    if measurable is None and cfg.get("target", "identity") == "identity":
        measurable = list(range(res + 1)) if resolutions is None else list(resolutions)
    rows, checks = theorem1_suite(data, resolutions, measurable)
    out.csv(args.out, ("i", "j", "loss", "full_loss", "bins"),
            [(r["i"], r["j"], r["loss"], r["full_loss"], r["bins"]) for r in rows])
    out.json(args.checks or os.path.splitext(args.out)[0] + ".checks.json", checks)
    return int(cfg.get("seed", 0))


def _x0(args, domain="interval"):
    if args.x0:
        f = to_basis(mrf.read_mrf(args.x0), "pixel")
        if args.resolution is not None and f.resolution != args.resolution:
            raise ResolutionError(f"x0 resolution {f.resolution} does not match --resolution {args.resolution}")
        return f
    if args.resolution is None:
        raise UsageError("need --resolution or --x0")
    if domain == "square":
        return MultiResFunction("square", args.resolution, np.zeros((2**args.resolution,) * 2))
    return MultiResFunction("interval", args.resolution, np.zeros(2**args.resolution))


def cmd_spectrum(args, out):
    if args.resolution is not None and not 0 <= args.resolution <= 16:
        raise ResolutionError(f"spectrum: resolution {args.resolution} outside [0, 16]")
    x0 = _x0(args, args.domain)
    rep = df.spectrum_variance(x0, args.t, df.DiffusionSchedule(args.schedule), args.samples, args.seed)
    out.json(args.out, rep.to_dict())
    out.csv(_csv_mirror(args.out), ("band", "variance", "ratio", "ci"), rep.csv_rows())
    return args.seed


def cmd_consistency(args, out):
    if args.coarse > args.fine:
        raise ResolutionError(f"consistency: coarse {args.coarse} exceeds fine {args.fine}")
    if not 0 <= args.coarse or args.fine > 16:
        raise ResolutionError("consistency: resolutions must lie in [0, 16]")
    if args.x0:
        x0 = to_basis(mrf.read_mrf(args.x0), "pixel")
        if x0.resolution != args.fine:
            raise ResolutionError(f"x0 resolution {x0.resolution} does not match --fine {args.fine}")
    else:
        x0 = MultiResFunction("interval", args.fine, np.zeros(2**args.fine))
    rep = df.cross_resolution_consistency(x0, args.t, args.coarse, df.DiffusionSchedule(args.schedule),
                                          args.samples, args.seed)
    out.json(args.out, rep)
    rows = [(k, p, d, r) for k, (p, d, r) in
            enumerate(zip(rep["pooled_variance"], rep["direct_variance"], rep["variance_ratio"]))]
    out.csv(_csv_mirror(args.out), ("cell", "pooled_variance", "direct_variance", "variance_ratio"), rows)
    return args.seed


# --------------------------------------------------------------------- parser


def _unit_interval(s):
    t = float(s)
    if not 0.0 <= t <= 1.0 or math.isnan(t):
        raise argparse.ArgumentTypeError(f"t={s} outside [0, 1]")
    return t


def build_parser():
    p = _Parser(prog="mrn", description="Multi-resolution U-Net toolkit.",
                epilog="Exit codes: 0 ok, 1 internal, 2 usage, 3 malformed file, 4 shape, "
                       "5 resolution, 6 non-finite, 7 file system, 8 invalid value. "
                       "MRN_THREADS caps Monte Carlo worker threads.")
    p.add_argument("--version", action="version", version=f"mrn {__version__}")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("dwt", help="multilevel periodic DWT of an .mrf function")
    s.add_argument("--input", required=True)
    s.add_argument("--levels", type=int, required=True)
    s.add_argument("--bank", default="haar", help="registered filter bank (haar, db2)")
    s.add_argument("--out", required=True, help="pyramid JSON")
    s.add_argument("--csv", help="coefficient dump (default: <out>.csv)")
    s.set_defaults(func=cmd_dwt)

    s = sub.add_parser("pde", help="Galerkin solve of u'' = f with zero boundary values")
    s.add_argument("--rhs", required=True)
    s.add_argument("--resolution", type=int, required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--report", help="CSV of x, u, exact, abs_error")
    s.add_argument("--points", type=int, default=1024)
    s.set_defaults(func=cmd_pde)

    s = sub.add_parser("tri", help="triangle encode / decode / pool / haar / synth")
    s.add_argument("action", choices=("encode", "decode", "pool", "haar", "synth"))
    s.add_argument("--input")
    s.add_argument("--depth", type=int)
    s.add_argument("--kind", choices=("constant", "plane", "bump"))
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_tri)

    s = sub.add_parser("unet-eval", help="evaluate a stored U-Net")
    s.add_argument("--net", required=True)
    s.add_argument("--input", required=True)
    s.add_argument("--resolution", type=int, required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_unet_eval)

    s = sub.add_parser("train-synth", help="synthetic preconditioning experiment")
    s.add_argument("--target", choices=("square", "cube"), required=True)
    s.add_argument("--pre", choices=("identity", "abs"), required=True)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--steps", type=int, default=2000)
    s.add_argument("--depth", type=int, default=100)
    s.add_argument("--report", required=True)
    s.set_defaults(func=cmd_train_synth)

    s = sub.add_parser("train-staged", help="staged multi-resolution training from a JSON config")
    s.add_argument("--config", required=True)
    s.add_argument("--freeze", action="store_true")
    s.add_argument("--out", required=True, help=".uns network")
    s.add_argument("--trace", required=True, help="CSV of stage, step, loss")
    s.set_defaults(func=cmd_train_staged)

    s = sub.add_parser("thm1", help="conditional-mean oracle table")
    s.add_argument("--config", required=True)
    s.add_argument("--out", required=True, help="CSV table")
    s.add_argument("--checks", help="JSON of structural checks (default: <out>.checks.json)")
    s.set_defaults(func=cmd_thm1)

    s = sub.add_parser("spectrum", help="Monte Carlo Haar band variances of the noised process")
    s.add_argument("--resolution", type=int)
    s.add_argument("--x0", help="initial data .mrf (default: zero)")
    s.add_argument("--domain", choices=("interval", "square"), default="interval")
    s.add_argument("--t", type=_unit_interval, required=True)
    s.add_argument("--schedule", choices=("linear", "exp"), default="linear")
    s.add_argument("--samples", type=int, default=100_000)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_spectrum)

    s = sub.add_parser("consistency", help="pooled fine process vs direct coarse process")
    s.add_argument("--fine", type=int, required=True)
    s.add_argument("--coarse", type=int, required=True)
    s.add_argument("--x0", help="fine initial data .mrf (default: zero)")
    s.add_argument("--t", type=_unit_interval, required=True)
    s.add_argument("--schedule", choices=("linear", "exp"), default="linear")
    s.add_argument("--samples", type=int, default=100_000)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_consistency)
    return p


def _primary(args):
    for key in ("out", "report"):
        if getattr(args, key, None):
            return getattr(args, key)
    return None


def _fail(code, kind, msg):
    msg = " ".join(str(msg).split())
    print(f"mrn: error code={code} kind={kind} msg={msg}", file=sys.stderr)
    return code


def run(argv=None):
    """Run one command; returns the process exit code."""
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        args = build_parser().parse_args(argv)
        out = Outputs()
        seed = args.func(args, out)
        primary = _primary(args)
        out.json(primary + ".manifest.json", _manifest(args, [p for p, _ in out.files], seed))
        out.commit()
        return 0
    except UsageError as exc:
        return _fail(EXIT_USAGE, "usage", exc)
    except MRNError as exc:
        return _fail(exc.exit_code, type(exc).__name__, exc)
    except (FileNotFoundError, PermissionError, IsADirectoryError) as exc:
        return _fail(EXIT_IO, "io", exc)
    except (ValueError, KeyError, TypeError) as exc:
        return _fail(EXIT_VALUE, "value", exc)
    except OSError as exc:
        return _fail(EXIT_IO, "io", exc)
    except Exception as exc:  # noqa: BLE001
        return _fail(1, "internal", f"{type(exc).__name__}: {exc}")


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
