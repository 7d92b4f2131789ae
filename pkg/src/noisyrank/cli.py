"""Command-line front end: ``noisyrank analyze | simulate | plan``.

Every command writes its data files plus ``manifest.json`` into ``--out``.
Files are staged under temporary names and renamed only after the whole
run succeeded, so a failing command leaves no partial output.

Exit codes: 0 success, 1 usage error, 2 numerical failure, 3 I/O error.
"""

from __future__ import annotations

import argparse
import hashlib
import io
import json
import math
import os
import sys
import tempfile
import time
from pathlib import Path

from . import __version__
from .dist import DEFAULT_RTOL, fit_from_samples, gaussian
from .errors import ConvergenceError, NoiseDominatedError, UnreachableTargetError
from .kendall import tau_moments
from .montecarlo import NORMAL_METHODS, REDRAW_MODES, SimulationConfig, simulate, sigma_grid
from .study import (
    DEFAULT_ALPHA,
    DEFAULT_N_MAX,
    INGEST_FORMATS,
    estimate_signal,
    expected_overlap_curve,
    ingest_scores,
    plan_sample_size,
)
from .tkl import overlap_moments

EXIT_OK, EXIT_USAGE, EXIT_NUMERIC, EXIT_IO = 0, 1, 2, 3


class UsageError(Exception):
    pass


class InputFileError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: error: {message}")


def _fmt(v) -> str:
    if isinstance(v, float):
        return format(v, ".17g")
    return "" if v is None else str(v)


def _csv(header, rows) -> str:
    buf = io.StringIO()
    buf.write(",".join(header) + "\n")
    for row in rows:
        buf.write(",".join(_csv_cell(_fmt(v)) for v in row) + "\n")
    return buf.getvalue()


def _csv_cell(text):
    if any(c in text for c in ',"\n'):
        return '"' + text.replace('"', '""') + '"'
    return text


def _float_list(text):
    try:
        vals = [float(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}")
    return vals


def _positive_int(text):
    try:
        v = float(text)
    except ValueError:
        v = 0.0
    if not (math.isfinite(v) and v == int(v) and v >= 1):
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {text!r}")
    return int(v)


def _fraction(text):
    v = float(text)
    if not 0.0 < v < 1.0:
        raise argparse.ArgumentTypeError(f"expected a value in (0, 1), got {text!r}")
    return v


def _positive(text):
    v = float(text)
    if not (v > 0 and math.isfinite(v)):
        raise argparse.ArgumentTypeError(f"expected a positive number, got {text!r}")
    return v


def _common(p):
    p.add_argument("--out", default=None, help="output directory (required)")
    p.add_argument("--seed", type=int, default=0, help="random seed (64-bit)")
    p.add_argument("--threads", type=_positive_int, default=None, help="worker cap (default: all cores)")
    p.add_argument("--config", default=None, help="flat key = value file supplying any flag")
    p.add_argument("--format", choices=("csv", "json"), default="csv", help="data file format")
    p.add_argument("--quad-tol", type=_positive, default=DEFAULT_RTOL, help="relative quadrature tolerance")


def _grid_flags(p, default_sigma):
    p.add_argument("--sigma", type=_float_list, default=default_sigma, help="comma-separated noise levels")
    p.add_argument("--sigma-min", type=float, default=None, help="grid start (with --sigma-step, --sigma-max)")
    p.add_argument("--sigma-step", type=float, default=None, help="grid spacing")
    p.add_argument("--sigma-max", type=float, default=None, help="grid end, inclusive")


def _score_flags(p):
    p.add_argument("--sigma-q", type=_positive, default=1.0, help="st.d. of the Gaussian true-score density")
    p.add_argument("--mean", type=float, default=0.0, help="mean of the true-score density")
    p.add_argument("--scores", default=None, help="score file; overrides --sigma-q/--mean")
    p.add_argument("--score-format", choices=INGEST_FORMATS, default="plain", help="layout of --scores")


def build_parser() -> argparse.ArgumentParser:
    fmt = argparse.ArgumentDefaultsHelpFormatter
    parser = _Parser(prog="noisyrank", description="Ranking reliability under noisy scores.", formatter_class=fmt)
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    a = sub.add_parser("analyze", help="analytical tau and top-K overlap curves", formatter_class=fmt)
    _common(a)
    _score_flags(a)
    _grid_flags(a, [0.5, 1.0, 2.0])
    a.add_argument("--alpha", type=_fraction, default=0.1, help="top-K list fraction K/N")
    a.add_argument("--n-objects", type=_positive_int, default=1000, help="number of ranked objects N")
    a.add_argument("--measure", choices=("both", "tau", "overlap"), default="both", help="which measures to compute")

    s = sub.add_parser("simulate", help="Monte-Carlo reference simulation", formatter_class=fmt)
    _common(s)
    _score_flags(s)
    _grid_flags(s, [1.0])
    s.add_argument("--n-objects", type=_positive_int, default=1000, help="number of ranked objects N")
    s.add_argument("--k", type=_positive_int, default=None, help="top-K list size (default: round(alpha N))")
    s.add_argument("--alpha", type=_fraction, default=0.1, help="list fraction, used when --k is absent")
    s.add_argument("--iterations", type=_positive_int, default=2000, help="noise realisations per sigma")
    s.add_argument("--redraw", choices=REDRAW_MODES, default="never", help="when to redraw the true scores")
    s.add_argument("--normal-method", choices=NORMAL_METHODS, default="ziggurat", help="Gaussian variate generator")

    pl = sub.add_parser("plan", help="sample size for a reliable top-K list", formatter_class=fmt)
    _common(pl)
    pl.add_argument("--sigma-q", type=_positive, default=None, help="signal st.d. (alternative to --scores)")
    pl.add_argument("--scores", default=None, help="Fisher score or correlation file")
    pl.add_argument("--score-format", choices=INGEST_FORMATS, default="plain", help="layout of --scores")
    pl.add_argument("--n-samples", type=int, default=None, help="samples behind the scores in --scores")
    pl.add_argument("--n-objects", type=_positive_int, default=None, help="N (default: number of scores read)")
    pl.add_argument("--alpha", type=_fraction, default=DEFAULT_ALPHA, help="top-K list fraction K/N")
    pl.add_argument("--epsilon", type=_fraction, default=0.5, help="required overlap is 1 - epsilon")
    pl.add_argument("--delta", type=_fraction, default=0.1, help="allowed failure probability")
    pl.add_argument("--n-max", type=_positive_int, default=DEFAULT_N_MAX, help="search bound on n")
    return parser


def _read_config(path) -> list[str]:
    """Turn a ``key = value`` file into argv tokens."""
    argv = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise UsageError(f"{path}:{lineno}: expected 'key = value'")
            key, value = (t.strip() for t in line.split("=", 1))
            key = key.replace("_", "-")
            if key == "config":
                raise UsageError(f"{path}:{lineno}: config files cannot nest")
            argv += [f"--{key}", value]
    return argv


def parse_args(parser, argv):
    args = parser.parse_args(argv)
    if args.command is None:
        raise UsageError("noisyrank: error: a command is required (analyze, simulate, plan)")
    if args.config:
        # file values go first so explicit flags, parsed later, win
        extra = _read_config(args.config)
        i = argv.index(args.command) + 1
        args = parser.parse_args(argv[:i] + extra + argv[i:])
    if not args.out:
        raise UsageError(f"noisyrank {args.command}: error: --out is required")
    return args


def _grid(args) -> list[float]:
    parts = (args.sigma_min, args.sigma_step, args.sigma_max)
    if any(p is not None for p in parts):
        if args.sigma_min is None or args.sigma_max is None:
            raise UsageError("--sigma-min and --sigma-max go together")
        step = args.sigma_step if args.sigma_step is not None else 0.0
        try:
            grid = sigma_grid(args.sigma_min, step, args.sigma_max)
        except ValueError as exc:
            raise UsageError(str(exc))
    else:
        grid = list(args.sigma)
    if not grid:
        raise UsageError("the sigma grid is empty")
    return grid


def _params(args) -> dict:
    return {k: v for k, v in sorted(vars(args).items()) if k not in ("out", "config")}


class _Output:
    """Staged output files, committed together with a manifest."""

    def __init__(self, out_dir):
        self.dir = Path(out_dir)
        self.files: dict[str, bytes] = {}

    def add(self, name, text):
        self.files[name] = text.encode("utf-8")

    def commit(self, manifest):
        self.dir.mkdir(parents=True, exist_ok=True)
        manifest["outputs"] = {n: hashlib.sha256(b).hexdigest() for n, b in sorted(self.files.items())}
        self.files["manifest.json"] = (json.dumps(manifest, indent=2, sort_keys=True) + "\n").encode()
        staged = []
        try:
            for name, data in self.files.items():
                fd, tmp = tempfile.mkstemp(prefix=f".{name}.", dir=self.dir)
                with os.fdopen(fd, "wb") as fh:
                    fh.write(data)
                os.chmod(tmp, 0o644)
                staged.append((tmp, self.dir / name))
            # manifest last, after every data file is in place
            for tmp, dest in staged:
                os.replace(tmp, dest)
        finally:
            for tmp, _ in staged:
                if os.path.exists(tmp):
                    os.unlink(tmp)


def _manifest(args, started) -> dict:
    return {
        "command": args.command,
        "params": _params(args),
        "seed": args.seed,
        "version": __version__,
        "duration_s": round(time.perf_counter() - started, 6),
    }


def _ingest(path, fmt):
    try:
        return ingest_scores(path, fmt)
    except ValueError as exc:
        raise InputFileError(str(exc))


def _score_model(args):
    if args.scores:
        q, _ = fit_from_samples(_ingest(args.scores, args.score_format))
        return q
    return gaussian(args.mean, args.sigma_q)


def _json_doc(manifest, results):
    return json.dumps({"manifest": manifest, "results": results}, indent=2, sort_keys=True) + "\n"


def cmd_analyze(args, started) -> int:
    grid = _grid(args)
    if any(not (s > 0 and math.isfinite(s)) for s in grid):
        raise UsageError("analytical noise levels must be positive")
    q = _score_model(args)
    header = ("sigma_ratio", "sigma", "mu_tau", "sigma_tau", "f0", "sigma_f", "status")
    rows, failed = [], 0
    nan = float("nan")
    for sigma in grid:
        mu = st = f0 = sf = nan
        status = []
        if args.measure in ("both", "tau"):
            try:
                m = tau_moments(q, sigma, args.n_objects, rtol=args.quad_tol)
                mu, st = m.mu_tau, m.sigma_tau
            except ConvergenceError as exc:
                status.append(f"tau: {exc}")
        if args.measure in ("both", "overlap"):
            try:
                om = overlap_moments(q, sigma, args.alpha, args.n_objects)
                f0, sf = om.f0, om.sigma_f
            except ConvergenceError as exc:
                status.append(f"overlap: {exc}")
        failed += bool(status)
        rows.append((q.scale / sigma, sigma, mu, st, f0, sf, "; ".join(status) or "ok"))
    out = _Output(args.out)
    manifest = _manifest(args, started)
    if args.format == "csv":
        out.add("analyze.csv", _csv(header, rows))
    else:
        out.add("analyze.json", _json_doc(manifest, {"rows": [dict(zip(header, r)) for r in rows]}))
    out.commit(manifest)
    if failed:
        print(f"noisyrank: {failed} of {len(rows)} rows failed; see the status column", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


def cmd_simulate(args, started) -> int:
    grid = _grid(args)
    fixed = None
    dist = gaussian(args.mean, args.sigma_q)
    if args.scores:
        fixed = _ingest(args.scores, args.score_format)
        args.n_objects = len(fixed)
    k = args.k if args.k is not None else max(1, round(args.alpha * args.n_objects))
    try:
        config = SimulationConfig(
            n_objects=args.n_objects,
            k=k,
            sigma_grid=grid,
            n_iterations=args.iterations,
            seed=args.seed,
            distribution=None if fixed else dist,
            fixed_scores=fixed,
            redraw=args.redraw,
            normal_method=args.normal_method,
            keep_samples=False,
        )
    except ValueError as exc:
        raise UsageError(str(exc))
    result = simulate(config, threads=args.threads)
    out = _Output(args.out)
    manifest = _manifest(args, started)
    manifest["config"] = config.echo()
    if args.format == "csv":
        out.add("simulate.csv", result.to_csv())
    else:
        out.add("simulate.json", _json_doc(manifest, result.to_dict()))
    out.commit(manifest)
    return EXIT_OK


def cmd_plan(args, started) -> int:
    report = {}
    if args.scores:
        if args.n_samples is None:
            raise UsageError("--scores needs --n-samples")
        scores = _ingest(args.scores, args.score_format)
        est = estimate_signal(scores, args.n_samples)
        sigma_q = est.sigma_q
        n_objects = args.n_objects or len(scores)
        report["signal"] = {
            "v_o": est.v_o,
            "sigma2_noise": est.sigma2_noise,
            "sigma2_q": est.sigma2_q,
            "sigma_q": sigma_q,
            "n_samples": est.n_samples,
            "n_scores": len(scores),
        }
    elif args.sigma_q is not None:
        if args.n_objects is None:
            raise UsageError("--sigma-q needs --n-objects")
        sigma_q, n_objects = args.sigma_q, args.n_objects
    else:
        raise UsageError("give either --sigma-q or --scores with --n-samples")
    if round(args.alpha * n_objects) < 1:
        raise UsageError("alpha * N rounds to an empty list")
    plan = plan_sample_size(sigma_q, args.alpha, n_objects, args.epsilon, args.delta, n_max=args.n_max)
    n_star = plan.n_star
    window = sorted({max(4, n_star - 1), n_star} | {max(4, round(n_star * 2.0 ** (j / 2))) for j in range(-6, 7)})
    curve = expected_overlap_curve(sigma_q, args.alpha, n_objects, window, epsilon=args.epsilon)
    cols = ("n", "sigma", "f0", "sigma_f", "reliability")
    report.update(
        {
            "inputs": {
                "sigma_q": sigma_q,
                "alpha": args.alpha,
                "n_objects": n_objects,
                "epsilon": args.epsilon,
                "delta": args.delta,
                "n_max": args.n_max,
            },
            "n_star": n_star,
            "reliability_at_n_star": plan.reliability,
            "trace": [{"n": n, "reliability": r, "criterion": ok} for n, r, ok in plan.trace],
            "curve": [
                dict({c: getattr(p, c) for c in cols}, mean_f=p.mean_f, error=p.error) for p in curve
            ],
        }
    )
    out = _Output(args.out)
    manifest = _manifest(args, started)
    out.add("report.json", _json_doc(manifest, report))
    if args.format == "csv":
        out.add("curve.csv", _csv(cols, [[getattr(p, c) for c in cols] for p in curve]))
    out.commit(manifest)
    print(f"n* = {n_star}")
    return EXIT_OK


COMMANDS = {"analyze": cmd_analyze, "simulate": cmd_simulate, "plan": cmd_plan}


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    started = time.perf_counter()
    try:
        args = parse_args(parser, argv)
        return COMMANDS[args.command](args, started)
    except UsageError as exc:
        msg = str(exc)
        print(msg if msg.startswith("noisyrank") else f"noisyrank: error: {msg}", file=sys.stderr)
        return EXIT_USAGE
    except (NoiseDominatedError, UnreachableTargetError, ConvergenceError) as exc:
        print(f"noisyrank: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (OSError, InputFileError) as exc:
        print(f"noisyrank: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except ValueError as exc:
        print(f"noisyrank: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
