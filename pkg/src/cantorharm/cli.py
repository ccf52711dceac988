"""Command line entry point: ``cantorharm <subcommand> [flags]``.

Every subcommand that writes files does so inside ``--out`` only, guarded by
a lock file, and finishes with ``manifest.json`` listing the flags, the
generator spec and a sha256 for every produced file.  A manifest's
``flags`` block can be fed back through ``--config`` to repeat the run.

Exit codes: 0 success, 1 infeasible run or failed check, 2 usage error.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import math
import os
import sys
import time
from contextlib import contextmanager
from pathlib import Path

import numpy as np

from . import __version__
from .calibrate import run_construction, width
from .core import GeneratorSpec, Level, ParamTree, RingAxis
from .exceptions import CantorError, InfeasibleError, ResourceLimitError, UsageError
from .feasibility import feasible, search_max_delta
from .verify import (
    ahlfors_report,
    green_ratio_sweep,
    measure_comparison,
    ring_estimate,
    summary_json,
    wos_sample,
)

ENV_SEED = "CANTORHARM_SEED"
ENV_THREADS = "CANTORHARM_THREADS"

SUBCOMMANDS = ("calibrate", "bounds", "green", "ahlfors", "wos", "export")

DEFAULTS = {
    "a": 2.217,
    "r": 0.0623,
    "alphabet": "line",
    "n": None,
    "seed": 0,
    "walks": 10**5,
    "depth": 3,
    "eps": None,
    "budget": 1e-9,
    "method": "naive",
    "out": None,
    "force": False,
    "control": False,
    "search": False,
    "samples": None,
    "pole": "0,3",
    "resolution": 200,
    "rounds": 3,
    "workers": 1,
    "params": None,
    "runs": [],
}

DEFAULT_N = {"calibrate": 12, "green": 12, "ahlfors": 10, "wos": 6}
GREEN_SCALES = 2.0 ** -np.arange(2, 11)


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_help(sys.stderr)
        raise UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    """All flag defaults are suppressed so explicit flags can be told apart."""
    parser = _Parser(prog="cantorharm", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"cantorharm {__version__}")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)
    for name in SUBCOMMANDS:
        p = sub.add_parser(name, argument_default=argparse.SUPPRESS)
        p.add_argument("--config", help="JSON file of flag values (explicit flags win)")
        p.add_argument("--out", help="output directory")
        p.add_argument("--a", type=float, help="spacing ceiling a")
        p.add_argument("--r", type=float, help="contraction ratio r")
        p.add_argument("--alphabet", help="line | roots:N | ring:n")
        p.add_argument("--n", type=int, help="number of generations / level")
        p.add_argument("--seed", type=int)
        p.add_argument("--walks", type=int)
        p.add_argument("--depth", type=int)
        p.add_argument("--eps", type=float)
        p.add_argument("--budget", type=float, help="hierarchical summation error budget")
        p.add_argument("--method", choices=["naive", "hier"])
        p.add_argument("--force", action="store_true")
        p.add_argument("--control", action="store_true", help="self-similar set, every spacing 1")
        p.add_argument("--search", action="store_true", help="search the (a, r) window")
        p.add_argument("--samples", type=int)
        p.add_argument("--pole", help="x,y")
        p.add_argument("--resolution", type=int)
        p.add_argument("--rounds", type=int)
        p.add_argument("--workers", type=int)
        p.add_argument("--params", help="ParamTree JSON to reuse instead of calibrating")
        if name == "export":
            p.add_argument("runs", nargs="*", help="run directories")
    return parser


def resolve_options(argv) -> dict:
    parser = build_parser()
    ns = vars(parser.parse_args(argv))
    command = ns.pop("command", None)
    if command is None:
        parser.print_help(sys.stderr)
        raise UsageError("missing subcommand")
    opts = dict(DEFAULTS)
    cfg_path = ns.get("config")
    if cfg_path:
        try:
            cfg = json.loads(Path(cfg_path).read_text())
        except (OSError, ValueError) as exc:
            raise UsageError(f"cannot read config {cfg_path}: {exc}") from exc
        cfg = cfg.get("flags", cfg)
        unknown = set(cfg) - set(DEFAULTS)
        if unknown:
            raise UsageError(f"unknown config keys: {sorted(unknown)}")
        opts.update(cfg)
    env_seed = os.environ.get(ENV_SEED)
    if env_seed is not None:
        try:
            opts["seed"] = int(env_seed)
        except ValueError as exc:
            raise UsageError(f"{ENV_SEED} must be an integer") from exc
    ns.pop("config", None)
    opts.update(ns)
    cap = os.environ.get(ENV_THREADS)
    if cap is not None:
        opts["workers"] = max(1, min(int(opts["workers"]), int(cap)))
    if opts["n"] is None:
        opts["n"] = DEFAULT_N.get(command)
    opts["command"] = command
    return opts


# ---------------------------------------------------------------------------
# output plumbing
# ---------------------------------------------------------------------------


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


class RunDir:
    """Output directory with a lock file and a list of produced files."""

    def __init__(self, path):
        self.path = Path(path)
        self.files = []

    @contextmanager
    def locked(self):
        self.path.mkdir(parents=True, exist_ok=True)
        lock = self.path / ".lock"
        try:
            fd = os.open(lock, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
        except FileExistsError as exc:
            raise UsageError(f"{self.path} is locked by another run") from exc
        os.close(fd)
        try:
            yield self
        finally:
            lock.unlink(missing_ok=True)

    def write(self, name, text):
        p = self.path / name
        p.write_text(text)
        self.files.append(name)
        return p

    def manifest(self, opts, spec, inputs, t0):
        flags = {k: v for k, v in opts.items() if k != "command"}
        data = {
            "tool": "cantorharm",
            "version": __version__,
            "subcommand": opts["command"],
            "flags": flags,
            "spec": spec.to_dict() if spec is not None else None,
            "seed": opts.get("seed"),
            "inputs": {str(p): sha256_file(p) for p in inputs},
            "outputs": {f: sha256_file(self.path / f) for f in self.files},
            "wall_time": time.perf_counter() - t0,
        }
        (self.path / "manifest.json").write_text(json.dumps(data, indent=1, sort_keys=True, default=str))
        return data


def _spec(opts) -> GeneratorSpec:
    n = opts["n"] or 12
    return GeneratorSpec(opts["alphabet"], opts["r"], opts["a"], n)


def _out(opts, default):
    return RunDir(opts["out"] or default)


def _pole(text):
    try:
        x, y = (float(v) for v in str(text).split(","))
    except ValueError as exc:
        raise UsageError(f"--pole expects x,y, got {text!r}") from exc
    return complex(x, y)


def _progress(row):
    print(f"generation {row.n}: oscillation {row.oscillation:.3e} (budget {row.budget:.3e})", file=sys.stderr)


def _construction(opts, spec, n, inputs):
    """Calibrated (or control) params, from --params when given."""
    if opts.get("params"):
        tree = ParamTree.load(opts["params"])
        inputs.append(Path(opts["params"]))
        if tree.depth < n:
            raise UsageError(f"params reach generation {tree.depth}, need {n}")
        return tree
    con = run_construction(
        spec,
        n,
        calibrate=not opts["control"],
        method=opts["method"],
        err_budget=opts["budget"],
        force=opts["force"],
    )
    return con.params


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------


def cmd_calibrate(opts) -> int:
    spec = _spec(opts)
    out = _out(opts, "cantorharm-calibrate")
    t0 = time.perf_counter()
    with out.locked():
        try:
            con = run_construction(
                spec,
                opts["n"],
                calibrate=not opts["control"],
                method=opts["method"],
                err_budget=opts["budget"],
                force=opts["force"],
                diagnostics=False,
                progress=_progress,
            )
        except InfeasibleError as exc:
            out.write("error.json", json.dumps({
                "error": str(exc), "generation": exc.generation,
                "oscillation": exc.oscillation, "budget": exc.budget,
            }, indent=1))
            out.manifest(opts, spec, [], t0)
            print(f"infeasible: {exc}", file=sys.stderr)
            return 1
        trace = con.trace
        out.write("params.json", con.params.to_json())
        out.write("trace.csv", trace.to_csv())
        out.write("profile.csv", trace.final_profile.to_csv())
        out.write("level.csv", con.level.to_csv())
        a_vals = [v for v in con.params.values]
        summary = {
            "calibrated": not opts["control"],
            "generations": opts["n"],
            "all_within_budget": trace.all_within_budget,
            "final_oscillation": trace.final_profile.oscillation,
            "final_normalized_oscillation": trace.final_profile.normalized_oscillation,
            "c_n": trace.final_profile.c,
            "width": width(spec),
            "delta": spec.delta,
            "a_min": min((float(v.min()) for v in a_vals), default=1.0),
            "a_max": max((float(v.max()) for v in a_vals), default=1.0),
        }
        out.write("summary.json", json.dumps(summary, indent=1, sort_keys=True))
        out.manifest(opts, spec, [], t0)
    print(json.dumps(summary, indent=1, sort_keys=True))
    if opts["control"]:
        return 0
    return 0 if trace.all_within_budget else 1


def cmd_bounds(opts) -> int:
    t0 = time.perf_counter()
    if opts["search"]:
        res = search_max_delta(opts["alphabet"], opts["resolution"], opts["rounds"])
        rep = res.best
        payload = {"best": rep.to_dict(), "empty": res.empty,
                   "reference": feasible(opts["a"], opts["r"], opts["alphabet"]).to_dict()}
    else:
        res = None
        rep = feasible(opts["a"], opts["r"], opts["alphabet"])
        payload = rep.to_dict()
    text = json.dumps(payload, indent=1, sort_keys=True)
    print(text)
    if opts["out"]:
        out = RunDir(opts["out"])
        with out.locked():
            out.write("bounds.json", text)
            if res is not None:
                out.write("raster.csv", res.raster_csv())
            out.manifest(opts, None, [], t0)
    return 0


def _planar(spec):
    if isinstance(spec.alphabet, RingAxis):
        raise UsageError("this subcommand needs a planar alphabet (line or roots:N)")


def cmd_green(opts) -> int:
    spec = _spec(opts)
    _planar(spec)
    n = opts["n"]
    out = _out(opts, "cantorharm-green")
    t0 = time.perf_counter()
    inputs = []
    with out.locked():
        params = _construction(opts, spec, n, inputs)
        level = Level(params, n)
        samples = opts["samples"] or 32
        sweep = green_ratio_sweep(level, GREEN_SCALES, samples, opts["seed"])
        out.write("green_sweep.csv", sweep.to_csv())
        gens = list(range(4, min(10, n) + 1))
        summary = {"global_ratio": sweep.global_ratio, "positive": sweep.positive, "samples": samples, "level": n}
        if gens:
            ring = ring_estimate([Level(params, k) for k in gens], seed=opts["seed"])
            rows = "n,C_n\n" + "".join(f"{g},{c!r}\n" for g, c in zip(ring.generations, ring.constants.tolist()))
            out.write("ring_estimate.csv", rows)
            summary["ring_constant_spread"] = ring.spread
        out.write("green.json", json.dumps(summary, indent=1, sort_keys=True))
        out.manifest(opts, spec, inputs, t0)
    print(json.dumps(summary, indent=1, sort_keys=True))
    return 0 if sweep.positive else 1


def cmd_ahlfors(opts) -> int:
    spec = _spec(opts)
    n = opts["n"]
    out = _out(opts, "cantorharm-ahlfors")
    t0 = time.perf_counter()
    inputs = []
    with out.locked():
        params = _construction(opts, spec, n, inputs)
        rep = ahlfors_report(Level(params, n), spec, opts["samples"], opts["seed"])
        text = summary_json(rep.to_dict())
        out.write("ahlfors.json", text)
        out.manifest(opts, spec, inputs, t0)
    print(text)
    return 0


def cmd_wos(opts) -> int:
    spec = _spec(opts)
    _planar(spec)
    n = opts["n"]
    out = _out(opts, "cantorharm-wos")
    t0 = time.perf_counter()
    inputs = []
    with out.locked():
        params = _construction(opts, spec, n, inputs)
        try:
            res = wos_sample(
                _pole(opts["pole"]), Level(params, n), spec, eps=opts["eps"], walks=opts["walks"],
                depth=opts["depth"], seed=opts["seed"], workers=opts["workers"],
            )
        except ResourceLimitError as exc:
            print(f"walk-on-spheres failed: {exc}", file=sys.stderr)
            return 1
        comp = measure_comparison(res)
        out.write("wos.csv", res.to_csv())
        out.write("comparison.csv", comp.to_csv())
        summary = res.summary()
        summary["band_ratio"] = comp.band_ratio
        summary["calibrated"] = not opts["control"]
        out.write("wos.json", summary_json(summary))
        out.manifest(opts, spec, inputs, t0)
    print(summary_json(summary))
    return 0


def _read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def _label(run: Path):
    s = run / "summary.json"
    if s.exists():
        return "calibrated" if json.loads(s.read_text()).get("calibrated", True) else "control"
    return run.name


def cmd_export(opts) -> int:
    runs = [Path(r) for r in opts["runs"]]
    if not runs:
        raise UsageError("export needs at least one run directory")
    for r in runs:
        if not r.is_dir() or not any(r.iterdir()):
            raise UsageError(f"run directory {r} is missing or empty")
    out = _out(opts, "cantorharm-export")
    t0 = time.perf_counter()
    inputs = []
    traces = {}
    with out.locked():
        for r in runs:
            label = _label(r)
            if label in traces:
                label = f"{label}_{r.name}"
            produced = False
            if (r / "trace.csv").exists():
                rows = _read_csv(r / "trace.csv")
                inputs.append(r / "trace.csv")
                traces[label] = rows
                lines = ["n,osc,osc_normalized,budget,log10_osc"]
                for row in rows:
                    osc = float(row["osc"])
                    lg = repr(math.log10(osc)) if osc > 0 else ""
                    lines.append(f"{row['n']},{row['osc']},{row['osc_normalized']},{row['budget']},{lg}")
                out.write(f"oscillation_{label}.csv", "\n".join(lines) + "\n")
                produced = True
            for src, dst in (("raster.csv", "margin_raster"), ("green_sweep.csv", "green_ratio"),
                             ("comparison.csv", "wos_band")):
                if (r / src).exists():
                    inputs.append(r / src)
                    out.write(f"{dst}_{label}.csv", (r / src).read_text())
                    produced = True
            if not produced:
                raise UsageError(f"{r} holds no exportable artifacts")
        if len(traces) >= 2:
            labels = list(traces)
            ns = [row["n"] for row in traces[labels[0]]]
            for lab in labels[1:]:
                if [row["n"] for row in traces[lab]] != ns:
                    raise UsageError("traces to merge cover different generations")
            head = ["n"] + [f"{c}_{lab}" for lab in labels for c in ("osc", "osc_normalized")]
            lines = [",".join(head)]
            for i, n in enumerate(ns):
                vals = [n] + [traces[lab][i][c] for lab in labels for c in ("osc", "osc_normalized")]
                lines.append(",".join(vals))
            out.write("comparison.csv", "\n".join(lines) + "\n")
        out.manifest(opts, None, inputs, t0)
    print("\n".join(str(out.path / f) for f in out.files))
    return 0


COMMANDS = {
    "calibrate": cmd_calibrate,
    "bounds": cmd_bounds,
    "green": cmd_green,
    "ahlfors": cmd_ahlfors,
    "wos": cmd_wos,
    "export": cmd_export,
}


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    try:
        opts = resolve_options(argv)
        return COMMANDS[opts["command"]](opts)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 2
    except CantorError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
