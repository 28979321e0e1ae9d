"""Command line entry point: ``heatlab run`` and ``heatlab sweep``.

Exit codes: 0 all assertions pass, 1 an assertion failed, 2 invalid
configuration, 3 output directory or file I/O failure.
"""

from __future__ import annotations

import argparse
import hashlib
import logging
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

from . import __version__, io
from .carleman import load_calibration
from .config import SCHEMA, build_config, dump_config, parse_text
from .errors import ConfigurationError, HeatlabError

EXIT_OK, EXIT_ASSERT, EXIT_CONFIG, EXIT_IO = 0, 1, 2, 3
OUT_ENV = "HEATLAB_OUT"
log = logging.getLogger("heatlab")


def _digest(path):
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _ensure_writable(out):
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    probe = out / ".write_probe"
    probe.write_text("")
    probe.unlink()
    return out


def emit_manifest(out, cfg, outcome=None, started=None, extra=None):
    """Write ``manifest.json`` atomically; only ``wall_clock_s`` varies between identical runs."""
    files = [Path(f) for f in (outcome.files if outcome else [])]
    constants = {"C1_cal": load_calibration()["C1_cal"]}
    if outcome:
        constants.update(outcome.constants)
    man = {
        "version": __version__,
        "scenario": cfg["scenario"],
        "seed": cfg["seed"],
        "config": cfg.echo(),
        "constants": constants,
        "outputs": {f.name: _digest(f) for f in files},
        "assertions": dict(outcome.assertions) if outcome else {},
        "passed": bool(outcome.passed) if outcome else False,
        "summary": dict(outcome.summary) if outcome else {},
        "wall_clock_s": round(time.time() - started, 3) if started else None,
    }
    if extra:
        man.update(extra)
    return io.write_json(Path(out) / "manifest.json", man)


def _load_raw(path):
    return parse_text(Path(path).read_text())


def run_config(raw, out, overrides=None):
    """Validate, run and write the manifest; returns ``(exit code, outcome, message)``."""
    from .scenarios import build_setup, run

    try:
        cfg = build_config(raw, overrides)
        build_setup(cfg)
    except ConfigurationError as exc:
        return EXIT_CONFIG, None, f"config error: {exc}"
    try:
        out = _ensure_writable(out)
    except OSError as exc:
        return EXIT_IO, None, f"cannot write to {out}: {exc}"
    started = time.time()
    try:
        io.atomic_write_text(out / "config.echo", dump_config(cfg))
        outcome = run(cfg, out)
        emit_manifest(out, cfg, outcome, started)
    except ConfigurationError as exc:
        return EXIT_CONFIG, None, f"config error: {exc}"
    except OSError as exc:
        return EXIT_IO, None, f"I/O error: {exc}"
    except HeatlabError as exc:
        from .scenarios import Outcome

        outcome = Outcome(assertions={f"completed ({type(exc).__name__})": False})
        try:
            emit_manifest(out, cfg, outcome, started)
        except OSError:
            return EXIT_IO, outcome, f"I/O error while reporting {exc}"
        return EXIT_ASSERT, outcome, f"run failed: {exc}"
    failed = [k for k, v in outcome.assertions.items() if not v]
    if failed:
        return EXIT_ASSERT, outcome, "assertion failed: " + ", ".join(failed)
    return EXIT_OK, outcome, "all assertions passed"


def _cell(args):
    raw, out, overrides = args
    code, outcome, msg = run_config(raw, out, overrides)
    return code, (dict(outcome.summary) if outcome else {}), msg


def sweep(raw, out, param, values, workers=1, overrides=None):
    """One run per value (cells in ``out/cell_###``) and an aggregated ``sweep.csv``.

    Sweeping ``hum.epsilon`` clears ``hum.eps_list`` so the swept value is
    the one used.
    """
    if param not in SCHEMA or SCHEMA[param].kind not in ("int", "float", "floats"):
        return EXIT_CONFIG, f"config error: {param}: not a numeric key"
    if not values:
        return EXIT_CONFIG, "config error: empty value list"
    try:
        out = _ensure_writable(out)
    except OSError as exc:
        return EXIT_IO, f"cannot write to {out}: {exc}"
    jobs = []
    for i, v in enumerate(values):
        ov = dict(overrides or {})
        ov[param] = v
        if param == "hum.epsilon":
            ov["hum.eps_list"] = ()
        jobs.append((raw, str(out / f"cell_{i:03d}"), ov))
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_cell, jobs))
    else:
        results = [_cell(j) for j in jobs]
    keys = sorted({k for _, s, _ in results for k in s})
    rows = []
    for v, (code, summ, msg) in zip(values, results):
        rows.append([v, code, code == EXIT_OK, "" if code == EXIT_OK else msg.replace(",", ";")]
                    + [summ.get(k) for k in keys])
    try:
        io.write_csv(out / "sweep.csv", ["value", "exit_code", "passed", "failure"] + keys, rows)
    except OSError as exc:
        return EXIT_IO, f"I/O error: {exc}"
    worst = max(code for code, _, _ in results)
    return (EXIT_OK if worst == EXIT_OK else EXIT_ASSERT), f"{sum(c == 0 for c, _, _ in results)}/{len(values)} cells passed"


def _parse_values(text):
    return [p.strip() for p in text.split(",") if p.strip()]


def build_parser():
    p = argparse.ArgumentParser(prog="heatlab", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"heatlab {__version__}")
    sub = p.add_subparsers(dest="command", required=True)
    for name in ("run", "sweep"):
        sp = sub.add_parser(name)
        sp.add_argument("config")
        sp.add_argument("--out", default=None, help=f"output directory (default ${OUT_ENV} or ./heatlab_out)")
        sp.add_argument("--seed", type=int, default=None)
        sp.add_argument("--workers", type=int, default=1)
        sp.add_argument("-v", "--verbose", action="store_true")
        if name == "sweep":
            sp.add_argument("--param", required=True)
            sp.add_argument("--values", required=True, help="comma separated values")
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    out = Path(args.out or os.environ.get(OUT_ENV) or "heatlab_out")
    overrides = {} if args.seed is None else {"seed": args.seed}
    if args.workers < 1:
        print("config error: --workers must be >= 1", file=sys.stderr)
        return EXIT_CONFIG
    try:
        raw = _load_raw(args.config)
    except OSError as exc:
        print(f"I/O error: cannot read {args.config}: {exc}", file=sys.stderr)
        return EXIT_IO
    except ConfigurationError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    if args.command == "run":
        code, _, msg = run_config(raw, out, overrides)
    else:
        code, msg = sweep(raw, out, args.param, _parse_values(args.values), args.workers, overrides)
    print(msg, file=sys.stderr if code else sys.stdout)
    return code


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
