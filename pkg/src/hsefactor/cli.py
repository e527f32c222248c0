"""Command-line driver.

Settings resolve in increasing priority: built-in defaults, a flat
``key = value`` config file (``--config``), ``HSEFACTOR_<KEY>`` environment
variables, then command-line flags. Exit codes: 0 success, 2 validation,
3 data, 4 numerical degeneracy.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import platform
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .errors import HseError, ValidationError
from .exposure import WINSOR_SCOPES, WinsorSpec
from .fmreg import FmSpec
from .ingest import compute_delta_svi, build_characteristics
from .pipeline import (DEFAULT_FM_SPECS, RunConfig, june_formations, load_inputs,
                       provenance_hash, render_outputs, run_pipeline, stage)
from .report import sha256_file, write_atomic
from .sorts import WEIGHTINGS
from .synth import HETERO, SynthConfig, generate, write_dataset

logger = logging.getLogger("hsefactor")

ENV_PREFIX = "HSEFACTOR_"

# key: (type, default, help)
SETTINGS = {
    "data": (str, None, "directory holding returns.csv, svi.csv, books.csv, riskfree.csv"),
    "returns": (str, None, "returns.csv path (overrides --data)"),
    "svi": (str, None, "svi.csv path"),
    "books": (str, None, "books.csv path"),
    "riskfree": (str, None, "riskfree.csv path"),
    "out": (str, "out", "output directory"),
    "window": (int, 72, "estimation window in months"),
    "min_obs": (int, 24, "minimum aligned months per exposure estimate"),
    "winsor_lower": (float, 1.0, "lower winsorization percentile"),
    "winsor_upper": (float, 99.0, "upper winsorization percentile"),
    "winsor_method": (str, "nearest", "numpy percentile method used for winsorization"),
    "winsor_scope": (str, "per-window", f"one of {', '.join(WINSOR_SCOPES)}"),
    "weighting": (str, "value", f"portfolio weighting: {' | '.join(WEIGHTINGS)}"),
    "deciles": (int, 10, "buckets in the univariate sort"),
    "quintiles": (int, 5, "buckets per dimension in the double sorts"),
    "fm_specs": (str, ",".join(DEFAULT_FM_SPECS), "comma-separated regression specifications"),
    "threads": (int, 1, "worker threads (results do not depend on it)"),
    "seed": (int, 0, "synthetic data seed"),
    "securities": (int, 200, "synthetic securities"),
    "months": (int, 180, "synthetic months"),
    "premium": (float, 0.0, "synthetic premium, percent per month per unit exposure"),
    "noise_sd": (float, 0.05, "synthetic idiosyncratic return sd"),
    "beta_sd": (float, 1.0, "synthetic cross-sectional sd of true exposures"),
    "svi_sd": (float, 0.05, "synthetic log-SVI innovation sd"),
    "neg_be_prob": (float, 0.03, "synthetic probability of negative book equity"),
    "delist_frac": (float, 0.0, "synthetic fraction of securities that delist"),
    "hetero_by": (str, "none", f"synthetic premium heterogeneity: {' | '.join(HETERO)}"),
    "mult_above": (float, 1.0, "premium multiplier above the median"),
    "mult_below": (float, 1.0, "premium multiplier at or below the median"),
}

COMMANDS = {
    "synth": "write a synthetic dataset",
    "ingest-check": "validate input files and print a summary",
    "estimate": "estimate exposures (hse.csv)",
    "sort": "portfolio sort tables",
    "fm": "Fama-MacBeth regression report",
    "run": "full pipeline",
}


def read_config_file(path) -> dict[str, str]:
    values = {}
    try:
        lines = Path(path).read_text(encoding="utf-8").splitlines()
    except FileNotFoundError:
        raise ValidationError(f"config file not found: {path}") from None
    for n, line in enumerate(lines, 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        key = key.strip().replace("-", "_")
        if not sep or key not in SETTINGS:
            raise ValidationError(f"{path}:{n}: unknown or malformed setting {line!r}")
        values[key] = value.strip()
    return values


def _convert(key, raw):
    kind = SETTINGS[key][0]
    try:
        return kind(raw)
    except ValueError:
        raise ValidationError(f"bad value for {key}: {raw!r}") from None


def resolve_settings(args: argparse.Namespace, environ=os.environ) -> dict:
    values = {k: spec[1] for k, spec in SETTINGS.items()}
    if args.config:
        values.update({k: _convert(k, v) for k, v in read_config_file(args.config).items()})
    for key in SETTINGS:
        env = environ.get(ENV_PREFIX + key.upper())
        if env is not None:
            values[key] = _convert(key, env)
    for key in SETTINGS:
        flag = getattr(args, key, None)
        if flag is not None:
            values[key] = flag
    return values


def synth_config(s: dict) -> SynthConfig:
    return SynthConfig(seed=s["seed"], n_securities=s["securities"], n_months=s["months"],
                       premium=s["premium"], noise_sd=s["noise_sd"], beta_sd=s["beta_sd"],
                       svi_sd=s["svi_sd"], neg_be_prob=s["neg_be_prob"],
                       delist_frac=s["delist_frac"], hetero_by=s["hetero_by"],
                       mult_above=s["mult_above"], mult_below=s["mult_below"],
                       window_months=min(s["window"], max(s["months"] - 12, 1)))


def run_config(s: dict) -> RunConfig:
    paths = {}
    for name in ("returns", "svi", "books", "riskfree"):
        p = s[name] or (str(Path(s["data"]) / f"{name}.csv") if s["data"] else None)
        paths[name] = p
    given = [n for n, p in paths.items() if p]
    if given and len(given) < 4:
        missing = sorted(set(paths) - set(given))
        raise ValidationError(f"missing input path(s): {', '.join(missing)}")
    for n, p in paths.items():
        if p and not Path(p).exists():
            raise ValidationError(f"{n} file does not exist: {p}")
    specs = tuple(x.strip() for x in s["fm_specs"].split(",") if x.strip())
    for name in specs:
        FmSpec.parse(name)
    if s["threads"] < 1:
        raise ValidationError("threads must be >= 1")
    if s["window"] < 1 or s["min_obs"] < 2:
        raise ValidationError("window must be >= 1 and min_obs >= 2")
    if s["weighting"] not in WEIGHTINGS:
        raise ValidationError(f"weighting must be one of {WEIGHTINGS}")
    return RunConfig(returns=paths["returns"], svi=paths["svi"], books=paths["books"],
                     riskfree=paths["riskfree"],
                     synth=synth_config(s) if not given else SynthConfig(),
                     window_months=s["window"], min_obs=s["min_obs"],
                     winsor=WinsorSpec(s["winsor_lower"], s["winsor_upper"], s["winsor_method"]),
                     winsor_scope=s["winsor_scope"], weighting=s["weighting"],
                     n_deciles=s["deciles"], n_quintiles=s["quintiles"], fm_specs=specs,
                     threads=s["threads"])


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hsefactor", description=__doc__,
                                     formatter_class=argparse.RawDescriptionHelpFormatter)
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="flat key = value settings file")
    common.add_argument("-v", "--verbose", action="store_true")
    for key, (kind, default, help_) in SETTINGS.items():
        common.add_argument("--" + key.replace("_", "-"), dest=key, type=kind, default=None,
                            help=f"{help_} (default: {default})")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_ in COMMANDS.items():
        sub.add_parser(name, parents=[common], help=help_)
    return parser


def _manifest(cfg: RunConfig, inputs, provenance: str, outputs: dict[str, Path], wall: float) -> str:
    manifest = {
        "provenance_sha256": provenance,
        "config": cfg.provenance(),
        "inputs_sha256": inputs.digests,
        "outputs_sha256": {name: sha256_file(p) for name, p in sorted(outputs.items())},
        "hsefactor": __version__,
        "numpy": np.__version__,
        "python": platform.python_version(),
        "wall_time_s": round(wall, 3),
    }
    return json.dumps(manifest, indent=2, sort_keys=True, default=str) + "\n"


def _write_all(out_dir: Path, files: dict[str, str]) -> dict[str, Path]:
    written = {}
    try:
        for name, text in files.items():
            written[name] = write_atomic(out_dir / name, text)
    except BaseException:
        for p in written.values():
            p.unlink(missing_ok=True)
        raise
    return written


def cmd_synth(s: dict) -> int:
    ds = generate(synth_config(s))
    paths = write_dataset(ds, s["out"])
    print(f"wrote {len(paths)} files to {s['out']}")
    return 0


def cmd_ingest_check(s: dict) -> int:
    cfg = run_config(s)
    inputs = load_inputs(cfg)
    panel = inputs.panel
    dsvi, skipped = compute_delta_svi(inputs.svi)
    print(f"securities: {len(panel.securities)}")
    print(f"calendar:   {panel.start} .. {panel.end} ({panel.n_months} months)")
    print(f"observations: {panel.n_observations()}")
    print(f"dSVI months: {len(dsvi.series)} (skipped {len(skipped)})")
    print(f"book records: {len(inputs.books)}")
    missing_rf = [m for m in panel.calendar if m not in inputs.rf.series]
    print(f"risk-free months missing: {len(missing_rf)}")
    for f in june_formations(panel):
        table, excluded = build_characteristics(panel, inputs.books, f)
        print(f"  {f}: characteristics for {len(table.rows)} securities, {len(excluded)} excluded")
    return 0


STAGES = {"estimate": ("estimate",), "sort": ("estimate", "sort"), "fm": ("estimate", "fm"),
          "run": ("estimate", "sort", "fm")}


def cmd_pipeline(command: str, s: dict) -> int:
    t0 = time.perf_counter()
    cfg = run_config(s)
    stages = STAGES[command]
    with stage("ingest"):
        inputs = load_inputs(cfg)
    result = run_pipeline(cfg, inputs, stages)
    provenance = provenance_hash(cfg, inputs.digests)
    files = render_outputs(result, provenance, stages)
    out_dir = Path(s["out"])
    written = _write_all(out_dir, files)
    written["run-manifest.json"] = write_atomic(
        out_dir / "run-manifest.json",
        _manifest(cfg, inputs, provenance, written, time.perf_counter() - t0))
    for name in sorted(written):
        print(out_dir / name)
    return 0


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        s = resolve_settings(args)
        if args.command == "synth":
            return cmd_synth(s)
        if args.command == "ingest-check":
            return cmd_ingest_check(s)
        return cmd_pipeline(args.command, s)
    except HseError as exc:
        print(f"hsefactor: error: {exc}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
