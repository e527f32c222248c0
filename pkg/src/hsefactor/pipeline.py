"""End-to-end orchestration: inputs -> exposures -> characteristics -> sorts -> regressions."""

from __future__ import annotations

import hashlib
import json
import logging
from concurrent.futures import ThreadPoolExecutor
from contextlib import contextmanager
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import NamedTuple

from . import __version__
from .errors import DegenerateRegressorError, HseError, ValidationError
from .exposure import ExposureRecord, WinsorSpec, estimate_hse, format_hse_csv
from .fmreg import SUBSAMPLE_SPECS, TABLE4_SPECS, FmResult, FmSpec, build_cross_section, run_fm
from .ingest import (CharacteristicsTable, SviSeries, build_characteristics, compute_delta_svi,
                     load_books, load_return_panel, load_riskfree, load_svi)
from .panel import BookEquityRecord, MonthStamp, ReturnPanel, RiskFreeSeries
from .report import (double_csv, double_text, fm_csv, fm_text, sha256_file, univariate_csv,
                     univariate_text)
from .sorts import DoubleSortResult, SortResult, SortSpec, run_conditional_double_sort, run_univariate_sort
from .synth import SynthConfig, dataset_files, generate

logger = logging.getLogger(__name__)

DEFAULT_FM_SPECS = tuple(s.name for s in TABLE4_SPECS + SUBSAMPLE_SPECS)
INPUT_NAMES = ("returns", "svi", "books", "riskfree")


class StageError(HseError):
    """A pipeline stage failed; carries the stage name and the original error."""

    def __init__(self, stage: str, cause: Exception):
        super().__init__(f"stage {stage!r} failed: {cause}")
        self.stage = stage
        self.cause = cause
        self.exit_code = getattr(cause, "exit_code", 1)


@contextmanager
def stage(name: str):
    try:
        yield
    except HseError as exc:
        if isinstance(exc, StageError):
            raise
        raise StageError(name, exc) from exc


@dataclass(frozen=True)
class RunConfig:
    returns: str | None = None
    svi: str | None = None
    books: str | None = None
    riskfree: str | None = None
    synth: SynthConfig = field(default_factory=SynthConfig)
    window_months: int = 72
    min_obs: int = 24
    winsor: WinsorSpec = WinsorSpec()
    winsor_scope: str = "per-window"
    weighting: str = "value"
    n_deciles: int = 10
    n_quintiles: int = 5
    fm_specs: tuple[str, ...] = DEFAULT_FM_SPECS
    threads: int = 1

    @property
    def uses_synth(self) -> bool:
        return self.returns is None

    def provenance(self) -> dict:
        """Settings that determine the results (thread count excluded)."""
        d = asdict(self)
        d.pop("threads")
        for name in INPUT_NAMES:
            d.pop(name)
        if not self.uses_synth:
            d.pop("synth")
        d["fm_specs"] = list(self.fm_specs)
        return d


class Inputs(NamedTuple):
    panel: ReturnPanel
    svi: SviSeries
    rf: RiskFreeSeries
    books: list[BookEquityRecord]
    digests: dict[str, str]


@dataclass
class PipelineResult:
    exposures: list[ExposureRecord] = field(default_factory=list)
    excluded_formations: dict[MonthStamp, str] = field(default_factory=dict)
    characteristics: CharacteristicsTable | None = None
    univariate: SortResult | None = None
    double: dict[str, DoubleSortResult] = field(default_factory=dict)
    fm: list[FmResult] = field(default_factory=list)


def load_inputs(cfg: RunConfig) -> Inputs:
    if cfg.uses_synth:
        ds = generate(cfg.synth)
        files = dataset_files(ds)
        digests = {n: hashlib.sha256(files[f"{n}.csv"].encode()).hexdigest() for n in INPUT_NAMES}
        return Inputs(ds.panel, ds.svi, ds.rf, ds.books, digests)
    paths = {n: getattr(cfg, n) for n in INPUT_NAMES}
    missing = [n for n, p in paths.items() if p is None]
    if missing:
        raise ValidationError(f"missing input path(s): {', '.join(missing)}")
    digests = {n: sha256_file(p) if Path(p).exists() else "" for n, p in paths.items()}
    return Inputs(load_return_panel(paths["returns"]), load_svi(paths["svi"]),
                  load_riskfree(paths["riskfree"]), load_books(paths["books"]), digests)


def june_formations(panel: ReturnPanel) -> list[MonthStamp]:
    first = panel.start.year if panel.start.month <= 6 else panel.start.year + 1
    return [MonthStamp(y, 6) for y in range(first, panel.end.year + 1)
            if MonthStamp(y, 6) <= panel.end]


def estimate_all(panel, dsvi, cfg: RunConfig):
    """Exposures for every June in the panel; degenerate formation dates are reported."""
    formations = june_formations(panel)

    def one(f):
        try:
            return f, estimate_hse(panel, dsvi, f, cfg.window_months, cfg.min_obs,
                                   cfg.winsor, cfg.winsor_scope), None
        except DegenerateRegressorError as exc:
            return f, None, str(exc)

    if cfg.threads > 1:
        with ThreadPoolExecutor(cfg.threads) as pool:
            results = list(pool.map(one, formations))
    else:
        results = [one(f) for f in formations]
    records, excluded = [], {}
    for f, est, reason in results:
        if est is None:
            logger.warning("formation %s excluded: %s", f, reason)
            excluded[f] = reason
        elif not est.records:
            excluded[f] = "no security met the minimum observation count"
        else:
            records.extend(est.records)
    return records, excluded


def run_pipeline(cfg: RunConfig, inputs: Inputs, stages=("estimate", "sort", "fm")) -> PipelineResult:
    res = PipelineResult()
    with stage("ingest"):
        dsvi, _ = compute_delta_svi(inputs.svi)
    with stage("estimate"):
        res.exposures, res.excluded_formations = estimate_all(inputs.panel, dsvi, cfg)
    if not ({"sort", "fm"} & set(stages)):
        return res
    with stage("characteristics"):
        formations = sorted({r.formation for r in res.exposures})
        res.characteristics = CharacteristicsTable.merge(
            build_characteristics(inputs.panel, inputs.books, f)[0] for f in formations)
    if "sort" in stages:
        with stage("sort"):
            uni = SortSpec("hse", cfg.n_deciles, weighting=cfg.weighting)
            res.univariate = run_univariate_sort(res.exposures, inputs.panel, inputs.rf, uni,
                                                 res.characteristics)
            for outer in ("size", "beme"):
                spec = SortSpec("hse", cfg.n_quintiles, outer, cfg.n_quintiles, cfg.weighting)
                res.double[outer] = run_conditional_double_sort(
                    res.exposures, res.characteristics, inputs.panel, inputs.rf, spec)
    if "fm" in stages:
        with stage("fm"):
            rows = build_cross_section(inputs.panel, inputs.rf, res.exposures, res.characteristics)
            res.fm = [run_fm(rows, FmSpec.parse(name), threads=cfg.threads) for name in cfg.fm_specs]
    return res


def provenance_hash(cfg: RunConfig, digests: dict[str, str]) -> str:
    payload = {"config": cfg.provenance(), "inputs": digests, "version": __version__}
    return hashlib.sha256(json.dumps(payload, sort_keys=True, default=str).encode()).hexdigest()


def render_outputs(res: PipelineResult, provenance: str, stages) -> dict[str, str]:
    from .report import header_line

    files = {}
    if "estimate" in stages:
        files["hse.csv"] = header_line(provenance) + format_hse_csv(res.exposures)
    if "sort" in stages and res.univariate is not None:
        files["sort_hse_deciles.csv"] = univariate_csv(res.univariate, provenance)
        files["sort_hse_deciles.txt"] = univariate_text(res.univariate, provenance)
        for outer, dres in res.double.items():
            files[f"sort_{outer}_hse.csv"] = double_csv(dres, provenance)
            files[f"sort_{outer}_hse.txt"] = double_text(dres, provenance)
    if "fm" in stages:
        files["fm-report.csv"] = fm_csv(res.fm, provenance)
        files["fm-report.txt"] = fm_text(res.fm, provenance)
    return files
