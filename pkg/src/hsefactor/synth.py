"""Synthetic panels with planted exposures and premia.

Generative model, for security ``i`` and month ``t`` (returns as fractions)::

    log SVI_t  = mu + phi * (log SVI_{t-1} - mu) + svi_sd * u_t
    dSVI_t     = log SVI_t - log SVI_{t-1}
    r_{i,t}    = alpha_i + beta_i * dSVI_t
                 + (premium / 100) * mult_{i,t} * beta_i
                 + noise_sd * e_{i,t}

``u`` and ``e`` are iid standard normal. ``premium`` is in percent per month
per unit of exposure. ``mult_{i,t}`` is 1 unless heterogeneity is enabled,
in which case it is ``mult_above`` or ``mult_below`` depending on the side
of the cross-sectional median (log June market cap, or raw prior-December
book-to-market) at the June formation date that opens month ``t``'s
July-June holding year. Log market caps follow independent Gaussian random
walks; log book-to-market is a per-firm level plus an annual shock, with a
small probability of negative book equity in any year.

SVI has one more month than the return panel so that dSVI exists for the
first panel month. All draws come from ``numpy.random.PCG64(seed)`` in a
fixed order, so a seed reproduces the dataset bit for bit.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import NamedTuple

import numpy as np

from .errors import ValidationError
from .ingest import (SviSeries, format_books_csv, format_returns_csv, format_riskfree_csv,
                     format_svi_csv)
from .panel import BookEquityRecord, MonthStamp, ReturnPanel, RiskFreeSeries

GENERATOR = "numpy.random.PCG64"
HETERO = ("none", "size", "beme")


@dataclass(frozen=True)
class SynthConfig:
    seed: int = 0
    n_securities: int = 200
    n_months: int = 180
    start_year: int = 2000
    start_month: int = 1
    svi_ar: float = 0.5
    svi_sd: float = 0.05
    svi_level: float = 50.0
    beta_mean: float = 0.0
    beta_sd: float = 1.0
    alpha_mean: float = 0.005
    alpha_sd: float = 0.002
    premium: float = 0.0
    noise_sd: float = 0.05
    rf: float = 0.002
    log_me_mean: float = 20.0
    log_me_sd: float = 1.5
    log_me_step_sd: float = 0.05
    log_beme_mean: float = 0.0
    log_beme_sd: float = 0.7
    log_beme_step_sd: float = 0.2
    neg_be_prob: float = 0.03
    preferred_frac: float = 0.05
    hetero_by: str = "none"
    mult_above: float = 1.0
    mult_below: float = 1.0
    delist_frac: float = 0.0
    window_months: int = 72

    def __post_init__(self):
        for f in fields(self):
            if f.name.endswith("_sd") and getattr(self, f.name) < 0:
                raise ValidationError(f"{f.name} must be >= 0, got {getattr(self, f.name)}")
        if not 0 <= self.seed < 2 ** 64:
            raise ValidationError("seed must be a 64-bit unsigned integer")
        if self.n_securities < 1:
            raise ValidationError("n_securities must be >= 1")
        if self.n_months < self.window_months + 12:
            raise ValidationError(
                f"n_months must be >= window_months + 12 ({self.window_months + 12})")
        if not 1 <= self.start_month <= 12:
            raise ValidationError("start_month must be in 1..12")
        if not -1 < self.svi_ar < 1:
            raise ValidationError("svi_ar must lie in (-1, 1)")
        if self.svi_level <= 0:
            raise ValidationError("svi_level must be > 0")
        for name in ("neg_be_prob", "delist_frac", "preferred_frac"):
            if not 0 <= getattr(self, name) <= 1:
                raise ValidationError(f"{name} must lie in [0, 1]")
        if self.hetero_by not in HETERO:
            raise ValidationError(f"hetero_by must be one of {HETERO}")

    @property
    def start(self) -> MonthStamp:
        return MonthStamp(self.start_year, self.start_month)


@dataclass(frozen=True, eq=False)
class GroundTruth:
    securities: tuple[str, ...]
    alpha: np.ndarray
    beta: np.ndarray
    premium: float
    multiplier: np.ndarray   # (n_securities, n_months)
    dsvi: np.ndarray         # (n_months,)
    noise: np.ndarray        # scaled noise, (n_securities, n_months)
    alive: np.ndarray        # bool mask of observed cells

    def reconstruct_returns(self) -> np.ndarray:
        r = _returns(self.alpha, self.beta, self.dsvi, self.premium, self.multiplier, self.noise)
        return np.where(self.alive, r, np.nan)


class SynthDataset(NamedTuple):
    panel: ReturnPanel
    svi: SviSeries
    rf: RiskFreeSeries
    books: list[BookEquityRecord]
    truth: GroundTruth
    config: SynthConfig


def _returns(alpha, beta, dsvi, premium, mult, noise):
    return (alpha[:, None] + beta[:, None] * dsvi[None, :]
            + (premium / 100.0) * mult * beta[:, None] + noise)


def generate(config: SynthConfig) -> SynthDataset:
    rng = np.random.Generator(np.random.PCG64(config.seed))
    n, T = config.n_securities, config.n_months
    start = config.start

    mu, phi = math.log(config.svi_level), config.svi_ar
    x = np.empty(T + 1)
    x[0] = mu + rng.standard_normal() * config.svi_sd / math.sqrt(1 - phi * phi)
    u = rng.standard_normal(T)
    for t in range(1, T + 1):
        x[t] = mu + phi * (x[t - 1] - mu) + config.svi_sd * u[t - 1]
    svi = np.exp(x)
    dsvi = np.log(svi[1:]) - np.log(svi[:-1])

    beta = config.beta_mean + config.beta_sd * rng.standard_normal(n)
    alpha = config.alpha_mean + config.alpha_sd * rng.standard_normal(n)
    log_me = (config.log_me_mean + config.log_me_sd * rng.standard_normal(n))[:, None] \
        + np.cumsum(config.log_me_step_sd * rng.standard_normal((n, T)), axis=1)
    mktcap = np.exp(log_me)

    months = [start.shift(t) for t in range(T)]
    dec_cols = [t for t, m in enumerate(months) if m.month == 12]
    beme_level = config.log_beme_mean + config.log_beme_sd * rng.standard_normal(n)
    beme_shock = config.log_beme_step_sd * rng.standard_normal((n, len(dec_cols)))
    negative = rng.random((n, len(dec_cols))) < config.neg_be_prob
    noise = config.noise_sd * rng.standard_normal((n, T))

    alive = np.ones((n, T), dtype=bool)
    n_delist = int(round(config.delist_frac * n))
    if n_delist:
        who = rng.choice(n, size=n_delist, replace=False)
        when = rng.integers(T // 2, T, size=n_delist)
        for i, t in zip(who, when):
            alive[i, t:] = False

    beme = np.exp(beme_level[:, None] + beme_shock)
    raw_beme = np.where(negative, -0.25 * beme, beme)
    mult = _multipliers(config, months, log_me, dec_cols, raw_beme, alive)
    ret = _returns(alpha, beta, dsvi, config.premium, mult, noise)

    width = max(4, len(str(n)))
    secs = tuple(f"S{i + 1:0{width}d}" for i in range(n))
    panel = ReturnPanel(secs, start, np.where(alive, ret, np.nan), np.where(alive, mktcap, np.nan))
    svi_series = SviSeries({start.shift(t - 1): float(svi[t]) for t in range(T + 1)})
    rf = RiskFreeSeries({m: config.rf for m in months})

    books = []
    for k, t in enumerate(dec_cols):
        dec_cap = mktcap[:, t]
        be = raw_beme[:, k] * dec_cap
        pref = config.preferred_frac * beme[:, k] * dec_cap
        for i in range(n):
            if alive[i, t]:
                books.append(BookEquityRecord(secs[i], months[t], float(be[i] + pref[i]),
                                              float(pref[i]), float(dec_cap[i])))
    truth = GroundTruth(secs, alpha, beta, config.premium, mult, dsvi, noise, alive)
    return SynthDataset(panel, svi_series, rf, books, truth, config)


def _multipliers(config, months, log_me, dec_cols, raw_beme, alive):
    n, T = log_me.shape
    mult = np.ones((n, T))
    if config.hetero_by == "none":
        return mult
    dec_k = {months[t].year: k for k, t in enumerate(dec_cols)}
    side = None
    for t, m in enumerate(months):
        if side is None or m.month == 7:
            fy = m.year if m.month >= 7 else m.year - 1
            tj = min(max(MonthStamp(fy, 6).index - months[0].index, 0), T - 1)
            if config.hetero_by == "size":
                var = log_me[:, tj]
            else:
                # before the first December, fall back to the first one
                var = raw_beme[:, dec_k.get(fy - 1, 0)]
            live = alive[:, tj]
            side = var > np.median(var[live] if live.any() else var)
        mult[:, t] = np.where(side, config.mult_above, config.mult_below)
    return mult


def ground_truth_csv(truth: GroundTruth) -> str:
    lines = ["security,alpha,beta"]
    for s, a, b in zip(truth.securities, truth.alpha, truth.beta):
        lines.append(f"{s},{float(a)!r},{float(b)!r}")
    return "\n".join(lines) + "\n"


def dataset_files(ds: SynthDataset) -> dict[str, str]:
    """File name -> contents for the four input CSVs, ground truth and metadata."""
    meta = {"generator": GENERATOR, "numpy": np.__version__, "config": asdict(ds.config)}
    return {
        "returns.csv": format_returns_csv(ds.panel),
        "svi.csv": format_svi_csv(ds.svi),
        "books.csv": format_books_csv(ds.books),
        "riskfree.csv": format_riskfree_csv(ds.rf),
        "ground_truth.csv": ground_truth_csv(ds.truth),
        "synth_meta.json": json.dumps(meta, indent=2, sort_keys=True) + "\n",
    }


def write_dataset(ds: SynthDataset, out_dir) -> list[Path]:
    from .report import write_atomic

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    return [write_atomic(out / name, text) for name, text in dataset_files(ds).items()]
