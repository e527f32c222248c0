import json

import numpy as np
import pytest

from hsefactor.errors import ValidationError
from hsefactor.exposure import WinsorSpec
from hsefactor.ingest import compute_delta_svi, load_return_panel
from hsefactor.synth import SynthConfig, dataset_files, generate, write_dataset

from helpers import prepare


def test_same_seed_same_files():
    cfg = SynthConfig(seed=3, n_securities=20, n_months=90, window_months=48)
    assert dataset_files(generate(cfg)) == dataset_files(generate(cfg))
    other = dataset_files(generate(SynthConfig(seed=4, n_securities=20, n_months=90,
                                               window_months=48)))
    assert other["returns.csv"] != dataset_files(generate(cfg))["returns.csv"]


def test_written_files_roundtrip(tmp_path):
    ds = generate(SynthConfig(seed=2, n_securities=10, n_months=90, delist_frac=0.5,
                              window_months=48))
    paths = write_dataset(ds, tmp_path / "new" / "dir")
    names = sorted(p.name for p in paths)
    assert names == ["books.csv", "ground_truth.csv", "returns.csv", "riskfree.csv",
                     "svi.csv", "synth_meta.json"]
    assert load_return_panel(tmp_path / "new" / "dir" / "returns.csv") == ds.panel
    meta = json.loads((tmp_path / "new" / "dir" / "synth_meta.json").read_text())
    assert meta["generator"] == "numpy.random.PCG64" and meta["config"]["seed"] == 2


def test_reconstruct_returns_exact(small_dataset):
    ds = small_dataset
    assert np.array_equal(ds.truth.reconstruct_returns(), ds.panel.ret, equal_nan=True)
    assert np.array_equal(ds.truth.alive, ~np.isnan(ds.panel.ret))


def test_svi_positive_and_dsvi_matches(small_dataset):
    ds = small_dataset
    assert min(ds.svi.series.values()) > 0
    dsvi, skipped = compute_delta_svi(ds.svi)
    assert not skipped
    assert np.allclose(list(dsvi.series.values()), ds.truth.dsvi, atol=1e-12)
    assert ds.panel.start in dsvi.series


def test_noiseless_exposures_recovered():
    ds = generate(SynthConfig(seed=8, n_securities=40, n_months=100, noise_sd=0.0,
                              window_months=48))
    recs, _, _ = prepare(ds, window=48, wins=WinsorSpec(0, 100))
    truth = dict(zip(ds.truth.securities, ds.truth.beta))
    assert recs
    for r in recs:
        assert r.beta_svi == pytest.approx(truth[r.security], rel=1e-10, abs=1e-10)


def test_negative_book_equity_present():
    ds = generate(SynthConfig(seed=1, n_securities=200, n_months=96, neg_be_prob=0.2,
                              window_months=48))
    assert any(b.book_equity <= 0 for b in ds.books)


def test_heterogeneous_multiplier():
    ds = generate(SynthConfig(seed=1, n_securities=50, n_months=96, hetero_by="size",
                              mult_above=1.0, mult_below=0.0, window_months=48))
    m = ds.truth.multiplier
    assert set(np.unique(m)) == {0.0, 1.0}
    assert np.all(m.sum(axis=0) == 25)


@pytest.mark.parametrize("kw,field", [
    ({"noise_sd": -0.1}, "noise_sd"), ({"beta_sd": -1.0}, "beta_sd"),
    ({"n_months": 50}, "n_months"), ({"hetero_by": "age"}, "hetero_by"),
    ({"delist_frac": 2.0}, "delist_frac"), ({"svi_ar": 1.0}, "svi_ar")])
def test_config_validation(kw, field):
    with pytest.raises(ValidationError, match=field):
        SynthConfig(**kw)
