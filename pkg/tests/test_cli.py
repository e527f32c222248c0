import json
import os
import subprocess
import sys

import pytest

from hsefactor.cli import ENV_PREFIX, build_parser, main, resolve_settings

SYNTH = ["--seed", "7", "--securities", "60", "--months", "120", "--premium", "2",
         "--window", "48"]


@pytest.fixture(scope="module")
def data_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("data")
    assert main(["synth", *SYNTH, "--out", str(out)]) == 0
    return out


@pytest.fixture(scope="module")
def run_dir(data_dir, tmp_path_factory):
    out = tmp_path_factory.mktemp("run")
    assert main(["run", "--data", str(data_dir), "--window", "48", "--out", str(out)]) == 0
    return out


def _reports(d):
    return {p.name: p.read_bytes() for p in sorted(d.iterdir())
            if p.name != "run-manifest.json"}


def test_synth_writes_inputs(data_dir):
    for name in ("returns.csv", "svi.csv", "books.csv", "riskfree.csv", "ground_truth.csv"):
        assert (data_dir / name).stat().st_size > 0


def test_synth_rejects_negative_sd(tmp_path, capsys):
    code = main(["synth", "--noise-sd", "-1", "--out", str(tmp_path)])
    assert code == 2
    assert "noise_sd" in capsys.readouterr().err


def test_missing_column_exit_code(data_dir, tmp_path, capsys):
    for name in ("svi.csv", "books.csv", "riskfree.csv"):
        (tmp_path / name).write_bytes((data_dir / name).read_bytes())
    lines = (data_dir / "returns.csv").read_text().splitlines()
    cut = [",".join(line.split(",")[:4]) for line in lines]
    (tmp_path / "returns.csv").write_text("\n".join(cut) + "\n")
    code = main(["run", "--data", str(tmp_path), "--out", str(tmp_path / "out")])
    assert code == 3
    assert "mktcap" in capsys.readouterr().err
    assert not (tmp_path / "out").exists() or not any((tmp_path / "out").iterdir())


def test_missing_input_file(tmp_path):
    assert main(["run", "--data", str(tmp_path), "--out", str(tmp_path / "o")]) == 2


def test_run_outputs(run_dir):
    names = set(os.listdir(run_dir))
    assert {"hse.csv", "sort_hse_deciles.csv", "sort_hse_deciles.txt", "sort_size_hse.csv",
            "sort_beme_hse.csv", "fm-report.csv", "fm-report.txt", "run-manifest.json"} <= names
    manifest = json.loads((run_dir / "run-manifest.json").read_text())
    assert set(manifest["outputs_sha256"]) == names - {"run-manifest.json"}
    assert "wall_time_s" in manifest
    first = (run_dir / "fm-report.csv").read_text().splitlines()[0]
    assert first.startswith("# hsefactor") and manifest["provenance_sha256"] in first


def test_planted_premium_positive(run_dir):
    rows = [line.split(",") for line in (run_dir / "fm-report.csv").read_text().splitlines()
            if not line.startswith("#")]
    hs = [r for r in rows if r[0] == "hs" and r[1] == "hs"]
    assert float(hs[0][2]) > 0


def test_rerun_and_threads_identical(data_dir, run_dir, tmp_path):
    again = tmp_path / "again"
    threaded = tmp_path / "threaded"
    assert main(["run", "--data", str(data_dir), "--window", "48", "--out", str(again)]) == 0
    assert main(["run", "--data", str(data_dir), "--window", "48", "--threads", "4",
                 "--out", str(threaded)]) == 0
    base = _reports(run_dir)
    assert _reports(again) == base
    assert _reports(threaded) == base


def test_subcommand_stages(data_dir, tmp_path):
    assert main(["estimate", "--data", str(data_dir), "--window", "48",
                 "--out", str(tmp_path / "e")]) == 0
    assert sorted(os.listdir(tmp_path / "e")) == ["hse.csv", "run-manifest.json"]
    assert main(["fm", "--data", str(data_dir), "--window", "48", "--fm-specs", "hs,s_hs",
                 "--out", str(tmp_path / "f")]) == 0
    text = (tmp_path / "f" / "fm-report.csv").read_text()
    assert "s_hs," in text and "s_h_hs" not in text
    assert main(["fm", "--data", str(data_dir), "--fm-specs", "bogus",
                 "--out", str(tmp_path / "g")]) == 2


def test_ingest_check(data_dir, capsys):
    assert main(["ingest-check", "--data", str(data_dir)]) == 0
    assert "securities: 60" in capsys.readouterr().out


def test_settings_precedence(tmp_path):
    cfg = tmp_path / "h.cfg"
    cfg.write_text("# comment\nwindow = 60\nseed = 5\nthreads = 2\n")
    parser = build_parser()
    args = parser.parse_args(["run", "--config", str(cfg), "--threads", "3"])
    env = {ENV_PREFIX + "SEED": "9", ENV_PREFIX + "THREADS": "8"}
    s = resolve_settings(args, env)
    assert (s["window"], s["seed"], s["threads"], s["min_obs"]) == (60, 9, 3, 24)
    cfg.write_text("colour = blue\n")
    with pytest.raises(Exception, match="colour"):
        resolve_settings(parser.parse_args(["run", "--config", str(cfg)]), {})


def test_module_entry_point(tmp_path):
    out = subprocess.run([sys.executable, "-m", "hsefactor", "synth", "--securities", "5",
                          "--months", "90", "--window", "48", "--out", str(tmp_path)],
                         capture_output=True, text=True)
    assert out.returncode == 0, out.stderr
    assert (tmp_path / "returns.csv").exists()
