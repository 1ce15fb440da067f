import csv
import textwrap

import pytest
from click.testing import CliRunner

from fleetwatch.cli import main
from fleetwatch.config import ConfigError, load_config
from fleetwatch.harness import sweep_rows
from fleetwatch.strategies import R_GRID, STRATEGIES

FAST_INI = """\
[experiment]
seed = 3
manifest = fleet/manifest.json
output_dir = results
strategies = H-9m, H-2m, H-Inc, H-H, H-M, UFA

[fleet]
output_dir = fleet
n_units = 4
n_faulted = 1
period_minutes = 360

[helm]
n_neurons = 60
k = 3

[ufan]
epochs = 3

[incremental]
r_grid = 0.1, 0.2
"""


def write_ini(tmp_path, text=FAST_INI):
    path = tmp_path / "exp.ini"
    path.write_text(textwrap.dedent(text))
    return path


class TestConfig:
    def test_defaults(self):
        cfg = load_config(None)
        assert cfg.strategies == list(STRATEGIES) and cfg.r_grid == R_GRID and cfg.workers == 1
        assert cfg.helm.k == 8 and cfg.ufan.batch_size == 150

    def test_parse_and_resolve(self, tmp_path):
        cfg = load_config(write_ini(tmp_path))
        assert cfg.seed == 3 and cfg.ufan.seed == 3 and cfg.ufan.epochs == 3
        assert cfg.manifest == tmp_path / "fleet" / "manifest.json"
        assert cfg.fleet == {"n_units": 4, "n_faulted": 1, "period_minutes": 360.0}
        assert cfg.helm.n_neurons == 60 and cfg.r_grid == (0.1, 0.2)

    def test_override_seed_propagates(self, tmp_path):
        cfg = load_config(write_ini(tmp_path)).with_overrides(seed=9, workers=2)
        assert cfg.seed == 9 and cfg.ufan.seed == 9 and cfg.workers == 2

    @pytest.mark.parametrize("text", [
        "[experiment]\nstrategies = H-9m, H-X\n",
        "[experiment]\ncolour = red\n",
        "[helm]\nk = many\n",
        "[gpu]\nx = 1\n",
        "[incremental]\nr_grid = 0.5, 1.5\n",
        "[experiment]\nall_pairs = mmd\n",
    ])
    def test_rejects_bad_files(self, tmp_path, text):
        with pytest.raises(ConfigError):
            load_config(write_ini(tmp_path, text))

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigError):
            load_config(tmp_path / "nope.ini")


def test_sweep_counts():
    pairs = [
        {"unit_id": "u", "method": "helm", "fp_percent": "4.0", "detected": "1", "error": ""},
        {"unit_id": "u", "method": "helm", "fp_percent": "12.0", "detected": "1", "error": ""},
        {"unit_id": "u", "method": "helm", "fp_percent": "1.0", "detected": "0", "error": ""},
        {"unit_id": "u", "method": "helm", "fp_percent": "100.0", "detected": "0", "error": "boom"},
    ]
    assert sweep_rows(pairs, (4, 5, 15)) == [["u", "helm", "4", 0], ["u", "helm", "5", 1], ["u", "helm", "15", 2]]


@pytest.fixture(scope="module")
def finished_run(tmp_path_factory):
    root = tmp_path_factory.mktemp("exp")
    ini = write_ini(root)
    runner = CliRunner()
    gen = runner.invoke(main, ["generate", "--config", str(ini)])
    assert gen.exit_code == 0, gen.output
    res = runner.invoke(main, ["run", "--config", str(ini)])
    assert res.exit_code == 0, res.output
    return root, ini


class TestCli:
    def test_outputs_present(self, finished_run):
        root, _ = finished_run
        out = root / "results"
        for name in ("reports.csv", "pairs.csv", "summary.csv", "timings.csv"):
            assert (out / name).is_file()
        reports = list(csv.DictReader(open(out / "reports.csv")))
        assert {r["strategy"] for r in reports} == set(STRATEGIES)
        pairs = list(csv.DictReader(open(out / "pairs.csv")))
        assert len(pairs) == 2 * 3 and {p["method"] for p in pairs} == {"helm", "ufan"}
        assert len(list((out / "flags").glob("*.csv"))) == 6
        assert len(list((out / "curves").glob("*.csv"))) == 3
        assert (out / "models" / f"{reports[0]['unit_id']}__H-2m.json").is_file()

    def test_rerun_is_byte_identical(self, finished_run, tmp_path):
        root, ini = finished_run
        res = CliRunner().invoke(main, ["run", "--config", str(ini), "--out", str(tmp_path / "again")])
        assert res.exit_code == 0, res.output
        for name in ("summary.csv", "reports.csv", "pairs.csv"):
            assert (tmp_path / "again" / name).read_bytes() == (root / "results" / name).read_bytes()

    def test_workers_do_not_change_results(self, finished_run, tmp_path):
        root, ini = finished_run
        res = CliRunner().invoke(main, ["run", "--config", str(ini), "--workers", "2", "--out", str(tmp_path / "w")])
        assert res.exit_code == 0, res.output
        assert (tmp_path / "w" / "summary.csv").read_bytes() == (root / "results" / "summary.csv").read_bytes()

    def test_sweep_and_report(self, finished_run):
        root, ini = finished_run
        runner = CliRunner()
        res = runner.invoke(main, ["sweep", "--config", str(ini), "--thresholds", "5,15"])
        assert res.exit_code == 0, res.output
        rows = list(csv.DictReader(open(root / "results" / "sweep.csv")))
        assert {r["threshold"] for r in rows} == {"5", "15"}
        rep = runner.invoke(main, ["report", "--config", str(ini)])
        assert rep.exit_code == 0 and "H-2m" in rep.output and "15%" in rep.output

    def test_run_without_manifest(self, tmp_path):
        res = CliRunner().invoke(main, ["run", "--config", str(write_ini(tmp_path))])
        assert res.exit_code != 0 and "generate" in res.output

    def test_bad_thresholds(self, finished_run):
        _, ini = finished_run
        res = CliRunner().invoke(main, ["sweep", "--config", str(ini), "--thresholds", "a,b"])
        assert res.exit_code == 2

    def test_report_before_run(self, tmp_path):
        res = CliRunner().invoke(main, ["report", "--config", str(write_ini(tmp_path))])
        assert res.exit_code != 0 and "missing" in res.output
