import json
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from mfpinn import cli, heat, pinn
from mfpinn import experiments as ex
from mfpinn.config import ExperimentConfig, from_dict, load_config
from mfpinn.errors import ConfigurationError, DimensionError, MetricError, TrainingError
from mfpinn.metrics import error_field, read_error_field_csv, relative_l2

ROOT = Path(__file__).resolve().parents[1]

TINY = {
    "seeds": [0, 1],
    "oracle": {"dt": 0.05, "label_snapshots": 151},
    "network": {"hidden_layers": [6, 6]},
    "points": {"collocation": 64, "boundary": 8, "initial": 4},
    "labels": {"sweep": [5, 10], "pinn_data": 12, "cooldown": 6, "low_fidelity": 20},
    "train": {"epochs": 1},
}


@pytest.fixture(scope="module")
def tiny():
    return from_dict(TINY)


@pytest.fixture(scope="module")
def table3(tiny, tmp_path_factory):
    out = tmp_path_factory.mktemp("t3")
    return out, ex.reproduce_table3(tiny, out)


class TestRelativeL2:
    def test_identical(self):
        assert relative_l2([1.0, 2.0, 3.0], [1.0, 2.0, 3.0]) == 0.0

    def test_double(self):
        v = np.array([0.5, -2.0, 7.0])
        assert relative_l2(2 * v, v) == pytest.approx(1.0, rel=1e-15)

    def test_zero_truth(self):
        with pytest.raises(MetricError):
            relative_l2([1.0, 2.0], [0.0, 0.0])

    @pytest.mark.parametrize("pred, truth", [([1.0], [1.0, 2.0]), ([], [])])
    def test_lengths(self, pred, truth):
        with pytest.raises(DimensionError):
            relative_l2(pred, truth)

    @settings(max_examples=50, deadline=None)
    @given(arrays(np.float64, 12, elements=st.floats(-1e3, 1e3)), arrays(np.float64, 12, elements=st.floats(1, 1e3)),
           st.randoms(use_true_random=False))
    def test_permutation_invariant_and_nonnegative(self, pred, truth, rnd):
        perm = list(range(12))
        rnd.shuffle(perm)
        a = relative_l2(pred, truth)
        assert a >= 0.0
        assert a == pytest.approx(relative_l2(pred[perm], truth[perm]), rel=1e-12)
        assert (a == 0.0) == np.array_equal(pred, truth)


@pytest.fixture(scope="module")
def grid():
    return heat.test_grid(heat.solve(heat.ThermalSetup(heat.COMPOSITE_2), dt=0.5))


class TestErrorField:
    def test_exact_prediction(self, grid):
        err = error_field(grid.temperature.copy(), grid)
        assert len(err) == 5658 and err.max == 0.0

    def test_callable_and_location(self, grid):
        bump = np.where((grid.t == grid.t[1000]) & (grid.x == grid.x[1000]), 5.0, 0.0)
        err = error_field(lambda x, t: grid.temperature + bump, grid)
        assert err.max == 5.0 and err.argmax == (grid.x[1000], grid.t[1000])
        assert np.all(err.abs_err >= 0.0)

    def test_grid_mismatch(self, grid):
        with pytest.raises(DimensionError):
            error_field(np.zeros(100), grid)

    def test_windows(self, grid):
        err = error_field(grid.temperature + (grid.t > 2000.0) * 3.0, grid)
        assert err.max_in(2000.0, 2500.0) == pytest.approx(3.0)
        assert err.max_outside(2000.0, 2500.0) == pytest.approx(0.0, abs=1e-12)

    def test_csv_round_trip(self, grid, tmp_path):
        err = error_field(grid.temperature * 1.01, grid)
        err.write_csv(tmp_path / "a.csv", "config x\nseed 0")
        back = read_error_field_csv(tmp_path / "a.csv")
        assert np.array_equal(back.abs_err, err.abs_err)
        back.write_csv(tmp_path / "b.csv", "config x\nseed 0")
        assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()


class TestConfig:
    def test_default_file_matches_defaults(self):
        assert load_config(ROOT / "default.toml") == ExperimentConfig()

    def test_defaults(self):
        c = ExperimentConfig()
        assert c.setup("high").material.conductivity == 0.702
        assert c.setup("low").material.density == 1573.0
        assert c.labels.pinn_data == 50 and c.labels.cooldown == 30 and c.labels.low_fidelity == 200
        assert c.train.epochs == 200 and c.train.batch_size == 64 and c.train.learning_rate == 1e-3
        assert c.layer_sizes(3) == (3, 30, 30, 30, 30, 30, 1)

    def test_unknown_key(self):
        with pytest.raises(ConfigurationError):
            from_dict({"train": {"epoch": 3}})

    @pytest.mark.parametrize("d", [{"seeds": []}, {"labels": {"sweep": [50, 10]}}, {"labels": {"sweep": [-1]}},
                                   {"train": {"ema_alpha": 2.0}}, {"setup": {"thickness": -1.0}}])
    def test_invalid(self, d):
        with pytest.raises(ConfigurationError):
            from_dict(d)

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigurationError):
            load_config(tmp_path / "none.toml")

    def test_hash(self):
        base = ExperimentConfig()
        assert base.hash() == from_dict({"seeds": [5], "out_dir": "elsewhere"}).hash()
        assert base.hash() != from_dict({"train": {"epochs": 3}}).hash()


class TestExperiments:
    def test_table3_rows(self, table3):
        out, rows = table3
        assert [r.variant for r in rows] == list(ex.VARIANTS)
        assert [r.labeled_n for r in rows] == [0, 12, 0, 6]
        summary = ex.read_sweep_csv(out / "table3" / "table3.csv")
        assert len(summary) == 4 and all(s == "median" for _, _, s, _ in summary)
        assert [e for *_, e in summary] == [r.median for r in rows]
        assert len(ex.read_sweep_csv(out / "table3" / "table3_runs.csv")) == 8

    @pytest.mark.parametrize("variant", ex.VARIANTS)
    def test_every_variant_emits_files(self, table3, variant):
        out, _ = table3
        for seed in (0, 1):
            d = out / "table3" / variant / f"seed{seed}"
            for name in ("labels.csv", "history.csv", "error_field.csv", "bundle/manifest.json"):
                assert (d / name).is_file(), d / name
            lines = (d / "error_field.csv").read_text().splitlines()
            assert lines[0].startswith("# config ") and lines[1] == f"# seed {seed}"

    def test_cooldown_labels(self, table3):
        out, _ = table3
        labels = heat.read_points_csv(out / "table3" / "mfpinn+data" / "seed0" / "labels.csv")
        assert len(labels) == 6 and np.all(labels.t >= 2000.0)

    def test_history_columns(self, table3):
        out, _ = table3
        lines = (out / "table3" / "pinn" / "seed0" / "history.csv").read_text().splitlines()
        assert ",".join(pinn.HISTORY_COLUMNS) in lines

    def test_evaluate_matches_training(self, tiny, table3, tmp_path):
        out, rows = table3
        for row in rows:
            r = row.runs[0]
            again = ex.evaluate_bundle(tiny, Path(r.directory) / "bundle", tmp_path / row.variant)
            assert abs(again.rel_l2 - r.rel_l2) <= 1e-12

    def test_midpoint(self, tiny, table3, tmp_path):
        out, _ = table3
        p = ex.midpoint(tiny, out / "table3" / "mfpinn" / "seed1" / "bundle", tmp_path)
        lines = p.read_text().splitlines()
        assert "t_s,pred_C,oracle_C" in lines
        assert len(lines) - lines.index("t_s,pred_C,oracle_C") - 1 == 138

    def test_csvs_round_trip(self, table3, tmp_path):
        out, _ = table3
        src = out / "table3" / "pinn+data" / "seed0" / "labels.csv"
        head = [ln[2:] for ln in src.read_text().splitlines() if ln.startswith("# ")]
        heat.write_points_csv(heat.read_points_csv(src), tmp_path / "l.csv", "\n".join(head))
        assert (tmp_path / "l.csv").read_bytes() == src.read_bytes()

    def test_generate_is_deterministic(self, tiny, tmp_path):
        a = ex.generate(tiny, tmp_path / "a")
        b = ex.generate(tiny, tmp_path / "b")
        assert len(a) == 2 + 3 * 2
        for pa, pb in zip(a, b):
            assert pa.read_bytes() == pb.read_bytes()

    def test_table2_sweep(self, tiny, tmp_path):
        rows = ex.reproduce_table2(tiny, tmp_path)
        assert [r.labeled_n for r in rows] == [5, 10]
        assert len(ex.read_sweep_csv(tmp_path / "table2" / "table2.csv")) == 2

    def test_unknown_variant(self, tiny, tmp_path):
        with pytest.raises(ConfigurationError):
            ex.run_single(tiny, "pinn+magic", 0, tmp_path)

    def test_abort_keeps_partial_artifacts(self, tiny, tmp_path, monkeypatch):
        def boom(*a, **k):
            raise TrainingError("non-finite pde loss", term="pde", step=3)

        monkeypatch.setattr(ex.pinn, "train", boom)
        with pytest.raises(TrainingError):
            ex.run_single(tiny, "pinn+data", 0, tmp_path)
        assert (tmp_path / "pinn+data" / "seed0" / "labels.csv").is_file()

    def test_worker_pool_matches_serial(self, tmp_path):
        cfg = from_dict({**TINY, "workers": 2})
        pooled = ex.run_experiment(cfg, "pinn", tmp_path / "p")
        serial = ex.run_experiment(from_dict(TINY), "pinn", tmp_path / "s")
        assert [r.rel_l2 for r in pooled.runs] == [r.rel_l2 for r in serial.runs]


class TestCli:
    @pytest.fixture
    def tiny_toml(self, tmp_path):
        p = tmp_path / "tiny.toml"
        p.write_text(
            'seeds = [0, 1]\n[oracle]\ndt = 0.05\nlabel_snapshots = 151\n[network]\nhidden_layers = [6, 6]\n'
            '[points]\ncollocation = 64\nboundary = 8\ninitial = 4\n[train]\nepochs = 1\n')
        return p

    def test_train_with_seed_override(self, tiny_toml, tmp_path, capsys):
        code = cli.main(["train", "pinn", "--config", str(tiny_toml), "--seed", "4", "--out", str(tmp_path / "o")])
        assert code == 0
        lines = [json.loads(ln) for ln in capsys.readouterr().out.splitlines()]
        assert lines[0]["seed"] == 4 and lines[-1]["seeds"] == [4]
        assert (tmp_path / "o" / "pinn" / "seed4" / "bundle" / "manifest.json").is_file()

    def test_flags_before_subcommand(self, tiny_toml, tmp_path, capsys):
        assert cli.main(["--config", str(tiny_toml), "--out", str(tmp_path / "g"), "generate"]) == 0
        assert (tmp_path / "g" / "data" / "field_high.csv").is_file()

    def test_error_line(self, tmp_path, capsys):
        code = cli.main(["evaluate", str(tmp_path / "missing")])
        err = capsys.readouterr().err.strip().splitlines()[-1]
        assert code != 0
        assert json.loads(err)["error"] == "configuration"

    def test_bad_config_value(self, tmp_path, capsys):
        bad = tmp_path / "bad.toml"
        bad.write_text("[train]\nepochs = -3\n")
        assert cli.main(["reproduce-table3", "--config", str(bad)]) != 0
        assert json.loads(capsys.readouterr().err.strip())["error"] == "configuration"

    def test_usage_error(self, capsys):
        with pytest.raises(SystemExit) as info:
            cli.main(["train", "nope"])
        assert info.value.code != 0
        assert json.loads(capsys.readouterr().err.strip().splitlines()[-1])["error"] == "usage"
