"""End-to-end tests for the command-line interface.

Every subcommand is exercised in process through main(argv), checking
exit codes, file outputs, manifests, and that reruns with identical
arguments reproduce byte-identical artifacts.
"""

import csv
import json
import sys
from types import SimpleNamespace

import numpy as np
import pytest

from flowtrader.agents import TabularAgent, load_agent
from flowtrader.alpha_model import load_model
from flowtrader.backtest import read_trade_log_csv
from flowtrader.cli import main
from flowtrader.labeling import read_labeled_csv
from flowtrader.lob import parse_tick_csv
from flowtrader.manifest import file_digest, read_manifest

INSTRUMENT_TEXT = """\
name = TEST
tick_size = 0.01
commission_per_lot_per_side = 0.1
lot_size = 10.0
fixed_spread_pips = 1.0
"""


@pytest.fixture
def instrument(tmp_path):
    path = tmp_path / "test.instrument"
    path.write_text(INSTRUMENT_TEXT)
    return str(path)


def run(*argv) -> int:
    return main([str(a) for a in argv])


def synth_args(out, seed=0, steps=400):
    return ("synth", "--kind", "predictive_alpha", "--steps", steps,
            "--signal-strength", "0.9", "--ticks-per-day", "100",
            "--seed", seed, "--out", out)


def read_csv_rows(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


class TestSynth:
    def test_writes_parseable_ticks(self, tmp_path, capsys):
        out = tmp_path / "ticks.csv"
        assert run(*synth_args(out)) == 0
        records = parse_tick_csv(out)
        assert len(records) == 400
        assert "400 ticks" in capsys.readouterr().out

    def test_manifest_written_next_to_output(self, tmp_path):
        out = tmp_path / "ticks.csv"
        run(*synth_args(out, seed=5))
        manifest = read_manifest(f"{out}.manifest.json")
        assert manifest.command == "synth"
        assert manifest.seeds == {"seed": 5}
        assert manifest.outputs == {str(out): file_digest(out)}
        assert manifest.inputs == {}
        assert manifest.args["kind"] == "predictive_alpha"
        assert manifest.args["steps"] == 400

    def test_rerun_is_byte_identical(self, tmp_path):
        a, b = tmp_path / "a.csv", tmp_path / "b.csv"
        run(*synth_args(a, seed=9))
        run(*synth_args(b, seed=9))
        assert file_digest(a) == file_digest(b)

    def test_seed_changes_output(self, tmp_path):
        a, b = tmp_path / "a.csv", tmp_path / "b.csv"
        run(*synth_args(a, seed=1))
        run(*synth_args(b, seed=2))
        assert file_digest(a) != file_digest(b)

    def test_bad_kind_is_usage_error(self, tmp_path, capsys):
        code = run("synth", "--kind", "nope", "--steps", 400,
                   "--out", tmp_path / "t.csv")
        capsys.readouterr()
        assert code == 2

    def test_too_few_steps_is_runtime_error(self, tmp_path, capsys):
        code = run("synth", "--kind", "random_walk", "--steps", 10,
                   "--out", tmp_path / "t.csv")
        err = capsys.readouterr().err
        assert code == 1
        assert err.startswith("error:")
        assert err.strip().count("\n") == 0


class TestUsageErrors:
    def test_no_command(self, capsys):
        assert run() == 2
        capsys.readouterr()

    def test_unknown_command(self, capsys):
        assert run("frobnicate") == 2
        capsys.readouterr()

    def test_unknown_flag(self, tmp_path, capsys):
        assert run("label", "--data", "x", "--out", "y", "--frz", "1") == 2
        capsys.readouterr()

    def test_version_exits_zero(self, capsys):
        assert run("--version") == 0
        assert "flowtrader" in capsys.readouterr().out

    def test_bad_hidden_spec(self, tmp_path, capsys):
        code = run("alpha", "train", "--data", "x.csv",
                   "--out", "m.bin", "--hidden", "64xfrog")
        capsys.readouterr()
        assert code == 2


class TestFeaturesStats:
    def test_stdout_csv_has_one_row_per_level(self, tmp_path, capsys):
        ticks = tmp_path / "ticks.csv"
        run(*synth_args(ticks))
        capsys.readouterr()
        assert run("features", "stats", ticks) == 0
        lines = capsys.readouterr().out.strip().splitlines()
        assert len(lines) == 11
        assert lines[0] == "series,mean,std,pct_positive,pct_negative,pct_zero"
        assert lines[1].startswith("ofi_1,")
        assert lines[10].startswith("ofi_10,")

    def test_out_file_and_manifest(self, tmp_path, capsys):
        ticks = tmp_path / "ticks.csv"
        run(*synth_args(ticks))
        out = tmp_path / "stats.csv"
        assert run("features", "stats", ticks, "--out", out) == 0
        rows = read_csv_rows(out)
        assert len(rows) == 11
        manifest = read_manifest(f"{out}.manifest.json")
        assert str(ticks) in manifest.inputs

    def test_values_match_direct_computation(self, tmp_path, capsys):
        ticks = tmp_path / "ticks.csv"
        run(*synth_args(ticks))
        capsys.readouterr()
        run("features", "stats", ticks)
        lines = capsys.readouterr().out.strip().splitlines()
        matrix = np.array([r.ofi for r in parse_tick_csv(ticks)])
        first = lines[1].split(",")
        assert float(first[1]) == pytest.approx(matrix[:, 0].mean(), abs=1e-12)
        assert float(first[2]) == pytest.approx(matrix[:, 0].std(), abs=1e-12)

    def test_missing_file(self, tmp_path, capsys):
        assert run("features", "stats", tmp_path / "nope.csv") == 1
        assert "error:" in capsys.readouterr().err


class TestLabel:
    def test_drops_horizon_tail(self, tmp_path, capsys):
        ticks = tmp_path / "ticks.csv"
        run(*synth_args(ticks))
        out = tmp_path / "labeled.csv"
        assert run("label", "--data", ticks, "--out", out) == 0
        assert len(read_labeled_csv(out)) == 400 - 6

    def test_input_not_mutated(self, tmp_path):
        ticks = tmp_path / "ticks.csv"
        run(*synth_args(ticks))
        before = file_digest(ticks)
        run("label", "--data", ticks, "--out", tmp_path / "l.csv")
        assert file_digest(ticks) == before

    def test_manifest_records_input_digest(self, tmp_path):
        ticks = tmp_path / "ticks.csv"
        run(*synth_args(ticks))
        out = tmp_path / "labeled.csv"
        run("label", "--data", ticks, "--out", out)
        manifest = read_manifest(f"{out}.manifest.json")
        assert manifest.inputs == {str(ticks): file_digest(ticks)}

    def test_missing_input(self, tmp_path, capsys):
        code = run("label", "--data", tmp_path / "nope.csv",
                   "--out", tmp_path / "l.csv")
        assert code == 1
        assert "error:" in capsys.readouterr().err


@pytest.fixture(scope="module")
def labeled(tmp_path_factory):
    """A labeled dataset shared by the model and agent tests."""
    root = tmp_path_factory.mktemp("data")
    ticks = root / "ticks.csv"
    run(*synth_args(ticks, seed=21))
    labeled = root / "labeled.csv"
    run("label", "--data", ticks, "--out", labeled)
    return SimpleNamespace(ticks=str(ticks), labeled=str(labeled))


TINY_TRAIN = ("--hidden", "8x8", "--max-epochs", "3", "--batch", "64",
              "--lr", "0.001")


class TestAlphaTrain:
    def test_model_trains_and_loads(self, labeled, tmp_path, capsys):
        out = tmp_path / "model.bin"
        assert run("alpha", "train", "--data", labeled.labeled,
                   "--out", out, *TINY_TRAIN) == 0
        model = load_model(out)
        assert model.spec.hidden_layers == (8, 8)
        assert model.summary.epochs_run <= 3
        assert "val mse" in capsys.readouterr().out

    def test_rerun_is_byte_identical(self, labeled, tmp_path):
        a, b = tmp_path / "a.bin", tmp_path / "b.bin"
        for out in (a, b):
            run("alpha", "train", "--data", labeled.labeled,
                "--out", out, "--seed", "4", *TINY_TRAIN)
        assert file_digest(a) == file_digest(b)
        ma = read_manifest(f"{a}.manifest.json")
        mb = read_manifest(f"{b}.manifest.json")
        assert ma.outputs[str(a)] == mb.outputs[str(b)]
        assert ma.config_hash != ""

    def test_manifest_seed_recorded(self, labeled, tmp_path):
        out = tmp_path / "model.bin"
        run("alpha", "train", "--data", labeled.labeled, "--out", out,
            "--seed", "7", *TINY_TRAIN)
        manifest = read_manifest(f"{out}.manifest.json")
        assert manifest.seeds == {"seed": 7}
        assert manifest.args["hidden"] == [8, 8]


@pytest.fixture(scope="module")
def model_path(labeled, tmp_path_factory):
    out = tmp_path_factory.mktemp("model") / "model.bin"
    run("alpha", "train", "--data", labeled.labeled, "--out", out,
        *TINY_TRAIN)
    return str(out)


class TestAlphaEval:
    def test_stdout_csv_shape(self, labeled, model_path, capsys):
        assert run("alpha", "eval", "--data", labeled.labeled,
                   "--model", model_path) == 0
        lines = capsys.readouterr().out.strip().splitlines()
        assert len(lines) == 8
        assert lines[0] == "horizon,rmse_price,label_std_price,r2_os_pct"
        assert [row.split(",")[0] for row in lines[1:]] == \
            ["1", "2", "3", "4", "5", "6", "avg"]

    def test_instrument_scales_to_pips(self, labeled, model_path,
                                       instrument, tmp_path, capsys):
        price_out = tmp_path / "price.csv"
        pips_out = tmp_path / "pips.csv"
        run("alpha", "eval", "--data", labeled.labeled, "--model", model_path,
            "--out", price_out)
        run("alpha", "eval", "--data", labeled.labeled, "--model", model_path,
            "--instrument", instrument, "--out", pips_out)
        price = read_csv_rows(price_out)
        pips = read_csv_rows(pips_out)
        assert pips[0][1] == "rmse_pips"
        for row_price, row_pips in zip(price[1:], pips[1:]):
            assert float(row_pips[1]) == pytest.approx(
                float(row_price[1]) / 0.01, rel=1e-12)
            # the r2 column is scale-free
            assert float(row_pips[3]) == float(row_price[3])


class TestAlphaTune:
    def test_tiny_grid(self, labeled, tmp_path, capsys):
        out = tmp_path / "grid.csv"
        model_out = tmp_path / "best.bin"
        code = run("alpha", "tune", "--data", labeled.labeled, "--out", out,
                   "--model-out", model_out, "--widths", "4,8", "--lrs",
                   "0.001", "--patiences", "2", "--batches", "64",
                   "--max-epochs", "2", "--depth", "2")
        assert code == 0
        rows = read_csv_rows(out)
        assert rows[0] == ["cell", "hidden_layers", "learning_rate",
                           "patience", "batch_size", "status", "val_mse",
                           "epochs_run"]
        assert len(rows) == 3
        assert {r[1] for r in rows[1:]} == {"4x4", "8x8"}
        assert all(r[5] == "ok" for r in rows[1:])
        best = load_model(model_out)
        assert min(float(r[6]) for r in rows[1:]) == pytest.approx(
            best.summary.val_mse, rel=1e-12)
        manifest = read_manifest(f"{out}.manifest.json")
        assert set(manifest.outputs) == {str(out), str(model_out)}
        assert "best cell" in capsys.readouterr().out


AGENT_TRAIN = ("--episodes", "6", "--lr", "0.1")


class TestAgentTrain:
    def test_tabular_trains_and_loads(self, labeled, instrument, tmp_path,
                                      capsys):
        out = tmp_path / "agent.bin"
        curve = tmp_path / "curve.csv"
        assert run("agent", "train", "--algo", "q", "--data", labeled.labeled,
                   "--instrument", instrument, "--out", out,
                   "--curve-out", curve, *AGENT_TRAIN) == 0
        agent = load_agent(out)
        assert isinstance(agent, TabularAgent)
        rows = read_csv_rows(curve)
        assert rows[0] == ["episode", "reward"]
        assert len(rows) == 7
        assert "trained q agent" in capsys.readouterr().out

    def test_rerun_is_byte_identical(self, labeled, instrument, tmp_path):
        a, b = tmp_path / "a.bin", tmp_path / "b.bin"
        for out in (a, b):
            run("agent", "train", "--algo", "q", "--data", labeled.labeled,
                "--instrument", instrument, "--out", out, "--seed", "3",
                *AGENT_TRAIN)
        assert file_digest(a) == file_digest(b)

    def test_network_agent_trains(self, labeled, instrument, tmp_path):
        out = tmp_path / "agent.bin"
        assert run("agent", "train", "--algo", "dqn", "--data",
                   labeled.labeled, "--instrument", instrument, "--out", out,
                   "--episodes", "2", "--hidden", "8x8", "--batch", "16") == 0
        assert load_agent(out).algo == "dqn"

    def test_manifest_lists_both_inputs(self, labeled, instrument, tmp_path):
        out = tmp_path / "agent.bin"
        run("agent", "train", "--algo", "q", "--data", labeled.labeled,
            "--instrument", instrument, "--out", out, *AGENT_TRAIN)
        manifest = read_manifest(f"{out}.manifest.json")
        assert set(manifest.inputs) == {labeled.labeled, instrument}


class TestAgentExplain:
    def test_heatmap_csv_layout(self, labeled, instrument, tmp_path, capsys):
        agent_path = tmp_path / "agent.bin"
        run("agent", "train", "--algo", "q", "--data", labeled.labeled,
            "--instrument", instrument, "--out", agent_path, *AGENT_TRAIN)
        out = tmp_path / "heat.csv"
        assert run("agent", "explain", "--agent", agent_path,
                   "--out", out) == 0
        rows = read_csv_rows(out)
        assert len(rows) == 13
        assert rows[0][0] == "transition"
        assert {r[0] for r in rows[1:]} == {"short_to_long", "long_to_short"}
        values = np.array([[float(v) for v in r[2:]] for r in rows[1:]])
        assert np.all(np.abs(values) <= 1.0)

    def test_rejects_model_file(self, labeled, tmp_path, capsys):
        model_path = tmp_path / "model.bin"
        run("alpha", "train", "--data", labeled.labeled, "--out", model_path,
            *TINY_TRAIN)
        code = run("agent", "explain", "--agent", model_path,
                   "--out", tmp_path / "h.csv")
        assert code == 1
        assert "agent file" in capsys.readouterr().err


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory, labeled):
    """Model plus trained agent for the backtest commands."""
    root = tmp_path_factory.mktemp("pipeline")
    instrument = root / "test.instrument"
    instrument.write_text(INSTRUMENT_TEXT)
    model = root / "model.bin"
    run("alpha", "train", "--data", labeled.labeled, "--out", model,
        *TINY_TRAIN)
    agent = root / "agent.bin"
    run("agent", "train", "--algo", "q", "--data", labeled.labeled,
        "--instrument", instrument, "--out", agent, *AGENT_TRAIN)
    return SimpleNamespace(instrument=str(instrument), model=str(model),
                           agent=str(agent), ticks=labeled.ticks)


class TestBacktestRun:
    def test_random_agent_run(self, pipeline, tmp_path, capsys):
        out = tmp_path / "trades.csv"
        code = run("backtest", "run", "--agent", "random", "--seed", "11",
                   "--model", pipeline.model, "--data", pipeline.ticks,
                   "--instrument", pipeline.instrument, "--out", out)
        assert code == 0
        trades = read_trade_log_csv(out)
        assert len(trades) >= 1
        stdout = capsys.readouterr().out
        for name in ("daily_avg_profit", "total_net", "max_drawdown"):
            assert name in stdout

    def test_trained_agent_run_with_metrics_csv(self, pipeline, tmp_path,
                                                capsys):
        out = tmp_path / "trades.csv"
        metrics_out = tmp_path / "metrics.csv"
        code = run("backtest", "run", "--agent", pipeline.agent,
                   "--model", pipeline.model, "--data", pipeline.ticks,
                   "--instrument", pipeline.instrument, "--out", out,
                   "--metrics-out", metrics_out)
        assert code == 0
        rows = read_csv_rows(metrics_out)
        assert rows[0] == ["metric", "value"]
        assert len(rows) == 9
        by_name = {r[0]: r[1] for r in rows[1:]}
        trades = read_trade_log_csv(out)
        assert int(float(by_name["n_trades"])) == len(trades)
        assert float(by_name["total_net"]) == pytest.approx(
            sum(t.net for t in trades), abs=1e-9)
        manifest = read_manifest(f"{out}.manifest.json")
        assert set(manifest.outputs) == {str(out), str(metrics_out)}
        assert pipeline.agent in manifest.inputs

    def test_rerun_is_byte_identical(self, pipeline, tmp_path, capsys):
        a, b = tmp_path / "a.csv", tmp_path / "b.csv"
        for out in (a, b):
            run("backtest", "run", "--agent", pipeline.agent,
                "--model", pipeline.model, "--data", pipeline.ticks,
                "--instrument", pipeline.instrument, "--out", out)
        capsys.readouterr()
        assert file_digest(a) == file_digest(b)

    def test_inputs_not_mutated(self, pipeline, tmp_path, capsys):
        before = {p: file_digest(p) for p in
                  (pipeline.model, pipeline.agent, pipeline.ticks)}
        run("backtest", "run", "--agent", pipeline.agent,
            "--model", pipeline.model, "--data", pipeline.ticks,
            "--instrument", pipeline.instrument, "--out", tmp_path / "t.csv")
        capsys.readouterr()
        assert {p: file_digest(p) for p in before} == before


@pytest.fixture(scope="module")
def logs(pipeline, tmp_path_factory):
    root = tmp_path_factory.mktemp("logs")
    a, b = root / "a.csv", root / "b.csv"
    run("backtest", "run", "--agent", pipeline.agent,
        "--model", pipeline.model, "--data", pipeline.ticks,
        "--instrument", pipeline.instrument, "--out", a)
    run("backtest", "run", "--agent", "random", "--seed", "2",
        "--model", pipeline.model, "--data", pipeline.ticks,
        "--instrument", pipeline.instrument, "--out", b)
    return str(a), str(b)


class TestBacktestCompare:
    def test_comparison_row(self, logs, tmp_path, capsys):
        out = tmp_path / "compare.csv"
        assert run("backtest", "compare", "--a", logs[0], "--b", logs[1],
                   "--out", out) == 0
        rows = read_csv_rows(out)
        assert rows[0] == ["n_a", "n_b", "u_a", "u_b", "rank_sum_a",
                           "rank_sum_b", "method", "p_one_sided"]
        assert len(rows) == 2
        n_a, n_b = int(rows[1][0]), int(rows[1][1])
        u_a, u_b = float(rows[1][2]), float(rows[1][3])
        assert u_a + u_b == pytest.approx(n_a * n_b)
        assert rows[1][6] in ("exact", "normal")
        assert 0.0 < float(rows[1][7]) <= 1.0

    def test_stdout_when_no_out(self, logs, capsys):
        assert run("backtest", "compare", "--a", logs[0], "--b", logs[1]) == 0
        lines = capsys.readouterr().out.strip().splitlines()
        assert len(lines) == 2

    def test_empty_log_rejected(self, logs, tmp_path, capsys):
        empty = tmp_path / "empty.csv"
        with open(logs[0]) as fh:
            header = fh.readline()
        empty.write_text(header)
        code = run("backtest", "compare", "--a", empty, "--b", logs[1])
        assert code == 1
        assert "no trades" in capsys.readouterr().err


class TestServe:
    @pytest.fixture
    def uvicorn_stub(self, monkeypatch):
        calls = []
        stub = SimpleNamespace(run=lambda app, host, port: calls.append(
            (host, port)))
        monkeypatch.setitem(sys.modules, "uvicorn", stub)
        return calls

    def test_config_file_sets_bind(self, tmp_path, uvicorn_stub):
        config = tmp_path / "serve.conf"
        config.write_text("# signal service\nbind = 0.0.0.0:9321\n")
        assert run("serve", "--config", config) == 0
        assert uvicorn_stub == [("0.0.0.0", 9321)]

    def test_env_var_used_without_config(self, monkeypatch, uvicorn_stub):
        monkeypatch.setenv("FLOWTRADER_BIND", "127.0.0.1:7777")
        assert run("serve") == 0
        assert uvicorn_stub == [("127.0.0.1", 7777)]

    def test_config_beats_env(self, tmp_path, monkeypatch, uvicorn_stub):
        monkeypatch.setenv("FLOWTRADER_BIND", "127.0.0.1:7777")
        config = tmp_path / "serve.conf"
        config.write_text("bind = 127.0.0.1:8888\n")
        assert run("serve", "--config", config) == 0
        assert uvicorn_stub == [("127.0.0.1", 8888)]

    def test_unknown_config_key(self, tmp_path, uvicorn_stub, capsys):
        config = tmp_path / "serve.conf"
        config.write_text("port = 9000\n")
        assert run("serve", "--config", config) == 1
        assert "unknown key" in capsys.readouterr().err
        assert uvicorn_stub == []

    def test_malformed_config_line(self, tmp_path, uvicorn_stub, capsys):
        config = tmp_path / "serve.conf"
        config.write_text("bind 127.0.0.1:9000\n")
        assert run("serve", "--config", config) == 1
        assert "line 1" in capsys.readouterr().err


class TestPipelineIntegration:
    def test_manifest_chain_links_by_digest(self, pipeline, tmp_path, capsys):
        """Each stage's input digest equals the prior stage's output digest."""
        trades = tmp_path / "trades.csv"
        run("backtest", "run", "--agent", pipeline.agent,
            "--model", pipeline.model, "--data", pipeline.ticks,
            "--instrument", pipeline.instrument, "--out", trades)
        capsys.readouterr()
        model_manifest = read_manifest(f"{pipeline.model}.manifest.json")
        agent_manifest = read_manifest(f"{pipeline.agent}.manifest.json")
        run_manifest = read_manifest(f"{trades}.manifest.json")
        assert run_manifest.inputs[pipeline.model] == \
            model_manifest.outputs[pipeline.model]
        assert run_manifest.inputs[pipeline.agent] == \
            agent_manifest.outputs[pipeline.agent]
        labeled_path = next(iter(model_manifest.inputs))
        assert agent_manifest.inputs[labeled_path] == \
            model_manifest.inputs[labeled_path]

    def test_manifest_json_is_sorted_and_versioned(self, pipeline):
        with open(f"{pipeline.model}.manifest.json") as fh:
            payload = json.load(fh)
        assert list(payload) == sorted(payload)
        assert payload["version"] == "0.1.0"
