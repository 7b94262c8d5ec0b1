"""Command-line entry point wiring the modules into one workflow.

One binary with subcommands covers the full pipeline: generate or ingest
tick data, compute feature statistics, label alphas, train and tune the
alpha model, train trading agents, backtest and compare them, export
value heatmaps, and serve live signals.  Every run that writes files also
writes a RunManifest next to its primary output recording argument and
seed provenance plus input/output digests, and no subcommand ever
modifies an input file.

Exit codes: 0 success, 1 runtime failure (one-line diagnostic on stderr),
2 usage errors.
"""

from __future__ import annotations

import argparse
import csv
import sys
from dataclasses import asdict
from itertools import product

import numpy as np

from . import __version__
from .agents import (
    AgentConfig,
    export_q_heatmap,
    load_agent,
    save_agent,
    train_ddqn,
    train_dqn,
    train_q,
    write_heatmap_csv,
)
from .alpha_model import (
    MlpSpec,
    TrainConfig,
    benchmark_mean_of,
    evaluate,
    grid_search,
    load_model,
    save_model,
    train,
)
from .backtest import (
    TradeLog,
    compute_metrics,
    daily_profits,
    mann_whitney_u,
    random_agent,
    read_trade_log_csv,
    run_backtest,
    write_trade_log_csv,
)
from .env import MarketReplayEnv
from .errors import DataFormatError, DivergenceError, InvariantError, OrderingError
from .labeling import (
    label_records,
    load_instrument_spec,
    read_labeled_csv,
    split_dataset,
    write_labeled_csv,
)
from .lob import N_LEVELS, parse_tick_csv, summary_stats, write_tick_csv
from .manifest import build_manifest, write_manifest
from .synth import KINDS, SynthConfig, generate

AGENT_TRAINERS = {"q": train_q, "dqn": train_dqn, "ddqn": train_ddqn}


def _hidden_layers(text: str) -> tuple:
    """Parse a WxWx... width list, e.g. 64x64."""
    try:
        widths = tuple(int(part) for part in text.split("x"))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected widths like 64x64, got {text!r}")
    if not widths or any(w <= 0 for w in widths):
        raise argparse.ArgumentTypeError(f"widths must be positive, got {text!r}")
    return widths


def _float_list(text: str) -> tuple:
    try:
        return tuple(float(part) for part in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}")


def _int_list(text: str) -> tuple:
    try:
        return tuple(int(part) for part in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")


def _write_rows(path_or_none, header, rows):
    """CSV to --out if given, else stdout."""
    if path_or_none is None:
        writer = csv.writer(sys.stdout, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)
        return
    with open(path_or_none, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)


def _finish(args, command, seeds, inputs, outputs):
    """Write the run manifest next to the first output."""
    flag_values = {
        k: v for k, v in vars(args).items()
        if k not in ("func", "command", "subcommand")
    }
    manifest = build_manifest(command, flag_values, seeds, inputs, outputs)
    write_manifest(manifest, outputs[0])


def cmd_synth(args) -> int:
    cfg = SynthConfig(
        kind=args.kind,
        steps=args.steps,
        tick_size=args.tick_size,
        signal_strength=args.signal_strength,
        noise_std=args.noise_std,
        seed=args.seed,
        ticks_per_day=args.ticks_per_day,
    )
    records = generate(cfg)
    write_tick_csv(args.out, records)
    _finish(args, "synth", {"seed": args.seed}, [], [args.out])
    print(f"wrote {len(records)} ticks to {args.out}")
    return 0


def cmd_features_stats(args) -> int:
    records = parse_tick_csv(args.file)
    matrix = np.array([r.ofi for r in records])
    header = ["series", "mean", "std", "pct_positive", "pct_negative", "pct_zero"]
    rows = [
        [f"ofi_{level + 1}"] + [repr(float(v)) for v in
                                (s.mean, s.std, s.pct_positive, s.pct_negative, s.pct_zero)]
        for level, s in enumerate(summary_stats(matrix))
    ]
    _write_rows(args.out, header, rows)
    if args.out is not None:
        _finish(args, "features stats", {}, [args.file], [args.out])
    return 0


def cmd_label(args) -> int:
    records = parse_tick_csv(args.data)
    examples = label_records(records)
    write_labeled_csv(args.out, examples)
    _finish(args, "label", {}, [args.data], [args.out])
    print(f"labeled {len(examples)} of {len(records)} ticks into {args.out}")
    return 0


def cmd_alpha_train(args) -> int:
    examples = read_labeled_csv(args.data)
    split = split_dataset(examples)
    spec = MlpSpec(hidden_layers=args.hidden)
    cfg = TrainConfig(
        learning_rate=args.lr,
        batch_size=args.batch,
        patience=args.patience,
        max_epochs=args.max_epochs,
        l2_lambda=args.l2,
        seed=args.seed,
    )
    model = train(split, spec, cfg)
    save_model(args.out, model)
    _finish(args, "alpha train", {"seed": args.seed}, [args.data], [args.out])
    s = model.summary
    print(
        f"trained {'x'.join(str(w) for w in spec.hidden_layers)} on "
        f"{len(split.train)} examples: best epoch {s.best_epoch}/{s.epochs_run}, "
        f"val mse {s.val_mse:.6g}"
    )
    return 0


def cmd_alpha_tune(args) -> int:
    examples = read_labeled_csv(args.data)
    split = split_dataset(examples)
    cells = [
        (
            MlpSpec(hidden_layers=(width,) * args.depth),
            TrainConfig(
                learning_rate=lr,
                batch_size=batch,
                patience=patience,
                max_epochs=args.max_epochs,
                l2_lambda=args.l2,
                seed=args.seed,
            ),
        )
        for width, lr, patience, batch in product(
            args.widths, args.lrs, args.patiences, args.batches
        )
    ]
    result = grid_search(split, cells, jobs=args.jobs)
    header = ["cell", "hidden_layers", "learning_rate", "patience", "batch_size",
              "status", "val_mse", "epochs_run"]
    rows = []
    for i, row in enumerate(result.rows):
        rows.append([
            i,
            row["hidden_layers"],
            repr(float(row["learning_rate"])),
            row["patience"],
            row["batch_size"],
            row["status"],
            "" if row["val_mse"] is None else repr(float(row["val_mse"])),
            "" if row["epochs_run"] is None else row["epochs_run"],
        ])
    _write_rows(args.out, header, rows)
    outputs = [args.out]
    if args.model_out is not None:
        save_model(args.model_out, result.best_model)
        outputs.append(args.model_out)
    _finish(args, "alpha tune", {"seed": args.seed}, [args.data], outputs)
    print(f"best cell {result.best_index}: {result.rows[result.best_index]['hidden_layers']}"
          f" val mse {result.best_model.summary.val_mse:.6g}")
    return 0


def cmd_alpha_eval(args) -> int:
    model = load_model(args.model)
    examples = read_labeled_csv(args.data)
    split = split_dataset(examples)
    report = evaluate(model, split.test, benchmark_mean_of(split.train))
    scale, unit = 1.0, "price"
    if args.instrument is not None:
        spec = load_instrument_spec(args.instrument)
        scale, unit = 1.0 / spec.tick_size, "pips"
    header = ["horizon", f"rmse_{unit}", f"label_std_{unit}", "r2_os_pct"]
    rows = [
        [h + 1, repr(float(report.rmse[h] * scale)),
         repr(float(report.label_std[h] * scale)), repr(float(report.r2_os_pct[h]))]
        for h in range(len(report.rmse))
    ]
    rows.append(["avg", repr(float(report.avg_rmse * scale)),
                 repr(float(report.avg_label_std * scale)),
                 repr(float(report.avg_r2_os_pct))])
    _write_rows(args.out, header, rows)
    if args.out is not None:
        inputs = [args.data, args.model]
        if args.instrument is not None:
            inputs.append(args.instrument)
        _finish(args, "alpha eval", {}, inputs, [args.out])
    return 0


def cmd_agent_train(args) -> int:
    examples = read_labeled_csv(args.data)
    spec = load_instrument_spec(args.instrument)
    env = MarketReplayEnv(examples, spec)
    cfg = AgentConfig(
        learning_rate=args.lr,
        gamma=args.gamma,
        episodes=args.episodes,
        batch_size=args.batch,
        hidden=args.hidden,
        seed=args.seed,
    )
    agent, curve = AGENT_TRAINERS[args.algo](env, cfg)
    save_agent(args.out, agent)
    outputs = [args.out]
    if args.curve_out is not None:
        _write_rows(args.curve_out, ["episode", "reward"],
                    [[i, repr(float(r))] for i, r in enumerate(curve)])
        outputs.append(args.curve_out)
    _finish(args, "agent train", {"seed": args.seed},
            [args.data, args.instrument], outputs)
    print(f"trained {args.algo} agent over {args.episodes} episodes "
          f"({env.n_days} day(s)); final episode reward {curve[-1]:.6g}")
    return 0


def cmd_agent_explain(args) -> int:
    agent = load_agent(args.agent)
    write_heatmap_csv(args.out, export_q_heatmap(agent))
    _finish(args, "agent explain", {}, [args.agent], [args.out])
    print(f"wrote value heatmaps for {agent.algo} agent to {args.out}")
    return 0


METRIC_FIELDS = [
    "daily_avg_profit", "daily_volatility", "avg_profit_loss",
    "profitability_pct", "max_drawdown", "total_net", "n_trades", "n_days",
]


def cmd_backtest_run(args) -> int:
    records = parse_tick_csv(args.data)
    spec = load_instrument_spec(args.instrument)
    model = load_model(args.model)
    if args.agent == "random":
        agent = random_agent(args.seed)
    else:
        agent = load_agent(args.agent)
    log = run_backtest(agent, records, model, spec)
    write_trade_log_csv(args.out, log)
    metrics = compute_metrics(log)
    values = asdict(metrics)
    print(f"backtest of {getattr(agent, 'algo', '?')} agent on {len(records)} ticks:")
    for name in METRIC_FIELDS:
        value = values[name]
        shown = "n/a" if value is None else (
            f"{value:.6f}" if isinstance(value, float) else str(value)
        )
        print(f"  {name:<18} {shown}")
    outputs = [args.out]
    if args.metrics_out is not None:
        _write_rows(
            args.metrics_out,
            ["metric", "value"],
            [[name, "" if values[name] is None else repr(float(values[name]))]
             for name in METRIC_FIELDS],
        )
        outputs.append(args.metrics_out)
    inputs = [args.data, args.instrument, args.model]
    if args.agent != "random":
        inputs.append(args.agent)
    _finish(args, "backtest run", {"seed": args.seed}, inputs, outputs)
    return 0


def cmd_backtest_compare(args) -> int:
    def daily(path):
        trades = read_trade_log_csv(path)
        if not trades:
            raise DataFormatError(f"{path}: no trades to compare")
        log = TradeLog(trades=trades, equity=np.zeros(1),
                       timestamps=np.zeros(1, dtype=np.int64))
        return daily_profits(log)

    sample_a, sample_b = daily(args.a), daily(args.b)
    res = mann_whitney_u(sample_a, sample_b)
    header = ["n_a", "n_b", "u_a", "u_b", "rank_sum_a", "rank_sum_b",
              "method", "p_one_sided"]
    rows = [[
        len(sample_a), len(sample_b), repr(res.u_a), repr(res.u_b),
        repr(res.rank_sum_a), repr(res.rank_sum_b), res.method,
        repr(res.p_one_sided),
    ]]
    _write_rows(args.out, header, rows)
    if args.out is not None:
        _finish(args, "backtest compare", {}, [args.a, args.b], [args.out])
    return 0


def cmd_serve(args) -> int:
    from .service import serve

    bind = None
    if args.config is not None:
        bind = _read_serve_config(args.config)
    serve(bind)
    return 0


def _read_serve_config(path) -> str | None:
    """Key = value server config; the only key is `bind`."""
    bind = None
    with open(path, encoding="utf-8") as fh:
        for line_no, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise DataFormatError(f"line {line_no}: expected 'key = value', got {raw!r}")
            key, _, value = line.partition("=")
            key, value = key.strip(), value.strip()
            if key != "bind":
                raise DataFormatError(f"line {line_no}: unknown key {key!r}")
            bind = value
    return bind


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="flowtrader",
        description="Order-flow alpha models and trading agents for LOB tick data.",
    )
    parser.add_argument("--version", action="version", version=f"flowtrader {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, metavar="command")

    p = sub.add_parser("synth", help="generate a synthetic tick CSV")
    p.add_argument("--kind", required=True, choices=KINDS)
    p.add_argument("--steps", required=True, type=int)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--tick-size", type=float, default=0.01)
    p.add_argument("--signal-strength", type=float, default=0.0)
    p.add_argument("--noise-std", type=float, default=1.0)
    p.add_argument("--ticks-per-day", type=int, default=None)
    p.set_defaults(func=cmd_synth)

    features = sub.add_parser("features", help="feature diagnostics")
    fsub = features.add_subparsers(dest="subcommand", required=True, metavar="subcommand")
    p = fsub.add_parser("stats", help="per-level OFI stats as CSV")
    p.add_argument("file")
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_features_stats)

    p = sub.add_parser("label", help="attach forward alphas to a tick CSV")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_label)

    alpha = sub.add_parser("alpha", help="alpha model commands")
    asub = alpha.add_subparsers(dest="subcommand", required=True, metavar="subcommand")

    p = asub.add_parser("train", help="train an alpha model")
    p.add_argument("--data", required=True)
    p.add_argument("--instrument", default=None, help="unused for training; accepted for symmetry")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--hidden", type=_hidden_layers, default=(2048, 2048, 2048, 2048))
    p.add_argument("--lr", type=float, default=1e-4)
    p.add_argument("--batch", type=int, default=256)
    p.add_argument("--patience", type=int, default=5)
    p.add_argument("--max-epochs", type=int, default=100)
    p.add_argument("--l2", type=float, default=1e-5)
    p.set_defaults(func=cmd_alpha_train)

    p = asub.add_parser("tune", help="grid-search width/lr/patience/batch")
    p.add_argument("--data", required=True)
    p.add_argument("--instrument", default=None, help="unused for tuning; accepted for symmetry")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--out", required=True, help="grid rows CSV")
    p.add_argument("--model-out", default=None, help="write the best model here")
    p.add_argument("--widths", type=_int_list, default=(512, 1024, 2048))
    p.add_argument("--depth", type=int, default=4)
    p.add_argument("--lrs", type=_float_list, default=(1e-5, 1e-4))
    p.add_argument("--patiences", type=_int_list, default=(5, 10))
    p.add_argument("--batches", type=_int_list, default=(128, 256, 512))
    p.add_argument("--max-epochs", type=int, default=100)
    p.add_argument("--l2", type=float, default=1e-5)
    p.set_defaults(func=cmd_alpha_tune)

    p = asub.add_parser("eval", help="score a model on the held-out test slice")
    p.add_argument("--data", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--instrument", default=None, help="report rmse/std in pips")
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_alpha_eval)

    agent = sub.add_parser("agent", help="trading agent commands")
    gsub = agent.add_subparsers(dest="subcommand", required=True, metavar="subcommand")

    p = gsub.add_parser("train", help="train a trading agent on labeled data")
    p.add_argument("--algo", required=True, choices=sorted(AGENT_TRAINERS))
    p.add_argument("--data", required=True, help="labeled CSV")
    p.add_argument("--instrument", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--episodes", type=int, default=80)
    p.add_argument("--lr", type=float, default=0.01)
    p.add_argument("--gamma", type=float, default=0.95)
    p.add_argument("--batch", type=int, default=128)
    p.add_argument("--hidden", type=_hidden_layers, default=(64, 64))
    p.add_argument("--curve-out", default=None, help="per-episode reward CSV")
    p.set_defaults(func=cmd_agent_train)

    p = gsub.add_parser("explain", help="export per-transition value heatmaps")
    p.add_argument("--agent", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_agent_explain)

    backtest = sub.add_parser("backtest", help="replay and compare agents")
    bsub = backtest.add_subparsers(dest="subcommand", required=True, metavar="subcommand")

    p = bsub.add_parser("run", help="replay a tick CSV through an agent")
    p.add_argument("--agent", required=True,
                   help="agent file, or 'random' for the coin-flip benchmark")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--instrument", required=True)
    p.add_argument("--seed", type=int, default=0, help="seed for the random agent")
    p.add_argument("--out", required=True, help="trade log CSV")
    p.add_argument("--metrics-out", default=None)
    p.set_defaults(func=cmd_backtest_run)

    p = bsub.add_parser("compare", help="U-test two trade logs' daily profits")
    p.add_argument("--a", required=True)
    p.add_argument("--b", required=True)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_backtest_compare)

    p = sub.add_parser("serve", help="run the signal service")
    p.add_argument("--config", default=None, help="key = value file with a bind entry")
    p.set_defaults(func=cmd_serve)

    return parser


RUNTIME_ERRORS = (
    DataFormatError,
    OrderingError,
    InvariantError,
    DivergenceError,
    ValueError,
    OSError,
)


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except RUNTIME_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    raise SystemExit(main())
