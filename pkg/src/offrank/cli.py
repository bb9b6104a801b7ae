"""Command-line interface.

Subcommands: gen-data, simulate, train, evaluate, experiment, sweep-alpha.
Every experiment-shaped command accepts --config FILE (flat `key = value`
lines) plus per-field flags that override the file.  Exit codes: 0 success,
1 configuration error, 2 runtime failure.
"""
from __future__ import annotations

import argparse
import json
import sys
from dataclasses import fields
from pathlib import Path

from .agent import (
    load_agent,
    rank as agent_rank,
    save_agent,
    save_trace,
    train as agent_train,
)
from .clicks import AttractionModel, default_spec, save_sessions
from .data import save_letor
from .experiment import (
    ALPHA_GRID,
    ConfigError,
    ExperimentConfig,
    _SeedArtifacts,
    build_config,
    load_experiment_dataset,
    parse_config,
    run_experiment,
    sweep_alpha,
    _train_config,
)
from .metrics import evaluate_policy


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse default exits 2; usage errors are config errors
        self.print_usage(sys.stderr)
        raise ConfigError(message)


def _add_config_flags(p: argparse.ArgumentParser):
    p.add_argument("--config", default=None, metavar="FILE",
                   help="flat key = value config file")
    for f in fields(ExperimentConfig):
        flag = "--" + f.name.replace("_", "-")
        p.add_argument(flag, dest=f.name, default=None, metavar="V",
                       help=f"override {f.name}")


def _config_from_args(args) -> ExperimentConfig:
    pairs = {}
    if args.config:
        path = Path(args.config)
        if not path.exists():
            raise ConfigError(f"config file not found: {path}")
        pairs.update(parse_config(path.read_text()))
    for f in fields(ExperimentConfig):
        value = getattr(args, f.name, None)
        if value is not None:
            pairs[f.name] = value
    return build_config(pairs)


def _splits(config: ExperimentConfig):
    ds = load_experiment_dataset(config)
    train_qs = ds.train[:config.n_train] if config.n_train else ds.train
    test_qs = ds.test[:config.n_test] if config.n_test else ds.test
    if not train_qs or not test_qs:
        raise ConfigError("empty train or test split after caps")
    return ds, train_qs, test_qs


def _cmd_gen_data(args) -> int:
    config = _config_from_args(args)
    ds = load_experiment_dataset(config)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for name, queries in (("train", ds.train), ("validation", ds.validation),
                          ("test", ds.test)):
        save_letor(out / f"{name}.txt", queries)
    print(f"wrote {len(ds.train)}/{len(ds.validation)}/{len(ds.test)} "
          f"train/validation/test queries to {out}")
    return 0


def _cmd_simulate(args) -> int:
    config = _config_from_args(args)
    ds, train_qs, _ = _splits(config)
    spec = default_spec(config.click_model, K=config.K, eta=config.eta)
    att = AttractionModel(epsilon=config.epsilon, r_max=config.r_max)
    seed = config.seeds[0]
    art = _SeedArtifacts(config, train_qs, spec, att, seed)
    if args.randomize:
        sessions = art.randomized_sessions()
    else:
        sessions = art.logged_sessions()
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_sessions(out, sessions)
    clicks = sum(sum(s.clicks) for s in sessions)
    print(f"wrote {len(sessions)} sessions ({clicks} clicks) to {out}")
    return 0


def _cmd_train(args) -> int:
    config = _config_from_args(args)
    methods = config.method_list()
    if len(methods) != 1 or methods[0] not in ("CUOLR-CQL", "CUOLR-SAC"):
        raise ConfigError("train expects method = CUOLR-CQL or CUOLR-SAC")
    method = methods[0]
    ds, train_qs, _ = _splits(config)
    spec = default_spec(config.click_model, K=config.K, eta=config.eta)
    att = AttractionModel(epsilon=config.epsilon, r_max=config.r_max)
    seed = config.seeds[0]
    art = _SeedArtifacts(config, train_qs, spec, att, seed)
    tc = _train_config(config, seed,
                       cql_alpha=0.0 if method == "CUOLR-SAC" else None)
    agent, trace = agent_train(art.episode_groups(), tc,
                               feature_dim=ds.feature_dim)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_agent(out / "agent.bin", agent)
    save_trace(out / "trace.csv", trace)
    last = trace[-1] if trace else (0, 0.0, 0.0, 0.0)
    print(f"trained {method} for {tc.iterations} iterations "
          f"(final critic loss {last[1]:.6f}); checkpoint in {out}")
    return 0


def _cmd_evaluate(args) -> int:
    config = _config_from_args(args)
    agent = load_agent(args.checkpoint)
    _, _, test_qs = _splits(config)
    report = evaluate_policy(lambda q: agent_rank(agent, q, config.K), test_qs,
                             ks=config.ks, r_max=config.r_max, K=config.K)
    payload = {f"{metric}@{k}": report.mean(metric, k)
               for metric in ("ndcg", "err") for k in report.ks}
    payload["n_queries"] = report.n_queries
    text = json.dumps(payload, indent=2, sort_keys=True)
    if args.out:
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        Path(args.out).write_text(text + "\n")
    print(text)
    return 0


def _cmd_experiment(args) -> int:
    config = _config_from_args(args)
    record = run_experiment(config, out_dir=args.out)
    summary_path = Path(args.out) / "summary.json"
    print(f"wrote {Path(args.out) / 'results.csv'} and {summary_path}")
    if record.failures:
        for method, seed, message in record.failures:
            print(f"FAILED {method} seed {seed}: {message}", file=sys.stderr)
        return 2
    return 0


def _cmd_sweep_alpha(args) -> int:
    config = _config_from_args(args)
    if args.alphas:
        try:
            alphas = tuple(float(a) for a in args.alphas.split(","))
        except ValueError as exc:
            raise ConfigError(f"bad --alphas: {exc}") from exc
    else:
        alphas = ALPHA_GRID
    rows = sweep_alpha(config, alphas, out_dir=args.out)
    for alpha, metric, k, mean, std in rows:
        if metric == "ndcg" and k == max(config.ks):
            print(f"alpha={alpha:g} ndcg@{k}={mean:.4f} (+/- {std:.4f})")
    print(f"wrote {Path(args.out) / 'alpha_sweep.csv'}")
    return 0


def _build_parser() -> _Parser:
    parser = _Parser(prog="offrank",
                     description="Off-policy learning-to-rank testbed")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="write a synthetic dataset as ranking files")
    _add_config_flags(p)
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(fn=_cmd_gen_data)

    p = sub.add_parser("simulate", help="simulate a click log")
    _add_config_flags(p)
    p.add_argument("--randomize", action="store_true",
                   help="uniform-permutation randomization log instead of the "
                        "logging policy's sessions")
    p.add_argument("--out", required=True, help="output session CSV")
    p.set_defaults(fn=_cmd_simulate)

    p = sub.add_parser("train", help="train an off-policy agent and checkpoint it")
    _add_config_flags(p)
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(fn=_cmd_train)

    p = sub.add_parser("evaluate", help="evaluate a trained agent checkpoint")
    _add_config_flags(p)
    p.add_argument("--checkpoint", required=True, help="agent checkpoint path")
    p.add_argument("--out", default=None, help="optional report JSON path")
    p.set_defaults(fn=_cmd_evaluate)

    p = sub.add_parser("experiment", help="run methods x seeds and persist results")
    _add_config_flags(p)
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(fn=_cmd_experiment)

    p = sub.add_parser("sweep-alpha", help="conservatism sweep for the CQL agent")
    _add_config_flags(p)
    p.add_argument("--alphas", default=None,
                   help="comma-separated weights (default: the full grid)")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(fn=_cmd_sweep_alpha)
    return parser


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        return args.fn(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except KeyboardInterrupt:
        return 2
    except Exception as exc:  # noqa: BLE001 - runtime failure -> exit 2
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
