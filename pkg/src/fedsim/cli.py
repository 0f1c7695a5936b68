"""Command-line entry points.

Exit codes: 0 success, 2 configuration or input error, 3 numeric failure
during training.
"""

from __future__ import annotations

import argparse
import dataclasses
import sys

from .data import generate_blobs, load_csv, save_csv
from .engine import FedConfig, read_round_records, run_training, write_round_records
from .errors import FedsimError, NumericError, ParameterError
from .experiments import (
    MILESTONE_THRESHOLDS,
    load_config,
    report_milestones,
    run_sweep,
    train_centralized,
)
from .metrics import non_identicalness, save_report
from .models import MODEL_KINDS, ModelSpec, evaluate, save_params
from .partition import (
    DirichletSpec,
    load_partition,
    partition_dirichlet,
    partition_shards,
    save_partition,
)
from .rng import stream


def _cmd_gen_data(args) -> int:
    dataset = generate_blobs(args.classes, args.per_class, args.features, args.spread, args.seed)
    save_csv(dataset, args.out)
    print(f"wrote {args.out} ({dataset.num_examples} examples, {dataset.num_classes} classes)")
    return 0


def _cmd_partition(args) -> int:
    dataset = load_csv(args.data)
    if args.kind == "dirichlet":
        if args.alpha is None or args.samples_per_client is None:
            raise ParameterError("dirichlet partitioning needs --alpha and --samples-per-client")
        spec = DirichletSpec(
            alpha=args.alpha,
            num_clients=args.clients,
            samples_per_client=args.samples_per_client,
            seed=args.seed,
        )
        partition = partition_dirichlet(dataset, spec)
    else:
        if args.shards_per_client is None:
            raise ParameterError("shard partitioning needs --shards-per-client")
        rng = stream(args.seed, "shard-partition")
        partition = partition_shards(dataset, args.clients, args.shards_per_client, rng)
    save_partition(partition, args.out)
    print(f"wrote {args.out} ({partition.num_clients} clients)")
    return 0


def _cmd_measure(args) -> int:
    dataset = load_csv(args.data)
    partition = load_partition(args.partition, dataset)
    report = non_identicalness(partition)
    if args.out:
        save_report(report, args.out)
        print(f"wrote {args.out}")
    print(f"weighted_average_emd={report.weighted_average!r}")
    return 0


def _model_spec(args, dataset, init_seed: int) -> ModelSpec:
    return ModelSpec(
        kind=args.model,
        feature_dim=dataset.feature_dim,
        num_classes=dataset.num_classes,
        hidden_dim=args.hidden_dim,
        weight_decay=args.weight_decay,
        init_scale=args.init_scale,
        init_seed=init_seed,
    )


def _cmd_train_central(args) -> int:
    dataset = load_csv(args.data)
    eval_dataset = load_csv(args.eval_data, dataset.num_classes) if args.eval_data else None
    spec = _model_spec(args, dataset, args.seed)
    params, accuracy = train_centralized(
        dataset, spec, args.lr, args.steps, args.batch_size, args.seed, eval_dataset
    )
    if args.save_params:
        save_params(params, spec, args.save_params)
    print(f"accuracy={accuracy!r}")
    return 0


def _cmd_train_fed(args) -> int:
    dataset = load_csv(args.data)
    eval_dataset = load_csv(args.eval_data, dataset.num_classes) if args.eval_data else None
    partition = load_partition(args.partition, dataset)
    spec = _model_spec(args, dataset, args.seed)
    config = FedConfig(
        rounds=args.rounds,
        report_goal=args.report_goal,
        batch_size=args.batch_size,
        client_lr=args.client_lr,
        server_lr=args.server_lr,
        momentum=args.momentum,
        local_epochs=args.local_epochs,
        virtual_size=args.virtual_size,
        use_fedir=args.fedir,
        use_fedvc=args.fedvc,
        seed=args.seed,
        eval_interval=args.eval_interval,
    )
    params, records = run_training(dataset, partition, spec, config, eval_dataset)
    if args.out:
        write_round_records(records, args.out)
        print(f"wrote {args.out}")
    if args.save_params:
        save_params(params, spec, args.save_params)
    final = evaluate(params, eval_dataset if eval_dataset is not None else dataset)
    best = max(r.eval_accuracy for r in records if r.eval_accuracy is not None)
    print(f"final_accuracy={final!r}")
    print(f"best_accuracy={best!r}")
    return 0


def _cmd_sweep(args) -> int:
    config = load_config(args.config)
    if args.output_dir is not None:
        config = dataclasses.replace(config, output_dir=args.output_dir)
    if args.seed is not None:
        config = dataclasses.replace(config, seed=args.seed)
    rows = run_sweep(config)
    print(f"wrote {config.output_dir}/sweep_results.csv ({len(rows)} rows)")
    return 0


def _cmd_milestones(args) -> int:
    records = read_round_records(args.rounds)
    results = report_milestones(records, args.thresholds, args.centralized_accuracy)
    for threshold, rnd in results:
        label = f"{threshold * 100:g}%"
        print(f"{label}: {'not reached' if rnd is None else f'round {rnd}'}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fedsim", description="Deterministic federated-learning simulator."
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate a Gaussian-blob classification CSV")
    p.add_argument("--classes", type=int, required=True)
    p.add_argument("--per-class", type=int, required=True)
    p.add_argument("--features", type=int, required=True)
    p.add_argument("--spread", type=float, default=1.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_gen_data)

    p = sub.add_parser("partition", help="split a dataset CSV into clients")
    p.add_argument("--data", required=True)
    p.add_argument("--kind", choices=["dirichlet", "shards"], required=True)
    p.add_argument("--clients", type=int, required=True)
    p.add_argument("--alpha", type=float)
    p.add_argument("--samples-per-client", type=int)
    p.add_argument("--shards-per-client", type=int)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_partition)

    p = sub.add_parser("measure", help="report per-client and average distribution distance")
    p.add_argument("--data", required=True)
    p.add_argument("--partition", required=True)
    p.add_argument("--out")
    p.set_defaults(func=_cmd_measure)

    def add_model_flags(p):
        p.add_argument("--model", choices=list(MODEL_KINDS), default="softmax-linear")
        p.add_argument("--hidden-dim", type=int, default=0)
        p.add_argument("--weight-decay", type=float, default=0.0)
        p.add_argument("--init-scale", type=float, default=0.05)

    p = sub.add_parser("train-central", help="centralized minibatch SGD baseline")
    p.add_argument("--data", required=True)
    p.add_argument("--eval-data")
    add_model_flags(p)
    p.add_argument("--lr", type=float, required=True)
    p.add_argument("--steps", type=int, required=True)
    p.add_argument("--batch-size", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--save-params")
    p.set_defaults(func=_cmd_train_central)

    p = sub.add_parser("train-fed", help="run federated training")
    p.add_argument("--data", required=True)
    p.add_argument("--partition", required=True)
    p.add_argument("--eval-data")
    add_model_flags(p)
    p.add_argument("--rounds", type=int, required=True)
    p.add_argument("--report-goal", type=int, required=True)
    p.add_argument("--batch-size", type=int, required=True)
    p.add_argument("--client-lr", type=float, required=True)
    p.add_argument("--server-lr", type=float, default=1.0)
    p.add_argument("--momentum", type=float, default=0.0)
    p.add_argument("--local-epochs", type=float, default=1.0)
    p.add_argument("--virtual-size", type=int)
    p.add_argument("--fedir", action="store_true")
    p.add_argument("--fedvc", action="store_true")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--eval-interval", type=int, default=10)
    p.add_argument("--out")
    p.add_argument("--save-params")
    p.set_defaults(func=_cmd_train_fed)

    p = sub.add_parser("sweep", help="run a config-driven hyperparameter sweep")
    p.add_argument("--config", required=True)
    p.add_argument("--output-dir")
    p.add_argument("--seed", type=int)
    p.set_defaults(func=_cmd_sweep)

    p = sub.add_parser("milestones", help="rounds needed to reach relative-accuracy thresholds")
    p.add_argument("--rounds", required=True, help="round-records CSV from train-fed or sweep")
    p.add_argument("--centralized-accuracy", type=float, required=True)
    p.add_argument("--thresholds", type=float, nargs="+", default=list(MILESTONE_THRESHOLDS))
    p.set_defaults(func=_cmd_milestones)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except NumericError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except FedsimError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
