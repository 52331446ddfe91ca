"""benchmark.py
Command-line entry point for the mortgage default benchmark.

Subcommands:
    generate    write a synthetic loan-performance file, schema sidecar and manifest
    audit       ingest a file and classify every source column (exit 1 on unclassified columns)
    split       partition rows with the dual cutoffs and print per-split counts
    run         the full models x ratios grid with tables, ROC curves and importance
    importance  permutation importance for a model saved by an earlier run
"""

import argparse
import logging
import sys
from pathlib import Path

from config import config
from feature_encoding import FeatureEncoder, Pathway
from generate_loans import GenSpec, generate, write_generated
from preprocess_loans import SchemaError
from run_experiment import StageError, load_experiment_config, run, run_importance, run_split


def _configure_logging() -> None:
    logging.basicConfig(
        level=config.logging_level(),
        format='%(asctime)s - %(levelname)s - %(name)s - %(message)s',
    )


def cmd_generate(args) -> int:
    if args.config:
        experiment = load_experiment_config(args.config, seed=args.seed, output_dir=args.output_dir)
        spec = experiment.generate or GenSpec(seed=experiment.seed)
        out_dir = Path(experiment.output_dir) / "data"
    else:
        spec = GenSpec(n_loans=args.n_loans, base_default_rate=args.rate,
                       seed=args.seed if args.seed is not None else 0)
        out_dir = Path(args.output_dir or config.output_dir) / "data"
    data = generate(spec)
    paths = write_generated(data, out_dir)
    print(f"Generated {data.manifest['n_rows']} rows for {spec.n_loans} loans "
          f"(expected positive rate {data.expected_positive_rate:.4f})")
    for name, path in paths.items():
        print(f"✓ Saved {name} -> {path}")
    return 0


def cmd_audit(args) -> int:
    experiment = load_experiment_config(args.config, seed=args.seed, output_dir=args.output_dir)
    try:
        prepared = run_split(experiment)
    except StageError as e:
        if e.stage == "audit" and isinstance(e.cause, SchemaError):
            print(f"✗ Audit failed: {e.cause}", file=sys.stderr)
            return 1
        raise
    frame = prepared.audit.to_frame()
    print(frame.to_string(index=False))
    print(f"Kept {prepared.audit.kept_count} columns, dropped {len(prepared.audit.dropped)}, "
          f"rejected {prepared.ingest.rejections.total} rows")
    for reason, count in sorted(prepared.ingest.rejections.counts.items()):
        print(f"  {reason}: {count}")
    return 0


def cmd_split(args) -> int:
    experiment = load_experiment_config(args.config, seed=args.seed, output_dir=args.output_dir)
    prepared = run_split(experiment)
    print(f"Cutoffs: {experiment.cutoffs.c1} / {experiment.cutoffs.c2}"
          f"{' (strict)' if experiment.strict_partition else ''}")
    print(prepared.partition.summary().to_string(index=False))
    print(f"✓ Saved discarded row keys -> {Path(experiment.output_dir) / 'discarded_rows.csv'}")
    if args.write_matrices:
        encoder = FeatureEncoder.fit(prepared.partition.train, prepared.policy, prepared.zip3)
        out_dir = Path(experiment.output_dir) / "matrices"
        for pathway in Pathway:
            for name, frame in prepared.partition.splits().items():
                path = out_dir / f"{name.value.lower()}_{pathway.value}.csv"
                encoder.transform(frame, pathway).to_csv(path)
                print(f"✓ Saved {name.value} matrix -> {path}")
    return 0


def cmd_run(args) -> int:
    experiment = load_experiment_config(args.config, seed=args.seed, output_dir=args.output_dir)
    report = run(experiment)
    print(report.table("test").round(4).to_string())
    print(f"Importance model: {report.importance_model}")
    print(f"✓ Saved report -> {Path(experiment.output_dir) / 'tables.md'}")
    return 0


def cmd_importance(args) -> int:
    experiment = load_experiment_config(args.config, seed=args.seed, output_dir=args.output_dir)
    name, report, path = run_importance(experiment, model_name=args.model, ratio=args.ratio)
    print(f"Permutation importance for {name} (baseline AUROC {report.baseline:.4f}):")
    print(report.to_frame().head(args.top).to_string(index=False))
    print(f"✓ Saved importance -> {path}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(description='Leakage-aware mortgage default benchmark')
    sub = parser.add_subparsers(dest='command', required=True)

    def common(p, config_required=True):
        p.add_argument('--config', required=config_required, help='Experiment YAML file')
        p.add_argument('--seed', type=int, default=None, help='Override the global seed')
        p.add_argument('--output-dir', default=None, help='Override the output directory')

    p = sub.add_parser('generate', help='Write a synthetic loan-performance file')
    common(p, config_required=False)
    p.add_argument('--n-loans', type=int, default=10_000, help='Loans to generate (without --config)')
    p.add_argument('--rate', type=float, default=0.01, help='Base default rate (without --config)')
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser('audit', help='Schema and leakage audit of the input file')
    common(p)
    p.set_defaults(func=cmd_audit)

    p = sub.add_parser('split', help='Temporal partition and per-split counts')
    common(p)
    p.add_argument('--write-matrices', action='store_true',
                   help='Also write Train-fit encoded matrices for train_model.py')
    p.set_defaults(func=cmd_split)

    p = sub.add_parser('run', help='Run the full benchmark grid')
    common(p)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser('importance', help='Permutation importance for a saved model')
    common(p)
    p.add_argument('--model', default=None, help='Learner name (default: the run\'s importance model)')
    p.add_argument('--ratio', type=int, default=None, help='Downsampling ratio x of the saved 1:x model')
    p.add_argument('--top', type=int, default=10, help='Rows to print')
    p.set_defaults(func=cmd_importance)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    _configure_logging()
    problems = config.validate()
    if problems:
        print(f"✗ Invalid settings: {'; '.join(problems)}", file=sys.stderr)
        return 1
    try:
        return args.func(args)
    except StageError as e:
        print(f"✗ {args.command} failed at stage '{e.stage}': {e.cause}", file=sys.stderr)
        return 1
    except Exception as e:
        print(f"✗ {args.command} failed: {e}", file=sys.stderr)
        return 1


if __name__ == '__main__':
    sys.exit(main())
