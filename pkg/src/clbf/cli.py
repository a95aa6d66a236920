"""Command line entry point: ``clbf gen | build | query | bench``."""

from __future__ import annotations

import argparse
import logging
import sys

from . import bench
from .bloom import BloomError, BloomFilter, query_tuple
from .codec import CodecError
from .datagen import (
    BUILTIN_SPECS,
    DataError,
    SyntheticSpec,
    generate_relation,
    make_workload,
    parse_tuple,
    read_csv,
    write_csv,
)
from .filter import FilterConfig, FilterError, LearnedFilter, dictionaries_from_relation, load_any
from .nn import ModelConfig, TrainingError

EXPECTED_ERRORS = (BloomError, CodecError, DataError, FilterError, TrainingError, ValueError, OSError)


def cmd_gen(args) -> int:
    spec = SyntheticSpec.builtin(args.spec, rows=args.rows, seed=args.seed,
                                 distribution=args.distribution)
    rel = generate_relation(spec)
    write_csv(rel, args.out)
    print(f"wrote {len(rel.rows)} rows to {args.out}; v(c_i) = {rel.distinct_counts()}")
    return 0


def cmd_build(args) -> int:
    if args.data:
        rel = read_csv(args.data)
    else:
        rel = generate_relation(SyntheticSpec.builtin(args.spec, rows=args.rows, seed=args.seed))
    wl = make_workload(rel, args.positives, args.negatives, args.wildcard_prob, seed=args.seed)
    model = ModelConfig(hidden_layers=args.hidden, learning_rate=args.lr,
                        batch_size=args.batch_size, max_epochs=args.epochs, seed=args.seed)
    theta = None if args.no_compress else args.theta
    cfg = FilterConfig(theta=theta, ns=args.ns, model=model, tau=args.tau,
                       fixup_fpr=args.fixup_fpr, fixup_seed=args.seed)
    flt = LearnedFilter.build(dictionaries_from_relation(rel), wl.train.positives,
                              wl.train.negatives, cfg, indexed=wl.test.positives)
    flt.save(args.out)
    m = flt.measure(wl.test.positives, wl.test.negatives)
    print(f"saved {args.out}")
    print(f"compressed columns: {flt.plan.n_split}  input dim: {m.input_dim}  params: {m.param_count:,}")
    print(f"model MB: {m.memory_mb_model:.4f}  fixup MB: {m.memory_mb_fixup:.4f} "
          f"({m.fixup_count} entries)")
    print(f"holdout accuracy: {m.accuracy:.4f} (model only {m.accuracy_pre_fixup:.4f})  "
          f"fpr: {m.fpr:.4f}  fnr: {m.fnr:.4f}")
    return 0


def cmd_query(args) -> int:
    flt = load_any(args.filter)
    t = parse_tuple(args.tuple)
    if isinstance(flt, BloomFilter):
        hit = query_tuple(flt, t)
    else:
        hit = flt.query(t)
    print("true" if hit else "false")
    return 0


def cmd_bench(args) -> int:
    config = bench.ExperimentConfig.load(args.config)
    if args.out:
        config.output = args.out
    result = bench.run(config)
    print(result.files["report_txt"].read_text(encoding="utf-8"))
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="clbf", description="Compressed learned multidimensional Bloom filters")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen", help="write a synthetic relation as CSV")
    g.add_argument("--spec", choices=sorted(BUILTIN_SPECS), required=True)
    g.add_argument("--rows", type=int, default=10_000)
    g.add_argument("--seed", type=int, required=True)
    g.add_argument("--distribution", choices=["uniform", "zipf"], default="uniform")
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_gen)

    b = sub.add_parser("build", help="train a learned filter and save it")
    src = b.add_mutually_exclusive_group(required=True)
    src.add_argument("--data", help="CSV relation")
    src.add_argument("--spec", choices=sorted(BUILTIN_SPECS))
    b.add_argument("--rows", type=int, default=10_000)
    b.add_argument("--seed", type=int, required=True)
    b.add_argument("--theta", type=int, default=3000)
    b.add_argument("--no-compress", action="store_true", help="build the uncompressed LMBF")
    b.add_argument("--ns", type=int, default=2)
    b.add_argument("--hidden", type=int, nargs="+", default=[64])
    b.add_argument("--positives", type=int, default=200_000)
    b.add_argument("--negatives", type=int, default=200_000)
    b.add_argument("--wildcard-prob", type=float, default=0.2)
    b.add_argument("--tau", type=float, default=0.5)
    b.add_argument("--fixup-fpr", type=float, default=0.01)
    b.add_argument("--lr", type=float, default=0.05)
    b.add_argument("--batch-size", type=int, default=256)
    b.add_argument("--epochs", type=int, default=200)
    b.add_argument("--out", required=True)
    b.set_defaults(func=cmd_build)

    q = sub.add_parser("query", help="query a saved filter; '?' marks a wildcard")
    q.add_argument("--filter", required=True)
    q.add_argument("--tuple", required=True)
    q.set_defaults(func=cmd_query)

    r = sub.add_parser("bench", help="run an experiment config (JSON or YAML)")
    r.add_argument("--config", required=True)
    r.add_argument("--out", help="override the output directory")
    r.set_defaults(func=cmd_bench)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except EXPECTED_ERRORS as exc:
        print(f"clbf: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
