"""Experiment harness comparing BF, LMBF and C-LMBF on one workload.

Every variant in a run is built from the same relation and the same labeled
samples.  Reports are written as CSV (one column per ``ReportRow`` field) and as
a plain-text table that also spells out the memory accounting.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import math
import struct
import time
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .bloom import BloomFilter, encode_slot, hash_pairs, serialize_tuple_subset, subset_masks
from .codec import Dictionary, identity_plan, input_dimension, plan_compression
from .datagen import (
    BUILTIN_SPECS,
    DataError,
    Relation,
    SyntheticSpec,
    Workload,
    generate_relation,
    make_workload,
    read_csv,
)
from .filter import FilterConfig, LearnedFilter, dictionaries_from_relation
from .nn import ModelConfig, closed_form_param_count, default_encoding

log = logging.getLogger(__name__)

# fixed theta for the hidden-width sweep, per built-in dataset
NN_SWEEP_THETA = {"airplane": 5500, "dmv": 100}


@dataclass
class ExperimentConfig:
    seed: int
    dataset: str = "airplane"
    """Built-in synthetic spec name or a CSV path."""
    rows: int = 10_000
    distribution: str = "uniform"
    thetas: list[int] = field(default_factory=lambda: [3000, 5500, 8000])
    ns: int = 2
    hidden_widths: list[int] = field(default_factory=lambda: [64])
    nn_theta: Optional[int] = None
    tau: float = 0.5
    fixup_fpr: float = 0.01
    bf_fprs: list[float] = field(default_factory=lambda: [0.1, 0.01])
    bf_subset_budget: int = 512
    n_positive: int = 200_000
    n_negative: int = 200_000
    wildcard_prob: float = 0.2
    test_fraction: float = 0.2
    learning_rate: float = 0.05
    batch_size: int = 256
    max_epochs: int = 200
    patience: int = 5
    onehot_max: int = 64
    embed_min_dim: int = 4
    embed_max_dim: int = 32
    include_lmbf: bool = True
    include_bf: bool = True
    sweep_nn: bool = False
    train_nn_sweep: bool = True
    record_timing: bool = False
    save_filters: bool = True
    output: str = "bench_out"

    def __post_init__(self):
        if self.seed is None:
            raise ValueError("seed is mandatory")
        if not self.thetas or not self.hidden_widths or not self.bf_fprs:
            raise ValueError("sweep lists must be non-empty")

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        if "seed" not in data:
            raise ValueError("seed is mandatory")
        return cls(**data)

    @classmethod
    def load(cls, path: str | Path) -> "ExperimentConfig":
        path = Path(path)
        text = path.read_text(encoding="utf-8")
        if path.suffix in (".yaml", ".yml"):
            import yaml

            data = yaml.safe_load(text)
        else:
            data = json.loads(text)
        return cls.from_dict(data)

    def model_config(self, hidden: Sequence[int] | None = None) -> ModelConfig:
        return ModelConfig(
            hidden_layers=list(hidden or [self.hidden_widths[0]]),
            learning_rate=self.learning_rate,
            batch_size=self.batch_size,
            max_epochs=self.max_epochs,
            patience=self.patience,
            seed=self.seed,
            onehot_max=self.onehot_max,
            embed_min_dim=self.embed_min_dim,
            embed_max_dim=self.embed_max_dim,
        )

    def filter_config(self, theta: Optional[int], hidden: Sequence[int] | None = None) -> FilterConfig:
        return FilterConfig(theta=theta, ns=self.ns, model=self.model_config(hidden),
                            tau=self.tau, fixup_fpr=self.fixup_fpr, fixup_seed=self.seed)

    @property
    def sweep_theta(self) -> int:
        if self.nn_theta is not None:
            return self.nn_theta
        return NN_SWEEP_THETA.get(self.dataset, self.thetas[0])


@dataclass
class ReportRow:
    variant: str
    accuracy: Optional[float]
    memory_mb_model: float
    memory_mb_fixup: float
    nn_params: Optional[int]
    input_dim: Optional[int]
    train_seconds: Optional[float]
    fpr: Optional[float]
    fnr: Optional[float]
    accuracy_pre_fixup: Optional[float] = None
    compressed_columns: Optional[int] = None
    hidden_width: Optional[int] = None


REPORT_FIELDS = [f.name for f in fields(ReportRow)]


# -- data ----------------------------------------------------------------------


def ingest_csv(path: str | Path) -> tuple[Relation, list[int]]:
    """Read a relation and report the per-column distinct counts."""
    relation = read_csv(path)
    return relation, relation.distinct_counts()


def load_relation(config: ExperimentConfig) -> Relation:
    if config.dataset in BUILTIN_SPECS:
        spec = SyntheticSpec.builtin(config.dataset, rows=config.rows, seed=config.seed,
                                     distribution=config.distribution)
        return generate_relation(spec)
    return read_csv(config.dataset)


# -- baseline bloom filter -----------------------------------------------------


def baseline_combinations(relation: Relation, budget: Optional[int], rng: np.random.Generator,
                          extra: Sequence[Sequence] = (), chunk: int = 200_000):
    """Yield canonical encodings of every subset combination the baseline indexes."""
    k = relation.arity
    header = struct.pack("<H", k)
    wild = encode_slot(0, None)
    buf: list[bytes] = []
    for row in relation.rows:
        parts = [encode_slot(i, tok) for i, tok in enumerate(row)]
        for mask in subset_masks(k, budget, rng):
            buf.append(header + b"".join(parts[i] if mask >> i & 1 else wild for i in range(k)))
        if len(buf) >= chunk:
            yield buf
            buf = []
    for t in extra:
        buf.append(serialize_tuple_subset(t))
    if buf:
        yield buf


def build_baseline(relation: Relation, fpr: float, seed: int, budget: Optional[int] = 512,
                   extra: Sequence[Sequence] = ()) -> tuple[BloomFilter, int]:
    """Multidimensional BF over row subsets plus ``extra`` patterns.

    Rows whose ``2**k - 1`` subsets exceed ``budget`` contribute ``budget``
    sampled subsets.  Returns the filter and its distinct combination count.
    """
    rng = np.random.default_rng(seed)
    pairs = [hash_pairs(c, seed) for c in baseline_combinations(relation, budget, rng, extra)]
    allp = np.unique(np.concatenate(pairs), axis=0) if pairs else np.zeros((0, 2), np.uint64)
    n = max(len(allp), 1)
    bf = BloomFilter.with_capacity(n, fpr, seed=seed, role="baseline")
    bf.insert_hash_pairs(allp)
    return bf, len(allp)


def measure_baseline(bf: BloomFilter, positives, negatives) -> tuple[float, float, float]:
    pa = bf.contains_many([serialize_tuple_subset(t) for t in positives])
    na = bf.contains_many([serialize_tuple_subset(t) for t in negatives])
    n_pos, n_neg = len(positives), len(negatives)
    acc = (int(pa.sum()) + n_neg - int(na.sum())) / max(n_pos + n_neg, 1)
    return acc, float(na.mean()) if n_neg else 0.0, float(1 - pa.mean()) if n_pos else 0.0


# -- running -------------------------------------------------------------------


@dataclass
class RunResult:
    rows: list[ReportRow]
    files: dict[str, Path]
    distinct_counts: list[int]


def _learned_row(variant: str, flt: LearnedFilter, workload: Workload, seconds: float,
                 config: ExperimentConfig, hidden: int) -> ReportRow:
    m = flt.measure(workload.test.positives, workload.test.negatives)
    return ReportRow(
        variant=variant,
        accuracy=m.accuracy,
        memory_mb_model=m.memory_mb_model,
        memory_mb_fixup=m.memory_mb_fixup,
        nn_params=m.param_count,
        input_dim=m.input_dim,
        train_seconds=seconds if config.record_timing else None,
        fpr=m.fpr,
        fnr=m.fnr,
        accuracy_pre_fixup=m.accuracy_pre_fixup,
        compressed_columns=flt.plan.n_split,
        hidden_width=hidden,
    )


def build_learned(dicts: list[Dictionary], workload: Workload, config: ExperimentConfig,
                  theta: Optional[int], hidden: int) -> tuple[LearnedFilter, float]:
    fc = config.filter_config(theta, [hidden])
    start = time.perf_counter()
    flt = LearnedFilter.build(dicts, workload.train.positives, workload.train.negatives, fc,
                              indexed=workload.test.positives)
    return flt, time.perf_counter() - start


def run(config: ExperimentConfig, out_dir: str | Path | None = None) -> RunResult:
    """Build every configured variant and write ``report.csv`` and ``report.txt``."""
    out = Path(out_dir or config.output)
    out.mkdir(parents=True, exist_ok=True)
    relation = load_relation(config)
    counts = relation.distinct_counts()
    log.info("relation: %d rows, v(c_i) = %s", len(relation.rows), counts)
    workload = make_workload(relation, config.n_positive, config.n_negative,
                             config.wildcard_prob, config.test_fraction, config.seed)
    dicts = dictionaries_from_relation(relation)
    hidden = config.hidden_widths[0]
    rows: list[ReportRow] = []
    files: dict[str, Path] = {}

    def save(name: str, blob: bytes):
        if config.save_filters:
            path = out / f"{name}.clbf"
            path.write_bytes(blob)
            files[name] = path

    for theta in config.thetas:
        variant = f"C-LMBF@{theta}"
        log.info("building %s", variant)
        flt, secs = build_learned(dicts, workload, config, theta, hidden)
        rows.append(_learned_row(variant, flt, workload, secs, config, hidden))
        save(variant.replace("@", "_"), flt.to_bytes())

    if config.include_lmbf:
        log.info("building LMBF")
        flt, secs = build_learned(dicts, workload, config, None, hidden)
        rows.append(_learned_row("LMBF", flt, workload, secs, config, hidden))
        save("LMBF", flt.to_bytes())

    if config.include_bf:
        for p in config.bf_fprs:
            log.info("building BF-%g", p)
            start = time.perf_counter()
            bf, n = build_baseline(relation, p, config.seed, config.bf_subset_budget,
                                   extra=workload.train.positives + workload.test.positives)
            secs = time.perf_counter() - start
            acc, fpr, fnr = measure_baseline(bf, workload.test.positives, workload.test.negatives)
            rows.append(ReportRow(f"BF-{p:g}", acc, bf.memory_mb(), 0.0, None, None,
                                  secs if config.record_timing else None, fpr, fnr))
            save(f"BF-{p:g}", bf.to_bytes())

    if config.sweep_nn:
        rows.extend(sweep_nn_size(config, relation=relation, workload=workload, dicts=dicts))

    files["report_csv"] = out / "report.csv"
    files["report_txt"] = out / "report.txt"
    files["report_csv"].write_text(report_csv(rows), encoding="utf-8")
    files["report_txt"].write_text(report_text(rows, config, counts), encoding="utf-8")
    return RunResult(rows, files, counts)


def sweep_nn_size(config: ExperimentConfig, relation: Relation | None = None,
                  workload: Workload | None = None, dicts: list[Dictionary] | None = None,
                  train: Optional[bool] = None) -> list[ReportRow]:
    """LMBF vs C-LMBF at ``config.sweep_theta`` for every hidden width.

    With ``train=False`` only the architecture is built, which is enough for
    the memory and parameter columns; accuracy columns stay empty.
    """
    train = config.train_nn_sweep if train is None else train
    relation = relation or load_relation(config)
    dicts = dicts or dictionaries_from_relation(relation)
    theta = config.sweep_theta
    schema = [d.v for d in dicts]
    rows = []
    if train and workload is None:
        workload = make_workload(relation, config.n_positive, config.n_negative,
                                 config.wildcard_prob, config.test_fraction, config.seed)
    for width in config.hidden_widths:
        for variant, th in ((f"LMBF/h{width}", None), (f"C-LMBF@{theta}/h{width}", theta)):
            if train:
                flt, secs = build_learned(dicts, workload, config, th, width)
                rows.append(_learned_row(variant, flt, workload, secs, config, width))
                continue
            plan = identity_plan(schema) if th is None else plan_compression(schema, th, config.ns)
            sizes = [s + 1 for s in plan.subdims]
            mc = config.model_config([width])
            encs = [default_encoding(s, mc.onehot_max, mc.embed_min_dim, mc.embed_max_dim) for s in sizes]
            params = closed_form_param_count(sizes, encs, [width])
            rows.append(ReportRow(variant, None, 4 * params / 2**20, 0.0, params,
                                  input_dimension(plan), None, None, None,
                                  compressed_columns=plan.n_split, hidden_width=width))
    return rows


# -- reporting -----------------------------------------------------------------


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return "nan" if math.isnan(value) else repr(round(value, 10))
    return str(value)


def report_csv(rows: Sequence[ReportRow]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(REPORT_FIELDS)
    for r in rows:
        w.writerow([_fmt(v) for v in asdict(r).values()])
    return buf.getvalue()


ACCOUNTING = """\
accounting:
  nn_params      = sum(encoding_size_i * embed_dim_i) + sum over dense layers (fan_in + 1) * fan_out
  encoding_size  = (sub)column value range + 1 wildcard slot; one-hot inputs add encoding_size to fan_in
  memory_mb_model = 4 bytes * nn_params / 2**20
  memory_mb (BF)  = m / 8 / 2**20 with m = ceil(-n ln p / (ln 2)^2), n = distinct indexed combinations
  input_dim      = sum of exact (sub)column value ranges, wildcard slots excluded
  accuracy, fpr, fnr measured on held-out samples after the fixup filter; all held-out positives are indexed
"""


def report_text(rows: Sequence[ReportRow], config: ExperimentConfig, counts: Sequence[int]) -> str:
    headers = ["variant", "accuracy", "acc(model)", "MB model", "MB fixup", "NN params",
               "input dim", "fpr", "fnr", "train s"]
    table = []
    for r in rows:
        table.append([
            r.variant,
            "" if r.accuracy is None else f"{r.accuracy:.4f}",
            "" if r.accuracy_pre_fixup is None else f"{r.accuracy_pre_fixup:.4f}",
            f"{r.memory_mb_model:.4f}",
            f"{r.memory_mb_fixup:.4f}",
            "" if r.nn_params is None else f"{r.nn_params:,}",
            "" if r.input_dim is None else str(r.input_dim),
            "" if r.fpr is None else f"{r.fpr:.4f}",
            "" if r.fnr is None else f"{r.fnr:.4f}",
            "" if r.train_seconds is None else f"{r.train_seconds:.1f}",
        ])
    widths = [max(len(h), *(len(row[i]) for row in table)) if table else len(h)
              for i, h in enumerate(headers)]
    lines = [
        f"dataset: {config.dataset}  rows: {config.rows}  seed: {config.seed}",
        f"v(c_i): {list(counts)}",
        "",
        "  ".join(h.ljust(w) for h, w in zip(headers, widths)),
        "  ".join("-" * w for w in widths),
    ]
    lines += ["  ".join(c.ljust(w) for c, w in zip(row, widths)).rstrip() for row in table]
    return "\n".join(lines) + "\n\n" + ACCOUNTING


__all__ = [
    "ExperimentConfig", "ReportRow", "RunResult", "build_baseline", "ingest_csv", "load_relation",
    "measure_baseline", "report_csv", "report_text", "run", "sweep_nn_size", "DataError",
]
