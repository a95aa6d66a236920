"""Learned multidimensional Bloom filter with optional input compression.

``LearnedFilter`` answers ``model(t) >= tau or fixup.contains(t)``.  The fixup
Bloom filter holds every indexed positive the model scores below ``tau``, so
the indexed set never yields a false negative.  Compression is controlled by
the plan: an identity plan gives the uncompressed learned filter (LMBF).
"""

from __future__ import annotations

import io
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import bloom
from .bloom import WILDCARD, BloomFilter, Token, serialize_tuple_subset
from .codec import (
    CompressionPlan,
    Dictionary,
    PassThrough,
    Split,
    build_dictionary,
    identity_plan,
    input_dimension,
    plan_compression,
    split_column,
)
from .nn import Embedding, Model, ModelConfig, OneHot, TrainingReport, init_model, train

FORMAT_VERSION = 1
KIND_LEARNED = 2  # same header slot as the bloom role tag (0 baseline, 1 fixup)


class FilterError(ValueError):
    pass


@dataclass
class FilterConfig:
    theta: Optional[int] = 3000
    """Compression threshold; ``None`` disables compression (LMBF)."""
    ns: int = 2
    ns_overrides: dict[int, int] = field(default_factory=dict)
    model: ModelConfig = field(default_factory=ModelConfig)
    tau: float = 0.5
    fixup_fpr: float = 0.01
    fixup_seed: int = 0x5EED


@dataclass
class Metrics:
    accuracy: float
    accuracy_pre_fixup: float
    fpr: float
    fnr: float
    fnr_pre_fixup: float
    memory_mb_model: float
    memory_mb_fixup: float
    param_count: int
    input_dim: int
    fixup_count: int


@dataclass
class BuildInfo:
    training: Optional[TrainingReport]
    n_indexed: int
    false_negatives: int


class LearnedFilter:
    def __init__(self, dictionaries: Sequence[Dictionary], plan: CompressionPlan, model: Model,
                 tau: float, fixup: BloomFilter, info: Optional[BuildInfo] = None):
        if not 0.0 < tau < 1.0:
            raise FilterError("tau must lie in (0, 1)")
        if len(dictionaries) != len(plan):
            raise FilterError("one plan entry per column required")
        self.dictionaries = list(dictionaries)
        self.plan = plan
        self.model = model
        self.tau = float(tau)
        self.fixup = fixup
        self.info = info
        # wildcard id for every model input is its real value range
        self._wild_ids = [list(e.subdims) for e in plan]

    @property
    def arity(self) -> int:
        return len(self.dictionaries)

    # -- encoding -----------------------------------------------------------

    def encode(self, t: Sequence[Token]) -> Optional[list[int]]:
        """Model input ids for ``t``; None when a token is out of vocabulary."""
        if len(t) != self.arity:
            raise FilterError(f"arity mismatch: expected {self.arity}, got {len(t)}")
        out: list[int] = []
        for tok, d, entry, wild in zip(t, self.dictionaries, self.plan, self._wild_ids):
            if tok is WILDCARD:
                out.extend(wild)
                continue
            idx = d.encode(tok)
            if idx is None:
                return None
            if isinstance(entry, PassThrough):
                out.append(idx)
            else:
                rem = []
                for div in entry.divisors:
                    idx, r = divmod(idx, div)
                    rem.append(r)
                out.append(idx)
                out.extend(reversed(rem))
        return out

    def encode_many(self, tuples: Sequence[Sequence[Token]]) -> tuple[np.ndarray, np.ndarray]:
        """Stacked ids for the in-vocabulary tuples plus a mask of which they were."""
        width = len(self.model.input_sizes)
        ids = np.zeros((len(tuples), width), dtype=np.int64)
        ok = np.ones(len(tuples), dtype=bool)
        for r, t in enumerate(tuples):
            enc = self.encode(t)
            if enc is None:
                ok[r] = False
            else:
                ids[r] = enc
        return ids, ok

    # -- querying -----------------------------------------------------------

    def score(self, t: Sequence[Token]) -> float:
        enc = self.encode(t)
        return 0.0 if enc is None else self.model.forward(enc)

    def query(self, t: Sequence[Token]) -> bool:
        if len(t) != self.arity:
            raise FilterError(f"arity mismatch: expected {self.arity}, got {len(t)}")
        if bloom.is_all_wildcard(t):
            raise FilterError("illegal query: all slots are wildcards")
        if self.score(t) >= self.tau:
            return True
        return self.fixup.contains(serialize_tuple_subset(t))

    __contains__ = query

    def scores_many(self, tuples: Sequence[Sequence[Token]]) -> np.ndarray:
        ids, ok = self.encode_many(tuples)
        scores = np.zeros(len(tuples))
        if ok.any():
            scores[ok] = _batched_proba(self.model, ids[ok])
        return scores

    def query_many(self, tuples: Sequence[Sequence[Token]], with_model: bool = False):
        for t in tuples:
            if len(t) != self.arity:
                raise FilterError(f"arity mismatch: expected {self.arity}, got {len(t)}")
            if bloom.is_all_wildcard(t):
                raise FilterError("illegal query: all slots are wildcards")
        by_model = self.scores_many(tuples) >= self.tau
        answer = by_model.copy()
        rest = np.flatnonzero(~by_model)
        if len(rest):
            answer[rest] = self.fixup.contains_many([serialize_tuple_subset(tuples[i]) for i in rest])
        return (answer, by_model) if with_model else answer

    # -- accounting ---------------------------------------------------------

    def input_dim(self, **kw) -> int:
        return input_dimension(self.plan, **kw)

    def measure(self, positives: Sequence[Sequence[Token]], negatives: Sequence[Sequence[Token]]) -> Metrics:
        pa, pm = self.query_many(positives, with_model=True)
        na, nm = self.query_many(negatives, with_model=True)
        n_pos, n_neg = len(positives), len(negatives)
        total = max(n_pos + n_neg, 1)
        tp, fp = int(pa.sum()), int(na.sum())
        tp_pre, fp_pre = int(pm.sum()), int(nm.sum())
        return Metrics(
            accuracy=(tp + n_neg - fp) / total,
            accuracy_pre_fixup=(tp_pre + n_neg - fp_pre) / total,
            fpr=fp / n_neg if n_neg else 0.0,
            fnr=(n_pos - tp) / n_pos if n_pos else 0.0,
            fnr_pre_fixup=(n_pos - tp_pre) / n_pos if n_pos else 0.0,
            memory_mb_model=self.model.memory_mb(),
            memory_mb_fixup=self.fixup.memory_mb(),
            param_count=self.model.param_count(),
            input_dim=self.input_dim(),
            fixup_count=self.fixup.n_inserted,
        )

    # -- construction -------------------------------------------------------

    @classmethod
    def build(cls, dictionaries: Sequence[Dictionary], positives: Sequence[Sequence[Token]],
              negatives: Sequence[Sequence[Token]], config: FilterConfig,
              model: Optional[Model] = None,
              indexed: Optional[Sequence[Sequence[Token]]] = None) -> "LearnedFilter":
        """Train on the samples, then back every under-scored positive with the fixup.

        ``indexed`` is the member set that must never produce a false negative;
        it defaults to ``positives`` and may include members the model never
        trained on.  Passing ``model`` skips training and uses it as is.
        """
        if not positives:
            raise FilterError("need at least one positive")
        schema = [d.v for d in dictionaries]
        if config.theta is None:
            plan = identity_plan(schema)
        else:
            plan = plan_compression(schema, config.theta, config.ns, config.ns_overrides)
        sizes = [s + 1 for s in plan.subdims]
        report = None
        shell = cls(dictionaries, plan, model or init_model(config.model, sizes),
                    config.tau, BloomFilter(1, 1, role="fixup"))
        if model is None:
            tuples = list(positives) + list(negatives)
            ids, ok = shell.encode_many(tuples)
            if not ok.all():
                raise FilterError("training samples contain tokens outside the dictionaries")
            labels = np.array([1] * len(positives) + [0] * len(negatives), dtype=np.int64)
            report = train(shell.model, ids, labels, config.model)
        elif list(model.input_sizes) != sizes:
            raise FilterError("model input sizes do not match the compression plan")

        members = positives if indexed is None else list(positives) + list(indexed)
        indexed = list(dict.fromkeys(tuple(t) for t in members))
        scores = shell.scores_many(indexed)
        missed = [serialize_tuple_subset(t) for t, s in zip(indexed, scores) if s < config.tau]
        fixup = BloomFilter.with_capacity(max(len(missed), 1), config.fixup_fpr,
                                          seed=config.fixup_seed, role="fixup")
        fixup.insert_many(missed)
        shell.fixup = fixup
        shell.info = BuildInfo(report, len(indexed), len(missed))
        return shell

    # -- serialization ------------------------------------------------------

    def to_bytes(self) -> bytes:
        buf = io.BytesIO()
        w = buf.write
        w(struct.pack("<4sHBd", bloom.MAGIC, FORMAT_VERSION, KIND_LEARNED, self.tau))
        w(struct.pack("<H", self.arity))
        for d, entry in zip(self.dictionaries, self.plan):
            _write_str(buf, d.column_name)
            w(struct.pack("<I", d.v))
            for tok in d.id_to_value:
                _write_str(buf, tok)
            divisors = entry.divisors if isinstance(entry, Split) else ()
            w(struct.pack("<B", entry.ns))
            w(struct.pack(f"<{len(divisors)}I", *divisors))
        w(struct.pack("<Q", self.plan.theta))
        _write_model(buf, self.model)
        blob = self.fixup.to_bytes()
        w(struct.pack("<Q", len(blob)))
        w(blob)
        return buf.getvalue()

    @classmethod
    def from_bytes(cls, data: bytes) -> "LearnedFilter":
        buf = io.BytesIO(data)
        magic, version, kind, tau = _read(buf, "<4sHBd")
        if magic != bloom.MAGIC:
            raise FilterError("bad magic")
        if version != FORMAT_VERSION:
            raise FilterError(f"unsupported version {version}")
        if kind != KIND_LEARNED:
            raise FilterError("file holds a plain bloom filter, not a learned filter")
        (arity,) = _read(buf, "<H")
        dicts, entries = [], []
        for _ in range(arity):
            name = _read_str(buf)
            (v,) = _read(buf, "<I")
            dicts.append(Dictionary.from_values(name, [_read_str(buf) for _ in range(v)]))
            (ns,) = _read(buf, "<B")
            divisors = _read(buf, f"<{ns - 1}I")
            if ns == 1:
                entries.append(PassThrough(v))
            else:
                entry = split_column(v, ns)
                if tuple(divisors) != entry.divisors:
                    raise FilterError("stored divisors disagree with the compression rule")
                entries.append(entry)
        (theta,) = _read(buf, "<Q")
        plan = CompressionPlan(tuple(entries), theta)
        model = _read_model(buf)
        (n,) = _read(buf, "<Q")
        try:
            fixup = BloomFilter.from_bytes(buf.read(n))
        except bloom.BloomError as exc:
            raise FilterError(f"bad fixup filter: {exc}") from exc
        if buf.read(1):
            raise FilterError("trailing bytes after filter")
        return cls(dicts, plan, model, tau, fixup)

    def save(self, path: str | Path) -> None:
        Path(path).write_bytes(self.to_bytes())

    @classmethod
    def load(cls, path: str | Path) -> "LearnedFilter":
        return cls.from_bytes(Path(path).read_bytes())


def dictionaries_from_relation(relation) -> list[Dictionary]:
    return [build_dictionary(relation.column(i), name) for i, name in enumerate(relation.columns)]


def load_any(path: str | Path):
    """Load either a learned filter or a plain bloom filter from disk."""
    data = Path(path).read_bytes()
    if len(data) < 7 or data[:4] != bloom.MAGIC:
        raise FilterError(f"{path}: not a filter file")
    if data[6] == KIND_LEARNED:
        return LearnedFilter.from_bytes(data)
    return BloomFilter.from_bytes(data)


def _batched_proba(model: Model, ids: np.ndarray, batch: int = 8192) -> np.ndarray:
    return np.concatenate([model.predict_proba(ids[s : s + batch]) for s in range(0, len(ids), batch)])


def _read(buf: io.BytesIO, fmt: str):
    size = struct.calcsize(fmt)
    raw = buf.read(size)
    if len(raw) != size:
        raise FilterError("truncated filter file")
    return struct.unpack(fmt, raw)


def _write_str(buf: io.BytesIO, s: str) -> None:
    raw = s.encode("utf-8")
    buf.write(struct.pack("<I", len(raw)))
    buf.write(raw)


def _read_str(buf: io.BytesIO) -> str:
    (n,) = _read(buf, "<I")
    raw = buf.read(n)
    if len(raw) != n:
        raise FilterError("truncated filter file")
    return raw.decode("utf-8")


def _write_model(buf: io.BytesIO, model: Model) -> None:
    w = buf.write
    w(struct.pack("<H", len(model.input_sizes)))
    for size, enc in zip(model.input_sizes, model.encodings):
        dim = enc.dim if isinstance(enc, Embedding) else 0
        w(struct.pack("<IBI", size, isinstance(enc, Embedding), dim))
    w(struct.pack("<H", len(model.hidden_layers)))
    w(struct.pack(f"<{len(model.hidden_layers)}I", *model.hidden_layers))
    w(struct.pack("<H", len(model.params)))
    for name, arr in model.params.items():
        raw = name.encode("ascii")
        w(struct.pack("<B", len(raw)))
        w(raw)
        w(struct.pack("<B", arr.ndim))
        w(struct.pack(f"<{arr.ndim}I", *arr.shape))
        w(np.ascontiguousarray(arr, dtype="<f4").tobytes())


def _read_model(buf: io.BytesIO) -> Model:
    (n_inputs,) = _read(buf, "<H")
    sizes, encodings = [], []
    for _ in range(n_inputs):
        size, is_emb, dim = _read(buf, "<IBI")
        sizes.append(size)
        encodings.append(Embedding(dim) if is_emb else OneHot())
    (n_hidden,) = _read(buf, "<H")
    hidden = list(_read(buf, f"<{n_hidden}I"))
    (n_params,) = _read(buf, "<H")
    params = {}
    for _ in range(n_params):
        (ln,) = _read(buf, "<B")
        name = buf.read(ln).decode("ascii")
        (ndim,) = _read(buf, "<B")
        shape = _read(buf, f"<{ndim}I")
        count = int(np.prod(shape))
        raw = buf.read(4 * count)
        if len(raw) != 4 * count:
            raise FilterError("truncated model weights")
        params[name] = np.frombuffer(raw, dtype="<f4").astype(np.float32).reshape(shape)
    return Model(sizes, encodings, hidden, params)
