"""Dataset ingestion, vocabulary, split management, and negative sampling.

Two on-disk layouts are supported:

* ``openke-id``: ``entity2id.txt`` / ``relation2id.txt`` map names to dense
  ids (first line is the row count, then ``name<TAB>id``), and
  ``train2id.txt`` / ``valid2id.txt`` / ``test2id.txt`` hold one ``h t r``
  triple per line after a count line.
* ``raw-tsv``: ``train.tsv`` / ``valid.tsv`` / ``test.tsv`` with
  ``head<TAB>relation<TAB>tail`` string rows; the vocabulary is built from
  the union of the splits in first-appearance order.

Triples are stored as int64 arrays with columns ``(head, relation, tail)``.
"""
from __future__ import annotations

import logging
import os
from dataclasses import dataclass, field
from typing import Iterable, NamedTuple

import numpy as np

from .errors import DataError

logger = logging.getLogger(__name__)

SPLITS = ("train", "valid", "test")
CORRUPTION_MODES = ("head", "tail", "uniform-both")


class Triple(NamedTuple):
    head: int
    relation: int
    tail: int


@dataclass
class Vocabulary:
    """Dense, 0-based name<->id maps for entities and relations.

    Ids are assigned in list order and are stable across save/load.
    """

    entity_names: list[str]
    relation_names: list[str]
    entity_ids: dict[str, int] = field(init=False, repr=False)
    relation_ids: dict[str, int] = field(init=False, repr=False)

    def __post_init__(self) -> None:
        self.entity_ids = {name: i for i, name in enumerate(self.entity_names)}
        self.relation_ids = {name: i for i, name in enumerate(self.relation_names)}
        if len(self.entity_ids) != len(self.entity_names):
            raise DataError("duplicate entity names in vocabulary")
        if len(self.relation_ids) != len(self.relation_names):
            raise DataError("duplicate relation names in vocabulary")

    @property
    def n_entities(self) -> int:
        return len(self.entity_names)

    @property
    def n_relations(self) -> int:
        return len(self.relation_names)


class FilterIndex:
    """Membership index over the union of all three splits.

    Supports triple membership tests plus the two query shapes used by the
    filtered ranking protocol: all known tails of ``(h, r, ?)`` and all known
    heads of ``(?, r, t)``.
    """

    def __init__(self, triples: np.ndarray):
        self._all: set[tuple[int, int, int]] = set(map(tuple, triples.tolist()))
        hr_to_t: dict[tuple[int, int], list[int]] = {}
        rt_to_h: dict[tuple[int, int], list[int]] = {}
        for h, r, t in triples.tolist():
            hr_to_t.setdefault((h, r), []).append(t)
            rt_to_h.setdefault((r, t), []).append(h)
        self._hr_to_t = {k: np.unique(v) for k, v in hr_to_t.items()}
        self._rt_to_h = {k: np.unique(v) for k, v in rt_to_h.items()}

    def __contains__(self, triple) -> bool:
        h, r, t = triple
        return (int(h), int(r), int(t)) in self._all

    def __len__(self) -> int:
        return len(self._all)

    def tails_of(self, head: int, relation: int) -> np.ndarray:
        return self._hr_to_t.get((head, relation), _EMPTY_IDS)

    def heads_of(self, relation: int, tail: int) -> np.ndarray:
        return self._rt_to_h.get((relation, tail), _EMPTY_IDS)


_EMPTY_IDS = np.empty(0, dtype=np.int64)


@dataclass
class KnowledgeGraph:
    """Immutable triple store with train/valid/test splits and filter index."""

    vocab: Vocabulary
    train: np.ndarray
    valid: np.ndarray
    test: np.ndarray
    filter_index: FilterIndex = field(init=False, repr=False)
    _train_keys: np.ndarray = field(init=False, repr=False)

    def __post_init__(self) -> None:
        for name in SPLITS:
            arr = np.ascontiguousarray(getattr(self, name), dtype=np.int64)
            if arr.ndim != 2 or (arr.size and arr.shape[1] != 3):
                raise DataError(f"{name} split must have shape (n, 3)")
            arr = arr.reshape(-1, 3)
            self._check_ranges(name, arr)
            arr.flags.writeable = False
            object.__setattr__(self, name, arr)
        self.filter_index = FilterIndex(self.all_triples())
        self._train_keys = np.sort(self.encode(self.train))

    def _check_ranges(self, name: str, arr: np.ndarray) -> None:
        if arr.size == 0:
            return
        if arr.min() < 0:
            raise DataError(f"negative id in {name} split")
        if arr[:, [0, 2]].max() >= self.vocab.n_entities:
            raise DataError(f"entity id out of range in {name} split")
        if arr[:, 1].max() >= self.vocab.n_relations:
            raise DataError(f"relation id out of range in {name} split")

    @property
    def n_entities(self) -> int:
        return self.vocab.n_entities

    @property
    def n_relations(self) -> int:
        return self.vocab.n_relations

    def all_triples(self) -> np.ndarray:
        return np.concatenate([self.train, self.valid, self.test], axis=0)

    def encode(self, triples: np.ndarray) -> np.ndarray:
        """Pack (h, r, t) rows into scalar int64 keys for fast membership."""
        t = np.asarray(triples, dtype=np.int64).reshape(-1, 3)
        return (t[:, 0] * self.n_relations + t[:, 1]) * self.n_entities + t[:, 2]

    def in_train(self, triples: np.ndarray) -> np.ndarray:
        """Vectorized membership of (n, 3) rows in the training split."""
        keys = self.encode(triples)
        if self._train_keys.size == 0:
            return np.zeros(len(keys), dtype=bool)
        pos = np.searchsorted(self._train_keys, keys)
        pos = np.minimum(pos, self._train_keys.size - 1)
        return self._train_keys[pos] == keys


def _dedup(name: str, triples: list[tuple[int, int, int]],
           seen_before: set[tuple[int, int, int]]) -> list[tuple[int, int, int]]:
    """Drop repeats within a split and triples already present in an earlier
    split, keeping first occurrence, so the splits stay pairwise disjoint."""
    out = []
    seen: set[tuple[int, int, int]] = set()
    dropped_within = dropped_across = 0
    for tr in triples:
        if tr in seen:
            dropped_within += 1
            continue
        if tr in seen_before:
            dropped_across += 1
            continue
        seen.add(tr)
        out.append(tr)
    if dropped_within:
        logger.warning("%s split: deduplicated %d repeated triple(s)", name, dropped_within)
    if dropped_across:
        logger.warning("%s split: dropped %d triple(s) already present in an earlier split",
                       name, dropped_across)
    seen_before |= seen
    return out


def _read_lines(path: str) -> list[str]:
    if not os.path.isfile(path):
        raise DataError(f"missing file: {path}")
    with open(path, "r", encoding="utf-8") as fh:
        return fh.read().splitlines()


def _parse_count_line(path: str, lines: list[str]) -> int:
    if not lines:
        raise DataError(f"{path}:1: empty file, expected a count line")
    try:
        return int(lines[0].strip())
    except ValueError:
        raise DataError(f"{path}:1: expected an integer count, got {lines[0]!r}") from None


def _load_id_file(path: str) -> list[str]:
    lines = _read_lines(path)
    count = _parse_count_line(path, lines)
    names: list[str | None] = [None] * count
    rows = 0
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        parts = line.rsplit(None, 1)
        if len(parts) != 2:
            raise DataError(f"{path}:{lineno}: expected 'name id', got {line!r}")
        name, raw_id = parts
        try:
            idx = int(raw_id)
        except ValueError:
            raise DataError(f"{path}:{lineno}: non-integer id {raw_id!r}") from None
        if not 0 <= idx < count:
            raise DataError(f"{path}:{lineno}: id {idx} out of declared range [0, {count})")
        if names[idx] is not None:
            raise DataError(f"{path}:{lineno}: id {idx} assigned twice")
        names[idx] = name
        rows += 1
    if rows != count:
        raise DataError(f"{path}: declared {count} rows but found {rows}")
    return names  # type: ignore[return-value]


def _load_id_triples(path: str) -> list[tuple[int, int, int]]:
    lines = _read_lines(path)
    count = _parse_count_line(path, lines)
    triples = []
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        parts = line.split()
        if len(parts) != 3:
            raise DataError(f"{path}:{lineno}: expected 'h t r', got {line!r}")
        try:
            h, t, r = (int(p) for p in parts)
        except ValueError:
            raise DataError(f"{path}:{lineno}: non-integer id in {line!r}") from None
        triples.append((h, r, t))
    if len(triples) != count:
        raise DataError(f"{path}: declared {count} rows but found {len(triples)}")
    return triples


def _load_openke(path: str) -> KnowledgeGraph:
    entities = _load_id_file(os.path.join(path, "entity2id.txt"))
    relations = _load_id_file(os.path.join(path, "relation2id.txt"))
    vocab = Vocabulary(entities, relations)
    seen: set[tuple[int, int, int]] = set()
    splits = {}
    for name in SPLITS:
        fpath = os.path.join(path, f"{name}2id.txt")
        triples = _dedup(name, _load_id_triples(fpath), seen)
        splits[name] = np.array(triples, dtype=np.int64).reshape(-1, 3)
    return KnowledgeGraph(vocab, splits["train"], splits["valid"], splits["test"])


def _load_raw_tsv(path: str) -> KnowledgeGraph:
    raw: dict[str, list[tuple[str, str, str]]] = {}
    for name in SPLITS:
        fpath = os.path.join(path, f"{name}.tsv")
        rows = []
        for lineno, line in enumerate(_read_lines(fpath), start=1):
            if not line.strip():
                continue
            parts = line.split("\t")
            if len(parts) != 3:
                raise DataError(
                    f"{fpath}:{lineno}: expected 'head<TAB>relation<TAB>tail', got {line!r}")
            rows.append((parts[0], parts[1], parts[2]))
        raw[name] = rows

    # First-appearance id assignment over train, then valid, then test.
    ent_ids: dict[str, int] = {}
    rel_ids: dict[str, int] = {}
    for name in SPLITS:
        for h, r, t in raw[name]:
            for e in (h, t):
                if e not in ent_ids:
                    ent_ids[e] = len(ent_ids)
            if r not in rel_ids:
                rel_ids[r] = len(rel_ids)
    vocab = Vocabulary(list(ent_ids), list(rel_ids))

    seen: set[tuple[int, int, int]] = set()
    splits = {}
    for name in SPLITS:
        triples = [(ent_ids[h], rel_ids[r], ent_ids[t]) for h, r, t in raw[name]]
        triples = _dedup(name, triples, seen)
        splits[name] = np.array(triples, dtype=np.int64).reshape(-1, 3)
    return KnowledgeGraph(vocab, splits["train"], splits["valid"], splits["test"])


def load_dataset(path: str, format: str = "openke-id") -> KnowledgeGraph:
    """Load a dataset directory in ``openke-id`` or ``raw-tsv`` layout."""
    if not os.path.isdir(path):
        raise DataError(f"dataset directory not found: {path}")
    if format == "openke-id":
        return _load_openke(path)
    if format == "raw-tsv":
        return _load_raw_tsv(path)
    raise DataError(f"unknown dataset format: {format!r}")


def save_dataset(kg: KnowledgeGraph, path: str) -> None:
    """Write ``kg`` to ``path`` in canonical openke-id form.

    The writer is canonical (tab-separated id files, single-space triple
    files, LF endings), so ``save(load(D))`` reproduces ``D`` byte for byte
    for directories it produced itself.
    """
    os.makedirs(path, exist_ok=True)
    for fname, names in (("entity2id.txt", kg.vocab.entity_names),
                         ("relation2id.txt", kg.vocab.relation_names)):
        with open(os.path.join(path, fname), "w", encoding="utf-8") as fh:
            fh.write(f"{len(names)}\n")
            for i, name in enumerate(names):
                fh.write(f"{name}\t{i}\n")
    for split in SPLITS:
        arr = getattr(kg, split)
        with open(os.path.join(path, f"{split}2id.txt"), "w", encoding="utf-8") as fh:
            fh.write(f"{len(arr)}\n")
            for h, r, t in arr.tolist():
                fh.write(f"{h} {t} {r}\n")


@dataclass
class NegativeBatch:
    """Corruptions of one positive triple plus the 0/1 label vector.

    ``labels[0]`` is the positive's label (1); the rest are zeros, one per
    corruption. ``exhausted`` is set when the legal candidate space ran out
    (fewer than ``k`` corruptions returned) or a training-split collision had
    to be accepted after bounded retries.
    """

    positive: Triple
    negatives: np.ndarray
    labels: np.ndarray
    exhausted: bool


class NegativeSampler:
    """Uniform triple corruption with rejection against the training split.

    Holds its own generator state; use one instance per worker, never shared.
    Candidates equal to the source entity are never drawn; candidates present
    in the training split are rejected and redrawn up to ``max_retries``
    times. On small graphs an exhausted retry budget falls back to
    enumerating the legal candidates; on large graphs the colliding candidate
    is accepted with a warning (and the batch flagged).
    """

    # Graphs at or below this size get the exact enumeration fallback.
    ENUMERATE_LIMIT = 4096

    def __init__(self, kg: KnowledgeGraph, mode: str = "uniform-both",
                 seed: int | np.random.Generator = 0, max_retries: int = 32):
        if mode not in CORRUPTION_MODES:
            raise ValueError(f"mode must be one of {CORRUPTION_MODES}, got {mode!r}")
        if kg.n_entities < 2:
            raise DataError("negative sampling needs at least 2 entities")
        self.kg = kg
        self.mode = mode
        self.max_retries = max_retries
        self.rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)

    def sample(self, positive: Triple, k: int) -> NegativeBatch:
        if k < 1:
            raise ValueError("k must be >= 1")
        positive = Triple(*map(int, positive))
        negatives, exhausted = self.corrupt(np.array([positive], dtype=np.int64), k)
        labels = np.zeros(len(negatives) + 1, dtype=np.float64)
        labels[0] = 1.0
        return NegativeBatch(positive, negatives, labels, exhausted)

    def corrupt(self, positives: np.ndarray, k: int) -> tuple[np.ndarray, bool]:
        """Draw ``k`` corruptions per positive row. Returns (rows, exhausted).

        Rows are grouped per positive (first the k corruptions of positive 0,
        then of positive 1, ...); exhausted rows are dropped.
        """
        kg = self.kg
        pos = np.asarray(positives, dtype=np.int64).reshape(-1, 3)
        n = len(pos) * k
        out = np.repeat(pos, k, axis=0)
        if self.mode == "head":
            sites = np.zeros(n, dtype=np.int64)
        elif self.mode == "tail":
            sites = np.full(n, 2, dtype=np.int64)
        else:
            sites = self.rng.integers(0, 2, size=n) * 2  # 0 = head, 2 = tail

        originals = out[np.arange(n), sites]
        out[np.arange(n), sites] = self._draw(originals)
        colliding = kg.in_train(out)
        retries = 0
        while colliding.any() and retries < self.max_retries:
            idx = np.nonzero(colliding)[0]
            out[idx, sites[idx]] = self._draw(originals[idx])
            colliding[idx] = kg.in_train(out[idx])
            retries += 1

        exhausted = False
        if colliding.any():
            keep = np.ones(n, dtype=bool)
            for i in np.nonzero(colliding)[0]:
                replacement = self._enumerate_fallback(out[i], sites[i])
                if replacement is None and kg.n_entities <= self.ENUMERATE_LIMIT:
                    keep[i] = False
                    exhausted = True
                elif replacement is None:
                    logger.warning("accepting training-split collision %s after %d retries",
                                   tuple(out[i]), self.max_retries)
                    exhausted = True
                else:
                    out[i, sites[i]] = replacement
            out = out[keep]
        return out, exhausted

    def _draw(self, originals: np.ndarray) -> np.ndarray:
        """Uniform draw from E minus the original entity, one per row."""
        draws = self.rng.integers(0, self.kg.n_entities - 1, size=originals.shape)
        return np.where(draws >= originals, draws + 1, draws)

    def _enumerate_fallback(self, triple: np.ndarray, site: int) -> int | None:
        """Exact legal-candidate draw for small graphs; None when empty or
        the graph is too large to enumerate."""
        kg = self.kg
        if kg.n_entities > self.ENUMERATE_LIMIT:
            return None
        original = int(triple[site])
        candidates = np.repeat(triple.reshape(1, 3), kg.n_entities, axis=0)
        candidates[:, site] = np.arange(kg.n_entities)
        legal = np.nonzero(~kg.in_train(candidates))[0]
        legal = legal[legal != original]
        if legal.size == 0:
            return None
        return int(legal[self.rng.integers(0, legal.size)])


def sample_negatives(positive, k: int, mode: str, rng: np.random.Generator,
                     kg: KnowledgeGraph) -> NegativeBatch:
    """Functional wrapper over :class:`NegativeSampler` for one positive."""
    sampler = NegativeSampler(kg, mode=mode, seed=rng)
    return sampler.sample(Triple(*positive), k)
