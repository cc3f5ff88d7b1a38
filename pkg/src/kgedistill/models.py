"""Embedding model families: storage, batch scoring, analytic gradients.

Four families are supported, all scored so that higher means more plausible:

* ``TransE``   : -||h + r - t||_p                      (p in {1, 2})
* ``SimplE``   : (<h_H, r, t_T> + <t_H, r_inv, h_T>)/2
* ``ComplEx``  : Re(h^T diag(r) conj(t))
* ``RotatE``   : -||h . r - t||^2 with unit-modulus r

Complex-valued embeddings (ComplEx, RotatE entities) are stored as rows of
2d reals with real/imaginary parts interleaved, so the real-vector view of
an entity is just its storage row. RotatE relations are stored as phase
vectors, which keeps |r_i| = 1 by construction.

Tables are float32; all arithmetic gathers rows into float64 first so the
backward passes survive finite-difference checking at 1e-4.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Iterator

import numpy as np

FAMILY_TAGS = ("TransE", "SimplE", "ComplEx", "RotatE")
FAMILY_CODES = {tag: i for i, tag in enumerate(FAMILY_TAGS)}


@dataclass(frozen=True)
class ModelFamily:
    tag: str
    p_norm: int = 2  # TransE only

    def __post_init__(self):
        if self.tag not in FAMILY_TAGS:
            raise ValueError(f"unknown family {self.tag!r}, expected one of {FAMILY_TAGS}")
        if self.p_norm not in (1, 2):
            raise ValueError("p_norm must be 1 or 2")


def parse_family(name: str, p_norm: int = 2) -> ModelFamily:
    """Case-insensitive family lookup (CLI convenience)."""
    for tag in FAMILY_TAGS:
        if tag.lower() == name.lower():
            return ModelFamily(tag, p_norm)
    raise ValueError(f"unknown family {name!r}, expected one of {FAMILY_TAGS}")


def table_layout(family: ModelFamily, dim: int, n_entities: int,
                 n_relations: int) -> dict[str, tuple[int, int]]:
    """Canonical table names and shapes. Iteration order is the checkpoint
    serialization order (entity tables first, then relation tables)."""
    if family.tag == "TransE":
        return {"entity": (n_entities, dim), "relation": (n_relations, dim)}
    if family.tag == "SimplE":
        return {"entity_head": (n_entities, dim), "entity_tail": (n_entities, dim),
                "relation": (n_relations, dim), "relation_inv": (n_relations, dim)}
    if family.tag == "ComplEx":
        return {"entity": (n_entities, 2 * dim), "relation": (n_relations, 2 * dim)}
    return {"entity": (n_entities, 2 * dim), "relation_phase": (n_relations, dim)}


@dataclass
class ModelParams:
    """Entity/relation embedding tables for one model family."""

    family: ModelFamily
    dim: int
    tables: dict[str, np.ndarray]
    seed: int = 0

    @property
    def n_entities(self) -> int:
        first = "entity_head" if self.family.tag == "SimplE" else "entity"
        return self.tables[first].shape[0]

    @property
    def n_relations(self) -> int:
        last = {"TransE": "relation", "SimplE": "relation",
                "ComplEx": "relation", "RotatE": "relation_phase"}[self.family.tag]
        return self.tables[last].shape[0]

    @property
    def view_dim(self) -> int:
        """Width of the real-vector entity view fed to the structure loss."""
        return self.dim if self.family.tag == "TransE" else 2 * self.dim

    def copy(self) -> "ModelParams":
        return replace(self, tables={k: v.copy() for k, v in self.tables.items()})

    def as_dtype(self, dtype) -> "ModelParams":
        return replace(self, tables={k: v.astype(dtype) for k, v in self.tables.items()})

    def is_finite(self) -> bool:
        return all(np.isfinite(v).all() for v in self.tables.values())

    def equal_bits(self, other: "ModelParams") -> bool:
        return (self.tables.keys() == other.tables.keys() and
                all(self.tables[k].tobytes() == other.tables[k].tobytes()
                    for k in self.tables))


def init_params(family: ModelFamily, dim: int, n_entities: int, n_relations: int,
                seed: int = 0, dtype=np.float32) -> ModelParams:
    """Xavier-style uniform init on [-6/sqrt(d), 6/sqrt(d)]; RotatE phases
    uniform on [0, 2*pi). Deterministic under ``seed``."""
    if dim < 1:
        raise ValueError("dim must be >= 1")
    if n_entities < 1 or n_relations < 1:
        raise ValueError("need at least one entity and one relation")
    rng = np.random.default_rng(seed)
    bound = 6.0 / np.sqrt(dim)
    tables = {}
    for name, shape in table_layout(family, dim, n_entities, n_relations).items():
        if name == "relation_phase":
            tables[name] = rng.uniform(0.0, 2.0 * np.pi, size=shape).astype(dtype)
        else:
            tables[name] = rng.uniform(-bound, bound, size=shape).astype(dtype)
    return ModelParams(family, dim, tables, seed=seed)


class SparseGrad:
    """Per-table row gradients, accumulated where a row repeats in a batch."""

    def __init__(self):
        self._parts: dict[str, list[tuple[np.ndarray, np.ndarray]]] = {}

    def add(self, table: str, ids: np.ndarray, rows: np.ndarray) -> None:
        if ids.size:
            self._parts.setdefault(table, []).append(
                (np.asarray(ids, dtype=np.int64), np.asarray(rows, dtype=np.float64)))

    def update(self, other: "SparseGrad") -> None:
        for table, parts in other._parts.items():
            self._parts.setdefault(table, []).extend(parts)

    def tables(self) -> list[str]:
        return list(self._parts)

    def items(self) -> Iterator[tuple[str, np.ndarray, np.ndarray]]:
        """Yield (table, unique_row_ids, accumulated_rows)."""
        for table, parts in self._parts.items():
            ids = np.concatenate([p[0] for p in parts])
            rows = np.concatenate([p[1] for p in parts], axis=0)
            uniq, inverse = np.unique(ids, return_inverse=True)
            acc = np.zeros((uniq.size, rows.shape[1]), dtype=np.float64)
            np.add.at(acc, inverse, rows)
            yield table, uniq, acc

    def dense(self, table: str, shape: tuple[int, int]) -> np.ndarray:
        """Materialize one table's gradient densely (test helper)."""
        out = np.zeros(shape, dtype=np.float64)
        for name, ids, rows in self.items():
            if name == table:
                out[ids] += rows
        return out

    def is_finite(self) -> bool:
        return all(np.isfinite(rows).all() for parts in self._parts.values()
                   for _, rows in parts)


@dataclass
class ScoreBatch:
    """Per-triple scores plus cached intermediates for the backward pass."""

    scores: np.ndarray
    triples: np.ndarray
    cache: dict = field(repr=False, default_factory=dict)


def _f64(rows: np.ndarray) -> np.ndarray:
    return rows.astype(np.float64, copy=False)


def _split_complex(rows: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    return rows[:, 0::2], rows[:, 1::2]


def _interleave(re: np.ndarray, im: np.ndarray) -> np.ndarray:
    out = np.empty((re.shape[0], 2 * re.shape[1]), dtype=np.float64)
    out[:, 0::2] = re
    out[:, 1::2] = im
    return out


def score(params: ModelParams, triples: np.ndarray) -> ScoreBatch:
    """Score a batch of (head, relation, tail) id rows."""
    tr = np.asarray(triples, dtype=np.int64).reshape(-1, 3)
    if tr.size and (tr[:, [0, 2]].max() >= params.n_entities
                    or tr[:, 1].max() >= params.n_relations or tr.min() < 0):
        raise IndexError("triple id out of range for parameter tables")
    h, r, t = tr[:, 0], tr[:, 1], tr[:, 2]
    tag = params.family.tag
    tb = params.tables

    if tag == "TransE":
        he, re_, te = _f64(tb["entity"][h]), _f64(tb["relation"][r]), _f64(tb["entity"][t])
        diff = he + re_ - te
        if params.family.p_norm == 2:
            norm = np.sqrt(np.sum(diff * diff, axis=1))
            cache = {"diff": diff, "norm": norm}
            return ScoreBatch(-norm, tr, cache)
        cache = {"diff": diff}
        return ScoreBatch(-np.sum(np.abs(diff), axis=1), tr, cache)

    if tag == "SimplE":
        hh, ht = _f64(tb["entity_head"][h]), _f64(tb["entity_tail"][h])
        th, tt = _f64(tb["entity_head"][t]), _f64(tb["entity_tail"][t])
        rr, ri = _f64(tb["relation"][r]), _f64(tb["relation_inv"][r])
        s = 0.5 * (np.sum(hh * rr * tt, axis=1) + np.sum(th * ri * ht, axis=1))
        cache = {"hh": hh, "ht": ht, "th": th, "tt": tt, "rr": rr, "ri": ri}
        return ScoreBatch(s, tr, cache)

    if tag == "ComplEx":
        a, b = _split_complex(_f64(tb["entity"][h]))
        c, d = _split_complex(_f64(tb["relation"][r]))
        e, f = _split_complex(_f64(tb["entity"][t]))
        s = np.sum((a * c - b * d) * e + (a * d + b * c) * f, axis=1)
        cache = {"a": a, "b": b, "c": c, "d": d, "e": e, "f": f}
        return ScoreBatch(s, tr, cache)

    # RotatE
    a, b = _split_complex(_f64(tb["entity"][h]))
    theta = _f64(tb["relation_phase"][r])
    e, f = _split_complex(_f64(tb["entity"][t]))
    cos, sin = np.cos(theta), np.sin(theta)
    rot_re = a * cos - b * sin
    rot_im = a * sin + b * cos
    u, v = rot_re - e, rot_im - f
    s = -np.sum(u * u + v * v, axis=1)
    cache = {"u": u, "v": v, "cos": cos, "sin": sin, "rot_re": rot_re, "rot_im": rot_im}
    return ScoreBatch(s, tr, cache)


def score_backward(params: ModelParams, batch: ScoreBatch,
                   upstream: np.ndarray) -> SparseGrad:
    """Chain ``upstream`` (dL/dscore per triple) back to the touched rows."""
    if not batch.cache and batch.triples.size:
        raise ValueError("score_backward needs the cache from a matching forward pass")
    up = np.asarray(upstream, dtype=np.float64).reshape(-1)
    tr = batch.triples
    if up.shape[0] != tr.shape[0]:
        raise ValueError(f"upstream length {up.shape[0]} != batch size {tr.shape[0]}")
    h, r, t = tr[:, 0], tr[:, 1], tr[:, 2]
    u_col = up[:, None]
    tag = params.family.tag
    cache = batch.cache
    grad = SparseGrad()
    if tr.shape[0] == 0:
        return grad

    if tag == "TransE":
        diff = cache["diff"]
        if params.family.p_norm == 2:
            norm = cache["norm"]
            unit = np.divide(diff, norm[:, None], out=np.zeros_like(diff),
                             where=norm[:, None] > 0)
            d_diff = -unit * u_col
        else:
            d_diff = -np.sign(diff) * u_col
        grad.add("entity", h, d_diff)
        grad.add("relation", r, d_diff)
        grad.add("entity", t, -d_diff)
        return grad

    if tag == "SimplE":
        hh, ht, th, tt = cache["hh"], cache["ht"], cache["th"], cache["tt"]
        rr, ri = cache["rr"], cache["ri"]
        grad.add("entity_head", h, 0.5 * rr * tt * u_col)
        grad.add("entity_tail", t, 0.5 * hh * rr * u_col)
        grad.add("entity_head", t, 0.5 * ri * ht * u_col)
        grad.add("entity_tail", h, 0.5 * th * ri * u_col)
        grad.add("relation", r, 0.5 * hh * tt * u_col)
        grad.add("relation_inv", r, 0.5 * th * ht * u_col)
        return grad

    if tag == "ComplEx":
        a, b, c, d = cache["a"], cache["b"], cache["c"], cache["d"]
        e, f = cache["e"], cache["f"]
        grad.add("entity", h, _interleave((c * e + d * f) * u_col, (c * f - d * e) * u_col))
        grad.add("relation", r, _interleave((a * e + b * f) * u_col, (a * f - b * e) * u_col))
        grad.add("entity", t, _interleave((a * c - b * d) * u_col, (a * d + b * c) * u_col))
        return grad

    # RotatE
    u, v = cache["u"], cache["v"]
    cos, sin = cache["cos"], cache["sin"]
    rot_re, rot_im = cache["rot_re"], cache["rot_im"]
    da = -2.0 * (u * cos + v * sin) * u_col
    db = -2.0 * (-u * sin + v * cos) * u_col
    grad.add("entity", h, _interleave(da, db))
    grad.add("relation_phase", r, -2.0 * (-u * rot_im + v * rot_re) * u_col)
    grad.add("entity", t, _interleave(2.0 * u * u_col, 2.0 * v * u_col))
    return grad


def entity_view(params: ModelParams, entity_id: int) -> np.ndarray:
    """Read-only real-vector view of one entity, as fed to the structure loss.

    TransE returns the d-vector; ComplEx and RotatE the 2d storage row
    (real/imaginary interleaved); SimplE the concatenation of its head and
    tail views.
    """
    if not 0 <= entity_id < params.n_entities:
        raise IndexError(f"entity id {entity_id} out of range")
    if params.family.tag == "SimplE":
        out = np.concatenate([params.tables["entity_head"][entity_id],
                              params.tables["entity_tail"][entity_id]])
    else:
        out = params.tables["entity"][entity_id]
    out.flags.writeable = False
    return out


def entity_view_batch(params: ModelParams, ids: np.ndarray) -> np.ndarray:
    """Float64 (n, view_dim) matrix of entity views for a batch of ids."""
    ids = np.asarray(ids, dtype=np.int64)
    if params.family.tag == "SimplE":
        return np.concatenate([_f64(params.tables["entity_head"][ids]),
                               _f64(params.tables["entity_tail"][ids])], axis=1)
    return _f64(params.tables["entity"][ids])


def entity_view_backward(params: ModelParams, ids: np.ndarray,
                         grads: np.ndarray) -> SparseGrad:
    """Map gradients w.r.t. entity views back onto the storage tables."""
    out = SparseGrad()
    ids = np.asarray(ids, dtype=np.int64)
    grads = np.asarray(grads, dtype=np.float64)
    if params.family.tag == "SimplE":
        d = params.dim
        out.add("entity_head", ids, grads[:, :d])
        out.add("entity_tail", ids, grads[:, d:])
    else:
        out.add("entity", ids, grads)
    return out


def score_tails(params: ModelParams, heads: np.ndarray, relations: np.ndarray,
                chunk: int = 256) -> np.ndarray:
    """Score every entity as the tail of each (head, relation) pair.

    Returns an (n_pairs, n_entities) float64 matrix. This is the inference
    sweep used by the evaluator's fast path and the latency benchmark; all
    families reduce to dense matrix products against the entity table.
    """
    heads = np.asarray(heads, dtype=np.int64).reshape(-1)
    relations = np.asarray(relations, dtype=np.int64).reshape(-1)
    tag = params.family.tag
    tb = params.tables
    n = heads.shape[0]
    out = np.empty((n, params.n_entities), dtype=np.float64)

    if tag == "TransE":
        ent = _f64(tb["entity"])
        q = ent[heads] + _f64(tb["relation"][relations])
        if params.family.p_norm == 2:
            sq_e = np.sum(ent * ent, axis=1)
            for lo in range(0, n, chunk):
                hi = min(lo + chunk, n)
                qc = q[lo:hi]
                d2 = np.sum(qc * qc, axis=1)[:, None] - 2.0 * (qc @ ent.T) + sq_e[None, :]
                np.maximum(d2, 0.0, out=d2)
                out[lo:hi] = -np.sqrt(d2)
        else:
            for lo in range(0, n, chunk):
                hi = min(lo + chunk, n)
                out[lo:hi] = -np.sum(np.abs(q[lo:hi, None, :] - ent[None, :, :]), axis=2)
        return out

    if tag == "SimplE":
        eh, et = _f64(tb["entity_head"]), _f64(tb["entity_tail"])
        q1 = eh[heads] * _f64(tb["relation"][relations])
        q2 = _f64(tb["relation_inv"][relations]) * et[heads]
        for lo in range(0, n, chunk):
            hi = min(lo + chunk, n)
            out[lo:hi] = 0.5 * (q1[lo:hi] @ et.T + q2[lo:hi] @ eh.T)
        return out

    e_re = np.ascontiguousarray(_f64(tb["entity"][:, 0::2]))
    e_im = np.ascontiguousarray(_f64(tb["entity"][:, 1::2]))
    a, b = e_re[heads], e_im[heads]

    if tag == "ComplEx":
        c, d = _split_complex(_f64(tb["relation"][relations]))
        q_re, q_im = a * c - b * d, a * d + b * c
        for lo in range(0, n, chunk):
            hi = min(lo + chunk, n)
            out[lo:hi] = q_re[lo:hi] @ e_re.T + q_im[lo:hi] @ e_im.T
        return out

    # RotatE
    theta = _f64(tb["relation_phase"][relations])
    cos, sin = np.cos(theta), np.sin(theta)
    q_re, q_im = a * cos - b * sin, a * sin + b * cos
    sq_q = np.sum(q_re * q_re + q_im * q_im, axis=1)
    sq_e = np.sum(e_re * e_re + e_im * e_im, axis=1)
    for lo in range(0, n, chunk):
        hi = min(lo + chunk, n)
        cross = q_re[lo:hi] @ e_re.T + q_im[lo:hi] @ e_im.T
        out[lo:hi] = -(sq_q[lo:hi, None] - 2.0 * cross + sq_e[None, :])
    return out
