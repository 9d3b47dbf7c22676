"""Interaction logs, k-core filtering, leave-one-out splits, and embedding matrix I/O."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

log = logging.getLogger(__name__)

EMB_HEADER = "ITEM_EMB v1"


@dataclass
class InteractionDataset:
    """Users, items, and per-user chronological (item, timestamp) sequences.

    Invariant: `users` / `items` are exactly the ids occurring in `sequences`,
    and each sequence is sorted non-decreasing by timestamp (ties keep input order).
    """

    users: set[str]
    items: set[str]
    sequences: dict[str, list[tuple[str, int]]]
    skipped_lines: int = field(default=0, compare=False)

    @classmethod
    def from_sequences(cls, sequences: dict[str, list[tuple[str, int]]],
                       skipped_lines: int = 0) -> "InteractionDataset":
        users = {u for u, seq in sequences.items() if seq}
        items = {i for seq in sequences.values() for i, _ in seq}
        return cls(users=users, items=items,
                   sequences={u: list(sequences[u]) for u in sequences if sequences[u]},
                   skipped_lines=skipped_lines)

    def num_interactions(self) -> int:
        return sum(len(s) for s in self.sequences.values())


@dataclass
class SplitDataset:
    """Leave-one-out split: per-user train history plus single valid/test items."""

    train: dict[str, list[str]]
    valid: dict[str, str]
    test: dict[str, str]
    dropped_users: list[str] = field(default_factory=list, compare=False)

    def train_items(self) -> set[str]:
        return {i for seq in self.train.values() for i in seq}


@dataclass
class EmbeddingMatrix:
    """Item-id-aligned dense real matrix, from a collaborative or semantic source."""

    dim: int
    rows: dict[str, np.ndarray]
    source_tag: str  # "collaborative" | "semantic"

    def matrix(self, item_order: list[str]) -> np.ndarray:
        return np.stack([self.rows[i] for i in item_order])


def load_interactions(path: str | Path) -> InteractionDataset:
    """Parse `user<TAB>item<TAB>timestamp` lines into a dataset.

    Malformed lines are skipped and counted; an empty result is an error.
    """
    path = Path(path)
    raw: dict[str, list[tuple[str, int]]] = {}
    skipped = 0
    with path.open("r", encoding="utf-8") as fh:
        for line in fh:
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 3 or not parts[0] or not parts[1]:
                skipped += 1
                continue
            try:
                ts = int(parts[2])
            except ValueError:
                skipped += 1
                continue
            raw.setdefault(parts[0], []).append((parts[1], ts))
    if skipped:
        log.warning("%s: skipped %d malformed line(s)", path, skipped)
    if not raw:
        raise ValueError(f"{path}: no valid interaction lines")
    # stable sort keeps input order for equal timestamps
    for u in raw:
        raw[u].sort(key=lambda pair: pair[1])
    return InteractionDataset.from_sequences(raw, skipped_lines=skipped)


def write_interactions(ds: InteractionDataset, path: str | Path) -> None:
    path = Path(path)
    with path.open("w", encoding="utf-8") as fh:
        for u in sorted(ds.sequences):
            for item, ts in ds.sequences[u]:
                fh.write(f"{u}\t{item}\t{ts}\n")


def kcore_filter(ds: InteractionDataset, k: int) -> InteractionDataset:
    """Iteratively drop users/items with fewer than k interactions until fixpoint."""
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    sequences = {u: list(seq) for u, seq in ds.sequences.items()}
    while True:
        item_counts: dict[str, int] = {}
        for seq in sequences.values():
            for item, _ in seq:
                item_counts[item] = item_counts.get(item, 0) + 1
        bad_items = {i for i, c in item_counts.items() if c < k}
        changed = False
        for u in list(sequences):
            seq = sequences[u]
            if bad_items:
                kept = [(i, t) for i, t in seq if i not in bad_items]
                if len(kept) != len(seq):
                    sequences[u] = kept
                    seq = kept
                    changed = True
            if len(seq) < k:
                del sequences[u]
                changed = True
        if not changed:
            break
    return InteractionDataset.from_sequences(sequences, skipped_lines=ds.skipped_lines)


def leave_one_out_split(ds: InteractionDataset, max_len: int = 20) -> SplitDataset:
    """Per user: last item to test, second-to-last to valid, the rest to train.

    Train histories keep only the last `max_len` items. Users with fewer than
    3 interactions are excluded from all splits and reported.
    """
    if max_len < 1:
        raise ValueError(f"max_len must be >= 1, got {max_len}")
    train: dict[str, list[str]] = {}
    valid: dict[str, str] = {}
    test: dict[str, str] = {}
    dropped: list[str] = []
    for u, seq in ds.sequences.items():
        items = [i for i, _ in seq]
        if len(items) < 3:
            dropped.append(u)
            continue
        train[u] = items[:-2][-max_len:]
        valid[u] = items[-2]
        test[u] = items[-1]
    if dropped:
        log.warning("leave-one-out: excluded %d user(s) with < 3 interactions", len(dropped))
    return SplitDataset(train=train, valid=valid, test=test, dropped_users=sorted(dropped))


def write_split(split: SplitDataset, out_dir: str | Path) -> None:
    """Write the split manifest as train/valid/test TSV files."""
    out_dir = Path(out_dir)
    with (out_dir / "train.tsv").open("w", encoding="utf-8") as fh:
        for u in sorted(split.train):
            for item in split.train[u]:
                fh.write(f"{u}\t{item}\n")
    for name, mapping in (("valid", split.valid), ("test", split.test)):
        with (out_dir / f"{name}.tsv").open("w", encoding="utf-8") as fh:
            for u in sorted(mapping):
                fh.write(f"{u}\t{mapping[u]}\n")


def load_split(out_dir: str | Path) -> SplitDataset:
    out_dir = Path(out_dir)
    train: dict[str, list[str]] = {}
    for line in (out_dir / "train.tsv").read_text(encoding="utf-8").splitlines():
        u, item = line.split("\t")
        train.setdefault(u, []).append(item)
    single: dict[str, dict[str, str]] = {}
    for name in ("valid", "test"):
        single[name] = {}
        for line in (out_dir / f"{name}.tsv").read_text(encoding="utf-8").splitlines():
            u, item = line.split("\t")
            single[name][u] = item
    return SplitDataset(train=train, valid=single["valid"], test=single["test"])


def load_embedding_matrix(path: str | Path, source_tag: str) -> EmbeddingMatrix:
    """Read the `ITEM_EMB v1` text format; format errors name the offending line."""
    path = Path(path)
    with path.open("r", encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if not lines or lines[0] != EMB_HEADER:
        raise ValueError(f"{path}:1: expected header '{EMB_HEADER}'")
    if len(lines) < 2:
        raise ValueError(f"{path}:2: missing 'n d' size line")
    try:
        n, d = (int(x) for x in lines[1].split())
    except ValueError:
        raise ValueError(f"{path}:2: malformed size line {lines[1]!r}") from None
    rows: dict[str, np.ndarray] = {}
    for lineno, line in enumerate(lines[2:2 + n], start=3):
        parts = line.split()
        if len(parts) != d + 1:
            raise ValueError(f"{path}:{lineno}: expected {d + 1} fields, got {len(parts)}")
        item = parts[0]
        if item in rows:
            raise ValueError(f"{path}:{lineno}: duplicate item id {item!r}")
        try:
            vec = np.array([float(x) for x in parts[1:]], dtype=np.float64)
        except ValueError:
            raise ValueError(f"{path}:{lineno}: non-numeric value") from None
        if not np.all(np.isfinite(vec)):
            raise ValueError(f"{path}:{lineno}: non-finite value")
        rows[item] = vec
    if len(rows) != n:
        raise ValueError(f"{path}: expected {n} rows, found {len(rows)}")
    return EmbeddingMatrix(dim=d, rows=rows, source_tag=source_tag)


def write_embedding_matrix(emb: EmbeddingMatrix, path: str | Path) -> None:
    path = Path(path)
    with path.open("w", encoding="utf-8") as fh:
        fh.write(f"{EMB_HEADER}\n{len(emb.rows)} {emb.dim}\n")
        for item in sorted(emb.rows):
            vec = emb.rows[item]
            if vec.shape != (emb.dim,):
                raise ValueError(f"row {item!r} has dim {vec.shape}, expected ({emb.dim},)")
            if not np.all(np.isfinite(vec)):
                raise ValueError(f"row {item!r} has non-finite values")
            fh.write(item + " " + " ".join(repr(float(v)) for v in vec) + "\n")


def check_finite(name: str, arr: np.ndarray) -> None:
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name}: non-finite values")
