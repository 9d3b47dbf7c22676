"""Trie-constrained beam search producing top-K ranked item lists.

All complete code sequences share one length, so beam scores are plain sums of
token log-probabilities with no length normalization. Score ties break by
lexicographic code tuple.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

from .rqvae import ItemCodeTable
from .vocab import PrefixTrie, code_token


@dataclass
class RankedList:
    user: str
    index_type: str
    template_id: int
    entries: list[tuple[str, float]] = field(default_factory=list)

    def items(self) -> list[str]:
        return [item for item, _ in self.entries]


def beam_search_constrained(scorer, trie: PrefixTrie, context: list[str],
                            k: int, user: str = "", template_id: int = 0) -> RankedList:
    """Beam search over exactly trie.depth steps, width k.

    Candidate tokens at each step are the trie edges leaving the beam prefix;
    the scorer renormalizes over exactly that candidate set.
    """
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    if trie.size == 0:
        raise ValueError("trie is empty")
    vocab = getattr(scorer, "vocab", None)
    if vocab is not None:
        known = set(vocab)
        for t in context:
            if t not in known:
                raise ValueError(f"unknown context token {t!r}")
    # beam entries: (score, code-word tuple, node, generated tokens)
    beams = [(0.0, (), trie.root, ())]
    for _ in range(trie.depth):
        expanded = []
        for score, code, node, toks in beams:
            logps = scorer.next_token_logprobs(context + list(toks),
                                               tuple(node.children))
            for tok, child in node.children.items():
                expanded.append((score + logps[tok], code + (child.word,),
                                 child, toks + (tok,)))
        expanded.sort(key=lambda b: (-b[0], b[1]))
        beams = expanded[:k]
    return RankedList(user=user, index_type=trie.index_type, template_id=template_id,
                      entries=[(node.item, score) for score, _, node, _ in beams])


def exhaustive_topk_oracle(scorer, table: ItemCodeTable, context: list[str],
                           k: int, user: str = "", template_id: int = 0) -> RankedList:
    """Score every item's full code path directly from the table and sort.

    Independent of the trie: per-step candidate sets are recovered by scanning
    the table for items sharing the current prefix. Intended as a test oracle
    for small tables.
    """
    if len(table.codes) > 10_000:
        raise ValueError("oracle is for small tables (<= 10000 items)")
    depth = table.code_len_total
    # candidate tokens for every observed word prefix
    successors: dict[tuple[int, ...], set[str]] = {}
    for tup in table.codes.values():
        for step in range(depth):
            tok = code_token(table.index_type, step + 1, tup[step])
            successors.setdefault(tup[:step], set()).add(tok)
    scored = []
    for item in sorted(table.codes):
        tup = table.codes[item]
        total = 0.0
        toks: list[str] = []
        for step in range(depth):
            tok = code_token(table.index_type, step + 1, tup[step])
            logps = scorer.next_token_logprobs(context + toks,
                                               tuple(sorted(successors[tup[:step]])))
            total += logps[tok]
            toks.append(tok)
        scored.append((total, tup, item))
    scored.sort(key=lambda s: (-s[0], s[1]))
    return RankedList(user=user, index_type=table.index_type, template_id=template_id,
                      entries=[(item, total) for total, _, item in scored[:k]])


# ---------------------------------------------------------------------------
# Line-delimited interchange format shared by retrieval, rerank, and eval

def ranked_list_record(rl: RankedList) -> str:
    return json.dumps({"user": rl.user, "index_type": rl.index_type,
                       "template": rl.template_id,
                       "items": [i for i, _ in rl.entries],
                       "scores": [s for _, s in rl.entries]})


def parse_ranked_list(line: str) -> RankedList:
    rec = json.loads(line)
    return RankedList(user=rec["user"], index_type=rec["index_type"],
                      template_id=rec["template"],
                      entries=list(zip(rec["items"], rec["scores"])))


def write_ranked_lists(lists: list[RankedList], path: str | Path) -> None:
    with Path(path).open("w", encoding="utf-8") as fh:
        for rl in lists:
            fh.write(ranked_list_record(rl) + "\n")


def read_ranked_lists(path: str | Path) -> list[RankedList]:
    out = []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if line:
            out.append(parse_ranked_list(line))
    return out
