"""Word error rate via Levenshtein distance.

Corpus WER is total edit operations over total reference words, in percent,
so long utterances weigh more than short ones.
"""

from __future__ import annotations

import numpy as np

__all__ = ["edit_distance", "wer_percent"]


def edit_distance(hyp: list[str], ref: list[str]) -> int:
    """Minimum number of substitutions, insertions, and deletions turning
    ``hyp`` into ``ref``."""
    n, m = len(hyp), len(ref)
    if n == 0:
        return m
    if m == 0:
        return n
    # one dp row per hyp token, rolled
    prev = np.arange(m + 1)
    for i in range(1, n + 1):
        cur = np.empty(m + 1, dtype=np.int64)
        cur[0] = i
        for j in range(1, m + 1):
            sub = prev[j - 1] + (hyp[i - 1] != ref[j - 1])
            cur[j] = min(sub, prev[j] + 1, cur[j - 1] + 1)
        prev = cur
    return int(prev[m])


def wer_percent(hyps: list[list[str]], refs: list[list[str]]) -> float:
    """Corpus-level WER: sum of word-level edit distances over the total
    reference word count, times 100."""
    if len(hyps) != len(refs):
        raise ValueError(f"{len(hyps)} hypotheses vs {len(refs)} references")
    total_words = sum(len(r) for r in refs)
    if total_words == 0:
        raise ValueError("reference corpus has no words")
    edits = sum(edit_distance(h, r) for h, r in zip(hyps, refs))
    return 100.0 * edits / total_words
