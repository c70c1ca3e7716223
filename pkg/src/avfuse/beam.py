"""Label-synchronous joint beam search.

Each hypothesis carries its three score components separately; the combined
score is alpha * ctc + (1 - alpha) * s2s + theta * lm at all times, so the
bookkeeping can be re-derived and checked from scratch for any returned
hypothesis. Hypotheses end on eos and compete by combined score plus an
optional length bonus. Ties break lexicographically on the token ids.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .ctc import CtcPrefixScorer
from .lm import LmSession
from .vocab import BLANK_ID, EOS_ID, SOS_ID

__all__ = ["Hypothesis", "joint_beam_search"]


@dataclass(frozen=True)
class Hypothesis:
    tokens: tuple[int, ...]
    ctc_logp: float = 0.0
    s2s_logp: float = 0.0
    lm_logp: float = 0.0
    finished: bool = False

    def combined(self, alpha: float, theta: float) -> float:
        return alpha * self.ctc_logp + (1.0 - alpha) * self.s2s_logp + theta * self.lm_logp


def joint_beam_search(
    s2s_step,
    vocab_size: int,
    alpha: float,
    theta: float,
    beam_size: int,
    max_len: int,
    ctc_scorer: CtcPrefixScorer | None = None,
    lm: LmSession | None = None,
    length_penalty: float = 0.0,
) -> Hypothesis:
    """Return the best eos-terminated hypothesis under the joint score.

    ``s2s_step(prefix) -> (vocab,) log-distribution`` supplies the
    sequence-level posterior for the next token given the unit prefix
    (no sos); it may come from a single stream, the concatenation baseline,
    or the fused token-level net. ``ctc_scorer`` is required when alpha > 0.
    ``lm`` is consulted only when theta > 0.
    """
    if beam_size < 1:
        raise ValueError("beam size must be >= 1")
    if not 0.0 <= alpha <= 1.0:
        raise ValueError("alpha must lie in [0, 1]")
    if theta < 0.0:
        raise ValueError("theta must be >= 0")
    if alpha > 0.0 and ctc_scorer is None:
        raise ValueError("alpha > 0 needs a ctc scorer")

    use_ctc = alpha > 0.0 and ctc_scorer is not None
    use_lm = theta > 0.0 and lm is not None

    def sort_key(hyp: Hypothesis):
        bonus = length_penalty * len(hyp.tokens)
        return (-(hyp.combined(alpha, theta) + bonus), hyp.tokens)

    beams = [Hypothesis(tokens=())]
    finished: list[Hypothesis] = []

    for _ in range(max_len):
        candidates: list[Hypothesis] = []
        for hyp in beams:
            s2s_row = np.asarray(s2s_step(hyp.tokens), dtype=np.float64)
            if s2s_row.shape != (vocab_size,):
                raise ValueError(f"s2s_step returned shape {s2s_row.shape}")
            lm_row = lm.next_logp(hyp.tokens) if use_lm else None
            for tok in range(vocab_size):
                if tok in (BLANK_ID, SOS_ID):
                    continue
                ctc_delta = ctc_scorer.score(hyp.tokens, tok) if use_ctc else 0.0
                cand = Hypothesis(
                    tokens=hyp.tokens if tok == EOS_ID else hyp.tokens + (tok,),
                    ctc_logp=hyp.ctc_logp + ctc_delta,
                    s2s_logp=hyp.s2s_logp + float(s2s_row[tok]),
                    lm_logp=hyp.lm_logp + (float(lm_row[tok]) if use_lm else 0.0),
                    finished=tok == EOS_ID,
                )
                if cand.finished:
                    finished.append(cand)
                else:
                    candidates.append(cand)
        candidates.sort(key=sort_key)
        beams = candidates[:beam_size]
        if not beams:
            break

    if not finished:
        # no hypothesis reached eos within max_len; fall back to closing the
        # best open one so callers always get a terminated result
        best_open = min(beams, key=sort_key)
        s2s_row = np.asarray(s2s_step(best_open.tokens), dtype=np.float64)
        lm_row = lm.next_logp(best_open.tokens) if use_lm else None
        return Hypothesis(
            tokens=best_open.tokens,
            ctc_logp=best_open.ctc_logp
            + (ctc_scorer.score(best_open.tokens, EOS_ID) if use_ctc else 0.0),
            s2s_logp=best_open.s2s_logp + float(s2s_row[EOS_ID]),
            lm_logp=best_open.lm_logp + (float(lm_row[EOS_ID]) if use_lm else 0.0),
            finished=True,
        )
    return min(finished, key=sort_key)
