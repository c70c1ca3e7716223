"""Alignment-marginalizing loss and frame-synchronous scoring primitives.

Everything runs in log space. The recursions use a finite sentinel (-1e30)
instead of -inf so that log-add gradients stay NaN-free: exp(-1e30 - x)
underflows to exactly zero in float64, which is the correct contribution of
an impossible path.
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .vocab import BLANK_ID, EOS_ID

__all__ = [
    "CtcInfeasibleError",
    "CtcCacheMissError",
    "ctc_loss",
    "ctc_greedy_decode",
    "CtcPrefixScorer",
]

NEG = -1e30


class CtcInfeasibleError(ValueError):
    """Raised when the grid has fewer frames than the shortest valid
    alignment of the labels needs (U plus one per repeated pair)."""


class CtcCacheMissError(KeyError):
    pass


def _extended(labels: list[int], blank: int) -> np.ndarray:
    z = np.full(2 * len(labels) + 1, blank, dtype=np.int64)
    z[1::2] = labels
    return z


def min_frames(labels: list[int]) -> int:
    repeats = sum(1 for a, b in zip(labels, labels[1:]) if a == b)
    return len(labels) + repeats


def _validate_labels(labels, n_vocab: int, blank: int) -> list[int]:
    labels = [int(x) for x in labels]
    for x in labels:
        if x == blank:
            raise ValueError("labels must not contain the blank id")
        if not 0 <= x < n_vocab:
            raise ValueError(f"label id {x} outside vocabulary of {n_vocab}")
    return labels


def ctc_loss(grid: Tensor, labels, blank: int = BLANK_ID) -> Tensor:
    """Negative log-probability of the labels under the posterior grid,
    marginalized over all alignments by the forward recursion."""
    if not isinstance(grid, Tensor):
        grid = Tensor(np.asarray(grid, dtype=np.float64))
    T, V = grid.shape
    labels = _validate_labels(labels, V, blank)
    if T < min_frames(labels):
        raise CtcInfeasibleError(
            f"{T} frames cannot carry {len(labels)} labels "
            f"(minimum {min_frames(labels)})"
        )
    z = _extended(labels, blank)
    S = z.shape[0]
    emit = grid[:, z]  # (T, S)

    init = np.full(S, NEG)
    init[0] = 0.0
    if S > 1:
        init[1] = 0.0
    alpha = emit[0] + Tensor(init)

    if S > 2:
        # a jump over the separating blank is allowed only between distinct labels
        allow2 = np.full(S, NEG)
        ok = (z != blank) & (z != np.roll(z, 2))
        ok[:2] = False
        allow2[ok] = 0.0
    neg1 = Tensor(np.array([NEG]))
    neg2 = Tensor(np.array([NEG, NEG]))
    for t in range(1, T):
        stay = alpha
        step1 = ad.concat([neg1, alpha[:-1]]) if S > 1 else None
        acc = ad.logaddexp(stay, step1) if step1 is not None else stay
        if S > 2:
            step2 = ad.concat([neg2, alpha[:-2]]) + Tensor(allow2)
            acc = ad.logaddexp(acc, step2)
        alpha = emit[t] + acc

    if S == 1:
        total = alpha[0:1].sum()
    else:
        total = ad.logaddexp(alpha[S - 1 : S], alpha[S - 2 : S - 1]).sum()
    return -total


def ctc_greedy_decode(grid, blank: int = BLANK_ID) -> list[int]:
    """Best-path readout: per-frame argmax, collapse repeats, drop blanks."""
    data = grid.data if isinstance(grid, Tensor) else np.asarray(grid)
    path = np.argmax(data, axis=1)
    out = []
    prev = None
    for p in path:
        p = int(p)
        if p != prev and p != blank:
            out.append(p)
        prev = p
    return out


class CtcPrefixScorer:
    """Incremental label-synchronous scoring against a fixed posterior grid.

    ``score(prefix, token)`` returns the log-probability increment of
    extending a previously scored prefix; the running sum over a hypothesis
    is the log prefix probability, and appending eos converts it to the
    exact complete-sequence probability (matching -ctc_loss).
    """

    def __init__(self, grid, blank: int = BLANK_ID, eos: int = EOS_ID):
        data = grid.data if isinstance(grid, Tensor) else np.asarray(grid, dtype=np.float64)
        if data.ndim != 2:
            raise ValueError("grid must be (frames, vocab)")
        self.grid = data
        self.T, self.V = data.shape
        self.blank = blank
        self.eos = eos
        r_b = np.cumsum(data[:, blank])
        r_n = np.full(self.T, NEG)
        # psi: cumulative prefix log-probability (0 for the empty prefix)
        self._states: dict[tuple, tuple[np.ndarray, np.ndarray, float]] = {
            (): (r_n, r_b, 0.0)
        }

    def score(self, prefix, token: int) -> float:
        prefix = tuple(int(x) for x in prefix)
        if prefix not in self._states:
            raise CtcCacheMissError(f"prefix {prefix} was never scored")
        r_n, r_b, psi = self._states[prefix]
        token = int(token)
        if token == self.eos:
            return float(np.logaddexp(r_n[-1], r_b[-1])) - psi
        if token == self.blank or not 0 <= token < self.V:
            raise ValueError(f"cannot extend with token {token}")

        last = prefix[-1] if prefix else None
        phi = r_b if token == last else np.logaddexp(r_b, r_n)
        new_n = np.full(self.T, NEG)
        p_tok = self.grid[:, token]
        new_n[0] = p_tok[0] if not prefix else NEG
        for t in range(1, self.T):
            new_n[t] = p_tok[t] + np.logaddexp(phi[t - 1], new_n[t - 1])
        new_b = np.full(self.T, NEG)
        new_b[0] = NEG
        p_blank = self.grid[:, self.blank]
        for t in range(1, self.T):
            new_b[t] = p_blank[t] + np.logaddexp(new_b[t - 1], new_n[t - 1])

        contributions = [new_n[0]] + [phi[t - 1] + p_tok[t] for t in range(1, self.T)]
        new_psi = float(np.logaddexp.reduce(np.array(contributions)))
        self._states[prefix + (token,)] = (new_n, new_b, new_psi)
        return new_psi - psi
