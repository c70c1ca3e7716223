"""Unidirectional recurrent language model over the shared vocabulary.

Training uses the autodiff path (``forward_full``). Decoding uses the
numpy-only incremental ``LmSession``, which must agree with from-scratch
rescoring; a test pins that equivalence.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .nn import Embedding, Linear, LstmLayer, Module
from .vocab import SOS_ID

__all__ = ["LstmLm", "LmSession"]


class LstmLm(Module):
    """Stack of LSTM layers predicting the next token from the previous."""

    def __init__(self, vocab_size: int, units: int, layers: int,
                 rng: np.random.Generator):
        if layers < 1:
            raise ValueError("need at least one recurrent layer")
        self.embed = Embedding(vocab_size, units, rng)
        self.rnns = [LstmLayer(units if i == 0 else units, units, rng)
                     for i in range(layers)]
        self.readout = Linear(units, vocab_size, rng)
        self.vocab_size = vocab_size
        self.units = units

    def forward_full(self, tokens) -> Tensor:
        """Log-distributions over the next token at every position.

        ``tokens`` must start with sos; row t conditions on tokens[0..t].
        """
        tokens = [int(t) for t in tokens]
        if not tokens or tokens[0] != SOS_ID:
            raise ValueError("language model input must start with sos")
        for t in tokens:
            if not 0 <= t < self.vocab_size:
                raise ValueError(f"token id {t} outside vocabulary")
        x = self.embed(tokens)
        for rnn in self.rnns:
            x = rnn(x)
        return ad.log_softmax(self.readout(x), axis=-1)

    def session(self) -> "LmSession":
        return LmSession(self)


@dataclass
class _LayerState:
    h: np.ndarray
    c: np.ndarray


class LmSession:
    """Incremental numpy-only scorer over a parameter snapshot."""

    def __init__(self, model: LstmLm):
        self.model = model
        self._cache: dict[tuple, np.ndarray] = {}

    def _step_all(self, states: list[_LayerState], token: int) -> tuple[list[_LayerState], np.ndarray]:
        m = self.model
        x = m.embed.table.data[token]
        new_states = []
        for rnn, st in zip(m.rnns, states):
            H = rnn.d_hidden
            gates = x @ rnn.w_x.data + st.h @ rnn.w_h.data + rnn.b.data
            i = 1.0 / (1.0 + np.exp(-gates[0 * H : 1 * H]))
            f = 1.0 / (1.0 + np.exp(-gates[1 * H : 2 * H]))
            g = np.tanh(gates[2 * H : 3 * H])
            o = 1.0 / (1.0 + np.exp(-gates[3 * H : 4 * H]))
            c = f * st.c + i * g
            h = o * np.tanh(c)
            new_states.append(_LayerState(h, c))
            x = h
        logits = x @ m.readout.weight.data + m.readout.bias.data
        row = logits - (np.max(logits) + np.log(np.exp(logits - np.max(logits)).sum()))
        return new_states, row

    def next_logp(self, prefix) -> np.ndarray:
        """Log-distribution over the token following ``prefix`` (no sos)."""
        prefix = tuple(int(t) for t in prefix)
        key = prefix
        if key in self._cache:
            return self._cache[key]
        m = self.model
        states = [_LayerState(np.zeros(m.units), np.zeros(m.units)) for _ in m.rnns]
        row = None
        # replay from the longest cached ancestor would complicate state
        # storage; prefixes here are short, so recompute from sos
        for token in (SOS_ID,) + prefix:
            states, row = self._step_all(states, token)
        self._cache[key] = row
        return row
