"""Token inventory shared by the CTC and sequence-to-sequence heads.

Ids 0..2 are reserved: blank for CTC, then start/end sentinels for the
attention decoder. Real units follow in sorted order so two corpora built
from the same unit set always agree on ids.
"""

from __future__ import annotations

from pathlib import Path

__all__ = ["BLANK_ID", "SOS_ID", "EOS_ID", "Vocab"]

BLANK_ID = 0
SOS_ID = 1
EOS_ID = 2
_RESERVED = ("<blank>", "<sos>", "<eos>")


class Vocab:
    def __init__(self, units: list[str]):
        units = list(units)
        if len(set(units)) != len(units):
            raise ValueError("duplicate units")
        for u in units:
            if u in _RESERVED:
                raise ValueError(f"unit collides with reserved token {u}")
            if not u or any(c.isspace() for c in u):
                raise ValueError(f"unit must be non-empty and whitespace-free: {u!r}")
        self.tokens = list(_RESERVED) + sorted(units)
        self._ids = {t: i for i, t in enumerate(self.tokens)}

    def __len__(self) -> int:
        return len(self.tokens)

    @property
    def n_units(self) -> int:
        return len(self.tokens) - len(_RESERVED)

    def encode(self, units: list[str]) -> list[int]:
        try:
            return [self._ids[u] for u in units]
        except KeyError as e:
            raise KeyError(f"unknown unit {e.args[0]!r}") from None

    def decode(self, ids, strip_special: bool = True) -> list[str]:
        out = []
        for i in ids:
            tok = self.tokens[int(i)]
            if strip_special and tok in _RESERVED:
                continue
            out.append(tok)
        return out

    def save(self, path) -> None:
        Path(path).write_text("\n".join(self.tokens[len(_RESERVED):]) + "\n")

    @classmethod
    def load(cls, path) -> "Vocab":
        text = Path(path).read_text()
        return cls([line for line in text.splitlines() if line])
