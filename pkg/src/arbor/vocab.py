"""Vocabulary tables with reserved symbols and frequency-capped building."""

from __future__ import annotations

from collections import Counter

from .graph import EOS_LABEL, PAD_LABEL, ROOT_LABEL, ROOT_RELATION, UNK_LABEL


class Vocab:
    def __init__(self, entries, reserved=(PAD_LABEL, UNK_LABEL)):
        self.itos: list[str] = list(reserved)
        seen = set(self.itos)
        for e in entries:
            if e not in seen:
                seen.add(e)
                self.itos.append(e)
        self.stoi = {s: i for i, s in enumerate(self.itos)}
        self.unk_id = self.stoi.get(UNK_LABEL)

    def __len__(self) -> int:
        return len(self.itos)

    def __contains__(self, token: str) -> bool:
        return token in self.stoi

    def id(self, token: str) -> int:
        idx = self.stoi.get(token)
        if idx is None:
            if self.unk_id is None:
                raise KeyError(token)
            return self.unk_id
        return idx

    def token(self, idx: int) -> str:
        return self.itos[idx]

    @classmethod
    def from_counter(cls, counter: Counter, max_size: int | None = None, reserved=(PAD_LABEL, UNK_LABEL)):
        # ties broken alphabetically so builds are deterministic
        ranked = sorted(counter.items(), key=lambda kv: (-kv[1], kv[0]))
        if max_size is not None:
            ranked = ranked[: max(0, max_size - len(reserved))]
        return cls((tok for tok, _ in ranked), reserved=reserved)

    def to_json(self) -> list[str]:
        return list(self.itos)

    @classmethod
    def from_json(cls, itos: list[str]) -> "Vocab":
        v = cls.__new__(cls)
        v.itos = list(itos)
        v.stoi = {s: i for i, s in enumerate(v.itos)}
        v.unk_id = v.stoi.get(UNK_LABEL)
        return v


NODE_RESERVED = (PAD_LABEL, UNK_LABEL, ROOT_LABEL, EOS_LABEL)
RELATION_RESERVED = (PAD_LABEL, UNK_LABEL, ROOT_RELATION)
