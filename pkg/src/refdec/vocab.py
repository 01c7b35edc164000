"""Token vocabulary and a whitespace tokenizer."""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Iterable, Sequence

BOS = "<s>"
EOS = "</s>"
UNK = "<unk>"

TERMINAL_PUNCT = frozenset({".", "?", "!"})

_PUNCT_RE = re.compile(r"([.,!?;:()\"])")


class Vocabulary:
    """Dense bijection between token strings and integer ids.

    Ids 0..2 are reserved for the begin-of-text, end-of-text and unknown
    markers; the remaining tokens follow in sorted order so two corpora
    with the same token set (e.g. a corpus and its reversal) share ids.
    """

    def __init__(self, tokens: Iterable[str] = (), bos: str = BOS, eos: str = EOS,
                 unk: str = UNK):
        specials = [bos, eos, unk]
        if len(set(specials)) != 3:
            raise ValueError("special markers must be distinct")
        rest = sorted(set(tokens) - set(specials))
        self._itos: list[str] = specials + rest
        self._stoi: dict[str, int] = {t: i for i, t in enumerate(self._itos)}
        self.bos_id = self._stoi[bos]
        self.eos_id = self._stoi[eos]
        self.unk_id = self._stoi[unk]

    @classmethod
    def from_list(cls, itos: Sequence[str], bos_id: int, eos_id: int,
                  unk_id: int) -> "Vocabulary":
        """Rebuild a vocabulary with an explicit id layout (used by loaders)."""
        if len(set(itos)) != len(itos):
            raise ValueError("vocabulary tokens must be distinct")
        if len({bos_id, eos_id, unk_id}) != 3:
            raise ValueError("special markers must be distinct")
        for i in (bos_id, eos_id, unk_id):
            if not 0 <= i < len(itos):
                raise ValueError(f"special id {i} out of range")
        vocab = cls.__new__(cls)
        vocab._itos = list(itos)
        vocab._stoi = {t: i for i, t in enumerate(vocab._itos)}
        vocab.bos_id, vocab.eos_id, vocab.unk_id = bos_id, eos_id, unk_id
        return vocab

    def mirrored(self) -> "Vocabulary":
        """Same ids with the roles of the begin and end markers swapped.

        Reading a reversed text, its end becomes its beginning; training on a
        reversed corpus with the mirrored vocabulary yields id-identical
        statistics to a backward model on the original corpus.
        """
        return Vocabulary.from_list(self._itos, self.eos_id, self.bos_id, self.unk_id)

    def __len__(self) -> int:
        return len(self._itos)

    def __contains__(self, token: str) -> bool:
        return token in self._stoi

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Vocabulary):
            return NotImplemented
        return (self._itos == other._itos and self.bos_id == other.bos_id
                and self.eos_id == other.eos_id and self.unk_id == other.unk_id)

    def __repr__(self) -> str:
        return f"Vocabulary(size={len(self)})"

    @property
    def tokens(self) -> list[str]:
        return list(self._itos)

    def lookup_id(self, token: str) -> int:
        return self._stoi.get(token, self.unk_id)

    def lookup_token(self, idx: int) -> str:
        if not 0 <= idx < len(self._itos):
            raise IndexError(f"token id {idx} not in vocabulary of size {len(self)}")
        return self._itos[idx]

    def encode(self, tokens: Iterable[str]) -> list[int]:
        return [self.lookup_id(t) for t in tokens]

    def decode(self, ids: Iterable[int]) -> list[str]:
        return [self.lookup_token(int(i)) for i in ids]

    @property
    def special_ids(self) -> frozenset[int]:
        return frozenset({self.bos_id, self.eos_id, self.unk_id})

    def to_dict(self) -> dict:
        return {"tokens": list(self._itos), "bos_id": self.bos_id,
                "eos_id": self.eos_id, "unk_id": self.unk_id}


@dataclass(frozen=True)
class Tokenizer:
    """Whitespace tokenizer with optional lowercasing and punctuation splitting."""

    lowercase: bool = True
    split_punct: bool = True

    def tokenize(self, text: str) -> list[str]:
        if self.lowercase:
            text = text.lower()
        if self.split_punct:
            text = _PUNCT_RE.sub(r" \1 ", text)
        return text.split()

    def detokenize(self, tokens: Iterable[str]) -> str:
        return " ".join(tokens)

    def to_dict(self) -> dict:
        return {"lowercase": self.lowercase, "split_punct": self.split_punct}


def build_vocabulary(corpus: Iterable[Sequence[str]]) -> Vocabulary:
    seen: set[str] = set()
    for doc in corpus:
        seen.update(doc)
    return Vocabulary(seen)


def read_corpus(path, tokenizer: Tokenizer | None = None) -> list[list[str]]:
    """One document per line, UTF-8, blank lines ignored."""
    tokenizer = tokenizer or Tokenizer()
    docs = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                docs.append(tokenizer.tokenize(line))
    return docs
