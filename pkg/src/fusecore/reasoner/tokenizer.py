"""Word-level tokenizer over the closed corpus vocabulary.

Text is cut into words and single punctuation marks. A piece preceded by one
space is looked up as ``"▁" + piece``; anything not in the vocabulary falls
back to per-character tokens, so any printable-ASCII string round-trips.
"""
from __future__ import annotations

import re
from dataclasses import dataclass, field

PAD, BOS, EOS, UNK = 0, 1, 2, 3
SPECIALS = ("<pad>", "<bos>", "<eos>", "<unk>")
SPACE = "▁"
_PIECE = re.compile(r"(\s*)(\w+|[^\w\s])")
_WORD = re.compile(r"\w+|[^\w\s]")
_CHARS = [chr(i) for i in range(32, 127)] + ["\n", "\t"]


def _char_token(ch: str) -> str:
    return f"<c{ord(ch)}>"


def word_segment(text: str) -> list:
    """Lowercased words and punctuation; the segmentation metrics use."""
    return [w.lower() for w in _WORD.findall(text)]


class Vocabulary:
    def __init__(self, tokens):
        tokens = list(tokens)
        if tuple(tokens[:4]) != SPECIALS:
            raise ValueError("vocabulary must start with the reserved tokens")
        if len(set(tokens)) != len(tokens):
            raise ValueError("duplicate vocabulary entries")
        self.tokens = tokens
        self.index = {t: i for i, t in enumerate(tokens)}

    @classmethod
    def build(cls, texts=(), words=()) -> "Vocabulary":
        pieces = set(words)
        for text in texts:
            pieces.update(_WORD.findall(text))
        ordered = sorted(pieces)
        tokens = list(SPECIALS)
        for p in ordered:
            tokens.extend([p, SPACE + p])
        tokens.extend(_char_token(c) for c in _CHARS)
        return cls(tokens)

    def __len__(self) -> int:
        return len(self.tokens)

    def __eq__(self, other) -> bool:
        return isinstance(other, Vocabulary) and self.tokens == other.tokens

    def _chars(self, text: str) -> list:
        return [self.index.get(_char_token(c), UNK) for c in text]

    def encode(self, text: str) -> list:
        ids = []
        end = 0
        for m in _PIECE.finditer(text):
            ws, body = m.group(1), m.group(2)
            end = m.end()
            if ws == "" and body in self.index:
                ids.append(self.index[body])
            elif ws == " " and SPACE + body in self.index:
                ids.append(self.index[SPACE + body])
            else:
                ids.extend(self._chars(ws))
                ids.extend([self.index[body]] if body in self.index else self._chars(body))
        ids.extend(self._chars(text[end:]))
        return ids

    def decode(self, ids) -> str:
        out = []
        for i in ids:
            tok = self.tokens[int(i)]
            if int(i) < len(SPECIALS):
                continue
            if tok.startswith("<c") and tok.endswith(">") and tok[2:-1].isdigit():
                out.append(chr(int(tok[2:-1])))
            elif tok.startswith(SPACE):
                out.append(" " + tok[1:])
            else:
                out.append(tok)
        return "".join(out)

    def covers(self, text: str) -> bool:
        """True if ``text`` needs no character fallback."""
        for m in _PIECE.finditer(text):
            ws, body = m.group(1), m.group(2)
            key = SPACE + body if ws == " " else body
            if ws not in ("", " ") or key not in self.index:
                return False
        return True


@dataclass
class TokenSequence:
    """Token ids with a per-position flag marking loss targets."""

    ids: list
    loss_mask: list = field(default_factory=list)

    def __post_init__(self):
        if not self.loss_mask:
            self.loss_mask = [False] * len(self.ids)
        if len(self.loss_mask) != len(self.ids):
            raise ValueError("ids and loss_mask lengths differ")

    def __len__(self) -> int:
        return len(self.ids)
