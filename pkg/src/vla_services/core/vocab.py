"""
Shared token-ID space.

Layout is fixed: the seven special tokens take IDs 0..6, then the text
range, then the vision range, and the action range closes the vocabulary.
"""
import logging
from pathlib import Path
from typing import Iterable, List, Sequence

from ..entities import (
    CorruptStreamError,
    DataError,
    InvalidArgumentError,
    Modality,
    SpecialToken,
    Vocabulary,
)

logger = logging.getLogger(__name__)

UNK = "<unk>"


def build_vocab(text_size: int, vision_size: int, action_size: int,
                text_words: Sequence[str] = ()) -> Vocabulary:
    """
    Lay out the partitioned vocabulary.

    `text_words` are the known instruction words; ``<unk>`` is always the
    first text entry, so the text range must hold ``len(text_words) + 1``.
    """
    for name, size in (("text", text_size), ("vision", vision_size),
                       ("action", action_size)):
        if size < 1:
            raise InvalidArgumentError(f"{name} size must be >= 1, got {size}")
    words = (UNK,) + tuple(w for w in text_words if w != UNK)
    if len(words) > text_size:
        raise InvalidArgumentError(
            f"{len(words)} text words do not fit a text range of {text_size}"
        )

    specials = {token: i for i, token in enumerate(SpecialToken)}
    start = len(specials)
    text_range = range(start, start + text_size)
    vision_range = range(text_range.stop, text_range.stop + vision_size)
    action_range = range(vision_range.stop, vision_range.stop + action_size)
    return Vocabulary(
        text_range=text_range,
        vision_range=vision_range,
        action_range=action_range,
        specials=specials,
        text_words=words,
    )


def classify(token_id: int, vocab: Vocabulary) -> Modality:
    if token_id < 0 or token_id >= vocab.total_size:
        raise InvalidArgumentError(
            f"token {token_id} outside [0, {vocab.total_size})"
        )
    if token_id in vocab.action_range:
        return Modality.ACTION
    if token_id in vocab.vision_range:
        return Modality.VISION
    if token_id in vocab.text_range:
        return Modality.TEXT
    return Modality.SPECIAL


def special_token(token: SpecialToken, vocab: Vocabulary) -> int:
    return vocab.specials[SpecialToken(token)]


class TextTokenizer:
    """Whitespace word-level lookup over the vocabulary's text range."""

    def __init__(self, vocab: Vocabulary):
        self.vocab = vocab
        self._ids = {
            word: vocab.text_range.start + i
            for i, word in enumerate(vocab.text_words)
        }
        self._unk = vocab.text_range.start

    @staticmethod
    def words_of(instructions: Iterable[str]) -> List[str]:
        """Sorted distinct words, the deterministic text-range order."""
        return sorted({w for text in instructions for w in text.lower().split()})

    def encode(self, text: str) -> List[int]:
        return [self._ids.get(w, self._unk) for w in text.lower().split()]

    def decode(self, ids: Sequence[int]) -> str:
        words = []
        for token_id in ids:
            if token_id not in self.vocab.text_range:
                raise InvalidArgumentError(f"token {token_id} is not text")
            index = token_id - self.vocab.text_range.start
            words.append(
                self.vocab.text_words[index]
                if index < len(self.vocab.text_words) else UNK
            )
        return " ".join(words)


def surface_form(token_id: int, vocab: Vocabulary) -> str:
    modality = classify(token_id, vocab)
    if modality == Modality.SPECIAL:
        for token, value in vocab.specials.items():
            if value == token_id:
                return f"<{token.value}>"
    if modality == Modality.TEXT:
        index = token_id - vocab.text_range.start
        if index < len(vocab.text_words):
            return vocab.text_words[index]
        return f"<t{index}>"
    if modality == Modality.VISION:
        return f"v{token_id - vocab.vision_range.start}"
    return f"a{token_id - vocab.action_range.start}"


def save_vocab(vocab: Vocabulary, path: Path) -> Path:
    """One ``id<TAB>tag<TAB>surface`` line per entry."""
    lines = [
        f"{i}\t{classify(i, vocab).value}\t{surface_form(i, vocab)}"
        for i in range(vocab.total_size)
    ]
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    logger.info("Wrote vocabulary manifest with %d entries to %s",
                vocab.total_size, path)
    return path


def load_vocab(path: Path) -> Vocabulary:
    if not path.exists():
        raise DataError("vocabulary manifest not found", path)
    sizes = {m: 0 for m in Modality}
    words: List[str] = []
    for expected_id, line in enumerate(
            path.read_text(encoding="utf-8").splitlines()):
        try:
            token_id, tag, surface = line.split("\t")
            modality = Modality(tag)
        except ValueError:
            raise CorruptStreamError(f"bad manifest line {line!r} in {path}")
        if int(token_id) != expected_id:
            raise CorruptStreamError(f"manifest IDs not contiguous in {path}")
        sizes[modality] += 1
        if modality == Modality.TEXT and not surface.startswith("<t"):
            words.append(surface)
    if sizes[Modality.SPECIAL] != len(SpecialToken):
        raise CorruptStreamError(f"manifest lacks special tokens: {path}")
    return build_vocab(
        sizes[Modality.TEXT], sizes[Modality.VISION], sizes[Modality.ACTION],
        text_words=words,
    )
