"""
Byte-pair encoding over integer coefficient symbols.

The base alphabet is a contiguous integer range, normally the clamp range
of the action codec. Token index ``i`` below ``len(base_alphabet)`` is the
symbol ``base_alphabet[i]``; merged tokens follow in merge order.
"""
import heapq
import logging
from collections import Counter, defaultdict
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Set, Tuple

from tqdm import tqdm

from ..entities import (
    BpeModel,
    CorruptStreamError,
    DataError,
    InvalidArgumentError,
)

logger = logging.getLogger(__name__)

FORMAT_TAG = "vla-bpe"
FORMAT_VERSION = 1

Pair = Tuple[int, int]


def _merge_pair(seq: Sequence[int], pair: Pair, new_index: int) -> List[int]:
    merged: List[int] = []
    i = 0
    while i < len(seq):
        if i < len(seq) - 1 and (seq[i], seq[i + 1]) == pair:
            merged.append(new_index)
            i += 2
        else:
            merged.append(seq[i])
            i += 1
    return merged


def fit_bpe(corpus: Sequence[Sequence[int]], target: int,
            alphabet: Optional[Tuple[int, int]] = None,
            progress: bool = False) -> BpeModel:
    """
    Greedy most-frequent-pair merging up to `target` tokens.

    `alphabet` gives the inclusive (low, high) symbol range; without it the
    range spanned by the corpus is used. Merging stops early once no pair
    occurs at least twice. Equal counts are resolved in favour of the
    lexicographically smallest pair of token indices.
    """
    sequences = [tuple(int(s) for s in seq) for seq in corpus if len(seq)]
    if not sequences:
        raise InvalidArgumentError("cannot fit BPE on an empty corpus")
    seen_low = min(min(seq) for seq in sequences)
    seen_high = max(max(seq) for seq in sequences)
    low, high = alphabet if alphabet is not None else (seen_low, seen_high)
    if low > high:
        raise InvalidArgumentError(f"empty BPE alphabet [{low}, {high}]")
    if seen_low < low or seen_high > high:
        raise InvalidArgumentError(
            f"corpus symbols [{seen_low}, {seen_high}] fall outside the "
            f"alphabet [{low}, {high}]"
        )
    base = tuple(range(low, high + 1))
    if target < len(base):
        raise InvalidArgumentError(
            f"target vocabulary {target} is smaller than the base "
            f"alphabet ({len(base)} symbols)"
        )

    occurrences = Counter(tuple(s - low for s in seq) for seq in sequences)
    words: List[List[int]] = [list(w) for w in occurrences]
    freqs: List[int] = [occurrences[w] for w in occurrences]

    pair_counts: Dict[Pair, int] = defaultdict(int)
    pair_to_words: Dict[Pair, Set[int]] = defaultdict(set)
    for word_id, word in enumerate(words):
        for pair in zip(word, word[1:]):
            pair_counts[pair] += freqs[word_id]
            pair_to_words[pair].add(word_id)

    heap = [(-count, pair) for pair, count in pair_counts.items()]
    heapq.heapify(heap)

    merges: List[Pair] = []
    budget = target - len(base)
    bar = tqdm(total=budget, desc="bpe merges", disable=not progress)
    while len(merges) < budget and heap:
        neg_count, pair = heapq.heappop(heap)
        if pair_counts.get(pair, 0) != -neg_count:
            continue
        if -neg_count < 2:
            break
        new_index = len(base) + len(merges)
        merges.append(pair)
        bar.update(1)

        touched: Set[Pair] = set()
        for word_id in list(pair_to_words[pair]):
            word = words[word_id]
            merged = _merge_pair(word, pair, new_index)
            if len(merged) == len(word):
                continue
            freq = freqs[word_id]
            for old in zip(word, word[1:]):
                pair_counts[old] -= freq
                touched.add(old)
            for new in zip(merged, merged[1:]):
                pair_counts[new] += freq
                pair_to_words[new].add(word_id)
                touched.add(new)
            words[word_id] = merged
        for changed in touched:
            count = pair_counts[changed]
            if count > 0:
                heapq.heappush(heap, (-count, changed))
            else:
                del pair_counts[changed]
                pair_to_words.pop(changed, None)
    bar.close()

    logger.info("Fitted BPE: %d base symbols [%d, %d], %d merges",
                len(base), low, high, len(merges))
    return BpeModel(base_alphabet=base, merges=tuple(merges))


def to_base_indices(symbols: Sequence[int], model: BpeModel) -> List[int]:
    """Map raw symbols to base token indices."""
    low, high = model.base_alphabet[0], model.base_alphabet[-1]
    indices = []
    for symbol in symbols:
        symbol = int(symbol)
        if symbol < low or symbol > high:
            raise CorruptStreamError(
                f"symbol {symbol} is outside the BPE alphabet "
                f"[{low}, {high}]"
            )
        indices.append(symbol - low)
    return indices


def apply_merges(indices: Sequence[int], model: BpeModel) -> List[int]:
    """Repeatedly apply the lowest-ranked merge present."""
    tokens = list(indices)
    ranks = model.merge_ranks
    base_size = len(model.base_alphabet)
    while len(tokens) > 1:
        best_rank = None
        for pair in zip(tokens, tokens[1:]):
            rank = ranks.get(pair)
            if rank is not None and (best_rank is None or rank < best_rank):
                best_rank = rank
        if best_rank is None:
            break
        tokens = _merge_pair(tokens, model.merges[best_rank],
                             base_size + best_rank)
    return tokens


def bpe_encode(symbols: Sequence[int], model: BpeModel) -> List[int]:
    return apply_merges(to_base_indices(symbols, model), model)


def bpe_decode(tokens: Sequence[int], model: BpeModel) -> List[int]:
    table = model.expansions
    symbols: List[int] = []
    for token in tokens:
        if token < 0 or token >= len(table):
            raise CorruptStreamError(
                f"BPE token {token} is not in a vocabulary of {len(table)}"
            )
        symbols.extend(table[token])
    return symbols


def save_bpe(model: BpeModel, path: Path) -> Path:
    lines = [
        f"{FORMAT_TAG} v{FORMAT_VERSION}",
        f"base {model.base_alphabet[0]} {model.base_alphabet[-1]}",
        f"merges {len(model.merges)}",
    ]
    lines += [f"{left} {right}" for left, right in model.merges]
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


def load_bpe(path: Path) -> BpeModel:
    if not path.exists():
        raise DataError("BPE merge file not found", path)
    lines = path.read_text(encoding="utf-8").splitlines()
    if not lines or lines[0] != f"{FORMAT_TAG} v{FORMAT_VERSION}":
        raise CorruptStreamError(f"unsupported BPE header in {path}")
    try:
        _, low, high = lines[1].split()
        _, count = lines[2].split()
        merges = tuple(
            tuple(int(v) for v in line.split()) for line in lines[3:]
        )
    except (IndexError, ValueError):
        raise CorruptStreamError(f"malformed BPE file {path}")
    if len(merges) != int(count) or any(len(m) != 2 for m in merges):
        raise CorruptStreamError(f"truncated BPE merge list in {path}")
    base = tuple(range(int(low), int(high) + 1))
    for rank, (left, right) in enumerate(merges):
        if max(left, right) >= len(base) + rank:
            raise CorruptStreamError(
                f"merge {rank} references an undefined token in {path}"
            )
    return BpeModel(base_alphabet=base, merges=merges)
