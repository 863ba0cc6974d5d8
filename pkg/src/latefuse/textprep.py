"""Tweet cleaning steps and a lexicon-average polarity classifier."""

from __future__ import annotations

import html
import re
from importlib import resources
from pathlib import Path
from typing import Iterable, Mapping, Union

from .core import ContractError, Polarity

NEGATIVE_THRESHOLD = -0.1
POSITIVE_THRESHOLD = 0.1

_RUN = re.compile(r"(.)\1{2,}", re.DOTALL)
_NOT_ALNUM = re.compile(r"[^a-z0-9\s]", re.ASCII)
_LINK_PREFIXES = ("http://", "https://", "www.")
# Punctuation trimmed from token edges before matching social tokens ("RT:", "(@bob)").
_EDGE_PUNCT = "\"'()[]{}<>.,;:!?*"

PathLike = Union[str, Path]


class StopwordSet(frozenset):
    """Lowercase whole-word stopwords."""

    def __new__(cls, words: Iterable[str] = ()):
        words = [w.strip() for w in words]
        for w in words:
            if not w or w != w.lower() or any(c.isspace() for c in w):
                raise ContractError(f"invalid stopword entry {w!r}")
        return super().__new__(cls, words)


class Lexicon(dict):
    """Mapping from lowercase word to a polarity score in [-1, 1]."""

    def __init__(self, entries: Mapping[str, float] = ()):
        super().__init__()
        for word, score in dict(entries).items():
            score = float(score)
            if word != word.lower() or not word:
                raise ContractError(f"lexicon key {word!r} must be non-empty lowercase")
            if not -1.0 <= score <= 1.0:
                raise ContractError(f"lexicon score for {word!r} outside [-1, 1]: {score}")
            self[word] = score


def load_stopwords(path: PathLike | None = None) -> StopwordSet:
    """Read a stopword file (one word per line, ``#`` comments).

    Without a path the bundled English list is used.
    """
    text = _read_text(path, "stopwords_en.txt")
    words = []
    for line in text.splitlines():
        line = line.split("#", 1)[0].strip()
        if line:
            words.append(line)
    return StopwordSet(words)


def load_lexicon(path: PathLike | None = None) -> Lexicon:
    text = _read_text(path, "lexicon_en.tsv")
    entries = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip() or line.lstrip().startswith("#"):
            continue
        parts = line.split("\t")
        if len(parts) != 2:
            raise ContractError(f"lexicon line {lineno}: expected 'word<TAB>score'")
        try:
            entries[parts[0].strip()] = float(parts[1])
        except ValueError:
            raise ContractError(f"lexicon line {lineno}: bad score {parts[1]!r}") from None
    return Lexicon(entries)


def _read_text(path: PathLike | None, bundled: str) -> str:
    if path is None:
        return resources.files("latefuse").joinpath("data", bundled).read_text("utf-8")
    return Path(path).read_text(encoding="utf-8")


def decode_html_entities(text: str) -> str:
    # html.unescape makes a single pass, so "&amp;amp;" -> "&amp;".
    return html.unescape(text)


def lowercase(text: str) -> str:
    return text.lower()


def _is_social_token(token: str) -> bool:
    core = token.lower().strip(_EDGE_PUNCT)
    if core == "rt" or token.startswith("@") or core.startswith("@"):
        return True
    return core.startswith(_LINK_PREFIXES)


def strip_social_tokens(text: str) -> str:
    """Drop retweet markers, @-mentions and links."""
    return " ".join(t for t in text.split() if not _is_social_token(t))


def squeeze_repeats(text: str) -> str:
    """Collapse every run of three or more identical characters to two."""
    return _RUN.sub(r"\1\1", text)


def remove_punctuation(text: str) -> str:
    """Keep only ``[a-z0-9]`` and single spaces.

    Emojis, accented letters and symbols all become separators.
    """
    return " ".join(_NOT_ALNUM.sub(" ", text).split())


def remove_stopwords(text: str, stopwords: Iterable[str]) -> str:
    stop = stopwords if isinstance(stopwords, (set, frozenset)) else set(stopwords)
    return " ".join(t for t in text.split() if t.lower() not in stop)


def clean_pipeline(text: str, stopwords: Iterable[str] = frozenset()) -> str:
    """Apply the six cleaning steps in their fixed order.

    Stopword removal runs before lowercasing but matches case-insensitively,
    so the ordering loses nothing.
    """
    text = decode_html_entities(text)
    text = remove_stopwords(text, stopwords)
    text = lowercase(text)
    text = squeeze_repeats(text)
    text = strip_social_tokens(text)
    return remove_punctuation(text)


def classify_score(score: float) -> Polarity:
    """Threshold a polarity score; the boundaries themselves are neutral."""
    if score < NEGATIVE_THRESHOLD:
        return Polarity.NEGATIVE
    if score > POSITIVE_THRESHOLD:
        return Polarity.POSITIVE
    return Polarity.NEUTRAL


def lexicon_polarity(text: str, lexicon: Mapping[str, float]) -> tuple[float, Polarity]:
    """Average per-token lexicon scores; unknown tokens count as 0."""
    tokens = text.split()
    if not tokens:
        return 0.0, Polarity.NEUTRAL
    score = sum(lexicon.get(t, 0.0) for t in tokens) / len(tokens)
    return score, classify_score(score)
