"""Soft relational labels from utterance text.

The primary path is a deterministic parser over the template language (and
pragmatically over template-like free text): entity mentions are
canonicalized against the category vocabulary, and each relation phrase links
its object entity to an attachment subject.  Attachment rules:

  * by default a relation attaches to the most recently mentioned entity;
  * a relation introduced by "and also" attaches to the head (first) entity;
  * the pronoun "it" resolves to the head entity;
  * a bare "and" cancels any relation phrase still waiting for its object.

An optional adapter reproduces the same extraction through an external
chat-completion endpoint and parses its "(a-b, c-d)" reply format.
"""

from __future__ import annotations

import json
import os
import re
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .scenes import Scene, canonical_pair

ENV_BASE_URL = "B2N_LLM_BASE_URL"
ENV_API_KEY = "B2N_LLM_API_KEY"
ENV_MODEL = "B2N_LLM_MODEL"

RELATION_PROMPT = (
    "Find all of the binary relationships between entities in the input "
    "{description}"
)

DEFAULT_EDIT_DISTANCE_THRESHOLD = 0.34


class ExtractionError(RuntimeError):
    pass


@dataclass(frozen=True)
class ExtractionResult:
    pairs: frozenset[tuple[str, str]]
    unresolved: tuple[str, ...]
    source: str  # "parser" or "llm"

    def sorted_pairs(self) -> list[tuple[str, str]]:
        return sorted(self.pairs)


# --- entity canonicalization -------------------------------------------------


def levenshtein(a: str, b: str) -> int:
    if len(a) < len(b):
        a, b = b, a
    prev = list(range(len(b) + 1))
    for i, ca in enumerate(a, start=1):
        cur = [i]
        for j, cb in enumerate(b, start=1):
            cur.append(min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (ca != cb)))
        prev = cur
    return prev[-1]


def _singular_forms(word: str) -> list[str]:
    forms = [word]
    if word.endswith("ies") and len(word) > 3:
        forms.append(word[:-3] + "y")
    if word.endswith("ves") and len(word) > 3:
        forms.append(word[:-3] + "f")
        forms.append(word[:-3] + "fe")
    if word.endswith("es") and len(word) > 2:
        forms.append(word[:-2])
    if word.endswith("s") and not word.endswith("ss") and len(word) > 1:
        forms.append(word[:-1])
    return forms


def _normalized_distance(name: str, entry: str) -> float:
    candidates = {name}
    words = name.split()
    for singular in _singular_forms(words[-1]):
        candidates.add(" ".join(words[:-1] + [singular]))
    best = min(levenshtein(c, entry) / max(len(c), len(entry)) for c in candidates)
    return best


def canonicalize_entity(
    name: str,
    vocab: Sequence[str],
    threshold: float = DEFAULT_EDIT_DISTANCE_THRESHOLD,
) -> str | None:
    """Nearest vocabulary entry after lowercasing and singularizing, accepted
    iff the normalized edit distance is within the threshold; None otherwise."""
    norm = " ".join(name.lower().split())
    if not norm:
        return None
    best_entry: str | None = None
    best_dist = float("inf")
    for entry in sorted(vocab):
        d = _normalized_distance(norm, entry.lower())
        if d < best_dist:
            best_dist = d
            best_entry = entry
    if best_entry is not None and best_dist <= threshold:
        return best_entry
    return None


# --- template grammar parser --------------------------------------------------

_RELATION_PHRASES: tuple[tuple[str, ...], ...] = (
    ("in", "the", "nearest", "corner", "of"),
    ("nearest", "corner", "of"),
    ("to", "the", "left", "of"),
    ("to", "the", "right", "of"),
    ("on", "top", "of"),
    ("in", "front", "of"),
    ("closest", "to"),
    ("farthest", "from"),
    ("furthest", "from"),
    ("next", "to"),
    ("left", "of"),
    ("right", "of"),
    ("on",),
    ("below",),
    ("above",),
    ("under",),
    ("underneath",),
    ("beneath",),
    ("near",),
    ("beside",),
    ("behind",),
    ("against",),
    ("with",),
    ("between",),
)

_STOPWORDS = frozenset(
    "the a an this these those that is are was were be one two three four five "
    "its his her their there which who while all both each very really just "
    "also of to from in at by for as you please pick select looking".split()
)

_PRONOUNS = frozenset({"it", "them", "itself"})

_RELATION_TOKENS = frozenset(tok for phrase in _RELATION_PHRASES for tok in phrase)


@dataclass(frozen=True)
class TemplateGrammar:
    vocab: tuple[str, ...]
    threshold: float = DEFAULT_EDIT_DISTANCE_THRESHOLD
    max_entity_words: int = 3

    def phrases(self) -> tuple[tuple[str, ...], ...]:
        return _RELATION_PHRASES


def default_grammar(vocab: Sequence[str]) -> TemplateGrammar:
    return TemplateGrammar(vocab=tuple(vocab))


def tokenize(text: str) -> list[str]:
    return re.findall(r"[a-z0-9']+", text.lower())


def parse_relations(text: str, grammar: TemplateGrammar) -> ExtractionResult:
    """Extract unordered category pairs from template(-like) text.

    Degrades gracefully: tokens that fail canonicalization are reported in
    `unresolved` and never produce pairs.
    """
    tokens = tokenize(text)
    phrases = sorted(grammar.phrases(), key=len, reverse=True)

    pairs: set[tuple[str, str]] = set()
    unresolved: list[str] = []
    head: str | None = None
    last_entity: str | None = None
    # pending relation: subject category it will attach to, or None
    pending_subject: str | None = None
    between_first: str | None = None
    in_between = False

    i = 0
    n = len(tokens)
    while i < n:
        tok = tokens[i]

        if tok == "and":
            if i + 1 < n and tokens[i + 1] == "also":
                # head-attached conjunction marker
                in_between = False
                between_first = None
                i, matched = _consume_relation(tokens, i + 2, phrases)
                if matched == ("between",):
                    in_between = True
                    pending_subject = head
                elif matched is not None:
                    pending_subject = head
                else:
                    pending_subject = None
                continue
            if in_between and between_first is not None:
                i += 1  # connector inside "between X and Y"
                continue
            pending_subject = None
            in_between = False
            between_first = None
            i += 1
            continue

        j, matched = _consume_relation(tokens, i, phrases)
        if matched is not None:
            anchor = last_entity if last_entity is not None else head
            if matched == ("between",):
                in_between = True
                between_first = None
                pending_subject = anchor
            else:
                in_between = False
                pending_subject = anchor
            i = j
            continue

        if tok in _PRONOUNS:
            if pending_subject is not None and head is not None:
                pairs.add(canonical_pair(pending_subject, head))
                pending_subject = None
            i += 1
            continue

        if tok in _STOPWORDS:
            i += 1
            continue

        entity, width = _match_entity(tokens, i, grammar)
        if entity is None:
            unresolved.append(tok)
            i += 1
            continue

        if in_between:
            if between_first is None:
                between_first = entity
                if pending_subject is not None:
                    pairs.add(canonical_pair(pending_subject, entity))
            else:
                if pending_subject is not None:
                    pairs.add(canonical_pair(pending_subject, entity))
                in_between = False
                between_first = None
                pending_subject = None
        elif pending_subject is not None:
            pairs.add(canonical_pair(pending_subject, entity))
            pending_subject = None
        if head is None:
            head = entity
        last_entity = entity
        i += width

    deduped = tuple(dict.fromkeys(unresolved))
    return ExtractionResult(pairs=frozenset(pairs), unresolved=deduped, source="parser")


def _consume_relation(tokens, i, phrases):
    for phrase in phrases:
        if tuple(tokens[i : i + len(phrase)]) == phrase:
            return i + len(phrase), phrase
    return i, None


def _match_entity(tokens, i, grammar: TemplateGrammar):
    """Longest n-gram at position i that canonicalizes; (category, width).

    Grams never cross stopwords, pronouns, or relation keywords, so an entity
    match cannot swallow the start of the next relation phrase."""
    limit = min(grammar.max_entity_words, len(tokens) - i)
    for width in range(limit, 0, -1):
        gram = tokens[i : i + width]
        if any(
            t in _STOPWORDS or t in _PRONOUNS or t in _RELATION_TOKENS or t == "and"
            for t in gram
        ):
            continue
        entity = canonicalize_entity(" ".join(gram), grammar.vocab, grammar.threshold)
        if entity is not None:
            return entity, width
    return None, 1


# --- binary label matrix ------------------------------------------------------


def pairs_to_binary_labels(pairs, scene: Scene) -> np.ndarray:
    """N x N 0/1 matrix: r[i][j] = 1 iff (cat_i, cat_j) matches an unordered
    pair and i != j.  Symmetric with a zero diagonal by construction."""
    wanted = {canonical_pair(a, b) for a, b in pairs}
    cats = scene.categories()
    n = len(cats)
    r = np.zeros((n, n), dtype=np.float32)
    for i in range(n):
        for j in range(n):
            if i != j and canonical_pair(cats[i], cats[j]) in wanted:
                r[i, j] = 1.0
    return r


# --- external completion endpoint adapter -------------------------------------


class LlmClient:
    """Minimal blocking chat-completion client; safe for concurrent use."""

    def __init__(self, base_url: str, api_key: str, model: str, timeout: float = 30.0):
        self.base_url = base_url.rstrip("/")
        self.api_key = api_key
        self.model = model
        self.timeout = timeout

    @classmethod
    def from_env(cls) -> "LlmClient":
        try:
            base_url = os.environ[ENV_BASE_URL]
            api_key = os.environ[ENV_API_KEY]
        except KeyError as err:
            raise ExtractionError(f"missing environment variable {err.args[0]}") from None
        model = os.environ.get(ENV_MODEL, "gpt-4o-mini")
        return cls(base_url=base_url, api_key=api_key, model=model)

    def complete(self, prompt: str) -> str:
        import requests

        try:
            resp = requests.post(
                f"{self.base_url}/chat/completions",
                headers={
                    "Authorization": f"Bearer {self.api_key}",
                    "Content-Type": "application/json",
                },
                data=json.dumps(
                    {
                        "model": self.model,
                        "messages": [{"role": "user", "content": prompt}],
                        "temperature": 0,
                    }
                ),
                timeout=self.timeout,
            )
            resp.raise_for_status()
            body = resp.json()
            return body["choices"][0]["message"]["content"]
        except ExtractionError:
            raise
        except Exception as err:
            raise ExtractionError(f"completion request failed: {err}") from err


_REPLY_RE = re.compile(r"\(([^()]*)\)")


def parse_pair_reply(reply: str) -> list[tuple[str, str]]:
    """Parse the "(a-b, c-d)" reply format into raw name pairs."""
    m = _REPLY_RE.search(reply)
    if m is None:
        raise ExtractionError(f"malformed reply: {reply!r}")
    inner = m.group(1).strip()
    raw_pairs = []
    if inner:
        for chunk in inner.split(","):
            parts = [p.strip() for p in chunk.split("-")]
            if len(parts) == 2 and parts[0] and parts[1]:
                raw_pairs.append((parts[0], parts[1]))
    if not raw_pairs:
        raise ExtractionError("empty pair set")
    return raw_pairs


def llm_extract_relations(
    text: str,
    client: LlmClient,
    vocab: Sequence[str],
    threshold: float = DEFAULT_EDIT_DISTANCE_THRESHOLD,
) -> ExtractionResult:
    """Prompt the endpoint, parse its pair list, canonicalize each name."""
    reply = client.complete(RELATION_PROMPT.format(description=text))
    raw_pairs = parse_pair_reply(reply)
    pairs: set[tuple[str, str]] = set()
    unresolved: list[str] = []
    for a, b in raw_pairs:
        ca = canonicalize_entity(a, vocab, threshold)
        cb = canonicalize_entity(b, vocab, threshold)
        if ca is None:
            unresolved.append(a)
        if cb is None:
            unresolved.append(b)
        if ca is not None and cb is not None:
            pairs.add(canonical_pair(ca, cb))
    if not pairs:
        raise ExtractionError("empty pair set after canonicalization")
    return ExtractionResult(
        pairs=frozenset(pairs),
        unresolved=tuple(dict.fromkeys(unresolved)),
        source="llm",
    )
