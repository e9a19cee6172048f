"""Per-account article ingestion, chunking, and lexical retrieval.

Chunks are built on paragraph boundaries first, sentence boundaries second,
capped at ``max_chunk_tokens``. Ranking is BM25 (k1=1.2, b=0.75) with a
deterministic (article_id, chunk_id) tie-break, which gives acceptance
tests an exact oracle.
"""

from __future__ import annotations

import logging
import math
import re
import threading
from collections import Counter
from dataclasses import dataclass
from typing import Sequence

from .errors import UnknownAccount

logger = logging.getLogger(__name__)

DEFAULT_MAX_CHUNK_TOKENS = 256
DEFAULT_TOP_N = 3
BM25_K1 = 1.2
BM25_B = 0.75

_WORD_RE = re.compile(r"\w+", re.UNICODE)
_SENTENCE_RE = re.compile(r"[^.!?。!?]+[.!?。!?]*", re.UNICODE)


def tokenize(text: str) -> list[str]:
    return _WORD_RE.findall(text.lower())


@dataclass(frozen=True)
class ArticleChunk:
    account_id: str
    article_id: str
    chunk_id: int
    text: str
    token_count: int
    position: int


@dataclass(frozen=True)
class RetrievalResult:
    chunks: tuple[tuple[ArticleChunk, float], ...]

    def texts(self) -> list[str]:
        return [c.text for c, _ in self.chunks]

    def refs(self) -> list[str]:
        return [f"{c.article_id}#{c.chunk_id}" for c, _ in self.chunks]


def split_chunks(text: str, max_tokens: int = DEFAULT_MAX_CHUNK_TOKENS) -> list[str]:
    """Paragraphs first; oversized paragraphs packed greedily by sentence;
    oversized sentences hard-split on token boundaries."""
    chunks: list[str] = []
    for para in re.split(r"\n\s*\n", text):
        para = para.strip()
        if not para:
            continue
        if len(tokenize(para)) <= max_tokens:
            chunks.append(para)
            continue
        current: list[str] = []
        current_tokens = 0
        for sentence in _SENTENCE_RE.findall(para):
            sentence = sentence.strip()
            if not sentence:
                continue
            n = len(tokenize(sentence))
            if n > max_tokens:
                if current:
                    chunks.append(" ".join(current))
                    current, current_tokens = [], 0
                chunks.extend(_hard_split(sentence, max_tokens))
                continue
            if current_tokens + n > max_tokens and current:
                chunks.append(" ".join(current))
                current, current_tokens = [], 0
            current.append(sentence)
            current_tokens += n
        if current:
            chunks.append(" ".join(current))
    return chunks


def _hard_split(sentence: str, max_tokens: int) -> list[str]:
    words = sentence.split()
    out, buf, count = [], [], 0
    for word in words:
        n = max(1, len(tokenize(word)))
        if count + n > max_tokens and buf:
            out.append(" ".join(buf))
            buf, count = [], 0
        buf.append(word)
        count += n
    if buf:
        out.append(" ".join(buf))
    return out


class _AccountIndex:
    """Immutable snapshot of one account's chunks with BM25 statistics."""

    def __init__(self, chunks: Sequence[ArticleChunk]):
        self.chunks = tuple(chunks)
        self.term_freqs = [Counter(tokenize(c.text)) for c in self.chunks]
        self.doc_lens = [sum(tf.values()) for tf in self.term_freqs]
        self.n_docs = len(self.chunks)
        self.avgdl = (sum(self.doc_lens) / self.n_docs) if self.n_docs else 0.0
        df: Counter = Counter()
        for tf in self.term_freqs:
            df.update(tf.keys())
        self.idf = {
            t: math.log((self.n_docs - n + 0.5) / (n + 0.5) + 1.0) for t, n in df.items()
        }

    def score(self, query: str) -> list[float]:
        terms = tokenize(query)
        scores = []
        for tf, dl in zip(self.term_freqs, self.doc_lens):
            norm = BM25_K1 * (1 - BM25_B + BM25_B * dl / self.avgdl) if self.avgdl else 0.0
            s = 0.0
            for t in terms:
                f = tf.get(t)
                if not f:
                    continue
                s += self.idf[t] * f * (BM25_K1 + 1) / (f + norm)
            scores.append(s)
        return scores


class RetrievalIndex:
    """Multi-account index: concurrent readers, per-account atomic publish."""

    def __init__(self, max_chunk_tokens: int = DEFAULT_MAX_CHUNK_TOKENS):
        self.max_chunk_tokens = max_chunk_tokens
        self._accounts: dict[str, _AccountIndex] = {}
        self._articles: dict[str, dict[str, str]] = {}
        self._lock = threading.Lock()
        self.skipped_empty = 0

    def ingest(self, account_id: str, articles: Sequence[tuple[str, str]]) -> int:
        """Chunk and (re)index articles for one account. Returns chunks added.
        Duplicate article ids replace the previous text with a warning; empty
        articles are skipped and counted."""
        with self._lock:
            store = dict(self._articles.get(account_id, {}))
            for article_id, text in articles:
                if not text or not text.strip():
                    self.skipped_empty += 1
                    logger.warning("skipping empty article %s/%s", account_id, article_id)
                    continue
                if article_id in store:
                    logger.warning("replacing duplicate article %s/%s", account_id, article_id)
                store[article_id] = text
            chunks: list[ArticleChunk] = []
            for article_id in sorted(store):
                for pos, chunk_text in enumerate(split_chunks(store[article_id], self.max_chunk_tokens)):
                    chunks.append(
                        ArticleChunk(
                            account_id=account_id,
                            article_id=article_id,
                            chunk_id=pos,
                            text=chunk_text,
                            token_count=len(tokenize(chunk_text)),
                            position=pos,
                        )
                    )
            self._articles[account_id] = store
            self._accounts[account_id] = _AccountIndex(chunks)
            return len(chunks)

    def chunks(self, account_id: str) -> tuple[ArticleChunk, ...]:
        snapshot = self._accounts.get(account_id)
        if snapshot is None:
            raise UnknownAccount(account_id)
        return snapshot.chunks

    def has_account(self, account_id: str) -> bool:
        return account_id in self._accounts

    def retrieve(self, account_id: str, query: str, top_n: int = DEFAULT_TOP_N) -> RetrievalResult:
        snapshot = self._accounts.get(account_id)
        if snapshot is None:
            raise UnknownAccount(account_id)
        scores = snapshot.score(query)
        ranked = sorted(
            (
                (chunk, score)
                for chunk, score in zip(snapshot.chunks, scores)
                if score > 0.0
            ),
            key=lambda item: (-item[1], item[0].article_id, item[0].chunk_id),
        )
        return RetrievalResult(tuple(ranked[:top_n]))
