import pytest

from styleqa.errors import UnknownAccount
from styleqa.retrieval import RetrievalIndex, split_chunks, tokenize

from oracles import bm25_oracle

FIVE_CHUNKS = [
    ("art1", "the quick brown fox jumps over the lazy dog"),
    ("art2", "foxes are quick and clever animals in the wild"),
    ("art3", "dogs are loyal companions and love long walks"),
    ("art4", "the weather today is sunny with a light breeze"),
    ("art5", "quick thinking saved the clever dog from the river"),
]


@pytest.fixture
def index():
    idx = RetrievalIndex()
    idx.ingest("acct", FIVE_CHUNKS)
    return idx


class TestChunking:
    def test_short_article_is_one_chunk(self):
        assert split_chunks("just ten tokens in this tiny little article here now") == [
            "just ten tokens in this tiny little article here now"
        ]

    def test_paragraph_boundaries_first(self):
        paragraphs = [" ".join(f"p{i}w{j}" for j in range(200)) for i in range(3)]
        text = "\n\n".join(paragraphs)
        chunks = split_chunks(text, max_tokens=256)
        assert chunks == paragraphs

    def test_sentence_packing_within_long_paragraph(self):
        sentences = [" ".join(f"s{i}w{j}" for j in range(50)) + "." for i in range(10)]
        chunks = split_chunks(" ".join(sentences), max_tokens=120)
        for chunk in chunks:
            assert len(tokenize(chunk)) <= 120
        assert sum(len(tokenize(c)) for c in chunks) == sum(
            len(tokenize(s)) for s in sentences
        )

    def test_token_counts_within_bounds(self, index):
        for chunk in index.chunks("acct"):
            assert 1 <= chunk.token_count <= index.max_chunk_tokens


class TestIngest:
    def test_empty_list(self):
        idx = RetrievalIndex()
        assert idx.ingest("a", []) == 0

    def test_empty_article_skipped_and_counted(self):
        idx = RetrievalIndex()
        n = idx.ingest("a", [("a1", "   "), ("a2", "real content here")])
        assert n == 1
        assert idx.skipped_empty == 1

    def test_duplicate_replaces(self, caplog):
        idx = RetrievalIndex()
        idx.ingest("a", [("a1", "first version text")])
        idx.ingest("a", [("a1", "second version text")])
        assert [c.text for c in idx.chunks("a")] == ["second version text"]


class TestRetrieve:
    def test_exact_text_ranks_first(self, index):
        result = index.retrieve("acct", FIVE_CHUNKS[2][1], top_n=3)
        top_chunk, _ = result.chunks[0]
        assert top_chunk.article_id == "art3"

    def test_no_shared_tokens_gives_empty(self, index):
        assert index.retrieve("acct", "zzzz qqqq xxxx", top_n=3).chunks == ()

    def test_unknown_account(self, index):
        with pytest.raises(UnknownAccount):
            index.retrieve("ghost", "anything")

    def test_scores_match_brute_force_oracle(self, index):
        query = "quick clever dog"
        result = index.retrieve("acct", query, top_n=5)
        doc_terms = [tokenize(text) for _, text in FIVE_CHUNKS]
        expected = bm25_oracle(tokenize(query), doc_terms)
        by_article = {c.article_id: score for c, score in result.chunks}
        for (article_id, _), oracle_score in zip(FIVE_CHUNKS, expected):
            if oracle_score > 0:
                assert by_article[article_id] == pytest.approx(oracle_score, abs=1e-9)
            else:
                assert article_id not in by_article

    def test_deterministic_under_repetition(self, index):
        first = index.retrieve("acct", "quick dog", top_n=3)
        for _ in range(5):
            assert index.retrieve("acct", "quick dog", top_n=3) == first

    def test_tie_break_by_article_then_chunk(self):
        idx = RetrievalIndex()
        idx.ingest("a", [("b", "same words here"), ("a", "same words here")])
        result = idx.retrieve("a", "same words", top_n=2)
        assert [c.article_id for c, _ in result.chunks] == ["a", "b"]

    def test_top_n_limits(self, index):
        assert len(index.retrieve("acct", "the quick dog", top_n=2).chunks) == 2
