import math
import random

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from compliance_rag.index import (
    IndexChecksumError,
    IndexingError,
    IndexLabel,
    IndexVersionError,
    LexicalIndex,
    bm25_score,
    build_indices,
    cosine_similarity,
    idf,
    load,
    persist,
)
from compliance_rag.retrieval import RetrievalConfig, retrieve_stage1
from conftest import make_chunk, seeded_vector
from oracles import reference_bm25

# frozen from oracles.reference_bm25 on the three-document toy corpus, query "cat"
TOY_CAT_SCORES = [0.4991762683023676, 0.0, 0.5981864372218454]


def test_avgdl_and_df():
    chunks = [make_chunk("a#0", " ".join(["x"] * 10)), make_chunk("a#1", " ".join(["y"] * 20)),
              make_chunk("a#2", " ".join(["x"] * 30))]
    lex = LexicalIndex.build(chunks)
    assert lex.avgdl == 20
    assert lex.df["x"] == 2
    assert lex.n_docs == 3


def test_empty_index_rejected():
    with pytest.raises(IndexingError, match="empty index"):
        build_indices([], {}, IndexLabel.DOCUMENT)


def test_missing_embedding_names_chunk(toy_chunks):
    vecs = {c.chunk_id: [1.0, 0.0] for c in toy_chunks[:2]}
    with pytest.raises(IndexingError, match="d#2"):
        build_indices(toy_chunks, vecs, IndexLabel.DOCUMENT)


def test_dimension_mismatch(toy_chunks):
    vecs = {"d#0": [1.0, 0.0], "d#1": [1.0, 0.0], "d#2": [1.0, 0.0, 0.0]}
    with pytest.raises(IndexingError, match="d#2"):
        build_indices(toy_chunks, vecs, IndexLabel.DOCUMENT)


def test_cosine_examples():
    assert cosine_similarity([1, 0], [1, 0]) == 1.0
    assert cosine_similarity([1, 0], [0, 1]) == 0.0
    assert cosine_similarity([1, 1], [1, 0]) == pytest.approx(1 / math.sqrt(2), abs=1e-9)
    assert cosine_similarity([0, 0], [1, 0]) == 0.0


vec = st.lists(st.floats(-1e3, 1e3, allow_nan=False), min_size=3, max_size=3)


@given(vec, vec, st.floats(1e-3, 1e3))
def test_cosine_symmetry_and_scale(a, b, lam):
    c = cosine_similarity(a, b)
    assert -1 - 1e-12 <= c <= 1 + 1e-12
    assert c == pytest.approx(cosine_similarity(b, a), abs=1e-12)
    if np.linalg.norm(a) > 1e-6 and np.linalg.norm(b) > 1e-6:
        assert cosine_similarity([lam * x for x in a], b) == pytest.approx(c, abs=1e-9)


def test_bm25_toy_fixture(toy_pair):
    got = [bm25_score("cat", cid, toy_pair.lexical) for cid in ("d#0", "d#1", "d#2")]
    oracle = reference_bm25([["cat", "sat"], ["dog", "sat"], ["cat", "cat", "dog"]], ["cat"])
    assert got == pytest.approx(oracle, abs=1e-6)
    assert got == pytest.approx(TOY_CAT_SCORES, abs=1e-6)


def test_bm25_no_overlap_is_zero(toy_pair):
    assert bm25_score("zebra", "d#0", toy_pair.lexical) == 0.0


def test_bm25_query_is_case_folded(toy_pair):
    assert bm25_score("CAT", "d#2", toy_pair.lexical) == bm25_score("cat", "d#2", toy_pair.lexical)


def test_single_chunk_idf():
    # closed form with N=1, df=1: ln((1 - 1 + 0.5) / (1 + 0.5) + 1) = ln(4/3)
    assert idf(1, 1) == pytest.approx(math.log(4 / 3), abs=1e-12)
    assert idf(1, 1) == pytest.approx(0.2877, abs=1e-4)


def test_bm25_unknown_chunk(toy_pair):
    with pytest.raises(KeyError):
        bm25_score("cat", "nope#0", toy_pair.lexical)


@given(st.integers(1, 500), st.data())
def test_idf_non_negative(n, data):
    df = data.draw(st.integers(0, n))
    assert idf(n, df) >= 0.0


@given(st.integers(0, 6), st.integers(1, 8))
def test_bm25_monotone_in_term_frequency(f, length_pad):
    # equal-length chunks: raising tf of the query term never lowers the score
    length = 7 + length_pad
    def chunk(cid, k):
        return make_chunk(cid, " ".join(["risk"] * k + ["pad"] * (length - k)))
    lo = LexicalIndex.build([chunk("a#0", f), chunk("b#0", f + 1), chunk("c#0", 1)])
    assert lo.score("risk", "b#0") >= lo.score("risk", "a#0")


def test_build_is_permutation_invariant(small_chunks):
    vecs = {c.chunk_id: seeded_vector(c.chunk_id) for c in small_chunks}
    a = build_indices(small_chunks, vecs, IndexLabel.DOCUMENT)
    shuffled = list(small_chunks)
    random.Random(3).shuffle(shuffled)
    b = build_indices(shuffled, vecs, IndexLabel.DOCUMENT)
    assert a.lexical == b.lexical
    assert a.vector.ids == b.vector.ids
    assert np.array_equal(a.vector.matrix, b.vector.matrix)


def random_pair(seed, n=40):
    rng = random.Random(seed)
    vocab = [f"t{i}" for i in range(25)]
    chunks = [make_chunk(f"c{i:03d}#0", " ".join(rng.choices(vocab, k=rng.randint(3, 15)))) for i in range(n)]
    vecs = {c.chunk_id: seeded_vector(f"{seed}/{c.chunk_id}") for c in chunks}
    return build_indices(chunks, vecs, IndexLabel.CONTEXT, model_id="seeded"), vocab, rng


def test_persist_round_trip_same_top_k(tmp_path):
    pair, vocab, rng = random_pair(11)
    persist(pair, tmp_path / "idx")
    loaded = load(tmp_path / "idx")
    assert loaded.label == IndexLabel.CONTEXT
    assert loaded.lexical == pair.lexical
    assert np.array_equal(loaded.vector.matrix, pair.vector.matrix)
    assert loaded.chunks == pair.chunks
    cfg = RetrievalConfig()
    for i in range(10):
        q = " ".join(rng.choices(vocab, k=3))
        qv = seeded_vector(f"query{i}")
        assert retrieve_stage1(q, qv, pair, cfg) == retrieve_stage1(q, qv, loaded, cfg)


def test_meta_layout(tmp_path):
    pair, _, _ = random_pair(1, n=5)
    d = persist(pair, tmp_path / "idx")
    assert sorted(p.name for p in d.iterdir()) == ["chunks.idx", "lexical.idx", "meta.json", "vectors.idx"]


def test_wrong_version_rejected(tmp_path):
    pair, _, _ = random_pair(2, n=5)
    d = persist(pair, tmp_path / "idx")
    raw = (d / "lexical.idx").read_bytes().replace(b'"format_version": 1', b'"format_version": 99', 1)
    (d / "lexical.idx").write_bytes(raw)
    with pytest.raises(IndexVersionError):
        load(d)


def test_truncated_file_rejected(tmp_path):
    pair, _, _ = random_pair(3, n=5)
    d = persist(pair, tmp_path / "idx")
    raw = (d / "vectors.idx").read_bytes()
    (d / "vectors.idx").write_bytes(raw[: len(raw) - 40])
    with pytest.raises(IndexChecksumError):
        load(d)


def test_corrupted_byte_rejected(tmp_path):
    pair, _, _ = random_pair(4, n=5)
    d = persist(pair, tmp_path / "idx")
    raw = bytearray((d / "chunks.idx").read_bytes())
    raw[-5] ^= 0x01
    (d / "chunks.idx").write_bytes(bytes(raw))
    with pytest.raises(IndexChecksumError):
        load(d)


def test_query_vector_must_match(toy_pair):
    with pytest.raises(ValueError, match="dim"):
        toy_pair.vector.cosine_all([1.0, 2.0])
    with pytest.raises(ValueError, match="embedded with"):
        toy_pair.vector.cosine_all(seeded_vector("q"), model_id="other")
