import sys
import hashlib

import hypothesis
import numpy as np
import pytest

from compliance_rag.corpus import Chunk, DocKind, DocumentSource, chunk_document
from compliance_rag.index import IndexLabel, build_indices

hypothesis.settings.register_profile("ci", max_examples=200, deadline=None)
hypothesis.settings.register_profile("dev", max_examples=50, deadline=None)
hypothesis.settings.load_profile("dev")


def make_chunk(chunk_id, text):
    doc_id, _, seq = chunk_id.partition("#")
    n = len(text.split())
    return Chunk(chunk_id, doc_id, int(seq or 0), 0, n, 0, len(text), text, n)


def seeded_vector(key, dim=8):
    seed = int.from_bytes(hashlib.sha256(key.encode()).digest()[:8], "little")
    return np.random.default_rng(seed).standard_normal(dim)


@pytest.fixture
def toy_chunks():
    return [make_chunk("d#0", "cat sat"), make_chunk("d#1", "dog sat"), make_chunk("d#2", "cat cat dog")]


@pytest.fixture
def toy_pair(toy_chunks):
    vecs = {c.chunk_id: seeded_vector(c.chunk_id) for c in toy_chunks}
    return build_indices(toy_chunks, vecs, IndexLabel.DOCUMENT, model_id="test")


@pytest.fixture
def small_doc():
    body = "Zone Z1 hosts the TCMS. " * 40
    return DocumentSource("z", "Zones", DocKind.USER_DOC, body)


@pytest.fixture
def small_chunks(small_doc):
    return chunk_document(small_doc, chunk_size=32, overlap=4)


def run_fixture_cli(tmp_path, *, chunk_size=96, runs=(("bca", "BCA", "bca"),), judge=True):
    """Ingest, index and run the bundled fixture corpus through the CLI in mock mode.

    `runs` holds (arch, label, run_id) triples. Returns the runs directory.
    """
    from compliance_rag.cli import fixture_dir, main

    fx = fixture_dir()
    store, idx, runs_dir = tmp_path / "store", tmp_path / "indices", tmp_path / "runs"
    common = ["--mock", "--runs-dir", str(runs_dir)]
    assert main(["ingest", *common, "--manifest", str(fx / "manifest.json"), "--out", str(store),
                 "--chunk-size", str(chunk_size)]) == 0
    assert main(["index", *common, "--chunks", str(store), "--out", str(idx)]) == 0
    for arch, label, run_id in runs:
        assert main(["run", *common, "--queries", str(fx / "queries.jsonl"), "--indices", str(idx),
                     "--arch", arch, "--run-id", run_id, "--label", label]) == 0
        if judge:
            assert main(["judge", *common, "--run-id", run_id]) == 0
    return runs_dir


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if results:
        terminalreporter.section("acceptance criteria")
        for number in sorted(results):
            terminalreporter.write_line(results[number])
