import pytest

from codexforge.fixtures import build_fixture_corpus


@pytest.fixture(scope="session")
def fixture_corpus(tmp_path_factory):
    """24-page two-volume synthetic corpus with stub models; shared
    read-only across tests that only run pipeline stages on a copy."""
    root = tmp_path_factory.mktemp("corpus")
    return build_fixture_corpus(root)


@pytest.fixture(scope="session")
def completed_corpus(tmp_path_factory):
    """Fixture corpus with the full pipeline already run: records,
    captions, vectors, graph, and index all present. Read-only."""
    from codexforge.pipeline import run

    root = tmp_path_factory.mktemp("completed")
    corpus = build_fixture_corpus(root)
    report = run("all", corpus.config)
    assert report.exit_code == 0
    return corpus


@pytest.fixture()
def fresh_corpus(tmp_path):
    """A private corpus for tests that mutate pipeline state."""
    return build_fixture_corpus(tmp_path / "corpus")
