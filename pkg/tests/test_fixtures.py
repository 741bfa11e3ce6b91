from pathlib import Path

import pytest

from idgnn.core.graph import TaskKind, load_jsonl
from idgnn.errors import DatasetParseError
from idgnn.tasks.wl import wl_distinguishable

FIXTURES = Path(__file__).resolve().parent.parent / "fixtures"
MALFORMED = {"bad_record.jsonl"}


@pytest.mark.parametrize(
    "path", sorted(p for p in FIXTURES.glob("*.jsonl") if p.name not in MALFORMED), ids=lambda p: p.name
)
def test_fixture_validates(path):
    ds = load_jsonl(path)
    ds.validate()
    assert len(ds) > 0
    for g in ds.graphs:
        g.validate()


def test_triangles_fixture():
    ds = load_jsonl(FIXTURES / "triangles.jsonl")
    assert ds.task_kind == TaskKind.NODE and ds.name == "triangles"
    assert ds.split == {"train": [0, 1, 2, 3], "valid": [4], "test": [5]}
    assert list(ds.graphs[3].supervised_nodes()) == [0, 2, 4]


def test_wlhard_pair_fixture_is_wl_equivalent():
    ds = load_jsonl(FIXTURES / "wlhard_pair.jsonl")
    six_cycle, two_triangles = ds.graphs
    assert not wl_distinguishable(six_cycle, two_triangles)


def test_malformed_fixture():
    with pytest.raises(DatasetParseError) as info:
        load_jsonl(FIXTURES / "bad_record.jsonl")
    assert info.value.line_number == 2
