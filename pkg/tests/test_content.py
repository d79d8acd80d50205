import json

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mmrag.content import (
    EquationPayload,
    ImagePayload,
    Modality,
    TablePayload,
    TextPayload,
    dump_source,
    load_corpus,
    load_source,
    modality_filter,
    neighborhood,
    payload_text,
    source_to_json,
)
from mmrag.errors import DuplicateUnitError, OrderError, RaggedTableError, SchemaError


def doc(*units, source_id="doc"):
    return {"source_id": source_id, "title": "t", "metadata": {}, "units": list(units)}


def text(i, body="hello"):
    return {"index": i, "modality": "text", "payload": {"body": body}}


def image(i, caption=None):
    return {"index": i, "modality": "image", "payload": {"image_ref": "a.png", "caption": caption, "footnotes": []}}


def five_units():
    return load_source(doc(*(text(i, f"unit {i}") for i in range(5))))


def test_load_three_units_in_order():
    s = load_source(doc(text(0), image(1, "fig"), text(2)))
    assert [u.index for u in s.units] == [0, 1, 2]
    assert [u.unit_id for u in s.units] == ["doc#0", "doc#1", "doc#2"]
    assert s.units[1].modality is Modality.IMAGE
    assert s.units[1].payload == ImagePayload("a.png", "fig", ())


def test_unordered_input_is_sorted():
    s = load_source(doc(text(1, "b"), text(0, "a")))
    assert [u.payload.body for u in s.units] == ["a", "b"]


def test_ragged_table():
    t = {"index": 0, "modality": "table", "payload": {"header_rows": [["a", "b", "c"]], "body_rows": [["1", "2"]]}}
    with pytest.raises(RaggedTableError):
        load_source(doc(t))


def test_gap_in_indices():
    with pytest.raises(OrderError):
        load_source(doc(text(0), text(2), text(3)))


def test_duplicate_indices():
    with pytest.raises(OrderError):
        load_source(doc(text(0), text(0)))


@pytest.mark.parametrize(
    "bad",
    [
        {"title": "no id", "units": []},
        doc({"index": 0, "modality": "text", "payload": {"latex": "x"}}),
        doc({"index": 0, "modality": "video", "payload": {}}),
        doc({"index": -1, "modality": "text", "payload": {"body": "x"}}),
        doc({"index": 0, "modality": "equation", "payload": {"body": "x"}}),
    ],
)
def test_schema_errors(bad):
    with pytest.raises(SchemaError):
        load_source(bad)


def test_invalid_json_text():
    with pytest.raises(SchemaError):
        load_source("{not json")


def test_payload_variants_and_generic():
    s = load_source(
        doc(
            {"index": 0, "modality": "equation", "payload": {"latex": "E=mc^2", "surrounding_text": "energy"}},
            {"index": 1, "modality": "generic", "payload": {"kind": "audio", "seconds": 3}},
            {"index": 2, "modality": "table", "payload": {"header_rows": [], "body_rows": [["a", "b"]]}},
        )
    )
    assert s.units[0].payload == EquationPayload("E=mc^2", "energy")
    assert s.units[1].payload.data == {"kind": "audio", "seconds": 3}
    assert isinstance(s.units[2].payload, TablePayload) and s.units[2].payload.n_columns == 2
    assert payload_text(s.units[0]) == "E=mc^2\nenergy"


@pytest.mark.parametrize(
    "center,delta,expected",
    [(2, 1, [1, 2, 3]), (0, 2, [0, 1, 2]), (2, 0, [2]), (4, 3, [1, 2, 3, 4]), (2, 10, [0, 1, 2, 3, 4])],
)
def test_neighborhood(center, delta, expected):
    w = neighborhood(five_units(), center, delta)
    assert [u.index for u in w.members] == expected
    assert [u.index for u in w.neighbors] == [i for i in expected if i != center]


def test_neighborhood_out_of_range():
    with pytest.raises(IndexError):
        neighborhood(five_units(), 5, 1)


@given(center=st.integers(0, 9), delta=st.integers(0, 12))
def test_neighborhood_properties(center, delta):
    s = load_source(doc(*(text(i) for i in range(10))))
    w = neighborhood(s, center, delta)
    idx = [u.index for u in w.members]
    assert len(idx) <= 2 * delta + 1
    assert center in idx
    assert idx == sorted(idx) and idx == [k for k in range(10) if abs(k - center) <= delta]


def test_modality_filter():
    s = load_source(doc(text(0), image(1), text(2)))
    assert [u.index for u in modality_filter(s, "image")] == [1]
    assert modality_filter(s, Modality.TABLE) == []
    all_text = load_source(doc(text(0), text(1)))
    assert modality_filter(all_text, "text") == list(all_text.units)


_cell = st.text(st.characters(blacklist_categories=("Cs",)), max_size=8)


@st.composite
def documents(draw):
    n = draw(st.integers(0, 6))
    units = []
    for i in range(n):
        kind = draw(st.sampled_from(["text", "image", "table", "equation", "generic"]))
        if kind == "text":
            payload = {"body": draw(_cell)}
        elif kind == "image":
            payload = {
                "image_ref": "x" + draw(_cell),
                "caption": draw(st.none() | _cell),
                "footnotes": draw(st.lists(_cell, max_size=2)),
            }
        elif kind == "table":
            width = draw(st.integers(1, 3))
            row = st.lists(_cell, min_size=width, max_size=width)
            payload = {
                "caption": draw(st.none() | _cell),
                "header_rows": draw(st.lists(row, max_size=1)),
                "body_rows": draw(st.lists(row, max_size=3)),
                "raw": draw(_cell),
            }
        elif kind == "equation":
            payload = {"latex": "x" + draw(_cell), "surrounding_text": draw(st.none() | _cell)}
        else:
            payload = draw(st.dictionaries(st.sampled_from("abc"), st.integers(), max_size=2))
        unit = {"index": i, "modality": kind, "payload": payload}
        if draw(st.booleans()):
            unit["page_hint"] = draw(st.integers(0, 50))
        units.append(unit)
    return {"source_id": "s" + draw(st.text("abc", max_size=3)), "title": draw(_cell), "metadata": {}, "units": units}


@settings(max_examples=200)
@given(documents())
def test_round_trip(d):
    s = load_source(d)
    assert load_source(dump_source(s)) == s
    assert load_source(json.dumps(source_to_json(s))) == s


def test_corpus_duplicate_source_ids(tmp_path):
    for name in ("a.json", "b.json"):
        (tmp_path / name).write_text(json.dumps(doc(text(0))))
    with pytest.raises(DuplicateUnitError):
        load_corpus(tmp_path)


def test_content_unit_rejects_mismatched_payload():
    from mmrag.content import ContentUnit

    with pytest.raises(SchemaError):
        ContentUnit("d#0", 0, Modality.IMAGE, TextPayload("x"))
