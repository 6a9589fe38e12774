import math
import os
import subprocess

import pytest

import kgsynth

LANNING = [
    ("Mount Lanning", "instance of", "Mountain"),
    ("Mount Lanning", "mountain range", "Sentinel Range"),
    ("Newcomer Glacier", "mountain range", "Sentinel Range"),
]


def test_linearize_round_trip():
    sc = kgsynth.linearize(LANNING, schema="sc")
    assert sc.startswith("[s] Mount_Lanning [r] instance of [o] Mountain [e] [r] mountain range")
    for schema in ("fe", "sc"):
        text = kgsynth.linearize(LANNING, schema=schema)
        assert kgsynth.parse(text, schema=schema)["triplets"] == LANNING


def test_invalid_schema_raises_validation_error():
    with pytest.raises(kgsynth.ValidationError):
        kgsynth.linearize(LANNING, schema="xx")
    with pytest.raises(kgsynth.Error):
        kgsynth.linearize([("A [e]", "r", "B")])


def test_score_and_buckets():
    gold = [[("a", "r1", "b"), ("a", "r2", "c")], [("d", "r1", "e")]]
    pred = [[("a", "r1", "b")], [("d", "r1", "e"), ("d", "r2", "x")]]
    s = kgsynth.score(pred, gold)
    assert s["micro"]["precision"] == pytest.approx(2 / 3)
    assert s["micro"]["recall"] == pytest.approx(2 / 3)
    # r1 is perfect, r2 has one wrong prediction and one miss.
    assert s["macro"]["f1"] == pytest.approx(0.5)
    assert kgsynth.bucketize(34) == 5
    assert kgsynth.bucketize(0) == -1
    assert kgsynth.estimate_cost(11_177_500, 0.02) == pytest.approx(223.55)


def test_decode_with_python_scorer():
    entities = ["Mount Lanning", "Mountain", "Sentinel Range"]
    relations = ["instance of", "mountain range"]
    target = kgsynth.linearize([("Mount Lanning", "instance of", "Mountain")]).encode() + b"\x00"
    calls = []

    def scorer(context, prefix):
        calls.append(len(prefix))
        nxt = target[len(prefix)] if len(prefix) < len(target) - 1 else 256
        logp = [math.log(0.001)] * 257
        logp[nxt] = math.log(0.9)
        return logp

    best = kgsynth.decode(entities, relations, scorer, context="ctx")
    assert best[0]["triplets"] == [("Mount Lanning", "instance of", "Mountain")]
    assert not best[0]["truncated"]
    assert calls


def test_sample_from_ingested_index(tmp_path):
    cli = os.environ.get("KGSYNTH_CLI")
    if not cli:
        pytest.skip("command-line tool not built")
    (tmp_path / "entities.tsv").write_text("Q1\tA\nQ2\tB\nQ3\tC\n")
    (tmp_path / "relations.tsv").write_text("P1\tknows\nP2\tlikes\n")
    (tmp_path / "edges.tsv").write_text("Q1\tP1\tQ2\nQ2\tP2\tQ3\nQ3\tP1\tQ1\n")
    subprocess.run(
        [cli, "ingest", "--edges", str(tmp_path / "edges.tsv"),
         "--entities", str(tmp_path / "entities.tsv"),
         "--relations", str(tmp_path / "relations.tsv"),
         "--out", str(tmp_path / "index")],
        check=True, capture_output=True,
    )
    sets = kgsynth.sample(str(tmp_path / "index"), 20, seed=3)
    assert len(sets) == 20
    assert all(1 <= len(s) <= 3 for s in sets)
    assert sets == kgsynth.sample(str(tmp_path / "index"), 20, seed=3)
