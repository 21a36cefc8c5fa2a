import math

import pytest

import workbench as wb


def test_manifest_round_trip_and_errors(tmp_path):
    m = wb.Manifest(["a", "b"], n_max=10)
    m.add("x1", "images/x1.png", "a")
    m.add("x2", "images/x2.png", "b")
    assert len(m) == 2
    assert m.record("x2")["label"] == "b"
    assert m.record("x1")["status"] == "unverified"
    path = tmp_path / "manifest.jsonl"
    m.save(path)
    assert wb.load_manifest(path) == m
    assert wb.parse_manifest(m.serialize()) == m
    with pytest.raises(wb.InvariantError):
        m.add("x1", "images/x1.png", "a")
    with pytest.raises(wb.ValidationError):
        m.add("x3", "images/x3.png", "zzz")
    with pytest.raises(wb.IoError):
        wb.load_manifest(tmp_path / "missing.jsonl")
    with pytest.raises(wb.ParseError):
        wb.parse_manifest("not a manifest")
    assert issubclass(wb.BudgetError, wb.WorkbenchError)


def test_losses_and_schedule():
    assert abs(wb.generator_loss([0.5], [[0.25] * 4], [0], gamma=0.5)) < 1e-12
    d, f = [0.9, 0.6], [0.2, 0.3]
    expected = -(math.log(0.9) + math.log(0.8) + math.log(0.6) + math.log(0.7)) / 2
    assert wb.discriminator_loss(d, f) == pytest.approx(expected, abs=1e-12)
    assert wb.gamma_schedule(0, 1000) == 0.0
    assert wb.gamma_schedule(500, 1000) == pytest.approx(0.25, abs=1e-12)
    assert wb.gamma_schedule(5000, 1000, ramp=200) == pytest.approx(0.5)
    z = wb.sample_noise(100, 100, truncation=0.7, seed=3)
    assert len(z) == 10000
    assert max(abs(v) for v in z) <= 0.7


def test_triage_ranking():
    order = wb.rank_by_loss([("c", 0.3), ("a", 0.1), ("b", 0.3)])
    assert order == ["a", "b", "c"]
    head, tail = wb.select_head_tail(order, 1, 1)
    assert head == ["a"] and tail == ["c"]
    with pytest.raises(wb.ValidationError):
        wb.select_head_tail(order, 2, 2)


def test_glyph_corpus_dedup_and_folds(tmp_path):
    m, truth, flipped = wb.generate_glyph_corpus(tmp_path, per_class=4, flip_fraction=0.25, seed=1)
    assert len(m) == 40
    assert len(flipped) == 10
    assert all(m.record(i)["label"] != truth[i] for i in flipped)
    assert wb.hash_manifest(m, tmp_path) == []
    assert wb.find_duplicates(m, threshold=0) == []
    assert m.size_constraint()["satisfied"]
    assert m.ratio_validated() == 0.0
    assert wb.hamming(0b1011, 0b0001) == 2
