"""Tests for accuracy, selective prediction, struct and layout metrics."""

import csv
import json
import random

import pytest

from typegram.corpus.types import Bitness, Split, TypeKind, TypeLabel, TypeLibrary
from typegram.engine.inference import Prediction, infer_variable
from typegram.engine.scoring import ScoringConfig
from typegram.errors import InputError
from typegram.metrics.accuracy import overall_accuracy
from typegram.metrics.records import EvalRecord, build_eval_records
from typegram.metrics.report import (
    coverage_risk_table,
    write_coverage_csv,
    write_json_report,
)
from typegram.metrics.selective import coverage_risk_curve, selective_metrics
from typegram.metrics.structs import (
    GroupBy,
    layout_recovery,
    macro_average,
    score_layout,
    struct_identification,
)
from typegram.ngramdb.builder import build_ensemble

from tests.factories import S_LAYOUT, make_corpus, make_function


def _record(
    predicted="int32_t",
    truth="int32_t",
    confidence=1.0,
    in_train=False,
    binary_id="bin",
    opt_level=None,
):
    kinds = {
        "int32_t": TypeKind.PRIMITIVE,
        "char*": TypeKind.POINTER,
        "S": TypeKind.STRUCT,
        "T": TypeKind.STRUCT,
        "S*": TypeKind.POINTER_TO_STRUCT,
        "U": TypeKind.UNION,
    }
    return EvalRecord(
        binary_id=binary_id,
        function_address=0x1000,
        identifier="v",
        predicted=predicted,
        truth=truth,
        confidence=confidence,
        in_train=in_train,
        bitness=Bitness.B64,
        truth_kind=kinds[truth],
        predicted_kind=kinds.get(predicted) if predicted else None,
        opt_level=opt_level,
    )


def _bucket(count, confidence, errors, truth="int32_t"):
    wrong = "char*" if truth != "char*" else "int32_t"
    return [
        _record(wrong if i < errors else truth, truth, confidence)
        for i in range(count)
    ]


def test_accuracy_counts_exact_matches():
    records = [_record()] * 9 + [_record(predicted="char*")]
    assert overall_accuracy(records).overall == 0.9


def test_abstentions_count_as_errors():
    report = overall_accuracy([_record(predicted=None, confidence=0.0)] * 4)
    assert report.overall == 0.0


def test_accuracy_split_by_train_membership():
    records = [_record(in_train=True)] * 6 + [
        _record(predicted=p) for p in ("int32_t", "int32_t", "char*", None)
    ]
    report = overall_accuracy(records)
    assert report.overall == 0.8
    assert report.in_train == 1.0
    assert report.out_of_train == 0.5
    assert report.in_train_count == 6
    assert report.struct is None


def test_accuracy_needs_records():
    with pytest.raises(InputError):
        overall_accuracy([])


@pytest.fixture(scope="module")
def selective_records():
    """Four confidence buckets whose errors concentrate at low confidence."""
    return (
        _bucket(1000, 0.95, 22, truth="S")
        + _bucket(3784, 0.95, 93)
        + _bucket(1000, 0.7, 156, truth="S")
        + _bucket(1919, 0.7, 34)
        + _bucket(1372, 0.5, 300)
        + _bucket(925, 0.2, 925)
    )


def test_coverage_risk_curve(selective_records):
    curve = coverage_risk_curve(selective_records)
    assert [r.tau for r in curve] == [None, 0.40, 0.65, 0.90]
    assert [r.coverage for r in curve] == pytest.approx(
        [1.0, 0.9075, 0.7703, 0.4784]
    )
    assert curve[0].var_risk == pytest.approx(0.153)
    assert curve[-1].var_risk == pytest.approx(0.024, abs=5e-4)
    assert curve[0].struct_risk == pytest.approx(0.089)
    assert curve[-1].struct_risk == pytest.approx(0.022)
    assert all(a.coverage > b.coverage for a, b in zip(curve, curve[1:]))


def test_selective_metrics_exclude_abstentions():
    records = [_record(), _record(predicted=None, confidence=0.0)]
    report = selective_metrics(records, None)
    assert (report.kept, report.correct) == (1, 1)
    assert report.coverage == 0.5
    assert report.sel_acc == 1.0


def test_nothing_kept_leaves_risks_undefined():
    report = selective_metrics([_record(confidence=0.5)], 0.9)
    assert report.kept == 0
    assert report.var_risk is None
    assert report.sel_acc is None
    assert report.coverage == 0.0


def test_struct_identification_counts():
    records = [
        _record("S", "S"),
        _record("S*", "S"),
        _record("S", "int32_t"),
        _record("int32_t", "S*"),
        _record(None, "S", confidence=0.0),
        _record("U", "int32_t"),
        _record("int32_t", "int32_t"),
    ]
    report = struct_identification(records)
    assert (report.true_positives, report.false_positives) == (2, 1)
    assert report.false_negatives == 2
    assert report.precision == pytest.approx(2 / 3)
    assert report.recall == 0.5


def test_struct_identification_without_positives():
    report = struct_identification([_record()])
    assert report.precision is None
    assert report.recall is None
    assert report.f1 is None


def test_layout_score_example():
    score = score_layout(frozenset({(0, 4), (4, 4)}), frozenset({(0, 4), (4, 8)}))
    assert (score.true_positives, score.false_positives) == (1, 1)
    assert score.false_negatives == 1
    assert score.precision == score.recall == 0.5
    assert not score.full_match


def _random_layout(rng):
    return frozenset(
        (rng.choice([0, 4, 8, 12, 16]), rng.choice([1, 2, 4, 8]))
        for _ in range(rng.randint(0, 5))
    )


def test_layout_score_matches_set_comparison():
    rng = random.Random(5)
    for _ in range(200):
        predicted, truth = _random_layout(rng), _random_layout(rng)
        score = score_layout(predicted, truth)
        tp = len(predicted & truth)
        assert score.true_positives == tp
        assert score.false_positives == len(predicted) - tp
        assert score.false_negatives == len(truth) - tp
        assert score.full_match == (predicted == truth)
        if predicted and truth:
            assert score.precision == tp / len(predicted)
            assert score.recall == tp / len(truth)
        swapped = score_layout(truth, predicted)
        assert swapped.precision == score.recall
        assert swapped.recall == score.precision


def test_empty_layouts_match_fully():
    assert score_layout(frozenset(), frozenset()).full_match
    assert score_layout(frozenset(), frozenset({(0, 4)})).recall == 0.0


def test_layout_recovery_follows_pointers(type_library):
    records = [_record("S*", "S"), _record("S", "S"), _record("T", "S")]
    report = layout_recovery(records, type_library)
    assert [s.full_match for s in report.scores] == [True, True, False]
    assert report.scores[2].precision == pytest.approx(1 / 3)
    assert report.scores[2].recall == 0.5
    assert report.full_match_accuracy == pytest.approx(2 / 3)


def test_layout_recovery_skips_unresolved_layouts():
    library = TypeLibrary(
        {
            "S": [TypeLabel("S", TypeKind.STRUCT, S_LAYOUT)],
            "T": [TypeLabel("T", TypeKind.STRUCT)],
        }
    )
    report = layout_recovery([_record("T", "S"), _record("S", "S")], library)
    assert report.skipped == 1
    assert len(report.scores) == 1


def test_layout_recovery_ignores_non_struct_pairs(type_library):
    report = layout_recovery([_record("int32_t", "S")], type_library)
    assert report.scores == ()
    assert report.precision is None


def test_macro_average_over_binaries():
    records = [
        _record("S", "S", binary_id="a"),
        _record("S", "int32_t", binary_id="b"),
    ]
    report = macro_average(records, GroupBy.BINARY, struct_identification)
    assert list(report.groups) == ["a", "b"]
    assert report.precision == 0.5
    assert report.recall == 1.0


def test_macro_average_by_opt_level():
    records = [
        _record("S", "S", opt_level="O0"),
        _record("int32_t", "S", opt_level="O2"),
        _record("S", "S"),
    ]
    report = macro_average(records, GroupBy.OPT_LEVEL, struct_identification)
    assert list(report.groups) == ["O0", "O2", "unknown"]
    assert report.recall == pytest.approx(2 / 3)


def test_build_eval_records(type_library):
    corpus = make_corpus(
        [
            make_function("s = 1 ;", {"s": "S*"}, opt_level="O1"),
            make_function(
                "s = 1 ;", {"s": "S*"}, split=Split.TEST, address=0x2000
            ),
            make_function(
                "t = 2 ; u = t ;", {"t": "char*"}, split=Split.TEST, address=0x3000
            ),
        ]
    )
    predictions = [
        Prediction("bin", 0x2000, "s", label="S*", confidence=1.0, abstained=False),
        Prediction("bin", 0x3000, "t", confidence=0.2),
        Prediction("bin", 0x3000, "u", label="S", confidence=0.9, abstained=False),
    ]
    records, skipped = build_eval_records(predictions, corpus)
    assert skipped == 1
    first, second = records
    assert first.correct and first.in_train
    assert first.truth_kind is TypeKind.POINTER_TO_STRUCT
    assert second.abstained and not second.in_train
    assert second.predicted_kind is None


# Training labels of each group's single context; the truth is always int32_t.
TRAIN_LABELS = {
    "a": ["int32_t"],
    "c": ["int32_t", "int32_t", "char*"],
    "d": ["char*", "char*", "int64_t", "int32_t"],
}
# One confidence level per group, "b" mixing a clean and a noisy context.
GROUP_CONFIDENCES = [1 / 3, 0.5, 0.75, 1.0]


def _noisy_corpus():
    functions = []

    def add(code, variable, label, split=Split.TRAIN, binary_id="train"):
        functions.append(
            make_function(
                code,
                {variable: label},
                split=split,
                binary_id=binary_id,
                address=0x1000 + len(functions),
            )
        )

    for j in range(10):
        for group in "acd":
            labels = TRAIN_LABELS[group]
            if group == "c" and j % 2:
                labels = ["char*", "char*", "int32_t"]
            code = f"{group}{j} = {group}y{j} ;"
            for label in labels:
                add(code, f"{group}{j}", label)
            add(code, f"{group}{j}", "int32_t", Split.TEST, "test")
        full = f"b{j} = by{j} ; bz{j} = b{j} ;"
        add(full, f"b{j}", "int32_t")
        for label in ("int32_t", "char*"):
            add(f"bz{j} = b{j} ;", f"b{j}", label)
        add(full, f"b{j}", "int32_t", Split.TEST, "test")
    return make_corpus(functions)


def test_label_noise_gives_antitone_coverage():
    corpus = _noisy_corpus()
    ensemble = build_ensemble(corpus, (2,), Bitness.B64)
    config = ScoringConfig(k=1)
    predictions = [
        infer_variable(function, identifier, ensemble, config)
        for function in corpus.split(Split.TEST)
        for identifier in function.variable_annotations
    ]
    confidences = sorted({round(p.confidence, 6) for p in predictions})
    assert confidences == [round(v, 6) for v in GROUP_CONFIDENCES]
    records, _ = build_eval_records(predictions, corpus)
    curve = coverage_risk_curve(records)
    assert [r.coverage for r in curve] == [1.0, 0.75, 0.5, 0.25]
    assert curve[0].var_risk == pytest.approx(15 / 40)
    assert curve[-1].var_risk == 0.0


def test_reports_written_as_csv_and_json(tmp_path, selective_records):
    curve = coverage_risk_curve(selective_records)
    write_coverage_csv(tmp_path / "curve.csv", curve)
    with open(tmp_path / "curve.csv", newline="") as handle:
        rows = list(csv.DictReader(handle))
    assert [row["tau"] for row in rows] == ["none", "0.40", "0.65", "0.90"]
    assert rows[-1]["kept"] == "4784"

    write_json_report(tmp_path / "report.json", {"curve": curve, "by": GroupBy.BINARY})
    document = json.loads((tmp_path / "report.json").read_text())
    assert document["by"] == "binary"
    assert document["curve"][0]["tau"] is None

    table = coverage_risk_table(curve)
    assert table.splitlines()[2].startswith("none")
    assert "47.84%" in table
