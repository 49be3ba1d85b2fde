"""Answer-quality metrics against hand-computed fixtures, the composite
score, and the external-scorer client."""

import math

import numpy as np
import pytest

from trackfuse import evalkit
from trackfuse.core import AnswerKind
from trackfuse.evalkit import (
    COLUMN_ORDER,
    DEFAULT_COMPOSITE_WEIGHTS,
    BadWeights,
    CorpusTooSmall,
    DuplicateRecordId,
    EndpointUnreachable,
    MalformedResponse,
    MetricReport,
    NoCategoricalRecords,
    PredictionRecord,
    ScorerConfig,
    accuracy,
    bleu_n,
    build_report,
    calibrate_weights,
    cider,
    composite,
    external_score,
    format_table,
    match_score,
    read_predictions,
    report_from_record,
    report_to_record,
    rouge_l,
    write_predictions,
)


def rec(pred, ref, kind=AnswerKind.FREE_TEXT, rid=None, pred_points=(), truth_points=()):
    rec._n = getattr(rec, "_n", 0) + 1
    return PredictionRecord(
        record_id=rid or f"r{rec._n}",
        question="q",
        prediction=pred,
        reference=ref,
        answer_kind=kind,
        pred_points=tuple(tuple(p) for p in pred_points),
        truth_points=tuple(tuple(p) for p in truth_points),
    )


class TestAccuracy:
    def test_exact_match_trim_casefold(self):
        records = [
            rec("Left ", "left", AnswerKind.CATEGORICAL),
            rec("right", "left", AnswerKind.CATEGORICAL),
            rec("whatever", "whatever else", AnswerKind.FREE_TEXT),  # ignored
        ]
        assert accuracy(records) == pytest.approx(0.5)

    def test_no_categorical_records(self):
        with pytest.raises(NoCategoricalRecords):
            accuracy([rec("a", "a", AnswerKind.FREE_TEXT)])


class TestBleu:
    def test_hand_computed_single_record(self):
        # [DERIVED: hand computation] cand "the cat sat" (3 tokens) vs
        # ref "the cat sat on the mat" (6 tokens): all unigram and bigram
        # precisions are 1, brevity penalty exp(1 - 6/3) = exp(-1).
        records = [rec("the cat sat", "the cat sat on the mat")]
        assert bleu_n(records, 1) == pytest.approx(math.exp(-1.0), abs=1e-9)
        assert bleu_n(records, 2) == pytest.approx(math.exp(-1.0), abs=1e-9)

    def test_hand_computed_clipping(self):
        # [DERIVED: hand computation] cand "the the the" vs ref "the cat":
        # clipped unigram count min(3, 1) = 1 of 3; candidate longer, BP = 1
        records = [rec("the the the", "the cat")]
        assert bleu_n(records, 1) == pytest.approx(1.0 / 3.0, abs=1e-9)

    def test_zero_overlap_smoothed_not_zero(self):
        # [DERIVED: hand computation] zero clipped counts become 1e-9/guess
        records = [rec("dog", "cat")]
        assert bleu_n(records, 1) == pytest.approx(1e-9, abs=1e-15)

    def test_identical_corpus_is_one(self):
        records = [rec("a b c d", "a b c d"), rec("e f g h i", "e f g h i")]
        for n in range(1, 5):
            assert bleu_n(records, n) == pytest.approx(1.0, abs=1e-12)

    def test_pooled_over_corpus_not_averaged(self):
        # [DERIVED: hand computation] counts pool: (1 + 0) hits of 2 guesses
        records = [rec("cat", "cat"), rec("dog", "bird")]
        assert bleu_n(records, 1) == pytest.approx(0.5, abs=1e-9)

    def test_bad_order_rejected(self):
        with pytest.raises(ValueError):
            bleu_n([rec("a", "a")], 5)

    def test_case_insensitive(self):
        assert bleu_n([rec("The Cat", "the cat")], 1) == pytest.approx(1.0)


class TestRougeL:
    def test_hand_computed_value(self):
        # [DERIVED: hand computation] LCS 3, P = 1, R = 1/2, beta^2 = 1.44:
        # (1 + 1.44) * 1 * 0.5 / (0.5 + 1.44 * 1)
        records = [rec("the cat sat", "the cat sat on the mat")]
        want = 2.44 * 0.5 / 1.94
        assert rouge_l(records) == pytest.approx(want, abs=1e-9)

    def test_subsequence_not_substring(self):
        # [DERIVED: hand computation] LCS("a x b y c", "a b c") = 3
        records = [rec("a x b y c", "a b c")]
        prec, recall = 3 / 5, 3 / 3
        want = 2.44 * prec * recall / (recall + 1.44 * prec)
        assert rouge_l(records) == pytest.approx(want, abs=1e-9)

    def test_mean_over_records(self):
        a = rouge_l([rec("a b", "a b")])
        b = rouge_l([rec("x", "y")])
        both = rouge_l([rec("a b", "a b"), rec("x", "y")])
        assert both == pytest.approx((a + b) / 2.0, abs=1e-12)

    def test_identical_is_one(self):
        assert rouge_l([rec("a b c", "a b c")]) == pytest.approx(1.0)

    def test_empty_prediction_scores_zero(self):
        assert rouge_l([rec("", "a b")]) == 0.0


class TestCider:
    def test_hand_computed_two_record_corpus(self):
        # [DERIVED: hand computation] predictions equal references, each
        # 2 tokens with no shared n-grams: df = 1 everywhere, idf = log 2.
        # Cosine is 1 for orders 1-2 and 0 for 3-4 (no such n-grams), so each
        # record scores 10 * (1 + 1 + 0 + 0) / 4 = 5.
        records = [rec("a b", "a b"), rec("c d", "c d")]
        assert cider(records) == pytest.approx(5.0, abs=1e-9)

    def test_identical_long_corpus_is_ten(self):
        records = [rec("a b c d", "a b c d"), rec("e f g h", "e f g h")]
        assert cider(records) == pytest.approx(10.0, abs=1e-9)

    def test_shared_ngrams_get_zero_idf(self):
        # both references contain "same": df = 2 = N, idf = 0, so that term
        # contributes nothing; fully shared refs with identical preds score 0
        records = [rec("same", "same"), rec("same", "same")]
        assert cider(records) == pytest.approx(0.0, abs=1e-12)

    def test_length_penalty(self):
        # [DERIVED: hand computation] candidate 2 tokens longer than the
        # reference scales the cosine by exp(-4 / 72)
        base = [rec("a b c d", "a b c d"), rec("e f g h", "e f g h")]
        longer = [rec("a b c d x y", "a b c d"), rec("e f g h", "e f g h")]
        ratio = (cider(longer) * 2 - 10.0) / 10.0  # isolate the first record
        # dot uses min-clipping so extra tokens only hurt via norm and penalty
        assert cider(longer) < cider(base)
        assert ratio < math.exp(-4.0 / (2 * 36.0))

    def test_corpus_too_small(self):
        with pytest.raises(CorpusTooSmall):
            cider([rec("a", "a")])


class TestMatchScore:
    def test_hand_computed_f1(self):
        # [DERIVED: hand computation] 2 predictions, 3 truths, 1 pair within
        # radius: P = 1/2, R = 1/3, F1 = 2/5 -> 40.0
        records = [
            rec(
                "", "",
                pred_points=[(0.0, 0.0), (500.0, 500.0)],
                truth_points=[(3.0, 4.0), (100.0, 100.0), (200.0, 200.0)],
            )
        ]
        assert match_score(records, radius_px=16.0) == pytest.approx(40.0, abs=1e-9)

    def test_perfect_match_is_100(self):
        records = [rec("", "", pred_points=[(1.0, 1.0)], truth_points=[(1.0, 1.0)])]
        assert match_score(records) == 100.0

    def test_no_points_anywhere_is_100(self):
        assert match_score([rec("a", "b")]) == 100.0

    def test_one_sided_points_score_zero(self):
        assert match_score([rec("", "", pred_points=[(0.0, 0.0)])]) == 0.0
        assert match_score([rec("", "", truth_points=[(0.0, 0.0)])]) == 0.0

    def test_assignment_is_one_to_one(self):
        # two predictions on one truth: only one can match
        records = [
            rec(
                "", "",
                pred_points=[(0.0, 0.0), (1.0, 0.0)],
                truth_points=[(0.0, 0.0)],
            )
        ]
        # P = 1/2, R = 1 -> F1 = 2/3
        assert match_score(records) == pytest.approx(200.0 / 3.0, abs=1e-9)

    def test_radius_boundary_inclusive(self):
        records = [rec("", "", pred_points=[(16.0, 0.0)], truth_points=[(0.0, 0.0)])]
        assert match_score(records, radius_px=16.0) == 100.0
        assert match_score(records, radius_px=15.99) == 0.0


def report(**kw):
    base = dict(
        accuracy=0.5, bleu1=0.4, bleu2=0.3, bleu3=0.2, bleu4=0.1,
        rouge_l=0.6, cider=2.0, match=50.0, final=0.0, chatgpt=None,
    )
    base.update(kw)
    return MetricReport(**base)


class TestComposite:
    def test_default_weights_sum_to_one(self):
        assert sum(DEFAULT_COMPOSITE_WEIGHTS.values()) == pytest.approx(1.0)

    @pytest.mark.parametrize(
        "component,value",
        [
            ("accuracy", 0.5),
            ("bleu", (0.4 + 0.3 + 0.2 + 0.1) / 4.0),
            ("rouge_l", 0.6),
            ("cider", 0.2),
            ("match", 0.5),
        ],
    )
    def test_one_hot_weight_selects_component(self, component, value):
        weights = {component: 1.0}
        assert composite(report(), weights) == pytest.approx(value, abs=1e-12)

    def test_one_hot_chatgpt(self):
        assert composite(report(chatgpt=70.0), {"chatgpt": 1.0}) == pytest.approx(0.7)

    def test_missing_chatgpt_renormalizes(self):
        r = report()
        # default weights leave 0.6 of mass; renormalized result must match
        # recomputing with the chatgpt weight removed and rescaled
        manual = {k: w / 0.6 for k, w in DEFAULT_COMPOSITE_WEIGHTS.items() if k != "chatgpt"}
        got = composite(r, DEFAULT_COMPOSITE_WEIGHTS)
        comps = evalkit.normalized_components(r)
        want = sum(w * comps[k] for k, w in manual.items())
        assert got == pytest.approx(want, abs=1e-12)

    def test_bad_weights(self):
        with pytest.raises(BadWeights):
            composite(report(), {"accuracy": 0.5, "nonsense": 0.5})
        with pytest.raises(BadWeights):
            composite(report(), {"accuracy": 0.7})
        with pytest.raises(BadWeights):
            composite(report(), {"accuracy": 1.5, "match": -0.5})
        with pytest.raises(BadWeights):
            composite(report(), {"chatgpt": 1.0})  # chatgpt absent

    def test_published_benchmark_row_reproduced(self):
        # [PAPER] default weights reproduce a published final score
        r = MetricReport(
            accuracy=0.818, chatgpt=67.090,
            bleu1=0.730, bleu2=0.670, bleu3=0.610, bleu4=0.552,
            rouge_l=0.734, cider=0.140, match=43.500, final=0.0,
        )
        assert composite(r) == pytest.approx(0.611, abs=0.02)


BENCHMARK_ROWS = [
    dict(accuracy=0.454, chatgpt=55.272, bleu1=0.680, bleu2=0.625, bleu3=0.566,
         bleu4=0.512, rouge_l=0.672, cider=0.006, match=33.750, final=0.464),
    dict(accuracy=0.667, chatgpt=56.000, bleu1=0.670, bleu2=0.606, bleu3=0.542,
         bleu4=0.485, rouge_l=0.676, cider=0.014, match=39.250, final=0.519),
    dict(accuracy=0.818, chatgpt=67.090, bleu1=0.730, bleu2=0.670, bleu3=0.610,
         bleu4=0.552, rouge_l=0.734, cider=0.140, match=43.500, final=0.611),
    dict(accuracy=0.501, chatgpt=51.396, bleu1=0.614, bleu2=0.559, bleu3=0.506,
         bleu4=0.455, rouge_l=0.658, cider=0.033, match=17.883, final=0.421),
    dict(accuracy=0.523, chatgpt=55.352, bleu1=0.706, bleu2=0.642, bleu3=0.581,
         bleu4=0.522, rouge_l=0.701, cider=0.040, match=29.074, final=0.472),
    dict(accuracy=0.596, chatgpt=58.438, bleu1=0.724, bleu2=0.658, bleu3=0.593,
         bleu4=0.531, rouge_l=0.721, cider=0.044, match=35.730, final=0.515),
]


class TestCalibration:
    def test_fit_reproduces_benchmark_finals(self):
        weights = calibrate_weights(BENCHMARK_ROWS)
        assert sum(weights.values()) == pytest.approx(1.0, abs=1e-9)
        for row in BENCHMARK_ROWS:
            r = MetricReport(
                accuracy=row["accuracy"], chatgpt=row["chatgpt"],
                bleu1=row["bleu1"], bleu2=row["bleu2"], bleu3=row["bleu3"],
                bleu4=row["bleu4"], rouge_l=row["rouge_l"], cider=row["cider"],
                match=row["match"], final=0.0,
            )
            comps = evalkit.normalized_components(r)
            got = sum(w * comps[k] for k, w in weights.items())
            assert got == pytest.approx(row["final"], abs=0.02)

    def test_fit_recovers_known_weights(self):
        rng = np.random.Generator(np.random.PCG64(3))
        true = DEFAULT_COMPOSITE_WEIGHTS
        rows = []
        for _ in range(12):
            r = report(
                accuracy=float(rng.uniform(0, 1)),
                bleu1=float(rng.uniform(0, 1)), bleu2=float(rng.uniform(0, 1)),
                bleu3=float(rng.uniform(0, 1)), bleu4=float(rng.uniform(0, 1)),
                rouge_l=float(rng.uniform(0, 1)), cider=float(rng.uniform(0, 10)),
                match=float(rng.uniform(0, 100)), chatgpt=float(rng.uniform(0, 100)),
            )
            row = r.as_dict()
            row["final"] = composite(r, true)
            rows.append(row)
        fitted = calibrate_weights(rows)
        for k, w in true.items():
            assert fitted[k] == pytest.approx(w, abs=1e-6)


class TestBuildReport:
    def records(self):
        return [
            rec("left", "left", AnswerKind.CATEGORICAL),
            rec("the car is accelerating", "the car is accelerating"),
            rec("12.00 m/s", "12.50 m/s", AnswerKind.NUMERIC,
                pred_points=[(10.0, 10.0)], truth_points=[(12.0, 11.0)]),
        ]

    def test_report_fields_consistent(self):
        r = build_report(self.records())
        assert r.accuracy == 1.0
        assert r.chatgpt is None
        assert r.final == pytest.approx(composite(r), abs=1e-12)
        assert 0.0 <= r.final <= 1.0

    def test_chatgpt_scores_averaged(self):
        r = build_report(self.records(), chatgpt_scores={"a": 80, "b": 60})
        assert r.chatgpt == pytest.approx(70.0)

    def test_record_roundtrip(self):
        r = build_report(self.records())
        d = report_to_record(r)
        assert d["kind"] == "metric_report"
        assert report_from_record(d) == r
        with pytest.raises(ValueError):
            report_from_record({"kind": "other"})

    def test_format_table_layout(self):
        r = build_report(self.records(), chatgpt_scores={"a": 70})
        text = format_table(r)
        header, row = text.splitlines()
        assert header.split() == [
            "Accuracy", "ChatGPT", "Bleu", "1", "Bleu", "2", "Bleu", "3",
            "Bleu", "4", "ROUGE", "L", "CIDEr", "Match", "Final",
        ]
        assert len(header) == len(row)

    def test_column_order(self):
        assert COLUMN_ORDER == (
            "accuracy", "chatgpt", "bleu1", "bleu2", "bleu3", "bleu4",
            "rouge_l", "cider", "match", "final",
        )


class TestPredictionFiles:
    def test_roundtrip(self, tmp_path):
        records = [
            rec("left", "right", AnswerKind.CATEGORICAL, rid="a"),
            rec("(1.00, 2.00)", "(1.10, 2.20)", AnswerKind.NUMERIC, rid="b",
                pred_points=[(1.0, 2.0)], truth_points=[(1.1, 2.2)]),
        ]
        path = tmp_path / "preds.txt"
        write_predictions(path, records)
        assert read_predictions(path) == records

    def test_duplicate_id_rejected(self, tmp_path):
        records = [rec("a", "a", rid="dup"), rec("b", "b", rid="dup")]
        path = tmp_path / "preds.txt"
        write_predictions(path, records)
        with pytest.raises(DuplicateRecordId):
            read_predictions(path)


class TestExternalScorer:
    CFG = ScorerConfig(url="http://scorer.invalid/v1", attempts=3, backoff_s=0.5)

    def records(self, n=3):
        return [rec("p", "r", rid=f"id{i}") for i in range(n)]

    def test_scores_collected_by_record_id(self):
        def post(cfg, payload):
            return "80"

        scores, malformed = external_score(self.records(), self.CFG, post=post, sleep=lambda s: None)
        assert scores == {"id0": 80, "id1": 80, "id2": 80}
        assert malformed == []

    def test_json_score_body_accepted(self):
        scores, _ = external_score(
            self.records(1), self.CFG, post=lambda c, p: '{"score": "65"}', sleep=lambda s: None
        )
        assert scores == {list(scores)[0]: 65}

    def test_malformed_response_recorded_not_fabricated(self):
        def post(cfg, payload):
            return "not a number" if payload["question"] == "q" else "50"

        scores, malformed = external_score(self.records(2), self.CFG, post=post, sleep=lambda s: None)
        assert scores == {}
        assert sorted(malformed) == ["id0", "id1"]

    def test_out_of_range_score_is_malformed(self):
        scores, malformed = external_score(
            self.records(1), self.CFG, post=lambda c, p: "150", sleep=lambda s: None
        )
        assert scores == {}
        assert len(malformed) == 1

    def test_retry_with_exponential_backoff(self):
        calls = []
        sleeps = []

        def post(cfg, payload):
            calls.append(1)
            if len(calls) < 3:
                raise ConnectionError("down")
            return "42"

        scores, _ = external_score(self.records(1), self.CFG, post=post, sleep=sleeps.append)
        assert scores[list(scores)[0]] == 42
        assert sleeps == [0.5, 1.0]

    def test_unreachable_after_retries(self):
        def post(cfg, payload):
            raise ConnectionError("down")

        with pytest.raises(EndpointUnreachable):
            external_score(self.records(1), self.CFG, post=post, sleep=lambda s: None)

    def test_config_from_env(self):
        env = {
            "EVALKIT_SCORER_URL": "http://x.invalid",
            "EVALKIT_SCORER_KEY": "k",
            "EVALKIT_SCORER_TIMEOUT_MS": "1234",
        }
        cfg = ScorerConfig.from_env(env)
        assert (cfg.url, cfg.key, cfg.timeout_ms) == ("http://x.invalid", "k", 1234)
        with pytest.raises(EndpointUnreachable):
            ScorerConfig.from_env({})
