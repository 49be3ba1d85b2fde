"""Offline answer-quality metrics plus an optional external-scorer client.

Implements exact-match accuracy over categorical answers, corpus-level
BLEU 1-4, ROUGE-L (beta 1.2), CIDEr-D (TF-IDF n-gram cosine, Gaussian length
penalty, sigma 6), an F1 match score over 2D pixel locations, and a weighted
composite that folds everything onto a 0-1 scale.
"""

from __future__ import annotations

import math
import os
import time
from collections import Counter, defaultdict
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.optimize import linear_sum_assignment

from .core import AnswerKind, dumps_record, loads_record


class NoCategoricalRecords(ValueError):
    pass


class CorpusTooSmall(ValueError):
    pass


class BadWeights(ValueError):
    pass


class DuplicateRecordId(ValueError):
    pass


class EndpointUnreachable(ConnectionError):
    pass


class MalformedResponse(ValueError):
    pass


@dataclass(frozen=True)
class PredictionRecord:
    record_id: str
    question: str
    prediction: str
    reference: str
    answer_kind: AnswerKind
    pred_points: tuple[tuple[float, float], ...] = ()
    truth_points: tuple[tuple[float, float], ...] = ()


@dataclass(frozen=True)
class MetricReport:
    accuracy: float
    bleu1: float
    bleu2: float
    bleu3: float
    bleu4: float
    rouge_l: float
    cider: float
    match: float
    final: float
    chatgpt: Optional[float] = None  # 0-100, absent when the scorer is unavailable

    def as_dict(self) -> dict:
        d = {
            "accuracy": self.accuracy,
            "chatgpt": self.chatgpt,
            "bleu1": self.bleu1,
            "bleu2": self.bleu2,
            "bleu3": self.bleu3,
            "bleu4": self.bleu4,
            "rouge_l": self.rouge_l,
            "cider": self.cider,
            "match": self.match,
            "final": self.final,
        }
        if self.chatgpt is None:
            del d["chatgpt"]
        return d


#: Table-style column order for printed reports.
COLUMN_ORDER = (
    "accuracy", "chatgpt", "bleu1", "bleu2", "bleu3", "bleu4",
    "rouge_l", "cider", "match", "final",
)


# ---------------------------------------------------------------------------
# Prediction file IO (one record per line)


def record_to_dict(r: PredictionRecord) -> dict:
    d = {
        "record_id": r.record_id,
        "question": r.question,
        "prediction": r.prediction,
        "reference": r.reference,
        "answer_kind": r.answer_kind.value,
    }
    if r.pred_points:
        d["pred_points"] = [list(p) for p in r.pred_points]
    if r.truth_points:
        d["truth_points"] = [list(p) for p in r.truth_points]
    return d


def record_from_dict(d: dict) -> PredictionRecord:
    return PredictionRecord(
        record_id=d["record_id"],
        question=d["question"],
        prediction=d["prediction"],
        reference=d["reference"],
        answer_kind=AnswerKind(d["answer_kind"]),
        pred_points=tuple(tuple(p) for p in d.get("pred_points", ())),
        truth_points=tuple(tuple(p) for p in d.get("truth_points", ())),
    )


def write_predictions(path, records: Sequence[PredictionRecord]) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for r in records:
            fh.write(dumps_record(record_to_dict(r)) + "\n")


def read_predictions(path) -> list[PredictionRecord]:
    with open(path, "r", encoding="utf-8") as fh:
        records = [record_from_dict(loads_record(line)) for line in fh if line.strip()]
    seen = set()
    for r in records:
        if r.record_id in seen:
            raise DuplicateRecordId(r.record_id)
        seen.add(r.record_id)
    return records


# ---------------------------------------------------------------------------
# Metrics


def _tokens(text: str) -> list[str]:
    return text.casefold().split()


def _ngrams(tokens: Sequence[str], n: int) -> Counter:
    return Counter(tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1))


def accuracy(records: Sequence[PredictionRecord]) -> float:
    cats = [r for r in records if r.answer_kind == AnswerKind.CATEGORICAL]
    if not cats:
        raise NoCategoricalRecords("no categorical records to score")
    hits = sum(
        r.prediction.strip().casefold() == r.reference.strip().casefold() for r in cats
    )
    return hits / len(cats)


_BLEU_EPS = 1e-9


def bleu_n(records: Sequence[PredictionRecord], n: int) -> float:
    """Corpus-level BLEU-n: clipped n-gram precisions pooled over all records,
    geometric mean over orders 1..n, times the brevity penalty. Zero clipped
    counts are smoothed to a tiny epsilon so the score degrades instead of
    vanishing."""
    if not 1 <= n <= 4:
        raise ValueError(f"n must be in 1..4, got {n}")
    correct = [0] * n
    guess = [0] * n
    cand_len = 0
    ref_len = 0
    for r in records:
        cand = _tokens(r.prediction)
        ref = _tokens(r.reference)
        cand_len += len(cand)
        ref_len += len(ref)
        for k in range(1, n + 1):
            cgrams = _ngrams(cand, k)
            rgrams = _ngrams(ref, k)
            guess[k - 1] += max(len(cand) - k + 1, 0)
            correct[k - 1] += sum(min(c, rgrams[g]) for g, c in cgrams.items())
    log_p = 0.0
    for k in range(n):
        if guess[k] == 0:
            return 0.0
        p = correct[k] / guess[k] if correct[k] > 0 else _BLEU_EPS / guess[k]
        log_p += math.log(p)
    bp = 1.0 if cand_len >= ref_len else math.exp(1.0 - ref_len / max(cand_len, 1))
    return bp * math.exp(log_p / n)


_ROUGE_BETA = 1.2


def _lcs_len(a: Sequence[str], b: Sequence[str]) -> int:
    if len(a) < len(b):
        a, b = b, a
    prev = [0] * (len(b) + 1)
    for x in a:
        cur = [0]
        for j, y in enumerate(b, start=1):
            cur.append(prev[j - 1] + 1 if x == y else max(prev[j], cur[j - 1]))
        prev = cur
    return prev[-1]


def rouge_l(records: Sequence[PredictionRecord]) -> float:
    """Mean per-record LCS F-measure with recall weighted by beta = 1.2."""
    scores = []
    for r in records:
        cand = _tokens(r.prediction)
        ref = _tokens(r.reference)
        if not cand or not ref:
            scores.append(0.0)
            continue
        lcs = _lcs_len(ref, cand)
        prec = lcs / len(cand)
        rec = lcs / len(ref)
        if prec == 0.0 or rec == 0.0:
            scores.append(0.0)
        else:
            b2 = _ROUGE_BETA**2
            scores.append((1 + b2) * prec * rec / (rec + b2 * prec))
    return float(np.mean(scores)) if scores else 0.0


_CIDER_N = 4
_CIDER_SIGMA = 6.0


def _cider_vec(counts: Counter, doc_freq: dict, log_n: float):
    vec = [defaultdict(float) for _ in range(_CIDER_N)]
    norm = [0.0] * _CIDER_N
    length = 0
    for ngram, tf in counts.items():
        idf = log_n - math.log(max(1.0, doc_freq.get(ngram, 0.0)))
        k = len(ngram) - 1
        vec[k][ngram] = tf * idf
        norm[k] += vec[k][ngram] ** 2
        if k == 0:
            length += tf
    return vec, [math.sqrt(x) for x in norm], length


def cider(records: Sequence[PredictionRecord]) -> float:
    """CIDEr-D with one reference per record: clipped TF-IDF cosine per
    n-gram order, Gaussian length penalty, mean over orders 1..4, times 10,
    averaged over the corpus."""
    if len(records) < 2:
        raise CorpusTooSmall("CIDEr needs at least 2 records for document frequencies")
    ref_counts = []
    cand_counts = []
    for r in records:
        rc = Counter()
        for k in range(1, _CIDER_N + 1):
            rc.update(_ngrams(_tokens(r.reference), k))
        ref_counts.append(rc)
        cc = Counter()
        for k in range(1, _CIDER_N + 1):
            cc.update(_ngrams(_tokens(r.prediction), k))
        cand_counts.append(cc)
    doc_freq: dict = defaultdict(float)
    for rc in ref_counts:
        for ngram in rc:
            doc_freq[ngram] += 1.0
    log_n = math.log(len(records))
    scores = []
    for cc, rc in zip(cand_counts, ref_counts):
        v_c, n_c, len_c = _cider_vec(cc, doc_freq, log_n)
        v_r, n_r, len_r = _cider_vec(rc, doc_freq, log_n)
        delta = float(len_c - len_r)
        penalty = math.exp(-(delta**2) / (2.0 * _CIDER_SIGMA**2))
        val = np.zeros(_CIDER_N)
        for k in range(_CIDER_N):
            dot = sum(min(w, v_r[k][g]) * v_r[k][g] for g, w in v_c[k].items())
            if n_c[k] != 0.0 and n_r[k] != 0.0:
                dot /= n_c[k] * n_r[k]
            val[k] = dot * penalty
        scores.append(float(val.mean()) * 10.0)
    return float(np.mean(scores))


DEFAULT_MATCH_RADIUS_PX = 16.0


def match_score(records: Sequence[PredictionRecord], radius_px: float = DEFAULT_MATCH_RADIUS_PX) -> float:
    """F1 x 100 over one-to-one matched predicted/ground-truth points.

    Matching minimizes total distance; a matched pair counts as a true
    positive iff it lies within radius_px.
    """
    tp = 0
    n_pred = 0
    n_truth = 0
    for r in records:
        if not r.pred_points and not r.truth_points:
            continue
        n_pred += len(r.pred_points)
        n_truth += len(r.truth_points)
        if not r.pred_points or not r.truth_points:
            continue
        pred = np.asarray(r.pred_points, dtype=float)
        truth = np.asarray(r.truth_points, dtype=float)
        cost = np.linalg.norm(pred[:, None, :] - truth[None, :, :], axis=2)
        rows, cols = linear_sum_assignment(cost)
        tp += int((cost[rows, cols] <= radius_px).sum())
    if n_pred == 0 and n_truth == 0:
        return 100.0
    if n_pred == 0 or n_truth == 0 or tp == 0:
        return 0.0
    prec = tp / n_pred
    rec = tp / n_truth
    return 100.0 * 2.0 * prec * rec / (prec + rec)


# ---------------------------------------------------------------------------
# Composite score

COMPOSITE_COMPONENTS = ("accuracy", "chatgpt", "bleu", "rouge_l", "cider", "match")

#: Calibrated so that published benchmark rows are reproduced: 40% on the
#: external score and 20% each on accuracy, match, and the mean of the
#: normalized language metrics (bleu average, rouge, cider/10).
DEFAULT_COMPOSITE_WEIGHTS = {
    "accuracy": 0.2,
    "chatgpt": 0.4,
    "bleu": 0.2 / 3.0,
    "rouge_l": 0.2 / 3.0,
    "cider": 0.2 / 3.0,
    "match": 0.2,
}


def normalized_components(report: MetricReport) -> dict[str, float]:
    """Every composite input folded onto a 0-1 scale."""
    comps = {
        "accuracy": report.accuracy,
        "bleu": (report.bleu1 + report.bleu2 + report.bleu3 + report.bleu4) / 4.0,
        "rouge_l": report.rouge_l,
        "cider": report.cider / 10.0,
        "match": report.match / 100.0,
    }
    if report.chatgpt is not None:
        comps["chatgpt"] = report.chatgpt / 100.0
    return comps


def composite(report: MetricReport, weights: Optional[dict] = None) -> float:
    weights = dict(weights) if weights is not None else dict(DEFAULT_COMPOSITE_WEIGHTS)
    unknown = set(weights) - set(COMPOSITE_COMPONENTS)
    if unknown:
        raise BadWeights(f"unknown components: {sorted(unknown)}")
    if any(w < 0 for w in weights.values()):
        raise BadWeights("weights must be non-negative")
    if abs(sum(weights.values()) - 1.0) > 1e-9:
        raise BadWeights(f"weights sum to {sum(weights.values())}, expected 1")
    comps = normalized_components(report)
    # an absent external score renormalizes the remaining weights
    active = {k: w for k, w in weights.items() if k in comps}
    total = sum(active.values())
    if total <= 0:
        raise BadWeights("no weight left on available components")
    return sum(w * comps[k] for k, w in active.items()) / total


def calibrate_weights(rows: Sequence[dict]) -> dict[str, float]:
    """Least-squares fit of composite weights to published (metrics, final)
    rows; each row is a MetricReport-style dict including "final"."""
    comps = []
    finals = []
    for row in rows:
        report = MetricReport(
            accuracy=row["accuracy"],
            bleu1=row["bleu1"], bleu2=row["bleu2"], bleu3=row["bleu3"], bleu4=row["bleu4"],
            rouge_l=row["rouge_l"], cider=row["cider"], match=row["match"],
            chatgpt=row.get("chatgpt"), final=0.0,
        )
        c = normalized_components(report)
        comps.append([c[k] for k in COMPOSITE_COMPONENTS])
        finals.append(row["final"])
    a = np.asarray(comps)
    b = np.asarray(finals)
    # constrain the weights to sum to 1 by eliminating the last one
    diff = a[:, :-1] - a[:, -1:]
    w_head, *_ = np.linalg.lstsq(diff, b - a[:, -1], rcond=None)
    w = np.append(w_head, 1.0 - w_head.sum())
    return dict(zip(COMPOSITE_COMPONENTS, (float(x) for x in w)))


# ---------------------------------------------------------------------------
# External scorer client

SCORER_URL_ENV = "EVALKIT_SCORER_URL"
SCORER_KEY_ENV = "EVALKIT_SCORER_KEY"
SCORER_TIMEOUT_ENV = "EVALKIT_SCORER_TIMEOUT_MS"

_SCORER_INSTRUCTION = (
    "Rate from 0 to 100 how well the predicted answer matches the ground "
    "truth answer for the given question. Reply with the integer only."
)


@dataclass(frozen=True)
class ScorerConfig:
    url: str
    key: str = ""
    timeout_ms: int = 10000
    attempts: int = 3
    backoff_s: float = 0.5
    max_in_flight: int = 4

    @classmethod
    def from_env(cls, env=os.environ) -> "ScorerConfig":
        url = env.get(SCORER_URL_ENV, "")
        if not url:
            raise EndpointUnreachable(f"{SCORER_URL_ENV} is not set")
        return cls(
            url=url,
            key=env.get(SCORER_KEY_ENV, ""),
            timeout_ms=int(env.get(SCORER_TIMEOUT_ENV, "10000")),
        )


def _default_post(cfg: ScorerConfig, payload: dict) -> str:
    import requests

    headers = {"Content-Type": "application/json"}
    if cfg.key:
        headers["Authorization"] = f"Bearer {cfg.key}"
    resp = requests.post(cfg.url, json=payload, headers=headers, timeout=cfg.timeout_ms / 1000.0)
    resp.raise_for_status()
    return resp.text


def _parse_score(body: str) -> int:
    """Accept either a bare integer or a JSON object with a "score" field."""
    text = body.strip()
    if text.startswith("{"):
        import json

        try:
            obj = json.loads(text)
            text = str(obj["score"]).strip()
        except (ValueError, KeyError, TypeError) as exc:
            raise MalformedResponse(body[:200]) from exc
    try:
        score = int(text)
    except ValueError as exc:
        raise MalformedResponse(body[:200]) from exc
    if not 0 <= score <= 100:
        raise MalformedResponse(f"score {score} outside 0..100")
    return score


def external_score(
    records: Sequence[PredictionRecord],
    cfg: ScorerConfig,
    post: Optional[Callable[[ScorerConfig, dict], str]] = None,
    sleep: Callable[[float], None] = time.sleep,
) -> tuple[dict[str, int], list[str]]:
    """Score every record through the external endpoint.

    Returns (scores by record id, ids whose responses were malformed).
    Failed records are absent from the scores, never fabricated. Raises
    EndpointUnreachable if a record cannot be reached after all retries.
    """
    post = post or _default_post

    def score_one(r: PredictionRecord) -> tuple[str, Optional[int], Optional[str]]:
        payload = {
            "question": r.question,
            "prediction": r.prediction,
            "reference": r.reference,
            "instruction": _SCORER_INSTRUCTION,
        }
        last_exc: Exception = EndpointUnreachable("no attempt made")
        for attempt in range(cfg.attempts):
            try:
                body = post(cfg, payload)
            except MalformedResponse:
                raise
            except Exception as exc:
                last_exc = exc
                if attempt + 1 < cfg.attempts:
                    sleep(cfg.backoff_s * 2**attempt)
                continue
            try:
                return r.record_id, _parse_score(body), None
            except MalformedResponse:
                return r.record_id, None, r.record_id
        raise EndpointUnreachable(f"{cfg.url}: {last_exc}") from last_exc

    scores: dict[str, int] = {}
    malformed: list[str] = []
    with ThreadPoolExecutor(max_workers=max(1, cfg.max_in_flight)) as pool:
        for record_id, score, bad in pool.map(score_one, records):
            if bad is not None:
                malformed.append(bad)
            else:
                scores[record_id] = score
    return scores, malformed


# ---------------------------------------------------------------------------
# Report assembly


def build_report(
    records: Sequence[PredictionRecord],
    weights: Optional[dict] = None,
    chatgpt_scores: Optional[dict[str, int]] = None,
    match_radius_px: float = DEFAULT_MATCH_RADIUS_PX,
) -> MetricReport:
    try:
        acc = accuracy(records)
    except NoCategoricalRecords:
        acc = 0.0
    chatgpt = None
    if chatgpt_scores:
        chatgpt = float(np.mean(list(chatgpt_scores.values())))
    report = MetricReport(
        accuracy=acc,
        bleu1=bleu_n(records, 1),
        bleu2=bleu_n(records, 2),
        bleu3=bleu_n(records, 3),
        bleu4=bleu_n(records, 4),
        rouge_l=rouge_l(records),
        cider=cider(records) if len(records) >= 2 else 0.0,
        match=match_score(records, match_radius_px),
        chatgpt=chatgpt,
        final=0.0,
    )
    return replace(report, final=composite(report, weights))


def report_to_record(report: MetricReport) -> dict:
    return {"kind": "metric_report", **report.as_dict()}


def report_from_record(d: dict) -> MetricReport:
    if d.get("kind") != "metric_report":
        raise ValueError("not a metric report record")
    return MetricReport(
        accuracy=d["accuracy"],
        bleu1=d["bleu1"], bleu2=d["bleu2"], bleu3=d["bleu3"], bleu4=d["bleu4"],
        rouge_l=d["rouge_l"], cider=d["cider"], match=d["match"],
        chatgpt=d.get("chatgpt"), final=d["final"],
    )


def format_table(report: MetricReport) -> str:
    """Aligned two-row table in the benchmark column order."""
    labels = {
        "accuracy": "Accuracy", "chatgpt": "ChatGPT", "bleu1": "Bleu 1",
        "bleu2": "Bleu 2", "bleu3": "Bleu 3", "bleu4": "Bleu 4",
        "rouge_l": "ROUGE L", "cider": "CIDEr", "match": "Match", "final": "Final",
    }
    d = report.as_dict()
    cols = [c for c in COLUMN_ORDER if c in d]
    cells = [f"{d[c]:.4f}" if c not in ("chatgpt", "match") else f"{d[c]:.2f}" for c in cols]
    widths = [max(len(labels[c]), len(v)) for c, v in zip(cols, cells)]
    header = "  ".join(labels[c].rjust(w) for c, w in zip(cols, widths))
    row = "  ".join(v.rjust(w) for v, w in zip(cells, widths))
    return header + "\n" + row
