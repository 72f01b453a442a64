"""On-disk formats: responses (CSV), bank/posterior/config (JSON), trace (JSONL).

Parsers reject rather than coerce: unknown concept names, out-of-range
probabilities, non-integer counts, and duplicate rows are hard errors
carrying line or record positions. All writes go through a temp file in
the target directory followed by an atomic rename, so interrupted runs
never leave truncated artifacts.
"""

from __future__ import annotations

import csv
import json
import math
import os
import tempfile
from contextlib import contextmanager
from dataclasses import asdict
from typing import Any

import numpy as np

from .curriculum import SelectionResult
from .irt import QuestionBank, ResponseMatrix
from .simulate import EpochRecord, SimConfig
from .vi import FitReport, PosteriorParams

RESPONSE_HEADER = ["snapshot_id", "question_id", "correct"]


class FileFormatError(ValueError):
    """Input file failed validation; message carries the offending position."""


@contextmanager
def atomic_write(path: str):
    """Yield a text handle on a temp file, atomically renamed to path on success."""
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix="~")
    try:
        umask = os.umask(0)
        os.umask(umask)
        os.fchmod(fd, 0o666 & ~umask)
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as handle:
            yield handle
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


# ---------------------------------------------------------------------------
# responses: plain CSV, one observation per row


def load_responses(path: str, bank: QuestionBank) -> ResponseMatrix:
    """Parse a response CSV and cross-reference question ids against the bank."""
    snapshots: list[int] = []
    questions: list[int] = []
    correct: list[bool] = []
    seen: set[tuple[int, int]] = set()
    with open(path, newline="", encoding="utf-8") as handle:
        reader = csv.reader(handle)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != RESPONSE_HEADER:
            raise FileFormatError(
                f"{path}:1: header must be exactly {','.join(RESPONSE_HEADER)}"
            )
        for lineno, row in enumerate(reader, start=2):
            if not row or (len(row) == 1 and not row[0].strip()):
                continue
            if len(row) != 3:
                raise FileFormatError(f"{path}:{lineno}: expected 3 fields, got {len(row)}")
            snap_text, qid, corr_text = (f.strip() for f in row)
            try:
                snap = int(snap_text)
            except ValueError:
                raise FileFormatError(
                    f"{path}:{lineno}: snapshot_id must be an integer, got {snap_text!r}"
                ) from None
            if snap < 0:
                raise FileFormatError(f"{path}:{lineno}: snapshot_id must be non-negative")
            try:
                j = bank.index_of(qid)
            except KeyError:
                raise FileFormatError(
                    f"{path}:{lineno}: unknown question id {qid!r}"
                ) from None
            if corr_text not in ("0", "1"):
                raise FileFormatError(
                    f"{path}:{lineno}: correct must be 0 or 1, got {corr_text!r}"
                )
            if (snap, j) in seen:
                raise FileFormatError(
                    f"{path}:{lineno}: duplicate response for snapshot {snap}, "
                    f"question {qid!r}"
                )
            seen.add((snap, j))
            snapshots.append(snap)
            questions.append(j)
            correct.append(corr_text == "1")
    return ResponseMatrix(0, snapshots, questions, correct)


def save_responses(path: str, responses: ResponseMatrix, bank: QuestionBank) -> None:
    with atomic_write(path) as handle:
        writer = csv.writer(handle)
        writer.writerow(RESPONSE_HEADER)
        for snap, j, corr in zip(responses.snapshots, responses.questions, responses.correct):
            writer.writerow([int(snap), bank.question_ids[j], int(corr)])


# ---------------------------------------------------------------------------
# bank: JSON document with a concept vocabulary block up front


def load_bank(path: str) -> QuestionBank:
    """Parse a bank file.

    Guessing probability per question: the explicit guess_prob field if
    present; otherwise 0.5 for question_type "binary"; otherwise
    1/size from the top-level type_vocab_sizes map; otherwise 0.
    """
    doc = _load_json(path)
    if not isinstance(doc, dict):
        raise FileFormatError(f"{path}: bank must be a JSON object")
    concepts = doc.get("concepts")
    if not isinstance(concepts, list) or not all(isinstance(c, str) for c in concepts):
        raise FileFormatError(f"{path}: 'concepts' must be a list of names")
    vocab_sizes = doc.get("type_vocab_sizes", {})
    if not isinstance(vocab_sizes, dict):
        raise FileFormatError(f"{path}: 'type_vocab_sizes' must be an object")
    for t, size in vocab_sizes.items():
        if not isinstance(size, int) or isinstance(size, bool) or size < 2:
            raise FileFormatError(
                f"{path}: type_vocab_sizes[{t!r}] must be an integer >= 2"
            )
    questions = doc.get("questions")
    if not isinstance(questions, list) or not questions:
        raise FileFormatError(f"{path}: 'questions' must be a non-empty list")
    extra = set(doc) - {"concepts", "questions", "type_vocab_sizes"}
    if extra:
        raise FileFormatError(f"{path}: unknown top-level keys {sorted(extra)}")

    index = {name: k for k, name in enumerate(concepts)}
    ids: list[str] = []
    counts = np.zeros((len(questions), len(concepts)), dtype=np.int64)
    guess = np.zeros(len(questions))
    for pos, q in enumerate(questions):
        where = f"{path}: questions[{pos}]"
        if not isinstance(q, dict):
            raise FileFormatError(f"{where}: must be an object")
        extra = set(q) - {"question_id", "concepts", "question_type", "guess_prob"}
        if extra:
            raise FileFormatError(f"{where}: unknown keys {sorted(extra)}")
        qid = q.get("question_id")
        if not isinstance(qid, str) or not qid:
            raise FileFormatError(f"{where}: question_id must be a non-empty string")
        qconcepts = q.get("concepts")
        if not isinstance(qconcepts, dict) or not qconcepts:
            raise FileFormatError(f"{where} ({qid}): 'concepts' must be a non-empty map")
        for name, count in qconcepts.items():
            if name not in index:
                raise FileFormatError(f"{where} ({qid}): unknown concept {name!r}")
            if not isinstance(count, int) or isinstance(count, bool) or count < 1:
                raise FileFormatError(
                    f"{where} ({qid}): count for {name!r} must be a positive integer"
                )
            counts[pos, index[name]] = count
        qtype = q.get("question_type")
        if qtype is not None and not isinstance(qtype, str):
            raise FileFormatError(f"{where} ({qid}): question_type must be a string")
        if "guess_prob" in q:
            g = q["guess_prob"]
            if not isinstance(g, (int, float)) or isinstance(g, bool) or not 0.0 <= g < 1.0:
                raise FileFormatError(f"{where} ({qid}): guess_prob must lie in [0, 1)")
            guess[pos] = float(g)
        elif qtype == "binary":
            guess[pos] = 0.5
        elif qtype is not None and qtype in vocab_sizes:
            guess[pos] = 1.0 / vocab_sizes[qtype]
        else:
            guess[pos] = 0.0
        if qid in ids:
            raise FileFormatError(f"{where}: duplicate question_id {qid!r}")
        ids.append(qid)
    try:
        return QuestionBank(concepts, ids, counts, guess)
    except ValueError as exc:
        raise FileFormatError(f"{path}: {exc}") from None


def save_bank(path: str, bank: QuestionBank) -> None:
    doc = {
        "concepts": list(bank.concept_names),
        "questions": [
            {
                "question_id": bank.question_ids[j],
                "concepts": {
                    bank.concept_names[c]: int(count)
                    for c, count in enumerate(bank.concept_counts[j])
                    if count > 0
                },
                "guess_prob": float(bank.guess_probs[j]),
            }
            for j in range(bank.num_questions)
        ],
    }
    with atomic_write(path) as handle:
        json.dump(doc, handle, indent=2)
        handle.write("\n")


# ---------------------------------------------------------------------------
# posterior: JSON document mirroring the factor grids


def _log_preimage(stddev: float) -> float:
    """The log whose exp reproduces stddev bit-for-bit when one exists.

    exp(log(s)) can land one ulp off s; probing the neighbors keeps a
    load/save cycle byte-identical.
    """
    t = math.log(stddev)
    if math.exp(t) == stddev:
        return t
    for cand in (math.nextafter(t, math.inf), math.nextafter(t, -math.inf)):
        if math.exp(cand) == stddev:
            return cand
    return t


def save_posterior(
    path: str,
    post: PosteriorParams,
    concept_names: list[str],
    report: FitReport | None = None,
) -> None:
    if len(concept_names) != post.num_concepts:
        raise ValueError("concept_names must match the posterior's concept count")
    doc = {
        "concepts": [
            {
                "name": concept_names[c],
                "difficulty_mean": float(post.b_mean[c]),
                "difficulty_stddev": float(np.exp(post.b_log_std[c])),
            }
            for c in range(post.num_concepts)
        ],
        "snapshots": [
            {
                "snapshot_id": i,
                "competences": [
                    {
                        "name": concept_names[c],
                        "mean": float(post.theta_mean[i, c]),
                        "stddev": float(np.exp(post.theta_log_std[i, c])),
                    }
                    for c in range(post.num_concepts)
                ],
            }
            for i in range(post.num_snapshots)
        ],
        "fit": {
            "elbo_final": float(report.elbo_trace[-1]) if report and report.iterations_run else None,
            "iterations": report.iterations_run if report else None,
            "converged": report.converged if report else None,
        },
    }
    with atomic_write(path) as handle:
        json.dump(doc, handle, indent=2)
        handle.write("\n")


def load_posterior(path: str) -> tuple[PosteriorParams, list[str], dict]:
    """Returns (posterior, concept_names, fit_metadata)."""
    doc = _load_json(path)
    if not isinstance(doc, dict) or "concepts" not in doc or "snapshots" not in doc:
        raise FileFormatError(f"{path}: posterior must contain 'concepts' and 'snapshots'")
    names: list[str] = []
    b_mean: list[float] = []
    b_log_std: list[float] = []
    for pos, entry in enumerate(doc["concepts"]):
        try:
            names.append(str(entry["name"]))
            b_mean.append(_finite(entry["difficulty_mean"]))
            b_log_std.append(_log_preimage(_positive(entry["difficulty_stddev"])))
        except (KeyError, TypeError, ValueError) as exc:
            raise FileFormatError(f"{path}: concepts[{pos}]: {exc}") from None
    if len(set(names)) != len(names) or not names:
        raise FileFormatError(f"{path}: concept names must be unique and non-empty")

    snapshots = doc["snapshots"]
    theta_mean = np.zeros((len(snapshots), len(names)))
    theta_log_std = np.zeros((len(snapshots), len(names)))
    for pos, snap in enumerate(snapshots):
        where = f"{path}: snapshots[{pos}]"
        if snap.get("snapshot_id") != pos:
            raise FileFormatError(f"{where}: snapshot_id must be {pos}, in order")
        comps = snap.get("competences", [])
        if [c.get("name") for c in comps] != names:
            raise FileFormatError(f"{where}: competences must list every concept in order")
        for c, comp in enumerate(comps):
            try:
                theta_mean[pos, c] = _finite(comp["mean"])
                theta_log_std[pos, c] = _log_preimage(_positive(comp["stddev"]))
            except (KeyError, TypeError, ValueError) as exc:
                raise FileFormatError(f"{where}: {names[c]}: {exc}") from None

    post = PosteriorParams(theta_mean, theta_log_std, np.array(b_mean), np.array(b_log_std))
    return post, names, doc.get("fit", {})


# ---------------------------------------------------------------------------
# simulation config and trace


def load_simulation_spec(path: str) -> tuple[SimConfig, "CurriculumConfig", "FitConfig"]:
    """Parse a simulation config with optional sim / curriculum / fit sections.

    Absent sections and fields fall back to defaults; the default
    curriculum bounds are (-5, -0.75) in log scale. Unknown keys are
    rejected.
    """
    from .curriculum import CurriculumConfig
    from .vi import FitConfig

    doc = _load_json(path)
    if not isinstance(doc, dict):
        raise FileFormatError(f"{path}: simulation config must be a JSON object")
    extra = set(doc) - {"sim", "curriculum", "fit"}
    if extra:
        raise FileFormatError(
            f"{path}: unknown top-level keys {sorted(extra)} "
            "(expected sections: sim, curriculum, fit)"
        )

    def build(cls, section: str, defaults: dict):
        fields = dict(defaults)
        given = doc.get(section, {})
        if not isinstance(given, dict):
            raise FileFormatError(f"{path}: section {section!r} must be an object")
        unknown = set(given) - set(cls.__dataclass_fields__)
        if unknown:
            raise FileFormatError(f"{path}: unknown {section} keys {sorted(unknown)}")
        fields.update(given)
        try:
            return cls(**fields)
        except (TypeError, ValueError) as exc:
            raise FileFormatError(f"{path}: {section}: {exc}") from None

    sim_fields = dict(doc.get("sim", {}))
    if sim_fields.get("explicit_difficulties") is not None:
        sim_fields["explicit_difficulties"] = tuple(
            float(v) for v in sim_fields["explicit_difficulties"]
        )
        doc = dict(doc)
        doc["sim"] = sim_fields
    sim = build(SimConfig, "sim", {})
    curriculum = build(CurriculumConfig, "curriculum", {"lb_log": -5.0, "ub_log": -0.75})
    fit = build(FitConfig, "fit", {})
    return sim, curriculum, fit


def trace_line(record: EpochRecord) -> str:
    return json.dumps(asdict(record), sort_keys=True, separators=(",", ":"))


def load_trace(path: str) -> list[dict[str, Any]]:
    records = []
    with open(path, encoding="utf-8") as handle:
        for lineno, line in enumerate(handle, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                records.append(json.loads(line))
            except json.JSONDecodeError as exc:
                raise FileFormatError(f"{path}:{lineno}: invalid JSON record: {exc}") from None
    return records


def save_selection(path: str, result: SelectionResult, bank: QuestionBank) -> None:
    """Selected ids one per line, plus a sidecar .stats.json record."""
    with atomic_write(path) as handle:
        for qid in result.selected:
            handle.write(qid + "\n")
    totals = bank.total_concepts
    stats = {
        "count": len(result.selected),
        "mean_concept_count": (
            float(np.mean([totals[bank.index_of(q)] for q in result.selected]))
            if result.selected
            else None
        ),
        "stage": result.stage,
        "excluded_below": result.excluded_below,
        "excluded_above": result.excluded_above,
    }
    with atomic_write(path + ".stats.json") as handle:
        json.dump(stats, handle, indent=2)
        handle.write("\n")


def _load_json(path: str):
    with open(path, encoding="utf-8") as handle:
        try:
            return json.load(handle)
        except json.JSONDecodeError as exc:
            raise FileFormatError(f"{path}:{exc.lineno}: invalid JSON: {exc.msg}") from None


def _finite(value) -> float:
    v = float(value)
    if not math.isfinite(v):
        raise ValueError(f"value must be finite, got {value!r}")
    return v


def _positive(value) -> float:
    v = _finite(value)
    if v <= 0:
        raise ValueError(f"value must be positive, got {value!r}")
    return v
