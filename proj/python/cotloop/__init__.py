# Copyright 2026 The cotloop Authors
# SPDX-License-Identifier: Apache-2.0
"""Python access to the cotloop core: answer handling, partitioning,
near-duplicate removal, exam scoring and the command line."""

import json as _json

from . import _cotloop
from ._cotloop import CotloopError, normalize_answer, stem_similarity

__all__ = [
    "CotloopError",
    "normalize_answer",
    "stem_similarity",
    "make_question",
    "verify",
    "extract_answer",
    "dedup",
    "partition",
    "score",
    "leakage_gap",
    "run_cli",
]


def make_question(stem, options, answer, **meta):
    """Builds a validated question dict. `options` maps letters to text."""
    spec = {"stem": stem, "options": dict(options), "answer": answer, **meta}
    return _json.loads(_cotloop.make_question(_json.dumps(spec, ensure_ascii=False)))


def verify(candidate, truth, format="mcq_single"):
    return _cotloop.verify(candidate, truth, format)


def extract_answer(response, question):
    return _cotloop.extract_answer(response, _json.dumps(question, ensure_ascii=False))


def dedup(questions, threshold=0.9):
    """Ids of the questions kept, in input order."""
    return _cotloop.dedup(_json.dumps(list(questions), ensure_ascii=False), threshold)


def partition(questions, k, strategy="stratified_by_subject", seed=0):
    """K lists of question ids."""
    return _cotloop.partition(_json.dumps(list(questions), ensure_ascii=False), k, strategy, seed)


def score(correct, total):
    """Percentage string rounded half to even, e.g. score(90, 150) == "60.00"."""
    return _cotloop.score(correct, total)


def leakage_gap(old_score, new_score):
    return _cotloop.leakage_gap(str(old_score), str(new_score))


def run_cli(*args):
    """Runs the command line in-process; returns (exit_code, stdout, stderr)."""
    return _cotloop.run_cli([str(a) for a in args])
