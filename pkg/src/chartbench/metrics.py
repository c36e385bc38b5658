"""Chart-to-table and chart-QA scoring.

Table metrics treat a table as an unordered set of ``(row, column, value)``
entities. Predicted and gold entities are paired by a minimum-cost matching
on the normalized edit distance of their ``row + column`` keys; RD then
scores only the relative distance of the matched numeric values, while RMS
multiplies key similarity by value similarity.

Scores are accumulated with exact rational arithmetic and rounded to float
once, so hand-computed expectations such as ``0.9`` compare equal.
"""
from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass
from decimal import Decimal
from fractions import Fraction
from typing import Optional, Sequence

import numpy as np

from . import _kernels
from .table import EntityMapping, Table, parse_decimal, to_entity_mappings

DEFAULT_TAU = 0.5
DEFAULT_THETA = 1.0
DEFAULT_TOL = 0.05
BLEU_EPSILON = 1e-9

# reduced-cost slack under which an edge is treated as tight
_TIGHT_EPS = 1e-10

__all__ = [
    "DEFAULT_TAU",
    "DEFAULT_THETA",
    "DEFAULT_TOL",
    "LengthMismatch",
    "MatchResult",
    "ScoreTriple",
    "corpus_bleu",
    "entity_similarity",
    "levenshtein",
    "minimal_cost_matching",
    "normalized_levenshtein",
    "relative_distance",
    "relaxed_accuracy",
    "rd_scores",
    "rms_scores",
]


class LengthMismatch(ValueError):
    pass


@dataclass(frozen=True)
class ScoreTriple:
    precision: float
    recall: float
    f1: float

    @classmethod
    def from_pr(cls, precision, recall) -> "ScoreTriple":
        p, r = Fraction(precision), Fraction(recall)
        f1 = 2 * p * r / (p + r) if p + r > 0 else Fraction(0)
        return cls(float(p), float(r), float(f1))

    def as_dict(self) -> dict:
        return {"precision": self.precision, "recall": self.recall, "f1": self.f1}


@dataclass(frozen=True)
class MatchResult:
    assignment: list
    cost_matrix: np.ndarray
    total_cost: float


# ---------------------------------------------------------------------------
# distances


def levenshtein(a: str, b: str) -> int:
    """Unit-cost edit distance (insert, delete, substitute)."""
    return _kernels.levenshtein(a, b)


def _nl_exact(a: str, b: str, tau) -> Fraction:
    longest = max(len(a), len(b))
    if longest == 0:
        return Fraction(0)
    nl = Fraction(levenshtein(a, b), longest)
    return nl if nl <= _to_fraction(tau) else Fraction(1)


def normalized_levenshtein(a: str, b: str, tau: float = DEFAULT_TAU) -> float:
    """Edit distance over the longer length; snapped to 1 when above ``tau``."""
    return float(_nl_exact(a, b, tau))


def _to_fraction(x) -> Fraction:
    if isinstance(x, float):
        # floats go through their shortest repr so 0.1 means one tenth
        return Fraction(Decimal(repr(x)))
    return Fraction(x)


def _rel_exact(p: Fraction, t: Fraction, theta) -> Fraction:
    if t == 0:
        d = Fraction(0) if p == 0 else Fraction(1)
    else:
        d = min(Fraction(1), abs(p - t) / abs(t))
    return d if d <= _to_fraction(theta) else Fraction(1)


def relative_distance(p, t, theta: float = DEFAULT_THETA) -> float:
    """``min(1, |p - t| / |t|)``, snapped to 1 when above ``theta``."""
    return float(_rel_exact(_to_fraction(p), _to_fraction(t), theta))


def _exact_value(mapping: EntityMapping) -> Optional[Fraction]:
    d = parse_decimal(mapping.value.raw)
    return None if d is None else Fraction(d)


def _value_similarity(p: EntityMapping, t: EntityMapping, tau, theta) -> Fraction:
    pv, tv = _exact_value(p), _exact_value(t)
    if pv is not None and tv is not None:
        return 1 - _rel_exact(pv, tv, theta)
    if pv is None and tv is None:
        return 1 - _nl_exact(p.value.raw, t.value.raw, tau)
    return Fraction(0)


def _entity_similarity_exact(p, t, tau, theta) -> Fraction:
    key = 1 - _nl_exact(p.key, t.key, tau)
    if key == 0:
        return key
    return key * _value_similarity(p, t, tau, theta)


def entity_similarity(
    p: EntityMapping,
    t: EntityMapping,
    tau: float = DEFAULT_TAU,
    theta: float = DEFAULT_THETA,
) -> float:
    """Key similarity times value similarity for one pair of entities.

    Numeric values use the relative distance; two non-numeric values use
    the normalized edit distance of their text; a numeric value against a
    non-numeric one scores 0.
    """
    return float(_entity_similarity_exact(p, t, tau, theta))


# ---------------------------------------------------------------------------
# assignment


def _lexicographic_optimum(tight: np.ndarray, col_of_row) -> list[int]:
    """Smallest row-major assignment among perfect matchings of ``tight``.

    Every perfect matching of the equality subgraph of an optimal dual is
    optimal, so this picks the lexicographically first optimal assignment.
    """
    n = tight.shape[0]
    adj = [np.flatnonzero(tight[i]).tolist() for i in range(n)]
    match_r = [int(c) for c in col_of_row]
    match_c = [0] * n
    for r, c in enumerate(match_r):
        match_c[c] = r
    fixed = [False] * n

    for i in range(n):
        for j in adj[i]:
            if match_r[i] == j:
                break
            r = match_c[j]
            if fixed[r]:
                continue
            path = _reroute(r, match_r[i], j, adj, match_c, fixed)
            if path is None:
                continue
            rows, cols = path
            match_r[i], match_c[j] = j, i
            for row, col in zip(rows, cols):
                match_r[row], match_c[col] = col, row
            break
        fixed[i] = True
    return match_r


def _reroute(start, target, banned, adj, match_c, fixed):
    # alternating path from the displaced row ``start`` to the freed column
    seen = {banned}
    stack = [(start, iter(adj[start]))]
    via: list[int] = []
    while stack:
        row, it = stack[-1]
        for c in it:
            if c in seen:
                continue
            seen.add(c)
            if c == target:
                return [s[0] for s in stack], via + [c]
            owner = match_c[c]
            if fixed[owner]:
                continue
            via.append(c)
            stack.append((owner, iter(adj[owner])))
            break
        else:
            stack.pop()
            if via:
                via.pop()
    return None


def minimal_cost_matching(cost) -> MatchResult:
    """Exact minimum-cost injective matching of size ``min(N, M)``.

    Rectangular inputs are padded to square with cost 1; padded pairs are
    dropped from the result. Among optimal matchings the one whose
    ``(pred_index, truth_index)`` pairs sort first is returned.
    """
    cost = np.asarray(cost, dtype=np.float64)
    if cost.ndim != 2:
        raise ValueError("cost must be a 2-D matrix")
    n_pred, n_truth = cost.shape
    if n_pred == 0 or n_truth == 0:
        return MatchResult([], cost, 0.0)
    if not np.all((cost >= 0.0) & (cost <= 1.0)):
        raise ValueError("cost entries must lie in [0, 1]")

    n = max(n_pred, n_truth)
    padded = np.ones((n, n))
    padded[:n_pred, :n_truth] = cost
    col_of_row, u, v = _kernels.solve_lsa(padded)
    reduced = padded - u[:, None] - v[None, :]
    tight = reduced <= _TIGHT_EPS
    tight[np.arange(n), col_of_row] = True
    cols = _lexicographic_optimum(tight, col_of_row)
    rows = np.arange(n)
    if math.fsum(padded[rows, cols]) > math.fsum(padded[rows, col_of_row]):
        # a near-tie inside the slack was not a true tie
        cols = [int(c) for c in col_of_row]

    assignment = [(i, cols[i]) for i in range(n_pred) if cols[i] < n_truth]
    total = math.fsum(cost[i, j] for i, j in assignment)
    return MatchResult(assignment, cost, total)


# ---------------------------------------------------------------------------
# table metrics


def _key_matching(preds, truths, tau) -> MatchResult:
    cost = _kernels.nl_matrix(
        [p.key for p in preds], [t.key for t in truths], float(tau)
    )
    return minimal_cost_matching(cost)


def _triple(total: Fraction, n_pred: int, n_truth: int) -> ScoreTriple:
    if n_pred == 0 and n_truth == 0:
        return ScoreTriple(1.0, 1.0, 1.0)
    precision = total / n_pred if n_pred else Fraction(0)
    recall = total / n_truth if n_truth else Fraction(0)
    return ScoreTriple.from_pr(precision, recall)


def rd_scores(
    P: Table,
    T: Table,
    theta: float = DEFAULT_THETA,
    tau: float = DEFAULT_TAU,
) -> ScoreTriple:
    """Relative Distance precision/recall/F1 over numeric entities.

    Entities are paired by key distance; each matched pair earns
    ``1 - D_theta`` and unmatched entities earn nothing, so
    ``precision = sum / N`` and ``recall = sum / M``.
    """
    preds = [e for e in to_entity_mappings(P) if e.value.is_numeric]
    truths = [e for e in to_entity_mappings(T) if e.value.is_numeric]
    match = _key_matching(preds, truths, tau)
    total = sum(
        (
            1 - _rel_exact(_exact_value(preds[i]), _exact_value(truths[j]), theta)
            for i, j in match.assignment
        ),
        Fraction(0),
    )
    return _triple(total, len(preds), len(truths))


def rms_scores(
    P: Table,
    T: Table,
    tau: float = DEFAULT_TAU,
    theta: float = DEFAULT_THETA,
) -> ScoreTriple:
    """Relative Mapping Similarity over all entities."""
    preds = to_entity_mappings(P)
    truths = to_entity_mappings(T)
    match = _key_matching(preds, truths, tau)
    total = sum(
        (
            _entity_similarity_exact(preds[i], truths[j], tau, theta)
            for i, j in match.assignment
        ),
        Fraction(0),
    )
    return _triple(total, len(preds), len(truths))


# ---------------------------------------------------------------------------
# QA metrics


def relaxed_accuracy(pred: str, gold: str, tol: float = DEFAULT_TOL) -> bool:
    """Numeric answers within ``tol`` relative error of gold, else exact text."""
    p, g = parse_decimal(pred), parse_decimal(gold)
    if p is not None and g is not None:
        return abs(p - g) <= Decimal(repr(tol)) * abs(g)
    return pred.strip().casefold() == gold.strip().casefold()


def _ngrams(tokens: Sequence[str], n: int) -> Counter:
    return Counter(tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1))


def corpus_bleu(
    candidates: Sequence[str], references: Sequence[str], max_n: int = 4
) -> float:
    """Corpus BLEU-4 against a single reference per candidate.

    Tokens are whitespace-split after case folding. Zero clipped counts are
    replaced by ``1e-9`` before taking logs.
    """
    if len(candidates) != len(references):
        raise LengthMismatch(
            f"{len(candidates)} candidates vs {len(references)} references"
        )
    matched = [0] * max_n
    totals = [0] * max_n
    cand_len = ref_len = 0
    for cand, ref in zip(candidates, references):
        c_tok = cand.casefold().split()
        r_tok = ref.casefold().split()
        cand_len += len(c_tok)
        ref_len += len(r_tok)
        for n in range(1, max_n + 1):
            c_counts = _ngrams(c_tok, n)
            r_counts = _ngrams(r_tok, n)
            matched[n - 1] += sum(min(k, r_counts[g]) for g, k in c_counts.items())
            totals[n - 1] += max(len(c_tok) - n + 1, 0)
    if cand_len == 0:
        return 0.0
    log_p = 0.0
    for m, t in zip(matched, totals):
        p = m / t if m > 0 else BLEU_EPSILON / max(t, 1)
        log_p += math.log(p) / max_n
    bp = 1.0 if cand_len > ref_len else math.exp(1.0 - ref_len / cand_len)
    return bp * math.exp(log_p)
