"""String-similarity primitives used by the feature families.

All functions operate on Unicode code points; no language-specific
preprocessing is applied because the data is multilingual.
"""

from __future__ import annotations

import re

_TOKEN_RE = re.compile(r"[^\W_]+", re.UNICODE)  # maximal alphanumeric runs


def levenshtein(a: str, b: str) -> int:
    """Edit distance between two strings (insert/delete/substitute, unit cost)."""
    if a == b:
        return 0
    if not a:
        return len(b)
    if not b:
        return len(a)
    if len(a) < len(b):  # keep the row as short as possible
        a, b = b, a
    row = list(range(len(b) + 1))
    for i, ca in enumerate(a, start=1):
        prev_diag = row[0]
        row[0] = i
        for j, cb in enumerate(b, start=1):
            cost = prev_diag if ca == cb else prev_diag + 1
            prev_diag = row[j]
            row[j] = min(row[j] + 1, row[j - 1] + 1, cost)
    return row[-1]


def nld(a: str, b: str) -> float:
    """Normalized Levenshtein distance: edit distance over the longer length.

    Lies in [0, 1].  Two empty strings are defined to be at distance 0
    (an attribute absent on both sides carries no change signal).
    """
    longest = max(len(a), len(b))
    if longest == 0:
        return 0.0
    return levenshtein(a, b) / longest


def longest_common_substring(a: str, b: str) -> tuple[int, float]:
    """Length of the longest contiguous common run, plus that length
    normalized by the longer input's length.  Both empty -> (0, 0.0)."""
    longest = max(len(a), len(b))
    if not a or not b:
        return 0, 0.0
    if len(a) < len(b):
        a, b = b, a
    best = 0
    prev = [0] * (len(b) + 1)
    for ca in a:
        cur = [0] * (len(b) + 1)
        for j, cb in enumerate(b, start=1):
            if ca == cb:
                cur[j] = prev[j - 1] + 1
                if cur[j] > best:
                    best = cur[j]
        prev = cur
    return best, best / longest


def tokenize(text: str) -> list[str]:
    """Lowercased maximal runs of letters/digits (underscore excluded)."""
    return [t.casefold() for t in _TOKEN_RE.findall(text)]


def token_overlap(a: str, b: str) -> tuple[int, float]:
    """Common-token count and Jaccard coefficient of the two token sets.

    Jaccard is 0 when both token sets are empty.
    """
    ta, tb = set(tokenize(a)), set(tokenize(b))
    union = ta | tb
    if not union:
        return 0, 0.0
    common = len(ta & tb)
    return common, common / len(union)
