"""Pure-Python kernels. Reference semantics for the compiled module."""
from __future__ import annotations

import re

_SPECIAL = re.compile(r'["(){}\[\],]')
_STRING_BODY = re.compile(r'(?:[^"\\]|\\.)*"')


def scan_args(text: str, pos: int = 0) -> tuple[list[str], int]:
    """Split an strace argument list starting at ``pos``.

    Splits on commas at nesting depth zero, honoring double-quoted strings
    (with backslash escapes) and ``()``, ``{}``, ``[]`` nesting. Scanning stops
    at the first unmatched ``)``.

    Returns the stripped argument substrings and the index of the closing
    parenthesis, or -1 when the text ended first (an unfinished call).
    """
    pieces: list[str] = []
    depth = 0
    start = pos
    i = pos
    n = len(text)
    search = _SPECIAL.search
    while i < n:
        m = search(text, i)
        if m is None:
            break
        j = m.start()
        c = text[j]
        if c == '"':
            s = _STRING_BODY.match(text, j + 1)
            if s is None:
                # unterminated string literal runs to end of text
                i = n
                break
            i = s.end()
            continue
        if c == ",":
            if depth == 0:
                pieces.append(text[start:j].strip())
                start = j + 1
        elif c in "({[":
            depth += 1
        elif c == ")" and depth == 0:
            last = text[start:j].strip()
            if last or pieces:
                pieces.append(last)
            return pieces, j
        elif depth > 0:
            depth -= 1
        i = j + 1
    last = text[start:].strip()
    if last:
        pieces.append(last)
    return pieces, -1


def find_embedding(
    labels_a: list[int],
    adj_a: bytes,
    labels_b: list[int],
    adj_b: bytes,
    order: list[int],
    induced: bool,
) -> list[int] | None:
    """Backtracking search for a label- and edge-kind-preserving map a -> b.

    ``adj_*`` are row-major ``n*n`` byte matrices holding an edge-kind bitmask
    per ordered node pair. With ``induced`` the map must be a bijection whose
    kind masks agree on every pair (isomorphism); otherwise it is an injection
    where every pattern kind bit must be present in the target (monomorphism).
    ``order`` is the pattern visiting order. Returns ``mapping[u] = v`` or None.
    """
    na = len(labels_a)
    nb = len(labels_b)
    if na == 0:
        return []
    if na > nb or (induced and na != nb):
        return None

    out_a = [sum(1 for w in range(na) if adj_a[u * na + w]) for u in range(na)]
    in_a = [sum(1 for w in range(na) if adj_a[w * na + u]) for u in range(na)]
    out_b = [sum(1 for w in range(nb) if adj_b[v * nb + w]) for v in range(nb)]
    in_b = [sum(1 for w in range(nb) if adj_b[w * nb + v]) for v in range(nb)]

    candidates: list[list[int]] = []
    for u in range(na):
        lu, ou, iu = labels_a[u], out_a[u], in_a[u]
        if induced:
            cand = [v for v in range(nb) if labels_b[v] == lu and out_b[v] == ou and in_b[v] == iu]
        else:
            cand = [v for v in range(nb) if labels_b[v] == lu and out_b[v] >= ou and in_b[v] >= iu]
        if not cand:
            return None
        candidates.append(cand)

    mapping = [-1] * na
    used = [False] * nb

    def feasible(depth: int, u: int, v: int) -> bool:
        for k in range(depth):
            w = order[k]
            fw = mapping[w]
            ka = adj_a[u * na + w]
            kb = adj_b[v * nb + fw]
            ra = adj_a[w * na + u]
            rb = adj_b[fw * nb + v]
            if induced:
                if ka != kb or ra != rb:
                    return False
            elif (ka & ~kb) or (ra & ~rb):
                return False
        return True

    def extend(depth: int) -> bool:
        if depth == na:
            return True
        u = order[depth]
        for v in candidates[u]:
            if used[v] or not feasible(depth, u, v):
                continue
            mapping[u] = v
            used[v] = True
            if extend(depth + 1):
                return True
            used[v] = False
            mapping[u] = -1
        return False

    if extend(0):
        return list(mapping)
    return None
