# cython: language_level=3, boundscheck=False, wraparound=False
"""Compiled kernels. Same contracts as ``_pykernels``."""

from libc.stdlib cimport malloc, calloc, free


def scan_args(str text, Py_ssize_t pos=0):
    cdef list pieces = []
    cdef Py_ssize_t n = len(text)
    cdef Py_ssize_t i = pos
    cdef Py_ssize_t start = pos
    cdef Py_ssize_t depth = 0
    cdef Py_UCS4 c
    cdef str last
    while i < n:
        c = text[i]
        if c == u'"':
            i += 1
            while i < n:
                c = text[i]
                if c == u'\\':
                    i += 2
                    continue
                if c == u'"':
                    break
                i += 1
            if i >= n:
                i = n
                break
        elif c == u',':
            if depth == 0:
                pieces.append(text[start:i].strip())
                start = i + 1
        elif c == u'(' or c == u'{' or c == u'[':
            depth += 1
        elif c == u')':
            if depth == 0:
                last = text[start:i].strip()
                if last or pieces:
                    pieces.append(last)
                return pieces, i
            depth -= 1
        elif c == u'}' or c == u']':
            if depth > 0:
                depth -= 1
        i += 1
    last = text[start:].strip()
    if last:
        pieces.append(last)
    return pieces, -1


cdef struct Search:
    int na
    int nb
    bint induced
    const unsigned char* adj_a
    const unsigned char* adj_b
    int* order
    int* mapping
    char* used
    int* cand
    int* cand_len


cdef bint _feasible(Search* s, int depth, int u, int v) nogil:
    cdef int k, w, fw
    cdef unsigned char ka, kb, ra, rb
    for k in range(depth):
        w = s.order[k]
        fw = s.mapping[w]
        ka = s.adj_a[u * s.na + w]
        kb = s.adj_b[v * s.nb + fw]
        ra = s.adj_a[w * s.na + u]
        rb = s.adj_b[fw * s.nb + v]
        if s.induced:
            if ka != kb or ra != rb:
                return False
        elif (ka & ~kb) or (ra & ~rb):
            return False
    return True


cdef bint _extend(Search* s, int depth) nogil:
    cdef int u, j, v
    if depth == s.na:
        return True
    u = s.order[depth]
    for j in range(s.cand_len[u]):
        v = s.cand[u * s.nb + j]
        if s.used[v] or not _feasible(s, depth, u, v):
            continue
        s.mapping[u] = v
        s.used[v] = 1
        if _extend(s, depth + 1):
            return True
        s.used[v] = 0
        s.mapping[u] = -1
    return False


def find_embedding(labels_a, const unsigned char[:] adj_a, labels_b,
                   const unsigned char[:] adj_b, order, bint induced):
    cdef int na = len(labels_a)
    cdef int nb = len(labels_b)
    cdef int u, v, w, cnt
    cdef Search s
    cdef bint found
    if na == 0:
        return []
    if na > nb or (induced and na != nb):
        return None

    cdef int* out_a = <int*>calloc(na, sizeof(int))
    cdef int* in_a = <int*>calloc(na, sizeof(int))
    cdef int* out_b = <int*>calloc(nb, sizeof(int))
    cdef int* in_b = <int*>calloc(nb, sizeof(int))
    cdef int* la = <int*>malloc(na * sizeof(int))
    cdef int* lb = <int*>malloc(nb * sizeof(int))
    s.na = na
    s.nb = nb
    s.induced = induced
    s.adj_a = &adj_a[0]
    s.adj_b = &adj_b[0]
    s.order = <int*>malloc(na * sizeof(int))
    s.mapping = <int*>malloc(na * sizeof(int))
    s.used = <char*>calloc(nb, sizeof(char))
    s.cand = <int*>malloc(na * nb * sizeof(int))
    s.cand_len = <int*>calloc(na, sizeof(int))
    try:
        for u in range(na):
            la[u] = labels_a[u]
            s.order[u] = order[u]
            s.mapping[u] = -1
        for v in range(nb):
            lb[v] = labels_b[v]
        for u in range(na):
            for w in range(na):
                if adj_a[u * na + w]:
                    out_a[u] += 1
                    in_a[w] += 1
        for v in range(nb):
            for w in range(nb):
                if adj_b[v * nb + w]:
                    out_b[v] += 1
                    in_b[w] += 1
        for u in range(na):
            cnt = 0
            for v in range(nb):
                if lb[v] != la[u]:
                    continue
                if induced:
                    if out_b[v] != out_a[u] or in_b[v] != in_a[u]:
                        continue
                elif out_b[v] < out_a[u] or in_b[v] < in_a[u]:
                    continue
                s.cand[u * nb + cnt] = v
                cnt += 1
            if cnt == 0:
                return None
            s.cand_len[u] = cnt
        with nogil:
            found = _extend(&s, 0)
        if not found:
            return None
        return [s.mapping[u] for u in range(na)]
    finally:
        free(out_a)
        free(in_a)
        free(out_b)
        free(in_b)
        free(la)
        free(lb)
        free(s.order)
        free(s.mapping)
        free(s.used)
        free(s.cand)
        free(s.cand_len)
