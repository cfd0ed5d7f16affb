# cython: language_level=3, boundscheck=False, wraparound=False
"""Compiled twin of ``_pure.py``.

Same arithmetic in the same order as the pure-Python kernels; only the loop
machinery is C.  Keep the two files in lockstep when changing either.
"""

from libc.math cimport sqrt
from libc.stdlib cimport free, malloc


def water_fill(capacity, floors, ceilings, weights):
    """See ``clustercap._kernels._pure.water_fill``."""
    cdef Py_ssize_t n = len(floors)
    if n == 0:
        return []
    cdef double *buf = <double *> malloc(3 * n * sizeof(double))
    cdef Py_ssize_t *active = <Py_ssize_t *> malloc(n * sizeof(Py_ssize_t))
    if buf == NULL or active == NULL:
        free(buf)
        free(active)
        raise MemoryError()
    cdef double *alloc = buf
    cdef double *ceil_a = buf + n
    cdef double *w_a = buf + 2 * n
    cdef double remaining, scale, eps, f, c, total_w, share
    cdef Py_ssize_t i, j, n_active, n_next
    cdef bint capped_any
    try:
        for i in range(n):
            f = floors[i]
            c = ceilings[i]
            ceil_a[i] = c
            w_a[i] = weights[i]
            alloc[i] = f if f < c else c
        remaining = capacity
        for i in range(n):
            remaining -= alloc[i]
        scale = capacity if capacity > 1.0 else 1.0
        eps = 1e-12 * scale
        n_active = 0
        for i in range(n):
            if w_a[i] > 0.0 and alloc[i] < ceil_a[i] - eps:
                active[n_active] = i
                n_active += 1
        while remaining > eps and n_active > 0:
            total_w = 0.0
            for j in range(n_active):
                total_w += w_a[active[j]]
            share = remaining / total_w
            capped_any = False
            for j in range(n_active):
                i = active[j]
                if alloc[i] + w_a[i] * share >= ceil_a[i] - eps:
                    remaining -= ceil_a[i] - alloc[i]
                    alloc[i] = ceil_a[i]
                    capped_any = True
            if not capped_any:
                for j in range(n_active):
                    i = active[j]
                    alloc[i] += w_a[i] * share
                break
            n_next = 0
            for j in range(n_active):
                i = active[j]
                if alloc[i] < ceil_a[i] - eps:
                    active[n_next] = i
                    n_next += 1
            n_active = n_next
        return [alloc[i] for i in range(n)]
    finally:
        free(buf)
        free(active)


def pstdev(values):
    """See ``clustercap._kernels._pure.pstdev``."""
    cdef Py_ssize_t n = len(values)
    if n == 0:
        raise ValueError("pstdev() requires at least one value")
    cdef double mean = 0.0
    cdef double var = 0.0
    cdef double d
    cdef Py_ssize_t i
    for i in range(n):
        mean += values[i]
    mean /= n
    for i in range(n):
        d = values[i] - mean
        d *= d
        var += d
    var /= n
    return sqrt(var)
