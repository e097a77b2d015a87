# cython: language_level=3, boundscheck=False, wraparound=False
"""Compiled canonical encoder.

Single-pass validation + encoding into a C buffer.  Output is byte-identical
to confledger.canonical.encode_pure; the equivalence is property-tested.
"""

from cpython.bytes cimport PyBytes_FromStringAndSize
from libc.stdio cimport snprintf
from libc.stdlib cimport free, malloc, realloc
from libc.string cimport memcpy

from confledger.errors import CanonicalError

cdef extern from "Python.h":
    const char *PyUnicode_AsUTF8AndSize(object, Py_ssize_t *) except NULL
    long long PyLong_AsLongLongAndOverflow(object, int *) except? -1

DEF INITIAL_CAP = 256

cdef struct Buf:
    char *data
    size_t used
    size_t cap

cdef int buf_reserve(Buf *b, size_t extra) except -1:
    cdef size_t need = b.used + extra
    cdef size_t cap = b.cap
    cdef char *p
    if need <= cap:
        return 0
    while cap < need:
        cap *= 2
    p = <char *> realloc(b.data, cap)
    if p == NULL:
        raise MemoryError()
    b.data = p
    b.cap = cap
    return 0

cdef inline int buf_putc(Buf *b, char c) except -1:
    buf_reserve(b, 1)
    b.data[b.used] = c
    b.used += 1
    return 0

cdef inline int buf_write(Buf *b, const char *s, size_t n) except -1:
    buf_reserve(b, n)
    memcpy(b.data + b.used, s, n)
    b.used += 1 * n
    return 0

cdef int write_string(Buf *b, obj) except -1:
    cdef Py_ssize_t n = 0
    cdef const char *u
    cdef Py_ssize_t i
    cdef unsigned char c
    cdef char esc[8]
    try:
        u = PyUnicode_AsUTF8AndSize(obj, &n)
    except UnicodeEncodeError as exc:
        raise CanonicalError(f"unencodable text: {exc}") from None
    buf_putc(b, b'"')
    # UTF-8 continuation/multibyte bytes are all >= 0x80 and pass through
    # untouched, so escaping can scan bytes rather than code points.
    for i in range(n):
        c = <unsigned char> u[i]
        if c == 0x22:
            buf_write(b, b'\\"', 2)
        elif c == 0x5C:
            buf_write(b, b"\\\\", 2)
        elif c >= 0x20:
            buf_putc(b, <char> c)
        elif c == 0x08:
            buf_write(b, b"\\b", 2)
        elif c == 0x09:
            buf_write(b, b"\\t", 2)
        elif c == 0x0A:
            buf_write(b, b"\\n", 2)
        elif c == 0x0C:
            buf_write(b, b"\\f", 2)
        elif c == 0x0D:
            buf_write(b, b"\\r", 2)
        else:
            snprintf(esc, 8, b"\\u%04x", <unsigned int> c)
            buf_write(b, esc, 6)
    buf_putc(b, b'"')
    return 0

cdef int write_int(Buf *b, obj) except -1:
    cdef int overflow = 0
    cdef long long v = PyLong_AsLongLongAndOverflow(obj, &overflow)
    cdef char tmp[32]
    cdef int n
    cdef bytes wide
    if overflow == 0:
        n = snprintf(tmp, 32, b"%lld", v)
        buf_write(b, tmp, <size_t> n)
    else:
        wide = str(obj).encode("ascii")
        buf_write(b, <const char *> wide, <size_t> len(wide))
    return 0

cdef int write_obj(Buf *b, obj, str path) except -1:
    cdef bint first
    if obj is None:
        buf_write(b, b"null", 4)
        return 0
    if obj is True:
        buf_write(b, b"true", 4)
        return 0
    if obj is False:
        buf_write(b, b"false", 5)
        return 0
    t = type(obj)
    if t is str:
        write_string(b, obj)
        return 0
    if t is int:
        write_int(b, obj)
        return 0
    if t is list:
        buf_putc(b, b'[')
        first = True
        for i, item in enumerate(<list> obj):
            if not first:
                buf_putc(b, b',')
            first = False
            write_obj(b, item, f"{path}[{i}]")
        buf_putc(b, b']')
        return 0
    if t is dict:
        for key in <dict> obj:
            if type(key) is not str:
                raise CanonicalError(f"{path}: non-string key {key!r}")
        buf_putc(b, b'{')
        first = True
        for key in sorted(<dict> obj):
            if not first:
                buf_putc(b, b',')
            first = False
            write_string(b, key)
            buf_putc(b, b':')
            write_obj(b, (<dict> obj)[key], f"{path}.{key}")
        buf_putc(b, b'}')
        return 0
    raise CanonicalError(f"{path}: unsupported type {t.__name__}")

def encode_canonical(obj):
    """Encode `obj` to canonical bytes (compiled encoder)."""
    cdef Buf b
    b.data = <char *> malloc(INITIAL_CAP)
    if b.data == NULL:
        raise MemoryError()
    b.used = 0
    b.cap = INITIAL_CAP
    try:
        write_obj(&b, obj, "$")
        return PyBytes_FromStringAndSize(b.data, <Py_ssize_t> b.used)
    finally:
        free(b.data)
