# cython: language_level=3, boundscheck=False, wraparound=False
"""Hex digits of pi at arbitrary positions, compiled kernel.

Same fixed-point digit extraction as the pure kernel. Cython has no native
128-bit integer, and hiding unsigned __int128 behind a 64-bit ctypedef makes
the compiler insert truncating casts into mixed-width expressions, so the
whole kernel lives in the verbatim C block below; this module only validates
arguments and owns the output buffer.
"""

cdef extern from *:
    r"""
    typedef unsigned __int128 sf_u128;

    /* 16^e mod m for any m < 2^64; products go through 128 bits. */
    static unsigned long long sf_modpow16(long long e, unsigned long long m)
    {
        unsigned long long acc = 1 % m;
        unsigned long long b = 16 % m;
        while (e > 0) {
            if (e & 1)
                acc = (unsigned long long)((sf_u128)acc * b % m);
            b = (unsigned long long)((sf_u128)b * b % m);
            e >>= 1;
        }
        return acc;
    }

    /* Fractional part of sum_k 16^(d-k)/(8k+j) as 128-bit fixed point.
     * Head terms reduce 16^(d-k) mod m first, so (r << 128) / m is exact in
     * two 64-bit-limb steps; tail terms shrink by 16x each and run out
     * within 32 iterations. */
    static sf_u128 sf_series(int j, long long d)
    {
        sf_u128 acc = 0;
        long long k, t;
        for (k = 0; k <= d; k++) {
            unsigned long long m = 8 * k + j;
            sf_u128 top = ((sf_u128)sf_modpow16(d - k, m)) << 64;
            acc += ((top / m) << 64) + (((top % m) << 64) / m);
        }
        for (t = 1;; t++) {
            unsigned long long m = 8 * (d + t) + j;
            sf_u128 term = (~(sf_u128)0 / m) >> (4 * t);
            if (term == 0)
                break;
            acc += term;
        }
        return acc;
    }

    static void sf_pi_digits(long long start, long long count, char *out)
    {
        static const char HEX[] = "0123456789ABCDEF";
        long long pos = start;
        long long produced = 0;
        while (produced < count) {
            long long d = pos - 1;
            sf_u128 x = 4 * sf_series(1, d) - 2 * sf_series(4, d)
                        - sf_series(5, d) - sf_series(6, d);
            int n = 0;
            while (n < 16 && produced < count) {
                out[produced++] = HEX[(unsigned)(x >> 124) & 0xF];
                x <<= 4;
                n++;
            }
            pos += n;
        }
    }
    """
    void sf_pi_digits(long long start, long long count, char *out) nogil

BACKEND = "compiled"


def hex_digits(start, count):
    """Hex digits of pi's fractional part at positions start..start+count-1.

    Position 1 is the first digit after the point: hex_digits(1, 3) == "243".
    """
    if start < 1 or count < 1:
        raise ValueError("start and count must be positive")
    cdef long long c_start = start
    cdef long long c_count = count
    buf = bytearray(count)
    cdef unsigned char[::1] view = buf
    cdef char *p = <char *> &view[0]
    with nogil:
        sf_pi_digits(c_start, c_count, p)
    return buf.decode("ascii")
