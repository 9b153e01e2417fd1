"""Definitional evaluation of the compressed spectral loss on a fixed pair.

Inputs come from the same 64-bit LCG as the C++ test: 24 (re, im) cells,
values 2 * (u - 0.5). Prints magnitude term, complex term and total.
"""
import numpy as np


def lcg(seed, n):
    out, s = [], seed
    for _ in range(n):
        s = (s * 6364136223846793005 + 1442695040888963407) % 2 ** 64
        out.append((s >> 11) * 2.0 ** -53 - 0.5)
    return np.array(out)


def compressed(z, c, eps):
    a = np.maximum(np.abs(z), eps)
    return a ** c, z * a ** (c - 1)


c, eps = 0.6, 1e-12
e = 2 * lcg(21, 48)
s = 2 * lcg(22, 48)
E = e[0::2] + 1j * e[1::2]
S = s[0::2] + 1j * s[1::2]
me, ce = compressed(E, c, eps)
ms, cs = compressed(S, c, eps)
mag = np.mean((me - ms) ** 2)
cplx = np.mean(np.abs(ce - cs) ** 2)
print(repr(mag), repr(cplx), repr(mag + cplx))
