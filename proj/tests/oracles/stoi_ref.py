"""Reference STOI values for the C++ metric tests.

Uses pystoi on signals decimated to 10 kHz with scipy's resample_poly and
the FIR shipped in src/metrics/stoi_fir.inc, so both sides share the same
resampler. pystoi's own Octave-style resampler is also reported.

usage: stoi_ref.py [clean.wav noisy.wav ...]
"""
import pathlib
import re
import sys

import numpy as np
from pystoi import stoi
from scipy.io import wavfile
from scipy.signal import resample_poly

ROOT = pathlib.Path(__file__).resolve().parents[2]
FIR = np.array([float(v) for v in re.findall(
    r"[-+]?\d\.\d+e[-+]\d+|[-+]?\d+\.\d+",
    (ROOT / "src/metrics/stoi_fir.inc").read_text().split("{", 1)[1])])
assert FIR.size == 321


def to10k(x):
    return resample_poly(x, 5, 12, window=FIR.copy())


def lcg(seed, n):
    out = np.empty(n)
    s = seed
    for i in range(n):
        s = (s * 6364136223846793005 + 1442695040888963407) % 2 ** 64
        out[i] = (s >> 11) * 2.0 ** -53 - 0.5
    return out


def test_pair():
    n = 72000
    t = np.arange(n) / 24000.0
    x = (0.3 * np.sin(2 * np.pi * 180 * t) * (0.6 + 0.4 * np.sin(2 * np.pi * 4 * t))
         + 0.15 * np.sin(2 * np.pi * 900 * t + 0.5) * (0.5 + 0.5 * np.sin(2 * np.pi * 2.5 * t))
         + 0.1 * np.sin(2 * np.pi * 2400 * t) * (0.5 + 0.5 * np.cos(2 * np.pi * 3 * t)))
    quiet = (t >= 1.2) & (t < 1.6)
    x[quiet] = 1e-5 * lcg(7, n)[quiet]
    y = x + 0.1 * lcg(11, n)
    return x, y


def report(name, x, y):
    ours = stoi(to10k(x), to10k(y), 10000)
    octave = stoi(x, y, 24000)
    print(f"{name}: shared-resampler {ours!r}  pystoi-default {octave!r}")


def main():
    x, y = test_pair()
    report("synthetic pair", x, y)
    r = to10k(x)
    print("first resampled samples", [repr(v) for v in r[100:103]])
    args = sys.argv[1:]
    for i in range(0, len(args), 2):
        _, c = wavfile.read(args[i])
        _, d = wavfile.read(args[i + 1])
        report(args[i + 1], c.astype(np.float64), d.astype(np.float64))


if __name__ == "__main__":
    main()
