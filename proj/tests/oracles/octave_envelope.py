"""Octave-band envelope check for a generated corpus directory.

Computes long-term power in octave bands centred at 62.5 * 2^k Hz (k = 0..7),
normalised to the total, and reports the worst same-family spread and the
smallest best-band separation between families.

usage: octave_envelope.py <corpus_dir>
"""
import itertools
import pathlib
import sys

import numpy as np
from scipy.io import wavfile


def envelope(path):
    sr, x = wavfile.read(path)
    x = x.astype(np.float64) / 32768.0
    p = np.abs(np.fft.rfft(x)) ** 2
    f = np.arange(p.size) * sr / x.size
    bands = []
    for k in range(8):
        c = 62.5 * 2 ** k
        sel = (f >= c / np.sqrt(2)) & (f < c * np.sqrt(2))
        bands.append(p[sel].sum())
    bands = np.array(bands)
    return 10 * np.log10(bands / bands.sum())


def main():
    root = pathlib.Path(sys.argv[1]) / "noise"
    fam = {}
    for w in sorted(root.glob("*.wav")):
        fam.setdefault(w.name.split("_")[0], []).append(envelope(w))
    worst_same = 0.0
    for name, envs in fam.items():
        spread = max(np.abs(a - b).max() for a, b in itertools.combinations(envs, 2))
        print(f"{name:8s} max within-family band diff {spread:6.2f} dB")
        worst_same = max(worst_same, spread)
    min_cross = np.inf
    for (na, ea), (nb, eb) in itertools.combinations(fam.items(), 2):
        sep = min(np.abs(a - b).max() for a in ea for b in eb)
        print(f"{na:8s} vs {nb:8s} min best-band separation {sep:6.2f} dB")
        min_cross = min(min_cross, sep)
    ok = worst_same <= 3.0 and min_cross >= 6.0
    print("PASS" if ok else "FAIL")
    return 0 if ok else 1


if __name__ == "__main__":
    sys.exit(main())
