"""Writes the 24 kHz -> 10 kHz anti-aliasing FIR used by the STOI resampler.

Prototype at the 120 kHz intermediate rate (up 5, down 12): 321 taps
(64 per polyphase branch plus the centre tap), Kaiser beta 8, cutoff
4.8 kHz, unit DC gain. The resampler multiplies by the up factor.

usage: design_stoi_fir.py > src/metrics/stoi_fir.inc
"""
from scipy.signal import firwin

TAPS = 321
h = firwin(TAPS, 4800.0, fs=120000.0, window=("kaiser", 8.0))
h = h / h.sum()
print("// Generated by tools/design_stoi_fir.py; do not edit.")
print(f"constexpr int kStoiFirTaps = {TAPS};")
print("constexpr double kStoiFir[kStoiFirTaps] = {")
for i in range(0, TAPS, 4):
    print("    " + " ".join(f"{float(v)!r}," for v in h[i:i + 4]))
print("};")
