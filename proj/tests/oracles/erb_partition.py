"""Closed-form ERB-rate partition used to freeze expected band layouts.

Band b's upper boundary is erb2hz((b+1) * erb(nyquist) / bands); the band
ends after the last bin whose centre frequency is <= that boundary.
"""
import math


def erb(f):
    return 9.265 * math.log(1 + f / (24.7 * 9.265))


def erb_inv(e):
    return 24.7 * 9.265 * (math.exp(e / 9.265) - 1)


def partition(sr, fft, bands):
    bins = fft // 2 + 1
    bw = sr / fft
    top = erb(sr / 2)
    starts = [0]
    for b in range(bands - 1):
        u = erb_inv(top * (b + 1) / bands)
        edge = math.floor(u / bw + 1e-9) + 1
        edge = max(edge, starts[-1] + 1)
        edge = min(edge, bins - (bands - 1 - b))
        starts.append(edge)
    starts.append(bins)
    return [starts[i + 1] - starts[i] for i in range(bands)]


if __name__ == "__main__":
    print("8k/6/2:", partition(8000, 6, 2))
    print("24k/480/32:", partition(24000, 480, 32))
