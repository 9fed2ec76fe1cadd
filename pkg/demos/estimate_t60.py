"""Estimate octave-band reverberation times of synthetic impulse responses.

Run with ``python demos/estimate_t60.py``. The synthetic responses carry
their true per-band decay times, so the printout doubles as an accuracy
check, including what happens as the noise floor rises.
"""
import numpy as np

from sceneaware import BAND_CENTERS, AudioBuffer, InsufficientDecayRange, subband_t60, synth_air


def show(title, truth, est):
    print(title)
    print("  band (Hz) " + "".join(f"{fc:>8}" for fc in BAND_CENTERS))
    print("  true (s)  " + "".join(f"{v:8.3f}" for v in truth))
    print("  est  (s)  " + "".join(f"{v:8.3f}" for v in est.values))
    if est.flags:
        print("  flags:", ", ".join(est.flags))
    print()


# A room that is boomy at low frequencies and dry at the top.
truth = np.array([1.1, 0.9, 0.7, 0.6, 0.5, 0.4, 0.3])
air = synth_air(truth, duration=2.0, seed=1)
show("clean decay", truth, subband_t60(air.audio))

# Raise the noise floor: the readout moves from a 30 dB fit to a 20 dB fit,
# then runs out of usable range and neighbouring bands fill in.
for floor in (-60, -45, -35):
    air = synth_air(truth, duration=2.0, noise_floor_db=floor, seed=1)
    try:
        show(f"noise floor {floor} dB", truth, subband_t60(air.audio))
    except InsufficientDecayRange as exc:
        print(f"noise floor {floor} dB: {exc}\n")

# An anechoic response has no decay to measure at all.
dry = np.zeros(16000)
dry[0] = 1.0
try:
    subband_t60(AudioBuffer(dry, 16000))
except InsufficientDecayRange as exc:
    print("unit impulse:", exc)
