"""Sample a sine through a converter and look at the two response features.

An analog sensor's fingerprint is built from the RMS and the variance of its
sampled output. This walk-through shows how converter resolution shapes both.
"""

import math

from sensorprint import ConverterSpec, rms, synthesize_sine, variance

print("A 1 kHz sine, amplitude 1 V on a 1.5 V offset, 16 periods.")
print("Closed-form RMS is sqrt(offset^2 + A^2/2) =", round(math.sqrt(1.5**2 + 0.5), 6))
print("Closed-form variance is A^2/2 = 0.5\n")

for bits in (4, 8, 12, 16, 24):
    adc = ConverterSpec(bits, 0.0, 3.3, 64_000.0)
    wave = synthesize_sine(1000.0, 1.0, 1.5, adc)
    print(f"{bits:>2}-bit ADC: rms={rms(wave):.6f}  variance={variance(wave):.6f}")

print("\nCoarse converters bias both features; by 16 bits they match the closed form.")
