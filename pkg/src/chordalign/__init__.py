"""Force-align untimed chord labels to music audio.

The package pairs a conformer frame classifier over constant-Q features
with CTC-style forced alignment, plus untrained baselines (harmonic
change detection, chroma DTW), evaluation metrics, and a synthetic
chord-audio generator for end-to-end verification.
"""

__version__ = "0.1.0"
