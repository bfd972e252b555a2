"""Optimal bail-out dividend thresholds for spectrally negative Levy models with regime switching."""
