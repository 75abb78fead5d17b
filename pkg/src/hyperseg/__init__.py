"""Hypersphere one-class losses for pixel-wise anomaly segmentation.

A desk-scale, CPU-only toolkit: a small fully-convolutional network trained
from scratch on procedurally generated textures with confetti-noise
anomalies, per-pixel hypersphere losses (pooled baseline vs. balanced
per-pixel variant), Gaussian-upsampled heatmaps, pixel-wise AUROC/AP, and a
Wilcoxon + Holm comparison harness with critical-difference diagrams.

Submodules are imported explicitly (``from hyperseg import losses``); the
package root stays import-light so the CLI can pin BLAS threading first.
"""

__version__ = "0.1.0"
