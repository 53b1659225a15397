"""recalib: channel re-calibration blocks on a minimal autodiff engine.

Implements the AB and AB-Plus recalibration blocks, the SE baseline and the
full ablation-variant zoo, CIFAR/ImageNet-style ResNet builders, a
parameter/FLOP/run-time-memory analyzer, a small SGD trainer, and the
recalibration-relevance ablation harness.
"""

__version__ = "0.1.0"
