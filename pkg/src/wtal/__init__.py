"""Weakly-supervised action recognition and temporal localization over
precomputed per-frame features: attention pooling with smoothness/sparsity
regularization, MMD knowledge transfer from trimmed to untrimmed models,
proposal extraction, and mAP@IoU evaluation."""

__version__ = "0.1.0"
