"""Weather augmentation for semantic segmentation, reproduced at desk scale.

Synthetic paired road scenes, five photometric weather augmentations, a
from-scratch UNet, and a cross-validated significance-testing harness.
"""

__version__ = "0.1.0"
