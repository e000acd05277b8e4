"""Missing-modality brain MRI synthesis.

Synthesizes an absent MRI contrast from the three available ones with a
multi-branch translation GAN trained with multi-modal contrastive learning
(entropy-based query selection), an auxiliary tumor-segmentation decoder,
and self-representation constraints from a pretrained target autoencoder.
"""

__version__ = "0.1.0"

from .modalities import MissingScenario, Modality, all_scenarios

__all__ = ["Modality", "MissingScenario", "all_scenarios", "__version__"]
