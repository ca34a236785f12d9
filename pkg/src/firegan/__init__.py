"""Visible-infrared image fusion with a two-generator, two-discriminator GAN."""

from .data import ImagePair, ImageTensor, from_model_domain, load_corpus, to_model_domain
from .losses import LossWeights, d1_loss, d2_loss, g1_loss, g2_loss, gradient_map
from .metrics import MetricParams, MetricRecord, correlation, entropy, evaluate_triple, psnr, ssim
from .model import NetworkSpec, build_discriminator, build_g1, build_g2, fuse, generate_ir
from .training import TrainingConfig, fit, make_optimizers, train_step, transfer_learn

__version__ = "0.1.0"
