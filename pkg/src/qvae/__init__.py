"""Quaternion variational autoencoder built on a small numpy autodiff engine."""
from .quaternion import Quaternion, QuaternionArray, PureUnitQuaternion, qmul, conjugate, norm, involution, polar, dot, to_left_matrix
from .stats import (KLVariant, ProperGaussianParams, AugmentedCovariance, augment, augmented_covariance,
                    improperness_measure, proper_gaussian_logpdf, augmented_gaussian_logpdf, sample_proper,
                    kl_proper)
from .tensor import Tensor, backward, no_grad
from .model import QvaeConfig, QVAE, RealVAE, LatentDistribution, build_model, build_baseline_vae

__version__ = "0.1.0"
