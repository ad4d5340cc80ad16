"""Adversarial imputers for factors and TP1 images."""
from mmimpute.gan.model import (MODES, AdversarialBundle, build_bundle, class_regularizer,
                                cpbigan_gan_loss, d_objective_from_probs, encode_incomplete,
                                generate_tp1, impute_factor_matrix, impute_factors, impute_image_tp1,
                                load_bundle, pbigan_loss, save_bundle)
from mmimpute.gan.train import GanData, factor_gan_data, image_gan_data, read_curves, train, write_curves

__all__ = [
    "MODES", "AdversarialBundle", "GanData", "build_bundle", "class_regularizer", "cpbigan_gan_loss",
    "d_objective_from_probs", "encode_incomplete", "factor_gan_data", "generate_tp1",
    "image_gan_data", "impute_factor_matrix", "impute_factors", "impute_image_tp1", "load_bundle",
    "pbigan_loss", "read_curves", "save_bundle", "train", "write_curves",
]
