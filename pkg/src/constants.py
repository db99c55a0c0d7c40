#!/usr/bin/env python3
# Copyright 2024 Canonical Limited
# See LICENSE file for licensing details.

"""Literals and constants."""

from fractions import Fraction

# file formats
CHECKPOINT_MAGIC = b"CPT4D-CKPT\n"
VOLUME_MAGIC = b"CPT4D-VOL\n"
SLICE_MAGIC = b"CPT4D-SLC\n"
HEADER_END = "end_header"

# activation tags
SINE = "sine"
LINEAR = "linear"
SIGMOID = "sigmoid"
TANHSHRINK = "tanhshrink"
ACTIVATIONS = (SINE, LINEAR, SIGMOID, TANHSHRINK)

# slice kinds
CORONAL = "coronal"
NAVIGATOR = "navigator"

# displacement units declared by a model manifest
NORMALIZED_UNITS = "normalized"
VOXEL_UNITS = "voxel"

# respiratory state scales
NORM01 = "norm01"
NORM11 = "norm11"

# state policies for out-of-range network states
STRICT = "strict"
CLAMP = "clamp"
PASSTHROUGH = "passthrough"

# per-position statistic of the sorting baseline
NEAREST_TO_CENTER = "nearest-to-center"
BIN_MEAN = "mean"

# training defaults
DEFAULT_TRAIN_FRACTION = Fraction(11, 12)
DEFAULT_OMEGA0 = 30.0
DEFAULT_OMEGA_HIDDEN = 1.0
DEFAULT_LEARNING_RATE = 5e-5
DEFAULT_BETA1 = 0.9
DEFAULT_BETA2 = 0.999
DEFAULT_ADAM_EPS = 1e-8
DEFAULT_JACDET_WEIGHT = 0.05
N_LANDMARKS = 5

# network evaluation happens in blocks aligned to this many points
EVAL_BLOCK = 4096

# image quality
SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03
PSNR_IDENTICAL = "identical"

# intensities of the analytic thorax phantom
BACKGROUND_INTENSITY = 0.02
BODY_INTENSITY = 0.5
LUNG_INTENSITY = 0.15
LIVER_INTENSITY = 0.55
VESSEL_INTENSITY = 0.85
