# Copyright 2024 Canonical Limited
# See LICENSE file for licensing details.

# reduced run shared by the pipeline tests; the phantom keeps its layout on any grid
REDUCED_CONFIG = {
    "nx": 32,
    "ny": 32,
    "nz": 24,
    "spacing_x": 3.0,
    "spacing_y": 3.0,
    "spacing_z": 4.0,
    "peak_displacement_mm": 10.0,
    "n_coronal_positions": 8,
    "n_sweeps": 4,
    "epochs": 6,
    "meta_batch": 2,
    "points_per_batch": 128,
    "tmn_depth": 2,
    "tmn_width": 16,
    "san_depth": 2,
    "san_width": 16,
    "san_residual_layer": 2,
    "tmn_omega0": 5.0,
    "san_omega0": 5.0,
    "learning_rate": 1e-3,
    "checkpoint_every": 3,
    "log_every": 1,
    "n_bins": 4,
    "recon_batch_size": 4096,
    "export_graymap": "true",
    "export_mip": "true",
    "seed": 7,
}

RECONSTRUCTED_STATES = "0,0.5,1"
