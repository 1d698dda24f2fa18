"""Distributed dictionary learning over a simulated node network.

Nodes hold disjoint column blocks of a training matrix, sparse-code them
locally, and agree on shared dictionary atoms through consensus-embedded
power iterations, with an image-denoising pipeline built on overlapping
patches. See the README for the experiment CLI.
"""

from .imaging import (ImageGray, ImageError, MalformedImageError, NoiseSpec,
                      PatchMatrix, UnsupportedFormatError, add_awgn,
                      assemble_image, downscale, extract_patches, load_image,
                      save_image, split_columns)
from .learn import (AtomUpdate, IterationStats, LearnConfig, LearnResult,
                    ReferenceDirection, SupportMask, atom_update, init_shared,
                    restricted_error, run_cloud_ksvd, run_local_ksvd,
                    support_mask)
from .metrics import PsnrResult, dict_divergence, mse, psnr, ssim
from .network import (NodeState, Topology, WeightMatrix, build_topology,
                      build_weights, consensus_round, run_consensus)
from .power import (DegenerateSpectrumError, EigEstimate, ResidualGram,
                    distributed_dominant_eigvec, reference_eigvec_oracle)
from .runner import (ConfigError, ExperimentConfig, MetricRecord, RunManifest,
                     SyntheticSpec, config_from_mapping, emit_outputs,
                     load_config, run_experiment, run_grid)
from .sparse import Dictionary, SparseCodeMatrix, omp_single, reconstruct, somp_batch

__version__ = "1.0.0"

__all__ = [
    "AtomUpdate", "ConfigError", "DegenerateSpectrumError", "Dictionary",
    "EigEstimate", "ExperimentConfig", "ImageError", "ImageGray",
    "IterationStats", "LearnConfig", "LearnResult", "MalformedImageError",
    "MetricRecord", "NodeState", "NoiseSpec", "PatchMatrix", "PsnrResult",
    "ReferenceDirection", "ResidualGram", "RunManifest", "SparseCodeMatrix",
    "SupportMask", "SyntheticSpec", "Topology", "UnsupportedFormatError",
    "WeightMatrix", "add_awgn", "assemble_image", "atom_update",
    "build_topology", "build_weights", "config_from_mapping", "consensus_round",
    "dict_divergence", "distributed_dominant_eigvec", "downscale",
    "emit_outputs", "extract_patches", "init_shared", "load_config",
    "load_image", "mse", "omp_single", "psnr", "reconstruct",
    "reference_eigvec_oracle", "restricted_error", "run_cloud_ksvd",
    "run_consensus", "run_experiment", "run_grid", "run_local_ksvd",
    "save_image", "somp_batch", "split_columns", "ssim", "support_mask",
]
