"""Boundary-conditioned graph diffusion for reconstructing porous volumes from two slices."""
__version__ = "0.1.0"

from ._kernels import BACKEND
from .boundary import BoundaryGraph, BoundaryParams, boundary_graph_from_slices, boundary_graph_from_volume
from .decoder import DecoderConfig, decode, soft_occupancy
from .denoiser import AblationFlags, Denoiser, DenoiserConfig, load_checkpoint, save_checkpoint
from .diffusion import LossWeights, NoiseSchedule
from .errors import PorodiffError
from .flow import build_network, permeability, solve_pressure
from .metrics import euler_characteristic, graph_summary, gte, tpcf
from .pore_graph import ExtractionConfig, PoreGraph, extract_pore_graph
from .sampler import SamplerConfig, sample, sample_posterior
from .synth import SynthConfig, generate
from .voxel import VoxelVolume, load_volume, save_volume

__all__ = [
    "BACKEND", "AblationFlags", "BoundaryGraph", "BoundaryParams", "DecoderConfig", "Denoiser", "DenoiserConfig",
    "ExtractionConfig", "LossWeights", "NoiseSchedule", "PoreGraph", "PorodiffError", "SamplerConfig", "SynthConfig",
    "VoxelVolume", "boundary_graph_from_slices", "boundary_graph_from_volume", "build_network", "decode",
    "euler_characteristic", "extract_pore_graph", "generate", "graph_summary", "gte", "load_checkpoint",
    "load_volume", "permeability", "sample", "sample_posterior", "save_checkpoint", "save_volume",
    "soft_occupancy", "solve_pressure", "tpcf",
]
