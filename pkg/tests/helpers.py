"""Small shared fixtures: volumes, tiny models and slot permutations."""
import numpy as np

from porodiff.boundary import BoundaryGraph, boundary_graph_from_volume
from porodiff.denoiser import AblationFlags, Denoiser, DenoiserConfig
from porodiff.diffusion import NoiseSchedule
from porodiff.pore_graph import edge_index, pair_lookup
from porodiff.synth import SynthConfig, generate
from porodiff.voxel import VoxelVolume

TINY = DenoiserConfig(d=16, n_blocks=1, n_heads=2, n_freq=8, bias_hidden=8, seed=3)


def spheres(dims=(24, 24, 20), seed=0, porosity=0.3) -> VoxelVolume:
    return generate(SynthConfig(dims=dims, target_porosity=porosity, radius_range=(2.5, 4.5), seed=seed))


def tiny_model(schedule=None, ablation=None, cfg=TINY) -> Denoiser:
    schedule = schedule or NoiseSchedule.linear(8, 1e-3, 0.3)
    return Denoiser.create(cfg, AblationFlags.ablation(ablation), schedule)


def permute_boundary(gb: BoundaryGraph, perm) -> BoundaryGraph:
    perm = np.asarray(perm)
    iu, ju = edge_index(gb.n_max)
    e = pair_lookup(gb.n_max)[perm[iu], perm[ju]]
    return BoundaryGraph(
        gb.values.permuted(perm), gb.mask_B[perm], gb.mask_C[perm], gb.mask_E_obs[e], gb.mask_E_soft[e],
        gb.soft_weight[e], gb.side[perm], dict(gb.params),
    )


def edge_perm(n_max, perm):
    iu, ju = edge_index(n_max)
    return pair_lookup(n_max)[np.asarray(perm)[iu], np.asarray(perm)[ju]]


def example_boundary(v: VoxelVolume, n_max=64) -> BoundaryGraph:
    return boundary_graph_from_volume(v, n_max)


def loss_function(model: Denoiser, example, t, names, weights=None, seed=0, train_cfg=None):
    """Total training loss as a function of the named parameter tensors.

    Each call reseeds the corruption so finite differences see the same
    noisy state.
    """
    from collections import OrderedDict

    from porodiff.denoiser import DenoiserParams
    from porodiff.diffusion import LossWeights
    from porodiff.training import TrainConfig, loss_terms

    weights = weights or LossWeights()
    train_cfg = train_cfg or TrainConfig(n_vox=256)

    def f(*tensors):
        table = OrderedDict(model.params.tensors)
        table.update(zip(names, tensors))
        m = Denoiser(DenoiserParams(table), model.cfg, model.flags, model.schedule)
        return loss_terms(m, example, t, model.schedule, weights, np.random.default_rng(seed), train_cfg)["total"]

    return f, [model.params[n].data.copy() for n in names]


def edge_graph(n_nodes, edges, n_max=64, dims=(32, 32, 32), rows=None, seed=0):
    """Graph with ``n_nodes`` active slots and the given throats; geometry random unless ``rows`` given."""
    from porodiff.pore_graph import PoreGraph

    rng = np.random.default_rng(seed)
    g = PoreGraph(n_max, dims)
    g.B[:n_nodes] = rng.uniform(0.2, 0.8, (n_nodes, 4)) if rows is None else rows
    g.B[:n_nodes, 3] = np.maximum(g.B[:n_nodes, 3] * 0.2, 0.01) if rows is None else g.B[:n_nodes, 3]
    g.C[:n_nodes] = 1
    lookup = pair_lookup(n_max)
    for i, j in edges:
        g.E[lookup[i, j]] = 1
    return g
