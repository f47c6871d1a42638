"""Acceptance criteria, each at its stated tolerance and runtime budget.

Every test prints one ``[PASS]``/``[FAIL]`` line; the lines are repeated in
the pytest terminal summary.
"""
import itertools
import json
import math
from pathlib import Path

import numpy as np
import pytest

from porodiff import autodiff as ad
from porodiff.cli import main as cli_main
from porodiff.denoiser import AblationFlags, Denoiser, DenoiserConfig
from porodiff.diffusion import LossWeights, NoiseSchedule, categorical_posterior, cumulative_transition, estimate_priors
from porodiff.diffusion import forward_geometry, one_hot
from porodiff.flow import FlowNetwork, build_network, permeability, solve_pressure
from porodiff.metrics import euler_characteristic, graph_summary, gte, permutation_robustness, tpcf
from porodiff.pipeline import compare_volumes, reconstruct, scaled_schedule, volume_graph
from porodiff.pore_graph import ExtractionConfig, equivalent_radius, extract_pore_graph
from porodiff.sampler import OracleDenoiser, SamplerConfig, masked_entry_count, sample_posterior, violation_count
from porodiff.synth import SynthConfig, extract_crop, generate, partition_blocks, rasterize_ball
from porodiff.training import TrainConfig, build_example, train
from porodiff.voxel import VoxelVolume, edt, porosity

from acceptance_report import criterion
from helpers import edge_graph, example_boundary, loss_function, spheres, tiny_model
from oracles import brute_edt_sq, brute_euler, dense_pressure, interface_pairs, pair_scan_tpcf, path_cumulative
from oracles import path_posterior
from test_autodiff import BINARY, UNARY, _scalar

def test_c01_diffusion_oracle():
    with criterion(1, "categorical transitions and posteriors equal path enumeration to 1e-12", 1.0):
        rng = np.random.default_rng(0)
        worst = 0.0
        for K in (2, 3):
            for T in range(1, 6):
                pi = rng.dirichlet(np.ones(K))
                s = NoiseSchedule(rng.uniform(0.05, 0.5, T), pi, pi)
                Qs = [s.transition("c", t) for t in range(1, T + 1)]
                for t in range(T + 1):
                    worst = max(worst, np.max(np.abs(cumulative_transition(s, "c", t) - path_cumulative(Qs, t))))
                for t in range(1, T + 1):
                    for z0, zt in itertools.product(range(K), repeat=2):
                        got = categorical_posterior(one_hot([zt], K), one_hot([z0], K), "c", t, s)[0]
                        worst = max(worst, np.max(np.abs(got - path_posterior(Qs, t, zt, z0))))
        assert worst <= 1e-12, worst


def test_c02_gaussian_moments():
    with criterion(2, "forward geometry mean and variance within 1% at three t", 5.0):
        s = NoiseSchedule.linear(200)
        rng = np.random.default_rng(2)
        b0 = np.array([0.3, 0.6, 0.9, 0.1])
        n = 100_000
        for t in (1, 100, 200):
            ab = s.alpha_bar[t]
            bt = forward_geometry(np.broadcast_to(b0, (n, 4)), t, rng.standard_normal((n, 4)), s)
            mean, sd = math.sqrt(ab) * b0, math.sqrt(1 - ab)
            # 1% of the coordinate's own scale: its mean or, when that is tiny, its spread
            tol = 0.01 * np.maximum(np.abs(mean), sd)
            assert np.all(np.abs(bt.mean(axis=0) - mean) <= tol), (t, bt.mean(axis=0), mean)
            # the four coordinates share one variance, so their squared deviations are pooled
            var = float(np.mean((bt - bt.mean(axis=0)) ** 2))
            assert abs(var - (1 - ab)) <= 0.01 * (1 - ab), (t, var, 1 - ab)


def _directional_check(f, point, direction, step=1e-6):
    leaves = [ad.Tensor(p.copy(), requires_grad=True) for p in point]
    f(*leaves).backward()
    analytic = sum(float(np.sum((l.grad if l.grad is not None else 0.0) * d)) for l, d in zip(leaves, direction))
    plus = f(*[ad.Tensor(p + step * d) for p, d in zip(point, direction)]).item()
    minus = f(*[ad.Tensor(p - step * d) for p, d in zip(point, direction)]).item()
    numeric = (plus - minus) / (2 * step)
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), 1e-12)


def test_c03_autodiff():
    with criterion(3, "finite-difference checks: primitives 1e-5, full loss 1e-4, 3 seeds", 30.0):
        for seed in range(3):
            rng = np.random.default_rng(seed)
            for name, (fn, fix) in UNARY.items():
                x = rng.standard_normal((3, 4))
                x = fix(x) if fix is not None else x
                w = rng.standard_normal(fn(ad.Tensor(x)).shape)
                rep = ad.grad_check(lambda a: _scalar(fn(a), w), x, tolerance=1e-5)
                assert rep.passed, (name, seed, rep.failures)
            for name, fn in BINARY.items():
                a, b = rng.standard_normal((3, 4)), rng.standard_normal((3, 4))
                w = rng.standard_normal(fn(ad.Tensor(a), ad.Tensor(b)).shape)
                rep = ad.grad_check(lambda x, y: _scalar(fn(x, y), w), [a, b], tolerance=1e-5)
                assert rep.passed, (name, seed, rep.failures)
        example = build_example(spheres(seed=4), 64)
        model = tiny_model()
        names = model.params.names()
        for seed in range(3):
            rng = np.random.default_rng(seed)
            f, point = loss_function(model, example, int(rng.integers(1, model.schedule.T + 1)), names, seed=seed)
            # every parameter at once along random directions
            for _ in range(2):
                direction = [rng.standard_normal(p.shape) for p in point]
                err = _directional_check(f, point, direction)
                assert err < 1e-4, (seed, err)
            # plus single coordinates of eight tensors, different on each seed
            chosen = set(rng.choice(len(point), size=8, replace=False).tolist())
            coords = [rng.choice(p.size, size=1) if k in chosen else [] for k, p in enumerate(point)]
            rep = ad.grad_check(f, point, step=1e-6, tolerance=1e-4, abs_floor=1e-8, coords=coords)
            assert rep.passed, (seed, rep.failures)


def test_c04_clamped_sampling():
    with criterion(4, "16 clamped samples on 10 boundary conditions, violation rate 0", 120.0):
        model = tiny_model(NoiseSchedule.linear(6, 1e-3, 0.4))
        violations = entries = 0
        for k in range(10):
            gb = example_boundary(spheres(seed=100 + k))
            assert masked_entry_count(gb) > 0
            for draw in sample_posterior(gb, model, model.schedule, SamplerConfig(K=16, seed=k)):
                violations += violation_count(draw, gb)
                entries += masked_entry_count(gb)
        assert violations == 0, f"{violations} / {entries}"


def test_c05_oracle_recovery():
    with criterion(5, "oracle denoiser recovers S0 label-exact and to 1e-6 for T in {1, 10, 50}", 30.0):
        for k, T in enumerate((1, 10, 50)):
            v = spheres(seed=200 + k)
            g, _ = extract_pore_graph(v, ExtractionConfig(n_max=64))
            gb = example_boundary(v)
            sched = NoiseSchedule.linear(T)
            for draw in sample_posterior(gb, OracleDenoiser(g, sched), sched, SamplerConfig(K=4, seed=T, clamp=False)):
                assert np.array_equal(draw.C, g.C) and np.array_equal(draw.E, g.E)
                assert np.max(np.abs(draw.B - g.B)) <= 1e-6


def test_c06_extraction_geometry():
    with criterion(6, "lattice balls give one node with exact r; dumbbell gives one throat", 10.0):
        for radius, count in ((10, 4169), (6, 925), (4, 257)):
            c = radius + 2
            ball = rasterize_ball((2 * c + 1,) * 3, (c, c, c), radius)
            assert int(ball.sum()) == count
            v = VoxelVolume(ball.astype(np.uint8))
            g, _ = extract_pore_graph(v, ExtractionConfig(n_max=64))
            assert g.n_active == 1 and not g.throats()
            assert g.voxel_geometry()[1][0] == pytest.approx(equivalent_radius(count), abs=1e-9)
        dims = (40, 24, 24)
        m = rasterize_ball(dims, (10, 12, 12), 6) | rasterize_ball(dims, (29, 12, 12), 6)
        x, y, z = np.ogrid[:40, :24, :24]
        m |= ((y - 12) ** 2 + (z - 12) ** 2 <= 4) & (x >= 10) & (x <= 29)
        g, labels = extract_pore_graph(VoxelVolume(m.astype(np.uint8)), ExtractionConfig(n_max=64))
        assert g.n_active == 2 and g.throats() == [(0, 1)]
        assert interface_pairs(labels.data) == {(1, 2)}


def test_c07_edt():
    with criterion(7, "EDT equals brute force on 50 random 16^3 volumes", 30.0):
        rng = np.random.default_rng(7)
        for k in range(50):
            x = rng.random((16, 16, 16)) < rng.uniform(0.3, 0.95)
            assert np.array_equal(edt(VoxelVolume(x.astype(np.uint8)), 1).data, brute_edt_sq(x)), k


def test_c08_tpcf():
    with criterion(8, "S2(0) = porosity, Bernoulli(0.3) within 3 SE, pair-scan exact on 16^3", 30.0):
        rng = np.random.default_rng(8)
        for _ in range(5):
            v = VoxelVolume((rng.random((16, 16, 16)) < rng.uniform(0.1, 0.6)).astype(np.uint8))
            assert tpcf(v, [0]).values[0] == porosity(v)
            for axis in range(3):
                for lag in (1, 2, 5, 9, 15):
                    assert tpcf(v, [lag], axis=axis).values[0] == pair_scan_tpcf(v.data, lag, axis)
        p, n = 0.3, 64
        b = VoxelVolume((rng.random((n, n, n)) < p).astype(np.uint8))
        lags = np.arange(1, 17)
        s2 = tpcf(b, lags).values
        # pairs sharing a voxel covary by p^3 - p^4
        se = np.sqrt((p**2 * (1 - p**2) + 2 * (p**3 - p**4)) / (n * n * (n - lags)))
        assert np.all(np.abs(s2 - p**2) <= 3 * se), np.abs(s2 - p**2) / se


def _random_graph(rng, n_max=32):
    n = int(rng.integers(0, n_max + 1))
    pairs = list(itertools.combinations(range(n), 2))
    k = int(rng.integers(0, min(len(pairs), 40) + 1)) if pairs else 0
    edges = [pairs[i] for i in rng.choice(len(pairs), size=k, replace=False)] if k else []
    return edge_graph(n, edges, n_max=n_max, seed=int(rng.integers(1000)))


def test_c09_topology():
    with criterion(9, "Betti numbers, GTE bounds on 100 pairs, Euler vs brute force", 10.0):
        assert graph_summary(edge_graph(3, [(0, 1), (1, 2), (0, 2)])).beta1 == 1
        assert graph_summary(edge_graph(7, [(0, 1), (0, 2), (1, 3), (1, 4), (2, 5), (2, 6)])).beta1 == 0
        cube = [(a, b) for a, b in itertools.combinations(range(8), 2) if bin(a ^ b).count("1") == 1]
        assert graph_summary(edge_graph(8, cube)).beta1 == 5
        rng = np.random.default_rng(9)
        for _ in range(100):
            a, b = _random_graph(rng), _random_graph(rng)
            assert gte(a, a) == 0.0
            assert 0.0 <= gte(a, b) <= 1.0
        shapes = [np.ones((1, 1, 1)), np.ones((2, 2, 2)), np.pad(np.ones((3, 3, 1)), 0)]
        shapes[2][1, 1, 0] = 0
        shapes.append(rasterize_ball((8, 8, 8), (3.5, 3.5, 3.5), 3.2))
        shapes += [rng.random(tuple(rng.integers(1, 9, 3))) < 0.5 for _ in range(20)]
        for x in shapes:
            assert euler_characteristic(VoxelVolume(np.asarray(x, dtype=np.uint8))) == brute_euler(x)
        assert [euler_characteristic(VoxelVolume(np.asarray(x, dtype=np.uint8))) for x in shapes[:3]] == [1, 1, 0]


def test_c10_flow():
    with criterion(10, "tube K within 0.1%, conservation 1e-8, blocked volume K = 0", 10.0):
        dims = (32, 32, 32)
        zs = np.array([3.5, 11.5, 19.5, 27.5])
        rows = np.column_stack([np.full(4, 16 / 31), np.full(4, 16 / 31), zs / 31, np.full(4, 4 / 32)])
        tube = edge_graph(4, [(0, 1), (1, 2), (2, 3)], dims=dims, rows=rows)
        K = permeability(tube, "z", c=1.0).K
        expected = math.pi * 4**4 / (8 * 32 * 32)
        assert abs(K - expected) <= 1e-3 * expected, (K, expected)
        for seed in range(3):
            v = spheres(dims=(32, 32, 32), seed=300 + seed, porosity=0.35)
            net = build_network(volume_graph(v), "z")
            if not net.connected():
                continue
            sol = solve_pressure(net)
            # nodes off the inlet-outlet cluster carry no pressure and no flux
            flux = np.abs(sol.node_net_flux(net, 1.0))[np.isfinite(sol.pressure)]
            assert flux.max() <= 1e-8 * sol.Q and abs(sol.Q - sol.outlet_flux) <= 1e-8 * sol.Q
        blocked = spheres(dims=(24, 24, 24), seed=5, porosity=0.35).data.copy()
        blocked[:, :, 12] = 0
        rep = permeability(VoxelVolume(blocked), "z")
        assert rep.disconnected and rep.K == 0.0


# --- end-to-end ordering -----------------------------------------------------

E2E = dict(parent=SynthConfig(dims=(160, 160, 128), target_porosity=0.3, radius_range=(3, 6), seed=7),
           crop=32, counts=(64, 0, 16), split_seed=1, T=50, epochs=10, lr=2e-3, n_vox=1024,
           denoiser=DenoiserConfig(d=32, n_blocks=2, n_heads=2, n_freq=16, seed=0))


def test_c11_full_beats_boundary_free_ablation():
    with criterion(11, "full model beats M1 on mean TPCF-KL and GTE over 16 held-out crops", 1800.0):
        parent = generate(E2E["parent"])
        split = partition_blocks(parent.dims, E2E["crop"], E2E["counts"], E2E["split_seed"])
        train_vols = [extract_crop(parent, o, E2E["crop"]) for o in split.train]
        test_vols = [extract_crop(parent, o, E2E["crop"]) for o in split.test]
        assert len(train_vols) == 64 and len(test_vols) == 16
        examples = [build_example(v, 64) for v in train_vols]
        schedule = scaled_schedule(E2E["T"], *estimate_priors([e.target for e in examples]))
        refs = [(volume_graph(v), permeability(v, "z")) for v in test_vols]
        scores = {}
        for name in ("full", "m1"):
            model = Denoiser.create(E2E["denoiser"], AblationFlags.ablation(name), schedule)
            cfg = TrainConfig(epochs=E2E["epochs"], lr=E2E["lr"], seed=0, n_vox=E2E["n_vox"])
            train(examples, model, schedule, LossWeights(), cfg)
            kl, topo = [], []
            for i, v in enumerate(test_vols):
                _, _, vols = reconstruct(v, model, 64, SamplerConfig(K=1, seed=i))
                row = compare_volumes(vols[0], v, ref_graph=refs[i][0], ref_flow=refs[i][1])
                kl.append(row["tpcf_kl"])
                topo.append(row["gte"])
            scores[name] = (float(np.mean(kl)), float(np.mean(topo)))
            print(f"  {name}: mean TPCF-KL {scores[name][0]:.4f}, mean GTE {scores[name][1]:.4f}")
        assert scores["full"][0] < scores["m1"][0], scores
        assert scores["full"][1] < scores["m1"][1], scores


def test_c12_permutation_robustness():
    with criterion(12, "decode and graph metrics bit-identical under 10 slot permutations", 60.0):
        for seed in range(2):
            v = spheres(dims=(32, 32, 32), seed=400 + seed)
            g = volume_graph(v)
            rep = permutation_robustness(g, trials=10, seed=seed, obs=v)
            assert len(rep["rows"]) == 10
            assert all(r["field_bit_identical"] and r["volume_bit_identical"] for r in rep["rows"])
            assert all(val == 0.0 for val in rep["max"].values()), rep["max"]
            base = graph_summary(g).to_dict()
            rng = np.random.default_rng(seed)
            for _ in range(10):
                assert graph_summary(g.permuted(rng.permutation(g.n_max))).to_dict() == base


def test_c13_cli_replay(tmp_path):
    with criterion(13, "every CLI command replays bit-identically from its manifest", None):
        cfg = {"synth": {"dims": [48, 48, 32], "radius_range": [2.5, 4.5], "seed": 13}, "crop": 16,
               "counts": [3, 0, 2], "split_seed": 0}
        (tmp_path / "data.json").write_text(json.dumps(cfg))
        d, test = tmp_path / "data", tmp_path / "data" / "test" / "0000.gtpv"
        runs = [
            (["gen-data", "--config", tmp_path / "data.json", "--out", d], d / "run_manifest.json"),
            (["extract", "--in", test, "--n-max", 64, "--out", tmp_path / "g.json"], tmp_path / "g.json.run.json"),
            (["boundary", "--in", test, "--out", tmp_path / "gb.json"], tmp_path / "gb.json.run.json"),
            (["train", "--data", d, "--epochs", 1, "--T", 4, "--d", 8, "--n-blocks", 1, "--n-freq", 4,
              "--n-vox", 128, "--limit", 2, "--out", tmp_path / "ck"], tmp_path / "ck" / "run_manifest.json"),
            (["sample", "--ckpt", tmp_path / "ck", "--gb", tmp_path / "gb.json", "-K", 2, "--out", tmp_path / "s"],
             tmp_path / "s" / "run_manifest.json"),
            (["decode", "--graph", tmp_path / "s" / "sample_000.json", "--obs", test, "--out", tmp_path / "s" / "r.gtpv"],
             tmp_path / "s" / "r.gtpv.run.json"),
            (["eval", "--rec", tmp_path / "s" / "r.gtpv", "--ref", test, "--out", tmp_path / "e.json"],
             tmp_path / "e.json.run.json"),
            (["flow", "--in", test, "--out", tmp_path / "f.json"], tmp_path / "f.json.run.json"),
            (["gap-sweep", "--ckpt", tmp_path / "ck", "--M", "14", "--size", 16, "--out", tmp_path / "gap"],
             tmp_path / "gap" / "run_manifest.json"),
        ]
        for argv, manifest in runs:
            assert cli_main([str(a) for a in argv]) == 0, argv[0]
            assert manifest.exists(), manifest
        for argv, manifest in runs:
            assert cli_main(["replay", str(manifest)]) == 0, f"replay of {argv[0]} failed"
