import numpy as np
import pytest

from leapocc.autodiff import Tape, backward
from leapocc.body import make_synthetic_model, posed_vertices, rodrigues, sample_pose
from leapocc.io.config import RunConfig
from leapocc.mesh import Mesh, box_mesh, icosphere
from leapocc.occupancy import OccupancyModel
from leapocc.gradcheck import small_network
from leapocc.training.dataset import build_dataset, dataset_arrays, dataset_from_arrays
from leapocc.training.evaluate import eval_iou, oracle_predictor
from leapocc.training.losses import lbs_weight_loss, occupancy_loss
from leapocc.training.metrics import chamfer_distance, eval_chamfer, iou_from_labels
from leapocc.training.oracle import InsideOracle, MeshNotWatertight, inside_mesh, winding_number
from leapocc.training.sampling import (
    nearest_vertex,
    padded_bbox,
    sample_mixture,
    sample_near_surface,
    sample_training_points,
)
from leapocc.training.trainer import MetricLog, Trainer, TrainingAborted


@pytest.fixture(scope="module")
def body():
    return make_synthetic_model(0)


def _tiny_config(**train):
    cfg = RunConfig()
    cfg.network = small_network()
    cfg.data.n_poses, cfg.data.n_heldout, cfg.data.pool_size = 4, 1, 512
    cfg.train.batch_poses = 2
    cfg.train.heldout_points = 256
    cfg.train.log_every = 5
    cfg.train.dtype = "float64"
    for k, v in train.items():
        setattr(cfg.train, k, v)
    return cfg


class TestOracle:
    def test_unit_cube(self):
        cube = box_mesh(np.zeros(3), np.ones(3))
        assert inside_mesh(np.array([[0.5, 0.5, 0.5], [2.0, 0.0, 0.0]]), cube.vertices,
                           cube.faces).tolist() == [True, False]

    def test_open_box_rejected(self):
        cube = box_mesh(np.zeros(3), np.ones(3))
        with pytest.raises(MeshNotWatertight):
            inside_mesh(np.array([[0.5, 0.5, 0.5]]), cube.vertices, cube.faces[2:])

    def test_agrees_with_winding_number(self, body):
        rng = np.random.default_rng(0)
        V = posed_vertices(body, rng.normal(size=body.n_betas), rodrigues(sample_pose(rng))).data
        pts = sample_mixture(V, body.faces, 2000, rng)
        wn = winding_number(pts, V, body.faces)
        far = np.abs(np.abs(wn) - 0.5) > 1e-3
        assert np.array_equal(inside_mesh(pts[far], V, body.faces), wn[far] > 0.5)

    def test_vertex_queries_decided(self):
        # queries exactly on vertices and edges are jittered, never left undecided
        sphere = icosphere(1.0, 2)
        out = InsideOracle(sphere.vertices, sphere.faces)(sphere.vertices)
        assert out.shape == (len(sphere.vertices),)


class TestSampling:
    def test_uniform_in_padded_box(self, body):
        rng = np.random.default_rng(1)
        pts = sample_mixture(body.template, body.faces, 2000, rng)
        lo, hi = padded_bbox(body.template, 0.1)
        assert np.all((pts[:1000] >= lo) & (pts[:1000] <= hi))

    def test_odd_count_rejected(self, body):
        with pytest.raises(ValueError):
            sample_mixture(body.template, body.faces, 11, np.random.default_rng(0))

    def test_near_surface_distance(self):
        # on a large box the distance to the surface is the normal component of the
        # noise, so the mean should match a direct Monte-Carlo estimate of E|N(0, s^2)|
        box = box_mesh(np.full(3, -20.0), np.full(3, 20.0), subdivisions=1)
        rng = np.random.default_rng(2)
        pts = sample_near_surface(box.vertices, box.faces, 40_000, rng, 0.1)
        dist = np.min(np.abs(np.abs(pts)[:, :, None] - 20.0), axis=(1, 2))
        reference = np.abs(np.random.default_rng(3).normal(scale=0.1, size=1_000_000)).mean()
        assert abs(dist.mean() - reference) / reference < 0.02

    def test_deterministic(self, body):
        rot = rodrigues(sample_pose(np.random.default_rng(4)))
        a = sample_training_points(body, np.zeros(body.n_betas), rot, 200, 5)
        b = sample_training_points(body, np.zeros(body.n_betas), rot, 200, 5)
        assert np.array_equal(a.points, b.points) and np.array_equal(a.occupancy, b.occupancy)
        assert np.array_equal(a.nearest, b.nearest)

    def test_small_noise_returns_generating_vertex(self):
        V = np.array([[0.0, 0, 0], [1, 0, 0], [0, 1, 0], [0, 0, 1]])
        x = np.array([[0.9, 0.05, 0.0], [0.01, 0.02, 0.97]])
        assert nearest_vertex(x, V).tolist() == [1, 3]


class TestLosses:
    def test_occupancy(self):
        t = np.array([0.0, 1.0, 1.0, 0.0])
        assert occupancy_loss(t, t).item() == 0.0
        assert occupancy_loss(np.full(4, 0.5), t).item() == 0.25
        rng = np.random.default_rng(0)
        p, o = rng.random(30), rng.integers(0, 2, 30).astype(float)
        assert np.isclose(occupancy_loss(p, o).item(), sum((a - b) ** 2 for a, b in zip(p, o)) / 30)

    def test_lbs(self):
        w = np.array([[0.2, 0.8]])
        assert lbs_weight_loss(w, w).item() == 0.0
        assert lbs_weight_loss(np.array([[1.0, 0]]), np.array([[0.0, 1]])).item() == 2.0
        rng = np.random.default_rng(1)
        a, b = rng.random((7, 4)), rng.random((7, 4))
        ref = sum(sum(abs(a[i, k] - b[i, k]) for k in range(4)) for i in range(7)) / 7
        assert np.isclose(lbs_weight_loss(a, b).item(), ref)

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            occupancy_loss(np.zeros(3), np.zeros(4))


class TestMetrics:
    def test_iou_hand_case(self):
        truth = np.array([1, 1, 1, 0, 0, 1, 0, 0, 0, 0], bool)
        pred = np.array([1, 1, 1, 1, 1, 0, 0, 0, 0, 0], bool)
        assert iou_from_labels(pred, truth) == 50.0

    def test_iou_oracle_and_complement(self):
        sphere = icosphere(1.0, 3)
        oracle = oracle_predictor(sphere)
        assert eval_iou(oracle, sphere, 4000, 0) == 100.0
        assert eval_iou(lambda p: ~oracle(p), sphere, 4000, 0) == 0.0

    def test_iou_empty_union(self):
        with pytest.raises(ValueError):
            iou_from_labels(np.zeros(4, bool), np.zeros(4, bool))

    def test_chamfer_identical(self):
        pts = np.random.default_rng(0).normal(size=(500, 3))
        assert chamfer_distance(pts, pts) == 0.0

    def test_chamfer_offset_spheres(self):
        # mean squared distance between unit spheres offset by delta is delta^2 / 3
        delta = 0.2
        a = icosphere(1.0, 5)
        b = icosphere(1.0, 5, center=(delta, 0.0, 0.0))
        value = eval_chamfer(a, b, 10_000, seed=0)
        expected = delta**2 / 3 * 1e4
        assert abs(value - expected) / expected < 0.2

    def test_chamfer_empty(self):
        with pytest.raises(ValueError):
            eval_chamfer(Mesh(np.zeros((0, 3)), np.zeros((0, 3), int)), icosphere())


class TestDataset:
    def test_deterministic_and_roundtrip(self, body):
        cfg = _tiny_config()
        a = build_dataset(body, cfg.data, 3)
        b = build_dataset(body, cfg.data, 3)
        arrays = dataset_arrays(a)
        other = dataset_arrays(b)
        assert arrays.keys() == other.keys()
        assert all(np.array_equal(arrays[k], other[k]) for k in arrays)
        back = dataset_from_arrays(body, arrays, len(a.train), len(a.heldout))
        assert np.array_equal(back.train[1].mapped, a.train[1].mapped)
        assert np.array_equal(back.heldout[0].posed, a.heldout[0].posed)

    def test_heldout_only_matches(self, body):
        cfg = _tiny_config()
        full = build_dataset(body, cfg.data, 3)
        held = build_dataset(body, cfg.data, 3, train=False)
        assert held.train == []
        pool = held.heldout[0].pools["posed_near"]
        assert np.array_equal(pool.points, full.heldout[0].pools["posed_near"].points)

    def test_labels_match_oracle(self, body):
        cfg = _tiny_config()
        ds = build_dataset(body, cfg.data, 4)
        pose = ds.train[0]
        pool = pose.pools["canonical_uniform"]
        assert np.array_equal(pool.occupancy,
                              inside_mesh(pool.points.astype(float), pose.canonical, body.faces))


@pytest.fixture(scope="module")
def tiny_data(body):
    return build_dataset(body, _tiny_config().data, 0)


def _train(body, data, cfg, seed=0):
    model = OccupancyModel(body, cfg.network, seed=seed, dtype=np.float64)
    trainer = Trainer(model, data, cfg, MetricLog())
    trainer.train_lbs(10)
    trainer.train_occupancy(10)
    return trainer


class TestTrainer:
    def test_identical_logs(self, body, tiny_data):
        cfg = _tiny_config()
        a = _train(body, tiny_data, cfg).metrics.records
        b = _train(body, tiny_data, cfg).metrics.records
        assert a == b
        assert {r["stage"] for r in a} == {"lbs", "occupancy"}

    def test_stage_freezing(self, body, tiny_data):
        cfg = _tiny_config()
        model = OccupancyModel(body, cfg.network, seed=0, dtype=np.float64)
        trainer = Trainer(model, tiny_data, cfg)
        before = {k: v.data.copy() for k, v in model.store.params.items()}
        trainer.train_lbs(2)
        changed = {k for k, v in model.store.params.items() if not np.array_equal(v.data, before[k])}
        assert changed and all(k.startswith("lbs.") for k in changed)
        mid = {k: v.data.copy() for k, v in model.store.params.items()}
        trainer.train_occupancy(2)
        changed = {k for k, v in model.store.params.items() if not np.array_equal(v.data, mid[k])}
        assert changed and not any(k.startswith("lbs.") for k in changed)

    def test_deterministic_weight_mode(self, body, tiny_data):
        cfg = _tiny_config(deterministic_weights=True)
        trainer = _train(body, tiny_data, cfg)
        assert "heldout_iou" in trainer.metrics.records[-1]

    def test_nan_aborts(self, body, tiny_data):
        cfg = _tiny_config()
        model = OccupancyModel(body, cfg.network, seed=0, dtype=np.float64)
        model.store["onet.fc_out.bias"].data[...] = np.nan
        trainer = Trainer(model, tiny_data, cfg)
        trainer.prepare_occupancy()
        with pytest.raises(TrainingAborted):
            trainer.train_occupancy(1)

    def test_one_point_loss_gradient(self, body, tiny_data):
        cfg = _tiny_config()
        cfg.train.occ_uniform, cfg.train.occ_posed_surface, cfg.train.occ_canonical_surface = 1, 1, 1
        model = OccupancyModel(body, cfg.network, seed=0, dtype=np.float64)
        rng = np.random.default_rng(5)
        for name, v in model.store.params.items():
            if name.endswith("fc_1.weight"):
                v.data[...] = rng.normal(scale=0.3, size=v.shape)
        trainer = Trainer(model, tiny_data, cfg)
        trainer.prepare_occupancy()
        batch = trainer._occ_batch([1])
        xc, w, d, occ = (a[:, :1] for a in batch)
        ctx_ts = tiny_data.transforms([1])

        def loss_fn():
            ctx = model.context(ctx_ts, skinning=False)
            return occupancy_loss(model.decode(ctx, xc, w, d, training=False), occ)

        with Tape() as tape:
            loss = loss_fn()
        backward(tape, loss)
        for name in ("onet.fc_p.weight", "onet.block0.fc_1.weight", "enc.proj.weight",
                     "enc.structure.node3.fc_0.weight"):
            p = model.store[name]
            flat = p.data.reshape(-1)
            for i in rng.choice(flat.size, 4, replace=False):
                orig = flat[i]
                flat[i] = orig + 1e-6
                up = loss_fn().item()
                flat[i] = orig - 1e-6
                down = loss_fn().item()
                flat[i] = orig
                num = (up - down) / 2e-6
                a = p.grad.reshape(-1)[i]
                assert abs(a - num) <= 1e-4 * max(abs(a), abs(num), 1e-6), name


@pytest.mark.slow
def test_loss_decreases_in_first_500_iterations(body):
    cfg = RunConfig()
    cfg.data.n_poses, cfg.data.n_heldout, cfg.data.pool_size = 50, 1, 2048
    cfg.train.lr = 1e-3
    cfg.train.log_every = 10_000
    data = build_dataset(body, cfg.data, 0)
    model = OccupancyModel(body, cfg.network, seed=0, dtype=np.float32)
    trainer = Trainer(model, data, cfg)
    trainer.train_lbs(500)
    trainer.train_occupancy(500)
    for stage in ("lbs", "occupancy"):
        h = np.convolve(trainer.history[stage], np.ones(50) / 50, mode="valid")
        assert h[-1] <= 0.8 * h[0], stage
