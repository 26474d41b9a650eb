import numpy as np
import pytest

from leapocc.autodiff import F, Linear, ParameterStore, Tape, Value, backward
from leapocc.autodiff.gradcheck import numerical_grad, rel_error
from leapocc.body import bone_transforms, make_synthetic_model, rodrigues, sample_pose
from leapocc.encoders import (
    GlobalEncoder,
    SkinningConditioning,
    build_inverse_conditioning,
    pose_encode,
)
from leapocc.networks import BoneProjection, PointNetEncoder, StructureEncoder


@pytest.fixture(scope="module")
def body():
    return make_synthetic_model(0)


def _posed(body, seed):
    rng = np.random.default_rng(seed)
    return bone_transforms(body, rng.normal(size=body.n_betas), rodrigues(sample_pose(rng)),
                           rng.normal(size=3))


class TestStructureEncoder:
    def test_node_parameter_count(self, body):
        store = ParameterStore()
        StructureEncoder(store, "s", body.parents, np.random.default_rng(0))
        for k in range(body.n_joints):
            assert store.count(f"s.node{k}.") == 500

    def test_output_length(self, body):
        enc = StructureEncoder(ParameterStore(), "s", body.parents, np.random.default_rng(0))
        ts = _posed(body, 1)
        assert enc(ts.rotations, ts.joints, ts.lengths).shape == (6 * body.n_joints,)

    def test_sibling_permutation(self):
        # root 0 with two single-bone children 1 and 2; swap them
        parents = [-1, 0, 0]
        rng = np.random.default_rng(0)
        store = ParameterStore()
        enc = StructureEncoder(store, "s", parents, rng)
        rot = rodrigues(rng.normal(size=(3, 3)))
        joints = rng.normal(size=(3, 3))
        lengths = rng.uniform(0.1, 1, size=3)
        out = enc(Value(rot), Value(joints), Value(lengths)).data

        perm = [0, 2, 1]
        store2 = ParameterStore()
        enc2 = StructureEncoder(store2, "s", parents, np.random.default_rng(1))
        for name in store:
            store2[name].data[...] = store[name].data
        for part in ("fc_0.weight", "fc_0.bias", "fc_1.weight", "fc_1.bias"):
            store2[f"s.node1.{part}"].data[...] = store[f"s.node2.{part}"].data
            store2[f"s.node2.{part}"].data[...] = store[f"s.node1.{part}"].data
        # the root's parent slot reads the full pose vector; permute its input columns
        W = store["s.root.weight"].data
        cols = np.concatenate([np.arange(9 * k, 9 * k + 9) for k in perm]
                              + [27 + np.arange(3 * k, 3 * k + 3) for k in perm])
        store2["s.root.weight"].data[...] = W[:, cols]
        out2 = enc2(Value(rot[perm]), Value(joints[perm]), Value(lengths[perm])).data
        blocks = out.reshape(3, 6)
        assert np.allclose(out2.reshape(3, 6), blocks[perm], atol=1e-12)

    def test_subtree_locality(self, body):
        # the root slot reads the whole pose vector; zero it so only tree edges carry
        # information, then a shoulder rotation may only change its own subtree
        store = ParameterStore()
        enc = StructureEncoder(store, "s", body.parents, np.random.default_rng(0))
        store["s.root.weight"].data[...] = 0
        ts = _posed(body, 2)
        rot = ts.rotations.data.copy()
        a = enc(Value(rot), ts.joints, ts.lengths).data.reshape(-1, 6)
        rot[4] = rodrigues(np.array([0.3, -0.2, 0.5])) @ rot[4]
        b = enc(Value(rot), ts.joints, ts.lengths).data.reshape(-1, 6)
        subtree = {4, 5, 6}
        for j in range(body.n_joints):
            if j not in subtree:
                assert np.array_equal(a[j], b[j])


class TestPoseEncode:
    def test_rest_pose_gives_point(self, body):
        ts = bone_transforms(body, np.zeros(body.n_betas), body.rest_pose)
        t0 = np.array([0.3, -1.2, 2.0])
        out = pose_encode(ts.B, t0).data.reshape(-1, 3)
        assert np.allclose(out, t0, atol=1e-14)

    def test_rest_pose_origin(self, body):
        ts = bone_transforms(body, np.zeros(body.n_betas), body.rest_pose)
        assert np.allclose(pose_encode(ts.B, np.zeros(3)).data, 0, atol=1e-14)

    def test_matches_matrix_inverse(self, body):
        ts = _posed(body, 3)
        p = np.array([0.1, 0.2, -0.3])
        out = pose_encode(ts.B, p).data.reshape(-1, 3)
        for k in range(body.n_joints):
            ref = np.linalg.inv(ts.B.data[k]) @ np.append(p, 1.0)
            assert np.allclose(out[k], ref[:3], atol=1e-12)

    def test_translation_invariant_at_root(self, body):
        rng = np.random.default_rng(4)
        betas, rot = rng.normal(size=body.n_betas), rodrigues(sample_pose(rng))
        a = bone_transforms(body, betas, rot, np.zeros(3))
        b = bone_transforms(body, betas, rot, np.array([1.0, -2.0, 0.5]))
        va = pose_encode(a.B, a.root_location).data
        vb = pose_encode(b.B, b.root_location).data
        assert np.allclose(va, vb, atol=1e-12)


class TestPointNet:
    def _enc(self):
        return PointNetEncoder(ParameterStore(), "p", 16, 8, np.random.default_rng(0))

    def test_permutation_bit_identical(self):
        enc = self._enc()
        pts = np.random.default_rng(1).normal(size=(50, 3))
        perm = np.random.default_rng(2).permutation(50)
        assert np.array_equal(enc(pts).data, enc(pts[perm]).data)

    def test_duplicates(self):
        enc = self._enc()
        pts = np.random.default_rng(1).normal(size=(30, 3))
        assert np.array_equal(enc(pts).data, enc(np.concatenate([pts, pts])).data)

    def test_single_point(self):
        enc = self._enc()
        p = np.array([[0.2, -0.1, 0.4]])
        net = enc.blocks[0](enc.fc_pos(Value(p)))
        for block in enc.blocks[1:]:
            net = block(F.concat([net, net], axis=-1))
        ref = enc.fc_out(F.relu(net[0])).data
        assert np.allclose(enc(p).data, ref, atol=1e-14)

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            self._enc()(np.zeros((0, 3)))


class TestConditioning:
    def test_widths(self, body):
        cond = SkinningConditioning(ParameterStore(), "c", body.n_joints, np.random.default_rng(0))
        rng = np.random.default_rng(1)
        v = rng.normal(size=(body.n_vertices, 3))
        c_fwd = cond.forward(v, v)
        assert c_fwd.shape == (200,)
        ts = _posed(body, 5)
        assert cond.inverse(c_fwd, ts.rotations, ts.joints).shape == (280,)

    def test_rest_halves_use_different_encoders(self, body):
        cond = SkinningConditioning(ParameterStore(), "c", body.n_joints, np.random.default_rng(0))
        v = body.template
        c = cond.forward(v, v).data
        assert np.array_equal(c[:100], cond.canonical(v).data)
        assert np.array_equal(c[100:], cond.posed(v).data)
        assert not np.allclose(c[:100], c[100:])

    def test_zero_linear_gives_bias(self, body):
        store = ParameterStore()
        lin = Linear(store, "pose", 12 * body.n_joints, 80, np.random.default_rng(0))
        store["pose.weight"].data[...] = 0
        ts = _posed(body, 6)
        out = build_inverse_conditioning(lin, np.ones(200), ts.rotations, ts.joints).data
        assert np.array_equal(out[200:], store["pose.bias"].data)
        assert np.array_equal(out[:200], np.ones(200))

    def test_gradient_through_linear(self, body):
        store = ParameterStore()
        lin = Linear(store, "pose", 12 * body.n_joints, 80, np.random.default_rng(0))
        ts = _posed(body, 7)
        c_fwd = np.random.default_rng(8).normal(size=200)

        def f():
            out = build_inverse_conditioning(lin, c_fwd, ts.rotations, ts.joints)[200:]
            return F.sum(F.mul(out, out))

        with Tape() as tape:
            loss = f()
        backward(tape, loss)
        W = store["pose.weight"]
        idx = np.random.default_rng(9).choice(W.data.size, 40, replace=False)
        num = numerical_grad(lambda: f().item(), W.data, h=1e-6, indices=idx)
        assert rel_error(W.grad.reshape(-1)[idx], num, floor=1e-8).max() < 1e-6


class TestBoneProjection:
    def test_zero_weights_give_bias(self):
        store = ParameterStore()
        proj = BoneProjection(store, "b", 5, 20, 12, np.random.default_rng(0))
        store["b.weight"].data[...] = 0
        out = proj(np.random.default_rng(1).normal(size=20)).data
        assert np.array_equal(out, store["b.bias"].data)

    def test_matches_per_bone_matmul(self):
        store = ParameterStore()
        proj = BoneProjection(store, "b", 5, 20, 12, np.random.default_rng(0))
        z = np.random.default_rng(1).normal(size=20)
        W, b = store["b.weight"].data, store["b.bias"].data
        ref = np.stack([W[k] @ z + b[k] for k in range(5)])
        assert np.allclose(proj(z).data, ref, atol=1e-13)


class TestGlobalEncoder:
    def test_code_layout(self, body):
        K = body.n_joints
        enc = GlobalEncoder(ParameterStore(), "e", body.parents, np.random.default_rng(0))
        ts = _posed(body, 10)
        v = np.random.default_rng(11).normal(size=(body.n_vertices, 3))
        z = enc.code(ts, v, v).data
        assert z.shape == (128 + 6 * K + 3 * K,)
        assert np.array_equal(z[:128], enc.shape(v, v).data)
        assert np.array_equal(z[128:128 + 6 * K],
                              enc.structure(ts.rotations, ts.joints, ts.lengths).data)
        assert np.array_equal(z[128 + 6 * K:], pose_encode(ts.B, ts.root_location).data)
        assert enc.bone_codes(Value(z)).shape == (K, 12)

    def test_pose_only(self, body):
        enc = GlobalEncoder(ParameterStore(), "e", body.parents, np.random.default_rng(0),
                            encoders=["pose"])
        ts = _posed(body, 12)
        assert enc.code(ts).shape == (3 * body.n_joints,)

    def test_purity(self, body):
        enc = GlobalEncoder(ParameterStore(), "e", body.parents, np.random.default_rng(0))
        ts = _posed(body, 13)
        v = body.template
        assert np.array_equal(enc.code(ts, v, v).data, enc.code(ts, v, v).data)
