import numpy as np
import pytest

from leapocc.autodiff import Value
from leapocc.autodiff.gradcheck import numerical_grad, rel_error, tape_grads
from leapocc.autodiff import F
from leapocc.body import (
    BodyModel,
    beta_from_joints,
    bone_transforms,
    canonical_vertices,
    estimate_vertices_from_transforms,
    joints_from_shape,
    lbs_apply,
    make_synthetic_model,
    rodrigues,
    rodrigues_value,
    sample_pose,
)
from leapocc.mesh import is_watertight


@pytest.fixture(scope="module")
def model():
    return make_synthetic_model(0)


def _random_rotations(rng, K):
    return rodrigues(rng.normal(scale=0.6, size=(K, 3)))


def _identity(K):
    return np.tile(np.eye(3), (K, 1, 1))


class TestCanonicalVertices:
    def test_rest(self, model):
        V = canonical_vertices(model, np.zeros(model.n_betas), model.rest_pose).data
        assert np.array_equal(V, model.template)

    def test_single_component(self, model):
        beta = np.eye(model.n_betas)[0]
        V = canonical_vertices(model, beta, model.rest_pose).data
        np.testing.assert_allclose(V, model.template + model.shapedirs[:, :, 0], atol=1e-14)

    def test_brute_force(self, model):
        rng = np.random.default_rng(1)
        beta = rng.normal(size=model.n_betas)
        pose = _random_rotations(rng, model.n_joints)
        V = canonical_vertices(model, beta, pose).data
        dpose = (pose.reshape(-1) - model.rest_pose.reshape(-1))
        expect = np.empty_like(model.template)
        for i in range(model.n_vertices):
            for c in range(3):
                s = model.template[i, c]
                for n in range(model.n_betas):
                    s += beta[n] * model.shapedirs[i, c, n]
                for m in range(len(dpose)):
                    s += dpose[m] * model.posedirs[i, c, m]
                expect[i, c] = s
        np.testing.assert_allclose(V, expect, atol=1e-12)

    def test_dimension_mismatch(self, model):
        with pytest.raises(ValueError):
            canonical_vertices(model, np.zeros(model.n_betas + 1), model.rest_pose)


class TestJoints:
    def test_rest(self, model):
        J = joints_from_shape(model, np.zeros(model.n_betas)).data
        np.testing.assert_allclose(J, model.joint_regressor @ model.template, atol=1e-14)

    def test_linearity(self, model):
        e = np.eye(model.n_betas)[2]
        J0 = joints_from_shape(model, np.zeros(model.n_betas)).data
        d1 = joints_from_shape(model, e).data - J0
        d2 = joints_from_shape(model, 2 * e).data - J0
        np.testing.assert_allclose(d2, 2 * d1, atol=1e-13)

    def test_loop_oracle(self, model):
        beta = np.random.default_rng(2).normal(size=model.n_betas)
        shaped = model.template.copy()
        for n in range(model.n_betas):
            shaped += beta[n] * model.shapedirs[:, :, n]
        expect = np.zeros((model.n_joints, 3))
        for k in range(model.n_joints):
            for i in range(model.n_vertices):
                expect[k] += model.joint_regressor[k, i] * shaped[i]
        np.testing.assert_allclose(joints_from_shape(model, beta).data, expect, atol=1e-12)


class TestBetaFromJoints:
    def test_round_trip(self, model):
        rng = np.random.default_rng(3)
        for _ in range(100):
            beta = rng.normal(size=model.n_betas)
            est = beta_from_joints(model, joints_from_shape(model, beta)).data
            assert np.abs(est - beta).max() < 1e-8

    def test_rest_joints(self, model):
        est = beta_from_joints(model, model.joint_regressor @ model.template).data
        assert np.abs(est).max() < 1e-12

    def test_orthogonal_noise(self, model):
        rng = np.random.default_rng(4)
        A = model.joint_shape_matrix
        Q, _ = np.linalg.qr(A, mode="complete")
        complement = Q[:, model.n_betas:]
        beta = rng.normal(size=model.n_betas)
        J = joints_from_shape(model, beta).data
        noise = (complement @ rng.normal(size=complement.shape[1])).reshape(J.shape) * 0.05
        est = beta_from_joints(model, J + noise).data
        assert np.abs(est - beta).max() < 1e-8

    def test_rank_deficient(self, model):
        arrays = model.to_arrays()
        arrays["shapedirs"] = arrays["shapedirs"].copy()
        arrays["shapedirs"][:, :, 1] = arrays["shapedirs"][:, :, 0]
        bad = BodyModel.from_arrays(arrays)
        with pytest.raises(np.linalg.LinAlgError):
            beta_from_joints(bad, bad.template_joints)


def _chain_model():
    """Two bones: root at the origin, child joint at (1, 0, 0)."""
    template = np.array([[0.0, 0, 0], [1.0, 0, 0], [2.0, 0, 0], [0, 1.0, 0]])
    reg = np.array([[1.0, 0, 0, 0], [0, 1.0, 0, 0]])
    weights = np.array([[1.0, 0], [0, 1.0], [0, 1.0], [1.0, 0]])
    return BodyModel(template=template, shapedirs=np.zeros((4, 3, 1)),
                     posedirs=np.zeros((4, 3, 18)), joint_regressor=reg, weights=weights,
                     parents=np.array([-1, 0]), faces=np.array([[0, 1, 2], [0, 2, 3]]))


class TestBoneTransforms:
    def test_rest_identity(self, model):
        rng = np.random.default_rng(5)
        for _ in range(10):
            ts = bone_transforms(model, rng.normal(size=model.n_betas), model.rest_pose)
            assert np.abs(ts.B.data - np.eye(4)).max() < 1e-10

    def test_two_bone_chain(self):
        m = _chain_model()
        pose = _identity(2)
        pose[1] = rodrigues(np.array([0, 0, np.pi / 2]))
        ts = bone_transforms(m, np.zeros(1), pose)
        p = ts.B.data[1] @ np.array([2.0, 0, 0, 1])
        np.testing.assert_allclose(p[:3], [1.0, 1.0, 0.0], atol=1e-15)
        np.testing.assert_allclose(ts.lengths.data, [0.0, 1.0])

    def test_one_hot_lbs(self, model):
        rng = np.random.default_rng(6)
        pose = _random_rotations(rng, model.n_joints)
        ts = bone_transforms(model, rng.normal(size=model.n_betas), pose, rng.normal(size=3))
        V = rng.normal(size=(50, 3))
        bones = rng.integers(0, model.n_joints, size=50)
        W = np.eye(model.n_joints)[bones]
        out = lbs_apply(V, W, ts.B.data).data
        for i in range(50):
            expect = ts.B.data[bones[i]] @ np.append(V[i], 1.0)
            np.testing.assert_allclose(out[i], expect[:3], atol=1e-12)

    def test_bottom_row(self, model):
        rng = np.random.default_rng(7)
        ts = bone_transforms(model, rng.normal(size=model.n_betas),
                             _random_rotations(rng, model.n_joints), rng.normal(size=3))
        for M in (ts.G.data, ts.B.data):
            np.testing.assert_array_equal(M[:, 3], np.tile([0, 0, 0, 1.0], (model.n_joints, 1)))

    def test_local_equals_world_times_rest_inverse(self, model):
        rng = np.random.default_rng(8)
        beta = rng.normal(size=model.n_betas)
        pose = _random_rotations(rng, model.n_joints)
        G = bone_transforms(model, beta, pose).G.data
        G0 = bone_transforms(model, beta, model.rest_pose).G.data
        B = bone_transforms(model, beta, pose).B.data
        np.testing.assert_allclose(B, G @ np.linalg.inv(G0), atol=1e-12)

    def test_lengths(self, model):
        ts = bone_transforms(model, np.zeros(model.n_betas), model.rest_pose)
        J = ts.joints.data
        assert ts.lengths.data[0] == pytest.approx(np.linalg.norm(J[0]))
        for k in range(1, model.n_joints):
            p = model.parents[k]
            assert ts.lengths.data[k] == pytest.approx(np.linalg.norm(J[k] - J[p]))


class TestLBS:
    def test_identity(self, model):
        B = np.tile(np.eye(4), (model.n_joints, 1, 1))
        np.testing.assert_allclose(lbs_apply(model.template, model.weights, B).data,
                                   model.template, atol=1e-15)

    def test_loop_oracle(self, model):
        rng = np.random.default_rng(9)
        ts = bone_transforms(model, rng.normal(size=model.n_betas),
                             _random_rotations(rng, model.n_joints))
        B = ts.B.data
        V = model.template[:40]
        W = model.weights[:40]
        out = lbs_apply(V, W, B).data
        for i in range(40):
            acc = np.zeros(4)
            for k in range(model.n_joints):
                acc += W[i, k] * (B[k] @ np.append(V[i], 1.0))
            np.testing.assert_allclose(out[i], acc[:3] / acc[3], atol=1e-12)

    def test_linearity(self, model):
        rng = np.random.default_rng(10)
        B = bone_transforms(model, np.zeros(model.n_betas),
                            _random_rotations(rng, model.n_joints)).B.data
        V1, V2 = rng.normal(size=(2, model.n_vertices, 3))
        a, b = 0.3, 0.7
        lhs = lbs_apply(a * V1 + b * V2, model.weights, B).data
        rhs = a * lbs_apply(V1, model.weights, B).data + b * lbs_apply(V2, model.weights, B).data
        np.testing.assert_allclose(lhs, rhs, atol=1e-12)

    def test_rigid_invariance(self, model):
        rng = np.random.default_rng(11)
        B = bone_transforms(model, np.zeros(model.n_betas),
                            _random_rotations(rng, model.n_joints)).B.data
        R = rodrigues(rng.normal(size=3))
        t = rng.normal(size=3)
        T = np.eye(4)
        T[:3, :3], T[:3, 3] = R, t
        V = lbs_apply(model.template, model.weights, B).data
        Vt = lbs_apply(model.template, model.weights, T @ B).data
        np.testing.assert_allclose(Vt, V @ R.T + t, atol=1e-12)


class TestEstimateVertices:
    def test_rest_round_trip(self, model):
        beta = np.random.default_rng(12).normal(size=model.n_betas)
        ts = bone_transforms(model, beta, model.rest_pose)
        canon, posed = estimate_vertices_from_transforms(model, ts)
        expect = canonical_vertices(model, beta, model.rest_pose).data
        np.testing.assert_allclose(canon.data, expect, atol=1e-10)
        np.testing.assert_allclose(posed.data, canon.data, atol=1e-12)

    def test_posed(self, model):
        rng = np.random.default_rng(13)
        beta = rng.normal(size=model.n_betas)
        pose = _random_rotations(rng, model.n_joints)
        ts = bone_transforms(model, beta, pose, rng.normal(size=3))
        _, posed = estimate_vertices_from_transforms(model, ts)
        expect = lbs_apply(canonical_vertices(model, beta, pose), model.weights, ts.B).data
        assert np.abs(posed.data - expect).max() < 1e-8

    def test_pose_gradient(self, model):
        rng = np.random.default_rng(14)
        beta = rng.normal(size=model.n_betas)
        aa = Value(rng.normal(scale=0.5, size=(model.n_joints, 3)), requires_grad=True)

        def fn():
            ts = bone_transforms(model, beta, rodrigues_value(aa))
            _, posed = estimate_vertices_from_transforms(model, ts)
            return F.sum(F.square(posed))

        (analytic,) = tape_grads(fn, [aa])
        numeric = numerical_grad(lambda: fn().item(), aa.data, h=1e-6)
        assert rel_error(analytic, numeric, floor=1e-6).max() < 1e-4


class TestSyntheticModel:
    def test_deterministic(self):
        a, b = make_synthetic_model(3).to_arrays(), make_synthetic_model(3).to_arrays()
        for k in a:
            assert np.array_equal(a[k], b[k]), k

    @pytest.mark.parametrize("seed", [0, 1, 2])
    def test_invariants(self, seed):
        m = make_synthetic_model(seed)
        assert m.invariant_violations() == []
        assert is_watertight(m.faces)
        assert m.n_joints == 16 and m.n_betas == 8
        assert 400 <= m.n_vertices <= 800

    def test_round_trip_many(self, model):
        rng = np.random.default_rng(15)
        betas = rng.normal(size=(100, model.n_betas))
        est = beta_from_joints(model, joints_from_shape(model, betas)).data
        assert np.abs(est - betas).max() < 1e-8

    def test_requires_more_joints(self):
        with pytest.raises(ValueError):
            make_synthetic_model(0, n_betas=16)

    def test_sample_pose_rotations(self):
        rng = np.random.default_rng(0)
        R = rodrigues(sample_pose(rng))
        err = np.abs(np.swapaxes(R, -1, -2) @ R - np.eye(3)).max()
        assert err < 1e-8
