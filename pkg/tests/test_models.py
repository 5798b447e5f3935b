import numpy as np
import pytest

from conftest import random_batch, toy_dataset
from tsclab import layers as L
from tsclab import models as M
from tsclab.data import SlicingConfig
from tsclab.errors import ShapeError, UnsupportedArchitectureError
from tsclab.tensor import SplitMix64


def count_params(params, predicate=lambda name: True):
    return sum(v.size for name, v in params.items()
               if M.trainable(name) and predicate(name))


def build_and_init(arch, T, Mdims=1, K=2, seed=0, **options):
    spec = M.build_model(arch, T, Mdims, K, **options)
    params = M.init_model(spec, SplitMix64(seed))
    return spec, params


class TestConformance:
    """Frozen per-architecture layer tables (filters/lengths/activations/norms)."""

    def test_mlp_table(self):
        spec = M.build_mlp(150, 1, 2)
        assert spec.describe() == [
            "flatten",
            "dropout rate=0.1", "dense units=500", "act relu",
            "dropout rate=0.2", "dense units=500", "act relu",
            "dropout rate=0.2", "dense units=500", "act relu",
            "dropout rate=0.3", "dense units=2", "act softmax",
        ]

    def test_fcn_table(self):
        spec = M.build_fcn(150, 1, 3)
        assert spec.describe() == [
            "conv filters=128 length=8 padding=same", "batch_norm", "act relu",
            "conv filters=256 length=5 padding=same", "batch_norm", "act relu",
            "conv filters=128 length=3 padding=same", "batch_norm", "act relu",
            "gap", "dense units=3", "act softmax",
        ]

    def test_resnet_table(self):
        spec = M.build_resnet(150, 1, 2)
        body = [
            "conv filters=64 length=8 padding=same", "batch_norm", "act relu",
            "conv filters=64 length=5 padding=same", "batch_norm", "act relu",
            "conv filters=64 length=3 padding=same", "batch_norm", "act relu",
        ]
        assert spec.describe() == [
            {"residual": body,
             "shortcut": ["conv filters=64 length=1 padding=same", "batch_norm"]},
            {"residual": body, "shortcut": None},
            {"residual": body, "shortcut": None},
            "gap", "dense units=2", "act softmax",
        ]

    def test_resnet_depth_is_eleven_layers(self):
        # 9 convolutional stages + gap + softmax classifier
        desc = repr(M.build_resnet(100, 1, 2).describe())
        assert desc.count("conv filters=64 length=") == 9 + 1  # 9 body + 1 shortcut
        assert desc.count("gap") == 1 and desc.count("softmax") == 1

    def test_encoder_table(self):
        spec = M.build_encoder(120, 1, 4)
        assert spec.describe() == [
            "conv filters=128 length=5 padding=same", "instance_norm", "act prelu",
            "dropout rate=0.2", "pool max window=2",
            "conv filters=256 length=11 padding=same", "instance_norm", "act prelu",
            "dropout rate=0.2", "pool max window=2",
            "conv filters=512 length=21 padding=same", "instance_norm", "act prelu",
            "dropout rate=0.2", "pool max window=2",
            "attention", "dense units=4", "act softmax",
        ]

    def test_tlenet_table(self):
        spec = M.build_tlenet(80, 1, 2)
        assert spec.describe() == [
            "conv filters=5 length=5 padding=same", "act relu", "pool max window=2",
            "conv filters=20 length=5 padding=same", "act relu", "pool max window=4",
            "flatten", "dense units=500", "act relu", "dense units=2", "act softmax",
        ]

    def test_mcdcnn_table(self):
        spec = M.build_mcdcnn(64, 2, 3)
        branch = [
            "conv filters=8 length=5 padding=same", "act relu", "pool max window=2",
            "conv filters=8 length=5 padding=same", "act relu", "pool max window=2",
        ]
        assert spec.describe() == [
            {"per_dimension": [branch, branch]},
            "flatten", "dense units=732", "act relu", "dense units=3", "act softmax",
        ]

    def test_timecnn_table(self):
        spec = M.build_timecnn(60, 1, 2)
        assert spec.describe() == [
            "conv filters=6 length=7 padding=valid", "act sigmoid", "pool avg window=3",
            "conv filters=12 length=7 padding=valid", "act sigmoid", "pool avg window=3",
            "flatten", "dense units=2", "act sigmoid",
        ]
        assert spec.loss == "mse"

    def test_mcnn_branch_count(self):
        spec = M.build_mcnn(90, 1, 2, 9, 3)
        top = spec.describe()
        assert len(top[0]["concat_branches"]) == 7  # identity + 3 down + 3 smooth
        tail = top[1:]
        assert tail == [
            "conv filters=256 length=9 padding=same", "act sigmoid",
            "pool max window=2", "flatten", "dense units=256", "act sigmoid",
            "dense units=2", "act softmax",
        ]


class TestGeometry:
    def test_mlp_first_dense_shape_and_hidden_count(self):
        spec, params = build_and_init("mlp", 150, 1, 2)
        assert params["2.w"].shape == (150, 500)
        hidden = (
            params["2.w"].size + params["2.b"].size
            + params["5.w"].size + params["5.b"].size
            + params["8.w"].size + params["8.b"].size
        )
        assert hidden == 150 * 500 + 500 + 2 * (500 * 500 + 500) == 576500

    def test_fcn_pre_gap_shape_preserves_length(self):
        for T in (16, 50, 311):
            spec, params = build_and_init("fcn", T)
            taps = {}
            x = random_batch((2, T, 1), seed=1)
            M.forward_batch(spec, params, x, "infer", taps=taps)
            (a,) = taps.values()
            assert a.shape == (2, T, 128)

    def test_fcn_parameter_count_is_length_invariant(self):
        _, p50 = build_and_init("fcn", 50)
        _, p500 = build_and_init("fcn", 500)
        assert count_params(p50) == count_params(p500)

    def test_resnet_parameter_count_is_length_invariant(self):
        _, p100 = build_and_init("resnet", 100)
        _, p1000 = build_and_init("resnet", 1000)
        assert count_params(p100) == count_params(p1000)

    def test_mlp_parameter_count_depends_on_length(self):
        _, p50 = build_and_init("mlp", 50)
        _, p500 = build_and_init("mlp", 500)
        assert count_params(p50) != count_params(p500)

    def test_encoder_time_extents_halve(self):
        spec = M.build_encoder(120, 1, 2)
        shape = (120, 1)
        extents = []
        for child in spec.net.children:
            shape = child.out_shape(shape)
            if len(shape) == 2:
                extents.append(shape[0])
        assert extents[0] == 120 and 60 in extents and 30 in extents and 15 in extents

    def test_encoder_attention_output_width(self):
        spec = M.build_encoder(120, 1, 2)
        shape = (120, 1)
        for child in spec.net.children:
            shape = child.out_shape(shape)
            if isinstance(child, M.Attention):
                assert shape == (256,)
                return
        pytest.fail("no attention layer found")

    def test_tlenet_flatten_length(self):
        spec = M.build_tlenet(80, 1, 2)
        _, params = build_and_init("tlenet", 80)
        assert params["7.w"].shape[0] == 80 // 8 * 20 == 200

    def test_mcdcnn_concat_feature_length(self):
        _, params = build_and_init("mcdcnn", 152, 1, 2)
        assert params["2.w"].shape[0] == (152 // 4) * 8 == 304

    def test_timecnn_flatten_length(self):
        _, params = build_and_init("timecnn", 60)
        assert params["7.w"].shape[0] == ((60 - 6) // 3 - 6) // 3 * 12 == 48

    def test_timecnn_too_short_rejected(self):
        with pytest.raises(ValueError):
            M.build_timecnn(20, 1, 2)

    def test_short_series_rejected(self):
        for arch in ("fcn", "resnet", "encoder", "tlenet"):
            with pytest.raises(ValueError):
                M.build_model(arch, 7, 1, 2)

    def test_mcnn_pool_factor_exhausting_length_rejected(self):
        with pytest.raises(ValueError):
            M.build_mcnn(11, 1, 2, 2, 12)

    def test_mcnn_branch_extents_align(self):
        spec = M.build_mcnn(90, 1, 2, 9, 3)
        concat = spec.net.children[0]
        for branch in concat.branches:
            assert branch.out_shape((90, 1)) == (30, 256)

    def test_mcnn_grid_values(self):
        grid = M.mcnn_grid(100)
        lengths = sorted({fl for fl, _ in grid})
        assert lengths == [5, 10, 20]
        assert sorted({pf for _, pf in grid}) == [2, 3, 5]


class TestForward:
    def test_infer_deterministic(self):
        spec, params = build_and_init("fcn", 24)
        x = random_batch((3, 24, 1), seed=5)
        y1, _ = M.forward_batch(spec, params, x, "infer")
        y2, _ = M.forward_batch(spec, params, x, "infer")
        assert np.array_equal(y1, y2)

    @pytest.mark.parametrize("arch", ["mlp", "fcn", "resnet", "encoder", "tlenet", "mcdcnn"])
    def test_softmax_heads_emit_simplex_rows(self, arch):
        spec, params = build_and_init(arch, 16, 1, 3)
        x = random_batch((4, 16, 1), seed=6)
        y, _ = M.forward_batch(spec, params, x, "infer")
        assert np.max(np.abs(y.sum(axis=1) - 1.0)) < 1e-12
        assert np.all(y >= 0)

    def test_timecnn_rows_are_sigmoid_not_simplex(self):
        spec, params = build_and_init("timecnn", 60, 1, 4)
        x = random_batch((6, 60, 1), seed=7)
        y, _ = M.forward_batch(spec, params, x, "infer")
        assert np.all((y > 0) & (y < 1))
        assert np.max(np.abs(y.sum(axis=1) - 1.0)) > 1e-6  # unconstrained rows

    def test_mlp_forward_matches_unrolled_matmuls(self):
        spec, params = build_and_init("mlp", 20, 1, 2)
        x = random_batch((2, 20, 1), seed=8)
        y, _ = M.forward_batch(spec, params, x, "infer")
        h = x.reshape(2, 20)
        for p in ("2", "5", "8"):
            h = np.maximum(h @ params[f"{p}.w"] + params[f"{p}.b"], 0.0)
        logits = h @ params["11.w"] + params["11.b"]
        e = np.exp(logits - logits.max(axis=1, keepdims=True))
        expected = e / e.sum(axis=1, keepdims=True)
        assert np.max(np.abs(y - expected)) < 1e-12

    def test_geometry_mismatch_rejected(self):
        spec, params = build_and_init("fcn", 24)
        with pytest.raises(ShapeError):
            M.forward_batch(spec, params, random_batch((2, 25, 1)), "infer")

    def test_resnet_zeroed_body_leaves_only_shortcut_path(self):
        spec, params = build_and_init("resnet", 16, 1, 2, seed=9)
        for name in params:
            if "/body/" in name and M.trainable(name):
                params[name] = np.zeros_like(params[name])
        x = random_batch((2, 16, 1), seed=10)
        y, _ = M.forward_batch(spec, params, x, "infer")
        # shortcut chain: block 1's 1x1 conv + batch norm; blocks 2-3 identity
        h, _ = L.conv1d_forward(x, params["0/sc/0.w"], params["0/sc/0.b"], "same")
        h, _, _, _ = L.batch_norm_forward(
            h, params["0/sc/1.gamma"], params["0/sc/1.beta"],
            params["0/sc/1.running_mean"], params["0/sc/1.running_var"], "infer",
        )
        feats, _ = L.gap_forward(h)
        logits, _ = L.dense_forward(feats, params["4.w"], params["4.b"])
        expected, _ = L.softmax_forward(logits)
        assert np.max(np.abs(y - expected)) < 1e-12

    def test_mcdcnn_branches_share_no_parameters(self):
        spec, params = build_and_init("mcdcnn", 16, 2, 2, seed=11)
        x = random_batch((2, 16, 2), seed=12)
        split = spec.net.children[0]
        out1 = split.forward(x, params, "0", "infer", None, {})
        for name in list(params):
            if name.startswith("0/dim0/") and M.trainable(name):
                params[name] = params[name] + 1.0
        out2 = split.forward(x, params, "0", "infer", None, {})
        assert np.array_equal(out1[:, :, 8:], out2[:, :, 8:])  # dim-1 branch untouched
        assert not np.array_equal(out1[:, :, :8], out2[:, :, :8])

    def test_mcnn_identity_branch_with_delta_filter_is_pooled_sigmoid(self):
        spec, params = build_and_init("mcnn", 32, 1, 2, filter_length=5, pool_factor=2)
        x = random_batch((1, 32, 1), seed=13)
        # identity branch: force the conv to a centered delta filter
        w = np.zeros_like(params["0/br0/0.w"])
        w[:, 2, 0] = 1.0  # filter [0,0,1,0,0]: same-padded identity
        params["0/br0/0.w"] = w
        params["0/br0/0.b"] = np.zeros_like(params["0/br0/0.b"])
        branch = spec.net.children[0].branches[0]
        out = branch.forward(x, params, "0/br0", "infer", None, {})
        sig = 1.0 / (1.0 + np.exp(-x))
        pooled, _ = L.pool1d_forward(sig, 2, "max")
        assert np.max(np.abs(out - pooled[:, :16, :][:, :, [0] * 256])) < 1e-12

    def test_fcn_time_shift_equivariance_in_interior(self):
        spec, params = build_and_init("fcn", 64, 1, 2, seed=14)
        x = random_batch((1, 64, 1), seed=15)
        shift = 9
        x_shifted = np.roll(x, shift, axis=1)
        taps, taps_shifted = {}, {}
        M.forward_batch(spec, params, x, "infer", taps=taps)
        M.forward_batch(spec, params, x_shifted, "infer", taps=taps_shifted)
        (a,) = taps.values()
        (a_s,) = taps_shifted.values()
        margin = 16  # beyond the stacked receptive field of lengths 8+5+3
        interior = slice(margin + shift, 64 - margin)
        rolled = np.roll(a, shift, axis=1)
        assert np.max(np.abs(a_s[0, interior] - rolled[0, interior])) < 1e-9


class TestPredict:
    def test_majority_vote(self):
        assert M.majority_vote(np.array([1, 1, 2]), 3) == 1
        assert M.majority_vote(np.array([1, 2]), 3) == 1  # tie -> lowest index
        assert M.majority_vote(np.array([2, 2, 0]), 3) == 2

    def test_unsliced_predict_is_argmax_of_forward(self):
        spec, params = build_and_init("fcn", 16, 1, 3, seed=1)
        ds = toy_dataset(n=6, T=16, K=3, seed=2)
        model = M.TrainedModel(spec, params)
        y = M.forward(model, ds.X)
        expected = np.array([int(row.argmax()) for row in y])
        assert np.array_equal(M.predict(model, ds), expected)

    def test_sliced_predict_votes_over_slices(self):
        spec, params = build_and_init("tlenet", 9, 1, 2, seed=3)
        spec.slicing = SlicingConfig(0.9, 1, (1.0,))
        model = M.TrainedModel(spec, params)
        ds = toy_dataset(n=3, T=10, K=2, seed=4)
        labels = M.predict(model, ds)
        # oracle: forward each slice by hand, vote
        for i in range(3):
            slices = np.stack([ds.X[i, s : s + 9, :] for s in (0, 1)])
            votes = M.forward(model, slices).argmax(axis=1)
            assert labels[i] == M.majority_vote(votes, 2)

    def test_single_slice_vote_equals_direct_prediction(self):
        spec, params = build_and_init("tlenet", 16, 1, 2, seed=5)
        ds = toy_dataset(n=4, T=16, K=2, seed=6)
        model = M.TrainedModel(spec, params)
        direct = M.forward(model, ds.X).argmax(axis=1)
        spec.slicing = SlicingConfig(1.0, 1, (1.0,))
        voted = M.predict(model, ds)
        assert np.array_equal(direct, voted)

    def test_slicing_config_presence_enforced(self):
        spec, params = build_and_init("tlenet", 16, 1, 2, seed=5)
        ds = toy_dataset(n=2, T=16, K=2, seed=6)
        with pytest.raises(ValueError, match="majority vote"):
            M.predict(M.TrainedModel(spec, params), ds)
        fcn_spec, fcn_params = build_and_init("fcn", 16, 1, 2)
        fcn_spec.slicing = SlicingConfig(0.9, 1, (1.0,))
        with pytest.raises(ValueError, match="whole series"):
            M.predict(M.TrainedModel(fcn_spec, fcn_params), ds)


class TestSerialization:
    @pytest.mark.parametrize("arch", ["fcn", "mcdcnn", "timecnn"])
    def test_round_trip(self, arch, tmp_path):
        T = 60 if arch == "timecnn" else 16
        spec, params = build_and_init(arch, T, 1, 2, seed=20)
        model = M.TrainedModel(spec, params, seed=20, epochs_run=7, best_epoch=3)
        path = tmp_path / "model.model"
        M.save_model(model, path)
        loaded = M.load_model(path)
        assert loaded.spec.architecture_id == arch
        assert loaded.seed == 20 and loaded.epochs_run == 7 and loaded.best_epoch == 3
        assert list(loaded.params) == list(params)
        for name in params:
            assert np.array_equal(loaded.params[name], params[name])
        x = random_batch((2, T, 1), seed=21)
        assert np.array_equal(
            M.forward(model, x), M.forward(loaded, x)
        )

    def test_round_trip_with_slicing_and_options(self, tmp_path):
        spec, params = build_and_init("mcnn", 27, 1, 2, filter_length=3, pool_factor=3)
        spec.slicing = SlicingConfig(0.9, 3, (1.0, 2.0, 0.5))
        model = M.TrainedModel(spec, params)
        M.save_model(model, tmp_path / "m.model")
        loaded = M.load_model(tmp_path / "m.model")
        assert loaded.spec.options == {"filter_length": 3, "pool_factor": 3}
        assert loaded.spec.slicing == SlicingConfig(0.9, 3, (1.0, 2.0, 0.5))

    def test_blob_is_little_endian_float64_in_spec_order(self, tmp_path):
        spec, params = build_and_init("mlp", 4, 1, 2)
        model = M.TrainedModel(spec, params)
        M.save_model(model, tmp_path / "m.model")
        raw = (tmp_path / "m.model.bin").read_bytes()
        expected = b"".join(
            np.ascontiguousarray(v, dtype="<f8").tobytes() for v in params.values()
        )
        assert raw == expected


class TestGapHead:
    def test_gap_headed_architectures(self):
        for arch in ("fcn", "resnet"):
            spec = M.build_model(arch, 16, 1, 2)
            gap_prefix, dense_prefix = M.gap_head(spec)
            assert int(dense_prefix) == int(gap_prefix) + 1

    @pytest.mark.parametrize("arch", ["mlp", "tlenet", "mcdcnn", "timecnn", "encoder"])
    def test_non_gap_architectures_rejected(self, arch):
        T = 60 if arch == "timecnn" else 16
        spec = M.build_model(arch, T, 1, 2)
        with pytest.raises(UnsupportedArchitectureError):
            M.gap_head(spec)
