import json
import os
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mclnn.model import ConfigError, ModelConfig, Network, build_model, segment_size, shape_plan
from mclnn.numerics import Rng

import gradcheck
from conftest import CONFIGS


def cfg(orders, k, widths=None, l=4, classes=2, head=(), masks=None):
    widths = widths or [3] * len(orders)
    layers = []
    for i, (n, e) in enumerate(zip(orders, widths)):
        layer = {"order": n, "width": e}
        if masks and masks[i]:
            layer["mask"] = {"bandwidth": masks[i][0], "overlap": masks[i][1]}
        layers.append(layer)
    return ModelConfig.from_dict({
        "schema_version": 1, "input_length": l, "class_count": classes, "clnn_layers": layers,
        "pooling": {"extra_frames": k}, "dense_head": [{"width": w} for w in head],
    })


class TestSegmentArithmetic:
    def test_three_layer_example(self):
        c = cfg([4, 4, 4], 5)
        assert segment_size(c) == 29
        assert shape_plan(c).frame_counts == (29, 21, 13, 5)

    def test_single_layer(self):
        assert segment_size(cfg([1], 1)) == 3
        assert shape_plan(cfg([1], 2)).frame_counts == (4, 2)

    def test_shipped_configs(self):
        ballroom = ModelConfig.load(os.path.join(CONFIGS, "ballroom.json"))
        homburg = ModelConfig.load(os.path.join(CONFIGS, "homburg.json"))
        assert segment_size(ballroom) == 71
        assert shape_plan(homburg).frame_counts == (22, 12, 2)
        assert shape_plan(ballroom).head_input_width == 200

    def test_per_layer_orders(self):
        assert shape_plan(cfg([1, 3, 2], 4)).frame_counts == (16, 14, 8, 4)

    def test_longer_segment_than_needed(self):
        assert shape_plan(cfg([1], 2), q=10).frame_counts == (10, 8)

    def test_too_short_segment_names_layer(self):
        with pytest.raises(ConfigError, match="clnn_layers\\[1\\]"):
            shape_plan(cfg([2, 2], 1), q=6)

    @given(st.lists(st.integers(0, 20), min_size=1, max_size=5), st.integers(1, 30))
    @settings(max_examples=1000, deadline=None)
    def test_plan_matches_size(self, orders, k):
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            c = cfg(orders, k)
        plan = shape_plan(c)
        assert plan.segment_size == segment_size(c)
        assert plan.frame_counts[-1] == k
        assert all(a - b == 2 * n for a, b, n in zip(plan.frame_counts, plan.frame_counts[1:], orders))


class TestConfig:
    def _doc(self):
        with open(os.path.join(CONFIGS, "ballroom.json")) as fh:
            return json.load(fh)

    def test_ballroom_config_values(self):
        c = ModelConfig.load(os.path.join(CONFIGS, "ballroom.json"))
        assert [(lc.order, lc.width, lc.mask.bandwidth, lc.mask.overlap) for lc in c.clnn_layers] == [
            (15, 220, 40, -10), (15, 200, 10, 3)]
        assert c.pooling.extra_frames == 11 and c.class_count == 8
        assert [h.width for h in c.dense_head] == [50, 10]

    def test_homburg_config_values(self):
        c = ModelConfig.load(os.path.join(CONFIGS, "homburg.json"))
        assert [(lc.order, lc.width, lc.mask.bandwidth, lc.mask.overlap) for lc in c.clnn_layers] == [
            (5, 220, 40, -10), (5, 200, 10, 3)]
        assert c.pooling.extra_frames == 2 and c.class_count == 9
        assert [h.width for h in c.dense_head] == [50, 10]

    def test_round_trip(self):
        c = ModelConfig.load(os.path.join(CONFIGS, "ballroom.json"))
        assert ModelConfig.from_json(c.to_json()) == c

    @pytest.mark.parametrize("where", ["top", "layer", "mask", "pooling", "head"])
    def test_unknown_keys_rejected(self, where):
        doc = self._doc()
        target = {"top": doc, "layer": doc["clnn_layers"][0], "mask": doc["clnn_layers"][0]["mask"],
                  "pooling": doc["pooling"], "head": doc["dense_head"][0]}[where]
        target["bandwdith"] = 3
        with pytest.raises(ConfigError, match="unknown key 'bandwdith'"):
            ModelConfig.from_dict(doc)

    def test_missing_key_named(self):
        doc = self._doc()
        del doc["clnn_layers"][1]["order"]
        with pytest.raises(ConfigError, match="clnn_layers\\[1\\]: missing key 'order'"):
            ModelConfig.from_dict(doc)

    def test_schema_version(self):
        doc = self._doc()
        doc["schema_version"] = 2
        with pytest.raises(ConfigError, match="schema_version"):
            ModelConfig.from_dict(doc)

    @pytest.mark.parametrize("patch,match", [
        (lambda d: d.update(class_count=1), "class_count"),
        (lambda d: d["pooling"].update(extra_frames=0), "extra_frames"),
        (lambda d: d["clnn_layers"][1]["mask"].update(bandwidth=300), "clnn_layers\\[1\\].mask"),
        (lambda d: d["clnn_layers"][0].update(transfer="softplus"), "transfer"),
        (lambda d: d["clnn_layers"][0].update(order="15"), "integer"),
        (lambda d: d["pooling"].update(statistic="median"), "statistic"),
        (lambda d: d.update(clnn_layers=[]), "at least one"),
    ])
    def test_invalid_values(self, patch, match):
        doc = self._doc()
        patch(doc)
        with pytest.raises(ConfigError, match=match):
            ModelConfig.from_dict(doc)

    def test_bad_json(self):
        with pytest.raises(ConfigError, match="not valid JSON"):
            ModelConfig.from_json("{")

    def test_order_zero_warns(self):
        with pytest.warns(UserWarning, match="order 0"):
            cfg([0], 1)


class TestNetwork:
    def test_same_seed_bitwise(self):
        c = ModelConfig.load(os.path.join(CONFIGS, "synthetic.json"))
        a, b = build_model(c, Rng(5)), build_model(c, Rng(5))
        assert a.flat.tobytes() == b.flat.tobytes()
        assert build_model(c, Rng(6)).flat.tobytes() != a.flat.tobytes()

    def test_ballroom_builds(self):
        net = build_model(ModelConfig.load(os.path.join(CONFIGS, "ballroom.json")), Rng(0))
        t = net.tensors
        assert t["clnn0.weights"].shape == (31, 256, 220)
        assert t["clnn1.weights"].shape == (31, 220, 200)
        assert t["dense0.weights"].shape == (200, 50) and t["dense1.weights"].shape == (50, 10)
        assert t["output.weights"].shape == (10, 8)
        assert net.flat.size == 3_120_988
        assert [m.spec.stride for m in net.masks] == [306, 227]

    def test_init_bounds(self):
        c = ModelConfig.load(os.path.join(CONFIGS, "synthetic.json"))
        t = build_model(c, Rng(0)).tensors
        s = np.sqrt(6.0 / (32 * 3 + 24))
        assert np.abs(t["clnn0.weights"]).max() <= s
        assert not t["clnn0.bias"].any() and not t["output.bias"].any()

    def test_forward_probabilities(self):
        c = ModelConfig.load(os.path.join(CONFIGS, "synthetic.json"))
        net = build_model(c, Rng(1))
        x = np.random.default_rng(0).normal(size=(5, net.segment_size, 32))
        p, _ = net.forward(x)
        assert p.shape == (5, 3)
        assert np.all(np.abs(p.sum(axis=1) - 1) < 1e-12)

    def test_forward_rejects_wrong_length(self):
        net = build_model(cfg([1], 2), Rng(0))
        with pytest.raises(ValueError, match="expects q=4"):
            net.forward(np.zeros((1, 5, 4)))

    def test_flat_size_checked(self):
        with pytest.raises(ValueError, match="entries"):
            Network(cfg([1], 2), np.zeros(3))

    def test_end_to_end_gradient(self, backend):
        for seed in range(5):
            assert gradcheck.end_to_end(seed) < 1e-5

    def test_masked_deep_gradient(self):
        # two masked layers plus a dense head, checked through the full backward pass
        from oracles import central_difference, rel_error
        from mclnn.training import cross_entropy
        c = cfg([1, 1], 2, widths=[5, 4], l=6, classes=3, head=(4,), masks=[(3, 1), (2, -1)])
        net = build_model(c, Rng(2))
        net.flat += np.random.default_rng(2).normal(scale=0.3, size=net.flat.shape)
        x = np.random.default_rng(3).normal(size=(1, net.segment_size, 6))
        probs, cache = net.forward(x)
        grad = net.backward(cache, cross_entropy(probs[0], 1)[1][None])

        def loss(flat):
            return cross_entropy(Network(c, flat).forward(x)[0][0], 1)[0]

        assert rel_error(grad, central_difference(loss, net.flat.copy())) < 1e-5
        for i, m in enumerate(net.masks):
            sl = next(s for s in net.slots if s.name == f"clnn{i}.weights")
            gw = grad[sl.offset:sl.offset + sl.size].reshape(sl.shape)
            assert np.all(gw[:, m.pattern == 0] == 0.0)

    def test_predict_proba_batches(self):
        net = build_model(cfg([1], 2), Rng(0))
        x = np.random.default_rng(0).normal(size=(7, 4, 4))
        np.testing.assert_allclose(net.predict_proba(x, batch_size=3), net.forward(x)[0], rtol=0, atol=1e-15)
        assert net.predict_proba(np.zeros((0, 4, 4))).shape == (0, 2)
