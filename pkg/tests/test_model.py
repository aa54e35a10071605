import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ctdnn import model
from ctdnn.errors import (
    ArchSemanticError,
    ArchSyntaxError,
    CacheError,
    FormatError,
    SequenceTooShortError,
)
from ctdnn.layers import ContextWindow, softmax_ce
from ctdnn.model import (
    LayerSpec,
    build_model,
    embed,
    expand_preset,
    forward,
    forward_batch,
    backward_batch,
    load_model,
    param_count,
    parse_arch,
    render_arch,
    save_model,
)
from ctdnn.numcore import finite_diff_check

CTDNN_DSL = "ctd(-4:4,-2:2,-1:1)x64 | ctd(-1:1)*3x64 | sc | fc(128) | fc(@classes) | softmax"
TDNN_DSL = "td(-2:2)x64 | td(-1:2)x64 | td(-3:3)x64 | td(-7:2)x64 | sp | fc(128) | fc(@classes) | softmax"
TINY_CTDNN = "ctd(-4:4,-2:2,-1:1)x2 | ctd(-1:1)*3x2 | sc | fc(4) | fc(@classes) | softmax"


class TestParseArch:
    def test_ctdnn_six_layers(self):
        cfg = parse_arch(CTDNN_DSL, input_dim=13, num_classes=10)
        assert [s.kind for s in cfg.layers] == ["ctd", "ctd", "sc", "fc", "fc", "softmax"]
        assert [c.span for c in cfg.layers[0].contexts] == [9, 5, 3]
        assert cfg.layers[1].contexts == (ContextWindow(-1, 1),) * 3
        assert cfg.embed_tap == 2

    def test_tdnn_config(self):
        cfg = parse_arch(TDNN_DSL, input_dim=13, num_classes=10)
        assert [s.kind for s in cfg.layers] == ["td"] * 4 + ["sp", "fc", "fc", "softmax"]
        assert cfg.layers[3].contexts[0] == ContextWindow(-7, 2)
        assert cfg.embed_tap == 4

    def test_pooling_before_any_delay_layer(self):
        with pytest.raises(ArchSemanticError, match="pooling-requires-delay-layer"):
            parse_arch("sp | fc(3)", input_dim=4, num_classes=3)

    def test_presets_match_dsl(self):
        for preset, dsl in (("tdnn-paper", TDNN_DSL), ("ctdnn-paper", CTDNN_DSL)):
            assert parse_arch(preset, 13, 10, width=64) == parse_arch(dsl, 13, 10)

    def test_preset_width_parameter(self):
        cfg = parse_arch("ctdnn-paper", 13, 10, width=512)
        assert cfg.layers[0].width == 512
        assert cfg.layers[3].width == 1024

    def test_syntax_error_carries_position(self):
        with pytest.raises(ArchSyntaxError) as exc:
            parse_arch("td(-2:2)x64 | td(oops)x3 | sp | fc(@classes) | softmax", 4, 3)
        assert exc.value.position == 14
        assert "td(L:R)xH" in exc.value.expected

    def test_sc_after_td_rejected(self):
        with pytest.raises(ArchSemanticError, match="sc-follows-ctd"):
            parse_arch("td(-1:1)x4 | sc | fc(@classes) | softmax", 4, 3)

    def test_sp_after_ctd_rejected(self):
        with pytest.raises(ArchSemanticError, match="sp-follows-td"):
            parse_arch("ctd(-1:1)*2x4 | sp | fc(@classes) | softmax", 4, 3)

    def test_two_pooling_layers_rejected(self):
        with pytest.raises(ArchSemanticError, match="one-pooling-layer"):
            parse_arch("td(-1:1)x4 | sp | sp | fc(@classes) | softmax", 4, 3)

    def test_missing_softmax_tail(self):
        with pytest.raises(ArchSemanticError, match="tail-fc-softmax"):
            parse_arch("td(-1:1)x4 | sp | fc(@classes)", 4, 3)

    def test_classifier_width_enforced(self):
        with pytest.raises(ArchSemanticError, match="classifier-width"):
            parse_arch("td(-1:1)x4 | sp | fc(7) | softmax", 4, 3)

    def test_branch_mismatch_in_second_ctd(self):
        with pytest.raises(ArchSemanticError, match="ctd-branch-mismatch"):
            parse_arch("ctd(-1:1)*3x4 | ctd(-1:1)*2x4 | sc | fc(@classes) | softmax", 4, 3)

    def test_literal_reversed_context_is_expressible(self):
        # the [2,7] reading of an ambiguous context parses; [7,2] does not
        cfg = parse_arch("td(2:7)x4 | sp | fc(@classes) | softmax", 4, 3)
        assert cfg.layers[0].contexts[0].span == 6
        with pytest.raises(ArchSemanticError, match="context-order"):
            parse_arch("td(7:2)x4 | sp | fc(@classes) | softmax", 4, 3)

    def test_render_round_trip(self):
        for dsl in (CTDNN_DSL, TDNN_DSL, TINY_CTDNN):
            cfg = parse_arch(dsl, 13, 10)
            assert parse_arch(render_arch(cfg), 13, 10) == cfg
        assert "ctd(-1:1)*3x64" in render_arch(parse_arch(CTDNN_DSL, 13, 10))


class TestBuildModel:
    def test_same_seed_bit_identical(self):
        cfg = parse_arch(TINY_CTDNN, 3, 2)
        a, b = build_model(cfg, seed=9), build_model(cfg, seed=9)
        for (name, pa), (_, pb) in zip(a.parameters(), b.parameters()):
            assert np.array_equal(pa, pb), name

    def test_different_seeds_differ(self):
        cfg = parse_arch(TINY_CTDNN, 3, 2)
        a, b = build_model(cfg, seed=1), build_model(cfg, seed=2)
        assert any(
            not np.array_equal(pa, pb)
            for (_, pa), (_, pb) in zip(a.parameters(), b.parameters())
        )

    def test_fc_after_sc_input_dim(self):
        cfg = parse_arch("ctd(-1:1)*3x64 | ctd(-1:1)*3x64 | sc | fc(128) | fc(@classes) | softmax", 13, 10)
        m = build_model(cfg, seed=0)
        fc = m.layers[3]
        assert fc.weights.shape == (128, 384)  # 3 branches * 2 * 64

    def test_init_bound_and_zero_biases(self):
        cfg = parse_arch(TDNN_DSL, 13, 10)
        m = build_model(cfg, seed=4)
        unit = m.layers[0].units[0]
        bound = np.sqrt(6.0 / (unit.weights.shape[1] + unit.weights.shape[0]))
        assert np.abs(unit.weights).max() <= bound
        assert not unit.bias.any()
        assert np.all(m.layers[0].bns[0].gamma == 1.0)


class TestParamCount:
    def test_single_unit_arithmetic(self):
        # H x (span*D) weights plus H biases: 2*(3*3) + 2
        cfg = parse_arch("td(-1:1)x2 | sp | fc(@classes) | softmax", 3, 2)
        unit = build_model(cfg, 0).layers[0].units[0]
        assert unit.weights.size + unit.bias.size == 20

    def test_additive_over_layers(self):
        base = parse_arch("td(-1:1)x4 | sp | fc(@classes) | softmax", 5, 3)
        deeper = parse_arch("td(-1:1)x4 | td(-1:1)x4 | sp | fc(@classes) | softmax", 5, 3)
        extra = 2 * 4 + 4 * (3 * 4) + 4  # BN gamma/beta + weights + bias of the added layer
        assert param_count(deeper) == param_count(base) + extra

    def test_matches_allocated_parameters(self):
        for dsl in (CTDNN_DSL, TDNN_DSL):
            cfg = parse_arch(dsl, 13, 10)
            m = build_model(cfg, 0)
            assert sum(a.size for _, a in m.parameters()) == param_count(cfg)


class TestForward:
    def test_logit_length(self, rng):
        cfg = parse_arch(TINY_CTDNN, 3, 2)
        m = build_model(cfg, 0)
        logits, _ = forward(m, rng.standard_normal((20, 3)))
        assert logits.shape == (2,)

    def test_branch_lengths_through_stack(self, rng):
        cfg = parse_arch("ctdnn-paper", 13, 10, width=8)
        m = build_model(cfg, 0)
        x = rng.standard_normal((300, 13))
        layer1, _ = forward_batch(m, [x], mode="infer", stop_at=0)
        assert [b.shape[0] for b in layer1[0]] == [292, 296, 298]
        layer2, _ = forward_batch(m, [x], mode="infer", stop_at=1)
        assert [b.shape[0] for b in layer2[0]] == [290, 294, 296]

    def test_zero_parameters_uniform_logits(self, rng):
        cfg = parse_arch(TINY_CTDNN, 3, 2)
        m = build_model(cfg, 0)
        for _, p in m.parameters():
            p[...] = 0.0
        logits, _ = forward(m, rng.standard_normal((15, 3)))
        assert np.allclose(logits, logits[0])
        loss, _ = softmax_ce(logits, 1)
        assert abs(loss - np.log(2)) < 1e-12

    def test_too_short_reports_layer(self, rng):
        cfg = parse_arch("ctdnn-paper", 13, 10, width=4)
        m = build_model(cfg, 0)
        with pytest.raises(SequenceTooShortError, match="layer 0"):
            forward(m, rng.standard_normal((5, 13)))

    @given(st.integers(0, 2**31 - 1), st.integers(15, 60))
    @settings(max_examples=15, deadline=None)
    def test_forward_backward_round_trip_shapes(self, seed, t):
        r = np.random.default_rng(seed)
        cfg = parse_arch(TINY_CTDNN, 3, 2)
        m = build_model(cfg, seed % 100)
        xs = [r.standard_normal((t, 3)), r.standard_normal((t + 3, 3))]
        logits, cache = forward_batch(m, xs, mode="train")
        grads = backward_batch(m, cache, [softmax_ce(z, 0)[1] for z in logits])
        assert [g.shape for _, g in grads] == [p.shape for _, p in m.parameters()]


class TestBackward:
    def test_zero_grad_logits(self, rng):
        cfg = parse_arch(TINY_CTDNN, 3, 2)
        m = build_model(cfg, 1)
        _, cache = forward_batch(m, [rng.standard_normal((14, 3))], mode="train")
        grads = backward_batch(m, cache, [np.zeros(2)])
        assert all(not g.any() for _, g in grads)

    def test_tiny_ctdnn_full_finite_difference(self, rng):
        cfg = parse_arch(TINY_CTDNN, 3, 2)
        m = build_model(cfg, 5)
        xs = [rng.standard_normal((12, 3)), rng.standard_normal((12, 3))]
        labels = [0, 1]
        params = m.parameters()

        def unpack(theta):
            off = 0
            for _, a in params:
                a[...] = theta[off : off + a.size].reshape(a.shape)
                off += a.size

        def f(theta):
            unpack(theta)
            logits, _ = forward_batch(m, xs, mode="train", update_running=False)
            return float(np.mean([softmax_ce(z, y)[0] for z, y in zip(logits, labels)]))

        theta0 = np.concatenate([a.ravel() for _, a in params])
        logits, cache = forward_batch(m, xs, mode="train", update_running=False)
        gl = [softmax_ce(z, y)[1] / len(xs) for z, y in zip(logits, labels)]
        analytic = np.concatenate([g.ravel() for _, g in backward_batch(m, cache, gl)])
        err = finite_diff_check(f, theta0, analytic)
        unpack(theta0)
        assert err < 1e-4

    def test_bias_gradient_scales_with_window_count(self, rng):
        # layer-1 units see different numbers of positions on the same input
        cfg = parse_arch("ctd(-4:4,-2:2,-1:1)x1 | sc | fc(@classes) | softmax", 2, 2)
        m = build_model(cfg, 3)
        x = rng.standard_normal((40, 2))
        _, cache = forward_batch(m, [x], mode="train")
        # drive every pooled coordinate equally; bias gradients then count
        # active window positions per unit (36 vs 40-4 vs 40-2 before ReLU)
        bn_cs, td_cs, zs, _ = cache.layer_caches[0]
        t_outs = [z[0].shape[0] for z in zs]
        assert t_outs == [32, 36, 38]

    def test_foreign_cache_rejected(self, rng):
        cfg = parse_arch(TINY_CTDNN, 3, 2)
        a, b = build_model(cfg, 1), build_model(cfg, 2)
        _, cache = forward_batch(a, [rng.standard_normal((12, 3))], mode="train")
        with pytest.raises(CacheError):
            backward_batch(b, cache, [np.zeros(2)])

    def test_infer_cache_rejected(self, rng):
        cfg = parse_arch(TINY_CTDNN, 3, 2)
        m = build_model(cfg, 1)
        _, cache = forward_batch(m, [rng.standard_normal((12, 3))], mode="infer")
        with pytest.raises(CacheError):
            backward_batch(m, cache, [np.zeros(2)])


class TestEmbed:
    def test_ctdnn_paper_width_embedding(self, rng):
        cfg = parse_arch("ctdnn-paper", 30, 10, width=512)
        m = build_model(cfg, 0)
        e = embed(m, rng.standard_normal((40, 30)))
        assert e.vector.size == 3072  # 3 branches * 2 * 512

    def test_tdnn_paper_width_embedding(self, rng):
        cfg = parse_arch("tdnn-paper", 30, 10, width=512)
        m = build_model(cfg, 0)
        assert embed(m, rng.standard_normal((40, 30))).vector.size == 1024

    def test_embed_equals_tap_activation(self, rng):
        cfg = parse_arch(TINY_CTDNN, 3, 2)
        m = build_model(cfg, 8)
        x = rng.standard_normal((16, 3))
        taps, _ = forward_batch(m, [x], mode="infer", stop_at=cfg.embed_tap)
        assert np.array_equal(embed(m, x).vector, taps[0])

    def test_embedding_length_law(self, rng):
        for dsl, expected in ((TINY_CTDNN, 12), (CTDNN_DSL, 384), (TDNN_DSL, 128)):
            cfg = parse_arch(dsl, 6, 4)
            m = build_model(cfg, 0)
            e = embed(m, rng.standard_normal((30, 6)))
            assert e.vector.size == expected

    def test_metadata_preserved(self, rng):
        from ctdnn.data import FeatureSequence

        cfg = parse_arch(TINY_CTDNN, 3, 2)
        m = build_model(cfg, 0)
        seq = FeatureSequence("utt9", "spk3", rng.standard_normal((12, 3)))
        e = embed(m, seq)
        assert (e.utt_id, e.speaker_id) == ("utt9", "spk3")


class TestSerialization:
    def test_round_trip_bit_identical(self, rng, tmp_path):
        cfg = parse_arch(CTDNN_DSL, 13, 10)
        m = build_model(cfg, 42)
        # make running stats non-trivial before saving
        forward_batch(m, [rng.standard_normal((30, 13))], mode="train")
        path = tmp_path / "net.model"
        save_model(path, m)
        loaded = load_model(path)
        assert loaded.config == m.config
        assert loaded.seed == m.seed
        pairs = zip(m.parameters() + m.buffers(), loaded.parameters() + loaded.buffers())
        for (name, a), (_, b) in pairs:
            assert np.array_equal(a, b), name

    def test_write_read_write_byte_identical(self, rng, tmp_path):
        cfg = parse_arch(TINY_CTDNN, 3, 2)
        m = build_model(cfg, 7)
        p1, p2 = tmp_path / "a.model", tmp_path / "b.model"
        save_model(p1, m)
        save_model(p2, load_model(p1))
        assert p1.read_bytes() == p2.read_bytes()

    def test_bad_magic_offset_zero(self, tmp_path):
        path = tmp_path / "junk.model"
        path.write_bytes(b"NOPE" + b"\x00" * 40)
        with pytest.raises(FormatError) as exc:
            load_model(path)
        assert exc.value.offset == 0

    def test_truncation_detected(self, rng, tmp_path):
        cfg = parse_arch(TINY_CTDNN, 3, 2)
        path = tmp_path / "cut.model"
        save_model(path, build_model(cfg, 7))
        blob = path.read_bytes()
        path.write_bytes(blob[:-9])
        with pytest.raises(FormatError):
            load_model(path)
