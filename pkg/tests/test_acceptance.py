"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Run with `pytest -s tests/test_acceptance.py` to see the lines. The
desk-scale experiment is marked slow; deselect with `-m "not slow"`.
"""
import time
from contextlib import contextmanager

import numpy as np
import pytest

import mvat
from mvat import distill as D
from mvat import signal as sig
from mvat import tensor as T
from mvat.counting import count_flops, count_params
from mvat.distill import DistillConfig
from mvat.model import Model, ModelConfig, ForwardTrace, MultiViewActivations
from mvat.signal import DataConfig, StftConfig, realize_split
from mvat.tensor import Tensor
from mvat.trainer import (
    TrainConfig,
    distill,
    load_checkpoint,
    model_state,
    save_checkpoint,
    train,
)
from gradcheck import max_rel_error, numeric_grad

RES = [StftConfig(128, 32, 64), StftConfig(256, 64, 128)]


@contextmanager
def criterion(name):
    try:
        yield
    except BaseException:
        print(f"ACCEPTANCE {name}: FAIL")
        raise
    print(f"ACCEPTANCE {name}: PASS")


def test_paper_reproducibility_statement():
    """The published quality numbers (PESQ/STOI/CSIG/CBAK/COVL) need the
    original corpora, full-length training, and licensed metric
    implementations; none are in scope. This suite substitutes property
    and oracle checks plus a directional desk-scale experiment, so the
    package must not pretend to provide those metrics."""
    with criterion("paper-result reproducibility statement"):
        for absent in ("pesq", "stoi", "csig", "cbak", "covl"):
            assert not hasattr(mvat, absent)
            assert not hasattr(sig, absent)
        assert hasattr(sig, "si_sdr")


class TestGradientOracleSuite:
    def test_gradient_oracles(self):
        with criterion("gradient oracle suite (< 2 min, rel err < 1e-4)"):
            started = time.time()
            self._check_primitive_ops()
            self._check_full_distill_loss()
            elapsed = time.time() - started
            print(f"  gradient suite runtime: {elapsed:.1f}s")
            assert elapsed < 120.0

    def _check_primitive_ops(self):
        rng = np.random.default_rng(0)
        a = rng.uniform(0.3, 1.7, (3, 4))
        b = rng.uniform(0.3, 1.7, (3, 4))

        cases = {
            "add": lambda x, y: T.add(x, y),
            "sub": lambda x, y: T.sub(x, y),
            "mul": lambda x, y: T.mul(x, y),
            "div": lambda x, y: T.div(x, y),
            "abs": lambda x, y: T.absolute(x),
            "pow": lambda x, y: T.power(x, 1.7),
            "sigmoid": lambda x, y: T.sigmoid(x),
            "tanh": lambda x, y: T.tanh(x),
            "relu": lambda x, y: T.relu(x),
            "exp": lambda x, y: T.exp(x),
            "log": lambda x, y: T.log(x),
            "sum": lambda x, y: T.reduce_sum(x, axis=1),
            "mean": lambda x, y: T.reduce_mean(x, axis=0),
            "max": lambda x, y: T.reduce_max(x, axis=1),
            "matmul": lambda x, y: T.matmul(x, T.transpose_axes(y, 0, 1)),
            "softmax": lambda x, y: T.softmax(x),
            "reshape": lambda x, y: T.reshape(x, (4, 3)),
            "transpose": lambda x, y: T.transpose_axes(x, 0, 1),
            "concat": lambda x, y: T.concat([x, y], axis=1),
            "slice": lambda x, y: T.slice_axis(x, 1, 1, 3),
            "downsample": lambda x, y: T.downsample_time(x, 2),
            "pad": lambda x, y: T.pad_end(x, 3),
            "cast": lambda x, y: T.cast(x, np.float64),
            "interpolate": lambda x, y: T.interpolate_linear(x, 9),
            "frame": lambda x, y: T.frame_signal(x, 2, 1),
            "rdft": lambda x, y: T.rdft(x, 8),
        }
        for name, build in cases.items():
            x = Tensor(a.copy(), requires_grad=True)
            y = Tensor(b.copy(), requires_grad=True)
            out = build(x, y)
            probe = np.random.default_rng(1).standard_normal(out.shape)
            (out * Tensor(probe)).sum().backward()

            def f():
                return float((build(Tensor(x.data), Tensor(y.data)).data * probe).sum())

            assert max_rel_error(x.grad, numeric_grad(f, x.data, h=1e-5)) < 1e-4, name

        # convolution family on conv-shaped tensors
        x = Tensor(rng.standard_normal((1, 2, 12)), requires_grad=True)
        w = Tensor(rng.standard_normal((3, 2, 4)), requires_grad=True)
        out = T.conv1d(x, w, None, stride=2, padding=1)
        probe = rng.standard_normal(out.shape)
        (out * Tensor(probe)).sum().backward()

        def f_conv():
            o = T.conv1d(Tensor(x.data), Tensor(w.data), None, stride=2, padding=1)
            return float((o.data * probe).sum())

        assert max_rel_error(x.grad, numeric_grad(f_conv, x.data, h=1e-5)) < 1e-4
        assert max_rel_error(w.grad, numeric_grad(f_conv, w.data, h=1e-5)) < 1e-4

        xt = Tensor(rng.standard_normal((1, 3, 6)), requires_grad=True)
        wt = Tensor(rng.standard_normal((3, 2, 4)), requires_grad=True)
        out = T.conv1d_transposed(xt, wt, None, stride=2, padding=1)
        probe_t = rng.standard_normal(out.shape)
        (out * Tensor(probe_t)).sum().backward()

        def f_convt():
            o = T.conv1d_transposed(Tensor(xt.data), Tensor(wt.data), None, stride=2, padding=1)
            return float((o.data * probe_t).sum())

        assert max_rel_error(xt.grad, numeric_grad(f_convt, xt.data, h=1e-5)) < 1e-4
        assert max_rel_error(wt.grad, numeric_grad(f_convt, wt.data, h=1e-5)) < 1e-4

        xd = Tensor(rng.standard_normal((1, 3, 10)), requires_grad=True)
        wd = Tensor(rng.standard_normal((3, 5)), requires_grad=True)
        out = T.depthwise_conv1d(xd, wd, None, padding=2)
        probe_d = rng.standard_normal(out.shape)
        (out * Tensor(probe_d)).sum().backward()

        def f_dw():
            o = T.depthwise_conv1d(Tensor(xd.data), Tensor(wd.data), None, padding=2)
            return float((o.data * probe_d).sum())

        assert max_rel_error(xd.grad, numeric_grad(f_dw, xd.data, h=1e-5)) < 1e-4
        assert max_rel_error(wd.grad, numeric_grad(f_dw, wd.data, h=1e-5)) < 1e-4

        ex = Tensor(rng.standard_normal((2, 1, 5)), requires_grad=True)
        out = T.expand_axis(ex, 1, 3)
        probe_e = rng.standard_normal(out.shape)
        (out * Tensor(probe_e)).sum().backward()

        def f_ex():
            return float((T.expand_axis(Tensor(ex.data), 1, 3).data * probe_e).sum())

        assert max_rel_error(ex.grad, numeric_grad(f_ex, ex.data, h=1e-5)) < 1e-4

    def _check_full_distill_loss(self):
        # toy pair pinned by the criterion: L_T=3, L_S=2, C<=12, t=256
        teacher = Model(ModelConfig(depth=3, base_channels=12), seed=0, dtype=np.float64)
        teacher.set_requires_grad(False)
        student = Model(ModelConfig(depth=2, base_channels=3, role="student"),
                        seed=1, dtype=np.float64)
        rng = np.random.default_rng(2)
        x = rng.standard_normal((1, 1, 256)) * 0.3
        pair_map = D.dual_depth_map(3, 2, (2,))
        cfg = DistillConfig()
        with T.no_grad():
            trace_t = teacher.forward(Tensor(x))

        def loss_value():
            trace_s = student.forward(Tensor(x))
            return D.distill_loss(trace_t, trace_s, pair_map, cfg, RES)

        loss_value().backward()
        params = student.named_parameters()
        grads = {name: p.grad.copy() for name, p in params}
        for name, p in params:
            def f(p=p):
                return loss_value().item()

            num = numeric_grad(f, p.data, h=1e-5)
            assert max_rel_error(grads[name], num) < 1e-4, name
            p.grad = None


def test_tam_invariant_suite():
    with criterion("TAM invariant suite (1000 maps, < 10 s)"):
        started = time.time()
        rng = np.random.default_rng(3)
        for i in range(1000):
            a = rng.standard_normal((2, 6, 48))
            if i % 50 == 0:
                a = np.zeros_like(a)
            tam = D.compute_tam(Tensor(a))
            vals = tam.values.data
            assert np.all(vals >= 0.0)
            norm = np.linalg.norm(vals)
            assert abs(norm - 1.0) < 1e-6 or norm == 0.0
            if i % 10 == 0 and norm > 0:
                for c in (0.5, 2.0, 10.0, -3.0):
                    loss = D.at_loss(D.compute_tam(Tensor(c * a)), tam)
                    assert loss.item() < 1e-6
        elapsed = time.time() - started
        print(f"  TAM suite runtime: {elapsed:.1f}s")
        assert elapsed < 10.0


def test_dual_depth_oracle():
    with criterion("dual-depth pairing oracle"):
        pm = D.dual_depth_map(4, 3, (1, 2, 3))
        per_side = {}
        for e in pm.entries:
            per_side.setdefault(e.side, {})[e.student_level] = e.teacher_levels
        for side in ("encoder", "decoder"):
            assert per_side[side] == {1: (1,), 2: (2,), 3: (3, 4)}

        for depth in range(1, 7):
            pm = D.dual_depth_map(depth, depth, range(1, depth + 1))
            assert all(e.teacher_levels == (e.student_level,) for e in pm.entries)

        # brute-force enumeration of the rule for all teacher depths <= 6:
        # walk teacher levels, attach each to min(level, student depth)
        for lt in range(1, 7):
            for ls in range(1, lt + 1):
                placement = tuple(range(1, ls + 1))
                expected = {sl: [] for sl in placement}
                for tl in range(1, lt + 1):
                    expected[min(tl, ls)].append(tl)
                pm = D.dual_depth_map(lt, ls, placement)
                assert len(pm.entries) == 2 * ls
                for e in pm.entries:
                    assert e.teacher_levels == tuple(expected[e.student_level]), (lt, ls)


def _random_trace(rng, levels, t_act, t_wave, batch=2, channels=4):
    acts = []
    for side in ("encoder", "decoder"):
        for level in levels:
            acts.append(MultiViewActivations(
                level, side,
                Tensor(rng.standard_normal((batch, channels, t_act))),
                Tensor(rng.standard_normal((batch, channels, t_act))),
                Tensor(rng.standard_normal((batch, channels, t_act))),
            ))
    enhanced = Tensor(rng.standard_normal((batch, 1, t_wave)) * 0.3)
    return ForwardTrace(enhanced=enhanced, activations=acts)


def test_loss_decomposition_equivalence():
    with criterion("loss-decomposition equivalence (100 random trace pairs)"):
        rng = np.random.default_rng(4)
        pair_map = D.PairMap([
            D.PairEntry(1, "encoder", (1,)),
            D.PairEntry(2, "encoder", (2, 3)),
            D.PairEntry(1, "decoder", (1,)),
            D.PairEntry(2, "decoder", (2, 3)),
        ])
        cfg = DistillConfig(lambda_at=1.0, lambda_kd=1.0)
        for _ in range(100):
            trace_t = _random_trace(rng, (1, 2, 3), t_act=64, t_wave=256)
            trace_s = _random_trace(rng, (1, 2), t_act=32, t_wave=256)
            total = D.distill_loss(trace_t, trace_s, pair_map, cfg, RES).item()
            manual = D.kd_loss(trace_t.enhanced, trace_s.enhanced, RES).item()
            for entry in pair_map.entries:
                vs = trace_s.find(entry.side, entry.student_level)
                for tl in entry.teacher_levels:
                    vt = trace_t.find(entry.side, tl)
                    for view in D.VIEWS:
                        tam_t = D.align_lengths(D.compute_tam(vt.view(view)), 32)
                        tam_s = D.compute_tam(vs.view(view))
                        manual += D.at_loss(tam_t, tam_s).item()
            assert abs(total - manual) < 1e-6

            # the three single-view ablations partition the full loss
            vt = trace_t.find("encoder", 1)
            vs = trace_s.find("encoder", 1)
            full = D.mv_at_loss(vt, vs).item()
            parts = sum(D.mv_at_loss(vt, vs, single_view=v).item() for v in D.VIEWS)
            assert abs(full - parts) < 1e-6


def test_efficiency_accounting():
    with criterion("efficiency accounting (regime ordering, analytic == runtime)"):
        params = []
        flops = []
        for c in (12, 24, 30):
            cfg = ModelConfig(depth=3, base_channels=c, role="student")
            params.append(count_params(cfg))
            flops.append(count_flops(cfg, 16000))
            assert count_params(cfg) == Model(cfg, seed=0, dtype=np.float32).parameter_count()
        assert params[0] < params[1] < params[2]
        assert flops[0] < flops[1] < flops[2]
        print(f"  params: {params} flops: {flops}")


def test_determinism_and_persistence(tmp_path):
    with criterion("determinism & persistence (bit-exact)"):
        data_cfg = DataConfig(seed=7, n_train=8, n_val=4, n_test=4, duration_s=0.25)
        train_set = realize_split(data_cfg, "train")
        val_set = realize_split(data_cfg, "val")
        model_cfg = ModelConfig(depth=2, base_channels=6, role="student")
        cfg = TrainConfig(epochs=2, seed=11, segment_len=1024, val_every=1)

        a = train(model_cfg, cfg, train_set, val_set, resolutions=RES)
        b = train(model_cfg, cfg, train_set, val_set, resolutions=RES)
        save_checkpoint(a.final_state, tmp_path / "a.ckpt")
        save_checkpoint(b.final_state, tmp_path / "b.ckpt")
        assert (tmp_path / "a.ckpt").read_bytes() == (tmp_path / "b.ckpt").read_bytes()

        loaded = load_checkpoint(tmp_path / "a.ckpt")
        save_checkpoint(loaded, tmp_path / "a2.ckpt")
        assert (tmp_path / "a.ckpt").read_bytes() == (tmp_path / "a2.ckpt").read_bytes()

        full_cfg = TrainConfig(epochs=4, seed=11, segment_len=1024, val_every=1)
        straight = train(model_cfg, full_cfg, train_set, val_set, resolutions=RES)
        resumed = train(model_cfg, full_cfg, train_set, val_set,
                        resume=load_checkpoint(tmp_path / "a.ckpt"), resolutions=RES)
        save_checkpoint(straight.final_state, tmp_path / "s.ckpt")
        save_checkpoint(resumed.final_state, tmp_path / "r.ckpt")
        assert (tmp_path / "s.ckpt").read_bytes() == (tmp_path / "r.ckpt").read_bytes()
        tail = [r["loss_total"] for r in straight.step_records if r["epoch"] > 2]
        assert tail == [r["loss_total"] for r in resumed.step_records]


def test_frozen_teacher_property():
    with criterion("frozen teacher (weights bit-identical, no gradients)"):
        data_cfg = DataConfig(seed=9, n_train=8, n_val=0, n_test=0, duration_s=0.25)
        train_set = realize_split(data_cfg, "train")
        teacher_cfg = ModelConfig(depth=3, base_channels=12)
        teacher = Model(teacher_cfg, seed=13, dtype=np.float32)
        t_state = model_state(teacher, seed=13)
        before = {k: v.copy() for k, v in t_state["params"].items()}

        distill(t_state, ModelConfig(depth=2, base_channels=6, role="student"),
                TrainConfig(epochs=1, seed=14, segment_len=1024, val_every=1),
                DistillConfig(), train_set, resolutions=RES)
        for k, v in t_state["params"].items():
            assert np.array_equal(before[k], v)

        # gradients never reach the teacher graph
        teacher.set_requires_grad(False)
        student = Model(ModelConfig(depth=2, base_channels=6, role="student"),
                        seed=15, dtype=np.float32)
        x = Tensor(np.random.default_rng(16).standard_normal((2, 1, 256)).astype(np.float32))
        with T.no_grad():
            trace_t = teacher.forward(x)
        trace_s = student.forward(x)
        pm = D.dual_depth_map(3, 2, (2,))
        D.distill_loss(trace_t, trace_s, pm, DistillConfig(), RES).backward()
        for name, p in teacher.named_parameters():
            assert p.grad is None, name


def test_signal_suite():
    with criterion("signal suite (SNR 1e-9, SI-SDR invariance, MRSTFT oracle)"):
        rng = np.random.default_rng(17)
        for _ in range(100):
            snr = float(rng.uniform(-10, 25))
            clean = sig.AudioClip(rng.standard_normal(512) * 0.3)
            noise = sig.AudioClip(rng.standard_normal(512) * 0.3)
            res = sig.mix_components(clean, noise, snr)
            measured = sig.measured_snr_db(res.clean.samples, res.noise.samples)
            assert abs(measured - snr) < 1e-9

        ref = rng.standard_normal(512)
        est = ref + 0.2 * rng.standard_normal(512)
        base = sig.si_sdr(est, ref)
        for a in (0.25, 3.0, -2.0):
            assert abs(sig.si_sdr(a * est, ref) - base) < 1e-9

        # fixed fixtures against the direct-DFT oracle
        from test_signal import mrstft_oracle

        cfg = StftConfig(128, 32, 64)
        for seed in (0, 1, 2):
            r2 = np.random.default_rng(seed)
            a = r2.standard_normal(512) * 0.3
            b = r2.standard_normal(512) * 0.3
            ours = sig.mrstft_loss(a, b, [cfg]).item()
            oracle = mrstft_oracle(a, b, cfg)
            assert abs(ours - oracle) < 1e-6 * max(1.0, abs(oracle))


@pytest.mark.slow
def test_desk_scale_distillation_experiment():
    """Directional analogue of the published improvement: with one teacher
    and five student seeds, multi-view transfer should match or beat the
    supervised baseline on held-out noise in most seeds, and the transfer
    term must shrink monotonically per epoch in every distillation run."""
    from mvat.experiment import DeskExperimentConfig, run_desk_experiment

    with criterion("desk-scale distillation experiment (5 seeds, 30 epochs)"):
        out = run_desk_experiment(DeskExperimentConfig(), progress=print)
        summary = out["summary"]
        print(f"  total runtime: {summary['total_runtime_s'] / 60:.1f} min "
              f"(target < 45 min on a desktop CPU)")
        assert summary["mvat_wins_vs_baseline"] >= 3, summary
        assert summary["at_term_monotone_in_all_runs"], summary
