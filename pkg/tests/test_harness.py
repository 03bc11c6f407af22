import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from depthformer.cli import main
from depthformer.depthmap import DepthMap
from depthformer.harness import checkpoint as ck
from depthformer.harness.config import dump_config, load_config, parse_pairs
from depthformer.harness.evaluate import ablation, AblationConfig, evaluate
from depthformer.harness.geometry import unproject
from depthformer.harness.io import (
    ingest_depth_pair,
    parse_report,
    read_depth,
    read_points,
    write_depth,
    write_pgm16,
    write_report,
    write_text_depth,
)
from depthformer.harness.scenes import SceneSpec, depth_to_color, gen_scene
from depthformer.harness.train import AdamW, TrainConfig, TrainingDiverged, lr_at, train
from depthformer.metrics import EvalConfig
from depthformer.model import DepthFormer
from depthformer.tensor import Parameter

TINY = dict(
    height=32, width=32, n_scenes=2, patch_size=4, embed_dim=8, depths=(2, 2), num_heads=(2, 2),
    out_levels=2, conv_channels=4, attn_heads=2, attn_points=2, decoder_channels=(4, 4), log_every=0,
)


def tiny_cfg(**kw) -> TrainConfig:
    return TrainConfig(**{**TINY, **kw})


# scenes


def test_degenerate_scene_is_constant_plane():
    img, depth = gen_scene(SceneSpec(seed=1, n_rects=0, gradient=(0.0, 0.0)))
    d = depth.array()
    assert np.all(d == d[0, 0])
    assert np.array_equal(img, np.broadcast_to(depth_to_color(d[:1, :1], 1.0, 10.0), img.shape))


def test_scene_deterministic():
    a = gen_scene(SceneSpec(seed=7))
    b = gen_scene(SceneSpec(seed=7))
    assert a[0].tobytes() == b[0].tobytes() and a[1].array().tobytes() == b[1].array().tobytes()


def test_scene_depths_in_range():
    for seed in range(100):
        _, depth = gen_scene(SceneSpec(seed=seed, height=16, width=16))
        d = depth.array()
        assert d.min() >= 1.0 and d.max() <= 10.0 and depth.valid.all()


@given(st.integers(0, 10_000))
def test_scene_occlusion_takes_nearest(seed):
    spec = SceneSpec(seed=seed, height=16, width=16, n_rects=5)
    _, depth = gen_scene(spec)
    # replay the rectangle draws
    rng = np.random.default_rng(seed)
    rng.uniform(-0.5, 0.5, 2)
    rng.uniform(0, 1)
    best = np.full((16, 16), np.inf)
    for _ in range(spec.n_rects):
        rh, rw = rng.integers(2, 9), rng.integers(2, 9)
        top, left = rng.integers(0, 16 - rh + 1), rng.integers(0, 16 - rw + 1)
        d = rng.uniform(1.0, 10.0)
        rng.uniform(-1, 1, 3)
        best[top : top + rh, left : left + rw] = np.minimum(best[top : top + rh, left : left + rw], d)
    covered = np.isfinite(best)
    assert np.array_equal(depth.array()[covered], best[covered])


def test_scene_rejects_bad_range():
    with pytest.raises(ValueError):
        gen_scene(SceneSpec(seed=0, d_min=5.0, d_max=5.0))


# config


def test_config_file_and_overrides(tmp_path):
    path = tmp_path / "c.cfg"
    path.write_text("# comment\niterations = 12\ndepths = 2,2\nlr = 1e-3\n")
    cfg = load_config(TrainConfig, path, {"iterations": "7"})
    assert (cfg.iterations, cfg.depths, cfg.lr) == (7, (2, 2), 1e-3)
    assert load_config(TrainConfig, None, parse_pairs(dump_config(cfg).splitlines())) == cfg
    ev = load_config(EvalConfig, None, {"crop": "garg", "bins": "0-10,10-80"})
    assert ev.bins == ((0.0, 10.0), (10.0, 80.0))
    with pytest.raises(KeyError, match="bogus"):
        load_config(TrainConfig, None, {"bogus": "1"})


def test_train_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(warmup=1.0)
    with pytest.raises(ValueError):
        TrainConfig(variant="nope")


# schedule and optimiser


def test_lr_schedule_endpoints():
    total, base = 1000, 3e-4
    assert lr_at(0, total, base, 0.3) == 0.0
    assert lr_at(300, total, base, 0.3) == base
    assert lr_at(total, total, base, 0.3) == 0.0


@given(st.integers(1, 5000), st.floats(0.0, 0.95))
def test_lr_nonnegative_and_continuous(total, warm):
    base = 1e-3
    vals = [lr_at(t, total, base, warm) for t in range(0, total + 1, max(1, total // 50))]
    assert min(vals) >= 0.0 and max(vals) <= base * (1 + 1e-12)
    t_w = warm * total
    if 1 <= t_w < total - 1:
        eps = 1e-9 * total
        assert abs(lr_at(t_w - eps, total, base, warm) - lr_at(t_w + eps, total, base, warm)) < 1e-6 * base


def test_adamw_decoupled_decay():
    p = Parameter(np.array([2.0]))
    p.grad = np.array([0.0])
    opt = AdamW([p], weight_decay=0.1)
    opt.step(0.5)
    assert p.data[0] == 2.0 * (1 - 0.05)
    q = Parameter(np.array([1.0]))
    q.grad = np.array([4.0])
    AdamW([q], weight_decay=0.0).step(0.01)
    assert math.isclose(q.data[0], 1.0 - 0.01, rel_tol=1e-6)


# training and checkpoints


def test_zero_iterations_equals_initialisation(tmp_path):
    cfg = tiny_cfg(iterations=0)
    train(cfg, tmp_path / "m.ckpt")
    init = DepthFormer(cfg.model_config(), seed=cfg.seed).state_dict()
    loaded = ck.load_checkpoint(tmp_path / "m.ckpt")
    assert loaded.iteration == 0
    assert all(np.array_equal(loaded.tensors[k], v) for k, v in init.items())


def test_training_writes_curve_and_is_deterministic(tmp_path):
    cfg = tiny_cfg(iterations=3, lr=1e-3)
    a = train(cfg, tmp_path / "a.ckpt")
    train(cfg, tmp_path / "b.ckpt")
    assert (tmp_path / "a.ckpt").read_bytes() == (tmp_path / "b.ckpt").read_bytes()
    curve = ck.read_loss_curve(tmp_path / "a.ckpt.loss.csv")
    assert [c[0] for c in curve] == [0, 1, 2] and curve == a.curve


def test_divergence_saves_last_good(tmp_path, monkeypatch):
    import depthformer.harness.train as tr

    calls = {"n": 0}
    real = tr.silog_loss

    def flaky(pred, gt, cfg):
        calls["n"] += 1
        out = real(pred, gt, cfg)
        return out * float("nan") if calls["n"] == 3 else out

    monkeypatch.setattr(tr, "silog_loss", flaky)
    with pytest.raises(TrainingDiverged):
        train(tiny_cfg(iterations=5), tmp_path / "d.ckpt")
    assert ck.load_checkpoint(tmp_path / "d.ckpt").iteration == 2


def test_checkpoint_round_trip_byte_identical(tmp_path):
    cfg = tiny_cfg()
    model = DepthFormer(cfg.model_config(), seed=3)
    ck.save_checkpoint(tmp_path / "a.ckpt", model, cfg, 17)
    loaded = ck.load_checkpoint(tmp_path / "a.ckpt")
    assert loaded.iteration == 17 and loaded.train_config() == cfg
    ck.save_checkpoint(tmp_path / "b.ckpt", ck.build_model(loaded), loaded.train_config(), loaded.iteration)
    assert (tmp_path / "a.ckpt").read_bytes() == (tmp_path / "b.ckpt").read_bytes()
    assert all(np.array_equal(loaded.tensors[k], v) for k, v in model.state_dict().items())


def test_checkpoint_errors(tmp_path):
    cfg = tiny_cfg()
    model = DepthFormer(cfg.model_config(), seed=0)
    blob = ck.encode(ck.Checkpoint(model.state_dict(), ck.parse_pairs(dump_config(cfg).splitlines())))
    with pytest.raises(ck.TruncatedCheckpoint):
        ck.decode(blob[: len(blob) // 2])
    with pytest.raises(ck.TruncatedCheckpoint):
        ck.decode(blob[:-2])
    with pytest.raises(ck.VersionMismatch):
        ck.decode(blob.replace(b"DEPTHFORMER-CKPT 1", b"DEPTHFORMER-CKPT 9", 1))
    with pytest.raises(ck.CheckpointError, match="magic"):
        ck.decode(b"hello\n")
    tensors = model.state_dict()
    name = "decoder.head.bias"
    tensors["decoder.head.offset"] = tensors.pop(name)
    renamed = ck.Checkpoint(tensors, ck.parse_pairs(dump_config(cfg).splitlines()))
    with pytest.raises(ck.SchemaMismatch, match="decoder.head.offset") as info:
        ck.build_model(ck.decode(ck.encode(renamed)))
    assert name in str(info.value)
    bad = model.state_dict()
    bad[name] = np.zeros(2)
    with pytest.raises(ck.SchemaMismatch, match=name):
        ck.build_model(ck.Checkpoint(bad, renamed.config))


def test_checkpoint_with_config_change_rejected(tmp_path):
    cfg = tiny_cfg()
    ck.save_checkpoint(tmp_path / "a.ckpt", DepthFormer(cfg.model_config(), 0), cfg)
    loaded = ck.load_checkpoint(tmp_path / "a.ckpt")
    changed = ck.with_config(loaded, config={**loaded.config, "embed_dim": "16"})
    with pytest.raises(ck.SchemaMismatch, match="incompatible"):
        ck.build_model(changed)


# io


def test_pgm_scale_and_invalid(tmp_path):
    units = np.array([[5120, 0], [256, 65535]])
    write_pgm16(tmp_path / "d.pgm", units, 1 / 256)
    d = read_depth(tmp_path / "d.pgm")
    assert d.array()[0, 0] == 20.0 and d.array()[1, 0] == 1.0
    assert d.valid.tolist() == [[True, False], [True, True]]


def test_pgm_default_scale_without_comment(tmp_path):
    (tmp_path / "d.pgm").write_bytes(b"P5\n1 1\n65535\n" + np.array([5120], dtype=">u2").tobytes())
    assert read_depth(tmp_path / "d.pgm").array()[0, 0] == 20.0


def test_malformed_headers(tmp_path):
    (tmp_path / "a.pgm").write_bytes(b"P5\n2 2\n255\n" + bytes(4))
    with pytest.raises(ValueError, match="malformed"):
        read_depth(tmp_path / "a.pgm")
    (tmp_path / "b.pgm").write_bytes(b"P5\n2 2\n65535\n" + bytes(3))
    with pytest.raises(ValueError, match="malformed"):
        read_depth(tmp_path / "b.pgm")
    (tmp_path / "c.txt").write_text("2 x\n1 2\n")
    with pytest.raises(ValueError, match="malformed"):
        read_depth(tmp_path / "c.txt")


def test_text_depth_round_trip(tmp_path):
    d = np.array([[1.5, 0.0, 3.25]])
    write_text_depth(tmp_path / "d.txt", d)
    got = read_depth(tmp_path / "d.txt")
    assert np.array_equal(got.array(), d) and got.valid.tolist() == [[True, False, True]]


def test_pair_shape_mismatch_names_both(tmp_path):
    write_text_depth(tmp_path / "p.txt", np.ones((2, 3)))
    write_text_depth(tmp_path / "g.txt", np.ones((3, 2)))
    with pytest.raises(ValueError, match=r"\(2, 3\).*\(3, 2\)"):
        ingest_depth_pair(tmp_path / "p.txt", tmp_path / "g.txt")


def test_write_depth_pgm_round_trip(tmp_path):
    d = DepthMap.sparse(np.array([[20.0, 0.0], [1.5, 3.0]]))
    write_depth(tmp_path / "x.pgm", d)
    got = read_depth(tmp_path / "x.pgm")
    assert np.array_equal(got.array(), [[20.0, 0.0], [1.5, 3.0]]) and np.array_equal(got.valid, d.valid)


# geometry


def test_unproject_examples():
    d = np.zeros((5, 5))
    d[2, 3] = 5.0
    pts = unproject(DepthMap.sparse(d), 2.0, 2.0, 3.0, 2.0)
    assert pts.tolist() == [[0.0, 0.0, 5.0]]
    d = np.zeros((4, 3))
    d[3, 2] = 4.0
    assert unproject(DepthMap.sparse(d), 1, 1, 0, 0).tolist() == [[8.0, 12.0, 4.0]]


def test_unproject_similarity(rng):
    d = DepthMap.dense(rng.uniform(1, 10, (4, 5)))
    a = unproject(d, 3.0, 4.0, 2.0, 1.5)
    b = unproject(DepthMap.dense(2 * d.array()), 3.0, 4.0, 2.0, 1.5)
    assert np.array_equal(b, 2 * a)
    with pytest.raises(ValueError):
        unproject(d, 0.0, 1.0, 0, 0)


# evaluation


def test_bypass_gives_perfect_report():
    scenes = [gen_scene(SceneSpec(seed=s, height=16, width=16)) for s in range(3)]
    (label, rep), = evaluate(None, scenes, bypass_gt=True)
    assert label == "Overall" and rep.d1 == 1.0 and rep.abs_rel == 0.0 and rep.rmse == 0.0


def test_evaluate_deterministic_and_round_trip(tmp_path):
    cfg = tiny_cfg(iterations=2)
    res = train(cfg, tmp_path / "m.ckpt")
    scenes = [gen_scene(SceneSpec(seed=s, **cfg.scene_kwargs())) for s in (90, 91)]
    a = evaluate(res.model, scenes, binned=True)
    b = evaluate(tmp_path / "m.ckpt", scenes, binned=True)
    assert a == b
    assert [lbl for lbl, _ in a] == ["0-20", "Overall"]


def test_report_files(tmp_path):
    scenes = [gen_scene(SceneSpec(seed=1, height=16, width=16))]
    rows = evaluate(None, scenes, bypass_gt=True)
    kv, table = write_report(tmp_path / "r", rows)
    parsed = parse_report(kv.read_text())
    assert parsed["Overall"]["d1"] == 1.0 and parsed["Overall"]["n_pixels"] == 256
    assert table.read_text().splitlines()[0].split()[:3] == ["bin", "d1", "d2"]


def test_ablation_rows(tmp_path):
    rows = ablation(tiny_cfg(iterations=1), AblationConfig(n_heldout=2), tmp_path)
    assert [lbl for lbl, _ in rows] == ["baseline", "+CB", "+HAHI", "+CB+HAHI"]
    assert (tmp_path / "ablation.txt").exists() and (tmp_path / "CB_HAHI.ckpt").exists()


def test_ablation_rejects_overlapping_seeds():
    with pytest.raises(ValueError, match="overlap"):
        ablation(tiny_cfg(iterations=0), AblationConfig(n_heldout=2, heldout_seed=1000))


# cli


def test_cli_round_trip(tmp_path, capsys):
    assert main(["gen", str(tmp_path / "s"), "--count", "2", "--height", "16", "--width", "16", "--pgm"]) == 0
    pgm = sorted((tmp_path / "s").glob("*.pgm"))
    assert main(["metrics", str(pgm[0]), str(pgm[0]), "--binned", "--out", str(tmp_path / "m")]) == 0
    assert parse_report((tmp_path / "m.txt").read_text())["Overall"]["d1"] == 1.0
    assert main(["unproject", str(pgm[0]), str(tmp_path / "p.txt"), "--fx", "10", "--fy", "10", "--cx", "8", "--cy", "8"]) == 0
    assert read_points(tmp_path / "p.txt").shape == (256, 3)
    assert main(["eval", "--bypass-gt", "--data", str(tmp_path / "s")]) == 0
    cfg_file = tmp_path / "t.cfg"
    cfg_file.write_text("".join(f"{k} = {v if not isinstance(v, tuple) else ','.join(map(str, v))}\n" for k, v in TINY.items()))
    assert main(["train", str(tmp_path / "m.ckpt"), "--config", str(cfg_file), "-s", "iterations=1"]) == 0
    assert main(["eval", str(tmp_path / "m.ckpt"), "--count", "2", "--binned"]) == 0
    assert "Overall" in capsys.readouterr().out
    assert main(["metrics", str(pgm[0]), str(tmp_path / "nope.pgm")]) == 2


def test_cli_gradcheck_subset(capsys):
    assert main(["gradcheck", "--instances", "1", "--only", "silog_loss", "patch_merge"]) == 0
    assert "2/2 instances passed" in capsys.readouterr().out


def test_train_config_dump(capsys):
    assert main(["train", "--dump-config", "-s", "lr=0.5"]) == 0
    assert "lr = 0.5" in capsys.readouterr().out
