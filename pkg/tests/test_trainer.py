import numpy as np
import pytest
import torch

from memseg.corpus import SceneConfig, flip_sample, generate
from memseg.model import MemorySegmenter
from memseg.trainer import (
    Checkpoint,
    CheckpointError,
    TrainConfig,
    TrainingError,
    collate,
    evaluate_model,
    flip_augment,
    infer,
    poly_lr,
    predict,
    train,
)

SMALL = SceneConfig(height=32, width=32, n_frames=4, min_radius=4, max_radius=5, max_objects=3)


def tiny(**kw):
    base = dict(dim=8, heads=2, n_modules=1, patch=8, height=32, width=32, steps=3, batch=2, log_every=0)
    base.update(kw)
    return TrainConfig(**base)


@pytest.fixture(scope="module")
def corpus():
    return generate(4, SMALL, seed=0)


@pytest.fixture(scope="module")
def ckpt(corpus):
    return train(tiny(), corpus)


def test_poly_schedule():
    assert [poly_lr(0.1, s, 10, 0.0) for s in range(10)] == [0.1] * 10
    assert poly_lr(0.1, 0, 10, 0.9) == 0.1
    assert poly_lr(0.1, 10, 10, 0.9) == 0.0
    lrs = [poly_lr(1.0, s, 20, 0.9) for s in range(21)]
    assert all(a > b for a, b in zip(lrs, lrs[1:]))
    assert poly_lr(1.0, 5, 10, 0.9) == pytest.approx(0.5 ** 0.9, abs=1e-15)


def test_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(lr=0)
    with pytest.raises(ValueError):
        TrainConfig(flip_prob=1.5)
    with pytest.raises(ValueError):
        TrainConfig.from_dict({"lr": 1e-3, "colour": 1})
    assert TrainConfig.from_dict({"lr": 0.5}).lr == 0.5


def test_training_is_deterministic(corpus):
    runs = []
    for _ in range(2):
        losses = []
        train(tiny(), corpus, callback=lambda s, l, m: losses.append(l))
        runs.append(losses)
    assert len(runs[0]) == 3
    assert runs[0] == runs[1]


def test_empty_corpus():
    with pytest.raises(ValueError):
        train(tiny(), [])


def test_non_finite_batch_aborts_with_its_ids(corpus):
    bad = [s.copy() for s in corpus]
    bad[2].frames[1, 3, 3, 0] = np.nan
    with pytest.raises(TrainingError, match=r"batch samples \[.*2.*\]"):
        train(tiny(steps=4, flip_prob=0.0), bad)


def test_callback_can_stop_early(corpus):
    ck = train(tiny(steps=10), corpus, callback=lambda s, l, m: s >= 2)
    assert ck.step == 2


def test_flip_augment(corpus):
    rng = np.random.default_rng(0)
    s = corpus[0]
    assert flip_augment(s, rng, 0.0) is s
    f = flip_augment(s, rng, 1.0)
    assert np.array_equal(f.frames, flip_sample(s).frames)


def test_zero_gradient_step_only_applies_weight_decay():
    p = torch.nn.Parameter(torch.tensor([0.5, -2.0, 0.0]))
    opt = torch.optim.Adam([p], lr=0.01, weight_decay=0.0)
    p.grad = torch.zeros(3)
    opt.step()
    assert torch.equal(p.data, torch.tensor([0.5, -2.0, 0.0]))
    opt = torch.optim.Adam([p], lr=0.01, weight_decay=0.1)
    p.grad = torch.zeros(3)
    opt.step()
    # decay pulls non-zero weights toward zero and leaves zeros alone
    assert p.data[0] < 0.5 and p.data[1] > -2.0 and p.data[2] == 0


def test_checkpoint_roundtrip_is_bit_exact(tmp_path, ckpt, corpus):
    path = tmp_path / "model.lctr"
    ckpt.save(path)
    raw = path.read_bytes()
    assert raw.startswith(b"LCTR1\n")
    back = Checkpoint.load(path)
    assert back.step == ckpt.step and back.config == ckpt.config
    a, b = ckpt.build_model(), back.build_model()
    frames, _, ids = collate(corpus[:2], a.cfg)
    with torch.no_grad():
        pa, pb = a(frames, ids)["probs"], b(frames, ids)["probs"]
    assert pa.numpy().tobytes() == pb.numpy().tobytes()


def test_checkpoint_errors(tmp_path, ckpt):
    (tmp_path / "junk").write_bytes(b"nope\n")
    with pytest.raises(CheckpointError):
        Checkpoint.load(tmp_path / "junk")
    wrong = Checkpoint(dict(ckpt.params), ckpt.config, ckpt.step, ckpt.rng_state,
                       type(ckpt.model_config)(**{**ckpt.model_config.to_dict(), "dim": 16, "heads": 2}))
    with pytest.raises(CheckpointError):
        wrong.build_model()


def test_resume_continues_the_step_count(tmp_path, corpus, ckpt):
    ckpt.save(tmp_path / "c.lctr")
    more = train(tiny(steps=5), corpus, resume=Checkpoint.load(tmp_path / "c.lctr"))
    assert more.step == 5


def test_infer_contract(ckpt, corpus):
    video = corpus[1]
    out = infer(video, ckpt)
    assert len(out) == video.n_frames
    for r in out:
        assert r.pixel_probs.shape == (32, 32) and r.binary.dtype == bool
        assert np.array_equal(r.binary, r.pixel_probs > 0.5)
        assert r.patch_probs.shape == (4, 4) and len(r.aux_probs) == 1


def test_infer_resizes_back_to_the_input(ckpt):
    video = generate(1, SceneConfig(height=48, width=48, n_frames=3, min_radius=5, max_radius=6), seed=3)[0]
    out = infer(video, ckpt)
    assert out[0].pixel_probs.shape == (48, 48)


def test_prediction_depends_on_frame_order(ckpt, corpus):
    """Frames 1..T-2 reversed: the last frame is unchanged and so is the global memory
    (interval > T samples only frame 0), so any change comes from the local memory."""
    model = ckpt.build_model()
    video = corpus[0]
    shuffled = video.copy()
    shuffled.frames[1:-1] = video.frames[1:-1][::-1]
    a = predict(model, [video])[0]["probs"]
    b = predict(model, [shuffled])[0]["probs"]
    assert np.array_equal(a[0], b[0])
    assert not np.allclose(a[-1], b[-1])


def test_global_memory_reads_only_sampled_frames(ckpt, corpus):
    model = ckpt.build_model()
    video = corpus[0]
    other = video.copy()
    other.frames[2:] = 0.0
    a = predict(model, [video], interval=10)[0]["probs"]
    b = predict(model, [other], interval=10)[0]["probs"]
    # frames 0 and 1 see the same history and the same global memory
    assert np.array_equal(a[:2], b[:2])
    c = predict(model, [other], interval=2)[0]["probs"]
    assert not np.array_equal(b[0], c[0])


def test_context_vectors_constant_in_length(ckpt):
    model = ckpt.build_model()
    counts = set()
    for n in (2, 9):
        video = generate(1, SceneConfig(height=32, width=32, n_frames=n, min_radius=4, max_radius=5), seed=1)[0]
        counts.add(predict(model, [video])[0]["context_vectors"])
    assert counts == {model.cfg.n_global + model.cfg.n_local}


def test_evaluate_model_counts_frames(ckpt, corpus):
    r = evaluate_model(ckpt.build_model(), corpus[:2])
    assert r.n_samples == 8 and 0 <= r.mean_iou <= 1


def test_word_attention_is_frame_specific():
    """Some event video must move its most-attended word between frames."""
    torch.manual_seed(0)
    model = MemorySegmenter(TrainConfig(steps=1).model_config())
    videos = generate(20, SceneConfig(kind="event"), seed=0)
    changing = [len(set(out["word_attn"].argmax(-1).tolist())) > 1 for out in predict(model, videos)]
    assert any(changing)
