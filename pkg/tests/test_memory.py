import numpy as np
import pytest
import torch

import oracles
from memseg.memory import (
    GlobalMemory,
    LocalMemory,
    MaskEmbed,
    SequencingError,
    WriteController,
    build_global_memory,
    context_vectors,
    global_write,
    local_write,
    read,
    sample_frames,
)

pytestmark = pytest.mark.usefixtures("float64")


def controller(dim=4, in_dim=4, n=3, seed=0):
    torch.manual_seed(seed)
    return WriteController(dim, in_dim, n)


def test_gate_closed_is_fixed_point():
    ctl = controller(n=5)
    cells = torch.randn(5, 4)
    ctl.force_gate = 0.0
    out = global_write(torch.randn(7, 4), GlobalMemory(cells), ctl)
    assert torch.allclose(out.cells, cells, atol=1e-12, rtol=0)


def test_gate_open_collapses_to_mean_candidate():
    ctl = controller(n=5)
    cells = torch.randn(5, 4)
    x = torch.randn(7, 4)
    ctl.force_gate = 1.0
    out = ctl(x, cells)
    cand = torch.cat([x, cells.mean(0).expand(7, 4)], -1) @ ctl.w_c.T
    assert torch.allclose(out, cand.mean(0).expand(5, 4), atol=1e-12, rtol=0)


def test_global_write_matches_scalar_transcription():
    ctl = WriteController(2, 2, 1)
    with torch.no_grad():
        ctl.w_c.copy_(torch.tensor([[0.5, -0.3, 0.2, 0.7], [0.1, 0.4, -0.6, 0.25]]))
        ctl.w_o.copy_(torch.tensor([[1.2, -0.4], [0.3, 0.9]]))
    cells = torch.tensor([[0.8, -0.5]])
    x = torch.tensor([[1.0, 2.0], [-0.5, 0.3]])
    got = ctl(x, cells)
    want = oracles.gated_write(x.tolist(), cells.tolist(), ctl.w_c.tolist(), ctl.w_o.tolist())
    assert np.allclose(got.detach().numpy(), want, atol=1e-10, rtol=0)


def test_local_write_matches_scalar_transcription():
    torch.manual_seed(1)
    ctl = WriteController(2, 4, 1)
    embed = MaskEmbed(2, (1, 1))
    v = torch.tensor([[0.3, -1.1]])
    mask = torch.tensor([0.8])
    mem = LocalMemory(torch.tensor([[0.2, 0.6]]), frame_index=0)
    out = local_write(v, mask, mem, ctl, embed, frame=0)
    s = embed(mask).detach()
    want = oracles.gated_write(torch.cat([v, s], -1).tolist(), mem.cells.tolist(), ctl.w_c.tolist(), ctl.w_o.tolist())
    assert np.allclose(out.cells.detach().numpy(), want, atol=1e-10, rtol=0)
    assert out.frame_index == 1
    assert ctl.w_c.shape == (2, 6)  # [V, s] plus pooled cells: 3D inputs


def test_local_write_gate_closed_and_sequencing():
    torch.manual_seed(2)
    ctl = WriteController(4, 8, 6)
    embed = MaskEmbed(4, (2, 2))
    mem = LocalMemory(torch.randn(6, 4), frame_index=3)
    ctl.force_gate = 0.0
    out = local_write(torch.randn(4, 4), torch.rand(4), mem, ctl, embed, frame=3)
    assert torch.allclose(out.cells, mem.cells, atol=1e-12, rtol=0)
    with pytest.raises(SequencingError):
        local_write(torch.randn(4, 4), torch.rand(4), out, ctl, embed, frame=5)


def test_gates_lie_strictly_inside_unit_interval():
    ctl = controller(n=6, seed=5)
    o = ctl.gates(torch.randn(9, 4), torch.randn(6, 4))
    assert ((o > 0) & (o < 1)).all()


def test_sampled_frames():
    assert sample_frames(30, 10) == [0, 10, 20]
    assert sample_frames(1, 10) == [0]
    with pytest.raises(ValueError):
        sample_frames(0, 10)
    with pytest.raises(ValueError):
        sample_frames(5, 0)


@pytest.mark.parametrize("n_frames", [5, 500])
def test_global_capacity_independent_of_length(n_frames):
    n_v = 4
    ctl = WriteController(4, 4, int(1.5 * n_v))
    feats = torch.randn(n_frames, n_v, 4)
    mem = build_global_memory(feats, 10, ctl)
    assert mem.cells.shape == (6, 4)


def test_global_build_writes_sampled_frames_in_order():
    ctl = controller(n=3, seed=7)
    feats = torch.randn(30, 5, 4)
    mem = build_global_memory(feats, 10, ctl)
    cells = ctl.init_cells
    for t in (0, 10, 20):
        cells = ctl(feats[t], cells)
    assert torch.equal(mem.cells, cells)
    # frames between the samples are never read
    feats2 = feats.clone()
    feats2[5] += 100
    assert torch.equal(build_global_memory(feats2, 10, ctl).cells, mem.cells)
    with pytest.raises(ValueError):
        build_global_memory(torch.randn(0, 5, 4), 10, ctl)


def test_mask_embed_shape_and_non_degenerate():
    torch.manual_seed(0)
    embed = MaskEmbed(16, (8, 8))
    zeros, ones = embed(torch.zeros(64)), embed(torch.ones(64))
    assert zeros.shape == (64, 16)
    assert not torch.allclose(zeros, ones)
    with pytest.raises(ValueError):
        embed(torch.full((64,), 1.5))


def test_mask_embed_matches_direct_convolution_and_shifts():
    torch.manual_seed(3)
    embed = MaskEmbed(4, (3, 3))
    mask = torch.zeros(9)
    mask[3] = 1.0  # grid cell (1, 0)
    got = embed(mask).detach().numpy()  # (9, 4)

    def direct(m):
        grid = [m.reshape(3, 3).tolist()]
        h = oracles.conv3x3(grid, embed.conv1.weight.tolist(), embed.conv1.bias.tolist())
        h = [[[float(torch.nn.functional.gelu(torch.tensor(v))) for v in row] for row in plane] for plane in h]
        out = oracles.conv3x3(h, embed.conv2.weight.tolist(), embed.conv2.bias.tolist())
        return np.array(out).reshape(4, 9).T

    assert np.allclose(got, direct(mask), atol=1e-12)
    # away from the border, shifting a one-hot input shifts the response with it
    big = MaskEmbed(4, (9, 9))
    a, b = torch.zeros(81), torch.zeros(81)
    a[4 * 9 + 3] = 1.0
    b[4 * 9 + 4] = 1.0
    ra, rb = big(a).reshape(9, 9, 4), big(b).reshape(9, 9, 4)
    assert torch.allclose(ra[4, 3], rb[4, 4], atol=1e-12)
    assert not torch.allclose(ra[4, 3], rb[4, 3])


def test_read_matches_scalar_transcription():
    v = torch.tensor([[0.4, -0.2], [1.0, 0.5], [-0.3, 0.8]])
    g = torch.tensor([[0.1, 0.9], [-0.7, 0.2]])
    l = torch.tensor([[0.5, 0.5], [0.3, -1.2]])
    got = read(v, GlobalMemory(g), LocalMemory(l))
    want = oracles.read(v.tolist(), g.tolist(), l.tolist())
    assert np.allclose(got.numpy(), want, atol=1e-10, rtol=0)


def test_read_is_invariant_to_cell_order():
    torch.manual_seed(4)
    v, g, l = torch.randn(6, 4), torch.randn(5, 4), torch.randn(3, 4)
    perm = torch.randperm(5)
    assert torch.allclose(read(v, g, l), read(v, g[perm], l), atol=1e-12, rtol=0)


def test_read_with_zero_memory_is_identity():
    v = torch.randn(6, 4)
    assert torch.equal(read(v, torch.zeros(5, 4), torch.zeros(3, 4)), v)
    assert torch.equal(read(v, torch.zeros(0, 4), torch.zeros(0, 4)), v)


def test_context_vector_count():
    g = GlobalMemory(torch.zeros(6, 4))
    l = LocalMemory(torch.zeros(8, 4))
    assert context_vectors(g, l) == 14
