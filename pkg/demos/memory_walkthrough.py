"""
Constant memory over long videos
================================

The segmenter never attends over all past frames. A fixed set of global
cells summarises sampled frames up front, and a fixed set of local cells is
rewritten after every frame. This script shows the stored context staying
the same size as the clip grows, and what the write gates look like.
"""

import torch

from memseg import MemorySegmenter, ModelConfig
from memseg.corpus import VOCAB

torch.manual_seed(0)
cfg = ModelConfig(dim=16, heads=2, n_modules=2, patch=8, height=32, width=32, n_words=6,
                  vocab_size=len(VOCAB))
model = MemorySegmenter(cfg).eval()
ids = torch.tensor([VOCAB.encode("the red circle".split()) + [0] * 3])

print(f"{cfg.n_patches} patches per frame -> {cfg.n_global} global and {cfg.n_local} local cells")
with torch.no_grad():
    for n in (4, 40, 400):
        out = model(torch.rand(1, n, 32, 32, 3), ids)
        print(f"{n:4d} frames: probs {tuple(out['probs'].shape)}, context vectors {out['context_vectors']}")

#########################################################################
# A closed gate leaves the cells untouched; an open one replaces them with
# the mean candidate. Anything in between blends the two per cell.

ctl = model.local_writer
cells = ctl.initial((1,))[0]
x = torch.randn(cfg.n_patches, ctl.w_c.shape[1] - cfg.dim)
for gate in (0.0, 1.0, None):
    ctl.force_gate = gate
    moved = (ctl(x, cells) - cells).norm().item()
    print(f"gate {gate}: cells moved by {moved:.3f}")
ctl.force_gate = None
