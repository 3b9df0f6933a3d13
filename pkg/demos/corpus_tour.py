"""
A tour of the synthetic video corpus
====================================

Each sample is a short clip of coloured shapes plus a referring expression
that picks out exactly one of them. Run with ``python demos/corpus_tour.py``.
"""

import tempfile

import numpy as np

from memseg.corpus import (
    SceneConfig,
    concat_spatial,
    concat_temporal,
    contrast_sample,
    generate,
    read_dataset,
    write_dataset,
)

# A handful of mixed scenes. The seed fixes every pixel.
samples = generate(6, SceneConfig(), seed=0)
for s in samples:
    area = s.masks.reshape(s.n_frames, -1).sum(1)
    print(f"{' '.join(s.expression):40s} frames {s.n_frames}  mask px {area.min()}..{area.max()}")

# The roles behind an expression are (phrase, role) pairs
print(samples[0].roles)

#########################################################################
# Event scenes: two identical objects, one of them falls halfway through.
# Before the fall the frames alone cannot tell the twins apart.

event = generate(1, SceneConfig(kind="event"), seed=3)[0]
ev = event.meta["event_frame"]
rows = [np.nonzero(m.any(1))[0] for m in event.masks]
print("event at frame", ev, "| referent top row per frame:", [int(r[0]) for r in rows])

#########################################################################
# Contrast pairs put a distractor video next to the query video, either
# side by side or one after the other. The distractor never holds the referent.

pool = generate(40, SceneConfig(n_frames=4), seed=1)
i, j = contrast_sample(pool, seed=0)[0]
side = concat_spatial(pool[i], pool[j])
seq = concat_temporal(pool[i], pool[j])
print("spatial", side.frames.shape, "temporal", seq.frames.shape)
print("query:", " ".join(pool[i].expression), "| distractor:", " ".join(pool[j].expression))

# Round trip through the on-disk format
with tempfile.TemporaryDirectory() as root:
    write_dataset(root, samples)
    back = read_dataset(root)
    print("round trip identical:", all(a.frames.tobytes() == b.frames.tobytes() for a, b in zip(samples, back)))
