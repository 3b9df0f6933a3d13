"""
Per-frame cost as videos get longer
===================================

Flattened full attention over every frame's tokens grows with the clip.
The memory pipeline keeps per-frame cost flat. Small dims keep this quick.
"""

from memseg import bench

rows = bench.run([4, 8, 16, 32], tokens_per_frame=64, dim=64, trials=3, warmup=1)
print(bench.to_csv(rows))
for variant in ("memory", "full"):
    slope, (lo, hi) = bench.fit_slope(rows, variant)
    print(f"{variant:6s}: {bench.growth_ratio(rows, variant, 4, 32):.2f}x from 4 to 32 frames, "
          f"slope {slope:.4f} ms/frame per frame [{lo:.4f}, {hi:.4f}]")

# The analytic count matches torch's flop counter
n, d = 256, 64
print("block flops", bench.block_flops(n, d), "of which attention scores", bench.quadratic_flops(n, d))
