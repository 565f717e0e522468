"""How the tracking metrics are computed.

Builds tiny hand-made scenarios and walks through CLEAR matching with
correspondence carry, identity-switch accounting, the MOTA decomposition,
and voxel-grid IoU reporting.
"""

import numpy as np

from mot3d.evaluation import evaluate_tracking, grid_iou_report, match_frame, mota, prf


def c(x):
    return np.array([x, 0.0, 0.0])


print("1. One frame of CLEAR matching (radius 0.4 m)")
gt = [(1, c(0.0)), (2, c(2.0))]
preds = [(10, c(0.05)), (20, c(3.0))]
matches, counts, carry = match_frame(gt, preds)
print(f"   matches {matches}; misses {counts.m}, false positives {counts.fp}")

print("\n2. Correspondence carry and identity switches")
carry = None
frames = [
    [(10, c(0.0)), (20, c(2.0))],  # both tracked correctly
    [(10, c(0.0)), (20, c(2.0))],
    [(20, c(0.0)), (10, c(2.0))],  # the two track ids swap
]
for t, preds in enumerate(frames):
    _, counts, carry = match_frame(gt, preds, carry=carry)
    print(f"   frame {t}: mme={counts.mme}  carry={carry}")

print("\n3. MOTA decomposition")
print(f"   perfect run:   {mota(0, 0, 0, 100):.3f}")
print(f"   half missed:   {mota(50, 0, 0, 100):.3f}")
print(f"   noisy tracker: {mota(20, 30, 10, 100):.3f}")
value = mota(8984, 1873, 58, 38298)
print(f"   a realistic operating point: m=8984 fp=1873 mme=58 gt=38298 -> {100 * value:.1f}%")

print("\n4. Precision / recall / F1")
p, r, f1, _ = prf(tp=70, m=30, fp=30)
print(f"   tp=70 m=30 fp=30 -> precision {p:.2f}, recall {r:.2f}, F1 {f1:.2f}")

print("\n5. Accumulated report over a sequence (per-class breakdown)")
gt_frames = [[(1, "chair", c(0.0)), (2, "table", c(2.0))] for _ in range(4)]
pred_frames = [[(10, "chair", c(0.0)), (20, "table", c(2.0))] for _ in range(3)]
pred_frames.append([(10, "chair", c(0.0))])  # table lost in the last frame
report = evaluate_tracking([(gt_frames, pred_frames)])
print("   " + report.format_table().replace("\n", "\n   "))

print("\n6. Voxel-grid IoU of reconstructed objects")
a = np.zeros((32, 32, 32), dtype=bool)
a[8:16, 8:16, 8:16] = True
b = np.roll(a, 4, axis=0)
overall, per_class = grid_iou_report([(a, a, "chair"), (a, b, "table")])
print(f"   identical grids: IoU 1.0; half-shifted cube: IoU {per_class['table']:.3f}")
print(f"   overall mean {overall:.3f}")
