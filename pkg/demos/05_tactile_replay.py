"""Feed a recorded force stream through the sensing front end at the two
binarization thresholds. The 0.01 N setting fires on fingertip noise; the
0.3 N low-quality setting only sees the firm press. This is the `replay`
CLI verb as a library call.

Run:  python3 demos/05_tactile_replay.py
"""

import numpy as np

from blindtouch.kinematics import default_robot_model
from blindtouch.tactile import (SensorLayout, binarize_stream, format_mask,
                                lowpass_filter)

rng = np.random.default_rng(4)
T = 125  # one second at the 125 Hz sample rate

# sensor 5 brushes lightly, then presses; everything else is noise floor
stream = np.abs(rng.normal(0.0, 0.004, (T, 16)))
stream[40:70, 5] += 0.05    # light brush: above 0.01 N, below 0.3 N
stream[80:, 5] += 0.60      # firm press: above both

model = default_robot_model()
for threshold in (0.01, 0.3):
    layout = SensorLayout.from_model(model, threshold=threshold)
    masks = binarize_stream(stream, layout)
    line = "".join("#" if m & (1 << 5) else "." for m in masks)
    print(f"threshold {threshold:4.2f} N  sensor 5 per control step: {line}")

filtered = lowpass_filter(stream, 0.4)
print(f"\nlow-pass keeps DC: raw mean {stream[100:, 5].mean():.3f} N -> "
      f"filtered tail {filtered[-1, 5]:.3f} N")
