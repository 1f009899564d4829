"""Event synthesis, event frames and thermal enhancement on a toy signal.

    python3 demos/02_sensors.py
"""
import numpy as np

from mmnerf.sensors import accumulate_events, enhance_thermal, normalize_event_frame, synthesize_events, thermal_to_unit

# a bright bar sliding across an 8x16 sensor
T, H, W = 40, 8, 16
times = np.linspace(0.0, 1.0, T)
video = np.full((T, H, W), 0.1)
for k in range(T):
    x = int(k / T * (W - 3))
    video[k, :, x:x + 3] = 0.9

stream = synthesize_events(video, threshold=0.2, timestamps=times)
print(len(stream), "events;", int((stream.p > 0).sum()), "positive")

frames = accumulate_events(stream, frame_times=[0.0, 0.5], window=0.5)
for f in frames:
    img = normalize_event_frame(f)
    print("window starting", f.t_start, "-> pixel range", img.min().round(2), img.max().round(2))

# raw thermal counts with a vignette, flattened by the enhancement step
yy, xx = np.mgrid[0:32, 0:32]
raw = 2400 + 300 * np.exp(-((yy - 16) ** 2 + (xx - 16) ** 2) / 200.0)
raw[10:14, 20:24] += 120   # a warm object
enh = thermal_to_unit(enhance_thermal(raw.astype(np.uint16)))
print("enhanced thermal", enh.shape, "range", enh.min().round(3), enh.max().round(3))
print("warm patch vs surroundings:", enh[10:14, 20:24].mean().round(3), enh[4:8, 20:24].mean().round(3))
