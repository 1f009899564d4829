"""Synthesize a tiny dataset, train briefly, evaluate and render.

Takes a few seconds on one core.  The scores are low because the run is
short; the desk preset (``TrainConfig.desk()``) is what the acceptance run uses.

    python3 demos/03_train_tiny.py [out_dir]
"""
import sys
from pathlib import Path

from mmnerf.field import ModelConfig
from mmnerf.pipeline import TrainConfig, evaluate_checkpoint, load_dataset, render_view_file, train
from mmnerf.synth import Intrinsics, TrajectorySpec, generate_dataset, orchard_scene

out = Path(sys.argv[1] if len(sys.argv) > 1 else "demo_out")
data = out / "tiny_ds"
generate_dataset(orchard_scene(), TrajectorySpec(n_views=12), Intrinsics(24, 24, 50.0), data,
                 event_threshold=0.2, seed=0, supersample=3)
ds = load_dataset(data)
print(len(ds), "views;", len(ds.events()), "events;", "holdout", ds.split("holdout"))

model = ModelConfig(coarse_resolution=(16, 16, 16), fine_resolution=(24, 24, 24), channels=4,
                    storage="dense", hidden_width=16, hidden_layers=1, n_freqs=2)
cfg = TrainConfig.desk(iterations=150, batch=256, n_coarse=16, n_fine=16, model=model)
ckpt = out / "tiny.npz"
_, trace, _ = train(ds, cfg, ckpt)
totals = trace.totals()
print("loss: first %.3f  last %.3f" % (totals[0], totals[-1]))

report = evaluate_checkpoint(ckpt, ds, "holdout")
m = report["mean"]
print("holdout rgb psnr %.2f dB, ssim %.3f" % (m["rgb"]["psnr"], m["rgb"]["ssim"]))

cam = ds.camera(ds.split("holdout")[0])
render_view_file(ckpt, cam, "rgb", out / "tiny_rgb.png", 2.0)
render_view_file(ckpt, cam, "xspec", out / "tiny_xspec.png", 2.0)
print("wrote", out / "tiny_rgb.png", "and", out / "tiny_xspec.png")
