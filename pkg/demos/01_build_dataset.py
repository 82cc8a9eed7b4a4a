"""Build the SemShapes synthetic dataset and look at what's inside.

Every scene is rendered from a fully specified SceneSpec, so ground truth
(mask, label, attributes, identity) is exact by construction.  The decision
label is `go` iff the signal light is green AND no blocking obstacle exists.

Run:  python demos/01_build_dataset.py [--workdir demo_workspace]
"""

import argparse
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from steexlab.synthetic import SceneDataset, build_dataset

parser = argparse.ArgumentParser()
parser.add_argument("--workdir", default="demo_workspace")
parser.add_argument("--count", type=int, default=2000)
parser.add_argument("--seed", type=int, default=1234)
args = parser.parse_args()

workdir = Path(args.workdir)
dataset_dir = workdir / "dataset"

if (dataset_dir / "manifest.json").exists():
    print(f"reusing dataset at {dataset_dir}")
    ds = SceneDataset.load(dataset_dir)
else:
    print(f"building {args.count} scenes (seed {args.seed}) ...")
    ds = build_dataset(args.count, args.seed, dataset_dir)

print(f"\ncount:          {len(ds)}")
print(f"label balance:  {ds.manifest['label_counts']}")
print(f"train/val:      {len(ds.train_indices)}/{len(ds.val_indices)}")
print(f"class presence: {ds.manifest['class_presence']}")

# a contact sheet of the first few scenes with their masks
fig, axes = plt.subplots(2, 6, figsize=(14, 5))
for k in range(6):
    image = ds.image(k)
    mask = ds.mask(k)
    label = ds.profile.decision_class_names[ds.label(k) - 1]
    axes[0, k].imshow((image.pixels + 1) / 2)
    axes[0, k].set_title(f"#{k}: {label}", fontsize=9)
    axes[1, k].imshow(mask.labels, cmap="tab10", vmin=1, vmax=8)
    for ax in (axes[0, k], axes[1, k]):
        ax.axis("off")
fig.suptitle("SemShapes scenes (top) and ground-truth masks (bottom)")
out = workdir / "demo01_contact_sheet.png"
fig.savefig(out, dpi=110, bbox_inches="tight")
print(f"\nwrote {out}")
