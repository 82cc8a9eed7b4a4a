"""Train the full desk-scale stack on the SemShapes dataset.

Five kinds of models, all small CPU-friendly networks:
  * segmenter           image -> semantic mask
  * autoencoder         (image, mask) -> per-region style codes -> image
  * decision classifiers  full visibility + top/mid/bottom masked variants
  * identity embedder   contrastive on the scenes' identity factor
  * attribute oracle    eight binary appearance attributes

Takes ~25 minutes on two CPU cores.  Rerunning skips anything already
trained in the workdir.

Run:  python demos/02_train_stack.py [--workdir demo_workspace]
"""

import argparse
import time
from pathlib import Path

from steexlab.autoencoder import (
    AutoencoderTrainConfig,
    SegmenterTrainConfig,
    train_autoencoder,
    train_segmenter,
)
from steexlab.classifiers import ClassifierTrainConfig, VISIBILITY_PRESETS, train_classifier
from steexlab.evaluation import (
    EmbedderTrainConfig,
    OracleTrainConfig,
    train_attribute_oracle,
    train_identity_embedder,
)
from steexlab.synthetic import SceneDataset

parser = argparse.ArgumentParser()
parser.add_argument("--workdir", default="demo_workspace")
args = parser.parse_args()
workdir = Path(args.workdir)

ds = SceneDataset.load(workdir / "dataset")
print(f"dataset: {len(ds)} scenes")


def step(name, fn):
    out = workdir / name
    if (out / "manifest.json").exists():
        print(f"[skip] {name} already trained")
        return
    t0 = time.time()
    fn(out)
    print(f"[done] {name} in {time.time() - t0:.0f}s")


step("seg", lambda out: print("  val mIoU:", train_segmenter(
    ds, SegmenterTrainConfig(seed=10), out_dir=out).manifest["val_miou"]))
step("ae", lambda out: print("  val MAE:", train_autoencoder(
    ds, AutoencoderTrainConfig(epochs=12, seed=11), out_dir=out)[1].manifest["val_mae"]))
for name, vis in VISIBILITY_PRESETS.items():
    step(f"clf_{name}", lambda out, v=vis: print("  val acc:", train_classifier(
        ds, ClassifierTrainConfig(epochs=8, seed=20, visibility=v()), out_dir=out
    ).manifest["val_accuracy"]))
step("embedder", lambda out: print("  verification acc:", train_identity_embedder(
    ds, EmbedderTrainConfig(seed=30), out_dir=out).manifest["val_verification_accuracy"]))
step("oracle", lambda out: print("  attribute accs:", train_attribute_oracle(
    ds, OracleTrainConfig(seed=40), out_dir=out).manifest["val_attribute_accuracy"]))

print("\nall models trained under", workdir)
