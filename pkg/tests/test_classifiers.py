import json

import numpy as np
import pytest
import torch

from steexlab.classifiers import (
    ClassifierNet,
    ClassifierTrainConfig,
    DecisionModel,
    VisibilityRegion,
    train_classifier,
    zero_outside_region,
)
from steexlab.errors import DatasetError, ShapeError
from steexlab.profiles import SEMSHAPES_64
from steexlab.synthetic import (
    LABEL_GO,
    SceneSpec,
    build_dataset,
    ingest_external,
    render_scene,
    sample_scene,
)
from steexlab.types import ImageTensor


def _random_model(seed=0, visibility=VisibilityRegion.full()):
    torch.manual_seed(seed)
    return DecisionModel(net=ClassifierNet(), profile=SEMSHAPES_64,
                         visibility=visibility, manifest={})


class TestPredict:
    def test_probabilities_sum_to_one(self):
        model = _random_model()
        rng = np.random.default_rng(0)
        img = ImageTensor(pixels=rng.uniform(-1, 1, (64, 64, 3)).astype(np.float32))
        probs = model.predict(img)
        assert probs.shape == (2,)
        assert abs(probs.sum() - 1.0) < 1e-6

    def test_shape_mismatch_rejected(self):
        model = _random_model()
        with pytest.raises(ShapeError):
            model.predict(ImageTensor(pixels=np.zeros((32, 32, 3), dtype=np.float32)))

    def test_gradient_matches_finite_differences(self):
        model = _random_model(seed=3)
        rng = np.random.default_rng(4)
        x0 = rng.uniform(-0.5, 0.5, size=(64, 64, 3))

        def scalar(x_np):
            with torch.no_grad():
                probs = model.probs_t(torch.from_numpy(x_np[None]).permute(0, 3, 1, 2).double())
            return float(torch.log(probs[0, 1]))

        x_t = torch.from_numpy(x0[None]).permute(0, 3, 1, 2).double().requires_grad_(True)
        torch.log(model.probs_t(x_t)[0, 1]).backward()
        grad = x_t.grad[0].permute(1, 2, 0).numpy()

        h = 1e-6
        for k in range(10):
            v = rng.normal(size=x0.shape)
            v /= np.linalg.norm(v)
            numeric = (scalar(x0 + h * v) - scalar(x0 - h * v)) / (2 * h)
            analytic = float((grad * v).sum())
            rel = abs(numeric - analytic) / max(abs(numeric), abs(analytic), 1e-12)
            assert rel < 1e-4, f"probe {k}: rel err {rel}"


class TestVisibility:
    def test_invisible_pixel_changes_leave_output_bit_exact(self):
        model = _random_model(seed=1, visibility=VisibilityRegion.top_band())
        rng = np.random.default_rng(2)
        base = rng.uniform(-1, 1, (64, 64, 3)).astype(np.float32)
        altered = base.copy()
        altered[20:, :, :] = rng.uniform(-1, 1, (44, 64, 3)).astype(np.float32)
        p0 = model.predict(ImageTensor(pixels=base))
        p1 = model.predict(ImageTensor(pixels=altered))
        assert np.array_equal(p0, p1)

    def test_masking_commutes_with_prediction(self):
        model = _random_model(seed=5, visibility=VisibilityRegion.middle_rect())
        rng = np.random.default_rng(6)
        img = ImageTensor(pixels=rng.uniform(-1, 1, (64, 64, 3)).astype(np.float32))
        masked_input = zero_outside_region(img, model.visibility)
        assert np.array_equal(
            model.predict(img), model.without_visibility().predict(masked_input)
        )

    def test_degenerate_region_rejected(self):
        with pytest.raises(ValueError):
            VisibilityRegion(top=0.5, bottom=0.5)

    def test_region_serialization_round_trip(self):
        region = VisibilityRegion.middle_rect()
        assert VisibilityRegion.from_jsonable(region.to_jsonable()) == region


class TestTrainClassifier:
    def test_single_class_dataset_rejected(self, tmp_path):
        rng = np.random.Generator(np.random.PCG64(3))
        (tmp_path / "imgs").mkdir()
        (tmp_path / "masks").mkdir()
        meta = {"items": {}}
        from steexlab.imaging import write_image_png, write_mask_png

        for i in range(8):
            spec = sample_scene(rng, identity=0, desired_label=LABEL_GO)
            image, mask, label, _ = render_scene(spec)
            write_image_png(tmp_path / "imgs" / f"s{i}.png", image)
            write_mask_png(tmp_path / "masks" / f"s{i}.png", mask)
            meta["items"][f"s{i}"] = {"label": label}
        (tmp_path / "meta.json").write_text(json.dumps(meta))
        ds = ingest_external(tmp_path / "imgs", tmp_path / "masks",
                             tmp_path / "meta.json", tmp_path / "out")
        with pytest.raises(DatasetError):
            train_classifier(ds, ClassifierTrainConfig(epochs=1))

    def test_unlabeled_dataset_rejected(self, tmp_path):
        ds = build_dataset(8, seed=1, out_dir=tmp_path / "src")
        from steexlab.synthetic import ingest_external as ing

        unlabeled = ing(ds.root / "images", ds.root / "masks", None, tmp_path / "unlab")
        with pytest.raises(DatasetError):
            train_classifier(unlabeled, ClassifierTrainConfig(epochs=1))


@pytest.mark.stack
class TestTrainedClassifiers:
    def test_full_model_validation_accuracy(self, desk):
        assert desk.classifiers["full"].manifest["val_accuracy"] >= 0.95

    def test_masked_models_less_accurate_than_full(self, desk):
        full_acc = desk.classifiers["full"].manifest["val_accuracy"]
        for name in ("top", "mid", "bottom"):
            assert desk.classifiers[name].manifest["val_accuracy"] < full_acc

    def test_green_light_scene_predicts_go(self, desk):
        spec = SceneSpec(layout_seed=11, style_seed=22, identity=1,
                         light_green=True, obstacle_present=False)
        image, _, label, _ = render_scene(spec)
        assert label == LABEL_GO
        probs = desk.classifiers["full"].predict(image)
        assert probs[LABEL_GO - 1] > 0.9

    def test_gray_image_valid_probability_vector(self, desk):
        probs = desk.classifiers["full"].predict(
            ImageTensor(pixels=np.zeros((64, 64, 3), dtype=np.float32))
        )
        assert abs(probs.sum() - 1.0) < 1e-6
        assert np.all(probs >= 0)

    def test_checkpoint_round_trip(self, desk, tmp_path):
        model = desk.classifiers["top"]
        model.save(tmp_path / "clf")
        again = DecisionModel.load(tmp_path / "clf")
        assert again.visibility == model.visibility
        rng = np.random.default_rng(8)
        img = ImageTensor(pixels=rng.uniform(-1, 1, (64, 64, 3)).astype(np.float32))
        assert np.array_equal(model.predict(img), again.predict(img))
