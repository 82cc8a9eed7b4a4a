"""Command-line interface.

Every run takes a fresh ``--out`` directory (re-using one is an error, never
an overwrite) and writes a ``resolved_config.json`` snapshot of exactly the
configuration it ran with.  Model arguments accept either checkpoint
directory paths or ids registered under the home directory (env
STEEXLAB_HOME or ``--home``).
"""

from __future__ import annotations

import functools
import json
from dataclasses import replace
from pathlib import Path

import click
import numpy as np

from . import engine
from .autoencoder import (
    AutoencoderTrainConfig,
    SegmenterTrainConfig,
    SemanticStack,
    train_autoencoder,
    train_segmenter,
)
from .classifiers import ClassifierTrainConfig, VISIBILITY_PRESETS, train_classifier
from .errors import ConfigError, SteexlabError
from .evaluation import (
    EmbedderTrainConfig,
    MetricReport,
    OracleTrainConfig,
    ablation_suite,
    attributes_changed,
    config_fingerprint,
    desk_fid_images,
    format_table,
    identity_preservation,
    impact_table,
    lambda_sweep,
    mean_total_displacement,
    save_reports,
    success_rate,
    train_attribute_oracle,
    train_identity_embedder,
)
from .imaging import read_image_png
from .registry import ModelRegistry
from .service import default_home
from .synthetic import SceneDataset, build_dataset, ingest_external
from .types import AUTO_FLIP, CounterfactualRequest, OptimizerConfig, RegionTargetSpec


def _guard(fn):
    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except SteexlabError as exc:
            raise click.ClickException(f"{type(exc).__name__}: {exc}") from exc

    return wrapper


def _load_config_file(path: str | None, allowed: set[str]) -> dict:
    if path is None:
        return {}
    data = json.loads(Path(path).read_text())
    unknown = set(data) - allowed
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)} (allowed: {sorted(allowed)})")
    return data


def _start_run(out: str, resolved: dict) -> Path:
    run_dir = Path(out)
    if run_dir.exists():
        raise click.ClickException(
            f"run directory {run_dir} already exists; runs are append-only"
        )
    run_dir.mkdir(parents=True)
    (run_dir / "resolved_config.json").write_text(json.dumps(resolved, indent=2, sort_keys=True))
    return run_dir


def _registry(home: str | None) -> ModelRegistry:
    return ModelRegistry(Path(home) if home else default_home())


def _parse_regions_arg(regions: str | None, profile) -> RegionTargetSpec:
    if regions is None or regions == "all":
        return RegionTargetSpec.all_classes(profile.num_classes)
    if regions in ("", "none"):
        return RegionTargetSpec.none()
    indices = []
    for token in regions.split(","):
        token = token.strip()
        if not token:
            continue
        if token.isdigit():
            indices.append(int(token))
        else:
            if token not in profile.class_names:
                raise click.ClickException(f"unknown region name {token!r}")
            indices.append(profile.class_index(token))
    return RegionTargetSpec(frozenset(indices))


def _parse_counter_arg(counter: str | None, class_names) -> int | None:
    if counter is None or counter == "auto":
        return AUTO_FLIP
    if counter.isdigit():
        return int(counter)
    if counter in class_names:
        return class_names.index(counter) + 1
    raise click.ClickException(f"unknown counter class {counter!r}")


@click.group()
def main():
    """Semantic-steering counterfactual explanation workbench."""


# -- dataset ----------------------------------------------------------------


@main.group("dataset")
def dataset_group():
    """Dataset construction."""


@dataset_group.command("synth")
@click.option("--count", type=int, default=2000, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out", required=True)
@click.option("--config", "config_path", default=None, help="JSON config file")
@_guard
def dataset_synth(count, seed, out, config_path):
    """Generate a synthetic labelled dataset."""
    cfg = _load_config_file(config_path, {"count", "seed"})
    count = int(cfg.get("count", count))
    seed = int(cfg.get("seed", seed))
    run_dir = _start_run(out, {"command": "dataset synth", "count": count, "seed": seed})
    dataset = build_dataset(count, seed, run_dir)
    click.echo(f"dataset of {len(dataset)} scenes at {run_dir}")


@main.command("ingest")
@click.option("--images", required=True)
@click.option("--masks", required=True)
@click.option("--meta", "meta_path", default=None)
@click.option("--out", required=True)
@_guard
def ingest(images, masks, meta_path, out):
    """Normalize external image/mask pairs into the dataset layout."""
    run_dir = _start_run(out, {"command": "ingest", "images": images, "masks": masks,
                               "meta": meta_path})
    dataset = ingest_external(images, masks, meta_path, run_dir)
    click.echo(f"ingested {len(dataset)} items at {run_dir}")


# -- training ---------------------------------------------------------------


@main.group("train")
def train_group():
    """Train one model of the stack."""


def _train_common(fn):
    fn = click.option("--dataset", "dataset_path", required=True)(fn)
    fn = click.option("--out", required=True)(fn)
    fn = click.option("--epochs", type=int, default=None)(fn)
    fn = click.option("--seed", type=int, default=0, show_default=True)(fn)
    fn = click.option("--config", "config_path", default=None)(fn)
    return fn


def _resolve_train_config(config_cls, config_path, epochs, seed, **extra):
    # structured fields (e.g. the classifier's visibility region) are set via
    # dedicated flags, not the JSON config file
    allowed = set(config_cls.__dataclass_fields__) - set(extra)
    cfg = _load_config_file(config_path, allowed)
    merged = dict(cfg)
    if epochs is not None:
        merged["epochs"] = epochs
    merged["seed"] = merged.get("seed", seed)
    merged.update(extra)
    return config_cls(**merged)


@train_group.command("seg")
@_train_common
@_guard
def train_seg(dataset_path, out, epochs, seed, config_path):
    dataset = SceneDataset.load(dataset_path)
    config = _resolve_train_config(SegmenterTrainConfig, config_path, epochs, seed)
    run_dir = _start_run(out, {"command": "train seg", "dataset": dataset_path,
                               "config": config.__dict__})
    model = train_segmenter(dataset, config, out_dir=run_dir)
    click.echo(f"segmenter val mIoU {model.manifest['val_miou']:.4f} -> {run_dir}")


@train_group.command("ae")
@_train_common
@_guard
def train_ae(dataset_path, out, epochs, seed, config_path):
    dataset = SceneDataset.load(dataset_path)
    config = _resolve_train_config(AutoencoderTrainConfig, config_path, epochs, seed)
    run_dir = _start_run(out, {"command": "train ae", "dataset": dataset_path,
                               "config": config.__dict__})
    _, generator = train_autoencoder(dataset, config, out_dir=run_dir)
    click.echo(f"autoencoder val MAE {generator.manifest['val_mae']:.4f} -> {run_dir}")


@train_group.command("clf")
@_train_common
@click.option("--visibility", type=click.Choice(sorted(VISIBILITY_PRESETS)), default="full",
              show_default=True)
@_guard
def train_clf(dataset_path, out, epochs, seed, config_path, visibility):
    dataset = SceneDataset.load(dataset_path)
    config = _resolve_train_config(
        ClassifierTrainConfig, config_path, epochs, seed,
        visibility=VISIBILITY_PRESETS[visibility](),
    )
    run_dir = _start_run(out, {"command": "train clf", "dataset": dataset_path,
                               "visibility": visibility,
                               "config": {**config.__dict__, "visibility": visibility}})
    model = train_classifier(dataset, config, out_dir=run_dir)
    click.echo(f"classifier val accuracy {model.manifest['val_accuracy']:.4f} -> {run_dir}")


@train_group.command("embedder")
@_train_common
@_guard
def train_embedder(dataset_path, out, epochs, seed, config_path):
    dataset = SceneDataset.load(dataset_path)
    config = _resolve_train_config(EmbedderTrainConfig, config_path, epochs, seed)
    run_dir = _start_run(out, {"command": "train embedder", "dataset": dataset_path,
                               "config": config.__dict__})
    model = train_identity_embedder(dataset, config, out_dir=run_dir)
    click.echo(
        f"embedder verification accuracy {model.manifest['val_verification_accuracy']:.4f} "
        f"-> {run_dir}"
    )


@train_group.command("oracle")
@_train_common
@_guard
def train_oracle(dataset_path, out, epochs, seed, config_path):
    dataset = SceneDataset.load(dataset_path)
    config = _resolve_train_config(OracleTrainConfig, config_path, epochs, seed)
    run_dir = _start_run(out, {"command": "train oracle", "dataset": dataset_path,
                               "config": config.__dict__})
    model = train_attribute_oracle(dataset, config, out_dir=run_dir)
    accs = model.manifest["val_attribute_accuracy"]
    click.echo(f"oracle mean attribute accuracy {float(np.mean(accs)):.4f} -> {run_dir}")


# -- explanation ------------------------------------------------------------


def _stack_options(fn):
    fn = click.option("--segmenter", required=True, help="segmenter id or checkpoint dir")(fn)
    fn = click.option("--autoencoder", required=True, help="autoencoder id or checkpoint dir")(fn)
    fn = click.option("--model", required=True, help="classifier id or checkpoint dir")(fn)
    fn = click.option("--home", default=None, envvar="STEEXLAB_HOME")(fn)
    return fn


def _optimizer_options(fn):
    fn = click.option("--lambda", "lambda_weight", type=float, default=0.3, show_default=True)(fn)
    fn = click.option("--lr", type=float, default=0.01, show_default=True)(fn)
    fn = click.option("--steps", type=int, default=100, show_default=True)(fn)
    fn = click.option("--seed", type=int, default=0, show_default=True)(fn)
    return fn


def _load_stack_and_model(registry, segmenter, autoencoder, model):
    seg = registry.resolve(segmenter, "segmenter")
    encoder, generator = registry.resolve(autoencoder, "autoencoder")
    stack = SemanticStack(segmenter=seg, encoder=encoder, generator=generator)
    clf = registry.resolve(model, "classifier")
    return stack, clf


@main.command("explain")
@click.option("--image", "image_path", required=True)
@_stack_options
@click.option("--regions", default=None, help="comma-separated names/indices; default all")
@click.option("--counter", default=None, help="counter class name/index; default auto-flip")
@_optimizer_options
@click.option("--out", required=True)
@_guard
def explain(image_path, segmenter, autoencoder, model, home, regions, counter,
            lambda_weight, lr, steps, seed, out):
    """Generate one counterfactual explanation for an image file."""
    registry = _registry(home)
    stack, clf = _load_stack_and_model(registry, segmenter, autoencoder, model)
    query = read_image_png(image_path)
    optimizer = OptimizerConfig(lambda_weight=lambda_weight, learning_rate=lr,
                                num_steps=steps, seed=seed)
    request = CounterfactualRequest(
        query_image=query,
        target_regions=_parse_regions_arg(regions, stack.profile),
        optimizer=optimizer,
        counter_class=_parse_counter_arg(counter, clf.class_names),
        model_id=model,
    )
    run_dir = _start_run(out, {"command": "explain", "image": image_path, "model": model,
                               "segmenter": segmenter, "autoencoder": autoencoder,
                               "regions": regions, "counter": counter,
                               "optimizer": optimizer.to_jsonable()})
    result = engine.generate_counterfactual(stack, clf, request)
    engine.save_result_dir(result, run_dir / "result", query_image=query)
    click.echo(f"success={result.success} P(counter)={result.final_counter_prob:.4f} "
               f"digest={engine.result_digest(result)[:16]} -> {run_dir}")


@main.command("sweep-regions")
@click.option("--image", "image_path", required=True)
@_stack_options
@click.option("--region-sets", required=True,
              help="semicolon-separated region lists, e.g. 'light;obstacle;light,obstacle'")
@click.option("--counter", default=None)
@_optimizer_options
@click.option("--out", required=True)
@_guard
def sweep_regions(image_path, segmenter, autoencoder, model, home, region_sets, counter,
                  lambda_weight, lr, steps, seed, out):
    """Independent counterfactuals for several target-region sets."""
    registry = _registry(home)
    stack, clf = _load_stack_and_model(registry, segmenter, autoencoder, model)
    query = read_image_png(image_path)
    optimizer = OptimizerConfig(lambda_weight=lambda_weight, learning_rate=lr,
                                num_steps=steps, seed=seed)
    specs = [_parse_regions_arg(token, stack.profile) for token in region_sets.split(";")]
    request = CounterfactualRequest(
        query_image=query,
        target_regions=specs[0],
        optimizer=optimizer,
        counter_class=_parse_counter_arg(counter, clf.class_names),
        model_id=model,
    )
    run_dir = _start_run(out, {"command": "sweep-regions", "image": image_path,
                               "model": model, "region_sets": region_sets,
                               "optimizer": optimizer.to_jsonable()})
    results = engine.region_targeted_sweep(stack, clf, request, specs)
    for i, result in enumerate(results):
        engine.save_result_dir(result, run_dir / f"result_{i:06d}", query_image=query)
        click.echo(f"[{i}] regions={sorted(result.target_regions.targeted_classes)} "
                   f"success={result.success}")


@main.command("evaluate")
@click.option("--results", "results_dir", required=True)
@click.option("--out", required=True)
@_guard
def evaluate(results_dir, out):
    """Aggregate persisted result directories into a metric report."""
    root = Path(results_dir)
    result_dirs = sorted(p for p in root.rglob(engine.RESULT_JSON))
    if not result_dirs:
        raise click.ClickException(f"no {engine.RESULT_JSON} found under {root}")
    results = [engine.load_result_dir(p.parent) for p in result_dirs]
    run_dir = _start_run(out, {"command": "evaluate", "results": str(results_dir),
                               "count": len(results)})
    fp = config_fingerprint({"results": str(results_dir), "count": len(results)})
    reports = {
        "success_rate": success_rate(results, fp),
        "mean_displacement_sq": MetricReport(
            "mean_displacement_sq", mean_total_displacement(results), len(results), fp
        ),
    }
    per_item = [
        {"index": i, "success": int(r.success), "counter_class": r.counter_class,
         "final_counter_prob": r.final_counter_prob,
         "displacement_sq": r.total_displacement_sq}
        for i, r in enumerate(results)
    ]
    table = format_table(["metric", "value", "n"],
                         [[k, v.value, v.sample_count] for k, v in reports.items()])
    save_reports(run_dir, "evaluation", reports, per_item=per_item, table=table)
    click.echo(table)


@main.command("ablate")
@click.option("--dataset", "dataset_path", required=True)
@_stack_options
@click.option("--embedder", required=True)
@click.option("--oracle", "oracle_id", default=None)
@click.option("--count", type=int, default=100, show_default=True)
@_optimizer_options
@click.option("--out", required=True)
@_guard
def ablate(dataset_path, segmenter, autoencoder, model, home, embedder, oracle_id, count,
           lambda_weight, lr, steps, seed, out):
    """Full pipeline vs lambda=0 vs ground-truth masks."""
    registry = _registry(home)
    stack, clf = _load_stack_and_model(registry, segmenter, autoencoder, model)
    emb = registry.resolve(embedder, "embedder")
    oracle = registry.resolve(oracle_id, "oracle") if oracle_id else None
    dataset = registry.resolve(dataset_path, "dataset")
    indices = dataset.val_indices[:count]
    optimizer = OptimizerConfig(lambda_weight=lambda_weight, learning_rate=lr,
                                num_steps=steps, seed=seed)
    run_dir = _start_run(out, {"command": "ablate", "dataset": dataset_path, "model": model,
                               "count": len(indices), "optimizer": optimizer.to_jsonable()})
    suite = ablation_suite(stack, clf, dataset, indices, optimizer, emb, oracle)
    rows = []
    for condition, bundle in suite.items():
        reports = {f"{condition}.{k}": v for k, v in bundle["reports"].items()}
        save_reports(run_dir, f"ablation_{condition}", bundle["reports"])
        for key, rep in bundle["reports"].items():
            rows.append([condition, key, rep.value])
    table = format_table(["condition", "metric", "value"], rows)
    (run_dir / "ablation.txt").write_text(table + "\n")
    click.echo(table)


@main.command("lambda-sweep")
@click.option("--dataset", "dataset_path", required=True)
@_stack_options
@click.option("--embedder", default=None)
@click.option("--lambdas", default="0,0.1,0.3,1.0", show_default=True)
@click.option("--count", type=int, default=100, show_default=True)
@_optimizer_options
@click.option("--out", required=True)
@_guard
def lambda_sweep_cmd(dataset_path, segmenter, autoencoder, model, home, embedder, lambdas,
                     count, lambda_weight, lr, steps, seed, out):
    """Success/displacement/identity metrics across lambda values."""
    registry = _registry(home)
    stack, clf = _load_stack_and_model(registry, segmenter, autoencoder, model)
    emb = registry.resolve(embedder, "embedder") if embedder else None
    dataset = registry.resolve(dataset_path, "dataset")
    indices = dataset.val_indices[:count]
    values = [float(tok) for tok in lambdas.split(",") if tok.strip()]
    optimizer = OptimizerConfig(lambda_weight=lambda_weight, learning_rate=lr,
                                num_steps=steps, seed=seed)
    run_dir = _start_run(out, {"command": "lambda-sweep", "dataset": dataset_path,
                               "model": model, "lambdas": values, "count": len(indices),
                               "optimizer": optimizer.to_jsonable()})
    sweep = lambda_sweep(stack, clf, dataset, indices, values, optimizer, emb)
    rows = []
    for lam, reports in sweep.items():
        save_reports(run_dir, f"lambda_{lam}", reports)
        for key, rep in reports.items():
            rows.append([lam, key, rep.value])
    table = format_table(["lambda", "metric", "value"], rows)
    (run_dir / "lambda_sweep.txt").write_text(table + "\n")
    click.echo(table)


@main.command("impact-table")
@click.option("--dataset", "dataset_path", required=True)
@click.option("--models", "model_list", required=True,
              help="comma-separated classifier ids/paths")
@click.option("--segmenter", required=True)
@click.option("--autoencoder", required=True)
@click.option("--home", default=None, envvar="STEEXLAB_HOME")
@click.option("--count", type=int, default=50, show_default=True)
@_optimizer_options
@click.option("--out", required=True)
@_guard
def impact_table_cmd(dataset_path, model_list, segmenter, autoencoder, home, count,
                     lambda_weight, lr, steps, seed, out):
    """Relative per-class impact across decision models."""
    from .engine import run_counterfactual_batch

    registry = _registry(home)
    seg = registry.resolve(segmenter, "segmenter")
    encoder, generator = registry.resolve(autoencoder, "autoencoder")
    stack = SemanticStack(segmenter=seg, encoder=encoder, generator=generator)
    dataset = registry.resolve(dataset_path, "dataset")
    indices = dataset.val_indices[:count]
    images = np.stack([dataset.image(i).pixels for i in indices])
    optimizer = OptimizerConfig(lambda_weight=lambda_weight, learning_rate=lr,
                                num_steps=steps, seed=seed)
    run_dir = _start_run(out, {"command": "impact-table", "dataset": dataset_path,
                               "models": model_list, "count": len(indices),
                               "optimizer": optimizer.to_jsonable()})
    results_by_model = {}
    for token in model_list.split(","):
        token = token.strip()
        clf = registry.resolve(token, "classifier")
        results_by_model[token] = run_counterfactual_batch(
            stack, clf, images, optimizer, model_id=token
        )
    table = impact_table(results_by_model, stack.profile)
    (run_dir / "impact_table.json").write_text(json.dumps(table.to_jsonable(), indent=2))
    rows = [
        [m, ", ".join(table.most_impactful(m)), ", ".join(table.least_impactful(m))]
        for m in results_by_model
    ]
    text = format_table(["model", "most impactful", "least impactful"], rows)
    (run_dir / "impact_table.txt").write_text(text + "\n")
    click.echo(text)


@main.command("serve")
@click.option("--home", default=None, envvar="STEEXLAB_HOME")
@click.option("--port", type=int, default=None, envvar="STEEXLAB_PORT")
@_guard
def serve_cmd(home, port):
    """Run the HTTP service."""
    from .service import serve

    serve(home, port)


if __name__ == "__main__":
    main()
