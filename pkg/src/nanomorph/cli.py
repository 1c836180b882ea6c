"""Command-line entry points: serve the HTTP API, run the ablation grid."""

from __future__ import annotations

import dataclasses
from pathlib import Path

import click

from .bundles import KIND_FEATURES, KIND_SEGMENTER, find_bundles, synthetic_bundle
from .classifier.train import TrainConfig
from .experiments import (
    ENCODER_SEGMENTER,
    ENCODER_SELFSUP,
    enumerate_configs,
    load_manifest,
    run_grid,
    write_results,
)


@click.group()
def main() -> None:
    """Nanoparticle segmentation, morphometry and classification workbench."""


@main.command()
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False),
              default=None, help="JSON config file.")
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", type=int, default=None, help="Overrides config port.")
@click.option("--data-dir", type=click.Path(file_okay=False), default=None)
@click.option("--bundle-dir", type=click.Path(file_okay=False), default=None)
@click.option("--static-dir", type=click.Path(file_okay=False), default=None,
              help="Directory with a built web UI to serve at /.")
def serve(config_path, host, port, data_dir, bundle_dir, static_dir) -> None:
    """Run the HTTP service."""
    import uvicorn

    from .service import create_app, load_config

    cfg = load_config(config_path)
    overrides = {}
    if port is not None:
        overrides["port"] = port
    if data_dir is not None:
        overrides["data_dir"] = Path(data_dir)
    if bundle_dir is not None:
        overrides["bundle_dir"] = Path(bundle_dir)
    if static_dir is not None:
        overrides["static_dir"] = Path(static_dir)
    if overrides:
        cfg = dataclasses.replace(cfg, **overrides)
    uvicorn.run(create_app(cfg), host=host, port=cfg.port)


def _role_bundles(bundle_dir) -> dict:
    """Map encoder roles to bundles found on disk, synthetic fallbacks otherwise.

    The first prompt-segmenter bundle (by name) covers the segmenter-features
    role and the first feature-encoder bundle covers self-supervised-features.
    """
    roles = {
        ENCODER_SEGMENTER: synthetic_bundle("synthetic-segmenter", KIND_SEGMENTER,
                                            patch_size=16, grid_size=64),
        ENCODER_SELFSUP: synthetic_bundle("synthetic-features", KIND_FEATURES,
                                          patch_size=14, grid_size=37, seed=7),
    }
    if bundle_dir is not None:
        found = sorted(find_bundles(bundle_dir), key=lambda b: b.name)
        for b in found:
            if b.kind == KIND_SEGMENTER and roles[ENCODER_SEGMENTER].is_synthetic:
                roles[ENCODER_SEGMENTER] = b
            elif b.kind == KIND_FEATURES and roles[ENCODER_SELFSUP].is_synthetic:
                roles[ENCODER_SELFSUP] = b
    return roles


@main.command()
@click.option("--manifest", "manifest_path", required=True,
              type=click.Path(exists=True, dir_okay=False),
              help="Dataset CSV: image_path,mask_path,label.")
@click.option("--bundles", "bundle_dir", type=click.Path(exists=True, file_okay=False),
              default=None, help="Directory of bundle manifests; synthetic if omitted.")
@click.option("--out", "out_path", required=True, type=click.Path(dir_okay=False),
              help="Result JSON path; a CSV twin lands next to it.")
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--configs", "config_filter", default=None,
              help="Comma-separated substrings; a config runs only if its "
                   "encoder|sampling|pooling|head key contains every one.")
@click.option("--max-epochs", type=int, default=None)
@click.option("--patience", type=int, default=None)
@click.option("--batch-size", type=int, default=None)
def grid(manifest_path, bundle_dir, out_path, seed, config_filter,
         max_epochs, patience, batch_size) -> None:
    """Run the 24-configuration ablation grid and write the result table."""
    manifest = load_manifest(manifest_path)
    bundles = _role_bundles(bundle_dir)

    configs = enumerate_configs(seed)
    if config_filter:
        tokens = [t.strip() for t in config_filter.split(",") if t.strip()]
        configs = [c for c in configs if all(t in c.key for t in tokens)]
        if not configs:
            raise click.UsageError(f"--configs {config_filter!r} matches no configuration")

    overrides = {}
    if max_epochs is not None:
        overrides["max_epochs"] = max_epochs
    if patience is not None:
        overrides["patience"] = patience
    if batch_size is not None:
        overrides["batch_size"] = batch_size
    train_cfg = TrainConfig(seed=seed, **overrides)

    total = len(configs)
    click.echo(f"running {total} configuration(s) on {len(manifest.entries)} samples")
    table = run_grid(
        manifest, bundles, configs=configs, train_cfg=train_cfg, seed=seed,
        progress=lambda f: click.echo(f"  {round(f * total)}/{total} done", err=True)
        if abs(f * total - round(f * total)) < 1e-9 else None,
    )
    write_results(table, out_path)

    for r in table.results:
        status = f"test_acc={r.test_acc:.4f} macro_f1={r.test_macro_f1:.4f}" \
            if r.ok else f"FAILED: {r.error}"
        click.echo(f"{r.config.key}: {status}")
    click.echo(f"results written to {out_path} (+ CSV twin)")


if __name__ == "__main__":
    main()
