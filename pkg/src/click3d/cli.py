"""Command-line interface.

Exit codes: 0 ok, 2 partial results (some scenes skipped), 1 fatal.
Set CLICK3D_LOG to a logging level name to control verbosity.
"""

from __future__ import annotations

import json
import logging
import os
import sys
from pathlib import Path

import click as click_cli

from .harness import EvalConfig, evaluate
from .harness import replay as replay_traces
from .scene import load_ply, save_scene
from .synthetic import generate_suite


def _setup_logging():
    level = os.environ.get("CLICK3D_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s")


@click_cli.group()
def main():
    """Interactive 3D point-cloud segmentation toolkit."""
    _setup_logging()


@main.command("eval")
@click_cli.option("--data", "data_dir", required=True, type=click_cli.Path(exists=True))
@click_cli.option("--backend", default="ref",
                  help='"ref", "oracle", "empty", or cmd:"<command>"')
@click_cli.option("--epsilon", default=0.05, show_default=True)
@click_cli.option("--grid", "grid_res", default=0.05, show_default=True)
@click_cli.option("--max-clicks", default=20, show_default=True)
@click_cli.option("--seed", default=0, show_default=True)
@click_cli.option("--filter", "instance_filter", default="all", show_default=True,
                  help='"all", "seen", "unseen", or "classes:1,2,3"')
@click_cli.option("--seen-classes", default="", help="comma-separated class ids")
@click_cli.option("--class-map", type=click_cli.Path(exists=True),
                  help="JSON {scene_id: {instance_id: class_id}}")
@click_cli.option("--budgets", default="", help="comma-separated click budgets for AP")
@click_cli.option("--workers", default=1, show_default=True)
@click_cli.option("--min-points", default=10, show_default=True)
@click_cli.option("--out", "out_dir", required=True, type=click_cli.Path())
def eval_cmd(data_dir, backend, epsilon, grid_res, max_clicks, seed, instance_filter,
             seen_classes, class_map, budgets, workers, min_points, out_dir):
    """Run the simulated-annotator evaluation protocol over a dataset."""
    config = EvalConfig(
        data_dir=data_dir, backend=backend, epsilon=epsilon, grid_res=grid_res,
        max_clicks=max_clicks, seed=seed, instance_filter=instance_filter,
        seen_classes=tuple(int(x) for x in seen_classes.split(",") if x),
        class_map=json.loads(Path(class_map).read_text()) if class_map else {},
        budgets=tuple(int(x) for x in budgets.split(",") if x),
        workers=workers, min_points=min_points, out_dir=out_dir)
    Path(out_dir).mkdir(parents=True, exist_ok=True)
    try:
        result = evaluate(config)
    except Exception as exc:
        click_cli.echo(f"fatal: {exc}", err=True)
        sys.exit(1)
    click_cli.echo(f"evaluated {result.report.n_instances} instances "
                   f"({result.n_skipped_instances} below min-points, "
                   f"{result.n_skipped_scenes} scenes skipped)")
    for q, v in sorted(result.report.noc.items()):
        click_cli.echo(f"NoC@{q}: {v:.2f}")
    if result.ap_table:
        click_cli.echo("budget  AP      AP50    AP25")
        for b, row in sorted(result.ap_table.items()):
            click_cli.echo(f"{b:>6}  {row['ap']:.4f}  {row['ap50']:.4f}  {row['ap25']:.4f}")
    click_cli.echo(f"report written to {out_dir}")
    sys.exit(0 if result.status == "ok" else 2)


@main.command("replay")
@click_cli.option("--traces", "trace_dir", required=True, type=click_cli.Path(exists=True))
@click_cli.option("--out", "out_path", type=click_cli.Path(), help="write report JSON here")
def replay_cmd(trace_dir, out_path):
    """Recompute metrics from session trace logs."""
    try:
        doc = replay_traces(trace_dir)
    except Exception as exc:
        click_cli.echo(f"fatal: {exc}", err=True)
        sys.exit(1)
    text = json.dumps(doc, sort_keys=True, indent=2) + "\n"
    if out_path:
        Path(out_path).write_text(text)
    else:
        click_cli.echo(text, nl=False)
    sys.exit(2 if doc["checksum_warnings"] else 0)


@main.command("convert")
@click_cli.option("--ply", "ply_path", required=True, type=click_cli.Path(exists=True))
@click_cli.option("--out", "out_base", required=True, type=click_cli.Path())
def convert_cmd(ply_path, out_base):
    """Convert a PLY file to the internal scene format."""
    try:
        scene = load_ply(ply_path)
        manifest = save_scene(scene, out_base)
    except Exception as exc:
        click_cli.echo(f"fatal: {exc}", err=True)
        sys.exit(1)
    click_cli.echo(f"{scene.cloud.n_points} points -> {manifest}")


@main.command("synth")
@click_cli.option("--out", "out_dir", required=True, type=click_cli.Path())
@click_cli.option("--scenes", default=10, show_default=True)
@click_cli.option("--seed", default=1234, show_default=True)
def synth_cmd(out_dir, scenes, seed):
    """Generate the bundled synthetic regression suite."""
    paths = generate_suite(out_dir, n_scenes=scenes, seed=seed)
    click_cli.echo(f"wrote {len(paths)} scenes to {out_dir}")


@main.command("serve")
@click_cli.option("--data", "data_dir", type=click_cli.Path(exists=True))
@click_cli.option("--results", "results_dir", type=click_cli.Path())
@click_cli.option("--host", default="127.0.0.1", show_default=True)
@click_cli.option("--port", default=8008, show_default=True)
def serve_cmd(data_dir, results_dir, host, port):
    """Serve live annotation sessions over HTTP."""
    from .service import serve
    serve(data_dir, results_dir, host=host, port=port)


if __name__ == "__main__":
    main()
