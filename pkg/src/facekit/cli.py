"""Command-line client for the facekit service.

Each subcommand assembles a request, sends it to the service (an in-process
app by default, or a remote instance via --server), and writes the response
to files. All randomness is controlled by an explicit --seed, so reruns with
identical arguments are byte-identical.

Exit codes: 0 success, 1 data error, 2 usage error.
"""

from __future__ import annotations

import json
import sys
from pathlib import Path

import click
import httpx


def _client(server: str | None) -> httpx.Client:
    if server:
        return httpx.Client(base_url=server, timeout=300.0)
    # In-process app; TestClient is a sync httpx.Client over ASGI.
    from fastapi.testclient import TestClient

    from .service import create_app

    return TestClient(create_app())


class DataError(click.ClickException):
    exit_code = 1


def _fail(ctx: click.Context, message: str) -> None:
    if ctx.obj.get("json_errors"):
        sys.stderr.write(json.dumps({"error": message}) + "\n")
        sys.exit(1)
    raise DataError(message)


def _post(ctx: click.Context, path: str, payload: dict) -> dict:
    with _client(ctx.obj.get("server")) as client:
        resp = client.post(path, json=payload)
    if resp.status_code == 400:
        _fail(ctx, resp.json().get("detail", "data error"))
    if resp.status_code == 422:
        raise click.UsageError(f"invalid request: {resp.text}")
    resp.raise_for_status()
    return resp.json()


def _load_config(ctx: click.Context, config_path: str | None,
                 allowed: set[str]) -> dict:
    """Config-file values act as defaults; flags override. Unknown keys are
    a usage error."""
    if not config_path:
        return {}
    try:
        cfg = json.loads(Path(config_path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        _fail(ctx, f"config file: {exc}")
    unknown = sorted(set(cfg) - allowed)
    if unknown:
        raise click.UsageError(f"unknown config keys: {', '.join(unknown)}")
    return cfg


def _read_text(ctx: click.Context, path: str) -> str:
    try:
        return Path(path).read_text()
    except OSError as exc:
        _fail(ctx, str(exc))


def _read_scores(ctx: click.Context, path: str) -> list[float]:
    values = []
    for lineno, line in enumerate(_read_text(ctx, path).splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        try:
            values.append(float(line))
        except ValueError:
            _fail(ctx, f"{path}: line {lineno}: not a number: {line!r}")
    return values


def _read_images_json(ctx: click.Context, path: str) -> list[dict]:
    """Annotated images as JSON: [{"width", "height", "faces": [[x0,y0,x1,y1]]}]."""
    try:
        data = json.loads(_read_text(ctx, path))
    except json.JSONDecodeError as exc:
        _fail(ctx, f"{path}: {exc}")
    if not isinstance(data, list):
        _fail(ctx, f"{path}: expected a JSON list of images")
    return data


def _write(path: str, text: str) -> None:
    Path(path).write_text(text)


@click.group()
@click.option("--server", default=None, metavar="URL",
              help="Remote service URL; defaults to the in-process app.")
@click.option("--json-errors", is_flag=True,
              help="Emit machine-readable error JSON on stderr.")
@click.pass_context
def main(ctx: click.Context, server: str | None, json_errors: bool) -> None:
    """Anchor assignment, scale augmentation planning, and detection
    evaluation tools."""
    ctx.ensure_object(dict)
    ctx.obj["server"] = server
    ctx.obj["json_errors"] = json_errors


@main.command()
@click.argument("width", type=int)
@click.argument("height", type=int)
@click.option("--out", required=True, type=click.Path())
@click.pass_context
def anchors(ctx: click.Context, width: int, height: int, out: str) -> None:
    """Emit the pyramid anchor grid for an image size as line records."""
    if width < 1 or height < 1:
        raise click.UsageError("width and height must be positive")
    resp = _post(ctx, "/anchors", {"width": width, "height": height})
    _write(out, resp["records"])
    click.echo(f"{resp['count']} anchors written to {out}")


@main.command()
@click.option("--annotations", "annotations_path", required=True,
              type=click.Path(), help="JSON image list with faces as x0,y0,x1,y1.")
@click.option("--strategy", type=click.Choice(["standard", "ali-ams"]),
              default="standard", show_default=True)
@click.option("--scores", "scores_path", default=None, type=click.Path(),
              help="Per-anchor score file (one float per line); required "
                   "for ali-ams.")
@click.option("--config", "config_path", default=None, type=click.Path())
@click.option("--out", required=True, type=click.Path())
@click.option("--stats-out", default=None, type=click.Path())
@click.pass_context
def assign(ctx, annotations_path, strategy, scores_path, config_path, out,
           stats_out):
    """Run anchor label assignment for each annotated image."""
    if strategy == "ali-ams" and scores_path is None:
        raise click.UsageError("--strategy ali-ams requires --scores")
    cfg = _load_config(ctx, config_path, {
        "pos_iou_threshold", "neg_iou_threshold", "guarantee_best_anchor"})
    images = _read_images_json(ctx, annotations_path)
    scores = _read_scores(ctx, scores_path) if scores_path else None

    sections, stats = [], []
    for idx, im in enumerate(images):
        payload = {
            "width": im.get("width"), "height": im.get("height"),
            "faces": im.get("faces", []), "strategy": strategy,
            "config": cfg,
        }
        if scores is not None:
            payload["scores"] = scores
        resp = _post(ctx, "/assign", payload)
        sections.append(f"# image {idx}\n" + resp["lines"])
        stats.append(resp["layer_stats"])
    _write(out, "".join(sections))
    if stats_out:
        _write(stats_out, json.dumps(stats, sort_keys=True, indent=2) + "\n")
    click.echo(f"assigned {len(images)} image(s) -> {out}")


@main.command()
@click.option("--annotations", "annotations_path", required=True,
              type=click.Path())
@click.option("--strategy", type=click.Choice(["mst", "rsc", "das", "sse"]),
              required=True)
@click.option("--n-samples", type=int, default=1, show_default=True)
@click.option("--seed", type=int, required=True)
@click.option("--config", "config_path", default=None, type=click.Path())
@click.option("--out", required=True, type=click.Path())
@click.option("--summary-out", default=None, type=click.Path())
@click.pass_context
def augment(ctx, annotations_path, strategy, n_samples, seed, config_path,
            out, summary_out):
    """Sample augmentation plans and report target-layer frequencies."""
    cfg = _load_config(ctx, config_path,
                       {"tr_p5", "tr_p6", "output_side", "r_th"})
    images = _read_images_json(ctx, annotations_path)
    payload = {
        "strategy": strategy, "seed": seed, "n_samples": n_samples,
        "images": images,
        "sse": {k: cfg[k] for k in ("tr_p5", "tr_p6", "output_side") if k in cfg},
        "das": {k: cfg[k] for k in ("r_th", "output_side") if k in cfg},
    }
    resp = _post(ctx, "/augment", payload)
    _write(out, resp["plans"])
    summary = json.dumps(resp["layer_frequencies"], sort_keys=True) + "\n"
    if summary_out:
        _write(summary_out, summary)
    click.echo(summary, nl=False)


@main.command("scale-stats")
@click.option("--annotations", "annotations_path", required=True,
              type=click.Path(), help="Ground-truth annotation text file.")
@click.option("--thresholds", required=True,
              help="Comma-separated scale thresholds in pixels.")
@click.option("--out", required=True, type=click.Path())
@click.pass_context
def scale_stats(ctx, annotations_path, thresholds, out):
    """Cumulative density of face scales at the given thresholds (CSV)."""
    try:
        values = [float(t) for t in thresholds.split(",") if t.strip()]
    except ValueError:
        raise click.UsageError(f"bad --thresholds value: {thresholds!r}")
    if not values:
        raise click.UsageError("--thresholds must list at least one value")
    resp = _post(ctx, "/scale-stats", {
        "annotations_text": _read_text(ctx, annotations_path),
        "thresholds": values,
    })
    _write(out, resp["csv"])
    for t, frac in resp["points"]:
        click.echo(f"fraction(scale < {t:g}) = {frac:.4f}")


@main.command()
@click.option("--annotations", "annotations_path", required=True,
              type=click.Path())
@click.option("--layer", required=True,
              type=click.Choice(["p2", "p3", "p4", "p5", "p6", "p7"]))
@click.option("--ratio", type=float, required=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--max-iterations", type=int, default=30, show_default=True)
@click.option("--out", required=True, type=click.Path())
@click.pass_context
def calibrate(ctx, annotations_path, layer, ratio, seed, max_iterations, out):
    """Bisect the sampled-face scale to hit a target matched-fraction."""
    images = _read_images_json(ctx, annotations_path)
    resp = _post(ctx, "/calibrate", {
        "images": images, "target_layer": layer, "target_ratio": ratio,
        "seed": seed, "max_iterations": max_iterations,
    })
    _write(out, json.dumps(resp, sort_keys=True, indent=2) + "\n")
    status = "converged" if resp["converged"] else "NOT converged"
    click.echo(f"{status}: scale={resp['scale']:.3f} "
               f"achieved_ratio={resp['achieved_ratio']:.3f} "
               f"after {resp['iterations']} iteration(s)")
    if not resp["converged"]:
        click.echo("warning: iteration cap reached before convergence", err=True)


@main.command("eval")
@click.option("--gt", "gt_path", required=True, type=click.Path())
@click.option("--predictions", "pred_path", required=True, type=click.Path())
@click.option("--subsets", "subsets_path", default=None, type=click.Path(),
              help="JSON {subset: {image_path: [gt indices]}}.")
@click.option("--nms", "apply_nms", is_flag=True,
              help="Apply NMS (IoU 0.6, pre-topk 5000, post-topk 750).")
@click.option("--nfa-threshold", type=float, default=0.8, show_default=True)
@click.option("--out", required=True, type=click.Path())
@click.option("--curve-out", default=None, type=click.Path())
@click.pass_context
def eval_cmd(ctx, gt_path, pred_path, subsets_path, apply_nms, nfa_threshold,
             out, curve_out):
    """Evaluate predictions against ground truth: AP, PR curve, NFA."""
    subsets = None
    if subsets_path:
        try:
            subsets = json.loads(_read_text(ctx, subsets_path))
        except json.JSONDecodeError as exc:
            _fail(ctx, f"{subsets_path}: {exc}")
    payload = {
        "gt_text": _read_text(ctx, gt_path),
        "pred_text": _read_text(ctx, pred_path),
        "subsets": subsets,
        "nfa_threshold": nfa_threshold,
    }
    if apply_nms:
        payload["nms"] = {}
    resp = _post(ctx, "/evaluate", payload)
    _write(out, json.dumps(resp["report"], sort_keys=True) + "\n")
    if curve_out:
        _write(curve_out, resp["curve_csv"])
    for name in sorted(resp["report"]):
        sub = resp["report"][name]
        click.echo(f"{name}: ap={sub['ap']:.6f} nfa={sub['nfa']}")


@main.command()
@click.option("--assignment", "assignment_path", required=True,
              type=click.Path(), help="Assignment lines from the assign command.")
@click.option("--scores-main", "main_path", required=True, type=click.Path())
@click.option("--scores-prog", "prog_path", required=True, type=click.Path())
@click.option("--width", type=int, required=True)
@click.option("--height", type=int, required=True)
@click.option("--config", "config_path", default=None, type=click.Path())
@click.option("--out-prefix", required=True,
              help="Prefix for mask / label / loss output files.")
@click.pass_context
def attention(ctx, assignment_path, main_path, prog_path, width, height,
              config_path, out_prefix):
    """Attention masks, discrepancy labels, and the combined loss."""
    cfg = _load_config(ctx, config_path, {
        "gamma_balance", "focal_alpha", "focal_gamma",
        "confidence_threshold", "neighborhood_sizes"})
    lines = "\n".join(
        line for line in _read_text(ctx, assignment_path).splitlines()
        if line.strip() and not line.startswith("#"))
    resp = _post(ctx, "/attention", {
        "width": width, "height": height,
        "assignment_lines": lines,
        "scores_main": _read_scores(ctx, main_path),
        "scores_progressive": _read_scores(ctx, prog_path),
        "config": cfg,
    })
    for size, text in sorted(resp["masks"].items()):
        _write(f"{out_prefix}.mask{size}.txt", text)
    _write(f"{out_prefix}.labels.txt", resp["labels"])
    _write(f"{out_prefix}.loss.json", json.dumps(
        {"loss": resp["loss"], "loss_main": resp["loss_main"]},
        sort_keys=True) + "\n")
    click.echo(f"loss={resp['loss']:.9f} loss_main={resp['loss_main']:.9f}")


if __name__ == "__main__":
    main()
