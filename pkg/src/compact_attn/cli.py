"""Command-line harness: synth | search | attend | rasterize | report.

Every command prints its fully resolved parameter set on the first output
line so runs are reproducible from logs alone. Exit codes: 0 success,
1 validation error, 2 I/O or file-format error. The COMPACT_ATTN_SEED
environment variable supplies the default seed.
"""

from __future__ import annotations

import csv
import dataclasses
import functools
import json
import re
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import click
import numpy as np

from . import attention, fileio, masks, metrics, search, synth
from .errors import FileFormatError, ShapeMismatch, ValidationError
from .layout import Permutation, TileShape, VideoGrid, raster_order, tile_order
from .metrics import AttentionProbMap

_HEAD_RE = re.compile(r"[Ll](\d+)[Hh](\d+)(?:[Ss](\d+))?")


def _handle_errors(fn):
    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except ValidationError as exc:
            click.echo(f"error: {exc}", err=True)
            sys.exit(1)
        except (FileFormatError, OSError) as exc:
            click.echo(f"error: {exc}", err=True)
            sys.exit(2)

    return wrapper


def _fmt(value) -> str:
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, (tuple, list)):
        return ",".join(_fmt(v) for v in value)
    return str(value)


def _print_params(**resolved) -> None:
    click.echo("params: " + " ".join(f"{k}={_fmt(v)}" for k, v in resolved.items()))


def _parse_triplet(text: str, what: str) -> tuple[int, int, int]:
    parts = text.lower().split("x")
    if len(parts) != 3:
        raise ValidationError(f"{what} must look like AxBxC, got {text!r}")
    try:
        return tuple(int(p) for p in parts)  # type: ignore[return-value]
    except ValueError as exc:
        raise ValidationError(f"{what} must be integers, got {text!r}") from exc


def _parse_grid(text: str) -> VideoGrid:
    f, h, w = _parse_triplet(text, "grid")
    return VideoGrid(f=f, h=h, w=w)


def _parse_tile(text: str) -> TileShape:
    tf, th, tw = _parse_triplet(text, "tile")
    return TileShape(tf=tf, th=th, tw=tw)


def _parse_boundaries(text: str, f: int) -> tuple[tuple[int, int], ...]:
    """Parse "0,1-2,3-" style distance buckets; a trailing '-' means to f-1."""
    out = []
    for piece in text.split(","):
        piece = piece.strip()
        if "-" in piece:
            lo_s, hi_s = piece.split("-", 1)
            lo = int(lo_s)
            hi = f - 1 if hi_s == "" else int(hi_s)
        else:
            lo = hi = int(piece)
        out.append((lo, hi))
    return tuple(out)


def _make_perm(order: str, grid: VideoGrid, tile: TileShape) -> Permutation:
    if order == "raster":
        return raster_order(grid)
    return tile_order(grid, tile)


def _load_map(path: str, grid: VideoGrid, perm: Permutation) -> AttentionProbMap:
    probs = fileio.read_tensor(path)
    if probs.ndim != 2 or probs.shape[0] != probs.shape[1]:
        raise ShapeMismatch(f"{path}: probability map must be square, got {probs.shape}")
    # Stored maps are float32; renormalize rows before analysis.
    return AttentionProbMap(probs=metrics.normalize_rows(probs), grid=grid, perm=perm)


def _map_jobs(jobs: int, fn, items):
    if jobs <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, items))


@click.group()
def main():
    """Desk-scale block-sparse video attention toolkit."""


@main.command("synth")
@click.option("--pattern", type=click.Choice([*synth.SPATIAL_KINDS, "battery"]), required=True)
@click.option("--grid", "grid_text", default="4x8x8", show_default=True)
@click.option("--temporal", type=click.Choice(list(synth.TEMPORAL_KINDS)), default="invariant")
@click.option("--omega", type=int, default=2, show_default=True)
@click.option("--eta", type=int, default=2, show_default=True)
@click.option("--p", "mass", type=float, default=0.9, show_default=True)
@click.option("--noise", type=float, default=0.0, show_default=True)
@click.option("--rate", type=float, default=0.5, help="decay rate per frame distance")
@click.option("--center", type=int, default=1, help="band centre distance")
@click.option("--width", type=int, default=1, help="band half-width")
@click.option("--order", type=click.Choice(["raster", "tiled"]), default="raster",
              show_default=True, help="token order of the emitted maps")
@click.option("--tile", "tile_text", default="1x4x4", show_default=True)
@click.option("--seed", type=int, default=0, envvar="COMPACT_ATTN_SEED", show_default=True)
@click.option("--out-dir", type=click.Path(file_okay=False), default=".", show_default=True)
@_handle_errors
def cmd_synth(pattern, grid_text, temporal, omega, eta, mass, noise, rate, center,
              width, order, tile_text, seed, out_dir):
    """Generate planted probability maps plus a manifest of their seeds."""
    grid = _parse_grid(grid_text)
    tile = _parse_tile(tile_text)
    _print_params(
        command="synth", pattern=pattern, grid=grid_text, temporal=temporal,
        omega=omega, eta=eta, p=mass, noise=noise, rate=rate, center=center,
        width=width, order=order, tile=tile_text, seed=seed, out_dir=out_dir,
    )
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    perm = _make_perm(order, grid, tile)
    if pattern == "battery":
        specs = synth.pattern_battery(grid, seed=seed)
    else:
        specs = {
            f"{pattern}-{temporal}": synth.SyntheticHeadSpec(
                spatial=pattern, temporal=temporal, omega=omega, eta=eta, p=mass,
                noise=noise, seed=seed, decay_rate=rate, band_center=center,
                band_width=width,
            )
        }
    manifest = {
        "grid": {"f": grid.f, "h": grid.h, "w": grid.w},
        "order": order,
        "tile": {"tf": tile.tf, "th": tile.th, "tw": tile.tw},
        "seed": seed,
        "files": [],
    }
    for name, spec in specs.items():
        prob_map = metrics.with_order(synth.gen_probmap(spec, grid), perm)
        file_name = f"{name}.probs.catn"
        fileio.write_tensor(out / file_name, prob_map.probs.astype(np.float32))
        manifest["files"].append({"name": file_name, "spec": dataclasses.asdict(spec)})
        click.echo(f"wrote {out / file_name}")
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    click.echo(f"wrote {out / 'manifest.json'}")


@main.command("search")
@click.argument("maps", nargs=-1, required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--grid", "grid_text", required=True)
@click.option("--order", type=click.Choice(["raster", "tiled"]), default="raster",
              show_default=True, help="token order of the input maps/tensors")
@click.option("--tile", "tile_text", default="1x4x4", show_default=True)
@click.option("--block-size", type=int, default=64, show_default=True)
@click.option("--tau", type=float, default=0.9, show_default=True)
@click.option("--lambda", "lam", type=float, default=0.011, show_default=True)
@click.option("--groups", "groups_text", default=None, help="distance buckets, e.g. 0,1-2,3-")
@click.option("--single-window", is_flag=True, help="restrict each group to one window")
@click.option("--share-groups", is_flag=True, help="share one window across groups")
@click.option("--merge", is_flag=True, help="also emit the cross-prompt union config")
@click.option("--trace", "want_trace", is_flag=True, help="emit a JSON search trace per map")
@click.option("--sweep-tau", "sweep_text", default=None, help="comma list of taus for a sparsity sweep CSV")
@click.option("--schedule", "as_schedule", is_flag=True, help="treat maps named L#H#S#* as model dumps")
@click.option("--reuse-n", type=int, default=5, show_default=True, help="steps per cached config")
@click.option("--full-prefix", type=int, default=15, show_default=True, help="dense warm-up steps")
@click.option("--jobs", type=int, default=1, show_default=True)
@click.option("--out-dir", type=click.Path(file_okay=False), default=".", show_default=True)
@_handle_errors
def cmd_search(maps, grid_text, order, tile_text, block_size, tau, lam, groups_text,
               single_window, share_groups, merge, want_trace, sweep_text, as_schedule,
               reuse_n, full_prefix, jobs, out_dir):
    """Auto-search sparse configs for one or more probability maps."""
    grid = _parse_grid(grid_text)
    tile = _parse_tile(tile_text)
    boundaries = _parse_boundaries(groups_text, grid.f) if groups_text else None
    _print_params(
        command="search", tau=tau, **{"lambda": lam}, grid=grid_text, order=order,
        tile=tile_text, block_size=block_size,
        groups=groups_text or "default", single_window=single_window,
        share_groups=share_groups, merge=merge, trace=want_trace,
        sweep_tau=sweep_text or "-", schedule=as_schedule, reuse_n=reuse_n,
        full_prefix=full_prefix, jobs=jobs, out_dir=out_dir,
    )
    params = search.SearchParams(
        tau=tau, lam=lam, tile=tile, block_size=block_size,
        group_boundaries=boundaries, step_reuse_n=reuse_n, full_prefix=full_prefix,
        dual_windows=not single_window, share_groups=share_groups,
    )
    perm = _make_perm(order, grid, tile)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    loaded = [_load_map(path, grid, perm) for path in maps]

    if as_schedule:
        dumps = {}
        for path, prob_map in zip(maps, loaded):
            match = _HEAD_RE.search(Path(path).name)
            if match is None or match.group(3) is None:
                raise ValidationError(f"{path}: schedule mode needs L#H#S# in the file name")
            dumps[(int(match.group(1)), int(match.group(2)), int(match.group(3)))] = prob_map
        schedule = search.schedule_search(dumps, params)
        target = out / "schedule.json"
        fileio.save_config(
            target,
            fileio.ScheduleFile(grid=grid, tile=tile, block_size=block_size, schedule=schedule),
        )
        click.echo(f"wrote {target} entries={len(schedule.entries)}")
        return

    if sweep_text:
        taus = [float(s) for s in sweep_text.split(",")]
        rows = search.tau_sweep(loaded, taus, params)
        target = out / "sweep.csv"
        with open(target, "w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=["tau", "mean_sparsity", "mean_recall"])
            writer.writeheader()
            writer.writerows(rows)
        for row in rows:
            click.echo(f"tau={row['tau']!r} sparsity={row['mean_sparsity']!r}")
        click.echo(f"wrote {target}")
        return

    results = _map_jobs(jobs, lambda m: search.shrink_search(m, params), loaded)
    configs = []
    for path, prob_map, (config, trace) in zip(maps, loaded, results):
        configs.append(config)
        report = search.evaluate_config(config, [prob_map], block_size)
        stem = Path(path).name.split(".")[0]
        target = out / f"{stem}.config.json"
        fileio.save_config(
            target,
            fileio.ConfigFile(grid=grid, tile=tile, block_size=block_size, config=config),
        )
        click.echo(
            f"{stem}: recall={report.mean_recall!r} sparsity={report.sparsity!r} "
            f"stopped={trace.termination} wrote {target}"
        )
        if want_trace:
            trace_path = out / f"{stem}.trace.json"
            trace_path.write_text(json.dumps(trace.to_jsonable(), indent=2) + "\n")
            click.echo(f"wrote {trace_path}")
    if merge:
        merged = search.merge_prompts(configs)
        report = search.evaluate_config(merged, loaded, block_size)
        target = out / "merged.config.json"
        fileio.save_config(
            target,
            fileio.ConfigFile(grid=grid, tile=tile, block_size=block_size, config=merged),
        )
        click.echo(
            f"merged: recall={report.mean_recall!r} sparsity={report.sparsity!r} wrote {target}"
        )


def _load_config_file(path: str) -> fileio.ConfigFile:
    loaded = fileio.load_config(path)
    if not isinstance(loaded, fileio.ConfigFile):
        raise ValidationError(f"{path} holds a schedule, expected a single head config")
    return loaded


@main.command("attend")
@click.option("--q", "q_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--k", "k_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--v", "v_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False))
@click.option("--dense", "run_dense", is_flag=True)
@click.option("--sparse", "run_sparse", is_flag=True)
@click.option("--order", type=click.Choice(["raster", "tiled"]), default="raster",
              show_default=True, help="token order of the input maps/tensors")
@click.option("--out", "out_path", type=click.Path(dir_okay=False))
@_handle_errors
def cmd_attend(q_path, k_path, v_path, config_path, run_dense, run_sparse, order, out_path):
    """Run dense and/or block-sparse attention over stored Q/K/V tensors."""
    _print_params(
        command="attend", q=q_path, k=k_path, v=v_path, config=config_path or "-",
        dense=run_dense, sparse=run_sparse, order=order, out=out_path or "-",
    )
    if not run_dense and not run_sparse:
        raise ValidationError("pass --dense, --sparse, or both")
    inputs = attention.AttentionInputs.from_qkv(
        fileio.read_tensor(q_path), fileio.read_tensor(k_path), fileio.read_tensor(v_path)
    )
    result = None
    if run_dense:
        result = attention.dense_attention(inputs)
    if run_sparse:
        if config_path is None:
            raise ValidationError("--sparse needs --config")
        cfg = _load_config_file(config_path)
        if cfg.grid.tokens != inputs.n:
            raise ShapeMismatch(
                f"config grid has {cfg.grid.tokens} tokens, tensors have {inputs.n}"
            )
        perm = _make_perm(order, cfg.grid, cfg.tile)
        mask = masks.rasterize(cfg.config, cfg.grid, perm, cfg.block_size)
        sparse_out = attention.block_sparse_attention(inputs, mask)
        click.echo(
            f"sparsity={masks.sparsity(mask)!r} flop_proxy={attention.flop_proxy(mask)!r}"
        )
        if run_dense:
            diff = float(np.abs(result - sparse_out).max())
            click.echo(f"max-abs-diff={diff!r}")
        result = sparse_out
    if out_path:
        fileio.write_tensor(out_path, result)
        click.echo(f"wrote {out_path}")


@main.command("rasterize")
@click.option("--config", "config_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--order", type=click.Choice(["raster", "tiled"]), default="raster",
              show_default=True, help="token order of the input maps/tensors")
@click.option("--out", "out_path", type=click.Path(dir_okay=False))
@_handle_errors
def cmd_rasterize(config_path, order, out_path):
    """Lower a config to its block mask and report its sparsity."""
    _print_params(command="rasterize", config=config_path, order=order, out=out_path or "-")
    cfg = _load_config_file(config_path)
    perm = _make_perm(order, cfg.grid, cfg.tile)
    mask = masks.rasterize(cfg.config, cfg.grid, perm, cfg.block_size)
    click.echo(
        f"blocks={mask.shape[0]}x{mask.shape[1]} "
        f"sparsity={masks.sparsity(mask)!r} flop_proxy={attention.flop_proxy(mask)!r}"
    )
    if out_path:
        fileio.write_mask(out_path, mask)
        click.echo(f"wrote {out_path}")


@main.command("report")
@click.argument("maps", nargs=-1, required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--grid", "grid_text", required=True)
@click.option("--order", type=click.Choice(["raster", "tiled"]), default="raster",
              show_default=True, help="token order of the input maps/tensors")
@click.option("--tile", "tile_text", default="1x4x4", show_default=True)
@click.option("--config", "config_paths", multiple=True, required=True,
              help="one config for all maps, or one per map")
@click.option("--topk-target", type=float, default=0.95, show_default=True)
@click.option("--compare", "compare_orders", default=None, help="e.g. raster,tiled")
@click.option("--format", "out_format", type=click.Choice(["csv", "json"]), default="csv")
@click.option("--out", "out_path", type=click.Path(dir_okay=False))
@click.option("--jobs", type=int, default=1, show_default=True)
@_handle_errors
def cmd_report(maps, grid_text, order, tile_text, config_paths, topk_target,
               compare_orders, out_format, out_path, jobs):
    """Per-head metric rows: recall, sparsity, labels, top-k coverage."""
    grid = _parse_grid(grid_text)
    tile = _parse_tile(tile_text)
    _print_params(
        command="report", grid=grid_text, order=order, tile=tile_text,
        config=",".join(config_paths), topk_target=topk_target,
        compare=compare_orders or "-", format=out_format, out=out_path or "-",
        jobs=jobs,
    )
    if len(config_paths) not in (1, len(maps)):
        raise ValidationError(
            f"got {len(config_paths)} configs for {len(maps)} maps; pass 1 or one per map"
        )
    cfgs = [_load_config_file(p) for p in config_paths]
    if len(cfgs) == 1:
        cfgs = cfgs * len(maps)
    perm = _make_perm(order, grid, tile)
    masks_by_idx = [
        masks.rasterize(cfg.config, grid, perm, cfg.block_size) for cfg in cfgs
    ]
    compare_list = compare_orders.split(",") if compare_orders else []

    def one_row(idx: int) -> dict:
        path = maps[idx]
        prob_map = _load_map(path, grid, perm)
        match = _HEAD_RE.search(Path(path).name)
        layer, head = (int(match.group(1)), int(match.group(2))) if match else (0, idx)
        mask = masks_by_idx[idx]
        row = {
            "layer": layer,
            "head": head,
            "recall": metrics.recall(prob_map, mask),
            "sparsity": masks.sparsity(mask),
            "jaccard": metrics.jaccard(mask, masks_by_idx[0]),
            "spatial": metrics.classify_spatial(prob_map).value,
            "temporal": metrics.classify_temporal(prob_map).value
            if grid.f > 1
            else "single-frame",
            f"topk@{topk_target}": metrics.topk_block_fraction(
                prob_map, cfgs[idx].block_size, topk_target
            ),
        }
        for cmp_order in compare_list:
            cmp_map = metrics.with_order(prob_map, _make_perm(cmp_order.strip(), grid, tile))
            row[f"topk@{topk_target}:{cmp_order.strip()}"] = metrics.topk_block_fraction(
                cmp_map, cfgs[idx].block_size, topk_target
            )
        return row

    rows = _map_jobs(jobs, one_row, range(len(maps)))
    if out_format == "json":
        text = json.dumps(rows, indent=2) + "\n"
    else:
        import io as _io

        buf = _io.StringIO()
        writer = csv.DictWriter(buf, fieldnames=list(rows[0].keys()))
        writer.writeheader()
        writer.writerows(rows)
        text = buf.getvalue()
    if out_path:
        Path(out_path).write_text(text)
        click.echo(f"wrote {out_path}")
    else:
        click.echo(text, nl=False)


if __name__ == "__main__":
    main()
