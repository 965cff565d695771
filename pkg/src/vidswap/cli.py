"""Command line entry point: one binary, subcommand per pipeline stage.

Exit codes: 0 success, 1 operational failure (machine-readable JSON on
stderr), 2 usage error. All subcommands are seed-reproducible.
"""
from __future__ import annotations

import dataclasses
import json
import sys
import time
from pathlib import Path

import click
import numpy as np

from . import __version__
from .config import GlobalConfig, load_config, with_seed
from .core import VideoClip
from .data_pipeline import (
    SceneSpec,
    balance,
    filter_records,
    generate_scene,
    make_train_examples,
    read_manifest,
    write_manifest,
)
from .errors import VidswapError
from .tensor_io import (
    export_clip,
    import_clip,
    import_mask,
    import_pose,
    import_reference,
    save_tensor,
)


def _fail(exc: VidswapError) -> None:
    click.echo(json.dumps(exc.to_json()), err=True)
    sys.exit(1)


class _Group(click.Group):
    def invoke(self, ctx):
        try:
            return super().invoke(ctx)
        except VidswapError as exc:
            _fail(exc)


@click.group(cls=_Group, invoke_without_command=True,
             context_settings={"help_option_names": ["-h", "--help"]})
@click.version_option(__version__)
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False),
              default=None, help="JSON config file; flags win over file values.")
@click.option("--seed", type=int, default=None, help="Global seed override.")
@click.option("--print-config", is_flag=True, help="Print the effective config and exit.")
@click.pass_context
def main(ctx, config_path, seed, print_config):
    """Video subject swapping toolkit."""
    cfg = load_config(config_path) if config_path else GlobalConfig()
    if seed is not None:
        cfg = with_seed(cfg, seed)
    ctx.obj = cfg
    if print_config:
        click.echo(cfg.to_json())
        ctx.exit(0)
    if ctx.invoked_subcommand is None:
        click.echo(ctx.get_help())
        ctx.exit(2)


@main.command("gen-data")
@click.option("--out", "out_dir", type=click.Path(file_okay=False), required=True)
@click.option("--clips", type=int, default=20, show_default=True)
@click.option("--frames", type=int, default=None)
@click.option("--height", type=int, default=None)
@click.option("--width", type=int, default=None)
@click.pass_obj
def gen_data(cfg: GlobalConfig, out_dir, clips, frames, height, width):
    """Generate synthetic scenes and write a dataset manifest."""
    spec = cfg.scene
    overrides = {k: v for k, v in
                 (("frames", frames), ("height", height), ("width", width))
                 if v is not None}
    if overrides:
        spec = dataclasses.replace(spec, **overrides)
    records = []
    for i in range(clips):
        records.extend(generate_scene(cfg.seed + i, spec))
    manifest = write_manifest(out_dir, records)
    click.echo(f"wrote {len(records)} records over {clips} clips -> {manifest}")


@main.command("filter-dataset")
@click.option("--manifest", "manifest_path", type=click.Path(exists=True), required=True)
@click.option("--out", "out_path", type=click.Path(dir_okay=False), required=True)
@click.pass_obj
def filter_dataset(cfg: GlobalConfig, manifest_path, out_path):
    """Apply quality filtering and category balancing to a manifest."""
    import os

    records = read_manifest(manifest_path)
    kept, rejected = filter_records(records, cfg.filter)
    rng = np.random.default_rng([cfg.seed, 0xBA1])
    result = balance(kept, cfg.filter, rng)
    out_path = Path(out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    src_root = Path(manifest_path).parent
    src_docs = {}
    for line in Path(manifest_path).read_text().splitlines():
        if line.strip():
            doc = json.loads(line)
            src_docs[doc["record_id"]] = doc
    lines = []
    for r in result.records:
        doc = dict(src_docs[r.record_id])
        # Paths stay valid from the output manifest's own directory.
        for key in ("clip_dir", "mask_dir", "pose_file"):
            if doc.get(key):
                doc[key] = os.path.relpath(src_root / doc[key], out_path.parent)
        lines.append(json.dumps(doc))
    out_path.write_text("\n".join(lines) + ("\n" if lines else ""))
    summary = {
        "input": len(records),
        "kept_after_filter": len(kept),
        "rejections": {},
        "balanced": result.counts,
        "balance_infeasible": result.infeasible,
    }
    for _, reason in rejected:
        summary["rejections"][reason] = summary["rejections"].get(reason, 0) + 1
    out_path.with_suffix(".summary.json").write_text(json.dumps(summary, indent=2))
    click.echo(json.dumps(summary))


@main.command("augment-mask")
@click.option("--in", "mask_dir", type=click.Path(exists=True, file_okay=False), required=True)
@click.option("--mode", type=click.Choice(["train", "inference"]), required=True)
@click.option("--seed", type=int, default=None)
@click.option("--out", "out_dir", type=click.Path(file_okay=False), required=True)
@click.pass_obj
def augment_mask_cmd(cfg: GlobalConfig, mask_dir, mode, seed, out_dir):
    """Augment a PNG mask folder; writes PNGs plus the sampled parameters."""
    from .mask_augment import augment_traced
    from .tensor_io import export_mask

    mask = import_mask(mask_dir)
    rng = np.random.default_rng(cfg.seed if seed is None else seed)
    out, trace = augment_traced(mask, mode, cfg.augment, rng)
    export_mask(out_dir, out)
    params_path = Path(out_dir) / "params.json"
    params_path.write_text(json.dumps(trace.to_json(), indent=2))
    click.echo(f"augmented {mask.frames} frames ({trace.branch}) -> {out_dir}")


@main.command("build-input")
@click.option("--clip", "clip_dir", type=click.Path(exists=True), required=True)
@click.option("--mask", "mask_dir", type=click.Path(exists=True), required=True)
@click.option("--pose", "pose_file", type=click.Path(exists=True), default=None)
@click.option("--ref", "ref_file", type=click.Path(exists=True), required=True)
@click.option("--t", "t_value", type=float, default=0.5, show_default=True,
              help="Interpolation time for the noisy stream.")
@click.option("--out", "out_dir", type=click.Path(file_okay=False), required=True)
@click.pass_obj
def build_input(cfg: GlobalConfig, clip_dir, mask_dir, pose_file, ref_file, t_value, out_dir):
    """Assemble the fused model input and write it with a layout manifest."""
    from .codec import LatentBlock, downsample_mask, encode, encode_reference
    from .core import ReferenceImage, make_agnostic
    from .fusion import (
        AGNOSTIC_SLICE, DUMMY_SLICE, MASK_SLICE, NOISY_SLICE, POSE_SLICE, assemble,
    )
    from .mask_augment import augment_traced

    clip = import_clip(clip_dir)
    mask = import_mask(mask_dir)
    rng = np.random.default_rng([cfg.seed, 0xB1])
    aug_mask, trace = augment_traced(mask, "inference", cfg.augment, rng)
    agnostic = make_agnostic(clip, aug_mask)
    img, alpha = import_reference(ref_file)
    ref = ReferenceImage(img, alpha=alpha)
    if pose_file:
        pose_clip = VideoClip(import_pose(pose_file).render())
    else:
        pose_clip = VideoClip(np.zeros_like(clip.data))

    x0 = encode(clip)
    noise = rng.standard_normal(x0.data.shape).astype(np.float32)
    noisy = LatentBlock((1 - t_value) * x0.data + t_value * noise)
    fused = assemble(noisy, encode(agnostic), encode(pose_clip),
                     downsample_mask(aug_mask),
                     encode_reference(ref, clip.height, clip.width),
                     cfg.fusion, clean_first=LatentBlock(x0.data[:1]))
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    save_tensor(out / "fused.vten", fused.tensor)
    save_tensor(out / "attention_mask.vten", fused.attention_mask)
    save_tensor(out / "loss_mask.vten", fused.loss_mask)
    layout = fused.layout
    manifest = {
        "codec": dataclasses.asdict(cfg.codec),
        "tensor_shape": list(fused.tensor.shape),
        "channel_slices": {
            "noisy": [NOISY_SLICE.start, NOISY_SLICE.stop],
            "dummy_reference": [DUMMY_SLICE.start, DUMMY_SLICE.stop],
            "agnostic": [AGNOSTIC_SLICE.start, AGNOSTIC_SLICE.stop],
            "pose": [POSE_SLICE.start, POSE_SLICE.stop],
            "mask": [MASK_SLICE.start, MASK_SLICE.stop],
        },
        "ref_position": fused.ref_position,
        "t": t_value,
        "layout": {
            "frames": layout.frames,
            "lat_h": layout.lat_h,
            "lat_w": layout.lat_w,
            "patch": layout.patch,
            "tokens_per_frame": layout.tokens_per_frame,
            "total_tokens": layout.total_tokens,
        },
        "augment": trace.to_json(),
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2))
    click.echo(f"fused input {tuple(fused.tensor.shape)} -> {out_dir}")


@main.command("train-toy")
@click.option("--data", "manifest_path", type=click.Path(exists=True), required=True)
@click.option("--out", "out_dir", type=click.Path(file_okay=False), required=True)
@click.option("--steps", type=int, default=None)
@click.option("--batch", type=int, default=None)
@click.pass_obj
def train_toy(cfg: GlobalConfig, manifest_path, out_dir, steps, batch):
    """Train the toy denoiser on a dataset manifest."""
    from .plotting import loss_curve
    from .training import make_train_state, save_checkpoint, train

    train_cfg = cfg.train
    overrides = {k: v for k, v in (("steps", steps), ("batch", batch)) if v is not None}
    if overrides:
        train_cfg = dataclasses.replace(train_cfg, **overrides)
    records = read_manifest(manifest_path)
    kept, _ = filter_records(records, cfg.filter)
    result = balance(kept, cfg.filter, np.random.default_rng([cfg.seed, 0xBA1]))
    examples = make_train_examples(result.records)
    if not examples:
        raise VidswapError("no usable training records after filtering")
    state = make_train_state(train_cfg, cfg.augment, cfg.fusion, cfg.denoiser)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    started = time.perf_counter()
    history = train(examples, state)
    elapsed = time.perf_counter() - started
    save_checkpoint(out / "checkpoint", state)
    csv = "step,loss\n" + "".join(f"{i+1},{v!r}\n" for i, v in enumerate(history))
    (out / "loss.csv").write_text(csv)
    loss_curve(history, out / "loss_curve.png")
    (out / "train_summary.json").write_text(json.dumps({
        "steps": len(history),
        "examples": len(examples),
        "skipped_records": state.skipped,
        "seconds": elapsed,
        "first_100_mean": float(np.mean(history[:100])),
        "last_100_mean": float(np.mean(history[-100:])),
    }, indent=2))
    click.echo(f"trained {len(history)} steps on {len(examples)} records "
               f"in {elapsed:.1f}s -> {out_dir}")


@main.command("infer")
@click.option("--clip", "clip_dir", type=click.Path(exists=True), required=True)
@click.option("--mask", "mask_dir", type=click.Path(exists=True), required=True)
@click.option("--ref", "ref_file", type=click.Path(exists=True), required=True)
@click.option("--pose", "pose_file", type=click.Path(exists=True), default=None)
@click.option("--weights", "weights_dir", type=click.Path(exists=True), required=True)
@click.option("--segment-length", type=int, default=None)
@click.option("--steps", type=int, default=None)
@click.option("--seed", type=int, default=None)
@click.option("--feather", type=int, default=None)
@click.option("--out", "out_dir", type=click.Path(file_okay=False), required=True)
@click.pass_obj
def infer(cfg: GlobalConfig, clip_dir, mask_dir, ref_file, pose_file, weights_dir,
          segment_length, steps, seed, feather, out_dir):
    """Run the full subject swap and write output frames plus a run report."""
    from .core import ReferenceImage
    from .inference import SwapRequest, run_swap_traced
    from .training import load_checkpoint

    model, _ = load_checkpoint(weights_dir)
    img, alpha = import_reference(ref_file)
    req = SwapRequest(
        clip=import_clip(clip_dir),
        mask=import_mask(mask_dir),
        reference=ReferenceImage(img, alpha=alpha),
        pose=import_pose(pose_file) if pose_file else None,
        steps=cfg.sampler.steps if steps is None else steps,
        seed=cfg.seed if seed is None else seed,
    )
    output, report = run_swap_traced(
        req, model, aug_cfg=cfg.augment, fusion_cfg=cfg.fusion,
        segment_length=cfg.sampler.segment_length if segment_length is None else segment_length,
        feather_px=cfg.sampler.feather_px if feather is None else feather,
        tunnel_threshold=cfg.sampler.tunnel_threshold,
        tunnel_margin=cfg.sampler.tunnel_margin,
    )
    out = Path(out_dir)
    export_clip(out / "frames", output)
    (out / "run_report.json").write_text(json.dumps(report, indent=2))
    click.echo(f"swapped {output.frames} frames in {report['seconds_total']:.1f}s "
               f"-> {out_dir}")


@main.command("eval")
@click.option("--manifest", "manifest_path", type=click.Path(exists=True), required=True)
@click.option("--weights", "weights_dir", type=click.Path(exists=True), required=True)
@click.option("--out", "out_dir", type=click.Path(file_okay=False), required=True)
@click.pass_obj
def eval_cmd(cfg: GlobalConfig, manifest_path, weights_dir, out_dir):
    """Benchmark swap quality over a dataset manifest (recovery setting)."""
    from .core import extract_reference
    from .evalbench import EvalCase, run_bench, write_report
    from .inference import SwapRequest, run_swap
    from .training import load_checkpoint

    model, _ = load_checkpoint(weights_dir)
    cases = []
    for r in read_manifest(manifest_path):
        first = next(t for t in range(r.mask.frames) if not r.mask.frame_empty(t))
        cases.append(EvalCase(
            case_id=r.record_id,
            request=SwapRequest(
                clip=r.clip, mask=r.mask,
                reference=extract_reference(r.clip, r.mask, first),
                pose=r.pose, steps=cfg.sampler.steps, seed=cfg.seed,
            ),
        ))

    def swap_fn(req):
        return run_swap(req, model, aug_cfg=cfg.augment, fusion_cfg=cfg.fusion,
                        segment_length=cfg.sampler.segment_length,
                        feather_px=cfg.sampler.feather_px,
                        tunnel_threshold=cfg.sampler.tunnel_threshold,
                        tunnel_margin=cfg.sampler.tunnel_margin)

    report = run_bench(cases, swap_fn, dilation_px=cfg.eval.dilation_px,
                       frame_samples=cfg.eval.frame_samples)
    paths = write_report(report, out_dir)
    click.echo(json.dumps(report.to_json()["aggregate"]))
    click.echo(f"report -> {paths['json']}, {paths['csv']}, {paths['figure']}")


@main.command("selftest")
@click.pass_obj
def selftest_cmd(cfg: GlobalConfig):
    """Run the bundled invariant suite."""
    from .selftest import run_selftest

    ok = run_selftest(echo=click.echo)
    sys.exit(0 if ok else 1)


if __name__ == "__main__":
    main()
