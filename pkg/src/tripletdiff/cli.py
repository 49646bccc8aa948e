"""Command-line entry point: ``tripletdiff <command> [options]``.

Commands: make-toy, train, generate, analyze, evaluate. Every command writes
into a run directory (checkpoints/, samples/, reports/, manifest.json, and
log.csv for training).

Exit codes: 0 success, 2 configuration or contract error, 3 data error,
4 numeric abort, 1 anything else raised by the package.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import sys
from pathlib import Path
from typing import Sequence

import numpy as np
import torch

from .balance import MODES, frame_weights, instrument_mass
from .config import RunConfig, load_config
from .data import (Dataset, contact_sheet, load_dataset_dir, make_toy_dataset, parse_caption, read_image,
                   save_dataset_dir, imbalance_ratio, toy_vocabulary, triplet_counts, write_image)
from .diffusion.core import cascade_generate, check_cascade, sample_captions, to_image_range
from .errors import ConfigError, ContractError, DataError, LookupFailure, TripletDiffError
from .eval import (FileFeatureExtractor, ImageItem, OracleImageEncoder, TableTextEncoder, ToyFeatureExtractor,
                   ToyTextEncoder, alignment_score, feature_proximity_map, fid, oracle_alignment)
from .manifest import build_manifest, prepare_run_dir, read_manifest, tree_sha256, write_json, write_manifest
from .textlang import (EmbeddingTable, HashEncoder, TableEncoder, Tokenizer, cluster_attribution,
                       compute_alignment, embedding_table, load_probes, project_2d, separation, split_words)
from .training import checkpoint_info, load_stage, train_stage

log = logging.getLogger("tripletdiff")

FIXTURES = Path(__file__).parent / "fixtures"
DEFAULT_PROBES = FIXTURES / "toy_probes.json"


def _csv(path: Path, header: Sequence[str], rows) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)
    return path


def dataset_fingerprint(dataset: Dataset) -> str:
    h = hashlib.sha256()
    for fid_, cap in zip(dataset.frame_ids(), dataset.captions()):
        h.update(f"{fid_}\t{cap}\n".encode())
    h.update(np.ascontiguousarray(dataset.images()).tobytes())
    return h.hexdigest()


def _scatter(path: Path, coords: np.ndarray, groups: Sequence[str], title: str) -> None:
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(5, 5))
    for g in sorted(set(groups)):
        sel = np.array([x == g for x in groups])
        ax.scatter(coords[sel, 0], coords[sel, 1], s=14, label=g)
    ax.set_title(title)
    ax.legend(fontsize=7, loc="best")
    fig.tight_layout()
    fig.savefig(path, metadata={"Software": None})
    plt.close(fig)


# --- make-toy -------------------------------------------------------------------

def cmd_make_toy(cfg: RunConfig, out: Path, force: bool = False) -> dict:
    cfg.validate()
    toy = cfg.toy()
    out = prepare_run_dir(out, force)
    dataset = make_toy_dataset(toy, cfg.data.n_frames)
    save_dataset_dir(dataset, out)
    counts = triplet_counts(dataset)
    vocab = dataset.vocab
    _csv(out / "reports" / "triplet_counts.csv", ["triplet", "count"],
         [(" ".join(vocab.word(k, i) for k, i in zip(("instrument", "verb", "target"), ids)), n)
          for ids, n in sorted(counts.items())])
    manifest = build_manifest(
        "make-toy", cfg, {"data.seed": cfg.data.seed},
        dataset={"n_frames": dataset.n, "vocabulary_size": len(vocab.all_triplets()),
                 "triplets_present": len(counts), "imbalance_ratio": imbalance_ratio(dataset),
                 "content_sha256": tree_sha256(out, "videos/**/*.png"),
                 "labels_sha256": tree_sha256(out, "labels/*.json")})
    write_manifest(out, manifest)
    log.info("wrote %d frames (%d triplets, imbalance %.1f) to %s", dataset.n, len(counts),
             manifest["dataset"]["imbalance_ratio"], out)
    return manifest


# --- train ------------------------------------------------------------------------

def load_training_data(cfg: RunConfig) -> tuple[Dataset, dict]:
    d = cfg.data
    if d.root:
        videos = [v for v in d.videos.split(",") if v] or None
        dataset = load_dataset_dir(d.root, d.image_size, videos)
        origin = {"root": d.root, "videos": videos}
    elif d.source == "toy":
        dataset = make_toy_dataset(cfg.toy(), d.n_frames)
        origin = {"root": None, "generated": "toy renderer, in memory"}
    else:
        raise ConfigError("data.root (or --data) is required for non-toy sources")
    if dataset.n == 0:
        raise DataError("dataset has no usable frames")
    return dataset, dict(origin, n_frames=dataset.n, dropped=dataset.dropped, provenance=dataset.provenance,
                         fingerprint=dataset_fingerprint(dataset))


def cmd_train(cfg: RunConfig, stage: str, out: Path, force: bool = False, resume: Path | None = None) -> dict:
    cfg.validate()
    out = Path(out)
    previous = None
    if (out / "manifest.json").exists():
        previous = read_manifest(out)
        same_run = previous.get("command") == "train" and previous.get("config_hash") == cfg.hash()
        out = prepare_run_dir(out, force, allow_existing=same_run or resume is not None)
    else:
        out = prepare_run_dir(out, force)
    dataset, origin = load_training_data(cfg)
    plan = frame_weights(dataset, cfg.balance.mode)
    plan.write_csv(out / "reports" / f"sampling_plan_{stage}.csv", dataset)
    result = train_stage(cfg, dataset, stage, out, resume=resume)
    f = cfg.diffusion
    info = {"parameters": result.parameters, "final_step": result.state.step,
            "final_loss_window": float(np.mean(list(result.state.history))) if result.state.history else None,
            "balance_mode": plan.mode, "plan_checksum": plan.frame_checksum,
            "resumed_from": str(resume) if resume else None,
            "checkpoints": sorted(p.name for p in (out / "checkpoints").glob(f"{stage}_*.ckpt"))}
    stages = dict(previous.get("stages", {})) if previous and previous.get("command") == "train" else {}
    stages[stage] = info
    manifest = build_manifest("train", cfg, {"diffusion.seed": f.seed, "data.seed": cfg.data.seed},
                              dataset=origin, stages=stages)
    write_manifest(out, manifest)
    write_json(out / "reports" / f"train_{stage}.json", info)
    return manifest


# --- generate -------------------------------------------------------------------

def _read_prompts(path: Path) -> list[str]:
    lines = [ln.strip() for ln in Path(path).read_text().splitlines()]
    prompts = [ln for ln in lines if ln and not ln.startswith("#")]
    if not prompts:
        raise DataError(f"{path}: no prompts")
    return prompts


def cmd_generate(cfg: RunConfig, base_ckpt: Path, prompts: Sequence[str], count: int, seed: int, out: Path,
                 sr_ckpt: Path | None = None, force: bool = False, use_ema: bool = False) -> dict:
    cfg.validate()
    if count < 1:
        raise ConfigError("--count must be >= 1")
    if not prompts:
        raise ConfigError("give --prompt or --prompts-file")
    base = load_stage(base_ckpt, use_ema)
    if base.stage != "base":
        raise ContractError(f"{base_ckpt} is a {base.stage} checkpoint, expected base")
    sr = None
    if sr_ckpt is not None:
        sr = load_stage(sr_ckpt, use_ema)
        check_cascade(base.model, base.text, sr.model, sr.text)
    out = prepare_run_dir(out, force)
    captions = [p for p in prompts for _ in range(count)]
    warnings = []
    for p in prompts:
        _, _, oov = base.text.ids([p])
        if oov[0]:
            warnings.append(f"UNK: {' '.join(oov[0])!s} in prompt {p!r} mapped to the unknown token")
            log.warning(warnings[-1])
    rng = torch.Generator().manual_seed(int(seed))
    guidance = cfg.diffusion.guidance
    if sr is None:
        low = sample_captions(base.model, base.text, base.schedule, captions, rng, guidance=guidance,
                              batch_size=cfg.eval.batch_size)
        final, lowres = to_image_range(low), None
    else:
        low, high = cascade_generate(base.model, base.text, sr.model, sr.text, (base.schedule, sr.schedule),
                                     captions, rng, guidance=guidance)
        final, lowres = to_image_range(high), to_image_range(low)
    img_dir = out / "samples" / "images"
    img_dir.mkdir(parents=True, exist_ok=True)
    rows = []
    for i, (cap, im) in enumerate(zip(captions, final)):
        name = f"{i:04d}.png"
        write_image(img_dir / name, im)
        if lowres is not None:
            (out / "samples" / "lowres").mkdir(exist_ok=True)
            write_image(out / "samples" / "lowres" / name, lowres[i])
        rows.append((name, cap))
    _csv(out / "samples" / "prompts.csv", ["file", "prompt"], rows)
    write_image(out / "samples" / "grid.png", contact_sheet(final, ncol=min(count, 8) if len(prompts) == 1 else count))
    sidecar = {
        "prompts": list(prompts), "count": count, "seed": int(seed), "stage": "cascade" if sr else "base",
        "resolution": int(final.shape[1]), "guidance": guidance, "warnings": warnings,
        "checkpoints": {"base": checkpoint_info(base_ckpt), **({"sr": checkpoint_info(sr_ckpt)} if sr else {})},
        "config_hashes": {"base": base.meta["config_hash"], **({"sr": sr.meta["config_hash"]} if sr else {}),
                          "run": cfg.hash()},
    }
    write_json(out / "samples" / "generation.json", sidecar)
    write_manifest(out, build_manifest("generate", cfg, {"generate.seed": int(seed)}, generation=sidecar))
    return sidecar


# --- analyze ----------------------------------------------------------------------

def _attribution_vocab(captions: Sequence[str], dataset: Dataset | None, cfg: RunConfig):
    candidates = [dataset.vocab] if dataset is not None else []
    candidates += [cfg.toy().vocab(), toy_vocabulary(6, 4, 6)]
    for vocab in candidates:
        parsed = {}
        for c in captions:
            try:
                parsed[c] = parse_caption(c, vocab)
            except (LookupFailure, DataError):
                pass
        if len(parsed) == len(captions):
            return vocab, parsed, []
    return None, parsed, [c for c in captions if c not in parsed]


def _fit_l_max(captions: Sequence[str], cfg: RunConfig) -> int:
    """Analyses embed whole captions, so the token budget grows to the longest one."""
    return max(cfg.text.l_max, *(len(split_words(c)) for c in captions))


def cmd_analyze(cfg: RunConfig, source: Path, out: Path, probes: Path | None = None, force: bool = False,
                k_neighbors: int = 5) -> dict:
    cfg.validate()
    source = Path(source)
    if not source.exists():
        raise DataError(f"{source} does not exist")
    out = prepare_run_dir(out, force)
    rep = out / "reports"
    summary: dict = {"input": str(source)}
    dataset = None
    probe_list = load_probes(probes or DEFAULT_PROBES)
    probe_caps = [c for p in probe_list for c in (p.short_caption, *p.long_captions)]

    if source.is_dir():
        dataset = load_dataset_dir(source, cfg.data.image_size)
        summary["kind"] = "dataset"
        captions = dataset.captions()
        tok = Tokenizer.build([*captions, *probe_caps], _fit_l_max([*captions, *probe_caps], cfg))
        encoder = HashEncoder(tok, cfg.text.d, cfg.text.hash_seed)
        table = embedding_table(captions, encoder)
        masses = {}
        for mode in MODES:
            plan = frame_weights(dataset, mode)
            masses[mode] = instrument_mass(plan, dataset)
            if mode == cfg.balance.mode:
                plan.write_csv(rep / "weights.csv", dataset)
        _csv(rep / "instrument_mass.csv", ["mode", "instrument", "mass"],
             [(m, dataset.vocab.word("instrument", i), f"{v:.12g}")
              for m in MODES for i, v in sorted(masses[m].items())])
        summary["weights_mode"] = cfg.balance.mode
        summary["instrument_mass"] = {m: {dataset.vocab.word("instrument", i): v for i, v in sorted(ms.items())}
                                      for m, ms in masses.items()}
    else:
        table = EmbeddingTable.read(source)
        summary["kind"] = "embedding_table"
        if all(c in table for c in probe_caps):
            encoder = TableEncoder(table, cfg.text.l_max)
        else:
            encoder = HashEncoder(Tokenizer.build(probe_caps, _fit_l_max(probe_caps, cfg)), cfg.text.d,
                                  cfg.text.hash_seed)
            summary["alignment_note"] = "probe captions absent from the table; probes embedded with the hash encoder"
    summary["encoder"] = table.encoder
    summary["alignment_encoder"] = getattr(encoder, "name", type(encoder).__name__)

    rows = []
    for p in probe_list:
        mean, std = compute_alignment(p, encoder)
        rows.append((p.short_caption, len(p.long_captions), f"{mean:.9g}", f"{std:.9g}"))
    _csv(rep / "alignment.csv", ["short_caption", "n_long", "mean", "std"], rows)
    means = np.array([float(r[2]) for r in rows])
    summary["alignment"] = {"mean_of_means": float(means.mean()), "std_of_means": float(means.std()),
                            "n_probes": len(rows)}

    if len(table) >= 3:
        proj = project_2d(table)
        vocab, parsed, unparsed = _attribution_vocab(table.captions, dataset, cfg)
        groups = [vocab.word("instrument", parsed[c].instrument_id) if vocab else "caption"
                  for c in proj.keys]
        _csv(rep / "projection.csv", ["caption", "x", "y", "group"],
             [(k, f"{x:.9g}", f"{y:.9g}", g) for k, (x, y), g in zip(proj.keys, proj.coords, groups)])
        _scatter(rep / "projection.png", proj.coords, groups, "caption embeddings (PCA)")
        summary["projection"] = {"explained": proj.explained.tolist(), "degenerate": proj.degenerate}
        summary["separation"] = separation(table)
        if vocab is not None and len(table) > k_neighbors:
            purity = cluster_attribution(table, parsed, k_neighbors)
            ranked = sorted(purity.items(), key=lambda kv: (-kv[1], kv[0]))
            _csv(rep / "attribution.csv", ["rank", "component", "purity"],
                 [(i + 1, k, f"{v:.9g}") for i, (k, v) in enumerate(ranked)])
            summary["attribution"] = {"k_neighbors": k_neighbors, "purity": purity,
                                      "ranking": [k for k, _ in ranked]}
        else:
            summary["attribution"] = {"skipped": "captions do not parse as triplets" if vocab is None
                                      else f"fewer than {k_neighbors + 1} captions",
                                      "unparsed": unparsed[:20]}
    write_json(rep / "analysis.json", summary)
    write_manifest(out, build_manifest("analyze", cfg, {"text.hash_seed": cfg.text.hash_seed}, analysis=summary))
    return summary


# --- evaluate ---------------------------------------------------------------------

def image_files(root: Path) -> list[Path]:
    root = Path(root)
    if (root / "labels").is_dir() and (root / "videos").is_dir():
        base = root / "videos"
    elif (root / "samples" / "images").is_dir():
        base = root / "samples" / "images"
    else:
        base = root
    return sorted(p for p in base.rglob("*.png") if not p.name.startswith("grid"))


def _load_side(paths: Sequence[Path], resolution: int | None, side: str, failures: list) -> list[ImageItem]:
    items = []
    for p in paths:
        try:
            items.append(ImageItem(p.name if side == "generated" else str(p), read_image(p, resolution), p))
        except Exception as e:  # noqa: BLE001 - unreadable files are reported, not fatal
            failures.append({"side": side, "path": str(p), "error": str(e)})
    if len(items) < 2:
        raise DataError(f"fewer than 2 readable {side} images ({len(items)}); failures: {failures}")
    return items


def _prompt_map(generated_dir: Path, prompts: Path | None) -> dict[str, str]:
    path = Path(prompts) if prompts else Path(generated_dir) / "samples" / "prompts.csv"
    if not path.exists():
        return {}
    with open(path, newline="") as fh:
        return {row["file"]: row["prompt"] for row in csv.DictReader(fh)}


def cmd_evaluate(cfg: RunConfig, real_dir: Path, generated_dir: Path, out: Path, prompts: Path | None = None,
                 force: bool = False) -> dict:
    cfg.validate()
    real_paths, gen_paths = image_files(real_dir), image_files(generated_dir)
    if not real_paths or not gen_paths:
        raise DataError(f"image directories must be non-empty ({len(real_paths)} real, {len(gen_paths)} generated)")
    out = prepare_run_dir(out, force)
    rep = out / "reports"
    failures: list = []
    gen_probe = read_image(gen_paths[0])
    resolution = gen_probe.shape[0]
    gen = _load_side(gen_paths, resolution, "generated", failures)
    real = _load_side(real_paths, resolution, "real", failures)

    e = cfg.eval
    if e.extractor == "file":
        extractor = FileFeatureExtractor(EmbeddingTable.read(e.features))
    else:
        extractor = ToyFeatureExtractor(cfg.toy())
    report: dict = {
        "extractor": extractor.name, "n_real": len(real), "n_generated": len(gen), "resolution": resolution,
        "unreadable": failures, "real_dir": str(real_dir), "generated_dir": str(generated_dir),
    }
    report["fid"] = fid(real, gen, extractor)
    sidecar = Path(generated_dir) / "samples" / "generation.json"
    seed = None
    if sidecar.exists():
        side = json.loads(sidecar.read_text())
        report["checkpoints"], seed = side["checkpoints"], side["seed"]

    pmap = _prompt_map(generated_dir, prompts)
    paired = [(it, pmap[it.key]) for it in gen if it.key in pmap]
    report["n_prompted"] = len(paired)
    if paired:
        items, caps = [p[0] for p in paired], [p[1] for p in paired]
        if e.image_features and e.text_embeddings:
            img_enc = FileFeatureExtractor(EmbeddingTable.read(e.image_features))
            txt_enc = TableTextEncoder(EmbeddingTable.read(e.text_embeddings))
        else:
            img_enc, txt_enc = None, None
        toy = cfg.toy()
        parsable = set()
        for c in set(caps):
            try:
                parse_caption(c, toy.vocab())
                parsable.add(c)
            except (LookupFailure, DataError):
                pass
        toy_items = [it for it, c in paired if c in parsable]
        toy_caps = [c for c in caps if c in parsable]
        report["n_toy_prompted"] = len(toy_items)
        toy_prompts = bool(toy_items)
        if img_enc is None and toy_prompts:
            # the toy encoders only embed toy-vocabulary captions
            img_enc, txt_enc = OracleImageEncoder(toy), ToyTextEncoder(toy.vocab())
            items, caps = toy_items, toy_caps
        if img_enc is not None:
            report["alignment_score"] = {"value": alignment_score(items, caps, img_enc, txt_enc),
                                         "image_encoder": img_enc.name, "text_encoder": txt_enc.name,
                                         "n": len(items)}
        if toy_prompts:
            oa = oracle_alignment(toy_items, toy_caps, toy)
            report["oracle_alignment"] = oa.as_dict()
            _csv(rep / "oracle_alignment.csv", ["component", "accuracy"],
                 [(k, f"{oa.as_dict()[k]:.9g}") for k in ("instrument", "verb", "target", "triplet")])
            _csv(rep / "oracle_rows.csv", list(oa.rows[0]), [list(r.values()) for r in oa.rows])
            per: dict[str, list[int]] = {}
            for r in oa.rows:
                per.setdefault(r["prompt"], []).append(r["triplet"])
            _csv(rep / "oracle_per_prompt.csv", ["prompt", "n", "triplet_accuracy"],
                 [(p, len(v), f"{np.mean(v):.9g}") for p, v in sorted(per.items())])
    prox = feature_proximity_map(real, gen, extractor)
    _scatter(rep / "proximity.png", prox.coords, prox.labels, f"feature proximity ({extractor.name})")
    report["proximity"] = {"centroid_distance": prox.centroid_distance(), "mean_spread": prox.mean_spread()}

    records = [{"metric": "fid", "value": report["fid"], "n_a": len(real), "n_b": len(gen),
                "extractor": extractor.name, "seed": seed}]
    if "alignment_score" in report:
        a = report["alignment_score"]
        records.append({"metric": "alignment_score", "value": a["value"], "n_a": a["n"], "n_b": a["n"],
                        "extractor": f"{a['image_encoder']}|{a['text_encoder']}", "seed": seed})
    for k, v in report.get("oracle_alignment", {}).items():
        if k != "n":
            records.append({"metric": f"oracle_{k}", "value": v, "n_a": report["oracle_alignment"]["n"],
                            "n_b": report["oracle_alignment"]["n"], "extractor": "toy-oracle", "seed": seed})
    report["metrics"] = records
    write_json(rep / "metrics.json", report)
    _csv(rep / "metrics.csv", ["metric", "value", "n_a", "n_b", "extractor", "seed"],
         [(r["metric"], f"{r['value']:.9g}", r["n_a"], r["n_b"], r["extractor"], r["seed"]) for r in records])
    write_manifest(out, build_manifest("evaluate", cfg, {}, evaluation={k: v for k, v in report.items()
                                                                        if k != "unreadable"}))
    return report


# --- argument parsing -------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="INI config file (sections data, text, balance, diffusion, eval)")
    common.add_argument("--preset", choices=("desk", "paper"), help="base preset (default: desk)")
    common.add_argument("--seed", type=int, help="seed for this command (overrides data.seed and diffusion.seed)")
    common.add_argument("--out", type=Path, help="run directory (default: runs/<command>-<config hash>)")
    common.add_argument("--force", action="store_true", help="reuse a non-empty run directory")
    common.add_argument("--set", dest="overrides", action="append", default=[], metavar="SECTION.KEY=VALUE",
                        help="override one config value (repeatable)")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="tripletdiff", description=__doc__.split("\n\n")[0],
                                formatter_class=argparse.RawDescriptionHelpFormatter,
                                epilog="exit codes: 0 ok, 2 config/contract, 3 data, 4 numeric abort")
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("make-toy", parents=[common], help="render a TripletWorld dataset")
    t = sub.add_parser("train", parents=[common], help="train the base or super-resolution stage")
    t.add_argument("--stage", choices=("base", "sr"), required=True)
    t.add_argument("--data", type=Path, help="dataset directory (overrides data.root)")
    t.add_argument("--resume", type=Path, help="checkpoint to continue from")
    g = sub.add_parser("generate", parents=[common], help="sample images from prompts")
    g.add_argument("--base", type=Path, required=True, help="base-stage checkpoint")
    g.add_argument("--sr", type=Path, help="super-resolution checkpoint (omit for low-res output)")
    g.add_argument("--prompt", action="append", default=[], help="prompt (repeatable)")
    g.add_argument("--prompts-file", type=Path, help="file with one prompt per line")
    g.add_argument("--count", type=int, default=4, help="images per prompt")
    g.add_argument("--ema", action="store_true", help="use EMA weights when present")
    a = sub.add_parser("analyze", parents=[common], help="caption-embedding and balance analyses")
    a.add_argument("input", type=Path, help="embedding table file or dataset directory")
    a.add_argument("--probes", type=Path, help=f"alignment probe JSON (default: {DEFAULT_PROBES.name})")
    a.add_argument("--k", type=int, default=5, help="neighbours for cluster attribution")
    e = sub.add_parser("evaluate", parents=[common], help="FID, alignment score, oracle alignment")
    e.add_argument("real_dir", type=Path)
    e.add_argument("generated_dir", type=Path)
    e.add_argument("--prompts", type=Path, help="CSV with file,prompt columns (default: the generate run's)")
    e.add_argument("--extractor", choices=("toy", "file"), help="feature extractor (overrides eval.extractor)")
    e.add_argument("--features", type=Path, help="feature table for --extractor file")
    return p


def resolve_config(args: argparse.Namespace) -> RunConfig:
    overrides = list(args.overrides)
    if args.seed is not None and args.command != "generate":
        overrides += [f"data.seed={args.seed}", f"diffusion.seed={args.seed}"]
    if getattr(args, "data", None) is not None:
        overrides.append(f"data.root={args.data}")
    if getattr(args, "extractor", None):
        overrides.append(f"eval.extractor={args.extractor}")
    if getattr(args, "features", None):
        overrides.append(f"eval.features={args.features}")
    return load_config(args.config, overrides, args.preset)


def run(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    cfg = resolve_config(args)
    out = args.out or Path("runs") / f"{args.command}-{cfg.hash()}"
    if args.command == "make-toy":
        m = cmd_make_toy(cfg, out, args.force)
        print(f"{out}: {m['dataset']['n_frames']} frames, imbalance ratio {m['dataset']['imbalance_ratio']:.2f}")
    elif args.command == "train":
        m = cmd_train(cfg, args.stage, out, args.force, args.resume)
        print(f"{out}: {args.stage} stage at step {m['stages'][args.stage]['final_step']}")
    elif args.command == "generate":
        prompts = list(args.prompt) + (_read_prompts(args.prompts_file) if args.prompts_file else [])
        seed = cfg.diffusion.seed if args.seed is None else args.seed
        s = cmd_generate(cfg, args.base, prompts, args.count, seed, out, args.sr, args.force, args.ema)
        print(f"{out}: {len(prompts) * args.count} images ({s['stage']})")
        for w in s["warnings"]:
            print(f"warning: {w}", file=sys.stderr)
    elif args.command == "analyze":
        s = cmd_analyze(cfg, args.input, out, args.probes, args.force, args.k)
        print(f"{out}: alignment mean {s['alignment']['mean_of_means']:.4f} over {s['alignment']['n_probes']} probes")
    elif args.command == "evaluate":
        r = cmd_evaluate(cfg, args.real_dir, args.generated_dir, out, args.prompts, args.force)
        print(f"{out}: FID {r['fid']:.4f} ({r['extractor']}, {r['n_real']} real / {r['n_generated']} generated)")
    return 0


def main(argv: Sequence[str] | None = None) -> int:
    try:
        return run(argv)
    except TripletDiffError as e:
        print(f"error: {e}", file=sys.stderr)
        return e.exit_code


if __name__ == "__main__":
    sys.exit(main())
