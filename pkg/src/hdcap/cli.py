"""Operator commands: synth, learn, binarize, infer, inspect, bench, selftest.

Configuration precedence is flags, then --config file (lines of
key = value, # comments allowed), then built-in defaults. Artifact
producing commands write a .manifest.json next to their output. Exit
codes: 0 success, 1 usage error, 2 data error, 3 I/O error.
"""

from __future__ import annotations

import json
import os
import shlex
import sys
import time

import click
import numpy as np

import hdcap
from hdcap.decoder import DecodeConfig, decode
from hdcap.encoders import PatchFeatures
from hdcap.errors import DataError, ProtocolError, StateError
from hdcap.learner import LearnConfig, learn_stream
from hdcap.lsh import ROLE_CAPTION, ROLE_IMAGE, LshProjector, positional_codes
from hdcap.manifest import write_manifest
from hdcap.protomem import (
    STATE_ACCUM_I32,
    PrototypeMemory,
    SeedBundle,
    create_packed_random,
)
from hdcap.providers.client import ExpectedDims, model_server_client
from hdcap.providers.shard import read_shard, read_shard_dir, shard_info, write_shard
from hdcap.providers.synthetic import SyntheticWorld, WorldConfig
from hdcap.sampler import SamplerConfig

EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_IO = 3

# Sampler and decoder defaults for inference.
DEFAULTS = {
    "temperature": 1.0,
    "rep_penalty": 1.1,
    "top_k": 80,
    "top_p": 0.95,
    "clip_weight": 0.5,
    "sharpen": 2.0,
    "mix": 0.15,
    "window": 3,
    "max_tokens": 15,
    "seed": 0,
}


def _load_config_file(path: str | None) -> dict:
    if not path:
        return {}
    values: dict[str, str] = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise DataError(f"{path}:{lineno}: expected 'key = value'")
            key, value = line.split("=", 1)
            values[key.strip().replace("-", "_")] = value.strip()
    return values


def _resolve(flag_value, key: str, file_config: dict, cast=float):
    if flag_value is not None:
        return flag_value
    if key in file_config:
        return cast(file_config[key])
    return DEFAULTS[key]


@click.group()
@click.version_option(hdcap.__version__)
def cli() -> None:
    """Hyperdimensional caption engine."""


# ---------------------------------------------------------------- synth


@cli.command()
@click.option("--out", required=True, type=click.Path(), help="output directory")
@click.option("--seed", default=11, show_default=True, type=int)
@click.option("--templates", required=True,
              help="semicolon-separated captions, words space-separated")
@click.option("--prefix", default="this image shows", show_default=True)
@click.option("--synonyms", default="", help="comma-separated alias=base pairs")
@click.option("--images", default=50, show_default=True, type=int, help="training images per template")
@click.option("--heldout", default=20, show_default=True, type=int, help="held-out images per template")
@click.option("--n-p", default=9, show_default=True, type=int)
@click.option("--d-i", default=32, show_default=True, type=int)
@click.option("--d-c", default=48, show_default=True, type=int)
@click.option("--sigma", default=0.1, show_default=True, type=float)
def synth(out, seed, templates, prefix, synonyms, images, heldout, n_p, d_i, d_c, sigma):
    """Generate a synthetic world: shard, world.json, held-out features."""
    template_tuple = tuple(tuple(t.split()) for t in templates.split(";") if t.strip())
    synonym_tuple = tuple(tuple(pair.split("=", 1)) for pair in synonyms.split(",") if pair.strip())
    config = WorldConfig(seed=seed, templates=template_tuple, prefix=tuple(prefix.split()),
                         synonyms=synonym_tuple, n_p=n_p, d_i=d_i, d_c=d_c, sigma=sigma)
    world = SyntheticWorld(config)
    os.makedirs(out, exist_ok=True)
    world_path = os.path.join(out, "world.json")
    with open(world_path, "w", encoding="utf-8") as fh:
        fh.write(config.to_json())
        fh.write("\n")
    shard_path = os.path.join(out, "train-000.hdsh")
    count = write_shard(shard_path, list(world.training_records(images)), n_p, d_i, d_c)
    heldout_meta = []
    heldout_dir = os.path.join(out, "heldout")
    os.makedirs(heldout_dir, exist_ok=True)
    for i, (template_index, feats) in enumerate(world.heldout_set(heldout)):
        npy = os.path.join(heldout_dir, f"{i:04d}.npy")
        np.save(npy, feats.data)
        heldout_meta.append({"file": os.path.relpath(npy, out), "template": template_index})
    with open(os.path.join(out, "heldout.json"), "w", encoding="utf-8") as fh:
        json.dump({"images": heldout_meta,
                   "captions": [" ".join(t) for t in config.templates]}, fh, indent=2)
    info = {
        "vocab_size": world.vocab_size,
        "prefix_ids": list(world.prefix_ids),
        "eos_id": world.eos_id,
        "records": count,
    }
    write_manifest(shard_path, "synth", {**info, "world": json.loads(config.to_json())},
                   inputs=[world_path])
    click.echo(f"wrote {count} records to {shard_path}; vocab={world.vocab_size} "
               f"prefix_ids={world.prefix_ids} eos={world.eos_id}")


# ---------------------------------------------------------------- learn


@cli.command()
@click.option("--data", required=True, type=click.Path(exists=True),
              help="shard file or directory of .hdsh shards")
@click.option("--proto", required=True, type=click.Path(), help="prototype memory file")
@click.option("--lmax", type=int, default=None, help="maximum token position")
@click.option("--beta", type=int, default=50_000, show_default=True)
@click.option("--vocab", type=int, default=None, help="vocabulary size")
@click.option("--seed", type=int, default=0, show_default=True, help="master seed for all generators")
@click.option("--prefix-ids", default=None, help="comma-separated prefix token ids")
@click.option("--world", type=click.Path(exists=True), default=None,
              help="world.json supplying vocab and prefix for synthetic data")
@click.option("--flush-batch", type=int, default=512, show_default=True)
@click.option("--truncate", type=int, default=None, help="max caption tokens kept")
@click.option("--resume", is_flag=True, help="continue from the stored checkpoint")
@click.option("--overwrite", is_flag=True, help="replace an existing memory")
@click.option("--strict", is_flag=True, help="abort on malformed records")
def learn(data, proto, lmax, beta, vocab, seed, prefix_ids, world, flush_batch,
          truncate, resume, overwrite, strict):
    """Single-pass learning from shards into a prototype memory."""
    if world:
        with open(world, "r", encoding="utf-8") as fh:
            w = SyntheticWorld(WorldConfig.from_json(fh.read()))
        vocab = vocab or w.vocab_size
        prefix = tuple(w.prefix_ids)
    elif prefix_ids:
        prefix = tuple(int(t) for t in prefix_ids.split(","))
    else:
        raise click.UsageError("need --prefix-ids or --world")
    if resume:
        mem = PrototypeMemory.open_memory(proto)
        if mem.state != STATE_ACCUM_I32:
            raise StateError("can only resume an AccumI32 memory")
    else:
        if lmax is None:
            raise click.UsageError("--lmax is required")
        if vocab is None:
            raise click.UsageError("need --vocab or --world")
        mem = PrototypeMemory.create(proto, lmax, vocab, beta, SeedBundle.derive(seed),
                                     overwrite=overwrite)
    seeds = mem.seeds
    lmax, vocab, beta = mem.l_max, mem.vocab_size, mem.beta

    if os.path.isdir(data):
        shard_paths = sorted(os.path.join(data, p) for p in os.listdir(data)
                             if p.endswith(".hdsh"))
        if not shard_paths:
            raise DataError(f"no .hdsh shards under {data}")
        dims = shard_info(shard_paths[0])
        source = read_shard_dir(data, start=mem.records_consumed,
                                expected_dims=(dims.n_p, dims.d_i, dims.d_c))
    else:
        shard_paths = [data]
        dims = shard_info(data)
        source = read_shard(data, start=min(mem.records_consumed, dims.record_count),
                            expected_dims=(dims.n_p, dims.d_i, dims.d_c))

    proj_img = LshProjector(seeds.lsh_image, dims.d_i, mem.beta, ROLE_IMAGE)
    proj_cap = LshProjector(seeds.lsh_caption, dims.d_c, mem.beta, ROLE_CAPTION)
    codes = positional_codes(seeds.positional, dims.n_p, mem.beta)
    config = LearnConfig(l_max=mem.l_max, prefix_ids=prefix, flush_batch=flush_batch,
                         truncation=truncate, strict=strict)

    # Test hook: die without cleanup right after checkpoint N, so the
    # crash-recovery harness can interrupt at an exact flush boundary.
    exit_after = int(os.environ.get("HDCAP_EXIT_AFTER_CHECKPOINTS", "0"))
    checkpoints_seen = 0

    def after_checkpoint(consumed: int) -> None:
        nonlocal checkpoints_seen
        checkpoints_seen += 1
        if exit_after and checkpoints_seen >= exit_after:
            os._exit(42)

    summary = learn_stream(mem, source, proj_img, proj_cap, codes, config,
                           after_checkpoint=after_checkpoint,
                           source_start=mem.records_consumed)
    consumed = mem.records_consumed
    mem.close()
    write_manifest(proto, "learn", {
        "l_max": lmax, "beta": beta, "vocab": vocab, "seed": seed,
        "prefix_ids": list(prefix), "flush_batch": flush_batch,
        "truncate": truncate, "resume": resume, "strict": strict,
        "seeds": seeds.__dict__,
    }, inputs=shard_paths)
    click.echo(f"learned {summary.records} records ({summary.tokens} tokens, "
               f"{summary.skipped} skipped) in {summary.duration:.2f}s; "
               f"records_consumed={consumed}")


# ---------------------------------------------------------------- binarize


@cli.command()
@click.option("--proto", required=True, type=click.Path(exists=True))
@click.option("--out", required=True, type=click.Path())
@click.option("--overwrite", is_flag=True)
def binarize(proto, out, overwrite):
    """Sign-binarize and bit-pack an accumulator memory."""
    with PrototypeMemory.open_memory(proto, writable=False) as mem:
        started = time.monotonic()
        packed = mem.binarize_pack(out, overwrite=overwrite)
        packed.close()
    write_manifest(out, "binarize", {"source": os.path.abspath(proto)}, inputs=[proto])
    click.echo(f"packed memory written to {out} in {time.monotonic() - started:.2f}s")


# ---------------------------------------------------------------- inspect


@cli.command()
@click.argument("path", type=click.Path(exists=True))
@click.option("--as-json", is_flag=True)
def inspect(path, as_json):
    """Dump the header of a prototype memory or shard file."""
    with open(path, "rb") as fh:
        magic = fh.read(4)
    if magic == b"HDFP":
        with PrototypeMemory.open_memory(path, writable=False) as mem:
            info = mem.describe()
    elif magic == b"HDSH":
        s = shard_info(path)
        info = {"path": path, "kind": "shard", "n_p": s.n_p, "d_I": s.d_i,
                "d_C": s.d_c, "records": s.record_count}
    else:
        raise DataError(f"{path}: unrecognized magic {magic!r}")
    if as_json:
        click.echo(json.dumps(info, indent=2, sort_keys=True))
    else:
        for key, value in info.items():
            click.echo(f"{key}: {value}")


# ---------------------------------------------------------------- infer


@cli.command()
@click.option("--proto", required=True, type=click.Path(exists=True), help="packed memory")
@click.option("--features", required=True, type=click.Path(exists=True), help=".npy patch features")
@click.option("--world", type=click.Path(exists=True), default=None, help="synthetic provider")
@click.option("--server-cmd", default=None, help="model server command line")
@click.option("--config", "config_path", type=click.Path(exists=True), default=None)
@click.option("--prefix", default=None, help="prefix text (tokenized by the provider)")
@click.option("--prefix-ids", default=None, help="comma-separated prefix token ids")
@click.option("--start-ids", default=None,
              help="full starting token ids (prefix plus forced tokens)")
@click.option("--window", type=int, default=None)
@click.option("--mix", type=float, default=None)
@click.option("--max-tokens", type=int, default=None)
@click.option("--stop-ids", default=None, help="comma-separated stop token ids")
@click.option("--temperature", type=float, default=None)
@click.option("--rep-penalty", type=float, default=None)
@click.option("--top-k", type=int, default=None)
@click.option("--top-p", type=float, default=None)
@click.option("--clip-weight", type=float, default=None)
@click.option("--sharpen", type=float, default=None)
@click.option("--seed", type=int, default=None)
@click.option("--diag", type=click.Path(), default=None, help="JSON-lines diagnostics output")
def infer(proto, features, world, server_cmd, config_path, prefix, prefix_ids, start_ids,
          window, mix, max_tokens, stop_ids, temperature, rep_penalty, top_k, top_p,
          clip_weight, sharpen, seed, diag):
    """Decode a caption for one image's patch features."""
    file_config = _load_config_file(config_path)
    mem = PrototypeMemory.open_memory(proto)
    feats = PatchFeatures(np.load(features))

    client = None
    if world:
        with open(world, "r", encoding="utf-8") as fh:
            w = SyntheticWorld(WorldConfig.from_json(fh.read()))
        providers = w.providers()
        default_prefix = list(w.prefix_ids)
        default_stops = {w.eos_id}
    elif server_cmd:
        client = model_server_client(shlex.split(server_cmd),
                                     expected=ExpectedDims(d_i=feats.d_i, n_p=feats.n_p,
                                                           vocab_size=mem.vocab_size))
        providers = client.providers()
        default_prefix = None
        default_stops = set()
    else:
        raise click.UsageError("need --world or --server-cmd")

    if prefix_ids:
        prefix_list = [int(t) for t in prefix_ids.split(",")]
    elif prefix:
        prefix_list = providers.sequence.tokenize(prefix)
    elif default_prefix:
        prefix_list = default_prefix
    else:
        raise click.UsageError("need --prefix, --prefix-ids, or a world with one")
    start_list = [int(t) for t in start_ids.split(",")] if start_ids else None
    stops = {int(t) for t in stop_ids.split(",")} if stop_ids else default_stops

    decode_cfg = DecodeConfig(
        window=int(_resolve(window, "window", file_config, int)),
        mix_weight=float(_resolve(mix, "mix", file_config)),
        max_new_tokens=int(_resolve(max_tokens, "max_tokens", file_config, int)),
        stop_tokens=frozenset(stops),
    )
    sampler_cfg = SamplerConfig(
        temperature=float(_resolve(temperature, "temperature", file_config)),
        repetition_penalty=float(_resolve(rep_penalty, "rep_penalty", file_config)),
        top_k=int(_resolve(top_k, "top_k", file_config, int)),
        top_p=float(_resolve(top_p, "top_p", file_config)),
        clip_weight=float(_resolve(clip_weight, "clip_weight", file_config)),
        sharpen=float(_resolve(sharpen, "sharpen", file_config)),
        rng_seed=int(_resolve(seed, "seed", file_config, int)),
    )
    try:
        result = decode(feats, mem, providers, decode_cfg, sampler_cfg,
                        prefix_ids=prefix_list, initial_ids=start_list)
    finally:
        if client is not None:
            client.close()
        mem.close()
    if diag:
        with open(diag, "w", encoding="utf-8") as fh:
            for entry in result.diagnostics:
                fh.write(json.dumps(entry, sort_keys=True))
                fh.write("\n")
        write_manifest(diag, "infer", {
            "proto": os.path.abspath(proto), "features": os.path.abspath(features),
            "decode": {"window": decode_cfg.window, "mix_weight": decode_cfg.mix_weight,
                       "max_new_tokens": decode_cfg.max_new_tokens,
                       "stop_tokens": sorted(decode_cfg.stop_tokens)},
            "sampler": sampler_cfg.__dict__,
            "prefix_ids": prefix_list, "start_ids": start_list,
        }, inputs=[proto, features])
    click.echo(result.text)
    click.echo(f"# finish_reason={result.finish_reason} tokens={len(result.tokens)}",
               err=True)


# ---------------------------------------------------------------- bench


@cli.command()
@click.option("--proto", type=click.Path(exists=True), default=None,
              help="packed memory to scan (default: generate one)")
@click.option("--lmax", type=int, default=16, show_default=True)
@click.option("--vocab", type=int, default=10_000, show_default=True)
@click.option("--beta", type=int, default=50_000, show_default=True)
@click.option("--lengths", default="4,8", show_default=True)
@click.option("--windows", default="1,3", show_default=True)
@click.option("--repeats", type=int, default=3, show_default=True)
@click.option("--csv", "csv_path", type=click.Path(), default=None)
@click.option("--compare-unpacked", is_flag=True,
              help="also time an unpacked int8 reference scan")
@click.option("--seed", type=int, default=7, show_default=True)
def bench(proto, lmax, vocab, beta, lengths, windows, repeats, csv_path,
          compare_unpacked, seed):
    """Measure retrieval throughput on a packed memory."""
    import tempfile

    from hdcap.decoder import hd_logits, mix_logits
    from hdcap.hdcore import hamming_batch, pack, random_bipolar, unpack
    from hdcap.sampler import build_candidates

    tmp = None
    if proto is None:
        tmp = tempfile.mkdtemp(prefix="hdcap-bench-")
        proto = os.path.join(tmp, "bench.hdfp")
        click.echo(f"generating random packed memory ({lmax}x{vocab}x{beta}) ...", err=True)
        create_packed_random(proto, lmax, vocab, beta, SeedBundle.derive(seed), rng_seed=seed)
    mem = PrototypeMemory.open_memory(proto)
    rng = np.random.default_rng(seed)
    rows = []
    sampler_cfg = SamplerConfig(clip_weight=0.0)
    for window in (int(w) for w in windows.split(",")):
        for length in (int(x) for x in lengths.split(",")):
            comb = random_bipolar(rng, mem.beta)
            lm = rng.standard_normal(mem.vocab_size)
            best = float("inf")
            for _ in range(repeats):
                started = time.perf_counter()
                steps = 0
                for i in range(length):
                    position = min(2 + i, mem.l_max)
                    hd = hd_logits(mem, comb, position, window)
                    mixed = mix_logits(hd, lm, 0.15)
                    candidates, probs = build_candidates(mixed, [], sampler_cfg)
                    steps += 1
                best = min(best, time.perf_counter() - started)
            effective_w = min(window, mem.l_max - 1)
            bytes_scanned = length * effective_w * mem.vocab_size * ((mem.beta + 7) // 8)
            rows.append({"caption_length": length, "window": window,
                         "tokens_per_sec": round(length / best, 3),
                         "bytes_scanned": bytes_scanned})
    lines = ["caption_length,window,tokens_per_sec,bytes_scanned"]
    lines += [f"{r['caption_length']},{r['window']},{r['tokens_per_sec']},{r['bytes_scanned']}"
              for r in rows]
    report = "\n".join(lines)
    click.echo(report)

    if compare_unpacked:
        slice0 = np.array(mem.slice(2))
        unpacked = unpack(slice0, mem.beta)
        query = random_bipolar(rng, mem.beta)
        packed_query = pack(query)
        t_packed = min(_timed(lambda: hamming_batch(slice0, packed_query)) for _ in range(repeats))
        t_unpacked = min(_timed(lambda: (unpacked != query).sum(axis=1)) for _ in range(repeats))
        ratio = t_unpacked / t_packed
        click.echo(f"# packed {t_packed * 1e3:.1f} ms vs unpacked {t_unpacked * 1e3:.1f} ms "
                   f"per slice: {ratio:.1f}x")
    if csv_path:
        with open(csv_path, "w", encoding="utf-8") as fh:
            fh.write(report + "\n")
        write_manifest(csv_path, "bench", {
            "proto": os.path.abspath(proto), "lengths": lengths, "windows": windows,
            "repeats": repeats, "seed": seed,
        }, inputs=[proto])
    mem.close()


def _timed(fn) -> float:
    started = time.perf_counter()
    fn()
    return time.perf_counter() - started


# ---------------------------------------------------------------- selftest


@cli.command()
@click.option("--beta", type=int, default=50_000, show_default=True)
@click.option("--seed", type=int, default=2024, show_default=True)
def selftest(beta, seed):
    """Statistical property suites with fixed seeds; nonzero exit on failure."""
    from hdcap.hdcore import binarize, normalized_hamming, random_bipolar, zero_accumulator
    from hdcap.lsh import LshProjector, project_block

    rng = np.random.default_rng(seed)
    failures = 0

    tol = 5 * 0.5 / np.sqrt(beta)
    worst = 0.0
    for _ in range(200):
        a = random_bipolar(rng, beta)
        b = random_bipolar(rng, beta)
        worst = max(worst, abs(normalized_hamming(a, b) - 0.5))
    ok = worst <= tol
    failures += not ok
    click.echo(f"[{'PASS' if ok else 'FAIL'}] near-orthogonality: "
               f"max |d - 0.5| = {worst:.5f} (tolerance {tol:.5f})")

    d_in = 24
    proj = LshProjector(seed=seed, input_dims=d_in, output_dims=beta, role=ROLE_IMAGE)
    for theta in (np.pi / 8, np.pi / 4, np.pi / 2, 3 * np.pi / 4):
        p = theta / np.pi
        sigma = np.sqrt(p * (1 - p) / beta)
        pairs = 50
        xs = rng.standard_normal((pairs, d_in))
        xs /= np.linalg.norm(xs, axis=1, keepdims=True)
        raw = rng.standard_normal((pairs, d_in))
        orth = raw - (raw * xs).sum(axis=1, keepdims=True) * xs
        orth /= np.linalg.norm(orth, axis=1, keepdims=True)
        ys = np.cos(theta) * xs + np.sin(theta) * orth
        hx = project_block(proj, xs)
        hy = project_block(proj, ys)
        dists = (hx != hy).mean(axis=1)
        mean_tol = 3 * sigma / np.sqrt(pairs)
        err = abs(dists.mean() - p)
        ok = err <= mean_tol
        failures += not ok
        click.echo(f"[{'PASS' if ok else 'FAIL'}] lsh-collision theta={theta / np.pi:.3f}pi: "
                   f"|mean - {p:.4f}| = {err:.5f} (tolerance {mean_tol:.5f})")

    threshold = 0.5 - 3 / np.sqrt(beta)
    worst = 0.0
    trials = 100
    for trial in range(trials):
        m = 3 + 2 * (trial % 16)  # odd sizes 3..33
        members = random_bipolar(rng, beta, n=m)
        acc = zero_accumulator(beta)
        acc += members.sum(axis=0, dtype=np.int32)
        bundled = binarize(acc)
        worst = max(worst, max(normalized_hamming(bundled, mem) for mem in members))
    ok = worst < threshold
    failures += not ok
    click.echo(f"[{'PASS' if ok else 'FAIL'}] bundle-membership: "
               f"max member distance = {worst:.5f} (threshold {threshold:.5f})")

    if failures:
        raise click.exceptions.Exit(EXIT_DATA)
    click.echo("all properties hold")


def main() -> None:
    click.UsageError.exit_code = EXIT_USAGE
    try:
        cli.main(standalone_mode=False)
    except click.UsageError as exc:
        exc.show()
        sys.exit(EXIT_USAGE)
    except click.exceptions.Exit as exc:
        sys.exit(exc.exit_code)
    except click.Abort:
        sys.exit(EXIT_USAGE)
    except click.ClickException as exc:
        exc.show()
        sys.exit(exc.exit_code)
    except (DataError, StateError, ProtocolError, ValueError, OverflowError) as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(EXIT_DATA)
    except OSError as exc:
        click.echo(f"i/o error: {exc}", err=True)
        sys.exit(EXIT_IO)


if __name__ == "__main__":
    main()
