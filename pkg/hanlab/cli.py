# HANLAB
# ***
# Command-line entry point

import argparse
import json
import logging
import os
import sys
from dataclasses import dataclass
from typing import Any, Dict, List, Optional, Sequence

import torch

from hanlab._version import __version__
from hanlab.ahe.bundle import ModelBundle, build_models
from hanlab.ahe.ops import aggregate, encrypt, keygen
from hanlab.ahe.types import CiphertextBatch, PlaintextBatch, PublicKeyBatch
from hanlab.config import HanlabConfig, apply_overrides, config_hash, load_config
from hanlab.errors import (
    CheckpointError,
    ContractViolationError,
    DatasetMissingError,
    HanlabError,
    InvalidArgumentError,
    StageFailureError,
)
from hanlab.tools.checkpoint import load_checkpoint, save_checkpoint
from hanlab.tools.logging import format_stage_name, log_records, read_records
from hanlab.tools.runtime import fresh_generator, make_generator, resolve_device
from hanlab.utils.plotly import loss_curve_figure, save_figure

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_STAGE = 2


class UsageError(Exception):
    pass


class HanlabArgumentParser(argparse.ArgumentParser):
    """Reports usage errors with exit code 1 instead of argparse's 2."""

    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


@dataclass
class RunContext:
    cfg: HanlabConfig
    cfg_hash: str
    out: str
    checkpoint: Optional[str]
    device: torch.device

    def extra(self) -> Dict[str, Any]:
        return {"config_hash": self.cfg_hash}

    def path(self, name: str) -> str:
        return os.path.join(self.out, name)

    def write(self, records: Sequence[Any], file_name: str, overwrite: bool = False) -> str:
        stamped = []
        for record in records:
            record = record if isinstance(record, dict) else vars(record)
            stamped.append({**record, **self.extra()})
        file_path, _ = log_records(stamped, file_name, log_path=self.out, overwrite=overwrite)
        return file_path

    def load_bundle(self, required: bool = True) -> Optional[ModelBundle]:
        if not self.checkpoint:
            if required:
                raise UsageError("this command needs --checkpoint")
            return None
        return load_checkpoint(self.checkpoint, self.device).bundle


# Commands ----

def cmd_train(ctx: RunContext, args) -> int:
    from hanlab.training.pipeline import train_hans

    resume = ctx.checkpoint if args.resume else None
    if args.resume and not resume:
        raise UsageError("--resume needs --checkpoint")
    bundle, reports = train_hans(
        ctx.cfg.ahe,
        ctx.cfg.train,
        checkpoint_dir=ctx.path("checkpoints"),
        resume_from=resume,
        device=str(ctx.device),
        log=True,
        log_path=ctx.out,
        file_name="train_curves.jsonl",
        overwrite=False,
        record_extra=ctx.extra(),
    )
    final = ctx.path("hans_final.hans")
    save_checkpoint(bundle, final, completed_stage=5, extra=ctx.extra())
    ctx.write([{"stage": r.stage, "name": r.name, "gate": r.gate, "final_stats": r.final_stats} for r in reports],
              "train_reports.jsonl")
    curves = {f"stage {r.stage} {name}": values for r in reports for name, values in r.curves.items()}
    figure = save_figure(loss_curve_figure(curves, "Training losses", log_y=False), ctx.path("train_curves.html"))
    print(f"    * CHECKPOINT {final}")
    print(f"    * LOSS CURVES {figure}")
    return EXIT_OK


def cmd_ppu(ctx: RunContext, args) -> int:
    from hanlab.ppu import cppu, ippu, read_public_datasets, write_public_datasets

    bundle = ctx.load_bundle()
    if args.phase == "cppu":
        bundle, report = cppu(bundle, ctx.cfg.ppu)
        write_public_datasets(report.public_datasets, ctx.path("public_datasets.jsonl"))
    else:
        public_path = args.public or ctx.path("public_datasets.jsonl")
        public = read_public_datasets(public_path, ctx.cfg.ppu.sigma)
        bundle, report = ippu(bundle, public, ctx.cfg.ppu)
    ctx.write(report.to_records(), "ppu_curves.jsonl")
    ctx.write([{"phase": report.phase, "aggregation": report.aggregation,
                "encryptor_digests": report.encryptor_digests, "aggregator_digest": report.aggregator_digest}],
              "ppu_reports.jsonl")
    path = ctx.path(f"{args.phase}.hans")
    save_checkpoint(bundle, path, completed_stage=5, extra={**ctx.extra(), "phase": args.phase})
    print(f"    * CHECKPOINT {path}")
    return EXIT_OK


def cmd_assess(ctx: RunContext, args) -> int:
    from hanlab.training.evaluation import security_table
    from hanlab.training.stages import stage3_assess

    bundle = ctx.load_bundle()
    report = stage3_assess(bundle, ctx.cfg.train, salt=args.salt)
    stats = dict(report.final_stats)
    table = security_table(stats.pop("aggregation"), stats)
    print(table.to_string())
    ctx.write(report.to_records(), "assess_curves.jsonl")
    ctx.write([{"statistic": idx, **row} for idx, row in table.to_dict(orient="index").items()], "assess_table.jsonl")
    return EXIT_OK


def _victim(bundle: ModelBundle, client: int):
    from hanlab.attacks import ClientTrafficSource

    if not 0 <= client < bundle.num_clients:
        raise InvalidArgumentError(f"client must be in 0..{bundle.num_clients - 1}")
    return ClientTrafficSource(bundle.encryptor(client), bundle.cfg, client)


def _attack_sample(ctx: RunContext, args):
    """One image and label: a dataset sample, or a smooth synthetic image offline."""
    if args.synthetic:
        generator = make_generator(ctx.cfg.dlg.seed, 0xD0)
        coarse = torch.rand((1, 1, 7, 7), generator=generator)
        x = torch.nn.functional.interpolate(coarse, size=(28, 28), mode="bilinear", align_corners=False)
        label = int(torch.randint(10, (1,), generator=generator))
        return x, label
    from hanlab.fl.datasets import load_dataset

    fl = ctx.cfg.fl
    data = load_dataset(fl.dataset, fl.data_dir, fl.download, fl.checksums)
    if not 0 <= args.index < len(data.test_y):
        raise InvalidArgumentError(f"--index must be in 0..{len(data.test_y) - 1}")
    return torch.from_numpy(data.test_x[args.index:args.index + 1].copy()), int(data.test_y[args.index])


def cmd_attack(ctx: RunContext, args) -> int:
    from hanlab.attacks import (
        dlg,
        dlg_hans,
        pcaom,
        pcapd,
        save_reconstruction_grid,
        train_kma_attackers,
        victim_gradients,
        write_attack_reports,
    )
    from hanlab.fl.task_models import build_task_model

    if args.kind in ("dlg", "dlg-hans"):
        x, label = _attack_sample(ctx, args)
        model = build_task_model("sigmoid_mlp", tuple(x.shape[1:]), 10, ctx.cfg.dlg.seed).to(ctx.device)
        x = x.to(ctx.device)
        grads = victim_gradients(model, x, label, 10, lr=ctx.cfg.fl.lr)
        if args.kind == "dlg":
            result = dlg(model, grads, tuple(x.shape[1:]), 10, ctx.cfg.dlg).score(x, label, ctx.cfg.dlg.success_mse)
            reconstructions = {"plain": result}
            success = result.success
        else:
            bundle = ctx.load_bundle()
            victim = _victim(bundle, args.victim)
            kma = train_kma_attackers(bundle.original_encryptor(), victim, bundle.cfg, ctx.cfg.kma)
            outcome = dlg_hans(model, grads, victim, kma.crack1, kma.crack2, x, label, 10, ctx.cfg.dlg)
            reconstructions = outcome.reconstructions
            success = outcome.success
        grid = save_reconstruction_grid(ctx.path(f"{args.kind}.png"), x, reconstructions)
        ctx.write(
            [{"attack": args.kind, "run": name, "mse": r.mse, "label": r.label, "true_label": label,
              "success": r.success, "iterations": len(r.curve)} for name, r in reconstructions.items()],
            "attacks.jsonl",
        )
        print(f"    * {args.kind.upper()} {'SUCCEEDED' if success else 'FAILED'}; grid at {grid}")
        return EXIT_OK

    bundle = ctx.load_bundle()
    alice = _victim(bundle, args.victim)
    if args.kind == "kma":
        kma = train_kma_attackers(bundle.original_encryptor(), alice, bundle.cfg, ctx.cfg.kma)
        ctx.write([{"attack": "kma", "crack": name, "target": vars(stats), "original": vars(kma.stats_original[name])}
                   for name, stats in kma.stats_target.items()], "attacks.jsonl")
        return EXIT_OK

    if bundle.num_clients != 3:
        raise InvalidArgumentError("pseudo collusion attacks need a 3-client bundle")
    attacker = ({0, 1, 2} - {args.victim, args.bob}).pop()
    if args.kind == "pcaom":
        report = pcaom(alice, bundle.original_encryptor(), bundle.encryptor(attacker), bundle.aggregator,
                       bundle.cfg, args.samples, bob=args.bob, seed=ctx.cfg.kma.seed)
    else:
        from hanlab.ppu import read_public_datasets

        public = read_public_datasets(args.public or ctx.path("public_datasets.jsonl"), ctx.cfg.ppu.sigma)
        bob_sets = [ds for ds in public if ds.client_id == args.bob]
        if not bob_sets:
            raise InvalidArgumentError(f"no public dataset of client {args.bob}")
        bob_public = max(bob_sets, key=lambda ds: ds.round)
        report = pcapd(alice, bob_public, bundle.encryptor(attacker), bundle.aggregator,
                       bundle.cfg, args.samples, seed=ctx.cfg.kma.seed)
    print(report.to_frame().to_string(index=False))
    print(f"      MAD {report.mad:.5f}  Var {report.var:.5f}")
    write_attack_reports([report], ctx.path("attacks.jsonl"), ctx.extra())
    return EXIT_OK


def cmd_fl(ctx: RunContext, args) -> int:
    from hanlab.fl import accuracy_delta, fedavg_hans, fedavg_plain

    fl_cfg = ctx.cfg.fl
    if args.dataset:
        fl_cfg = apply_overrides(ctx.cfg, {"fl": {"dataset": args.dataset}}).fl
    runs = []
    if args.mode in ("plain", "delta"):
        runs.append(fedavg_plain(fl_cfg, device=str(ctx.device)))
    if args.mode in ("hans", "delta"):
        bundle = ctx.load_bundle()
        runs.append(fedavg_hans(fl_cfg, bundle, device=str(ctx.device)))
    for run in runs:
        ctx.write(run.to_records(), "fl_rounds.jsonl")
        ctx.write([run.summary()], "fl_summary.jsonl")
    if args.mode == "delta":
        report = accuracy_delta(runs[0], runs[1])
        ctx.write([report.to_record()], "fl_delta.jsonl")
        print(f"    * DELTA {report.delta:+.4f} (budget {report.delta_budget}) "
              f"{'WITHIN' if report.within_budget else 'OVER'} BUDGET")
    return EXIT_OK


def cmd_bench(ctx: RunContext, args) -> int:
    from hanlab.bench import bench, comm_estimate

    bundle = ctx.load_bundle(required=False) or build_models(ctx.cfg.ahe).to(ctx.device)
    bench_cfg = ctx.cfg.bench
    print(format_stage_name("bench"))
    results = bench(
        args.op or bench_cfg.op,
        args.batch or bench_cfg.batch_sizes,
        bundle,
        trials=args.trials or bench_cfg.trials,
        warmup=bench_cfg.warmup if args.warmup is None else args.warmup,
    )
    ctx.write([r.to_record() for r in results], "bench.jsonl")
    if args.model_size:
        estimate = comm_estimate(args.model_size, bundle.cfg)
        print(f"      upload {estimate.mib_hans:.1f} MiB vs {estimate.mib_plain:.1f} MiB ({estimate.ratio:.1f}x)")
        ctx.write([estimate.to_record()], "comm.jsonl")
    return EXIT_OK


def _key_generator(ctx: RunContext, args, *salt: int) -> torch.Generator:
    """Fresh entropy per call; ``--reproducible-keys`` derives the stream from the seed and ``--round``."""
    if args.reproducible_keys:
        logger.warning(
            "keys are derived from seed %d and round %d; a repeated round reuses them", ctx.cfg.ahe.seed, args.round
        )
        return make_generator(ctx.cfg.ahe.seed, *salt, args.round)
    return fresh_generator()


def cmd_keygen(ctx: RunContext, args) -> int:
    generator = _key_generator(ctx, args, 0x4E)
    keys, pk = keygen(args.n, ctx.cfg.ahe, generator)
    ctx.write([{"index": i, "sk_a": float(a), "sk_b": float(b), "pk": float(p)}
               for i, (a, b, p) in enumerate(zip(keys.sk_a, keys.sk_b, pk.pk))], "keys.jsonl", overwrite=True)
    return EXIT_OK


def _read_values(args) -> List[float]:
    if args.values:
        return [float(v) for v in args.values]
    if args.input:
        with open(args.input) as f:
            return [float(v) for v in json.load(f)]
    raise UsageError("pass --values or --input")


def cmd_encrypt(ctx: RunContext, args) -> int:
    bundle = ctx.load_bundle()
    values = _read_values(args)
    if not 0 <= args.client < bundle.num_clients:
        raise InvalidArgumentError(f"client must be in 0..{bundle.num_clients - 1}")
    m = PlaintextBatch.from_values(values, bundle.cfg.psi)
    generator = _key_generator(ctx, args, 0x45, args.client)
    keys, pk = keygen(len(m), bundle.cfg, generator)
    with torch.no_grad():
        c = encrypt(bundle.encryptor(args.client), m, keys, bundle.cfg)
    ctx.write([{"client": args.client, "index": i, "pk": float(p), "c": row.tolist()}
               for i, (p, row) in enumerate(zip(pk.pk, c.c.cpu()))], "ciphertexts.jsonl")
    if m.clip_count:
        logger.warning("%d plaintext values clipped to [-%g, %g]", m.clip_count, bundle.cfg.psi, bundle.cfg.psi)
    return EXIT_OK


def cmd_aggregate(ctx: RunContext, args) -> int:
    bundle = ctx.load_bundle()
    records = read_records(args.input or ctx.path("ciphertexts.jsonl"))
    by_client: Dict[int, List[dict]] = {}
    for record in records:
        by_client.setdefault(int(record["client"]), []).append(record)
    if sorted(by_client) != list(range(bundle.num_clients)):
        raise InvalidArgumentError(f"need ciphertexts of clients 0..{bundle.num_clients - 1}, got {sorted(by_client)}")
    ciphertexts, pks = [], []
    for client in range(bundle.num_clients):
        rows = sorted(by_client[client], key=lambda r: r["index"])
        ciphertexts.append(CiphertextBatch(torch.tensor([r["c"] for r in rows], dtype=torch.float32)))
        pks.append(PublicKeyBatch(torch.tensor([r["pk"] for r in rows], dtype=torch.float32)))
    with torch.no_grad():
        m_agg = aggregate(bundle.aggregator, ciphertexts, pks).cpu()
    ctx.write([{"index": i, "m_agg": float(v)} for i, v in enumerate(m_agg)], "aggregates.jsonl", overwrite=True)
    return EXIT_OK


def cmd_report(ctx: RunContext, args) -> int:
    from hanlab.bench import reference
    from hanlab.tools.metadata import get_report_summary

    if args.inputs:
        named = {os.path.basename(p): p for p in args.inputs}
        for summary in get_report_summary(named, skip_stats=args.skip_stats):
            print(summary)
    if args.reference:
        print(format_stage_name("reference numbers"))
        for phase in reference.SECURITY_REFERENCE:
            print(f"Security after {phase}:\n{reference.security_reference_frame(phase).to_string()}\n")
        print(f"Timing (s):\n{reference.timing_reference_frame().to_string()}\n")
        print(f"Communication (MB per round):\n{reference.comm_reference_frame().to_string()}\n")
        print(f"SecFed 3000 ciphertexts: {reference.SECFED_SECONDS_3000}s; "
              f"HANs: {reference.HANS_SECONDS_3000}s ({reference.SPEEDUP_VS_SECFED}x)")
    if not args.inputs and not args.reference:
        raise UsageError("pass report files or --reference")
    return EXIT_OK


# Parser ----

def build_parser() -> HanlabArgumentParser:
    parser = HanlabArgumentParser(prog="hanlab", description="Homomorphic aggregation networks toolkit.")
    parser.add_argument("--version", action="version", version=f"hanlab {__version__}")
    parser.add_argument("--config", help="TOML configuration file")
    parser.add_argument("--seed", type=int, help="seed of every section (unsigned 64-bit)")
    parser.add_argument("--out", default="hanlab-out", help="directory for reports and checkpoints")
    parser.add_argument("--checkpoint", help="hans-ckpt/1 archive to read")
    parser.add_argument("--micro", action="store_true", help="start from the desk-scale presets")
    parser.add_argument("--device", help="torch device (default: HANLAB_DEVICE or cpu)")
    parser.add_argument("--log-level", default="WARNING", choices=["DEBUG", "INFO", "WARNING", "ERROR"])
    commands = parser.add_subparsers(dest="command", required=True, metavar="command")

    train = commands.add_parser("train", help="run the five training stages")
    train.add_argument("--resume", action="store_true", help="resume from --checkpoint")
    train.set_defaults(handler=cmd_train)

    ppu = commands.add_parser("ppu", help="privacy-preserving update")
    ppu.add_argument("phase", choices=["cppu", "ippu"])
    ppu.add_argument("--public", help="public datasets of the collaborative phase (ippu)")
    ppu.set_defaults(handler=cmd_ppu)

    assess = commands.add_parser("assess", help="train all attackers against the frozen models")
    assess.add_argument("--salt", type=int, default=1, help="random stream of this assessment")
    assess.set_defaults(handler=cmd_assess)

    attack = commands.add_parser("attack", help="run an attack")
    attack.add_argument("kind", choices=["kma", "pcaom", "pcapd", "dlg", "dlg-hans"])
    attack.add_argument("--victim", type=int, default=0, help="victim client slot")
    attack.add_argument("--bob", type=int, default=1, help="honest client slot (collusion attacks)")
    attack.add_argument("--samples", type=int, default=2000)
    attack.add_argument("--public", help="public datasets file (pcapd)")
    attack.add_argument("--index", type=int, default=0, help="test image attacked by dlg")
    attack.add_argument("--synthetic", action="store_true", help="attack a synthetic image instead of a dataset one")
    attack.set_defaults(handler=cmd_attack)

    fl = commands.add_parser("fl", help="federated averaging runs")
    fl.add_argument("mode", choices=["plain", "hans", "delta"])
    fl.add_argument("--dataset", choices=["mnist", "fashion_mnist", "cifar10"])
    fl.set_defaults(handler=cmd_fl)

    bench_cmd = commands.add_parser("bench", help="time keygen, encrypt or aggregate")
    bench_cmd.add_argument("--op", choices=["keygen", "encrypt", "aggregate"])
    bench_cmd.add_argument("--batch", type=int, action="append", help="batch size; repeat for several")
    bench_cmd.add_argument("--trials", type=int)
    bench_cmd.add_argument("--warmup", type=int)
    bench_cmd.add_argument("--model-size", type=int, help="also estimate the upload size of a model")
    bench_cmd.set_defaults(handler=cmd_bench)

    keygen_cmd = commands.add_parser("keygen", help="sample key pairs")
    keygen_cmd.add_argument("--n", type=int, default=10)
    keygen_cmd.add_argument("--round", type=int, default=0, help="key stream with --reproducible-keys")
    keygen_cmd.add_argument("--reproducible-keys", action="store_true", help="derive keys from --seed and --round")
    keygen_cmd.set_defaults(handler=cmd_keygen)

    encrypt_cmd = commands.add_parser("encrypt", help="encrypt plaintext values as one client")
    encrypt_cmd.add_argument("--values", type=float, nargs="+")
    encrypt_cmd.add_argument("--input", help="JSON list of values")
    encrypt_cmd.add_argument("--client", type=int, default=0)
    encrypt_cmd.add_argument("--round", type=int, default=0, help="key stream with --reproducible-keys")
    encrypt_cmd.add_argument("--reproducible-keys", action="store_true", help="derive keys from --seed and --round")
    encrypt_cmd.set_defaults(handler=cmd_encrypt)

    aggregate_cmd = commands.add_parser("aggregate", help="aggregate the ciphertexts of every client")
    aggregate_cmd.add_argument("--input", help="ciphertexts.jsonl written by encrypt")
    aggregate_cmd.set_defaults(handler=cmd_aggregate)

    report = commands.add_parser("report", help="summarize JSON-lines reports")
    report.add_argument("inputs", nargs="*")
    report.add_argument("--reference", action="store_true", help="print the published reference numbers")
    report.add_argument("--skip-stats", action="store_true")
    report.set_defaults(handler=cmd_report)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    """
    Run one ``hanlab`` command.

    Returns
    -------
    int
        0 on success; 1 on a usage error, an invalid argument, a missing dataset or a
        bad checkpoint; 2 when a training or PPU stage (or its gate) fails, including a PPU
        noise level at or below the floor.
    """
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as e:
        print(f"hanlab: error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as e:
        return int(e.code or 0)

    logging.basicConfig(level=getattr(logging, args.log_level), format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config, micro=args.micro, seed=args.seed)
        ctx = RunContext(cfg, config_hash(cfg), args.out, args.checkpoint, resolve_device(args.device))
        os.makedirs(ctx.out, exist_ok=True)
        return args.handler(ctx, args)
    except UsageError as e:
        parser.print_usage(sys.stderr)
        print(f"hanlab: error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except StageFailureError as e:
        print(f"hanlab: {type(e).__name__} in stage {e.stage}: {e}", file=sys.stderr)
        if e.diagnostics:
            print(json.dumps(e.diagnostics, default=str), file=sys.stderr)
        return EXIT_STAGE
    except (InvalidArgumentError, DatasetMissingError, CheckpointError, ContractViolationError) as e:
        print(f"hanlab: {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_USAGE
    except HanlabError as e:
        print(f"hanlab: {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_STAGE


if __name__ == "__main__":
    sys.exit(main())
