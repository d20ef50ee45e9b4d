import argparse
import logging
import os
import sys

sys.path.insert(0, os.path.dirname(__file__))
import evaluation
import gradient_suite
import sweep
import synth_data
import utils
from config import RunConfig, load_config
from errors import (DimensionError, DomainError, NumericError, TargetIndexError, TrainingAborted,
                    ValidationError)
from lre_retrieval import index_build, index_query, save_index
from priors_sheet import load_priors
from training import load_model, save_model, train
from workers import TrainingWorker, report

logger = logging.getLogger("hyperfuse")

EXIT_OK = 0
EXIT_INVALID = 1
EXIT_NUMERIC = 2


class UsageError(Exception):
    pass


class ArgumentParser(argparse.ArgumentParser):
    """argparse that reports bad usage with exit code 1 instead of 2."""

    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def cmd_gen_data(args):
    priors = load_priors(args.priors_file) if args.priors_file else None
    records = synth_data.synth_generate(args.n, seed=args.seed, class_priors=priors, noise=args.noise,
                                        d_t=args.d_t)
    synth_data.write_corpus(args.out, records)
    print(f"✓ Wrote {len(records)} records to {args.out}")


def _run_worker(operation, *args):
    def on_state(description):
        logger.info("%s...", description)

    def on_progress(current, total):
        if total and (current == total or current % 50 == 0):
            logger.debug("step %d/%d", current, total)

    worker = TrainingWorker(operation, *args, on_state=on_state, on_progress=on_progress, name="train")
    worker.start()
    success, message = worker.wait()
    if not success:
        raise worker.error if worker.error is not None else TrainingAborted(message)
    return worker.result


def train_job(config, corpus_path, checkpoint_path, curve_path=None, worker=None):
    """Read the corpus, train, then write the checkpoint (and loss curve); runs on a TrainingWorker."""
    report(worker, "STATE:DATA")
    records = synth_data.read_corpus(corpus_path)
    result = train(config, records, worker=worker)
    report(worker, "STATE:SAVE")
    save_model(checkpoint_path, result.model, config)
    if curve_path:
        utils.write_json(curve_path, result.curve_document())
    return result


def cmd_train(args):
    config = load_config(args.config) if args.config else RunConfig.desk()
    result = _run_worker(train_job, config, args.corpus, args.out_checkpoint, args.out_curve)
    print(f"✓ Saved checkpoint to {args.out_checkpoint}")
    if args.out_curve:
        print(f"✓ Saved loss curve to {args.out_curve}")
    print(f"Loss {result.loss_curve[0]:.6f} -> {result.loss_curve[-1]:.6f} over {len(result.loss_curve)} steps")


def cmd_eval(args):
    train_records = synth_data.read_corpus(args.train_corpus)
    test_records = synth_data.read_corpus(args.test_corpus)
    curve = utils.load_json(args.curve)["loss"] if args.curve else ()
    result = evaluation.evaluate_checkpoint(args.checkpoint, train_records, test_records, curve)
    evaluation.write_metrics(args.out, result)
    print(f"✓ Wrote metrics to {args.out}")
    print(f"P@1 {result.p_at_1:.4f}  mean retrieved Hamming {result.mean_retrieved_hamming:.3f}  "
          f"head {result.head_hit_rate:.3f}  tail {result.tail_hit_rate:.3f}")
    print(f"Token accuracy {result.token_accuracy:.4f}  positive F1 head {result.head_f1:.3f}  "
          f"tail {result.tail_f1:.3f}")


def cmd_retrieve(args):
    model, config = load_model(args.checkpoint)
    records = synth_data.read_corpus(args.corpus)
    by_id = {r.id: r for r in records}
    if args.query_id not in by_id:
        raise ValidationError(f"no record with id '{args.query_id}' in {args.corpus}")
    index = index_build(records, model.hnn, config.backend)
    if args.save_index:
        save_index(args.save_index, index)
    for record_id, distance in index_query(index, by_id[args.query_id].logits, args.k):
        print(f"{record_id}\t{distance:.17g}")


def cmd_sweep(args):
    base = load_config(args.config) if args.config else RunConfig.desk()
    out_dir = args.out_dir or utils.get_run_dir("sweep")
    rows = sweep.run_sweep(base, sweep.load_grid(args.grid), max_workers=args.workers)
    sweep.write_sweep_outputs(out_dir, rows)
    failed = sum(1 for r in rows if not r.ok)
    mark = "✓" if failed == 0 else "✗"
    print(f"{mark} {len(rows) - failed}/{len(rows)} cells succeeded; tables in {out_dir}")
    print(sweep.summary_text(rows), end="")


def cmd_gradcheck(args):
    results = gradient_suite.run_suite(args.target, seed=args.seed, points=args.points)
    for r in results:
        mark = "✓" if r.passed else "✗"
        print(f"{mark} {r.target}: worst rel-err {r.worst_rel_err:.3e} over {r.points} points "
              f"(loss tilted by sum(x); reads as absolute error)")
    return EXIT_OK if all(r.passed for r in results) else EXIT_INVALID


def build_parser():
    parser = ArgumentParser(prog="hyperfuse", description="Hyperbolic retrieval + Sinkhorn fusion desk harness")
    parser.add_argument("--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", parser_class=ArgumentParser)
    sub.required = True

    p = sub.add_parser("gen-data", help="generate a synthetic corpus")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--priors-file")
    p.add_argument("--noise", type=float, default=0.5)
    p.add_argument("--d-t", type=int, default=RunConfig.desk().d_t)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="train on a corpus")
    p.add_argument("--config")
    p.add_argument("--corpus", required=True)
    p.add_argument("--out-checkpoint", required=True)
    p.add_argument("--out-curve")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--train-corpus", required=True)
    p.add_argument("--test-corpus", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--curve", help="loss curve JSON to echo into the metrics")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("retrieve", help="k nearest records to one corpus record")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--query-id", required=True)
    p.add_argument("--k", type=int, default=1)
    p.add_argument("--save-index")
    p.set_defaults(func=cmd_retrieve)

    p = sub.add_parser("sweep", help="train + evaluate over a config grid")
    p.add_argument("--config")
    p.add_argument("--grid", required=True)
    p.add_argument("--out-dir", help="defaults to runs/sweep under the data dir")
    p.add_argument("--workers", type=int)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("gradcheck", help="finite-difference checks of the loss paths")
    p.add_argument("--target", choices=gradient_suite.TARGETS + ("all",), default="all")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--points", type=int, default=20)
    p.set_defaults(func=cmd_gradcheck)
    return parser


def cli_dispatch(argv):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as e:
        print(str(e), file=sys.stderr)
        return EXIT_INVALID
    except SystemExit as e:
        # --help
        return EXIT_OK if not e.code else EXIT_INVALID
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        code = args.func(args)
    except (NumericError, DomainError) as e:
        print(f"✗ Numeric error: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ValidationError, DimensionError, TargetIndexError, TrainingAborted) as e:
        print(f"✗ {e}", file=sys.stderr)
        return EXIT_INVALID
    except (OSError, ValueError) as e:
        print(f"✗ {e}", file=sys.stderr)
        return EXIT_INVALID
    return EXIT_OK if code is None else code


def main():
    sys.exit(cli_dispatch(sys.argv[1:]))


if __name__ == "__main__":
    main()
