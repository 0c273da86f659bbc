import argparse
import csv
import logging
import sys
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Dict, List, Optional

from colorama import Fore, Style
from colorama import init as colorama_init
from dotenv import load_dotenv
from tqdm import tqdm

from config import RunConfig, load_run_config
from dataset import (
    CLASS_NAMES,
    ClassLabel,
    Dataset,
    class_count_table,
    generate_synthetic_dataset,
    load_dataset,
    save_dataset,
    split_labeled_fraction,
)
from errors import ShapeMismatch, WaferSSLError
from metrics import MetricsReport, format_percent_row, render_key_value, render_report
from model import load_checkpoint
from presets.benchmarks import BENCHMARKS
from presets.variants import VARIANTS
from resample import ResamplePlan, balance_dataset
from trainer import TrainHistory, evaluate_checkpoint, train, write_history
from utils import derive_seed, progress_disabled, setup_logging
from verify import FAULT_SIGN_FLIP, SUITES, run_suite

logger = logging.getLogger(__name__)

EXIT_OK, EXIT_FAILURE = 0, 1

HISTORY_FILE = "history.csv"
REPORT_FILE = "report.txt"
ABLATION_FILE = "ablation.csv"
ABLATION_COLUMNS = ["variant", "seed", "accuracy", "macro_precision", "macro_recall", "macro_f1",
                    "weighted_f1", "first_epoch_macro_f1"]


def _heading(text: str) -> str:
    return f"{Style.BRIGHT}{text}{Style.RESET_ALL}"


def print_count_table(title: str, dataset: Dataset):
    print(_heading(title))
    for name, count in class_count_table(dataset):
        print(f"  {name:<12} {count}")


def print_comparison(before: Dataset, after: Dataset):
    print(_heading(f"{'class':<12} {'before':>8} {'after':>8}"))
    for (name, b), (_, a) in zip(class_count_table(before), class_count_table(after)):
        print(f"{name:<12} {b:>8} {a:>8}")


def parse_counts(text: str) -> Dict[ClassLabel, int]:
    """`Center=10,Donut=3,...` → per-class counts (classes not named get 0)."""
    counts = {}
    for item in text.split(","):
        if not item.strip():
            continue
        name, sep, value = item.partition("=")
        if not sep:
            raise argparse.ArgumentTypeError(f"expected Name=N, got {item!r}")
        try:
            label = ClassLabel.from_name(name.strip())
            count = int(value)
        except ValueError as e:
            raise argparse.ArgumentTypeError(str(e)) from None
        if count < 0:
            raise argparse.ArgumentTypeError(f"negative count for {name.strip()}")
        counts[label] = count
    return counts


def cmd_generate(args) -> int:
    if args.counts is not None:
        counts = args.counts
    else:
        counts = {label: args.per_class for label in ClassLabel}
    height = args.height or args.size
    width = args.width or args.size
    dataset = generate_synthetic_dataset(counts, height, width, args.seed or 0, args.noise_rate)

    if args.labeled_fraction is None:
        save_dataset(dataset, args.out)
        print_count_table(f"Wrote {len(dataset)} records to {args.out}", dataset)
        return EXIT_OK

    labeled, unlabeled = split_labeled_fraction(dataset, args.labeled_fraction, args.seed or 0)
    save_dataset(labeled, args.out)
    save_dataset(unlabeled, args.unlabeled_out)
    print_count_table(f"Wrote {len(labeled)} labeled records to {args.out}", labeled)
    print(f"Wrote {len(unlabeled)} unlabeled records to {args.unlabeled_out}")
    return EXIT_OK


def cmd_resample(args) -> int:
    dataset = load_dataset(args.input)
    plan = ResamplePlan(args.target, args.smote_k, args.seed or 0, args.allow_k_clamp)
    balanced = balance_dataset(dataset, plan)
    save_dataset(balanced, args.out)
    print_comparison(dataset, balanced)
    return EXIT_OK


def load_training_data(config: RunConfig):
    """Labeled, unlabeled and validation sets; the unlabeled file is only read when the variant uses it."""
    labeled = load_dataset(config.labeled_path)
    val = load_dataset(config.val_path)
    if config.uses_unlabeled and config.unlabeled_path is not None:
        unlabeled = load_dataset(config.unlabeled_path)
    else:
        unlabeled = Dataset([], labeled.height, labeled.width)
    return labeled, unlabeled, val


def train_variant(config: RunConfig, labeled: Dataset, unlabeled: Dataset, val: Dataset,
                  out_dir: Optional[Path] = None):
    plan = config.resample_plan()
    if plan is not None:
        labeled = balance_dataset(labeled, plan)
    if not config.uses_unlabeled:
        unlabeled = Dataset([], labeled.height, labeled.width)
    _, teacher, history = train(labeled, unlabeled, val, config.model_config(),
                                config.train_config(), out_dir)
    return teacher, history


def cmd_train(args) -> int:
    if args.config is None:
        args.parser.error("train requires --config")
    config = load_run_config(args.config, {"seed": args.seed, "out_dir": args.out_dir})
    config.check_paths()
    labeled, unlabeled, val = load_training_data(config)

    out_dir = Path(config.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    print_count_table(f"Labeled training set ({config.variant})", labeled)
    teacher, history = train_variant(config, labeled, unlabeled, val, out_dir)
    write_history(history, out_dir / HISTORY_FILE)

    report = evaluate_checkpoint(teacher, val, config.model_config())
    print(_heading(f"{VARIANTS[config.variant]['description']}: Accuracy, Precision, Recall, F1"))
    print(render_report(report, "overall"))
    return EXIT_OK


def cmd_eval(args) -> int:
    checkpoint = load_checkpoint(args.checkpoint)
    dataset = load_dataset(args.data)
    if len(dataset) and (dataset.height, dataset.width) != tuple(checkpoint.wafer_dims):
        raise ShapeMismatch(
            f"dataset is {dataset.height}x{dataset.width} but the checkpoint was trained on "
            f"{checkpoint.wafer_dims[0]}x{checkpoint.wafer_dims[1]} wafers"
        )
    params = checkpoint.teacher if args.network == "teacher" else checkpoint.student
    report = evaluate_checkpoint(params, dataset, checkpoint.model_config)

    print(_heading(f"Overall ({args.network}, epoch {checkpoint.epoch}): Accuracy, Precision, Recall, F1"))
    print(render_report(report, "overall"))
    print(_heading("Per class: Accuracy, Precision, Recall, F1"))
    print(render_report(report, "per_class"))
    if report.undefined_classes:
        names = ", ".join(label.display_name for label in report.undefined_classes)
        logger.warning(f"Undefined metrics (zero denominator) for: {names}")

    report_path = args.report
    if report_path is None and args.out_dir is not None:
        report_path = Path(args.out_dir) / REPORT_FILE
    if report_path is not None:
        Path(report_path).parent.mkdir(parents=True, exist_ok=True)
        Path(report_path).write_text(render_key_value(report), encoding="utf-8")
        logger.info(f"Report written to {report_path}")
    return EXIT_OK


def cmd_verify(args) -> int:
    suites = args.suite or list(SUITES)
    results = [run_suite(name, fault=args.inject_fault)
               for name in tqdm(suites, desc="verify", disable=progress_disabled())]
    for result in results:
        status = f"{Fore.GREEN}PASS" if result.passed else f"{Fore.RED}FAIL"
        print(f"{status}{Style.RESET_ALL} {result.name:<10} worst {result.worst_error:.3e} "
              f"(tolerance {result.tolerance:g}) {result.detail}")
    return EXIT_OK if all(r.passed for r in results) else EXIT_FAILURE


@dataclass
class AblationRun:
    variant: str
    seed: int
    report: MetricsReport
    history: TrainHistory

    @property
    def first_epoch_macro_f1(self) -> Optional[float]:
        for record in self.history.epochs:
            if record.validation is not None:
                return record.validation.overall.macro_f1
        return None


def run_benchmark(benchmark: dict, base: RunConfig) -> List[AblationRun]:
    """Train every variant on every seed of a synthetic benchmark and evaluate the teachers."""
    size = benchmark["size"]
    runs = []
    for seed in benchmark["seeds"]:
        pool = generate_synthetic_dataset({label: benchmark["per_class"] for label in ClassLabel},
                                          size, size, derive_seed(seed, 0), benchmark["noise_rate"])
        val = generate_synthetic_dataset({label: benchmark["val_per_class"] for label in ClassLabel},
                                         size, size, derive_seed(seed, 1), benchmark["noise_rate"])
        labeled, unlabeled = split_labeled_fraction(pool, benchmark["labeled_fraction"], seed)
        for variant in benchmark["variants"]:
            config = replace(base, variant=variant, seed=seed, epochs=benchmark["epochs"],
                             input_size=size).validate()
            logger.info(f"Benchmark run: {variant} seed={seed}")
            teacher, history = train_variant(config, labeled, unlabeled, val)
            report = evaluate_checkpoint(teacher, val, config.model_config())
            runs.append(AblationRun(variant, seed, report, history))
    return runs


def _mean(values) -> Optional[float]:
    defined = [v for v in values if v is not None]
    return sum(defined) / len(defined) if defined else None


def summarize_benchmark(runs: List[AblationRun]) -> Dict[str, dict]:
    """Seed means of the overall metrics and of each per-class metric, keyed by variant."""
    summary = {}
    for variant in dict.fromkeys(run.variant for run in runs):
        mine = [run for run in runs if run.variant == variant]
        overall = {key: _mean(getattr(run.report.overall, key) for run in mine)
                   for key in ("accuracy", "macro_precision", "macro_recall", "macro_f1")}
        per_class = [
            [_mean(getattr(run.report.per_class[c], key) for run in mine)
             for key in ("accuracy", "precision", "recall", "f1")]
            for c in range(len(CLASS_NAMES))
        ]
        summary[variant] = {"overall": overall, "per_class": per_class}
    return summary


def write_ablation(runs: List[AblationRun], path):
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(ABLATION_COLUMNS)
        for run in runs:
            o = run.report.overall
            first = run.first_epoch_macro_f1
            writer.writerow([run.variant, run.seed, repr(o.accuracy), repr(o.macro_precision),
                             repr(o.macro_recall), repr(o.macro_f1), repr(o.weighted_f1),
                             "" if first is None else repr(first)])


def cmd_benchmark(args) -> int:
    benchmark = dict(BENCHMARKS[args.name])
    if args.epochs is not None:
        benchmark["epochs"] = args.epochs
    if args.seed is not None:
        benchmark["seeds"] = (args.seed,)
    base = load_run_config(args.config, {"out_dir": args.out_dir})

    runs = run_benchmark(benchmark, base)
    summary = summarize_benchmark(runs)
    out_dir = Path(base.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    write_ablation(runs, out_dir / ABLATION_FILE)

    width = max(len(VARIANTS[v]["description"]) for v in summary)
    print(_heading(f"{'Method':<{width}}  Accuracy, Precision, Recall, F1"))
    for variant, values in summary.items():
        o = values["overall"]
        row = (o["accuracy"], o["macro_precision"], o["macro_recall"], o["macro_f1"])
        print(f"{VARIANTS[variant]['description']:<{width}}  {format_percent_row(row)}")
    for variant, values in summary.items():
        print(_heading(f"\n{VARIANTS[variant]['description']}: per class"))
        for name, row in zip(CLASS_NAMES, values["per_class"]):
            print(f"{name:<10} {format_percent_row(row)}")
    logger.info(f"Ablation results saved to {out_dir / ABLATION_FILE}")
    return EXIT_OK


def _add_global_flags(parser: argparse.ArgumentParser, suppress: bool):
    # the subparser copies must not clobber values given before the subcommand
    default = argparse.SUPPRESS if suppress else None
    parser.add_argument("--seed", type=int, default=default, help="root random seed")
    parser.add_argument("--config", default=default, help="key = value run configuration file")
    parser.add_argument("--out-dir", dest="out_dir", default=default, help="output directory")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="waferssl",
        description="Semi-supervised wafer map defect classification",
    )
    _add_global_flags(parser, suppress=False)
    sub = parser.add_subparsers(dest="command", required=True)

    def add_command(name, handler, help_text):
        command = sub.add_parser(name, help=help_text)
        _add_global_flags(command, suppress=True)
        command.set_defaults(handler=handler, parser=command)
        return command

    p = add_command("generate", cmd_generate, "write a synthetic labeled dataset")
    counts = p.add_mutually_exclusive_group(required=True)
    counts.add_argument("--per-class", type=int, help="records per class")
    counts.add_argument("--counts", type=parse_counts, help="explicit counts, e.g. Center=40,Donut=5")
    p.add_argument("--size", type=int, default=24, help="grid height and width")
    p.add_argument("--height", type=int, help="grid height (overrides --size)")
    p.add_argument("--width", type=int, help="grid width (overrides --size)")
    p.add_argument("--noise-rate", type=float, default=0.0, help="per-die pass/fail flip probability")
    p.add_argument("--labeled-fraction", type=float,
                   help="keep this fraction labeled per class; the rest go to --unlabeled-out")
    p.add_argument("--unlabeled-out", help="unlabeled split output (with --labeled-fraction)")
    p.add_argument("--out", required=True, help="output dataset file")

    p = add_command("resample", cmd_resample, "balance class counts with SMOTE and under-sampling")
    p.add_argument("--in", dest="input", required=True, help="input dataset file")
    p.add_argument("--target", type=int, required=True, help="records per present class")
    p.add_argument("--smote-k", type=int, default=5)
    p.add_argument("--allow-k-clamp", action="store_true",
                   help="clamp k to class size - 1 instead of failing")
    p.add_argument("--out", required=True, help="output dataset file")

    add_command("train", cmd_train, "train one variant from a run configuration")

    p = add_command("eval", cmd_eval, "evaluate a checkpoint on a labeled dataset")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--network", choices=("teacher", "student"), default="teacher")
    p.add_argument("--report", help="machine-readable key=value report path")

    p = add_command("verify", cmd_verify, "run the numerical verification suites")
    p.add_argument("--suite", action="append", choices=SUITES, help="suite to run (repeatable)")
    p.add_argument("--inject-fault", choices=(FAULT_SIGN_FLIP,), help="corrupt the code under test")

    p = add_command("benchmark", cmd_benchmark, "run the four-variant ablation on a synthetic benchmark")
    p.add_argument("--name", choices=sorted(BENCHMARKS), default="standard")
    p.add_argument("--epochs", type=int, help="override the benchmark's epoch count")
    return parser


def main(argv=None) -> int:
    load_dotenv()
    setup_logging()
    colorama_init()

    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command == "generate":
        if (args.labeled_fraction is None) != (args.unlabeled_out is None):
            parser.error("--labeled-fraction and --unlabeled-out go together")

    try:
        return args.handler(args)
    except (WaferSSLError, ValueError) as e:
        logger.error(f"{args.command} failed: {e}", exc_info=logger.isEnabledFor(logging.DEBUG))
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
