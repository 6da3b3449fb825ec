import logging

import numpy as np
import pandas as pd

from commands.common import add_format, add_out, add_seed, emit, load_normalized, resolve_seed, unit_interval
from core.config import settings
from core.errors import EXIT_OK, EXIT_REJECT
from services.benchmark import benchmark_latency
from services.data_loader import load_capture
from services.document_generator import write_json, write_table
from services.evaluator import evaluate, export_report, permute_timesteps, prediction_agreement
from services.quantizer import load_model, predict
from services.signal_data import normalize_dataset, normalize_power, synthesize_dataset

logger = logging.getLogger(__name__)


def cmd_eval(args) -> int:
    """Accuracy, confusion matrix and ROC-AUC, optionally on timestep-shuffled captures."""
    model = load_model(args.model)
    dataset = load_normalized(args.data)
    if args.randomize or args.shared_permutation:
        dataset = permute_timesteps(dataset, resolve_seed(args), shared_permutation=args.shared_permutation)
        logger.info(f"Timesteps randomized ({'shared' if args.shared_permutation else 'per-record'} permutation)")

    report = evaluate(model, dataset)
    result = {"accuracy": report.accuracy, "auc_macro": report.auc_macro}
    if args.reference:
        agreement = prediction_agreement(load_model(args.reference), model, dataset)
        logger.info(f"Top-1 agreement with {args.reference}: {agreement:.4f}")
        result["agreement"] = agreement
    if args.out:
        result["report"] = export_report(report, args.out, args.format)
    emit(result, args.format)
    return EXIT_OK


def cmd_bench(args) -> int:
    """Single-sample latency over --runs timed inferences."""
    model = load_model(args.model)
    if args.data:
        sample = load_normalized(args.data).as_model_input()[:1]
    else:
        synthetic = normalize_dataset(synthesize_dataset(2, 1, seed=resolve_seed(args)))
        sample = synthetic.as_model_input()[:1]
    defaults = settings.benchmark_defaults()
    runs = defaults["runs"] if args.runs is None else args.runs
    warmup = defaults["warmup"]
    stats = benchmark_latency(model, sample, runs=runs, warmup=warmup)

    payload = {"architecture": model.architecture, **stats.to_dict()}
    if args.out:
        if args.format == "csv":
            write_table(pd.DataFrame([payload]), args.out)
        else:
            write_json({"latency": stats.to_dict()}, args.out)
    emit(payload, args.format)
    return EXIT_OK


def cmd_fingerprint(args) -> int:
    """
    Closed-set authentication of one capture: ACCEPT when the top softmax
    confidence reaches the threshold. A confidence heuristic, not open-set
    recognition of unseen transmitters.
    """
    model = load_model(args.model)
    record = normalize_power(load_capture(args.capture))
    probs = predict(model, record.iq[None, :, :, None])[0]
    predicted = int(np.argmax(probs))
    confidence = float(probs[predicted])
    threshold = settings.auth_threshold if args.threshold is None else args.threshold
    decision = "ACCEPT" if confidence >= threshold else "REJECT"
    logger.info(f"Capture {args.capture}: class {predicted}, confidence {confidence:.4f}, tau {threshold} -> {decision}")
    emit({"decision": decision, "class": predicted, "confidence": confidence, "threshold": threshold}, args.format)
    return EXIT_OK if decision == "ACCEPT" else EXIT_REJECT


def register(subparsers) -> None:
    p = subparsers.add_parser("eval", help="metrics report for a model on a dataset file")
    p.add_argument("--model", required=True, help="model file (float or quantized)")
    p.add_argument("--data", required=True, help="dataset file, e.g. the split written by train --val-out")
    p.add_argument("--randomize", action="store_true", help="shuffle each capture's timesteps before evaluating")
    p.add_argument("--shared-permutation", action="store_true",
                   help="with --randomize, use one permutation for every capture")
    p.add_argument("--reference", default=None, help="second model; report top-1 agreement with it")
    add_seed(p)
    add_out(p, required=False, help="report file (.json or .csv)")
    add_format(p)
    p.set_defaults(handler=cmd_eval)

    p = subparsers.add_parser("bench", help="single-sample inference latency")
    p.add_argument("--model", required=True, help="model file (float or quantized)")
    p.add_argument("--data", default=None, help="dataset whose first capture is the benchmark input")
    p.add_argument("--runs", type=int, default=None, help="timed runs (default: config, 1000)")
    add_seed(p)
    add_out(p, required=False, help="latency report file")
    add_format(p)
    p.set_defaults(handler=cmd_bench)

    p = subparsers.add_parser("fingerprint", help="authenticate one capture (exit 0 ACCEPT, 1 REJECT)")
    p.add_argument("--model", required=True, help="model file (float or quantized)")
    p.add_argument("--capture", required=True, help="single-record capture file")
    p.add_argument("--threshold", type=unit_interval, default=None,
                   help="confidence threshold in (0, 1] (default: config, 0.9)")
    add_seed(p)
    add_format(p)
    p.set_defaults(handler=cmd_fingerprint)
