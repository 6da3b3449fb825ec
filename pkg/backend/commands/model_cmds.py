import logging
import os
from dataclasses import replace

from commands.common import add_format, add_out, add_seed, emit, load_normalized, resolve_seed, size_list
from core.config import settings
from core.errors import EXIT_OK
from services.data_loader import save_dataset
from services.document_generator import DocumentGenerator
from services.model_zoo import BUILDERS, build_model, summary
from services.quantizer import QuantizedModel, load_model, model_params, quantize_model, save_model, size_report
from services.signal_data import split
from services.trainer import batch_size_sweep, train

logger = logging.getLogger(__name__)

ARCH_CHOICES = ("cnn", "transformer")


def _train_config(args):
    config = settings.train_defaults()
    overrides = {"seed": resolve_seed(args)}
    if args.epochs is not None:
        overrides["epochs"] = args.epochs
    if args.batch_size is not None:
        overrides["batch_size"] = args.batch_size
    if args.lr is not None:
        overrides["learning_rate"] = args.lr
    if getattr(args, "val_frac", None) is not None:
        overrides["validation_fraction"] = args.val_frac
    return replace(config, **overrides)


def cmd_train(args) -> int:
    """Dataset -> trained float model + per-epoch history table."""
    dataset = load_normalized(args.data)
    config = _train_config(args)
    train_ds, val_ds = split(dataset, 1.0 - config.validation_fraction, seed=config.seed)
    model = build_model(args.arch, dataset.num_classes, seed=config.seed)

    _, history = train(model, dataset, config, split_data=(train_ds, val_ds))
    model_path = save_model(model, args.out)
    history_path = args.history or f"{os.path.splitext(args.out)[0]}_history.csv"
    DocumentGenerator(settings.OUTPUT_DIR).generate_history(history, history_path)
    result = {
        "model": model_path,
        "history": history_path,
        "architecture": model.architecture,
        "epochs": len(history),
        "final_val_acc": history.val_acc[-1],
    }
    if args.val_out:
        result["validation_split"] = save_dataset(val_ds, args.val_out)
    emit(result)
    return EXIT_OK


def cmd_quantize(args) -> int:
    """Float model file -> dynamic-range int8 model file."""
    model = load_model(args.model)
    qmodel = model if isinstance(model, QuantizedModel) else quantize_model(model)
    save_model(qmodel, args.out)
    report = size_report(args.model, args.out)
    logger.info(f"Model size {report['float_kb']} KB -> {report['quantized_kb']} KB "
                f"({report['times_smaller']} times smaller)")
    emit({"model": args.out, **report}, args.format)
    return EXIT_OK


def cmd_summary(args) -> int:
    """Per-tensor parameter table of a model file or a fresh architecture."""
    if args.model:
        model = load_model(args.model)
        graph = model.graph if isinstance(model, QuantizedModel) else model
    else:
        graph = build_model(args.arch, args.num_classes)
    table = summary(graph)
    print(table.to_string(index=False))
    print(f"Total params: {model_params(graph):,}")
    if args.out:
        DocumentGenerator(settings.OUTPUT_DIR).generate_summary(table, args.out)
    return EXIT_OK


def cmd_sweep(args) -> int:
    """Batch-size study: one fresh model per size, same split and seed."""
    dataset = load_normalized(args.data)
    config = _train_config(args)
    table = batch_size_sweep(
        BUILDERS[args.arch.upper()], dataset, sizes=args.sizes,
        epochs=config.epochs, config=config, max_workers=args.workers,
    )
    path = DocumentGenerator(settings.OUTPUT_DIR).generate_sweep(table, args.out)
    print(table[["batch_size", "seconds", "final_val_acc"]].to_string(index=False))
    logger.info(f"Sweep written: {path}")
    return EXIT_OK


def register(subparsers) -> None:
    p = subparsers.add_parser("train", help="train a float model on a dataset file")
    p.add_argument("--data", required=True, help="dataset file")
    p.add_argument("--arch", choices=ARCH_CHOICES, default="cnn", help="architecture (default: cnn)")
    p.add_argument("--epochs", type=int, default=None, help="epochs (default: config, 100)")
    p.add_argument("--batch-size", type=int, default=None, help="mini-batch size (default: config, 32)")
    p.add_argument("--lr", type=float, default=None, help="Adam learning rate (default: config, 0.001)")
    p.add_argument("--val-frac", type=float, default=None, help="validation fraction (default: config, 0.2)")
    p.add_argument("--history", default=None, help="history table, .csv or .xlsx (default: <out>_history.csv)")
    p.add_argument("--val-out", default=None, help="also write the held-out split as a dataset file")
    add_seed(p)
    add_out(p, help="model file to write")
    p.set_defaults(handler=cmd_train)

    p = subparsers.add_parser("quantize", help="post-training int8 quantization of a float model")
    p.add_argument("--model", required=True, help="float model file")
    add_seed(p)
    add_out(p, help="quantized model file to write")
    add_format(p)
    p.set_defaults(handler=cmd_quantize)

    p = subparsers.add_parser("summary", help="per-tensor parameter table")
    p.add_argument("--model", default=None, help="model file (float or quantized)")
    p.add_argument("--arch", choices=ARCH_CHOICES, default="cnn", help="architecture when no --model is given")
    p.add_argument("--num-classes", type=int, default=28, help="classes when no --model is given (default: 28)")
    add_out(p, required=False, help="optional .csv/.xlsx table")
    p.set_defaults(handler=cmd_summary)

    p = subparsers.add_parser("sweep", help="training time and accuracy across batch sizes")
    p.add_argument("--data", required=True, help="dataset file")
    p.add_argument("--arch", choices=ARCH_CHOICES, default="cnn", help="architecture (default: cnn)")
    p.add_argument("--sizes", type=size_list, default=[1, 8, 16, 32, 64],
                   help="comma-separated batch sizes (default: 1,8,16,32,64)")
    p.add_argument("--epochs", type=int, default=None, help="epochs per cell (default: config, 100)")
    p.add_argument("--lr", type=float, default=None, help="Adam learning rate (default: config)")
    p.add_argument("--workers", type=int, default=1, help="cells trained in parallel threads (default: 1)")
    add_seed(p)
    add_out(p, help="sweep table, .csv or .xlsx")
    p.set_defaults(handler=cmd_sweep, batch_size=None)
