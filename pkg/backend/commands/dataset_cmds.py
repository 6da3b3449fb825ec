import logging

from commands.common import add_out, add_seed, emit, resolve_seed
from core.config import settings
from core.errors import EXIT_OK, ParameterError
from services.data_loader import load_dataset, save_dataset
from services.signal_data import WAVEFORMS, synthesize_dataset

logger = logging.getLogger(__name__)


def cmd_generate(args) -> int:
    """Synthetic multi-device dataset -> dataset container."""
    defaults = settings.synthesis_defaults()
    seed = resolve_seed(args)
    dataset = synthesize_dataset(
        num_devices=defaults["num_devices"] if args.num_devices is None else args.num_devices,
        signals_per_device=defaults["signals_per_device"] if args.signals_per_device is None else args.signals_per_device,
        seed=seed,
        profile_ranges=settings.synthesis_ranges(),
        snr_db=defaults["snr_db"] if args.snr_db is None else args.snr_db,
        waveform=defaults["waveform"] if args.waveform is None else args.waveform,
    )
    path = save_dataset(dataset, args.out)
    emit({"dataset": path, "records": len(dataset), "classes": dataset.num_classes, "seed": seed})
    return EXIT_OK


def cmd_extract(args) -> int:
    """One record of a dataset file -> single-record capture file."""
    dataset = load_dataset(args.data)
    if not 0 <= args.index < len(dataset):
        raise ParameterError(f"--index {args.index} out of range for {len(dataset)} records")
    path = save_dataset(dataset.subset([args.index]), args.out)
    emit({"capture": path, "index": args.index, "label": int(dataset.labels[args.index])})
    return EXIT_OK


def register(subparsers) -> None:
    p = subparsers.add_parser("generate", help="synthesize an impaired multi-device IQ dataset")
    p.add_argument("--num-devices", type=int, default=None, help="number of transmitters (default: config)")
    p.add_argument("--signals-per-device", type=int, default=None, help="captures per transmitter (default: config)")
    p.add_argument("--snr-db", type=float, default=None, help="AWGN SNR in dB (default: config)")
    p.add_argument("--waveform", choices=WAVEFORMS, default=None,
                   help="clean baseband before impairments (default: config)")
    add_seed(p)
    add_out(p, help="dataset file to write")
    p.set_defaults(handler=cmd_generate)

    p = subparsers.add_parser("extract", help="copy one record of a dataset into a capture file")
    p.add_argument("--data", required=True, help="dataset file")
    p.add_argument("--index", type=int, default=0, help="record to copy (default: 0)")
    add_out(p, help="capture file to write")
    p.set_defaults(handler=cmd_extract)
