"""Subcommand groups. Each module exposes register(subparsers)."""
from commands import dataset_cmds, eval_cmds, model_cmds

COMMAND_GROUPS = (dataset_cmds, model_cmds, eval_cmds)
