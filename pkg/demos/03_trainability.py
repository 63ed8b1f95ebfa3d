"""
Trainability on the desk task
-----------------------------

Trains the 24-convolution ISONet and its vanilla counterpart on the
synthetic 4-class task and prints per-epoch metrics. A full run takes about
nine minutes per network on one core; pass ``--epochs`` to shorten it.

    python demos/03_trainability.py --epochs 6
"""

import argparse

from isonet.experiments import VANILLA_SWITCHES, desk_config, desk_spec, desk_task, run_cell

parser = argparse.ArgumentParser()
parser.add_argument("--epochs", type=int, default=30)
args = parser.parse_args()

task = desk_task()
show = lambda row: print("  epoch {epoch:2d}  loss {train_loss:.3f}  train {train_acc:.3f}  "
                         "eval {eval_acc:.3f}  iso {mean_iso_residual:.3f}  lr {lr:.4f}".format(**row))

for label, variant, switches in [("isonet", "isonet", {}), ("vanilla", "vanilla", VANILLA_SWITCHES)]:
    print(label)
    cell = run_cell(label, desk_spec(variant), desk_config(epochs=args.epochs, **switches), task, progress=show)
    status = "diverged" if cell.diverged else f"final train {cell.final_train_acc:.3f}, eval {cell.final_eval_acc:.3f}"
    print(f"  -> {status}")
