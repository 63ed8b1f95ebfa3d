"""The desk-scale trainability task shared by the CLI presets, demos and acceptance tests.

A 4-class synthetic problem (seed 7, 2048 train / 512 eval, 16 x 16 x 3)
and a stride-free trunk of 24 block convolutions at width 16.
"""

from dataclasses import dataclass, replace

from .data import normalize, synth_dataset
from .network import NetworkSpec
from .optim import TrainConfig, TrainingDiverged, accuracy, train

TASK_SEED = 7
TRAIN_SIZE, EVAL_SIZE = 2048, 512
DEEP_STAGES = ((12, 16),)
DEEP_DECAY = (20, 25)

ISONET_SWITCHES = dict(srelu=True, delta_init=True, ortho_reg=True, gamma=1e-4)
VANILLA_SWITCHES = dict(srelu=False, delta_init=False, ortho_reg=False, gamma=0.0)


def desk_task(seed=TASK_SEED, n_train=TRAIN_SIZE, n_eval=EVAL_SIZE):
    tr = synth_dataset(seed, n_train, split="train")
    ev = synth_dataset(seed, n_eval, split="eval")
    _, trn, evn = normalize(tr, ev)
    return trn, evn


def desk_spec(variant="isonet", dropout_p=None, stages=DEEP_STAGES):
    if dropout_p is None:
        dropout_p = 0.0 if variant.endswith("vanilla") else 0.1
    return NetworkSpec(variant, stages, 3, 4, dropout_p=dropout_p)


def desk_config(lr=0.02, epochs=30, seed=0, **switches):
    merged = dict(ISONET_SWITCHES, **switches)
    return TrainConfig(lr=lr, epochs=epochs, warmup_epochs=5, decay_epochs=DEEP_DECAY,
                       batch_size=64, seed=seed, **merged)


@dataclass
class CellResult:
    """Outcome of one training cell.

    ``final_train_acc`` is measured in evaluation mode on the full training
    split after the last epoch; a diverged cell scores 0.
    """

    label: str
    history: list
    diverged: bool
    final_train_acc: float
    final_eval_acc: float
    params: object = None


def run_cell(label, spec, cfg, task=None, progress=None):
    trn, evn = task if task is not None else desk_task()
    try:
        res = train(replace(spec, srelu=cfg.srelu), cfg, trn, evn, progress=progress)
    except TrainingDiverged as exc:
        return CellResult(label, exc.history, True, 0.0, 0.0)
    return CellResult(label, res.history, False, accuracy(res.params, trn), accuracy(res.params, evn), res.params)
