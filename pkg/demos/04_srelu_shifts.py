"""
Where the SReLU shifts go
-------------------------

Trains a small two-stage ISONet for a few epochs and prints per-stage
histograms of the learned shifts ``b``, all of which start at -1.
"""

import numpy as np

from isonet.cli import b_histograms
from isonet.data import normalize, synth_dataset
from isonet.network import NetworkSpec
from isonet.optim import TrainConfig, train

tr = synth_dataset(7, 512, split="train")
ev = synth_dataset(7, 256, split="eval")
_, tr, ev = normalize(tr, ev)

spec = NetworkSpec("isonet", ((3, 16), (3, 32)), 3, 4, dropout_p=0.1)
result = train(spec, TrainConfig(lr=0.02, epochs=8, warmup_epochs=2, batch_size=64), tr, ev)
print("final eval accuracy:", result.history[-1]["eval_acc"])

for stage, lo, hi, count in b_histograms(result.params, bins=10):
    if count:
        print(f"stage {stage}  [{lo:+.3f}, {hi:+.3f})  {'#' * int(np.ceil(count / 4))} {count}")
