"""Learning internal density from bark patches.

A small encoder-decoder is trained to map a bark patch to the half-plane of
density behind it.  The yardstick is a predictor that ignores its input and
outputs the average training target; beating it means the network reads the
bark.  This is a short run (under a minute on one core); the acceptance suite
uses 20 training logs and 50 epochs.

    python3 demos/04_learning_density.py
"""

import time

from barkknots.metrics import rmse
from barkknots.minimodel import ModelSpec, TrainConfig, TrainData, baseline_mean, build_patch_dataset, train
from barkknots.synthesis import forge_dataset


def patches(per_k, seed):
    return build_patch_dataset([e.spec for e in forge_dataset(per_k, (2, 6), master_seed=seed)], 8)


x_tr, y_tr = patches(2, 3)
x_va, y_va = patches(1, 4)
x_te, y_te = patches(1, 5)
print(f"{len(x_tr)} training patches, input channels {x_tr.shape[1]}")

t0 = time.perf_counter()
res = train(
    ModelSpec(),
    TrainConfig(epochs=12, drop_after_epoch=8, seed=0),
    TrainData(x_tr, y_tr, x_va, y_va),
    log=lambda h: print(f"  epoch {h['epoch']:2d} lr {h['lr']:.0e} train {h['train_loss']:.5f} val {h['val_loss']:.5f}"),
)
model_rmse = rmse(res.model.predict(x_te), y_te)
base_rmse = rmse(baseline_mean(y_tr).predict(x_te), y_te)
print(f"best epoch {res.best_epoch}; test RMSE {model_rmse:.4f} vs baseline {base_rmse:.4f} "
      f"(ratio {model_rmse / base_rmse:.2f}) in {time.perf_counter() - t0:.0f}s")
