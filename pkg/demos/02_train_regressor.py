"""Train the embedding-to-parameters MLP on a synthetic dataset and watch
early stopping pick the best epoch.

The synthetic data uses a known linear map from embeddings to parameters,
so the regressor can be checked against ground truth.
"""
import numpy as np

from faceforge import TrainConfig, init_weights, train
from faceforge.regressor import evaluate

rng = np.random.default_rng(0)
E, D, N = 32, 10, 1000

embeddings = rng.normal(size=(N, E))
true_map = rng.normal(size=(D, E))
targets = embeddings @ true_map.T + rng.normal(size=(N, D)) * 0.05

n_val = N // 10
tx, ty = embeddings[n_val:], targets[n_val:]
vx, vy = embeddings[:n_val], targets[:n_val]

weights = init_weights(f"{E}-64-{D}", seed=1)
config = TrainConfig(learning_rate=1e-3, batch_size=64,
                     max_epochs=100, patience=10, seed=1)
best, report = train(weights, tx, ty, vx, vy, config)

print(f"stopped at epoch {report.stopped_epoch}, best epoch {report.best_epoch}")
print(f"best val loss {report.val_losses[report.best_epoch - 1]:.5f}")
print("re-evaluated restored weights:", evaluate(best, vx, vy))
for epoch, (tr, va) in enumerate(zip(report.train_losses, report.val_losses), 1):
    if epoch % 10 == 0 or epoch == report.best_epoch:
        marker = "  <- best" if epoch == report.best_epoch else ""
        print(f"epoch {epoch:3d}: train {tr:.5f}  val {va:.5f}{marker}")
