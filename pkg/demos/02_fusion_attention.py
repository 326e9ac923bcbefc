# # The fusion block, one step at a time

import numpy as np

from fusionfer.fusion import FusionConfig, FusionModel, cross_entropy, fusion_backward, fusion_forward, key_generate

rng = np.random.default_rng(0)
x_main = rng.normal(size=(4, 8))
x_aux = rng.normal(size=(4, 8))
labels = np.array([0, 3, 5, 7])

# Four key-generation strategies, with 1, 1, 2 and 3 layers.
for strategy in ("Mean", "Concat", "UpDownMean", "UpDownConcat"):
    model = FusionModel.init(FusionConfig(d_model=8, n_heads=2, strategy=strategy), seed=1)
    fused = key_generate(x_main, x_aux, model)
    print(f"{strategy:13s} layers={model.keygen_layers} fused key shape={fused.shape}")

model = FusionModel.init(FusionConfig(8, 2, "Concat"), seed=1)
logits, cache = fusion_forward(x_main, x_aux, model)
print("logits:", logits.shape)

# A fresh model is close to uniform, so the loss sits near 4 * ln 8.
print(f"loss {cross_entropy(logits, labels):.4f} vs uniform {4 * np.log(8):.4f}")

grads = fusion_backward(cache, labels)
for name in ("keygen.0.weight", "q_proj.weight", "local.kernel", "classifier.1.bias"):
    print(f"{name:18s} |grad| = {np.abs(grads[name]).max():.3e}")

# With the attention path zeroed the block passes f_main straight through.
for name in model.params:
    if name.split(".")[0] in ("v_proj", "out_proj", "local"):
        model.params[name][...] = 0
_, cache = fusion_forward(x_main, x_aux, model)
print("block == f_main:", np.array_equal(cache.block, x_main))
