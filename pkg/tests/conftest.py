import numpy as np
import pytest

from recformer.graph import EmbeddingBuffer, graph_loss_batch, knn_graph
from recformer.model import ModelConfig, forward, init_params
from recformer.training import recon_loss_masked, total_loss


class Toy:
    """6 samples, 2 views of widths 3 and 5, d_e=8 with 2 heads; Stage-1 loss with graph term."""

    def __init__(self, seed=0):
        rng = np.random.default_rng(seed)
        self.cfg = ModelConfig(dims=[3, 5], d_e=8, heads=2, layers=1, mlp_hidden=12)
        self.params = init_params(self.cfg, seed)
        for name, p in self.params.items():
            # non-trivial biases and gains so every parameter gets a generic gradient
            if ".w" not in name:
                p.data += rng.normal(scale=0.3, size=p.shape)
        self.w = np.array([[1, 1], [1, 0], [0, 1], [1, 1], [1, 0], [0, 1]])
        raw = [rng.random((6, 3)), rng.random((6, 5))]
        self.views = [np.where(self.w[:, [v]] == 1, x, 0.0) for v, x in enumerate(raw)]
        self.buffer = EmbeddingBuffer(6, 2, 8)
        self.buffer.update(rng.normal(size=(6, 2, 8)), np.arange(6))
        self.graphs = [knn_graph(rng.random((6, 3)), 2), knn_graph(rng.random((6, 5)), 2)]
        self.idx = np.arange(6)
        self.beta = 0.7

    def loss(self):
        z, _, rec = forward(self.views, self.w, self.params, self.cfg)
        recon = recon_loss_masked(rec, self.views, self.w)
        graph = graph_loss_batch(z, self.buffer, self.graphs, self.idx)
        return total_loss(recon, graph, self.beta)


@pytest.fixture
def toy():
    return Toy()
