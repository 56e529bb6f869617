import numpy as np

from seq2gmm import plotting
from seq2gmm.dataio import ANOMALY, NORMAL
from seq2gmm.scoring import Shapelet


def test_figures_are_written(tmp_path):
    rng = np.random.default_rng(0)
    paths = [
        plotting.latent_scatter(rng.normal(size=(20, 2)), [NORMAL] * 15 + [ANOMALY] * 5, tmp_path / "a.png"),
        plotting.convergence_trace([3.0, 2.5, 2.4], tmp_path / "b.png", o1=2.0, pretrain_losses=[9.0, 5.0, 4.0]),
        plotting.convergence_trace([3.0], tmp_path / "c" / "c.png"),
        plotting.shapelet_plot(np.sin(np.arange(40.0)), [1, 20, 40], [Shapelet(2, (20, 40), 3.0)],
                               tmp_path / "d.png", title="x", truth=(22, 30)),
        plotting.metric_bars([("a", 0.9, 0.05), ("b", 0.8, 0.0)], tmp_path / "e.png"),
    ]
    for p in paths:
        assert p.is_file() and p.stat().st_size > 1000
        assert p.read_bytes()[:8] == b"\x89PNG\r\n\x1a\n"
