import sys
from pathlib import Path

import pytest

from cfdetect.encoder import ModelConfig

sys.path.insert(0, str(Path(__file__).parent))

TABLE1 = [
    (
        "If I had 10 pharmacists who worked with me, I could reach 100 people more effectively.",
        "If I had 10 pharmacists who worked with me",
        "I could reach 100 people more effectively",
    ),
    (
        "Thanks for the article on this new term that fits me so well, wish all your "
        "articles were worthy of praise.",
        "wish all your articles were worthy of praise",
        None,
    ),
]


@pytest.fixture
def tiny_cfg():
    return ModelConfig(vocab_size=16, num_layers=3, num_heads=2, model_dim=8, ffn_dim=16,
                       max_len=6, dropout=0.0, attention_embed_dim=8, feature_dim=8)


@pytest.fixture
def small_cfg():
    return ModelConfig(vocab_size=64, num_layers=4, num_heads=2, model_dim=8, ffn_dim=16,
                       max_len=12, dropout=0.1, attention_embed_dim=8, feature_dim=8)


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
