"""An example file to use this library."""

import logging
import tempfile
from pathlib import Path
from pprint import pprint

from vadlstm.const import Split
from vadlstm.data import generate_synthetic, load_dataset
from vadlstm.model import LossConfig, ModelConfig, SynthConfig, TrainConfig
from vadlstm.network import build_model, count_parameters
from vadlstm.scoring import evaluate_dataset
from vadlstm.trainer import split_train_val, train
from vadlstm.utils import seed_everything

_LOGGER = logging.getLogger(__name__)

SEED = 0


def main() -> None:
    """Train on the synthetic benchmark and print the frame-level AUC."""
    seed_everything(SEED)
    with tempfile.TemporaryDirectory() as tmp:
        root = Path(tmp)
        generate_synthetic(
            SynthConfig(num_normal_videos=4, num_anomalous_videos=2, frames_per_video=60),
            root / "data",
        )
        records = load_dataset(root / "data", Split.TRAIN)
        model_config = ModelConfig(stage_channels=(16, 32), seed=SEED)
        model = build_model(model_config)
        _LOGGER.info("Model has %s parameters", count_parameters(model))

        train_config = TrainConfig(max_epochs=3, patience=2, seed=SEED)
        result = train(
            model,
            split_train_val(records, train_config.val_ratio, SEED),
            LossConfig(),
            train_config,
            out_dir=root / "run",
        )
        pprint(result.report.to_dict())

        evaluation = evaluate_dataset(model, load_dataset(root / "data", Split.TEST), model_config)
        print(evaluation.summary())


if __name__ == "__main__":
    logging.basicConfig(level=logging.INFO)
    main()
