"""Training driver with robust checkpointing and status reporting."""

import logging
import os
import time
import traceback
from datetime import datetime
from typing import Dict, Optional

import numpy as np
import pandas as pd

from ..utils.workers import prefetch, worker_count
from .checkpoint import load_checkpoint, save_checkpoint
from .config import ModelConfig
from .io import append_csv_row, load_sample, read_manifest
from .loss import LossConfig, stereo_loss
from .model import MGEVStereo
from .optim import AdamW, OneCycleSchedule, OptimizerState
from .tensor import Tape

LOG_COLUMNS = ['step', 'lr', 'l_reg', 'l_iter', 'l_total', 'ms']


def sidecar_path(checkpoint: str) -> str:
    return f"{checkpoint}.json"


class StereoTrainer:
    """
    Trains a stereo model on a generated dataset.

    Next to the checkpoint it keeps:
    - ``<ckpt>.json``: the model configuration
    - ``<stem>_log.csv``: one row per step (step, lr, l_reg, l_iter, l_total, ms)
    - ``<stem>_status.txt``: final status of the run
    A failed step never overwrites the last good checkpoint.
    """

    def __init__(self, config: ModelConfig, data_dir: str, checkpoint: str,
                 log_dir: Optional[str] = None, deterministic: bool = False,
                 resume: bool = True, steps: Optional[int] = None):
        self.config = config.validate()
        self.data_dir = data_dir
        self.checkpoint = checkpoint
        self.deterministic = deterministic
        self.total_steps = steps or config.steps

        out_dir = os.path.dirname(os.path.abspath(checkpoint))
        stem = os.path.splitext(checkpoint)[0]
        self.log_dir = log_dir or out_dir
        os.makedirs(out_dir, exist_ok=True)
        os.makedirs(self.log_dir, exist_ok=True)
        self.csv_path = f"{stem}_log.csv"
        self.status_path = f"{stem}_status.txt"

        self._setup_logging()

        self.manifest = read_manifest(data_dir)
        self.model = MGEVStereo(config)
        schedule = OneCycleSchedule(self.total_steps, config.lr, config.final_lr, config.warmup)
        self.optimizer = AdamW(self.model.parameters(),
                               OptimizerState(schedule, weight_decay=config.weight_decay))
        self.loss_cfg = LossConfig.from_config(config)
        self.start_step = 0
        self.step = 0
        self.last_saved = None
        self._updating = False

        if resume and os.path.exists(checkpoint):
            self._resume()

        self.logger.info(f"Initialized trainer: {os.path.basename(checkpoint)}")
        self.logger.info(f"Data: {data_dir} ({len(self.manifest)} samples)")
        self.logger.info(f"Steps: {self.start_step} -> {self.total_steps}, batch={config.batch}, "
                         f"crop={tuple(config.crop)}, iters={config.iters_train}")
        self.logger.info(f"Workers: {worker_count(deterministic)} (deterministic={deterministic})")

    def _setup_logging(self):
        """Setup logging to a file beside the checkpoint and to the console."""
        log_file = os.path.join(self.log_dir, 'training.log')

        logger = logging.getLogger()
        for handler in logger.handlers[:]:
            logger.removeHandler(handler)

        logging.basicConfig(
            level=logging.INFO,
            format='%(asctime)s [%(levelname)s] %(message)s',
            handlers=[
                logging.FileHandler(log_file),
                logging.StreamHandler()
            ]
        )
        self.logger = logging.getLogger(__name__)
        self.log_file = log_file

    def _resume(self):
        state = load_checkpoint(self.checkpoint)
        self.model.load_state_dict(state)
        self.optimizer.state.load_state_dict(state)
        self.start_step = self.step = self.optimizer.state.step
        self.last_saved = self.step
        if os.path.exists(self.csv_path):
            log = pd.read_csv(self.csv_path)
            log[log['step'] <= self.start_step].to_csv(self.csv_path, index=False)
        self.logger.info(f"✓ Resumed from {os.path.basename(self.checkpoint)} at step {self.start_step}")

    # Data ----------------------------------------------------------------------
    def make_batch(self, step: int) -> Dict[str, np.ndarray]:
        """Batch for ``step``: a pure function of (seed, step)."""
        rng = np.random.default_rng([self.config.seed, step])
        ch, cw = self.config.crop
        picks = rng.integers(0, len(self.manifest), size=self.config.batch)
        left, right, gt, mask = [], [], [], []
        for idx in picks:
            sample = load_sample(self.data_dir, self.manifest.iloc[int(idx)])
            h, w = sample['gt'].shape
            if h < ch or w < cw:
                raise ValueError(f"sample {int(idx)} is {h}×{w}, smaller than crop {ch}×{cw}")
            y0 = int(rng.integers(0, h - ch + 1))
            x0 = int(rng.integers(0, w - cw + 1))
            window = (slice(y0, y0 + ch), slice(x0, x0 + cw))
            scale = 1.0
            if self.config.brightness_jitter > 0:
                j = self.config.brightness_jitter
                scale = 1.0 + rng.uniform(-j, j)
            left.append(np.clip(sample['left'][(slice(None),) + window] * scale, 0.0, 1.0))
            right.append(np.clip(sample['right'][(slice(None),) + window] * scale, 0.0, 1.0))
            gt.append(sample['gt'][window])
            mask.append(sample['mask'][window])
        return {'step': step, 'left': np.stack(left), 'right': np.stack(right),
                'gt': np.stack(gt), 'mask': np.stack(mask)}

    # Training ------------------------------------------------------------------
    def train_step(self, batch: Dict[str, np.ndarray]) -> Dict[str, float]:
        t0 = time.perf_counter()
        with Tape() as tape:
            prediction = self.model(batch['left'], batch['right'], iters=self.config.iters_train)
            l_reg, l_iter, l_total = stereo_loss(prediction, batch['gt'], self.loss_cfg)
            tape.backward(l_total)
        self._updating = True
        lr = self.optimizer.step()
        self._updating = False
        self.optimizer.zero_grad()
        self.step = self.optimizer.state.step
        return {'step': self.step, 'lr': lr, 'l_reg': l_reg.item(), 'l_iter': l_iter.item(),
                'l_total': l_total.item(), 'ms': 1000.0 * (time.perf_counter() - t0)}

    def save(self):
        state = dict(self.model.state_dict())
        state.update(self.optimizer.state.state_dict())
        save_checkpoint(self.checkpoint, state)
        self.last_saved = self.step
        self.logger.info(f"✓ Saved checkpoint at step {self.step}")

    def run(self) -> str:
        """Run training with robust error handling; returns the final status."""
        self.logger.info("=" * 60)
        self.logger.info("MULTI-RANGE GEOMETRY STEREO TRAINING")
        self.logger.info("=" * 60)

        status = "INCOMPLETE"
        last_row = None
        try:
            self.logger.info("Phase 1: Initialization")
            self.logger.info("-" * 40)
            self.config.save(sidecar_path(self.checkpoint))
            self.logger.info(f"✓ Model: {self.model.store.count():,} parameters")
            self.logger.info(f"✓ Configuration saved: {os.path.basename(sidecar_path(self.checkpoint))}")

            self.logger.info("\nPhase 2: Optimization")
            self.logger.info("-" * 40)
            last_update = time.time()
            steps = range(self.start_step, self.total_steps)
            workers = worker_count(self.deterministic)
            for batch in prefetch(self.make_batch, steps, workers):
                last_row = self.train_step(batch)
                append_csv_row(self.csv_path, last_row)
                if self.step % self.config.checkpoint_every == 0:
                    self.save()
                now = time.time()
                if now - last_update > 5.0:
                    last_update = now
                    self.logger.info(f"  Step {self.step:6d}/{self.total_steps} | "
                                     f"loss = {last_row['l_total']:.4f} | lr = {last_row['lr']:.2e} | "
                                     f"{last_row['ms']:.0f} ms/step")
            if self.last_saved != self.step:
                self.save()
            self.logger.info("✓ Training completed successfully")
            status = "COMPLETE"

        except KeyboardInterrupt:
            self.logger.warning("\nTraining interrupted by user!")
            status = "INTERRUPTED"
            if not self._updating and self.step != self.last_saved:
                self.save()

        except Exception as e:
            self.logger.error(f"\nError during training: {str(e)}")
            self.logger.error(traceback.format_exc())
            status = f"ERROR: {type(e).__name__}: {str(e)}"
            raise

        finally:
            self.logger.info("\nPhase 3: Status")
            self.logger.info("-" * 40)
            self._write_status(status)

            self.logger.info("\n" + "=" * 60)
            self.logger.info("TRAINING SUMMARY")
            self.logger.info("=" * 60)
            self.logger.info(f"Status: {status}")
            self.logger.info(f"Checkpoint: {self.checkpoint} (step {self.last_saved})")
            self.logger.info(f"Log file: {self.log_file}")
            if last_row is not None:
                self.logger.info(f"Last step: {last_row['step']} (loss {last_row['l_total']:.4f})")
            self.logger.info("=" * 60)
        return status

    def _write_status(self, status: str):
        try:
            with open(self.status_path, 'w') as f:
                f.write(f"Training Status: {status}\n")
                f.write(f"Timestamp: {datetime.now().isoformat()}\n")
                f.write(f"Checkpoint: {self.checkpoint}\n")
                f.write(f"Steps completed: {self.step}/{self.total_steps}\n")
                f.write(f"Last saved step: {self.last_saved}\n")
            self.logger.info("✓ Saved training status")
        except OSError as e:
            self.logger.error(f"Error saving status: {str(e)}")
