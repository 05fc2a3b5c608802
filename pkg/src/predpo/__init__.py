"""Preference optimization on a tiny policy: DPO, SimPO, TR-DPO, sDPO and guiding-reference DPO."""

from .data import (GenerationConfig, PreferenceDataset, PreferenceTriple,
                   build_on_policy_dataset, dataset_avg_nld, load_jsonl,
                   normalized_length_difference, save_jsonl, split)
from .evaluation import EvalReport, RewardOracle, avg_response_length, oracle_score, pairwise_win_rate
from .losses import (DpoConfig, LambdaRecord, SimpoConfig, dpo_analytic_gradient, dpo_loss,
                     lambda_weight, simpo_loss)
from .model import (ArchConfig, ModelSnapshot, PolicyModel, Vocabulary, init_model,
                    load_snapshot, per_token_log_probs, restore, sample_response,
                    save_snapshot, sequence_log_prob, snapshot)
from .pre_dpo import PreDpoPlan, PreDpoResult, run_pre_dpo, run_pre_dpo_round2
from .telemetry import LambdaHistogram, PhaseStats, bucketize, export_lambda_csv, phase_summary
from .trainer import Method, TrainConfig, TrainReport, cosine_lr, make_batches, sft_train, train_preference

__version__ = "0.1.0"
