from .config import ScenarioConfig
from .datasets import Dataset, load_dataset, split_horizontal, split_vertical, standardize
from .placement import fill_known, place_known_entries
from .report import AttackReport, diff_reports
from .runner import (
    attack_horizontal,
    attack_multiparty,
    attack_vertical,
    auto_step_size,
    fake_feature_losses,
    run_scenario,
)
