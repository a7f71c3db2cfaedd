"""
Component ablation
==================

Runs the four combinations of audio pre-conditioning and low-rank anchoring
over shared seeds and data streams, then prints the summary table. Takes a
few minutes on one core.
"""

from atlas_avs.config import preset
from atlas_avs.runner import ablation_table, format_ablation_table, run_ablation_suite

cfg = preset("ss-desk").replace(seeds=[0, 1, 2])
results = run_ablation_suite(cfg)
print(format_ablation_table(ablation_table(results)))
