"""Diagnostics for two-agent prompt pipelines: coupling, headroom and structured prompt evolution."""
from .anova import AnovaTable, decompose, significance_stars
from .executor import Bonus, Executor, ExecutorConfig, MockParams, mock_score
from .grid import GridStore, Question, estimate_cost, run_grid
from .headroom import HeadroomReport, coin_flip_test, generate_and_rank, headroom_test
from .landscape import analyze_landscape, budget_simulation, optimum_gap
from .prompts import StructuredPrompt, decompose_prompt
from .prose import EvolutionConfig, OperatorWeights, apply_operator, evolve, fitness, update_weights
from .report import DiagnosisReport, diagnose, render_anova_table, render_cost_table, render_report
from .tensor import ScoreTensor, SyntheticSpec, build_tensor, synth_tensor

__version__ = "0.1.0"

__all__ = [
    "AnovaTable", "Bonus", "DiagnosisReport", "EvolutionConfig", "Executor", "ExecutorConfig", "GridStore",
    "HeadroomReport", "MockParams", "OperatorWeights", "Question", "ScoreTensor", "StructuredPrompt",
    "SyntheticSpec", "analyze_landscape", "apply_operator", "budget_simulation", "build_tensor",
    "coin_flip_test", "decompose", "decompose_prompt", "diagnose", "estimate_cost", "evolve", "fitness",
    "generate_and_rank", "headroom_test", "mock_score", "optimum_gap", "render_anova_table",
    "render_cost_table", "render_report", "run_grid", "significance_stars", "synth_tensor", "update_weights",
]
