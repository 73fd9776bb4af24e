from .fixed import FCvarSolution, solve_fcvar
from .nested import NCvarSolution, solve_ncvar
from .precommitted import (GridError, PCvarSolution, default_alpha_grid, inner_greedy, inner_lp,
                           solve_pcvar)

__all__ = ["FCvarSolution", "NCvarSolution", "PCvarSolution", "GridError", "default_alpha_grid",
           "inner_greedy", "inner_lp", "solve_fcvar", "solve_ncvar", "solve_pcvar"]

from .consistency import ProbeReport, consistency_probe
from .precommitted import pcvar_rollout

__all__ += ["ProbeReport", "consistency_probe", "pcvar_rollout"]
