from .maml import (MamlConfig, maml_constants, maml_meta_gradient_estimate,
                   maml_meta_gradient_exact, maml_smoothness_estimate, run_maml, stepsize_guard,
                   task_meta_gradient)
from .anil import AnilConfig, anil_objective, anil_partial_gradients, full_partials, run_anil
