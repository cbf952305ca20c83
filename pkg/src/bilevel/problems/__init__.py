from .oracle import (Constants, Counter, DivergenceError, OracleBundle, UnsupportedInstance,
                     check_finite, sample_indices)
from .quadratic import (QuadraticSpec, make_quadratic, make_stochastic_quadratic,
                        random_quadratic_spec, spd_with_spectrum)
from .hard import (HardInstanceSpec, export_metadata, make_hard_instance, quartic_coefficients,
                   quartic_root, zero_chain_inverse, zero_chain_matrices)
from .hyperclean import hyperclean_from_data, make_hyperclean
from .multitask import make_multitask_embedding, multitask_from_data, RegressionSplit
from .tasks import (AnilTask, LinearHead, MamlTask, TanhHead, TaskSet, make_anil_taskset,
                    make_maml_taskset)
